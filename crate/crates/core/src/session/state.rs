use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, PipelineId, SessionId, TreeNodeId};
use crate::ingest::{Corpus, PaperRecord};
use crate::review::{resolve_citations, ReviewResult, ReviewVerdict, UserState};
use crate::space::{project, EmbeddingStore, Owner, Projection};
use crate::tree::ExplorationTree;
use crate::workflow::{NodeKind, NodePayload, PipelineRun};

use super::events::{Attach, Effects, Event, EventBody, NodeOutcome};
use super::{SessionConfig, SessionError};

/// Everything a session knows. Only [`SessionState::apply`] mutates it, so the
/// state is always the fold of its event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub created_at: DateTime<Utc>,
    pub config: SessionConfig,
    pub tree: ExplorationTree,
    pub pipelines: BTreeMap<PipelineId, PipelineRun>,
    pub corpus: Corpus,
    pub embeddings: EmbeddingStore,
    /// Accept/reject decisions by arXiv id; absent means Neutral.
    pub user_states: BTreeMap<String, UserState>,
    pub projection: Option<Projection>,
    pub pipeline_count: u64,
    pub tree_node_count: u64,
    /// Tree node of the most recently created pipeline.
    pub latest_tree_node: Option<TreeNodeId>,
    pub last_seq: u64,
}

fn bad(seq: u64, reason: impl Into<String>) -> SessionError {
    SessionError::BadEvent {
        seq,
        reason: reason.into(),
    }
}

impl SessionState {
    /// Folds a complete log, which must start with `SessionCreated`.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<SessionState, SessionError> {
        let mut iter = events.into_iter();
        let first = iter.next().ok_or_else(|| bad(0, "empty event log"))?;
        let mut state = SessionState::from_first(first)?;
        for e in iter {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn from_first(event: &Event) -> Result<SessionState, SessionError> {
        let EventBody::SessionCreated { session_id, config } = &event.body else {
            return Err(bad(event.seq, "log must start with session_created"));
        };
        if event.seq != 1 {
            return Err(bad(event.seq, "session_created must have seq 1"));
        }
        Ok(SessionState {
            session_id: session_id.clone(),
            created_at: event.timestamp,
            config: config.clone(),
            tree: ExplorationTree::new(),
            pipelines: BTreeMap::new(),
            corpus: Corpus::new(),
            embeddings: EmbeddingStore::new(),
            user_states: BTreeMap::new(),
            projection: None,
            pipeline_count: 0,
            tree_node_count: 0,
            latest_tree_node: None,
            last_seq: 1,
        })
    }

    pub fn pipeline(&self, id: &PipelineId) -> Result<&PipelineRun, SessionError> {
        self.pipelines.get(id).ok_or_else(|| SessionError::UnknownPipeline(id.clone()))
    }

    pub fn user_state(&self, arxiv_id: &str) -> UserState {
        self.user_states.get(arxiv_id).copied().unwrap_or_default()
    }

    pub fn next_pipeline_id(&self) -> PipelineId {
        self.session_id.pipeline(self.pipeline_count + 1)
    }

    pub fn next_tree_node_id(&self, offset: u64) -> TreeNodeId {
        self.session_id.tree_node(self.tree_node_count + 1 + offset)
    }

    /// Pipelines in creation order.
    pub fn pipelines_in_order(&self) -> Vec<&PipelineRun> {
        let mut v: Vec<&PipelineRun> = self.pipelines.values().collect();
        v.sort_by_key(|p| ordinal(p.pipeline_id.as_str()));
        v
    }

    /// The most recent verdict per paper, over every review output in
    /// pipeline creation order, with the current user state applied.
    pub fn latest_verdicts(&self) -> BTreeMap<String, ReviewVerdict> {
        let mut out = BTreeMap::new();
        for p in self.pipelines_in_order() {
            if let Some(NodePayload::ReviewResult(r)) = &p.node(NodeKind::Review).output {
                for v in &r.verdicts {
                    let mut v = v.clone();
                    v.user_state = self.user_state(&v.arxiv_id);
                    out.insert(v.arxiv_id.clone(), v);
                }
            }
        }
        out
    }

    /// Session-level invariants.
    pub fn check(&self) -> Result<(), String> {
        self.tree.check()?;
        for p in self.pipelines.values() {
            p.check()?;
            if !self.tree.contains(&p.tree_node_id) {
                return Err(format!("{} points at missing tree node", p.pipeline_id));
            }
            if let Some(NodePayload::ReviewResult(r)) = &p.node(NodeKind::Review).output {
                r.verify(&self.corpus).map_err(|e| format!("{}: {e}", p.pipeline_id))?;
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), SessionError> {
        let seq = event.seq;
        if seq != self.last_seq + 1 {
            return Err(bad(seq, format!("expected seq {}", self.last_seq + 1)));
        }
        let at = event.timestamp;
        match &event.body {
            EventBody::SessionCreated { .. } => return Err(bad(seq, "session already created")),
            EventBody::PipelineCreated {
                pipeline_id,
                tree_node_id,
                query_text,
                config,
                attach,
            } => {
                if self.pipelines.contains_key(pipeline_id) {
                    return Err(bad(seq, format!("pipeline {pipeline_id} exists")));
                }
                let run = PipelineRun::new(pipeline_id.clone(), tree_node_id.clone(), query_text, *config)?;
                match attach {
                    Attach::Root => {
                        self.tree.add_root(tree_node_id.clone(), &run.query_text, pipeline_id.clone())?;
                        self.tree_node_count += 1;
                    }
                    Attach::Child { parent } => {
                        self.tree
                            .add_explored_child(parent, tree_node_id.clone(), &run.query_text, pipeline_id.clone())?;
                        self.tree_node_count += 1;
                    }
                    Attach::Materialize => {
                        let seed = &self.tree.check_materialize(tree_node_id)?.seed_query;
                        if seed.trim() != run.query_text {
                            return Err(bad(seq, "materialized query differs from the seed query"));
                        }
                        self.tree.materialize(tree_node_id, pipeline_id.clone())?;
                    }
                }
                self.pipelines.insert(pipeline_id.clone(), run);
                self.pipeline_count += 1;
                self.latest_tree_node = Some(tree_node_id.clone());
            }
            EventBody::NodeStarted {
                pipeline_id,
                node_id,
                rerun,
            } => {
                let (p, i) = self.locate_mut(pipeline_id, node_id)?;
                p.start(i, *rerun, at)?;
            }
            EventBody::NodeFinished {
                pipeline_id,
                node_id,
                outcome,
            } => {
                let (p, i) = self.locate(pipeline_id, node_id)?;
                if p.nodes[i].status != crate::workflow::NodeStatus::Running {
                    return Err(bad(seq, format!("{node_id} is not running")));
                }
                let result = match outcome {
                    NodeOutcome::Succeeded { payload, effects } => {
                        if payload.kind() != p.nodes[i].kind {
                            return Err(crate::workflow::WorkflowError::PayloadKindMismatch {
                                expected: p.nodes[i].kind,
                                found: payload.kind(),
                            }
                            .into());
                        }
                        let tree_node = p.tree_node_id.clone();
                        self.validate_payload(pipeline_id, payload, effects)?;
                        self.absorb(&tree_node, effects)?;
                        Ok(payload.clone())
                    }
                    NodeOutcome::Failed { error } => Err(error.clone()),
                };
                let (p, i) = self.locate_mut(pipeline_id, node_id)?;
                p.finish(i, result, at)?;
            }
            EventBody::NodeApproved {
                pipeline_id, node_id, ..
            } => {
                let (p, i) = self.locate_mut(pipeline_id, node_id)?;
                p.approve(i)?;
                self.sync_keywords(pipeline_id)?;
            }
            EventBody::NodeEdited {
                pipeline_id,
                node_id,
                payload,
            } => {
                let (p, i) = self.locate(pipeline_id, node_id)?;
                p.check_edit(i, payload)?;
                self.validate_payload(pipeline_id, payload, &Effects::default())?;
                let (p, i) = self.locate_mut(pipeline_id, node_id)?;
                p.edit(i, payload.clone())?;
                self.sync_keywords(pipeline_id)?;
            }
            EventBody::DirectionsProposed { parent, proposals } => {
                let items = proposals.iter().map(|p| (p.node_id.clone(), p.proposal.clone())).collect();
                let ids = self.tree.add_proposals(parent, items)?;
                self.tree_node_count += ids.len() as u64;
            }
            EventBody::UserStateSet { arxiv_id, state } => {
                if !self.latest_verdicts().contains_key(arxiv_id) {
                    return Err(SessionError::UnknownPaper(arxiv_id.clone()));
                }
                match state {
                    UserState::Neutral => self.user_states.remove(arxiv_id),
                    s => self.user_states.insert(arxiv_id.clone(), *s),
                };
            }
        }
        self.tree.refresh_edges(&self.embeddings);
        self.last_seq = seq;
        Ok(())
    }

    fn locate(&self, pid: &PipelineId, nid: &NodeId) -> Result<(&PipelineRun, usize), SessionError> {
        let p = self.pipeline(pid)?;
        let i = p.index_of(nid)?;
        Ok((p, i))
    }

    fn locate_mut(&mut self, pid: &PipelineId, nid: &NodeId) -> Result<(&mut PipelineRun, usize), SessionError> {
        let p = self
            .pipelines
            .get_mut(pid)
            .ok_or_else(|| SessionError::UnknownPipeline(pid.clone()))?;
        let i = p.index_of(nid)?;
        Ok((p, i))
    }

    /// Copies the settled keyword set of a pipeline onto its tree node.
    fn sync_keywords(&mut self, pid: &PipelineId) -> Result<(), SessionError> {
        let p = self.pipeline(pid)?;
        if let Some(NodePayload::KeywordSet(k)) = p.settled_output(NodeKind::QueryExpansion) {
            let (node, k) = (p.tree_node_id.clone(), k.clone());
            self.tree.set_keywords(&node, k)?;
        }
        Ok(())
    }

    /// Checks a payload against the session, taking not-yet-absorbed papers
    /// into account.
    fn validate_payload(&self, pid: &PipelineId, payload: &NodePayload, effects: &Effects) -> Result<(), SessionError> {
        let mut corpus = self.corpus.clone();
        corpus.merge(effects.papers.iter().cloned());
        let invalid = |m: String| SessionError::InvalidPayload(m);
        match payload {
            NodePayload::KeywordSet(k) => {
                if k.is_empty() {
                    return Err(invalid("keyword set is empty".into()));
                }
            }
            NodePayload::PaperList(ids) => {
                if let Some(id) = ids.iter().find(|id| !corpus.contains(id)) {
                    return Err(invalid(format!("paper {id} is not in the corpus")));
                }
            }
            NodePayload::ReviewResult(r) => {
                if let Some(v) = r.verdicts.iter().find(|v| !corpus.contains(&v.arxiv_id)) {
                    return Err(invalid(format!("verdict for unknown paper {}", v.arxiv_id)));
                }
                r.verify(&corpus)?;
            }
            NodePayload::Report(report) => {
                let p = self.pipeline(pid)?;
                let Some(NodePayload::ReviewResult(review)) = p.settled_output(NodeKind::Review) else {
                    return Err(invalid("report without a settled review".into()));
                };
                let review: ReviewResult = review.with_user_states(&self.user_states);
                let resolved = resolve_citations(&report.body, &review)?;
                if resolved.citations != report.citations {
                    return Err(invalid("citations do not match the markers in the body".into()));
                }
            }
        }
        Ok(())
    }

    /// Merges retrieved papers and new embeddings, then recomputes the
    /// projection over everything.
    fn absorb(&mut self, tree_node: &TreeNodeId, effects: &Effects) -> Result<(), SessionError> {
        if effects.is_empty() {
            return Ok(());
        }
        let mut corpus = self.corpus.clone();
        corpus.merge(effects.papers.iter().cloned().map(|mut p| {
            p.iteration_tags.insert(tree_node.clone());
            p
        }));
        let mut store = self.embeddings.clone();
        for r in &effects.embeddings {
            store.insert(r.clone())?;
        }
        let projection = reproject(&store, &corpus, &self.config)?;
        self.corpus = corpus;
        self.embeddings = store;
        self.projection = projection;
        Ok(())
    }

    pub fn paper(&self, arxiv_id: &str) -> Result<&PaperRecord, SessionError> {
        self.corpus.get(arxiv_id).ok_or_else(|| SessionError::UnknownPaper(arxiv_id.to_owned()))
    }

    /// Query embedding owner of a tree node.
    pub fn query_owner(node: &TreeNodeId) -> Owner {
        Owner::Query(node.clone())
    }
}

fn reproject(store: &EmbeddingStore, corpus: &Corpus, config: &SessionConfig) -> Result<Option<Projection>, SessionError> {
    let records = store.records();
    if records.is_empty() {
        return Ok(None);
    }
    let mut projection = project(&records, &config.projection)?;
    for pt in &mut projection.points {
        if let Owner::Paper(id) = &pt.owner {
            if let Some(p) = corpus.get(id) {
                pt.iteration_tags = p.iteration_tags.clone();
            }
        }
    }
    Ok(Some(projection))
}

/// Trailing counter of a scoped id (`s1.p12` → 12).
pub(crate) fn ordinal(scoped: &str) -> u64 {
    let tail = scoped.rsplit('.').next().unwrap_or("");
    tail.trim_start_matches(|c: char| c.is_ascii_alphabetic()).parse().unwrap_or(0)
}
