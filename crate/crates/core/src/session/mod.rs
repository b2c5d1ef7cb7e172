//! Sessions: the event-sourced owner of pipelines, tree, corpus and
//! projection.
//!
//! A command validates against the current state, runs any provider calls,
//! and then records one or more events. Recording applies the event to the
//! state, appends it to the log and hands it to the sink. Replaying the log
//! therefore rebuilds the state without any provider.

mod events;
mod snapshot;
mod state;
mod store;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{millis, Clock};
use crate::gateway::{Gateway, GatewayError, MockChat, MockEmbedder, ProviderConfig, TemplateKind, Templates};
use crate::ids::{ChunkId, NodeId, PipelineId, SessionId, TreeNodeId};
use crate::ingest::{ArxivClient, IngestError, PaperRecord, SearchSpec, SortOrder, SyntheticArxiv, DEFAULT_MAX_RESULTS};
use crate::keywords::{normalize_keyword, KeywordSet};
use crate::prompt;
use crate::review::{
    display_state, review_papers, synthesize, Chunk, DisplayState, ReviewError, ReviewOptions, ReviewResult, ReviewVerdict,
    Span, UserState, RELEVANCE_THRESHOLD, REVIEW_BATCH,
};
use crate::space::{EmbeddingRecord, Owner, ProjectionConfig, ProjectionMethod, ProjectionPoint, SpaceError};
use crate::tree::{parse_proposals, TreeError, TreeNodeState, DEFAULT_PROPOSALS};
use crate::workflow::{NodeKind, NodePayload, NodeRecord, NodeStatus, PipelineConfig, PipelineRun, WorkflowError};

pub use events::{Attach, Effects, Event, EventBody, NodeOutcome, ProposedNode};
pub use snapshot::{
    canonical_json, load_snapshot, parse_snapshot, save_snapshot, snapshot_bytes, without_timestamps, PersistError, SnapshotFile,
    SCHEMA_VERSION,
};
pub use state::SessionState;
pub use store::SessionStore;

/// Settings fixed at session creation and recorded in the first event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub results_per_search: u32,
    pub sort: SortOrder,
    pub projection: ProjectionConfig,
    pub relevance_threshold: f64,
    pub review_batch: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            results_per_search: DEFAULT_MAX_RESULTS,
            sort: SortOrder::Relevance,
            projection: ProjectionConfig::default(),
            relevance_threshold: RELEVANCE_THRESHOLD,
            review_batch: REVIEW_BATCH,
        }
    }
}

/// How an error should surface to an API client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NotFound,
    Conflict,
    Provider,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown pipeline {0}")]
    UnknownPipeline(PipelineId),
    #[error("unknown paper {0}")]
    UnknownPaper(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("event {seq} cannot be applied: {reason}")]
    BadEvent { seq: u64, reason: String },
    #[error(transparent)]
    Persist(#[from] PersistError),
}

impl SessionError {
    /// Stable machine-readable code (the innermost variant name).
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownSession(_) => "UnknownSession",
            SessionError::UnknownPipeline(_) => "UnknownPipeline",
            SessionError::UnknownPaper(_) => "UnknownPaper",
            SessionError::Workflow(e) => match e {
                WorkflowError::EmptyQuery => "EmptyQuery",
                WorkflowError::NotPending { .. } => "NotPending",
                WorkflowError::PipelineComplete(_) => "PipelineComplete",
                WorkflowError::InvalidStatus { .. } => "InvalidStatus",
                WorkflowError::PayloadKindMismatch { .. } => "PayloadKindMismatch",
                WorkflowError::NoOutput(_) => "NoOutput",
                WorkflowError::UnknownNode(_) => "UnknownNode",
            },
            SessionError::Tree(e) => match e {
                TreeError::UnknownParent(_) => "UnknownParent",
                TreeError::UnknownNode(_) => "UnknownNode",
                TreeError::AlreadyExplored(_) => "AlreadyExplored",
                TreeError::NotExplored(_) => "NotExplored",
                TreeError::ReviewNotApproved(_) => "ReviewNotApproved",
                TreeError::ProposalParse(_) => "ProposalParse",
                TreeError::RootExists => "RootExists",
                TreeError::DuplicateId(_) => "DuplicateId",
                TreeError::InvalidCount => "InvalidCount",
            },
            SessionError::Review(e) => match e {
                ReviewError::EmptyInput => "EmptyInput",
                ReviewError::Provider(_) => "ProviderError",
                ReviewError::ReviewParse(_) => "ReviewParse",
                ReviewError::NothingToSynthesize => "NothingToSynthesize",
                ReviewError::CitationUnresolved { .. } => "CitationUnresolved",
                ReviewError::CitesRejected { .. } => "CitesRejected",
                ReviewError::UnknownPaper(_) => "UnknownPaper",
                ReviewError::ChunkIntegrity { .. } => "ChunkIntegrity",
            },
            SessionError::Space(e) => match e {
                SpaceError::DimensionMismatch { .. } => "DimensionMismatch",
                SpaceError::ZeroVector => "ZeroVector",
                SpaceError::EmptyInput => "EmptyInput",
                SpaceError::SizeMismatch { .. } => "SizeMismatch",
                SpaceError::TooFewPoints { .. } => "TooFewPoints",
                SpaceError::InvalidConfig(_) => "InvalidConfig",
                SpaceError::NotProjected(_) => "NotProjected",
            },
            SessionError::Gateway(e) => match e {
                GatewayError::InvalidRequest(_) => "InvalidRequest",
                GatewayError::EmptyText { .. } => "EmptyText",
                GatewayError::EmptyBatch => "EmptyBatch",
                GatewayError::ProviderError { .. } => "ProviderError",
            },
            SessionError::InvalidPayload(_) => "InvalidPayload",
            SessionError::BadEvent { .. } => "BadEvent",
            SessionError::Persist(e) => match e {
                PersistError::Io(_) => "IoError",
                PersistError::UnknownSchemaVersion(_) => "UnknownSchemaVersion",
                PersistError::CorruptSnapshot(_) => "CorruptSnapshot",
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.code() {
            "UnknownSession" | "UnknownPipeline" | "UnknownPaper" | "UnknownNode" | "UnknownParent" | "NotProjected" => {
                ErrorClass::NotFound
            }
            "NotPending" | "PipelineComplete" | "InvalidStatus" | "NoOutput" | "AlreadyExplored" | "NotExplored"
            | "ReviewNotApproved" | "RootExists" | "NothingToSynthesize" => ErrorClass::Conflict,
            "ProviderError" | "ProposalParse" | "ReviewParse" => ErrorClass::Provider,
            "BadEvent" | "IoError" | "UnknownSchemaVersion" | "CorruptSnapshot" | "DuplicateId" | "ChunkIntegrity" => {
                ErrorClass::Internal
            }
            _ => ErrorClass::Validation,
        }
    }
}

/// Providers a session runs its nodes against.
#[derive(Clone)]
pub struct Services {
    pub gateway: Arc<Gateway>,
    pub arxiv: Arc<ArxivClient>,
    pub templates: Arc<Templates>,
    pub clock: Arc<dyn Clock>,
}

pub const MOCK_EMBEDDING_DIM: usize = 64;

impl Services {
    /// Fully offline services: the mock agent, hash-seeded embeddings and
    /// the synthetic arXiv pool. No request gap is enforced because nothing
    /// reaches the real endpoint.
    pub fn mock(clock: Arc<dyn Clock>) -> Self {
        Self::mock_with(clock, Arc::new(MockChat::agent()), Arc::new(MockEmbedder::new(MOCK_EMBEDDING_DIM)))
    }

    pub fn mock_with(clock: Arc<dyn Clock>, chat: Arc<MockChat>, embedder: Arc<MockEmbedder>) -> Self {
        let cfg = ProviderConfig {
            chat_model_id: "mock-chat".into(),
            embedding_model_id: "mock-embed".into(),
            ..ProviderConfig::default()
        };
        let gateway = Gateway::new(cfg, chat, embedder, clock.clone()).expect("default provider config is valid");
        let arxiv = ArxivClient::with_min_gap(Arc::new(SyntheticArxiv::new()), clock.clone(), Duration::ZERO);
        Self {
            gateway: Arc::new(gateway),
            arxiv: Arc::new(arxiv),
            templates: Arc::new(Templates::builtin()),
            clock,
        }
    }
}

/// Receives every event right after it has been applied.
pub trait EventSink: Send + Sync {
    fn appended(&self, event: &Event, state: &SessionState);
}

/// Where a new pipeline should attach. `parent: None` picks the tree node of
/// the most recently created pipeline (or the root slot of an empty tree).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewPipeline {
    pub query_text: String,
    #[serde(default)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub parent: Option<TreeNodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceLink {
    pub chunk_id: ChunkId,
    pub arxiv_id: String,
    pub title: String,
    pub abs_url: String,
    pub span: Span,
    pub text: String,
    /// Citation markers referring to this chunk (reports only).
    pub markers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectView {
    pub pipeline_id: PipelineId,
    pub node: NodeRecord,
    pub payload: NodePayload,
    pub provenance: Vec<ProvenanceLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointView {
    #[serde(flatten)]
    pub point: ProjectionPoint,
    pub display_state: Option<DisplayState>,
    pub relevance_score: Option<f64>,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionView {
    pub method: Option<ProjectionMethod>,
    pub points: Vec<PointView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperView {
    #[serde(flatten)]
    pub paper: PaperRecord,
    pub year: i32,
    pub user_state: UserState,
    pub display_state: DisplayState,
    pub verdict: Option<ReviewVerdict>,
    pub chunks: Vec<Chunk>,
}

pub struct Session {
    state: SessionState,
    log: Vec<Event>,
    services: Services,
    sink: Option<Arc<dyn EventSink>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("session_id", &self.state.session_id)
            .field("events", &self.log.len())
            .finish_non_exhaustive()
    }
}

fn failure(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Session {
    pub fn create(id: SessionId, config: SessionConfig, services: Services) -> Result<Self, SessionError> {
        config.projection.validate()?;
        let event = Event {
            seq: 1,
            timestamp: millis(services.clock.now()),
            body: EventBody::SessionCreated { session_id: id, config },
        };
        let state = SessionState::from_first(&event)?;
        Ok(Self {
            state,
            log: vec![event],
            services,
            sink: None,
        })
    }

    /// Rebuilds a session from its log.
    pub fn restore(log: Vec<Event>, services: Services) -> Result<Self, SessionError> {
        let state = SessionState::replay(&log)?;
        Ok(Self {
            state,
            log,
            services,
            sink: None,
        })
    }

    pub fn with_sink(mut self, sink: Arc<dyn EventSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn set_sink(&mut self, sink: Option<Arc<dyn EventSink>>) {
        self.sink = sink;
    }

    pub fn id(&self) -> &SessionId {
        &self.state.session_id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    fn record(&mut self, body: EventBody) -> Result<&Event, SessionError> {
        let event = Event {
            seq: self.state.last_seq + 1,
            timestamp: millis(self.services.clock.now()),
            body,
        };
        self.state.apply(&event)?;
        tracing::debug!(seq = event.seq, kind = event.body.kind(), "event");
        self.log.push(event);
        let event = self.log.last().unwrap();
        if let Some(sink) = &self.sink {
            sink.appended(event, &self.state);
        }
        Ok(event)
    }

    pub fn create_pipeline(&mut self, req: NewPipeline) -> Result<PipelineRun, SessionError> {
        let query = req.query_text.trim();
        if query.is_empty() {
            return Err(WorkflowError::EmptyQuery.into());
        }
        let attach = match (self.state.tree.root(), req.parent) {
            (None, None) => Attach::Root,
            (None, Some(p)) => return Err(TreeError::UnknownParent(p).into()),
            (Some(_), Some(p)) => {
                let node = self.state.tree.get(&p).map_err(|_| TreeError::UnknownParent(p.clone()))?;
                if node.state != TreeNodeState::Explored {
                    return Err(TreeError::NotExplored(p).into());
                }
                Attach::Child { parent: p }
            }
            (Some(_), None) => Attach::Child {
                parent: self.state.latest_tree_node.clone().expect("a rooted tree has a latest node"),
            },
        };
        let pipeline_id = self.state.next_pipeline_id();
        let body = EventBody::PipelineCreated {
            pipeline_id: pipeline_id.clone(),
            tree_node_id: self.state.next_tree_node_id(0),
            query_text: query.to_owned(),
            config: req.config,
            attach,
        };
        self.record(body)?;
        Ok(self.state.pipelines[&pipeline_id].clone())
    }

    /// Executes the node at the current index. Returns the last executed
    /// node, which differs from the first when auto-approval and
    /// run-to-next-checkpoint chain several nodes.
    pub fn step(&mut self, pid: &PipelineId) -> Result<NodeRecord, SessionError> {
        let index = self.state.pipeline(pid)?.check_step()?;
        let last = self.execute(pid, index, false)?;
        self.continue_run(pid, last)
    }

    pub fn approve(&mut self, pid: &PipelineId, nid: &NodeId) -> Result<PipelineRun, SessionError> {
        let p = self.state.pipeline(pid)?;
        let index = p.index_of(nid)?;
        p.check_approve(index)?;
        self.record(EventBody::NodeApproved {
            pipeline_id: pid.clone(),
            node_id: nid.clone(),
            automatic: false,
        })?;
        let run = self.state.pipeline(pid)?;
        if run.config.run_to_next_checkpoint && !run.is_complete() {
            let i = run.current_index;
            let last = self.execute(pid, i, false)?;
            self.continue_run(pid, last)?;
        }
        Ok(self.state.pipeline(pid)?.clone())
    }

    pub fn edit_output(&mut self, pid: &PipelineId, nid: &NodeId, payload: NodePayload) -> Result<PipelineRun, SessionError> {
        let p = self.state.pipeline(pid)?;
        let index = p.index_of(nid)?;
        p.check_edit(index, &payload)?;
        self.record(EventBody::NodeEdited {
            pipeline_id: pid.clone(),
            node_id: nid.clone(),
            payload,
        })?;
        Ok(self.state.pipeline(pid)?.clone())
    }

    pub fn rerun(&mut self, pid: &PipelineId, nid: &NodeId) -> Result<NodeRecord, SessionError> {
        let p = self.state.pipeline(pid)?;
        let index = p.index_of(nid)?;
        p.check_rerun(index)?;
        let last = self.execute(pid, index, true)?;
        self.continue_run(pid, last)
    }

    /// After an auto-approved node, keeps stepping while the pipeline asks
    /// to run to its next checkpoint.
    fn continue_run(&mut self, pid: &PipelineId, mut last: NodeRecord) -> Result<NodeRecord, SessionError> {
        loop {
            let run = self.state.pipeline(pid)?;
            let chain = run.config.run_to_next_checkpoint && last.status == NodeStatus::Approved && !run.is_complete();
            if !chain {
                return Ok(last);
            }
            let i = run.check_step()?;
            last = self.execute(pid, i, false)?;
        }
    }

    fn execute(&mut self, pid: &PipelineId, index: usize, rerun: bool) -> Result<NodeRecord, SessionError> {
        let node_id = self.state.pipeline(pid)?.nodes[index].node_id.clone();
        self.record(EventBody::NodeStarted {
            pipeline_id: pid.clone(),
            node_id: node_id.clone(),
            rerun,
        })?;
        let outcome = match self.run_node(pid, index) {
            Ok((payload, effects)) => NodeOutcome::Succeeded { payload, effects },
            Err(error) => {
                tracing::warn!(node = %node_id, %error, "node failed");
                NodeOutcome::Failed { error }
            }
        };
        let succeeded = matches!(outcome, NodeOutcome::Succeeded { .. });
        self.record(EventBody::NodeFinished {
            pipeline_id: pid.clone(),
            node_id: node_id.clone(),
            outcome,
        })?;
        let run = self.state.pipeline(pid)?;
        if succeeded && run.config.auto_approve.for_kind(run.nodes[index].kind) {
            self.record(EventBody::NodeApproved {
                pipeline_id: pid.clone(),
                node_id: node_id.clone(),
                automatic: true,
            })?;
        }
        Ok(self.state.pipeline(pid)?.nodes[index].clone())
    }

    fn upstream<'a>(&'a self, run: &'a PipelineRun, kind: NodeKind) -> Result<&'a NodePayload, String> {
        run.settled_output(kind).ok_or_else(|| format!("upstream {kind:?} output is not settled"))
    }

    fn keywords_of(&self, run: &PipelineRun) -> Result<KeywordSet, String> {
        match self.upstream(run, NodeKind::QueryExpansion)? {
            NodePayload::KeywordSet(k) => Ok(k.clone()),
            _ => Err("keyword expansion output has the wrong kind".into()),
        }
    }

    /// Runs the provider work of one node. Any failure becomes the node's
    /// error message.
    fn run_node(&self, pid: &PipelineId, index: usize) -> Result<(NodePayload, Effects), String> {
        let run = self.state.pipeline(pid).map_err(failure)?;
        let svc = &self.services;
        let query = run.query_text.as_str();
        match run.nodes[index].kind {
            NodeKind::QueryExpansion => {
                let t = svc.templates.get(TemplateKind::QueryExpansion);
                let user = t.render(&[("query", query)]);
                let resp = svc.gateway.complete(&svc.gateway.request(t.system.clone(), user)).map_err(failure)?;
                let keywords = parse_keywords(&resp.text);
                if keywords.is_empty() {
                    return Err("query expansion returned no keywords".into());
                }
                let mut effects = Effects::default();
                let owner = SessionState::query_owner(&run.tree_node_id);
                if !self.state.embeddings.contains(&owner) {
                    let v = svc.gateway.embed_batch(&[query.to_owned()]).map_err(failure)?;
                    effects.embeddings.push(EmbeddingRecord {
                        owner,
                        vector: v.into_iter().next().unwrap(),
                    });
                }
                Ok((NodePayload::KeywordSet(keywords), effects))
            }
            NodeKind::Search => {
                let keywords = self.keywords_of(run)?;
                let cfg = &self.state.config;
                let spec = SearchSpec::new(keywords, cfg.results_per_search, 0, cfg.sort).map_err(failure)?;
                let papers = svc.arxiv.fetch(&spec).map_err(|e: IngestError| failure(e))?;
                let mut seen = BTreeSet::new();
                let papers: Vec<PaperRecord> = papers.into_iter().filter(|p| seen.insert(p.arxiv_id.clone())).collect();
                let ids: Vec<String> = papers.iter().map(|p| p.arxiv_id.clone()).collect();
                let fresh: Vec<&PaperRecord> = papers
                    .iter()
                    .filter(|p| !self.state.embeddings.contains(&Owner::Paper(p.arxiv_id.clone())))
                    .collect();
                let mut owners: Vec<Owner> = fresh.iter().map(|p| Owner::Paper(p.arxiv_id.clone())).collect();
                let mut texts: Vec<String> = fresh.iter().map(|p| p.abstract_text.clone()).collect();
                let query_owner = SessionState::query_owner(&run.tree_node_id);
                if !self.state.embeddings.contains(&query_owner) {
                    owners.push(query_owner);
                    texts.push(query.to_owned());
                }
                let mut effects = Effects {
                    papers: papers.clone(),
                    embeddings: Vec::new(),
                };
                if !texts.is_empty() {
                    let vectors = svc.gateway.embed_batch(&texts).map_err(failure)?;
                    effects.embeddings = owners
                        .into_iter()
                        .zip(vectors)
                        .map(|(owner, vector)| EmbeddingRecord { owner, vector })
                        .collect();
                }
                Ok((NodePayload::PaperList(ids), effects))
            }
            NodeKind::Review => {
                let keywords = self.keywords_of(run)?;
                let NodePayload::PaperList(ids) = self.upstream(run, NodeKind::Search)? else {
                    return Err("search output has the wrong kind".into());
                };
                let papers: Vec<&PaperRecord> = ids
                    .iter()
                    .map(|id| self.state.paper(id).map_err(failure))
                    .collect::<Result<_, _>>()?;
                let options = ReviewOptions {
                    threshold: self.state.config.relevance_threshold,
                    batch_size: self.state.config.review_batch,
                };
                let result = review_papers(&svc.gateway, &svc.templates, query, &keywords, &papers, options).map_err(failure)?;
                Ok((NodePayload::ReviewResult(result), Effects::default()))
            }
            NodeKind::Synthesis => {
                let keywords = self.keywords_of(run)?;
                let NodePayload::ReviewResult(review) = self.upstream(run, NodeKind::Review)? else {
                    return Err("review output has the wrong kind".into());
                };
                let review = review.with_user_states(&self.state.user_states);
                let report = synthesize(
                    &svc.gateway,
                    &svc.templates,
                    query,
                    &keywords,
                    &review,
                    self.state.config.relevance_threshold,
                )
                .map_err(failure)?;
                Ok((NodePayload::Report(report), Effects::default()))
            }
        }
    }

    pub fn inspect(&self, pid: &PipelineId, nid: &NodeId) -> Result<InspectView, SessionError> {
        let run = self.state.pipeline(pid)?;
        let node = &run.nodes[run.index_of(nid)?];
        let payload = node.output.clone().ok_or_else(|| WorkflowError::NoOutput(nid.clone()))?;
        let payload = match payload {
            NodePayload::ReviewResult(r) => NodePayload::ReviewResult(r.with_user_states(&self.state.user_states)),
            other => other,
        };
        let link = |c: &Chunk, markers: Vec<usize>| -> Result<ProvenanceLink, SessionError> {
            let paper = self.state.paper(&c.arxiv_id)?;
            Ok(ProvenanceLink {
                chunk_id: c.chunk_id.clone(),
                arxiv_id: c.arxiv_id.clone(),
                title: paper.title.clone(),
                abs_url: paper.abs_url.clone(),
                span: c.span,
                text: c.text.clone(),
                markers,
            })
        };
        let provenance = match &payload {
            NodePayload::ReviewResult(r) => r.chunks.iter().map(|c| link(c, Vec::new())).collect::<Result<_, _>>()?,
            NodePayload::Report(report) => {
                let review = match &run.node(NodeKind::Review).output {
                    Some(NodePayload::ReviewResult(r)) => r,
                    _ => return Err(SessionError::InvalidPayload("report without review".into())),
                };
                let cited: BTreeSet<&ChunkId> = report.citations.iter().map(|c| &c.chunk_id).collect();
                review
                    .chunks
                    .iter()
                    .filter(|c| cited.contains(&c.chunk_id))
                    .map(|c| {
                        let markers = report
                            .citations
                            .iter()
                            .filter(|x| x.chunk_id == c.chunk_id)
                            .map(|x| x.marker)
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect();
                        link(c, markers)
                    })
                    .collect::<Result<_, _>>()?
            }
            _ => Vec::new(),
        };
        let mut node = node.clone();
        node.output = Some(payload.clone());
        Ok(InspectView {
            pipeline_id: pid.clone(),
            node,
            payload,
            provenance,
        })
    }

    /// Asks the agent for follow-up directions from an explored node whose
    /// review is settled, and attaches up to `n` of them as proposed
    /// children.
    pub fn propose_directions(&mut self, node: &TreeNodeId, n: Option<usize>) -> Result<Vec<TreeNodeId>, SessionError> {
        let n = n.unwrap_or(DEFAULT_PROPOSALS);
        if n == 0 {
            return Err(TreeError::InvalidCount.into());
        }
        let tn = self.state.tree.get(node)?;
        let pid = match (&tn.state, &tn.pipeline_id) {
            (TreeNodeState::Explored, Some(pid)) => pid.clone(),
            _ => return Err(TreeError::NotExplored(node.clone()).into()),
        };
        let run = self.state.pipeline(&pid)?;
        let Some(NodePayload::ReviewResult(review)) = run.settled_output(NodeKind::Review) else {
            return Err(TreeError::ReviewNotApproved(node.clone()).into());
        };
        let review: ReviewResult = review.with_user_states(&self.state.user_states);
        let blocks: String = review
            .verdicts
            .iter()
            .filter(|v| v.user_state != UserState::Rejected)
            .filter_map(|v| self.state.corpus.get(&v.arxiv_id))
            .map(|p| prompt::paper_block(&p.arxiv_id, &p.title, &p.abstract_text))
            .collect::<Vec<_>>()
            .join("\n");
        let keywords = tn.keyword_set.as_ref().map(prompt::keywords).unwrap_or_default();
        let t = self.services.templates.get(TemplateKind::DirectionProposal);
        let user = t.render(&[("query", &tn.query_text), ("keywords", &keywords), ("abstracts", &blocks)]);
        let resp = self.services.gateway.complete(&self.services.gateway.request(t.system.clone(), user))?;
        let proposals = parse_proposals(&resp.text, n)?;
        let proposals: Vec<ProposedNode> = proposals
            .into_iter()
            .enumerate()
            .map(|(i, proposal)| ProposedNode {
                node_id: self.state.next_tree_node_id(i as u64),
                proposal,
            })
            .collect();
        let ids = proposals.iter().map(|p| p.node_id.clone()).collect();
        self.record(EventBody::DirectionsProposed {
            parent: node.clone(),
            proposals,
        })?;
        Ok(ids)
    }

    pub fn materialize(&mut self, node: &TreeNodeId, config: PipelineConfig) -> Result<PipelineRun, SessionError> {
        let seed = self.state.tree.check_materialize(node)?.seed_query.trim().to_owned();
        let pipeline_id = self.state.next_pipeline_id();
        self.record(EventBody::PipelineCreated {
            pipeline_id: pipeline_id.clone(),
            tree_node_id: node.clone(),
            query_text: seed,
            config,
            attach: Attach::Materialize,
        })?;
        Ok(self.state.pipelines[&pipeline_id].clone())
    }

    pub fn set_user_state(&mut self, arxiv_id: &str, state: UserState) -> Result<ReviewVerdict, SessionError> {
        if !self.state.latest_verdicts().contains_key(arxiv_id) {
            return Err(SessionError::UnknownPaper(arxiv_id.to_owned()));
        }
        self.record(EventBody::UserStateSet {
            arxiv_id: arxiv_id.to_owned(),
            state,
        })?;
        Ok(self.state.latest_verdicts().remove(arxiv_id).unwrap())
    }

    pub fn has_verdict(&self, arxiv_id: &str) -> bool {
        self.state.latest_verdicts().contains_key(arxiv_id)
    }

    pub fn query_centroid(&self, node: &TreeNodeId) -> Result<ProjectionPoint, SessionError> {
        self.state.tree.get(node)?;
        let projection = self
            .state
            .projection
            .as_ref()
            .ok_or_else(|| SpaceError::NotProjected(node.clone()))?;
        Ok(projection.centroid(node)?.clone())
    }

    /// Points of the latest projection, restricted to `iterations` when it is
    /// nonempty, with the display colour of every paper.
    pub fn projection(&self, iterations: &BTreeSet<TreeNodeId>) -> Result<ProjectionView, SessionError> {
        for id in iterations {
            self.state.tree.get(id)?;
        }
        let Some(projection) = &self.state.projection else {
            return Ok(ProjectionView {
                method: None,
                points: Vec::new(),
            });
        };
        let verdicts = self.state.latest_verdicts();
        let points = projection
            .filtered(iterations)
            .into_iter()
            .map(|pt| {
                let (display, score, title) = match &pt.owner {
                    Owner::Paper(id) => {
                        let v = verdicts.get(id);
                        (
                            Some(v.map(display_state).unwrap_or(DisplayState::Blue)),
                            v.map(|v| v.relevance_score),
                            self.state.corpus.get(id).map(|p| p.title.clone()),
                        )
                    }
                    Owner::Query(_) => (None, None, None),
                };
                PointView {
                    point: pt.clone(),
                    display_state: display,
                    relevance_score: score,
                    title,
                }
            })
            .collect();
        Ok(ProjectionView {
            method: Some(projection.method),
            points,
        })
    }

    pub fn paper(&self, arxiv_id: &str) -> Result<PaperView, SessionError> {
        let paper = self.state.paper(arxiv_id)?.clone();
        let verdict = self.state.latest_verdicts().remove(arxiv_id);
        let user_state = self.state.user_state(arxiv_id);
        let mut chunks: Vec<Chunk> = Vec::new();
        for p in self.state.pipelines_in_order() {
            if let Some(NodePayload::ReviewResult(r)) = &p.node(NodeKind::Review).output {
                for c in r.chunks.iter().filter(|c| c.arxiv_id == arxiv_id) {
                    if !chunks.iter().any(|x| x.chunk_id == c.chunk_id) {
                        chunks.push(c.clone());
                    }
                }
            }
        }
        Ok(PaperView {
            year: paper.year(),
            display_state: verdict.as_ref().map(display_state).unwrap_or(DisplayState::Blue),
            paper,
            user_state,
            verdict,
            chunks,
        })
    }
}

/// Keywords from one-per-line model output; list markers and surrounding
/// quotes are ignored and comma-separated lines are split.
pub fn parse_keywords(text: &str) -> KeywordSet {
    let mut set = KeywordSet::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        let line = if digits > 0 && line[digits..].starts_with(['.', ')']) {
            line[digits + 1..].trim()
        } else {
            line
        };
        for part in line.split(',') {
            let part = part.trim().trim_matches(['"', '\'']);
            if let Some(k) = normalize_keyword(part) {
                set.insert(&k);
            }
        }
    }
    set
}
