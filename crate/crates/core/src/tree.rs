//! The exploration tree of query iterations.
//!
//! Every pipeline owns one tree node. Agent-proposed directions sit in the
//! tree as `Proposed` leaves until they are materialized into a pipeline.
//! Edge annotations compare a node with its parent: the semantic offset uses
//! the embeddings of the two query texts and the delta uses their approved
//! keyword sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::EmbeddingVector;
use crate::ids::{PipelineId, TreeNodeId};
use crate::keywords::KeywordSet;
use crate::space::{cosine_similarity, EmbeddingStore, Owner, SpaceError};

pub const DEFAULT_PROPOSALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TreeError {
    #[error("unknown parent {0}")]
    UnknownParent(TreeNodeId),
    #[error("unknown tree node {0}")]
    UnknownNode(TreeNodeId),
    #[error("tree node {0} is already explored")]
    AlreadyExplored(TreeNodeId),
    #[error("tree node {0} is not explored")]
    NotExplored(TreeNodeId),
    #[error("the review of tree node {0} has not been approved")]
    ReviewNotApproved(TreeNodeId),
    #[error("could not parse direction proposals: {0}")]
    ProposalParse(String),
    #[error("the tree already has a root")]
    RootExists,
    #[error("tree node id {0} is already taken")]
    DuplicateId(TreeNodeId),
    #[error("proposal count must be at least 1")]
    InvalidCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNodeState {
    Explored,
    Proposed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionProposal {
    pub title: String,
    pub rationale: String,
    pub seed_query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordDelta {
    pub added: KeywordSet,
    pub removed: KeywordSet,
}

impl KeywordDelta {
    /// Added terms prefixed with `+`, then removed terms prefixed with U+2212,
    /// each group in lexicographic order.
    pub fn render(&self) -> String {
        self.added
            .iter()
            .map(|k| format!("+{k}"))
            .chain(self.removed.iter().map(|k| format!("\u{2212}{k}")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub semantic_offset_pct: f64,
    pub added: KeywordSet,
    pub removed: KeywordSet,
    /// The edge label, e.g. `+benchmark −interpretability`.
    pub delta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTreeNode {
    pub node_id: TreeNodeId,
    pub parent_id: Option<TreeNodeId>,
    pub query_text: String,
    /// Set once the pipeline's keyword expansion is approved or edited.
    pub keyword_set: Option<KeywordSet>,
    pub state: TreeNodeState,
    pub pipeline_id: Option<PipelineId>,
    pub proposal: Option<DirectionProposal>,
    /// Children in creation order.
    pub children: Vec<TreeNodeId>,
    /// Metrics of the edge from the parent; absent until both endpoints
    /// have embeddings and keyword sets.
    pub edge: Option<EdgeMetrics>,
}

/// Percentage topic deviation between two query embeddings:
/// `(1 - cos) * 100`, clamped to `[0, 100]`.
pub fn semantic_offset(parent: &EmbeddingVector, child: &EmbeddingVector) -> Result<f64, SpaceError> {
    let cos = cosine_similarity(parent, child)?;
    if parent.values == child.values {
        return Ok(0.0);
    }
    Ok(((1.0 - cos) * 100.0).clamp(0.0, 100.0))
}

pub fn semantic_delta(parent: &KeywordSet, child: &KeywordSet) -> KeywordDelta {
    KeywordDelta {
        added: child.difference(parent),
        removed: parent.difference(child),
    }
}

/// Parses `title | rationale | seed query` lines, keeping the first `n`.
/// Lines without exactly three nonempty fields are skipped; a leading list
/// marker is tolerated.
pub fn parse_proposals(text: &str, n: usize) -> Result<Vec<DirectionProposal>, TreeError> {
    if n == 0 {
        return Err(TreeError::InvalidCount);
    }
    let proposals: Vec<DirectionProposal> = text
        .lines()
        .filter_map(|line| {
            let line = strip_list_marker(line.trim());
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            match fields.as_slice() {
                [title, rationale, seed] if !title.is_empty() && !rationale.is_empty() && !seed.is_empty() => {
                    Some(DirectionProposal {
                        title: (*title).to_owned(),
                        rationale: (*rationale).to_owned(),
                        seed_query: (*seed).to_owned(),
                    })
                }
                _ => None,
            }
        })
        .take(n)
        .collect();
    if proposals.is_empty() {
        let preview: String = text.chars().take(80).collect();
        return Err(TreeError::ProposalParse(format!("no `title | rationale | seed query` line in {preview:?}")));
    }
    Ok(proposals)
}

fn strip_list_marker(line: &str) -> &str {
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return rest;
    }
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(". ").or_else(|| line[digits..].strip_prefix(") ")) {
            return rest;
        }
    }
    line
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTree {
    root: Option<TreeNodeId>,
    nodes: BTreeMap<TreeNodeId, QueryTreeNode>,
}

impl ExplorationTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(&self) -> Option<&TreeNodeId> {
        self.root.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: &TreeNodeId) -> Result<&QueryTreeNode, TreeError> {
        self.nodes.get(id).ok_or_else(|| TreeError::UnknownNode(id.clone()))
    }

    pub fn contains(&self, id: &TreeNodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &QueryTreeNode> {
        self.nodes.values()
    }

    /// Depth-first order from the root, children in creation order.
    pub fn walk(&self) -> Vec<&QueryTreeNode> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<&TreeNodeId> = self.root.iter().collect();
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    fn fresh(&self, id: &TreeNodeId) -> Result<(), TreeError> {
        if self.nodes.contains_key(id) {
            return Err(TreeError::DuplicateId(id.clone()));
        }
        Ok(())
    }

    pub fn add_root(&mut self, id: TreeNodeId, query_text: &str, pipeline: PipelineId) -> Result<&QueryTreeNode, TreeError> {
        if self.root.is_some() {
            return Err(TreeError::RootExists);
        }
        self.fresh(&id)?;
        self.root = Some(id.clone());
        self.nodes.insert(id.clone(), explored(id.clone(), None, query_text, pipeline));
        Ok(&self.nodes[&id])
    }

    pub fn add_explored_child(
        &mut self,
        parent: &TreeNodeId,
        id: TreeNodeId,
        query_text: &str,
        pipeline: PipelineId,
    ) -> Result<&QueryTreeNode, TreeError> {
        self.attach(parent, explored(id, Some(parent.clone()), query_text, pipeline))
    }

    /// Attaches proposals as `Proposed` children of an explored node.
    pub fn add_proposals(
        &mut self,
        parent: &TreeNodeId,
        proposals: Vec<(TreeNodeId, DirectionProposal)>,
    ) -> Result<Vec<TreeNodeId>, TreeError> {
        let p = self.nodes.get(parent).ok_or_else(|| TreeError::UnknownParent(parent.clone()))?;
        if p.state != TreeNodeState::Explored {
            return Err(TreeError::NotExplored(parent.clone()));
        }
        for (id, _) in &proposals {
            self.fresh(id)?;
        }
        let mut ids = Vec::with_capacity(proposals.len());
        for (id, proposal) in proposals {
            let node = QueryTreeNode {
                node_id: id.clone(),
                parent_id: Some(parent.clone()),
                query_text: proposal.seed_query.clone(),
                keyword_set: None,
                state: TreeNodeState::Proposed,
                pipeline_id: None,
                proposal: Some(proposal),
                children: Vec::new(),
                edge: None,
            };
            self.attach(parent, node)?;
            ids.push(id);
        }
        Ok(ids)
    }

    fn attach(&mut self, parent: &TreeNodeId, node: QueryTreeNode) -> Result<&QueryTreeNode, TreeError> {
        if !self.nodes.contains_key(parent) {
            return Err(TreeError::UnknownParent(parent.clone()));
        }
        self.fresh(&node.node_id)?;
        let id = node.node_id.clone();
        self.nodes.get_mut(parent).unwrap().children.push(id.clone());
        self.nodes.insert(id.clone(), node);
        Ok(&self.nodes[&id])
    }

    /// Checks that `id` can be materialized.
    pub fn check_materialize(&self, id: &TreeNodeId) -> Result<&DirectionProposal, TreeError> {
        let node = self.get(id)?;
        match (&node.state, &node.proposal) {
            (TreeNodeState::Proposed, Some(p)) => Ok(p),
            _ => Err(TreeError::AlreadyExplored(id.clone())),
        }
    }

    /// Turns a proposed node into an explored one backed by `pipeline`. The
    /// proposal stays attached as the node's origin; the query text is the
    /// proposal's seed query.
    pub fn materialize(&mut self, id: &TreeNodeId, pipeline: PipelineId) -> Result<&QueryTreeNode, TreeError> {
        self.check_materialize(id)?;
        let node = self.nodes.get_mut(id).unwrap();
        node.state = TreeNodeState::Explored;
        node.pipeline_id = Some(pipeline);
        Ok(node)
    }

    pub fn set_keywords(&mut self, id: &TreeNodeId, keywords: KeywordSet) -> Result<(), TreeError> {
        let node = self.nodes.get_mut(id).ok_or_else(|| TreeError::UnknownNode(id.clone()))?;
        node.keyword_set = Some(keywords);
        Ok(())
    }

    /// Recomputes every edge whose endpoints both have a query embedding and
    /// a keyword set; other edges are cleared.
    pub fn refresh_edges(&mut self, embeddings: &EmbeddingStore) {
        let ids: Vec<TreeNodeId> = self.nodes.keys().cloned().collect();
        for id in ids {
            let edge = self.edge_for(&id, embeddings);
            self.nodes.get_mut(&id).unwrap().edge = edge;
        }
    }

    fn edge_for(&self, id: &TreeNodeId, embeddings: &EmbeddingStore) -> Option<EdgeMetrics> {
        let child = &self.nodes[id];
        let parent = &self.nodes[child.parent_id.as_ref()?];
        let (pk, ck) = (parent.keyword_set.as_ref()?, child.keyword_set.as_ref()?);
        let pe = embeddings.get(&Owner::Query(parent.node_id.clone()))?;
        let ce = embeddings.get(&Owner::Query(child.node_id.clone()))?;
        let offset = semantic_offset(pe, ce).ok()?;
        let delta = semantic_delta(pk, ck);
        Some(EdgeMetrics {
            semantic_offset_pct: offset,
            delta: delta.render(),
            added: delta.added,
            removed: delta.removed,
        })
    }

    /// Structural invariants: one root, every node reachable from it exactly
    /// once, parent links consistent with child lists, and the state flag in
    /// agreement with the pipeline and proposal fields.
    pub fn check(&self) -> Result<(), String> {
        let Some(root) = &self.root else {
            return if self.nodes.is_empty() { Ok(()) } else { Err("nodes without a root".into()) };
        };
        if self.nodes[root].parent_id.is_some() {
            return Err("root has a parent".into());
        }
        let walked = self.walk();
        if walked.len() != self.nodes.len() {
            return Err(format!("{} of {} nodes reachable", walked.len(), self.nodes.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for node in walked {
            if !seen.insert(&node.node_id) {
                return Err(format!("{} reached twice", node.node_id));
            }
            for c in &node.children {
                if self.nodes[c].parent_id.as_ref() != Some(&node.node_id) {
                    return Err(format!("{c} does not point back to {}", node.node_id));
                }
            }
            let ok = match node.state {
                TreeNodeState::Explored => node.pipeline_id.is_some(),
                TreeNodeState::Proposed => node.pipeline_id.is_none() && node.proposal.is_some(),
            };
            if !ok {
                return Err(format!("{} state disagrees with its pipeline/proposal", node.node_id));
            }
        }
        Ok(())
    }
}

fn explored(id: TreeNodeId, parent: Option<TreeNodeId>, query_text: &str, pipeline: PipelineId) -> QueryTreeNode {
    QueryTreeNode {
        node_id: id,
        parent_id: parent,
        query_text: query_text.to_owned(),
        keyword_set: None,
        state: TreeNodeState::Explored,
        pipeline_id: Some(pipeline),
        proposal: None,
        children: Vec::new(),
        edge: None,
    }
}
