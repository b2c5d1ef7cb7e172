//! The checkpointed four-node pipeline as a pure state machine.
//!
//! Nothing here talks to providers. The session executes a node between
//! [`PipelineRun::start`] and [`PipelineRun::finish`]; every other transition
//! is a direct method call. All methods check their preconditions before
//! touching any field, so a returned error leaves the run unchanged.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, PipelineId, TreeNodeId};
use crate::keywords::KeywordSet;
use crate::review::{ReviewResult, SynthesisReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    QueryExpansion,
    Search,
    Review,
    Synthesis,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [NodeKind::QueryExpansion, NodeKind::Search, NodeKind::Review, NodeKind::Synthesis];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Running,
    AwaitingApproval,
    Approved,
    Edited,
    Failed,
}

impl NodeStatus {
    /// Approved or Edited: the node's output is accepted and downstream may run.
    pub fn is_settled(self) -> bool {
        matches!(self, NodeStatus::Approved | NodeStatus::Edited)
    }

    pub fn has_output(self) -> bool {
        matches!(self, NodeStatus::AwaitingApproval | NodeStatus::Approved | NodeStatus::Edited)
    }
}

/// Why a status changed; the legal transitions depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    Step,
    Finish,
    Approve,
    Edit,
    Rerun,
    Invalidate,
}

/// The transition relation of the status lattice. Rerunning a settled node
/// passes through an implicit self-invalidation, so Approved/Edited reach
/// Running only under [`Cause::Rerun`].
pub fn transition_allowed(from: NodeStatus, to: NodeStatus, cause: Cause) -> bool {
    use NodeStatus::*;
    match cause {
        Cause::Step => from == Pending && to == Running,
        Cause::Finish => from == Running && matches!(to, AwaitingApproval | Failed),
        Cause::Approve => from == AwaitingApproval && to == Approved,
        Cause::Edit => matches!(from, AwaitingApproval | Approved | Edited) && to == Edited,
        Cause::Rerun => matches!(from, AwaitingApproval | Failed | Approved | Edited) && to == Running,
        Cause::Invalidate => matches!(from, Approved | Edited | AwaitingApproval | Failed | Pending) && to == Pending,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NodePayload {
    KeywordSet(KeywordSet),
    /// arXiv ids in retrieval order.
    PaperList(Vec<String>),
    ReviewResult(ReviewResult),
    Report(SynthesisReport),
}

impl NodePayload {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodePayload::KeywordSet(_) => NodeKind::QueryExpansion,
            NodePayload::PaperList(_) => NodeKind::Search,
            NodePayload::ReviewResult(_) => NodeKind::Review,
            NodePayload::Report(_) => NodeKind::Synthesis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum WorkflowError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("node {node} is {status:?}; it must be approved or rerun first")]
    NotPending { node: NodeId, status: NodeStatus },
    #[error("pipeline {0} is complete")]
    PipelineComplete(PipelineId),
    #[error("node {node} is {status:?}, which does not allow this operation")]
    InvalidStatus { node: NodeId, status: NodeStatus },
    #[error("payload for a {found:?} node given to a {expected:?} node")]
    PayloadKindMismatch { expected: NodeKind, found: NodeKind },
    #[error("node {0} has no output")]
    NoOutput(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub status: NodeStatus,
    /// What the node reads: the tree node for keyword expansion, otherwise
    /// the upstream node.
    pub input_ref: String,
    pub output: Option<NodePayload>,
    pub revision: u64,
    pub error: Option<String>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl NodeRecord {
    fn reset(&mut self) {
        self.status = NodeStatus::Pending;
        self.output = None;
        self.error = None;
        self.started_at = None;
        self.finished_at = None;
    }
}

/// Per-kind auto-approval. Deserializes from a bool (all or none) or from a
/// map of kind names.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "AutoApproveRepr")]
pub struct AutoApprove {
    #[serde(default)]
    pub query_expansion: bool,
    #[serde(default)]
    pub search: bool,
    #[serde(default)]
    pub review: bool,
    #[serde(default)]
    pub synthesis: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AutoApproveRepr {
    All(bool),
    Kinds {
        #[serde(default)]
        query_expansion: bool,
        #[serde(default)]
        search: bool,
        #[serde(default)]
        review: bool,
        #[serde(default)]
        synthesis: bool,
    },
}

impl From<AutoApproveRepr> for AutoApprove {
    fn from(r: AutoApproveRepr) -> Self {
        match r {
            AutoApproveRepr::All(b) => AutoApprove::uniform(b),
            AutoApproveRepr::Kinds {
                query_expansion,
                search,
                review,
                synthesis,
            } => AutoApprove {
                query_expansion,
                search,
                review,
                synthesis,
            },
        }
    }
}

impl AutoApprove {
    pub fn uniform(on: bool) -> Self {
        Self {
            query_expansion: on,
            search: on,
            review: on,
            synthesis: on,
        }
    }

    pub fn all() -> Self {
        Self::uniform(true)
    }

    pub fn none() -> Self {
        Self::uniform(false)
    }

    pub fn for_kind(&self, kind: NodeKind) -> bool {
        match kind {
            NodeKind::QueryExpansion => self.query_expansion,
            NodeKind::Search => self.search,
            NodeKind::Review => self.review,
            NodeKind::Synthesis => self.synthesis,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub auto_approve: AutoApprove,
    /// When set, approving a node immediately steps the next one, and so on
    /// until a checkpoint, a failure or completion.
    #[serde(default)]
    pub run_to_next_checkpoint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub pipeline_id: PipelineId,
    pub tree_node_id: TreeNodeId,
    pub query_text: String,
    pub nodes: Vec<NodeRecord>,
    /// First node that is neither Approved nor Edited; 4 when complete.
    pub current_index: usize,
    pub config: PipelineConfig,
}

impl PipelineRun {
    pub fn new(
        pipeline_id: PipelineId,
        tree_node_id: TreeNodeId,
        query_text: &str,
        config: PipelineConfig,
    ) -> Result<Self, WorkflowError> {
        let query_text = query_text.trim();
        if query_text.is_empty() {
            return Err(WorkflowError::EmptyQuery);
        }
        let nodes = NodeKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &kind)| NodeRecord {
                node_id: pipeline_id.node(i),
                kind,
                status: NodeStatus::Pending,
                input_ref: if i == 0 {
                    tree_node_id.to_string()
                } else {
                    pipeline_id.node(i - 1).to_string()
                },
                output: None,
                revision: 0,
                error: None,
                started_at: None,
                finished_at: None,
            })
            .collect();
        Ok(Self {
            pipeline_id,
            tree_node_id,
            query_text: query_text.to_owned(),
            nodes,
            current_index: 0,
            config,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.current_index == self.nodes.len()
    }

    pub fn index_of(&self, node: &NodeId) -> Result<usize, WorkflowError> {
        self.nodes
            .iter()
            .position(|n| &n.node_id == node)
            .ok_or_else(|| WorkflowError::UnknownNode(node.clone()))
    }

    pub fn node(&self, kind: NodeKind) -> &NodeRecord {
        &self.nodes[kind.index()]
    }

    /// The approved or edited output of `kind`, if any.
    pub fn settled_output(&self, kind: NodeKind) -> Option<&NodePayload> {
        let n = self.node(kind);
        n.status.is_settled().then_some(n.output.as_ref()).flatten()
    }

    pub fn running(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.status == NodeStatus::Running)
    }

    fn recompute_index(&mut self) {
        self.current_index = self
            .nodes
            .iter()
            .position(|n| !n.status.is_settled())
            .unwrap_or(self.nodes.len());
    }

    fn invalidate_after(&mut self, index: usize) {
        for n in &mut self.nodes[index + 1..] {
            n.reset();
        }
    }

    fn invalid(&self, index: usize) -> WorkflowError {
        WorkflowError::InvalidStatus {
            node: self.nodes[index].node_id.clone(),
            status: self.nodes[index].status,
        }
    }

    /// The node `step` would execute.
    pub fn check_step(&self) -> Result<usize, WorkflowError> {
        if self.is_complete() {
            return Err(WorkflowError::PipelineComplete(self.pipeline_id.clone()));
        }
        let i = self.current_index;
        match self.nodes[i].status {
            NodeStatus::Pending => Ok(i),
            status => Err(WorkflowError::NotPending {
                node: self.nodes[i].node_id.clone(),
                status,
            }),
        }
    }

    pub fn check_rerun(&self, index: usize) -> Result<(), WorkflowError> {
        match self.nodes[index].status {
            NodeStatus::AwaitingApproval | NodeStatus::Approved | NodeStatus::Edited | NodeStatus::Failed => Ok(()),
            _ => Err(self.invalid(index)),
        }
    }

    /// Marks node `index` Running. A rerun bumps the revision and resets every
    /// downstream node first.
    pub fn start(&mut self, index: usize, rerun: bool, at: DateTime<Utc>) -> Result<(), WorkflowError> {
        if rerun {
            self.check_rerun(index)?;
        } else if self.check_step()? != index {
            return Err(self.invalid(index));
        }
        if rerun {
            self.nodes[index].revision += 1;
            self.invalidate_after(index);
        }
        let n = &mut self.nodes[index];
        n.status = NodeStatus::Running;
        n.output = None;
        n.error = None;
        n.started_at = Some(at);
        n.finished_at = None;
        self.recompute_index();
        Ok(())
    }

    /// Completes the running node `index`.
    pub fn finish(
        &mut self,
        index: usize,
        outcome: Result<NodePayload, String>,
        at: DateTime<Utc>,
    ) -> Result<(), WorkflowError> {
        if self.nodes[index].status != NodeStatus::Running {
            return Err(self.invalid(index));
        }
        if let Ok(p) = &outcome {
            let expected = self.nodes[index].kind;
            if p.kind() != expected {
                return Err(WorkflowError::PayloadKindMismatch {
                    expected,
                    found: p.kind(),
                });
            }
        }
        let n = &mut self.nodes[index];
        n.finished_at = Some(at);
        match outcome {
            Ok(payload) => {
                n.status = NodeStatus::AwaitingApproval;
                n.output = Some(payload);
            }
            Err(message) => {
                n.status = NodeStatus::Failed;
                n.error = Some(message);
            }
        }
        self.recompute_index();
        Ok(())
    }

    pub fn check_approve(&self, index: usize) -> Result<(), WorkflowError> {
        match self.nodes[index].status {
            NodeStatus::AwaitingApproval => Ok(()),
            _ => Err(self.invalid(index)),
        }
    }

    pub fn approve(&mut self, index: usize) -> Result<(), WorkflowError> {
        self.check_approve(index)?;
        self.nodes[index].status = NodeStatus::Approved;
        self.recompute_index();
        Ok(())
    }

    pub fn check_edit(&self, index: usize, payload: &NodePayload) -> Result<(), WorkflowError> {
        match self.nodes[index].status {
            NodeStatus::AwaitingApproval | NodeStatus::Approved | NodeStatus::Edited => {}
            _ => return Err(self.invalid(index)),
        }
        let expected = self.nodes[index].kind;
        if payload.kind() != expected {
            return Err(WorkflowError::PayloadKindMismatch {
                expected,
                found: payload.kind(),
            });
        }
        Ok(())
    }

    pub fn edit(&mut self, index: usize, payload: NodePayload) -> Result<(), WorkflowError> {
        self.check_edit(index, &payload)?;
        let n = &mut self.nodes[index];
        n.output = Some(payload);
        n.status = NodeStatus::Edited;
        n.revision += 1;
        self.invalidate_after(index);
        self.recompute_index();
        Ok(())
    }

    /// Structural invariants of a run at rest or mid-step.
    pub fn check(&self) -> Result<(), String> {
        if self.nodes.len() != 4 || self.nodes.iter().zip(NodeKind::ALL).any(|(n, k)| n.kind != k) {
            return Err("pipeline must hold the four kinds in order".into());
        }
        if self.nodes.iter().filter(|n| n.status == NodeStatus::Running).count() > 1 {
            return Err("more than one running node".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.output.is_some() != n.status.has_output() {
                return Err(format!("{}: output presence disagrees with {:?}", n.node_id, n.status));
            }
            if let Some(p) = &n.output {
                if p.kind() != n.kind {
                    return Err(format!("{}: payload kind {:?}", n.node_id, p.kind()));
                }
            }
            if i > 0 && n.status != NodeStatus::Pending && !self.nodes[i - 1].status.is_settled() {
                return Err(format!("{} left Pending before its upstream settled", n.node_id));
            }
        }
        let expected = self.nodes.iter().position(|n| !n.status.is_settled()).unwrap_or(4);
        if self.current_index != expected {
            return Err(format!("current_index {} but expected {expected}", self.current_index));
        }
        Ok(())
    }
}
