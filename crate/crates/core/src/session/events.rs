use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, PipelineId, SessionId, TreeNodeId};
use crate::ingest::PaperRecord;
use crate::review::UserState;
use crate::space::EmbeddingRecord;
use crate::tree::DirectionProposal;
use crate::workflow::{NodePayload, PipelineConfig};

use super::SessionConfig;

/// One entry of the session log. On the wire: `{"seq", "timestamp", "kind",
/// "payload"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Where a new pipeline sits in the exploration tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Attach {
    Root,
    Child { parent: TreeNodeId },
    /// Backs an existing proposed node.
    Materialize,
}

/// Provider results a node produced besides its payload. Recorded so that
/// replay never calls a provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    #[serde(default)]
    pub papers: Vec<PaperRecord>,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingRecord>,
}

impl Effects {
    pub fn is_empty(&self) -> bool {
        self.papers.is_empty() && self.embeddings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NodeOutcome {
    Succeeded {
        payload: NodePayload,
        #[serde(default)]
        effects: Effects,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedNode {
    pub node_id: TreeNodeId,
    pub proposal: DirectionProposal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionCreated {
        session_id: SessionId,
        config: SessionConfig,
    },
    PipelineCreated {
        pipeline_id: PipelineId,
        tree_node_id: TreeNodeId,
        query_text: String,
        config: PipelineConfig,
        attach: Attach,
    },
    NodeStarted {
        pipeline_id: PipelineId,
        node_id: NodeId,
        rerun: bool,
    },
    NodeFinished {
        pipeline_id: PipelineId,
        node_id: NodeId,
        outcome: NodeOutcome,
    },
    NodeApproved {
        pipeline_id: PipelineId,
        node_id: NodeId,
        automatic: bool,
    },
    NodeEdited {
        pipeline_id: PipelineId,
        node_id: NodeId,
        payload: NodePayload,
    },
    DirectionsProposed {
        parent: TreeNodeId,
        proposals: Vec<ProposedNode>,
    },
    UserStateSet {
        arxiv_id: String,
        state: UserState,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::SessionCreated { .. } => "session_created",
            EventBody::PipelineCreated { .. } => "pipeline_created",
            EventBody::NodeStarted { .. } => "node_started",
            EventBody::NodeFinished { .. } => "node_finished",
            EventBody::NodeApproved { .. } => "node_approved",
            EventBody::NodeEdited { .. } => "node_edited",
            EventBody::DirectionsProposed { .. } => "directions_proposed",
            EventBody::UserStateSet { .. } => "user_state_set",
        }
    }
}
