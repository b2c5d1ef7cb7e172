//! Core of litscope: an interactive, agent-assisted literature review
//! workflow over arXiv.
//!
//! Start with [`session::Session`]. It owns pipelines of the four workflow
//! nodes, the exploration tree, the paper corpus and the semantic
//! projection. Every change it makes is recorded as an [`session::Event`].

pub mod clock;
pub mod gateway;
pub mod ids;
pub mod ingest;
pub mod keywords;
pub mod prompt;
pub mod review;
pub mod session;
pub mod space;
pub mod tree;
pub mod workflow;

pub use clock::{Clock, ManualClock, SystemClock};
pub use gateway::{Gateway, GatewayError, MockChat, MockEmbedder, ProviderConfig, Templates};
pub use ids::{ChunkId, NodeId, PipelineId, SessionId, TreeNodeId};
pub use ingest::{ArxivClient, Corpus, IngestError, PaperRecord, SearchSpec, SortOrder};
pub use keywords::KeywordSet;
pub use review::{Chunk, DisplayState, ReviewResult, ReviewVerdict, SynthesisReport, UserState};
pub use session::{
    ErrorClass, Event, EventBody, NewPipeline, Services, Session, SessionConfig, SessionError, SessionState, SessionStore,
};
pub use space::{EmbeddingRecord, Owner, Projection, ProjectionConfig};
pub use tree::{semantic_delta, semantic_offset, DirectionProposal, ExplorationTree, KeywordDelta, QueryTreeNode};
pub use workflow::{AutoApprove, NodeKind, NodePayload, NodeRecord, NodeStatus, PipelineConfig, PipelineRun};
