//! Identifier newtypes.
//!
//! Identifiers are plain strings on the wire. Everything scoped to a session
//! carries the session id as a dot-separated prefix (`s1.p2`, `s1.t3`,
//! `s1.p2.n0`) so a bare pipeline or tree-node id is enough to route a request
//! to its owning session.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(SessionId);
string_id!(PipelineId);
string_id!(NodeId);
string_id!(TreeNodeId);
string_id!(
    /// Chunk ids are derived from content: `<arxiv_id>#<start>-<end>`.
    ChunkId
);

impl SessionId {
    pub fn pipeline(&self, n: u64) -> PipelineId {
        PipelineId(format!("{}.p{}", self.0, n))
    }

    pub fn tree_node(&self, n: u64) -> TreeNodeId {
        TreeNodeId(format!("{}.t{}", self.0, n))
    }
}

impl PipelineId {
    pub fn node(&self, index: usize) -> NodeId {
        NodeId(format!("{}.n{}", self.0, index))
    }
}

/// Extracts the owning session from a scoped id such as `s1.p2`.
pub fn session_of(scoped: &str) -> Option<SessionId> {
    let (sid, rest) = scoped.split_once('.')?;
    if sid.is_empty() || rest.is_empty() {
        return None;
    }
    Some(SessionId(sid.to_owned()))
}

impl ChunkId {
    pub fn for_span(arxiv_id: &str, start: usize, end: usize) -> Self {
        Self(format!("{arxiv_id}#{start}-{end}"))
    }
}
