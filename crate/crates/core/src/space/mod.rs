//! Embedding storage, cosine similarity and the 2D similarity projection.

mod pca;
mod quality;
mod umap;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::EmbeddingVector;
use crate::ids::TreeNodeId;

pub use pca::principal_coordinates;
pub use quality::trustworthiness;
pub use umap::fit_curve;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SpaceError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("no embeddings to project")]
    EmptyInput,
    #[error("size mismatch: {original} original vs {projected} projected points")]
    SizeMismatch { original: usize, projected: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid projection config: {0}")]
    InvalidConfig(String),
    #[error("query {0} is not part of the latest projection")]
    NotProjected(TreeNodeId),
}

/// Who an embedding belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Paper(String),
    Query(TreeNodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub owner: Owner,
    pub vector: EmbeddingVector,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two raw vectors, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SpaceError> {
    if a.len() != b.len() {
        return Err(SpaceError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(SpaceError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SpaceError> {
    cosine(&a.values, &b.values)
}

/// One embedding per owner; every vector shares the dimension of the first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<EmbeddingRecord>", into = "Vec<EmbeddingRecord>")]
pub struct EmbeddingStore {
    by_owner: BTreeMap<Owner, EmbeddingVector>,
}

impl From<Vec<EmbeddingRecord>> for EmbeddingStore {
    fn from(records: Vec<EmbeddingRecord>) -> Self {
        Self {
            by_owner: records.into_iter().map(|r| (r.owner, r.vector)).collect(),
        }
    }
}

impl From<EmbeddingStore> for Vec<EmbeddingRecord> {
    fn from(store: EmbeddingStore) -> Self {
        store.records()
    }
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.by_owner.values().next().map(EmbeddingVector::dim)
    }

    pub fn get(&self, owner: &Owner) -> Option<&EmbeddingVector> {
        self.by_owner.get(owner)
    }

    pub fn contains(&self, owner: &Owner) -> bool {
        self.by_owner.contains_key(owner)
    }

    pub fn len(&self) -> usize {
        self.by_owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_owner.is_empty()
    }

    pub fn check(&self, vector: &EmbeddingVector) -> Result<(), SpaceError> {
        match self.dim() {
            Some(d) if d != vector.dim() => Err(SpaceError::DimensionMismatch {
                expected: d,
                found: vector.dim(),
            }),
            _ => Ok(()),
        }
    }

    /// Inserts or replaces the owner's embedding.
    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), SpaceError> {
        if self.by_owner.len() == 1 && self.by_owner.contains_key(&record.owner) {
            self.by_owner.insert(record.owner, record.vector);
            return Ok(());
        }
        self.check(&record.vector)?;
        self.by_owner.insert(record.owner, record.vector);
        Ok(())
    }

    /// Records in owner order (papers by id, then queries by node id).
    pub fn records(&self) -> Vec<EmbeddingRecord> {
        self.by_owner
            .iter()
            .map(|(owner, vector)| EmbeddingRecord {
                owner: owner.clone(),
                vector: vector.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            epochs: 200,
            seed: 42,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), SpaceError> {
        if self.n_neighbors < 2 {
            return Err(SpaceError::InvalidConfig("n_neighbors must be at least 2".into()));
        }
        if !(self.min_dist > 0.0 && self.min_dist <= 1.0) {
            return Err(SpaceError::InvalidConfig("min_dist must lie in (0, 1]".into()));
        }
        if self.epochs == 0 {
            return Err(SpaceError::InvalidConfig("epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub owner: Owner,
    pub x: f64,
    pub y: f64,
    pub iteration_tags: BTreeSet<TreeNodeId>,
    /// Query points are drawn as the centroid glyph.
    pub centroid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Umap,
    Principal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub method: ProjectionMethod,
    pub config: ProjectionConfig,
    pub points: Vec<ProjectionPoint>,
}

impl Projection {
    pub fn centroid(&self, node: &TreeNodeId) -> Result<&ProjectionPoint, SpaceError> {
        let owner = Owner::Query(node.clone());
        self.points
            .iter()
            .find(|p| p.owner == owner)
            .ok_or_else(|| SpaceError::NotProjected(node.clone()))
    }

    /// Points tagged with any of `iterations`; every point when the filter
    /// is empty.
    pub fn filtered(&self, iterations: &BTreeSet<TreeNodeId>) -> Vec<&ProjectionPoint> {
        self.points
            .iter()
            .filter(|p| iterations.is_empty() || !p.iteration_tags.is_disjoint(iterations))
            .collect()
    }
}

/// Projects embeddings to 2D. Uses the neighbor-embedding layout when there
/// are at least `n_neighbors + 2` points and principal coordinates otherwise.
/// Iteration tags are left for the caller to fill, except that each query
/// point is tagged with its own node.
pub fn project(records: &[EmbeddingRecord], config: &ProjectionConfig) -> Result<Projection, SpaceError> {
    config.validate()?;
    let first = records.first().ok_or(SpaceError::EmptyInput)?;
    let dim = first.vector.dim();
    if let Some(bad) = records.iter().find(|r| r.vector.dim() != dim) {
        return Err(SpaceError::DimensionMismatch {
            expected: dim,
            found: bad.vector.dim(),
        });
    }
    let data: Vec<&[f64]> = records.iter().map(|r| r.vector.values.as_slice()).collect();
    let (method, coords) = if records.len() < config.n_neighbors + 2 {
        (ProjectionMethod::Principal, principal_coordinates(&data))
    } else {
        (ProjectionMethod::Umap, umap::layout(&data, config))
    };
    let points = records
        .iter()
        .zip(coords)
        .map(|(r, [x, y])| {
            let (tags, centroid) = match &r.owner {
                Owner::Query(id) => ([id.clone()].into(), true),
                Owner::Paper(_) => (BTreeSet::new(), false),
            };
            ProjectionPoint {
                owner: r.owner.clone(),
                x,
                y,
                iteration_tags: tags,
                centroid,
            }
        })
        .collect::<Vec<_>>();
    debug_assert!(points.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
    Ok(Projection {
        method,
        config: config.clone(),
        points,
    })
}
