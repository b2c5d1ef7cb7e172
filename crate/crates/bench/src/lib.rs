//! Input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use litscope_core::gateway::EmbeddingVector;
use litscope_core::{EmbeddingRecord, Owner};

/// `n` random unit-scale embeddings of dimension `dim`.
pub fn random_records(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| EmbeddingRecord {
            owner: Owner::Paper(format!("b{i:04}")),
            vector: EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(), "bench"),
        })
        .collect()
}

/// An Atom feed with `n` synthetic entries.
pub fn atom_feed(n: usize) -> String {
    let mut s = String::from(r#"<?xml version="1.0" encoding="UTF-8"?><feed xmlns="http://www.w3.org/2005/Atom">"#);
    for i in 0..n {
        s.push_str(&format!(
            "<entry><id>http://arxiv.org/abs/2401.{i:05}v1</id><updated>2024-01-02T00:00:00Z</updated>\
             <published>2024-01-01T00:00:00Z</published><title>Paper {i}</title>\
             <summary>Abstract number {i} about visual analytics and model interpretability.</summary>\
             <author><name>Author {i}</name></author>\
             <arxiv:primary_category xmlns:arxiv=\"http://arxiv.org/schemas/atom\" term=\"cs.HC\"/></entry>"
        ));
    }
    s.push_str("</feed>");
    s
}
