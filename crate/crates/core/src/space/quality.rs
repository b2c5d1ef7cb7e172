use super::{EmbeddingRecord, ProjectionPoint, SpaceError};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neighbor order of point `i` (excluding itself), ties broken by index.
fn neighbor_order(n: usize, i: usize, dist: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(j), j)).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().map(|(_, j)| j).collect()
}

/// Rank-based trustworthiness of a 2D projection with Euclidean distances
/// in both spaces.
///
/// Each 2D k-neighbor whose original-space rank r exceeds k costs r - k. The
/// total is divided by the largest achievable cost, which reduces to the
/// usual `n k (2n - 3k - 1) / 2` whenever k < n / 2.
pub fn trustworthiness(
    original: &[EmbeddingRecord],
    projected: &[ProjectionPoint],
    k: usize,
) -> Result<f64, SpaceError> {
    let n = original.len();
    if n != projected.len() {
        return Err(SpaceError::SizeMismatch {
            original: n,
            projected: projected.len(),
        });
    }
    if k == 0 || n < k + 2 {
        return Err(SpaceError::TooFewPoints { needed: k + 2, got: n });
    }
    let low: Vec<[f64; 2]> = projected.iter().map(|p| [p.x, p.y]).collect();
    let mut penalty = 0.0;
    for i in 0..n {
        let high_order = neighbor_order(n, i, |j| sq_dist(&original[i].vector.values, &original[j].vector.values));
        let mut rank = vec![0usize; n];
        for (r, &j) in high_order.iter().enumerate() {
            rank[j] = r + 1;
        }
        let low_order = neighbor_order(n, i, |j| sq_dist(&low[i], &low[j]));
        penalty += low_order[..k]
            .iter()
            .map(|&j| rank[j].saturating_sub(k) as f64)
            .sum::<f64>();
    }
    let worst_per_point: f64 = (0..k).map(|m| (n - 1 - m).saturating_sub(k) as f64).sum();
    let worst = worst_per_point * n as f64;
    Ok(if worst == 0.0 { 1.0 } else { 1.0 - penalty / worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::EmbeddingVector;
    use crate::space::Owner;
    use std::collections::BTreeSet;

    fn data(pts: &[[f64; 2]]) -> (Vec<EmbeddingRecord>, Vec<ProjectionPoint>) {
        let recs = pts
            .iter()
            .enumerate()
            .map(|(i, p)| EmbeddingRecord {
                owner: Owner::Paper(format!("p{i}")),
                vector: EmbeddingVector::new(p.to_vec(), "m"),
            })
            .collect();
        let proj = pts
            .iter()
            .enumerate()
            .map(|(i, p)| ProjectionPoint {
                owner: Owner::Paper(format!("p{i}")),
                x: p[0],
                y: p[1],
                iteration_tags: BTreeSet::new(),
                centroid: false,
            })
            .collect();
        (recs, proj)
    }

    #[test]
    fn isometry_scores_one() {
        let pts: Vec<[f64; 2]> = (0..30).map(|i| [(i as f64 * 1.3).sin() * i as f64, (i as f64 * 0.4).cos()]).collect();
        let (recs, mut proj) = data(&pts);
        let (c, s) = (0.6f64, 0.8f64);
        for p in proj.iter_mut() {
            let (x, y) = (p.x, p.y);
            p.x = c * x - s * y + 7.0;
            p.y = s * x + c * y - 3.0;
        }
        for k in [1, 5, 10, 20, 28] {
            assert!((trustworthiness(&recs, &proj, k).unwrap() - 1.0).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn size_errors() {
        let (recs, proj) = data(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(
            trustworthiness(&recs, &proj, 2),
            Err(SpaceError::TooFewPoints { needed: 4, got: 3 })
        );
        assert!(matches!(
            trustworthiness(&recs, &proj[..2], 1),
            Err(SpaceError::SizeMismatch { original: 3, projected: 2 })
        ));
    }
}
