//! Uniform manifold approximation layout.
//!
//! Exact kNN on cosine distance, per-point smooth distance normalization,
//! fuzzy-union symmetrization, then stochastic optimization of the fuzzy-set
//! cross-entropy with negative sampling. Everything runs sequentially from a
//! seeded ChaCha stream, so a given input and config always yield the same
//! coordinates.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pca::principal_coordinates;
use super::{norm, ProjectionConfig};

const SPREAD: f64 = 1.0;
const NEGATIVE_SAMPLE_RATE: usize = 5;
const REPULSION: f64 = 1.0;
const INITIAL_ALPHA: f64 = 1.0;
const GRAD_CLIP: f64 = 4.0;
const SMOOTH_ITERS: usize = 64;
const SMOOTH_TOL: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;
const INIT_SCALE: f64 = 10.0;

fn cosine_distance(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    (1.0 - c).max(0.0)
}

/// Fits `1 / (1 + a d^(2b))` to the target membership curve for `min_dist`
/// and unit spread by Levenberg-Marquardt least squares.
pub fn fit_curve(min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * SPREAD * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / SPREAD).exp() })
        .collect();
    let residuals = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (f - y).powi(2)
            })
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = residuals(a, b);
    for _ in 0..500 {
        // J^T J and J^T r over the sample points
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let f = 1.0 / den;
            let r = f - y;
            let da = -p / (den * den);
            let db = -a * p * 2.0 * x.ln() / (den * den);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let (m00, m11) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
        let det = m00 * m11 - jab * jab;
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = -(m11 * ga - jab * gb) / det;
        let step_b = -(m00 * gb - jab * ga) / det;
        let (na, nb) = (a + step_a, b + step_b);
        if na <= 0.0 || nb <= 0.0 {
            lambda *= 10.0;
            continue;
        }
        let new_cost = residuals(na, nb);
        if new_cost < cost {
            let improvement = cost - new_cost;
            a = na;
            b = nb;
            cost = new_cost;
            lambda = (lambda / 10.0).max(1e-12);
            if improvement < 1e-14 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

struct Knn {
    indices: Vec<Vec<usize>>,
    distances: Vec<Vec<f64>>,
}

fn knn(data: &[&[f64]], k: usize) -> Knn {
    let n = data.len();
    let norms: Vec<f64> = data.iter().map(|r| norm(r)).collect();
    let mut indices = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (cosine_distance(data[i], data[j], norms[i], norms[j]), j))
            .collect();
        row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        row.truncate(k);
        distances.push(row.iter().map(|r| r.0).collect());
        indices.push(row.iter().map(|r| r.1).collect());
    }
    Knn { indices, distances }
}

/// Per-point (rho, sigma): rho is the distance to the nearest non-identical
/// neighbor; sigma solves sum exp(-(d - rho)/sigma) = log2(k).
fn smooth_distances(dists: &[Vec<f64>], k: usize) -> Vec<(f64, f64)> {
    let target = (k as f64).log2();
    let mean_all = {
        let total: f64 = dists.iter().flatten().sum();
        let count = dists.iter().map(Vec::len).sum::<usize>().max(1);
        total / count as f64
    };
    dists
        .iter()
        .map(|row| {
            let rho = row.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
            let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
            for _ in 0..SMOOTH_ITERS {
                let psum: f64 = row.iter().map(|&d| (-(d - rho).max(0.0) / mid).exp()).sum();
                if (psum - target).abs() < SMOOTH_TOL {
                    break;
                }
                if psum > target {
                    hi = mid;
                    mid = (lo + hi) / 2.0;
                } else {
                    lo = mid;
                    mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
                }
            }
            let mean_row = row.iter().sum::<f64>() / row.len().max(1) as f64;
            let floor = MIN_K_DIST_SCALE * if rho > 0.0 { mean_row } else { mean_all };
            (rho, mid.max(floor))
        })
        .collect()
}

/// Symmetric fuzzy graph as directed edge list (both directions present).
fn fuzzy_graph(knn: &Knn, smooth: &[(f64, f64)]) -> Vec<(usize, usize, f64)> {
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, (idx, dst)) in knn.indices.iter().zip(&knn.distances).enumerate() {
        let (rho, sigma) = smooth[i];
        for (&j, &d) in idx.iter().zip(dst) {
            let w = if d <= rho { 1.0 } else { (-(d - rho) / sigma).exp() };
            directed.insert((i, j), w);
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let wt = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let v = w + wt - w * wt;
        sym.insert((i, j), v);
        sym.insert((j, i), v);
    }
    sym.into_iter().filter(|(_, w)| *w > 0.0).map(|((i, j), w)| (i, j, w)).collect()
}

fn initial_layout(data: &[&[f64]], rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut coords = principal_coordinates(data);
    for axis in 0..2 {
        let lo = coords.iter().map(|c| c[axis]).fold(f64::INFINITY, f64::min);
        let hi = coords.iter().map(|c| c[axis]).fold(f64::NEG_INFINITY, f64::max);
        let span = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
        for c in coords.iter_mut() {
            c[axis] = INIT_SCALE * (c[axis] - lo) / span + rng.random_range(-1e-4..1e-4);
        }
    }
    coords
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

pub(super) fn layout(data: &[&[f64]], config: &ProjectionConfig) -> Vec<[f64; 2]> {
    let n = data.len();
    let k = config.n_neighbors.min(n - 1);
    let knn = knn(data, k);
    let smooth = smooth_distances(&knn.distances, k);
    let mut edges = fuzzy_graph(&knn, &smooth);
    let (a, b) = fit_curve(config.min_dist);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = initial_layout(data, &mut rng);

    let epochs = config.epochs as f64;
    let w_max = edges.iter().map(|e| e.2).fold(0.0, f64::max);
    edges.retain(|e| e.2 >= w_max / epochs);
    let per_sample: Vec<f64> = edges.iter().map(|e| w_max / e.2).collect();
    let per_negative: Vec<f64> = per_sample.iter().map(|p| p / NEGATIVE_SAMPLE_RATE as f64).collect();
    let mut next_sample = per_sample.clone();
    let mut next_negative = per_negative.clone();

    let mut alpha = INITIAL_ALPHA;
    for epoch in 0..config.epochs {
        let e = epoch as f64;
        for (ei, &(i, j, _)) in edges.iter().enumerate() {
            if next_sample[ei] > e {
                continue;
            }
            let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for d in 0..2 {
                let g = clip(coeff * (y[i][d] - y[j][d]));
                y[i][d] += g * alpha;
                y[j][d] -= g * alpha;
            }
            next_sample[ei] += per_sample[ei];

            let n_neg = ((e - next_negative[ei]) / per_negative[ei]).max(0.0) as usize;
            for _ in 0..n_neg {
                let other = rng.random_range(0..n);
                if other == i {
                    continue;
                }
                let d2 = (y[i][0] - y[other][0]).powi(2) + (y[i][1] - y[other][1]).powi(2);
                let coeff = if d2 > 0.0 {
                    2.0 * REPULSION * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                } else {
                    0.0
                };
                for d in 0..2 {
                    let g = if coeff > 0.0 { clip(coeff * (y[i][d] - y[other][d])) } else { GRAD_CLIP };
                    y[i][d] += g * alpha;
                }
            }
            next_negative[ei] += n_neg as f64 * per_negative[ei];
        }
        alpha = INITIAL_ALPHA * (1.0 - (epoch + 1) as f64 / epochs);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_fit_matches_reference_parameters() {
        // reference values of the standard implementation for min_dist=0.1, spread=1
        let (a, b) = fit_curve(0.1);
        assert!((a - 1.577).abs() < 0.02, "a = {a}");
        assert!((b - 0.895).abs() < 0.01, "b = {b}");
    }

    #[test]
    fn smooth_distances_hit_target_sum() {
        let rows = vec![vec![0.1, 0.2, 0.4, 0.8], vec![0.05, 0.3, 0.35, 0.9]];
        let k = 4;
        for (row, (rho, sigma)) in rows.iter().zip(smooth_distances(&rows, k)) {
            let s: f64 = row.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum();
            assert!((s - 2.0).abs() < 1e-4, "{s}");
        }
    }

    #[test]
    fn fuzzy_graph_is_symmetric_with_unit_bounded_weights() {
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64).cos() + 2.0, (i as f64 * 0.7).sin() + 2.0, 1.0])
            .collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let nn = knn(&refs, 4);
        let g = fuzzy_graph(&nn, &smooth_distances(&nn.distances, 4));
        let map: BTreeMap<(usize, usize), f64> = g.iter().map(|&(i, j, w)| ((i, j), w)).collect();
        for (&(i, j), &w) in &map {
            assert!(w > 0.0 && w <= 1.0);
            assert_eq!(map.get(&(j, i)), Some(&w));
        }
    }
}
