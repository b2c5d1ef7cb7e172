use nalgebra::{DMatrix, SymmetricEigen};

/// Coordinates along the top two principal directions of the centered data.
///
/// Computed from the eigendecomposition of the n×n Gram matrix, so the cost
/// does not depend on the embedding dimension beyond forming the matrix. Each
/// axis is oriented so that its largest-magnitude coordinate is positive
/// (earliest point wins ties).
pub fn principal_coordinates(data: &[&[f64]]) -> Vec<[f64; 2]> {
    let n = data.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![[0.0, 0.0]];
    }
    let dim = data[0].len();
    let mut mean = vec![0.0; dim];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    // eigenvalues at rounding level are treated as exact zeros
    let floor = eig.eigenvalues[order[0]].abs() * 1e-12;
    let mut axes = [vec![0.0; n], vec![0.0; n]];
    for (axis, &k) in axes.iter_mut().zip(order.iter()) {
        let lambda = eig.eigenvalues[k];
        let scale = if lambda > floor { lambda.sqrt() } else { 0.0 };
        for i in 0..n {
            axis[i] = eig.eigenvectors[(i, k)] * scale;
        }
        orient(axis);
    }
    (0..n).map(|i| [axes[0][i], axes[1][i]]).collect()
}

fn orient(axis: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() + 1e-12 {
            best = i;
        }
    }
    if axis[best] < 0.0 {
        axis.iter_mut().for_each(|v| *v = -*v);
    }
    // -0.0 prints differently from 0.0 in snapshots
    axis.iter_mut().for_each(|v| {
        if *v == 0.0 {
            *v = 0.0;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_straddle_the_origin() {
        let a = [0.0, 0.0, 0.0];
        let b = [3.0, 4.0, 0.0];
        let c = principal_coordinates(&[&a, &b]);
        assert!((c[0][0] - 2.5).abs() < 1e-12, "{c:?}");
        assert!((c[1][0] + 2.5).abs() < 1e-12);
        assert_eq!(c[0][1], 0.0);
        assert_eq!(c[1][1], 0.0);
    }

    #[test]
    fn collinear_points_keep_their_spacing() {
        let rows: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let c = principal_coordinates(&refs);
        let step = 5f64.sqrt();
        for w in c.windows(2) {
            assert!(((w[1][0] - w[0][0]).abs() - step).abs() < 1e-9);
            assert!(w[0][1].abs() < 1e-9);
        }
    }

    #[test]
    fn distances_preserved_for_planar_data() {
        let rows = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 2.0, 1.0], [3.0, 1.0, 1.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let c = principal_coordinates(&refs);
        for i in 0..4 {
            for j in 0..4 {
                let hd = ((0..3).map(|d| (rows[i][d] - rows[j][d]).powi(2)).sum::<f64>()).sqrt();
                let ld = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
                assert!((hd - ld).abs() < 1e-9);
            }
        }
    }
}
