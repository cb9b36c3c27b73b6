//! Maximum mean discrepancy between embedding sets.

use super::{EmbeddingSet, MetricError};

/// Squared distance between mean embeddings — the biased, linear-kernel MMD.
/// This is the normative form; it equals the kernel double-sum estimator with
/// a dot-product kernel.
pub fn protein_mmd(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<f64, MetricError> {
    if x.dim() != y.dim() {
        return Err(MetricError::DimensionMismatch(x.dim(), y.dim()));
    }
    let (mx, my) = (x.mean(), y.mean());
    Ok(mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Biased RBF-kernel MMD with the median heuristic for the bandwidth
/// (σ = median pairwise distance over the pooled sample). Provided for
/// sensitivity studies; the linear-kernel [`protein_mmd`] is the default.
pub fn protein_mmd_rbf(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<f64, MetricError> {
    if x.dim() != y.dim() {
        return Err(MetricError::DimensionMismatch(x.dim(), y.dim()));
    }
    let pooled: Vec<&[f64]> = x.rows().iter().chain(y.rows().iter()).map(|r| r.as_slice()).collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let median = if dists.is_empty() {
        1.0
    } else if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    let sigma2 = (median * median).max(1e-12);
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * sigma2)).exp();

    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    for a in x.rows() {
        for b in x.rows() {
            kxx += k(a, b);
        }
    }
    let mut kyy = 0.0;
    for a in y.rows() {
        for b in y.rows() {
            kyy += k(a, b);
        }
    }
    let mut kxy = 0.0;
    for a in x.rows() {
        for b in y.rows() {
            kxy += k(a, b);
        }
    }
    Ok((kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m)).max(0.0))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EmbeddingSource;
    use crate::rng::{standard_normal, stream_rng};
    use approx::assert_abs_diff_eq;

    fn set(rows: Vec<Vec<f64>>) -> EmbeddingSet {
        EmbeddingSet::new(rows, EmbeddingSource::Raw).unwrap()
    }

    /// Independent oracle: the biased kernel double-sum with a dot-product
    /// kernel.
    fn linear_double_sum(x: &EmbeddingSet, y: &EmbeddingSet) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let (n, m) = (x.len() as f64, y.len() as f64);
        let mut kxx = 0.0;
        for a in x.rows() {
            for b in x.rows() {
                kxx += dot(a, b);
            }
        }
        let mut kyy = 0.0;
        for a in y.rows() {
            for b in y.rows() {
                kyy += dot(a, b);
            }
        }
        let mut kxy = 0.0;
        for a in x.rows() {
            for b in y.rows() {
                kxy += dot(a, b);
            }
        }
        kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m)
    }

    #[test]
    fn identical_sets_give_zero() {
        let x = set(vec![vec![1.0, -2.0], vec![0.5, 3.0]]);
        assert_abs_diff_eq!(protein_mmd(&x, &x).unwrap(), 0.0);
        // As multisets: order does not matter.
        let y = set(vec![vec![0.5, 3.0], vec![1.0, -2.0]]);
        assert_abs_diff_eq!(protein_mmd(&x, &y).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_hand_case() {
        // X = {-1, 1}, Y = {1.5, 2.5} → ‖0 − 2‖² = 4.
        let x = set(vec![vec![-1.0], vec![1.0]]);
        let y = set(vec![vec![1.5], vec![2.5]]);
        assert_abs_diff_eq!(protein_mmd(&x, &y).unwrap(), 4.0);
    }

    #[test]
    fn matches_kernel_double_sum_on_random_sets() {
        let mut rng = stream_rng(99, 0);
        for _ in 0..50 {
            use rand::Rng;
            let n = rng.random_range(1..=8);
            let m = rng.random_range(1..=8);
            let d = rng.random_range(1..=6);
            let mk = |count: usize, rng: &mut crate::rng::PortableRng| {
                set((0..count)
                    .map(|_| (0..d).map(|_| standard_normal(rng)).collect())
                    .collect())
            };
            let x = mk(n, &mut rng);
            let y = mk(m, &mut rng);
            let fast = protein_mmd(&x, &y).unwrap();
            let slow = linear_double_sum(&x, &y);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
            assert!(fast >= 0.0);
            // Symmetry.
            assert_abs_diff_eq!(fast, protein_mmd(&y, &x).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = set(vec![vec![1.0, 2.0]]);
        let y = set(vec![vec![1.0]]);
        assert!(matches!(protein_mmd(&x, &y), Err(MetricError::DimensionMismatch(2, 1))));
    }

    #[test]
    fn rbf_variant_is_zero_on_identical_and_positive_on_disjoint() {
        let x = set(vec![vec![0.0], vec![1.0]]);
        let far = set(vec![vec![10.0], vec![11.0]]);
        assert!(protein_mmd_rbf(&x, &x).unwrap() < 1e-12);
        assert!(protein_mmd_rbf(&x, &far).unwrap() > 0.1);
    }
}
