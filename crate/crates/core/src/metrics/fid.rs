//! Fréchet distance between Gaussian fits of two embedding sets.

use nalgebra::{DMatrix, DVector};

use super::{EmbeddingSet, MetricError};

/// Gaussian moments of an embedding set (unbiased covariance).
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    /// Fits mean and unbiased covariance; needs at least two samples.
    pub fn fit(set: &EmbeddingSet) -> Result<Self, MetricError> {
        let n = set.len();
        if n < 2 {
            return Err(MetricError::TooFewSamples { needed: 2, got: n });
        }
        let d = set.dim();
        let mean = DVector::from_vec(set.mean());
        let mut cov = DMatrix::zeros(d, d);
        for row in set.rows() {
            let centered = DVector::from_vec(row.clone()) - &mean;
            cov.ger(1.0, &centered, &centered, 1.0);
        }
        cov /= (n - 1) as f64;
        Ok(Self { mean, cov })
    }
}

/// Symmetric eigendecomposition with eigenvalues clamped at zero. When the
/// smallest eigenvalue falls below `eps` the whole spectrum is shifted by
/// `eps` (the εI regularization); full-rank fits are left untouched so exact
/// closed-form cases stay exact.
fn regularized_eigen(m: &DMatrix<f64>, eps: f64) -> (DMatrix<f64>, Vec<f64>) {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut vals: Vec<f64> = sym.eigenvalues.iter().cloned().collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < eps {
        for v in &mut vals {
            *v = v.max(0.0) + eps;
        }
    }
    (sym.eigenvectors, vals)
}

fn matrix_sqrt(m: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let (vecs, vals) = regularized_eigen(m, eps);
    let sqrt_diag = DMatrix::from_diagonal(&DVector::from_vec(
        vals.iter().map(|&v| v.max(0.0).sqrt()).collect(),
    ));
    &vecs * sqrt_diag * vecs.transpose()
}

/// `‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2·(Σ_r Σ_g)^{1/2})`.
///
/// The matrix square root is evaluated through the symmetric product
/// `Σ_r^{1/2} Σ_g Σ_r^{1/2}`; near-singular covariances get an εI shift with
/// `ε = 1e-6·tr(Σ)/D`, and round-off negatives are clamped to zero.
pub fn protein_fid(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<f64, MetricError> {
    if x.dim() != y.dim() {
        return Err(MetricError::DimensionMismatch(x.dim(), y.dim()));
    }
    let fr = GaussianFit::fit(x)?;
    let fg = GaussianFit::fit(y)?;
    let d = x.dim() as f64;
    let eps_r = 1e-6 * fr.cov.trace() / d;
    let eps_g = 1e-6 * fg.cov.trace() / d;

    let mean_term = (&fr.mean - &fg.mean).norm_squared();

    let sqrt_r = matrix_sqrt(&fr.cov, eps_r);
    let inner = &sqrt_r * &fg.cov * &sqrt_r;
    // Symmetrize against round-off before the final eigendecomposition.
    let inner = (&inner + inner.transpose()) * 0.5;
    let (_, vals) = regularized_eigen(&inner, eps_g.min(eps_r));
    let tr_sqrt: f64 = vals.iter().map(|&v| v.max(0.0).sqrt()).sum();

    Ok((mean_term + fr.cov.trace() + fg.cov.trace() - 2.0 * tr_sqrt).max(0.0))
}
