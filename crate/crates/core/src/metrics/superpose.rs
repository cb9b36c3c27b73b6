//! Kabsch superposition, RMSD and the index-correspondence TM-score.

use nalgebra::{Matrix3, Vector3};

use super::MetricError;
use crate::geom::CoordSeq;

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// The proper rotation minimizing `Σ‖R·a_i − b_i‖²` over centered point sets
/// (Kabsch, with the determinant sign correction).
fn kabsch_rotation(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += q * p.transpose(); // so that R·a ≈ b
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    u * correction * v_t
}

/// Superposes `a` onto `b`: returns the rotated-and-translated copy of `a`
/// after optimal rigid alignment.
pub fn kabsch_superpose(a: &CoordSeq, b: &CoordSeq) -> Result<Vec<Vector3<f64>>, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let ca = centroid(a.points());
    let cb = centroid(b.points());
    let a_centered: Vec<Vector3<f64>> = a.points().iter().map(|p| p - ca).collect();
    let b_centered: Vec<Vector3<f64>> = b.points().iter().map(|p| p - cb).collect();
    let r = kabsch_rotation(&a_centered, &b_centered);
    Ok(a_centered.iter().map(|p| r * p + cb).collect())
}

/// Minimal RMSD over all rigid superpositions of equally long chains.
pub fn kabsch_rmsd(a: &CoordSeq, b: &CoordSeq) -> Result<f64, MetricError> {
    let aligned = kabsch_superpose(a, b)?;
    let ss: f64 = aligned
        .iter()
        .zip(b.points())
        .map(|(p, q)| (p - q).norm_squared())
        .sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Length-normalized TM-score `(1/L)·Σ 1/(1 + (d_i/d₀)²)` evaluated at the
/// Kabsch superposition with index correspondence (no alignment search);
/// `d₀(L) = 1.24·∛(L−15) − 1.8` clamped at 0.5.
pub fn tm_score(a: &CoordSeq, b: &CoordSeq) -> Result<f64, MetricError> {
    let aligned = kabsch_superpose(a, b)?;
    let l = a.len() as f64;
    let d0 = (1.24 * (l - 15.0).cbrt() - 1.8).max(0.5);
    let sum: f64 = aligned
        .iter()
        .zip(b.points())
        .map(|(p, q)| {
            let d = (p - q).norm();
            1.0 / (1.0 + (d / d0) * (d / d0))
        })
        .sum();
    Ok(sum / l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RigidTransform;
    use crate::rng::{standard_normal, stream_rng};
    use approx::assert_abs_diff_eq;

    fn random_chain(rng: &mut crate::rng::PortableRng, n: usize) -> CoordSeq {
        CoordSeq::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        5.0 * standard_normal(rng),
                        5.0 * standard_normal(rng),
                        5.0 * standard_normal(rng),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_rigid(rng: &mut crate::rng::PortableRng) -> RigidTransform {
        let q: [f64; 4] = std::array::from_fn(|_| standard_normal(rng));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        RigidTransform {
            rotation: Matrix3::new(
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ),
            translation: Vector3::new(
                standard_normal(rng) * 10.0,
                standard_normal(rng) * 10.0,
                standard_normal(rng) * 10.0,
            ),
        }
    }

    #[test]
    fn identical_chains_score_perfectly() {
        let mut rng = stream_rng(1, 0);
        let a = random_chain(&mut rng, 30);
        assert_abs_diff_eq!(kabsch_rmsd(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tm_score(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rigid_copies_have_zero_rmsd() {
        let mut rng = stream_rng(2, 0);
        for _ in 0..20 {
            let a = random_chain(&mut rng, 25);
            let rt = random_rigid(&mut rng);
            let b = rt.apply_seq(&a);
            assert!(kabsch_rmsd(&a, &b).unwrap() < 1e-9);
            assert!((tm_score(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_point_hand_case() {
        // Centered minimal RMSD between {0, e_x} and {0, 3e_x} is 1.0.
        let a = CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let b = CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(kabsch_rmsd(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tm_score_fixed_point_at_d0_displacement() {
        // Every residue displaced by exactly d0 after superposition → 0.5.
        // A planar ring with alternating ±d0 z-offsets keeps the optimal
        // superposition at the identity (centroids coincide, cross terms
        // cancel by symmetry), so each residue pair is exactly d0 apart.
        let l = 40usize;
        let d0 = (1.24 * (l as f64 - 15.0).cbrt() - 1.8).max(0.5);
        let ring: Vec<[f64; 3]> = (0..l)
            .map(|i| {
                let t = i as f64 / l as f64 * std::f64::consts::TAU;
                [10.0 * t.cos(), 10.0 * t.sin(), 0.0]
            })
            .collect();
        let alternating: Vec<[f64; 3]> = ring
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0], p[1], if i % 2 == 0 { d0 } else { -d0 }])
            .collect();
        let a = CoordSeq::from_triples(&ring).unwrap();
        let c = CoordSeq::from_triples(&alternating).unwrap();
        assert_abs_diff_eq!(tm_score(&a, &c).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn tm_score_matches_brute_force_formula() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..10 {
            let a = random_chain(&mut rng, 22);
            let b = random_chain(&mut rng, 22);
            let score = tm_score(&a, &b).unwrap();
            // Independent evaluation of the formula at the superposition.
            let aligned = kabsch_superpose(&a, &b).unwrap();
            let d0 = (1.24f64 * (22.0f64 - 15.0).cbrt() - 1.8).max(0.5);
            let mut total = 0.0;
            for (p, q) in aligned.iter().zip(b.points()) {
                let d = (p - q).norm();
                total += 1.0 / (1.0 + (d / d0).powi(2));
            }
            assert!((score - total / 22.0).abs() < 1e-10);
            assert!(score > 0.0 && score <= 1.0);
        }
    }

    #[test]
    fn mirror_images_get_proper_rotation_only() {
        // A chiral made of 4 points and its mirror: Kabsch must not use a
        // reflection, so RMSD stays positive.
        let a = CoordSeq::from_triples(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 3.0],
        ])
        .unwrap();
        let mirrored = CoordSeq::from_triples(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, -3.0],
        ])
        .unwrap();
        assert!(kabsch_rmsd(&a, &mirrored).unwrap() > 0.5);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = CoordSeq::from_triples(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let b = CoordSeq::from_triples(&[[0.0; 3]]).unwrap();
        assert!(matches!(kabsch_rmsd(&a, &b), Err(MetricError::LengthMismatch(2, 1))));
        assert!(matches!(tm_score(&a, &b), Err(MetricError::LengthMismatch(2, 1))));
    }
}
