//! Pure geometric kernel: SE(3) canonicalization, residue contact graphs,
//! backbone Euler angles and side-chain torsion angles.
//!
//! All operations are pure functions on immutable inputs. Coordinates are in
//! Ångström; angles are radians in `(-π, π]`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance below which the second anchor residue is considered coincident
/// with the first.
const DEGENERATE_DISTANCE: f64 = 1e-8;
/// Angular tolerance (radians) below which the third anchor residue is
/// considered collinear with the first two.
const DEGENERATE_ANGLE: f64 = 1e-8;
/// Middle Euler angle closer than this to {0, π} raises the gimbal-lock flag.
const GIMBAL_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("chain has {got} residues, need at least {needed}")]
    ChainTooShort { needed: usize, got: usize },
    #[error("degenerate chain at anchor {index}: {reason}")]
    DegenerateChain { index: usize, reason: &'static str },
    #[error("zero-length vector has no alignment rotation")]
    ZeroVector,
    #[error("dihedral undefined: consecutive bond vectors are parallel or zero")]
    DegenerateDihedral,
    #[error("frame is not orthonormal")]
    NonOrthonormalFrame,
    #[error("coordinate {index} is not finite")]
    NonFinite { index: usize },
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r - std::f64::consts::TAU
    } else {
        r
    }
}

/// An ordered list of 3-D points, one per residue anchor atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordSeq(Vec<Vector3<f64>>);

impl CoordSeq {
    /// Validates length ≥ 1 and finiteness of every coordinate.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeomError> {
        if points.is_empty() {
            return Err(GeomError::ChainTooShort { needed: 1, got: 0 });
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(GeomError::NonFinite { index: i });
            }
        }
        Ok(Self(points))
    }

    /// Convenience constructor from `(x, y, z)` triples.
    pub fn from_triples(points: &[[f64; 3]]) -> Result<Self, GeomError> {
        Self::new(points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn to_triples(&self) -> Vec<[f64; 3]> {
        self.0.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

impl std::ops::Index<usize> for CoordSeq {
    type Output = Vector3<f64>;
    fn index(&self, i: usize) -> &Vector3<f64> {
        &self.0[i]
    }
}

/// A rigid motion `p ↦ R·p + t` with `R` a proper rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_seq(&self, chain: &CoordSeq) -> CoordSeq {
        CoordSeq(chain.points().iter().map(|p| self.apply(p)).collect())
    }

    /// Checks RᵀR = I and det R = 1 within `tol`.
    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        err < tol && (self.rotation.determinant() - 1.0).abs() < tol
    }
}

/// A canonicalized chain together with the rigid transform that produced it
/// (mapping original coordinates to canonical ones).
#[derive(Debug, Clone)]
pub struct CanonicalChain {
    pub coords: CoordSeq,
    pub applied: RigidTransform,
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

fn rot_x(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// The rotation matrix `R = I + sin(θ)·K + (1 − cos(θ))·K²` that aligns the
/// input direction with the positive x-axis.
///
/// For the antipodal input (`v ≈ -e_x`, where the axis is undefined) a 180°
/// rotation about `e_z` is returned.
pub fn rodrigues_rotation(v: &Vector3<f64>) -> Result<Matrix3<f64>, GeomError> {
    let norm = v.norm();
    if norm < DEGENERATE_DISTANCE {
        return Err(GeomError::ZeroVector);
    }
    let u = v / norm;
    let cos_theta = u.x; // u · e_x
    let axis = u.cross(&Vector3::x()); // ‖axis‖ = sin θ
    let sin_theta = axis.norm();
    if sin_theta < 1e-12 {
        if cos_theta > 0.0 {
            Ok(Matrix3::identity())
        } else {
            // 180° about e_z
            Ok(Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0))
        }
    } else {
        let k = skew(&(axis / sin_theta));
        Ok(Matrix3::identity() + k * sin_theta + k * k * (1.0 - cos_theta))
    }
}

fn canonicalize_anchored(chain: &CoordSeq, anchor: usize) -> Result<CanonicalChain, GeomError> {
    let p0 = chain[anchor];
    let xi1 = chain[anchor + 1] - p0;
    let xi2 = chain[anchor + 2] - p0;
    if xi1.norm() < DEGENERATE_DISTANCE {
        return Err(GeomError::DegenerateChain {
            index: anchor,
            reason: "first two anchor residues coincide",
        });
    }
    let sin_angle = xi1.cross(&xi2).norm() / (xi1.norm() * xi2.norm().max(f64::MIN_POSITIVE));
    if xi2.norm() < DEGENERATE_DISTANCE || sin_angle < DEGENERATE_ANGLE {
        return Err(GeomError::DegenerateChain {
            index: anchor,
            reason: "third anchor residue is collinear with the first two",
        });
    }

    let r1 = rodrigues_rotation(&xi1)?;
    let v = r1 * xi2;
    // Rotate about x so the third anchor lands in the half-plane y ≥ 0, z = 0.
    let psi = -v.z.atan2(v.y);
    let rotation = rot_x(psi) * r1;
    let translation = -(rotation * p0);

    let mut points: Vec<Vector3<f64>> = chain
        .points()
        .iter()
        .map(|p| rotation * p + translation)
        .collect();
    points[anchor] = Vector3::zeros(); // exact by construction, pinned anyway

    Ok(CanonicalChain {
        coords: CoordSeq(points),
        applied: RigidTransform { rotation, translation },
    })
}

/// Canonicalizes a chain: first residue at the origin, second on the positive
/// x-axis, third in the y ≥ 0 half of the xy-plane.
///
/// Fails with [`GeomError::DegenerateChain`] if the leading three residues do
/// not span a plane; see [`canonicalize_with_fallback`] for the recovery path.
pub fn canonicalize(chain: &CoordSeq) -> Result<CanonicalChain, GeomError> {
    if chain.len() < 3 {
        return Err(GeomError::ChainTooShort { needed: 3, got: chain.len() });
    }
    canonicalize_anchored(chain, 0)
}

/// Like [`canonicalize`], but on a degenerate leading triple scans forward for
/// the first non-collinear consecutive triple and anchors the frame there
/// (that anchor residue, not residue 0, then sits at the origin).
pub fn canonicalize_with_fallback(chain: &CoordSeq) -> Result<CanonicalChain, GeomError> {
    if chain.len() < 3 {
        return Err(GeomError::ChainTooShort { needed: 3, got: chain.len() });
    }
    let mut last = Err(GeomError::DegenerateChain { index: 0, reason: "unreachable" });
    for anchor in 0..=chain.len() - 3 {
        last = canonicalize_anchored(chain, anchor);
        if last.is_ok() {
            return last;
        }
    }
    last
}

/// Node of a residue graph: anchor-atom position plus a biochemical feature
/// vector.
#[derive(Debug, Clone)]
pub struct GraphNode {
    pub position: Vector3<f64>,
    pub features: Vec<f64>,
}

/// Directed edge with its feature vector; the edge set is symmetric.
#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub features: Vec<f64>,
}

/// Residue contact graph: an edge joins residues whose anchor atoms are
/// strictly closer than `threshold` Å.
#[derive(Debug, Clone)]
pub struct ResidueGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub threshold: f64,
}

/// Sequential distances are clamped here before one-hot encoding.
pub const SEQ_DIST_BINS: usize = 32;

/// One-hot embedding of the sequential distance `|i − j|`, clamped at
/// [`SEQ_DIST_BINS`].
pub fn seq_distance_onehot(i: usize, j: usize) -> Vec<f64> {
    let d = i.abs_diff(j).clamp(1, SEQ_DIST_BINS);
    let mut v = vec![0.0; SEQ_DIST_BINS];
    v[d - 1] = 1.0;
    v
}

/// Builds the residue contact graph over anchor (Cα) coordinates.
///
/// Each directed edge (i, j) carries the one-hot sequential-distance
/// embedding; both directions are stored so the edge set is symmetric.
pub fn build_residue_graph(
    ca: &CoordSeq,
    node_features: &[Vec<f64>],
    threshold: f64,
) -> ResidueGraph {
    assert!(threshold > 0.0, "contact threshold must be positive");
    assert_eq!(ca.len(), node_features.len(), "one feature vector per residue");
    let n = ca.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (ca[i] - ca[j]).norm() < threshold {
                edges.push(GraphEdge { from: i, to: j, features: seq_distance_onehot(i, j) });
            }
        }
    }
    let nodes = ca
        .points()
        .iter()
        .zip(node_features)
        .map(|(p, f)| GraphNode { position: *p, features: f.clone() })
        .collect();
    ResidueGraph { nodes, edges, threshold }
}

/// Z-Y-Z Euler angles of a relative rotation between two backbone frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    /// Set when `tau2` is within [`GIMBAL_TOLERANCE`] of {0, π}; the rotation
    /// is then folded into `tau1` and `tau3` is pinned to 0.
    pub gimbal_lock: bool,
}

impl EulerAngles {
    pub fn as_array(&self) -> [f64; 3] {
        [self.tau1, self.tau2, self.tau3]
    }
}

/// Recomposes `Rz(τ1)·Ry(τ2)·Rz(τ3)`.
pub fn euler_zyz_matrix(tau1: f64, tau2: f64, tau3: f64) -> Matrix3<f64> {
    let (s1, c1) = tau1.sin_cos();
    let (s2, c2) = tau2.sin_cos();
    let (s3, c3) = tau3.sin_cos();
    let rz1 = Matrix3::new(c1, -s1, 0.0, s1, c1, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(c2, 0.0, s2, 0.0, 1.0, 0.0, -s2, 0.0, c2);
    let rz3 = Matrix3::new(c3, -s3, 0.0, s3, c3, 0.0, 0.0, 0.0, 1.0);
    rz1 * ry * rz3
}

fn is_orthonormal(m: &Matrix3<f64>, tol: f64) -> bool {
    (m.transpose() * m - Matrix3::identity()).abs().max() < tol
        && (m.determinant() - 1.0).abs() < tol
}

/// Z-Y-Z Euler angles of the relative rotation `frame_iᵀ · frame_j`.
///
/// At gimbal lock (middle angle within 1e-7 of {0, π}) `τ3` is set to 0 and
/// the full rotation folded into `τ1`; recomposition still reproduces the
/// relative rotation.
pub fn backbone_euler_angles(
    frame_i: &Matrix3<f64>,
    frame_j: &Matrix3<f64>,
) -> Result<EulerAngles, GeomError> {
    if !is_orthonormal(frame_i, 1e-6) || !is_orthonormal(frame_j, 1e-6) {
        return Err(GeomError::NonOrthonormalFrame);
    }
    let m = frame_i.transpose() * frame_j;
    let tau2 = m[(2, 2)].clamp(-1.0, 1.0).acos();
    if tau2 < GIMBAL_TOLERANCE {
        // m ≈ Rz(τ1 + τ3): fold everything into τ1.
        let tau1 = m[(1, 0)].atan2(m[(0, 0)]);
        return Ok(EulerAngles { tau1, tau2: 0.0, tau3: 0.0, gimbal_lock: true });
    }
    if std::f64::consts::PI - tau2 < GIMBAL_TOLERANCE {
        // m ≈ Rz(τ1 − τ3)·Ry(π): fold everything into τ1.
        let tau1 = (-m[(0, 1)]).atan2(-m[(0, 0)]);
        return Ok(EulerAngles {
            tau1,
            tau2: std::f64::consts::PI,
            tau3: 0.0,
            gimbal_lock: true,
        });
    }
    let tau1 = m[(1, 2)].atan2(m[(0, 2)]);
    let tau3 = m[(2, 1)].atan2(-m[(2, 0)]);
    Ok(EulerAngles { tau1, tau2, tau3, gimbal_lock: false })
}

/// Orthonormal residue frame from backbone atoms: x̂ along Cα→C, ŷ the
/// Gram–Schmidt remainder of Cα→N, ẑ = x̂ × ŷ (columns of the result).
pub fn residue_frame(
    n: &Vector3<f64>,
    ca: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Result<Matrix3<f64>, GeomError> {
    let x = c - ca;
    let xn = x.norm();
    if xn < DEGENERATE_DISTANCE {
        return Err(GeomError::DegenerateChain { index: 0, reason: "Cα and C coincide" });
    }
    let x = x / xn;
    let raw_y = n - ca;
    let y = raw_y - x * raw_y.dot(&x);
    let yn = y.norm();
    if yn < DEGENERATE_DISTANCE {
        return Err(GeomError::DegenerateChain {
            index: 0,
            reason: "N is collinear with Cα→C",
        });
    }
    let y = y / yn;
    let z = x.cross(&y);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Dihedral angle defined by four consecutive points, in `(-π, π]`.
///
/// Sign convention: `atan2((n1 × b̂2)·n2, n1·n2)` with `n1 = b1×b2`,
/// `n2 = b2×b3`; invariant under any common rigid motion of the points.
pub fn torsion_angle(
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    p3: &Vector3<f64>,
    p4: &Vector3<f64>,
) -> Result<f64, GeomError> {
    let b1 = p2 - p1;
    let b2 = p3 - p2;
    let b3 = p4 - p3;
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let b2n = b2.norm();
    if b2n < DEGENERATE_DISTANCE
        || n1.norm() < DEGENERATE_DISTANCE * b1.norm().max(1.0)
        || n2.norm() < DEGENERATE_DISTANCE * b3.norm().max(1.0)
    {
        return Err(GeomError::DegenerateDihedral);
    }
    let m = n1.cross(&(b2 / b2n));
    Ok(wrap_angle(m.dot(&n2).atan2(n1.dot(&n2))))
}

/// Per-residue side-chain torsion angles with a per-angle presence mask
/// (short side chains lack the higher chi angles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionSet {
    pub angles: Vec<[f64; 4]>,
    pub mask: Vec<[bool; 4]>,
}

impl TorsionSet {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Wraps all present angles into `(-π, π]` and zeroes masked slots.
    pub fn normalized(&self) -> TorsionSet {
        let angles = self
            .angles
            .iter()
            .zip(&self.mask)
            .map(|(a, m)| {
                let mut out = [0.0; 4];
                for k in 0..4 {
                    if m[k] {
                        out[k] = wrap_angle(a[k]);
                    }
                }
                out
            })
            .collect();
        TorsionSet { angles, mask: self.mask.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream_rng};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        // Normalized random quaternion.
        let q: [f64; 4] = std::array::from_fn(|_| standard_normal(rng));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    fn random_chain(rng: &mut impl Rng, len: usize) -> CoordSeq {
        loop {
            let pts: Vec<Vector3<f64>> = (0..len)
                .map(|_| Vector3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ))
                .collect();
            let c = CoordSeq::new(pts).unwrap();
            if canonicalize(&c).is_ok() {
                return c;
            }
        }
    }

    #[test]
    fn canonicalize_already_canonical_is_identity() {
        let c = CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
            .unwrap();
        let canon = canonicalize(&c).unwrap();
        for (a, b) in canon.coords.points().iter().zip(c.points()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            (canon.applied.rotation - Matrix3::identity()).abs().max(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(canon.applied.translation.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn canonicalize_translated_square_example() {
        // Oracle: compose the translation, the Rodrigues alignment and the
        // x-axis rotation by hand. ξ2 = (0,1,0) maps to e_x via Rz(-π/2) and
        // ξ3 = (1,1,0) then needs a 180° x-rotation to reach y ≥ 0.
        let c = CoordSeq::from_triples(&[[1.0, 1.0, 1.0], [1.0, 2.0, 1.0], [2.0, 2.0, 1.0]])
            .unwrap();
        let canon = canonicalize(&c).unwrap();
        let expect = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
        for (p, e) in canon.coords.points().iter().zip(&expect) {
            assert_abs_diff_eq!(p.x, e[0], epsilon = 1e-9);
            assert_abs_diff_eq!(p.y, e[1], epsilon = 1e-9);
            assert_abs_diff_eq!(p.z, e[2], epsilon = 1e-9);
        }
    }

    #[test]
    fn canonicalize_is_se3_invariant_on_example() {
        let c = CoordSeq::from_triples(&[[1.0, 1.0, 1.0], [1.0, 2.0, 1.0], [2.0, 2.0, 1.0]])
            .unwrap();
        // Rotate 90° about z and translate by (5, -3, 2).
        let rt = RigidTransform {
            rotation: Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::new(5.0, -3.0, 2.0),
        };
        let moved = rt.apply_seq(&c);
        let a = canonicalize(&c).unwrap();
        let b = canonicalize(&moved).unwrap();
        for (p, q) in a.coords.points().iter().zip(b.coords.points()) {
            assert_abs_diff_eq!((p - q).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn canonicalize_invariance_isometry_idempotence_random() {
        let mut rng = stream_rng(42, 0);
        for _ in 0..50 {
            let len = rng.random_range(3..=64);
            let chain = random_chain(&mut rng, len);
            let rt = RigidTransform {
                rotation: random_rotation(&mut rng),
                translation: Vector3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ),
            };
            let canon = canonicalize(&chain).unwrap();
            let canon_moved = canonicalize(&rt.apply_seq(&chain)).unwrap();

            // Invariance.
            for (p, q) in canon.coords.points().iter().zip(canon_moved.coords.points()) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() < 1e-6, "coordinate deviates: {p:?} vs {q:?}");
                }
            }
            // Isometry.
            for i in 0..len {
                for j in (i + 1)..len {
                    let before = (chain[i] - chain[j]).norm();
                    let after = (canon.coords[i] - canon.coords[j]).norm();
                    assert!((before - after).abs() < 1e-9);
                }
            }
            // Applying the recorded transform reproduces the output.
            for (p, q) in chain.points().iter().zip(canon.coords.points()) {
                assert!((canon.applied.apply(p) - q).norm() < 1e-9);
            }
            assert!(canon.applied.is_proper_rotation(1e-9));
            // Idempotence.
            let twice = canonicalize(&canon.coords).unwrap();
            for (p, q) in twice.coords.points().iter().zip(canon.coords.points()) {
                assert!((p - q).norm() < 1e-9);
            }
            // First three invariants.
            assert_eq!(canon.coords[0], Vector3::zeros());
            assert!(canon.coords[1].y.abs() < 1e-9 && canon.coords[1].z.abs() < 1e-9);
            assert!(canon.coords[2].z.abs() < 1e-9 && canon.coords[2].y >= 0.0);
        }
    }

    #[test]
    fn canonicalize_rejects_degenerate_anchors() {
        let coincident =
            CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            canonicalize(&coincident),
            Err(GeomError::DegenerateChain { .. })
        ));
        let collinear =
            CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            canonicalize(&collinear),
            Err(GeomError::DegenerateChain { .. })
        ));
        let short = CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(canonicalize(&short), Err(GeomError::ChainTooShort { .. })));
    }

    #[test]
    fn canonicalize_fallback_scans_past_collinear_prefix() {
        let chain = CoordSeq::from_triples(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0], // first triple collinear
            [2.0, 3.0, 0.0],
        ])
        .unwrap();
        assert!(canonicalize(&chain).is_err());
        let canon = canonicalize_with_fallback(&chain).unwrap();
        // Anchor is residue 1: it sits at the origin.
        assert_eq!(canon.coords[1], Vector3::zeros());
        assert!(canon.coords[2].y.abs() < 1e-9 && canon.coords[2].z.abs() < 1e-9);
        // Distances preserved.
        assert_abs_diff_eq!((canon.coords[3] - canon.coords[2]).norm(), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn rodrigues_aligned_and_antipodal() {
        let id = rodrigues_rotation(&Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!((id - Matrix3::identity()).abs().max(), 0.0, epsilon = 1e-12);

        let flip = rodrigues_rotation(&Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        let mapped = flip * Vector3::new(-1.0, 0.0, 0.0);
        assert!((mapped - Vector3::x()).norm() < 1e-9);
        assert!((flip.determinant() - 1.0).abs() < 1e-12);

        assert_eq!(rodrigues_rotation(&Vector3::zeros()), Err(GeomError::ZeroVector));
    }

    #[test]
    fn rodrigues_quarter_turn_case() {
        // Oracle: θ = π/2, K from the cross product with e_x.
        let r = rodrigues_rotation(&Vector3::new(0.0, 1.0, 0.0)).unwrap();
        let mapped = r * Vector3::new(0.0, 1.0, 0.0);
        assert!((mapped - Vector3::x()).norm() < 1e-12);
        let expect = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!((r - expect).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rodrigues_random_directions_align() {
        let mut rng = stream_rng(7, 1);
        for _ in 0..200 {
            let v = Vector3::new(
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                standard_normal(&mut rng),
            );
            if v.norm() < 1e-3 {
                continue;
            }
            let r = rodrigues_rotation(&v).unwrap();
            assert!((r * (v / v.norm()) - Vector3::x()).norm() < 1e-9);
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn residue_graph_matches_distance_predicate() {
        let ca = CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [3.7, 0.0, 0.0]]).unwrap();
        let feats = vec![vec![0.0]; 2];
        let g = build_residue_graph(&ca, &feats, 8.0);
        assert_eq!(g.edges.len(), 2); // both directions

        let far = CoordSeq::from_triples(&[[0.0, 0.0, 0.0], [9.1, 0.0, 0.0]]).unwrap();
        assert!(build_residue_graph(&far, &feats, 8.0).edges.is_empty());

        // 4 collinear residues spaced 5 Å: only consecutive pairs connect.
        let line = CoordSeq::from_triples(&[
            [0.0, 0.0, 0.0],
            [5.0, 0.0, 0.0],
            [10.0, 0.0, 0.0],
            [15.0, 0.0, 0.0],
        ])
        .unwrap();
        let g = build_residue_graph(&line, &vec![vec![]; 4], 8.0);
        let mut pairs: Vec<(usize, usize)> =
            g.edges.iter().filter(|e| e.from < e.to).map(|e| (e.from, e.to)).collect();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn residue_graph_brute_force_property() {
        let mut rng = stream_rng(11, 3);
        for _ in 0..20 {
            let n = rng.random_range(2..24);
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| std::array::from_fn(|_| rng.random_range(-12.0..12.0)))
                .collect();
            let ca = CoordSeq::from_triples(&pts).unwrap();
            let g = build_residue_graph(&ca, &vec![vec![]; n], 8.0);
            let mut expected = std::collections::BTreeSet::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && (ca[i] - ca[j]).norm() < 8.0 {
                        expected.insert((i, j));
                    }
                }
            }
            let got: std::collections::BTreeSet<(usize, usize)> =
                g.edges.iter().map(|e| (e.from, e.to)).collect();
            assert_eq!(got, expected);
            // Symmetry.
            for &(i, j) in &got {
                assert!(got.contains(&(j, i)));
            }
        }
    }

    #[test]
    fn seq_distance_onehot_clamps() {
        assert_eq!(seq_distance_onehot(0, 1)[0], 1.0);
        assert_eq!(seq_distance_onehot(0, 40)[SEQ_DIST_BINS - 1], 1.0);
        assert_eq!(seq_distance_onehot(5, 3)[1], 1.0);
    }

    #[test]
    fn euler_identity_and_quarter_turn() {
        let id = Matrix3::identity();
        let e = backbone_euler_angles(&id, &id).unwrap();
        assert!(e.gimbal_lock);
        assert_eq!([e.tau1, e.tau2, e.tau3], [0.0, 0.0, 0.0]);

        // Relative rotation Ry(π/2) decomposes as (0, π/2, 0) in Z-Y-Z.
        let ry = euler_zyz_matrix(0.0, std::f64::consts::FRAC_PI_2, 0.0);
        let e = backbone_euler_angles(&id, &ry).unwrap();
        assert_abs_diff_eq!(e.tau1, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.tau2, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(e.tau3, 0.0, epsilon = 1e-12);
        assert!(!e.gimbal_lock);
    }

    #[test]
    fn euler_round_trip_random_rotations() {
        let mut rng = stream_rng(5, 9);
        for _ in 0..300 {
            let fi = random_rotation(&mut rng);
            let fj = random_rotation(&mut rng);
            let e = backbone_euler_angles(&fi, &fj).unwrap();
            let m = fi.transpose() * fj;
            let rebuilt = euler_zyz_matrix(e.tau1, e.tau2, e.tau3);
            assert!(
                (rebuilt - m).abs().max() < 1e-9,
                "round trip failed: {e:?}"
            );
        }
    }

    #[test]
    fn euler_gimbal_lock_round_trip() {
        // Pure z-rotations put the middle angle at exactly 0.
        let fi = Matrix3::identity();
        let fj = euler_zyz_matrix(1.1, 0.0, 0.0);
        let e = backbone_euler_angles(&fi, &fj).unwrap();
        assert!(e.gimbal_lock);
        assert_eq!(e.tau3, 0.0);
        assert!((euler_zyz_matrix(e.tau1, e.tau2, e.tau3) - fj).abs().max() < 1e-9);

        // Middle angle exactly π.
        let fj = euler_zyz_matrix(0.4, std::f64::consts::PI, 0.0);
        let e = backbone_euler_angles(&fi, &fj).unwrap();
        assert!(e.gimbal_lock);
        assert!((euler_zyz_matrix(e.tau1, e.tau2, e.tau3) - fj).abs().max() < 1e-9);
    }

    #[test]
    fn euler_invariant_under_common_rigid_rotation() {
        let mut rng = stream_rng(17, 2);
        for _ in 0..50 {
            let fi = random_rotation(&mut rng);
            let fj = random_rotation(&mut rng);
            let r = random_rotation(&mut rng);
            let a = backbone_euler_angles(&fi, &fj).unwrap();
            let b = backbone_euler_angles(&(r * fi), &(r * fj)).unwrap();
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn euler_rejects_non_orthonormal_frames() {
        let bad = Matrix3::new(2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(
            backbone_euler_angles(&bad, &Matrix3::identity()),
            Err(GeomError::NonOrthonormalFrame)
        );
    }

    #[test]
    fn residue_frame_is_orthonormal() {
        let f = residue_frame(
            &Vector3::new(-0.5, 1.2, 0.3),
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::new(1.5, 0.1, -0.2),
        )
        .unwrap();
        assert!(is_orthonormal(&f, 1e-12));
    }

    #[test]
    fn torsion_reference_cases() {
        let o = Vector3::zeros();
        // Planar cis.
        let a = torsion_angle(
            &Vector3::new(1.0, 0.0, 0.0),
            &o,
            &Vector3::new(0.0, 1.0, 0.0),
            &Vector3::new(1.0, 1.0, 0.0),
        )
        .unwrap();
        assert_abs_diff_eq!(a, 0.0, epsilon = 1e-12);
        // Planar trans.
        let a = torsion_angle(
            &Vector3::new(1.0, 0.0, 0.0),
            &o,
            &Vector3::new(0.0, 1.0, 0.0),
            &Vector3::new(-1.0, 1.0, 0.0),
        )
        .unwrap();
        assert_abs_diff_eq!(a, std::f64::consts::PI, epsilon = 1e-12);
        // Right-handed quarter turn.
        let a = torsion_angle(
            &Vector3::new(1.0, 0.0, 0.0),
            &o,
            &Vector3::new(0.0, 1.0, 0.0),
            &Vector3::new(0.0, 1.0, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(a, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn torsion_invariant_under_rigid_motion_and_rejects_parallel() {
        let mut rng = stream_rng(3, 4);
        let pts: Vec<Vector3<f64>> = vec![
            Vector3::new(1.0, 0.2, -0.3),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.3, 1.4, 0.1),
            Vector3::new(-0.2, 1.5, 1.2),
        ];
        let base = torsion_angle(&pts[0], &pts[1], &pts[2], &pts[3]).unwrap();
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let t = Vector3::new(
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                standard_normal(&mut rng),
            );
            let m: Vec<Vector3<f64>> = pts.iter().map(|p| r * p + t).collect();
            let a = torsion_angle(&m[0], &m[1], &m[2], &m[3]).unwrap();
            assert!((a - base).abs() < 1e-9);
        }
        let parallel = torsion_angle(
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::new(2.0, 0.0, 0.0),
            &Vector3::new(3.0, 1.0, 0.0),
        );
        assert_eq!(parallel, Err(GeomError::DegenerateDihedral));
    }

    #[test]
    fn wrap_angle_hits_interval() {
        assert_abs_diff_eq!(wrap_angle(3.0 * std::f64::consts::FRAC_PI_2),
            -std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_abs_diff_eq!(wrap_angle(7.0), 7.0 - std::f64::consts::TAU, epsilon = 1e-12);
    }

    #[test]
    fn coordseq_validates() {
        assert!(CoordSeq::from_triples(&[]).is_err());
        assert!(CoordSeq::from_triples(&[[f64::NAN, 0.0, 0.0]]).is_err());
    }
}
