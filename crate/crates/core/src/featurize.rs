//! Builds the three level representations of a protein record: the
//! amino-acid contact graph, the backbone graph with Euler-angle edge
//! features, and the per-residue side-chain torsion features.
//!
//! All geometry is canonicalized first, so every feature handed to the
//! encoders is SE(3)-invariant by construction.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::data::{DataError, ProteinRecord};
use crate::geom::{
    backbone_euler_angles, build_residue_graph, canonicalize, canonicalize_with_fallback,
    residue_frame, seq_distance_onehot, wrap_angle, CoordSeq, GeomError, ResidueGraph,
};
use crate::residues;

/// Default Cα contact threshold in Å.
pub const CONTACT_THRESHOLD: f64 = 8.0;

/// Node feature widths per level.
pub const AA_NODE_DIM: usize = 3 + 25;
pub const BACKBONE_NODE_DIM: usize = 9;
pub const ATOM_NODE_DIM: usize = 20 + 4 + 4;
/// Edge feature widths per level.
pub const AA_EDGE_DIM: usize = crate::geom::SEQ_DIST_BINS;
pub const BACKBONE_EDGE_DIM: usize = crate::geom::SEQ_DIST_BINS + 3;
pub const ATOM_EDGE_DIM: usize = crate::geom::SEQ_DIST_BINS;

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Backbone-level representation: contact graph with τ edge features plus
/// the per-step decoder targets (consecutive Cα distance and Euler angles;
/// step 0 has no predecessor and is masked out).
#[derive(Debug, Clone)]
pub struct BackboneFeatures {
    pub graph: ResidueGraph,
    /// Per residue: `[distance, τ1, τ2, τ3]` relative to the previous one.
    pub steps: Vec<[f64; 4]>,
    pub step_mask: Vec<bool>,
}

/// Atom-level representation: per-residue χ angles with presence masks on a
/// contact graph.
#[derive(Debug, Clone)]
pub struct AtomFeatures {
    pub graph: ResidueGraph,
    pub chi: Vec<[f64; 4]>,
    pub chi_mask: Vec<[bool; 4]>,
}

/// The three level representations of one record.
#[derive(Debug, Clone)]
pub struct LevelFeatures {
    pub len: usize,
    pub residue_indices: Vec<usize>,
    pub aa_graph: ResidueGraph,
    pub backbone: Option<BackboneFeatures>,
    pub atom: Option<AtomFeatures>,
}

fn canonical_frames(
    backbone: &[crate::data::BackboneAtoms],
    transform: &crate::geom::RigidTransform,
) -> Result<Vec<Matrix3<f64>>, GeomError> {
    backbone
        .iter()
        .map(|bb| {
            let n = transform.apply(&Vector3::new(bb.n[0], bb.n[1], bb.n[2]));
            let ca = transform.apply(&Vector3::new(bb.ca[0], bb.ca[1], bb.ca[2]));
            let c = transform.apply(&Vector3::new(bb.c[0], bb.c[1], bb.c[2]));
            residue_frame(&n, &ca, &c)
        })
        .collect()
}

/// Featurizes a record at the given contact threshold. With `fallback` the
/// canonicalization anchor may scan past a degenerate leading triple.
pub fn featurize(
    record: &ProteinRecord,
    threshold: f64,
    fallback: bool,
) -> Result<LevelFeatures, FeaturizeError> {
    record.validate()?;
    let ca = record.ca_seq()?;
    let canon = if fallback { canonicalize_with_fallback(&ca)? } else { canonicalize(&ca)? };
    let indices = record.residue_indices();
    let len = indices.len();

    // Amino-acid level: canonical position ++ one-hot ++ physicochemical.
    let aa_nodes: Vec<Vec<f64>> = indices.iter().map(|&i| residues::node_feature(i)).collect();
    let aa_graph = build_residue_graph(&canon.coords, &aa_nodes, threshold);

    // Backbone level: canonical N/Cα/C positions as node features, Euler
    // angles between residue frames on every edge.
    let backbone = match &record.backbone_coords {
        Some(bb) => {
            let frames = canonical_frames(bb, &canon.applied)?;
            let node_feats: Vec<Vec<f64>> = bb
                .iter()
                .map(|atoms| {
                    let n = canon.applied.apply(&Vector3::from_column_slice(&atoms.n));
                    let c = canon.applied.apply(&Vector3::from_column_slice(&atoms.c));
                    let ca = canon.applied.apply(&Vector3::from_column_slice(&atoms.ca));
                    vec![n.x, n.y, n.z, ca.x, ca.y, ca.z, c.x, c.y, c.z]
                })
                .collect();
            let mut graph = build_residue_graph(&canon.coords, &node_feats, threshold);
            for edge in &mut graph.edges {
                let e = backbone_euler_angles(&frames[edge.from], &frames[edge.to])?;
                let mut feats = seq_distance_onehot(edge.from, edge.to);
                feats.extend_from_slice(&e.as_array());
                edge.features = feats;
            }
            // Per-step decoder targets.
            let mut steps = vec![[0.0; 4]; len];
            let mut step_mask = vec![false; len];
            for i in 1..len {
                let dist = (canon.coords[i] - canon.coords[i - 1]).norm();
                let e = backbone_euler_angles(&frames[i - 1], &frames[i])?;
                steps[i] = [dist, e.tau1, e.tau2, e.tau3];
                step_mask[i] = true;
            }
            Some(BackboneFeatures { graph, steps, step_mask })
        }
        None => None,
    };

    // Atom level: residue identity plus wrapped χ angles and presence mask.
    let atom = match &record.torsions {
        Some(torsions) => {
            let normalized = torsions.normalized();
            let node_feats: Vec<Vec<f64>> = indices
                .iter()
                .zip(normalized.angles.iter().zip(&normalized.mask))
                .map(|(&res, (chi, mask))| {
                    let mut f = vec![0.0; ATOM_NODE_DIM];
                    f[res] = 1.0;
                    for k in 0..4 {
                        f[20 + k] = chi[k];
                        f[24 + k] = if mask[k] { 1.0 } else { 0.0 };
                    }
                    f
                })
                .collect();
            let graph = build_residue_graph(&canon.coords, &node_feats, threshold);
            Some(AtomFeatures { graph, chi: normalized.angles, chi_mask: normalized.mask })
        }
        None => None,
    };

    Ok(LevelFeatures { len, residue_indices: indices, aa_graph, backbone, atom })
}

/// Rebuilds a Cα trace from decoded backbone step features `[distance, τ1,
/// τ2, τ3]`: frames chain through the Euler rotations and each residue is
/// placed one step distance along its frame's x-axis. The first residue sits
/// at the origin with the identity frame.
pub fn backbone_steps_to_trace(steps: &[[f64; 4]]) -> Vec<[f64; 3]> {
    let mut frame = Matrix3::<f64>::identity();
    let mut pos = Vector3::<f64>::zeros();
    let mut out = vec![[0.0; 3]];
    for step in steps.iter().skip(1) {
        let rot = crate::geom::euler_zyz_matrix(
            wrap_angle(step[1]),
            step[2].clamp(0.0, std::f64::consts::PI),
            wrap_angle(step[3]),
        );
        frame *= rot;
        pos += frame * Vector3::new(step[0].max(0.0), 0.0, 0.0);
        out.push([pos.x, pos.y, pos.z]);
    }
    out
}
