//! Autoregressive decoders: next-token prediction at the sequence level,
//! per-step geometric features at the backbone and atom levels. Both share
//! the causal transformer core, conditioned position-wise on the latent
//! tokens.

use rand::Rng;

use crate::nn::{Graph, NnError, NodeId, ParamStore, Tensor, Transformer, TransformerConfig};
use crate::residues::NUM_RESIDUES;

/// Token index used for the begin-of-sequence slot.
pub const BOS: usize = NUM_RESIDUES;

pub(crate) fn init_sequence_decoder(
    store: &mut ParamStore,
    cfg: &TransformerConfig,
    latent: usize,
    max_len: usize,
    rng: &mut impl Rng,
) {
    store.insert("dec.tok", Tensor::fan_in_init(NUM_RESIDUES + 1, cfg.hidden, rng));
    store.insert("dec.zproj.w", Tensor::fan_in_init(latent, cfg.hidden, rng));
    store.insert("dec.zproj.b", Tensor::zeros(&[cfg.hidden]));
    store.insert("dec.pos", Tensor::fan_in_init(max_len, cfg.hidden, rng));
    Transformer::new("dec.tf", *cfg).init(store, rng);
    store.insert("dec.head.w", Tensor::fan_in_init(cfg.hidden, NUM_RESIDUES, rng));
    store.insert("dec.head.b", Tensor::zeros(&[NUM_RESIDUES]));
}

pub(crate) fn init_geometry_decoder(
    store: &mut ParamStore,
    cfg: &TransformerConfig,
    latent: usize,
    max_len: usize,
    rng: &mut impl Rng,
) {
    store.insert("dec.featproj.w", Tensor::fan_in_init(4, cfg.hidden, rng));
    store.insert("dec.featproj.b", Tensor::zeros(&[cfg.hidden]));
    store.insert("dec.zproj.w", Tensor::fan_in_init(latent, cfg.hidden, rng));
    store.insert("dec.zproj.b", Tensor::zeros(&[cfg.hidden]));
    store.insert("dec.pos", Tensor::fan_in_init(max_len, cfg.hidden, rng));
    Transformer::new("dec.tf", *cfg).init(store, rng);
    store.insert("dec.head.w", Tensor::fan_in_init(cfg.hidden, 4, rng));
    store.insert("dec.head.b", Tensor::zeros(&[4]));
}

fn conditioned_input(
    g: &mut Graph,
    store: &ParamStore,
    base: NodeId,
    z: NodeId,
    len: usize,
) -> Result<NodeId, NnError> {
    let wz = store.load(g, "dec.zproj.w")?;
    let bz = store.load(g, "dec.zproj.b")?;
    let zin = g.matmul(z, wz)?;
    let zin = g.add_row(zin, bz)?;
    let pos_table = store.load(g, "dec.pos")?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = g.gather_rows(pos_table, &positions)?;
    let x = g.add(base, zin)?;
    g.add(x, pos)
}

/// Causal forward over BOS-shifted tokens; returns `[L, 20]` logits.
/// `input_tokens[k]` is the token visible at position `k` (BOS at 0).
pub(crate) fn sequence_decoder_forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TransformerConfig,
    z: NodeId,
    input_tokens: &[usize],
) -> Result<NodeId, NnError> {
    let tok_table = store.load(g, "dec.tok")?;
    let toks = g.gather_rows(tok_table, input_tokens)?;
    let x = conditioned_input(g, store, toks, z, input_tokens.len())?;
    let h = Transformer::new("dec.tf", *cfg).forward(g, store, x, true)?;
    let w = store.load(g, "dec.head.w")?;
    let b = store.load(g, "dec.head.b")?;
    let logits = g.matmul(h, w)?;
    g.add_row(logits, b)
}

/// Causal forward over teacher-forced previous features (`[L, 4]`, row 0
/// zero); returns raw `[L, 4]` feature predictions.
pub(crate) fn geometry_decoder_forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TransformerConfig,
    z: NodeId,
    prev_feats: &Tensor,
) -> Result<NodeId, NnError> {
    let prev = g.constant(prev_feats.clone());
    let wf = store.load(g, "dec.featproj.w")?;
    let bf = store.load(g, "dec.featproj.b")?;
    let fin = g.matmul(prev, wf)?;
    let fin = g.add_row(fin, bf)?;
    let x = conditioned_input(g, store, fin, z, prev_feats.rows())?;
    let h = Transformer::new("dec.tf", *cfg).forward(g, store, x, true)?;
    let w = store.load(g, "dec.head.w")?;
    let b = store.load(g, "dec.head.b")?;
    let raw = g.matmul(h, w)?;
    g.add_row(raw, b)
}

/// Applies the geometry output transform to one raw feature row: a softplus
/// positivity map on the leading distance column when requested, angle
/// wrapping on the rest.
pub(crate) fn transform_geometry_row(raw: &[f64], positive_first: bool) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, &v) in raw.iter().enumerate().take(4) {
        out[k] = if k == 0 && positive_first {
            v.max(0.0) + (-v.abs()).exp().ln_1p() // softplus
        } else {
            crate::geom::wrap_angle(v)
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn geometry_transform_wraps_and_stays_positive() {
        let raw = [-3.0, 3.0 * std::f64::consts::FRAC_PI_2, 0.1, -7.0];
        let out = transform_geometry_row(&raw, true);
        assert!(out[0] > 0.0);
        // 3π/2 wraps to −π/2.
        assert_abs_diff_eq!(out[1], -std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(out[3], crate::geom::wrap_angle(-7.0), epsilon = 1e-12);

        // Without the positivity map the first column wraps like the others.
        let out = transform_geometry_row(&raw, false);
        assert_abs_diff_eq!(out[0], crate::geom::wrap_angle(-3.0), epsilon = 1e-12);
    }
}
