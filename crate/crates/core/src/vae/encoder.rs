//! Message-passing graph encoder shared by the three levels.
//!
//! Messages are linear in the neighbour state and the edge feature and are
//! mean-aggregated: because aggregation commutes with the linear maps, the
//! whole round reduces to dense ops on a row-normalized adjacency matrix and
//! the per-node mean of incoming edge features.

use rand::Rng;

use crate::geom::ResidueGraph;
use crate::nn::{Graph, NnError, NodeId, ParamStore, Tensor};

/// Dense inputs derived from a residue graph.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    /// `[L, node_dim]` node features.
    pub x: Tensor,
    /// `[L, L]` row-normalized incoming adjacency.
    pub a_norm: Tensor,
    /// `[L, edge_dim]` mean incoming edge features (zero rows for isolated
    /// nodes).
    pub e_agg: Tensor,
}

impl EncoderInput {
    pub fn from_graph(graph: &ResidueGraph, include_position: bool, edge_dim: usize) -> Self {
        let l = graph.nodes.len();
        let node_dim =
            graph.nodes.first().map_or(0, |n| n.features.len()) + if include_position { 3 } else { 0 };
        let mut x = Tensor::zeros(&[l, node_dim]);
        for (i, node) in graph.nodes.iter().enumerate() {
            let row = &mut x.data_mut()[i * node_dim..(i + 1) * node_dim];
            if include_position {
                row[0] = node.position.x;
                row[1] = node.position.y;
                row[2] = node.position.z;
                row[3..].copy_from_slice(&node.features);
            } else {
                row.copy_from_slice(&node.features);
            }
        }
        let mut degree = vec![0usize; l];
        for e in &graph.edges {
            degree[e.to] += 1;
        }
        let mut a_norm = Tensor::zeros(&[l, l]);
        let mut e_agg = Tensor::zeros(&[l, edge_dim]);
        for e in &graph.edges {
            let w = 1.0 / degree[e.to] as f64;
            a_norm.data_mut()[e.to * l + e.from] += w;
            debug_assert_eq!(e.features.len(), edge_dim);
            for (k, &v) in e.features.iter().enumerate() {
                e_agg.data_mut()[e.to * edge_dim + k] += w * v;
            }
        }
        Self { x, a_norm, e_agg }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

pub(crate) fn init_encoder(
    store: &mut ParamStore,
    node_dim: usize,
    edge_dim: usize,
    hidden: usize,
    latent: usize,
    rounds: usize,
    rng: &mut impl Rng,
) {
    store.insert("enc.embed.w", Tensor::fan_in_init(node_dim, hidden, rng));
    store.insert("enc.embed.b", Tensor::zeros(&[hidden]));
    for r in 0..rounds {
        store.insert(format!("enc.r{r}.msg_h.w"), Tensor::fan_in_init(hidden, hidden, rng));
        store.insert(format!("enc.r{r}.msg_e.w"), Tensor::fan_in_init(edge_dim, hidden, rng));
        store.insert(format!("enc.r{r}.upd.w"), Tensor::fan_in_init(2 * hidden, hidden, rng));
        store.insert(format!("enc.r{r}.upd.b"), Tensor::zeros(&[hidden]));
    }
    store.insert("enc.mu.w", Tensor::fan_in_init(hidden, latent, rng));
    store.insert("enc.mu.b", Tensor::zeros(&[latent]));
    store.insert("enc.lv.w", Tensor::fan_in_init(hidden, latent, rng));
    store.insert("enc.lv.b", Tensor::zeros(&[latent]));
}

/// Runs the encoder; returns `(mean, log_variance)` node ids, each `[L, d]`.
pub(crate) fn encoder_forward(
    g: &mut Graph,
    store: &ParamStore,
    rounds: usize,
    input: &EncoderInput,
) -> Result<(NodeId, NodeId), NnError> {
    let x = g.constant(input.x.clone());
    let a = g.constant(input.a_norm.clone());
    let eagg = g.constant(input.e_agg.clone());

    let w = store.load(g, "enc.embed.w")?;
    let b = store.load(g, "enc.embed.b")?;
    let xe = g.matmul(x, w)?;
    let xe = g.add_row(xe, b)?;
    let mut h = g.tanh(xe);

    for r in 0..rounds {
        let wh = store.load(g, &format!("enc.r{r}.msg_h.w"))?;
        let we = store.load(g, &format!("enc.r{r}.msg_e.w"))?;
        let hm = g.matmul(h, wh)?;
        let agg = g.matmul(a, hm)?;
        let em = g.matmul(eagg, we)?;
        let m = g.add(agg, em)?;
        let cat = g.concat_cols(&[h, m])?;
        let wu = store.load(g, &format!("enc.r{r}.upd.w"))?;
        let bu = store.load(g, &format!("enc.r{r}.upd.b"))?;
        let u = g.matmul(cat, wu)?;
        let u = g.add_row(u, bu)?;
        h = g.tanh(u);
    }

    let wmu = store.load(g, "enc.mu.w")?;
    let bmu = store.load(g, "enc.mu.b")?;
    let mu = g.matmul(h, wmu)?;
    let mu = g.add_row(mu, bmu)?;
    let wlv = store.load(g, "enc.lv.w")?;
    let blv = store.load(g, "enc.lv.b")?;
    let lv = g.matmul(h, wlv)?;
    let lv = g.add_row(lv, blv)?;
    Ok((mu, lv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{GraphEdge, GraphNode};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    /// Two nodes, one undirected edge, one round, hand-set weights: the
    /// message-passing output is computed by hand.
    #[test]
    fn two_node_mean_aggregation_by_hand() {
        let graph = ResidueGraph {
            nodes: vec![
                GraphNode { position: Vector3::zeros(), features: vec![1.0] },
                GraphNode { position: Vector3::zeros(), features: vec![2.0] },
            ],
            edges: vec![
                GraphEdge { from: 0, to: 1, features: vec![0.5] },
                GraphEdge { from: 1, to: 0, features: vec![0.5] },
            ],
            threshold: 8.0,
        };
        let input = EncoderInput::from_graph(&graph, false, 1);

        // hidden = 1, latent = 1, all weights identity-like, biases zero.
        let mut store = ParamStore::new();
        store.insert("enc.embed.w", Tensor::from_rows(&[vec![1.0]]));
        store.insert("enc.embed.b", Tensor::zeros(&[1]));
        store.insert("enc.r0.msg_h.w", Tensor::from_rows(&[vec![1.0]]));
        store.insert("enc.r0.msg_e.w", Tensor::from_rows(&[vec![2.0]]));
        store.insert("enc.r0.upd.w", Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        store.insert("enc.r0.upd.b", Tensor::zeros(&[1]));
        store.insert("enc.mu.w", Tensor::from_rows(&[vec![1.0]]));
        store.insert("enc.mu.b", Tensor::vector(vec![0.25]));
        store.insert("enc.lv.w", Tensor::from_rows(&[vec![0.0]]));
        store.insert("enc.lv.b", Tensor::zeros(&[1]));

        let mut g = Graph::new();
        let (mu, _lv) = encoder_forward(&mut g, &store, 1, &input).unwrap();

        // By hand: h0 = tanh(x). Node 0: message = h0(1) + 2·0.5 = tanh(2)+1;
        // update = tanh(h0(0) + m) = tanh(tanh(1) + tanh(2) + 1); mu adds 0.25.
        let h0 = (1.0f64).tanh();
        let h1 = (2.0f64).tanh();
        let expect0 = (h0 + (h1 + 1.0)).tanh() + 0.25;
        let expect1 = (h1 + (h0 + 1.0)).tanh() + 0.25;
        assert_abs_diff_eq!(g.value(mu).at(0, 0), expect0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(mu).at(1, 0), expect1, epsilon = 1e-12);
    }

    #[test]
    fn isolated_node_gets_zero_message() {
        let graph = ResidueGraph {
            nodes: vec![GraphNode { position: Vector3::zeros(), features: vec![0.0, 0.0] }],
            edges: vec![],
            threshold: 8.0,
        };
        let input = EncoderInput::from_graph(&graph, false, 3);
        assert_eq!(input.a_norm.data(), &[0.0]);
        assert_eq!(input.e_agg.data(), &[0.0, 0.0, 0.0]);
    }
}
