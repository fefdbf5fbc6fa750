//! Differentiable building blocks recorded on a [`Tape`].

use std::sync::Arc;

use rand::Rng;

use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::Graph;

/// Uniform samples on `±sqrt(6 / (fan_in + fan_out))` for a 2-D shape.
pub fn xavier_uniform(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor, ModelError> {
    let &[fan_in, fan_out] = shape else {
        return Err(ModelError::Dimension(format!(
            "xavier initialisation needs a 2-D shape, got {shape:?}"
        )));
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Ok(Tensor::matrix(fan_in, fan_out, data)?)
}

/// Per-type edge scorer parameters on the tape.
#[derive(Debug, Clone, Copy)]
pub struct EdgeScorerVars {
    pub b: Var,
    pub a: Option<Var>,
}

/// `p = σ(m)`, one probability per feature shared by every node.
pub fn feature_probs(tape: &mut Tape, m: Var) -> Var {
    tape.sigmoid(m)
}

fn scorer_logits(
    tape: &mut Tape,
    graph: &Graph,
    masked_x: Var,
    scorer: EdgeScorerVars,
    edge_feats: Option<Var>,
) -> Result<Var, ModelError> {
    let d = tape.value(masked_x).cols();
    let b_len = tape.value(scorer.b).len();
    if b_len != 2 * d {
        return Err(ModelError::Dimension(format!(
            "edge attention weights have length {b_len}, expected {}",
            2 * d
        )));
    }
    // [x_i ⊙ p || x_j ⊙ p]ᵀ b splits into a source and a target half.
    let b_src = tape.slice(scorer.b, 0, d)?;
    let b_dst = tape.slice(scorer.b, d, 2 * d)?;
    let src_score = tape.matmul(masked_x, b_src)?;
    let dst_score = tape.matmul(masked_x, b_dst)?;
    let s = tape.gather(src_score, graph.sources().clone())?;
    let t = tape.gather(dst_score, graph.targets().clone())?;
    let mut logits = tape.add(s, t)?;
    match (scorer.a, edge_feats) {
        (Some(a), Some(z)) => {
            let h = tape.value(z).cols();
            let a_len = tape.value(a).len();
            if a_len != h {
                return Err(ModelError::EdgeFeatureMismatch {
                    expected: a_len,
                    got: h,
                });
            }
            let za = tape.matmul(z, a)?;
            logits = tape.add(logits, za)?;
        }
        (Some(a), None) => {
            return Err(ModelError::EdgeFeatureMismatch {
                expected: tape.value(a).len(),
                got: 0,
            })
        }
        (None, _) => {}
    }
    Ok(logits)
}

/// Edge importance probabilities over the directed edge list:
/// `σ([x_i ⊙ p || x_j ⊙ p]ᵀ b + z_ijᵀ a)`, with `(b, a)` chosen per edge type
/// when more than one scorer is given.
///
/// `masked_x` is `X ⊙ P_Xs`; `edge_feats`, when present, holds one row per
/// directed edge.
pub fn edge_probs(
    tape: &mut Tape,
    graph: &Graph,
    masked_x: Var,
    scorers: &[EdgeScorerVars],
    edge_feats: Option<Var>,
) -> Result<Var, ModelError> {
    let logits = match scorers {
        [] => return Err(ModelError::Dimension("no edge scorer parameters".into())),
        [single] => scorer_logits(tape, graph, masked_x, *single, edge_feats)?,
        typed => {
            let types = graph.edge_types().ok_or(ModelError::MissingEdgeTypes)?;
            if let Some(&bad) = types.iter().find(|&&t| t >= typed.len()) {
                return Err(ModelError::UnknownEdgeType {
                    edge_type: bad,
                    known: typed.len(),
                });
            }
            let mut total: Option<Var> = None;
            for (r, scorer) in typed.iter().enumerate() {
                let logits_r = scorer_logits(tape, graph, masked_x, *scorer, edge_feats)?;
                let select: Vec<f64> = (0..2 * types.len())
                    .map(|e| if types[e / 2] == r { 1.0 } else { 0.0 })
                    .collect();
                let select = tape.constant(Tensor::vector(select));
                let part = tape.hadamard(logits_r, select)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, part)?,
                    None => part,
                });
            }
            total.expect("at least two scorers")
        }
    };
    Ok(tape.sigmoid(logits))
}

/// Edge features expanded to one row per directed edge.
pub fn directed_edge_features(graph: &Graph) -> Option<Tensor> {
    let ef = graph.edge_features()?;
    let h = ef.cols();
    let mut data = Vec::with_capacity(2 * ef.rows() * h);
    for e in 0..ef.rows() {
        data.extend_from_slice(ef.row(e));
        data.extend_from_slice(ef.row(e));
    }
    Some(Tensor::matrix(2 * ef.rows(), h, data).expect("dims"))
}

/// Symmetric-normalised propagation coefficients for `A_w + I`.
#[derive(Debug, Clone, Copy)]
pub struct Propagation {
    /// `w_uv / sqrt(deg_u deg_v)` per directed edge.
    pub edge_norm: Var,
    /// `1 / deg_v` for the unit self-loop.
    pub self_norm: Var,
}

/// Degrees are `1 + Σ_{u→v} w_uv`, recomputed from the (learned) weights.
pub fn propagation(tape: &mut Tape, graph: &Graph, edge_weights: Var) -> Result<Propagation, ModelError> {
    let n = graph.num_nodes();
    let in_weight = tape.segment_sum(edge_weights, graph.targets().clone(), n)?;
    let deg = tape.add_scalar(in_weight, 1.0);
    let inv_sqrt = tape.powf(deg, -0.5)?;
    let src = tape.gather(inv_sqrt, graph.sources().clone())?;
    let dst = tape.gather(inv_sqrt, graph.targets().clone())?;
    let norm = tape.hadamard(edge_weights, src)?;
    let edge_norm = tape.hadamard(norm, dst)?;
    let self_norm = tape.powf(deg, -1.0)?;
    Ok(Propagation {
        edge_norm,
        self_norm,
    })
}

/// Inverted dropout: keep each entry with probability `1 - rate` and scale
/// kept entries by `1 / (1 - rate)`.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var, ModelError> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() >= rate { keep } else { 0.0 })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    Ok(tape.hadamard(x, mask)?)
}

/// GCN stack over a weighted graph. `h0` is the (masked) input feature
/// matrix; hidden layers use ReLU followed by dropout when `rng` is given.
#[allow(clippy::too_many_arguments)]
pub fn gcn_forward(
    tape: &mut Tape,
    graph: &Graph,
    weights: &[Var],
    biases: &[Var],
    edge_weights: Var,
    h0: Var,
    dropout_rate: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<Var, ModelError> {
    gcn_forward_masked(tape, graph, weights, biases, edge_weights, None, h0, dropout_rate, rng)
}

/// [`gcn_forward`] with an optional per-directed-edge factor applied to the
/// normalised messages; unlike `edge_weights` it leaves degrees untouched.
#[allow(clippy::too_many_arguments)]
pub fn gcn_forward_masked(
    tape: &mut Tape,
    graph: &Graph,
    weights: &[Var],
    biases: &[Var],
    edge_weights: Var,
    message_mask: Option<Var>,
    h0: Var,
    dropout_rate: f64,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> Result<Var, ModelError> {
    if tape.value(edge_weights).len() != graph.directed_edges().len() {
        return Err(ModelError::Dimension(format!(
            "{} edge weights for {} directed edges",
            tape.value(edge_weights).len(),
            graph.directed_edges().len()
        )));
    }
    let mut prop = propagation(tape, graph, edge_weights)?;
    if let Some(mask) = message_mask {
        prop.edge_norm = tape.hadamard(prop.edge_norm, mask)?;
    }
    let edges: Arc<[(usize, usize)]> = graph.directed_edges().clone();
    let mut h = h0;
    for (k, (&w, &b)) in weights.iter().zip(biases).enumerate() {
        let (in_dim, w_in) = (tape.value(h).cols(), tape.value(w).rows());
        if in_dim != w_in {
            return Err(ModelError::Dimension(format!(
                "layer {k} expects {w_in} inputs, got {in_dim}"
            )));
        }
        let hw = tape.matmul(h, w)?;
        let neigh = tape.scatter_aggregate(prop.edge_norm, hw, edges.clone())?;
        let own = tape.row_scale(hw, prop.self_norm)?;
        let agg = tape.add(neigh, own)?;
        h = tape.add_row_vector(agg, b)?;
        if k + 1 < weights.len() {
            h = tape.relu(h);
            if let Some(mut r) = rng.as_deref_mut() {
                h = dropout(tape, h, dropout_rate, &mut r)?;
            }
        }
    }
    Ok(h)
}
