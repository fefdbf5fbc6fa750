//! Importance scores for single nodes and node groups.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EdgeScore, Explanation, ExplainError, Method, Target};
use crate::autodiff::{one_hot, Tape, Tensor, Var};
use crate::graph::{bfs_distances, Graph};
use crate::model::{gcn_forward, gcn_forward_masked, predictions, Model};
use crate::train::{entropy_reg, Adam};

/// The induced `(L + 1)`-hop neighbourhood of a target set. It reproduces the
/// targets' outputs exactly: every node within `L` hops keeps all its edges
/// and therefore its degree.
#[derive(Debug, Clone)]
pub struct ComputationView {
    pub graph: Graph,
    /// Parent id of each local node, ascending.
    pub node_map: Vec<usize>,
    /// Parent undirected-edge index of each local edge.
    pub edge_map: Vec<usize>,
    pub layers: usize,
    /// Local ids of the targets.
    pub targets: Vec<usize>,
    /// Local nodes within `L` hops of a target (the computation subgraph).
    pub cs_nodes: Vec<usize>,
    /// Local undirected edges with both endpoints in `cs_nodes`.
    pub cs_edges: Vec<usize>,
}

impl ComputationView {
    fn explanation(&self, method: Method, target: Target, edge: Vec<f64>, feats: Vec<f64>) -> Explanation {
        let parent_nodes: Vec<usize> = self.cs_nodes.iter().map(|&k| self.node_map[k]).collect();
        let mut edge_scores: Vec<EdgeScore> = self
            .cs_edges
            .iter()
            .zip(edge)
            .map(|(&e, score)| {
                let (a, b) = self.graph.edges()[e];
                let (u, v) = (self.node_map[a], self.node_map[b]);
                EdgeScore {
                    u: u.min(v),
                    v: u.max(v),
                    score,
                }
            })
            .collect();
        edge_scores.sort_by_key(|e| (e.u, e.v));
        Explanation {
            method,
            target,
            layers: self.layers,
            nodes: parent_nodes,
            edge_scores,
            feature_scores: feats,
        }
    }

    /// Mean of the two directed values of every computation-subgraph edge.
    fn fold_directed(&self, directed: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.cs_edges
            .iter()
            .map(|&e| 0.5 * (f(directed[2 * e]) + f(directed[2 * e + 1])))
            .collect()
    }
}

pub fn computation_view(
    graph: &Graph,
    targets: &[usize],
    layers: usize,
) -> Result<ComputationView, ExplainError> {
    if targets.is_empty() {
        return Err(ExplainError::Invalid("no target nodes".into()));
    }
    if layers == 0 {
        return Err(ExplainError::Invalid("model has no layers".into()));
    }
    let dist = bfs_distances(graph, targets)?;
    let keep: Vec<usize> = (0..graph.num_nodes())
        .filter(|&n| dist[n].is_some_and(|d| d <= layers + 1))
        .collect();
    let (sub, node_map, edge_map) = graph.induced(&keep)?;
    let local_dist: Vec<usize> = node_map.iter().map(|&n| dist[n].expect("kept")).collect();
    let cs_nodes: Vec<usize> = (0..node_map.len()).filter(|&k| local_dist[k] <= layers).collect();
    let cs_edges: Vec<usize> = sub
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, &(a, b))| local_dist[a] <= layers && local_dist[b] <= layers)
        .map(|(i, _)| i)
        .collect();
    let mut local_targets: Vec<usize> = targets
        .iter()
        .map(|t| node_map.binary_search(t).expect("targets are kept"))
        .collect();
    local_targets.sort_unstable();
    local_targets.dedup();
    Ok(ComputationView {
        graph: sub,
        node_map,
        edge_map,
        layers,
        targets: local_targets,
        cs_nodes,
        cs_edges,
    })
}

fn require(model: &Model, method: Method) -> Result<(), ExplainError> {
    let expected = method.model_kind();
    if model.kind() != expected {
        return Err(ExplainError::WrongModel { method, expected });
    }
    let finite = model.gcn.weights.iter().chain(&model.gcn.biases).all(Tensor::is_finite)
        && model.gisst.as_ref().is_none_or(|g| {
            g.m.iter().chain(&g.b).all(|v| v.is_finite())
        });
    if !finite {
        return Err(ExplainError::NonFinite("model parameters".into()));
    }
    Ok(())
}

fn target_of(targets: &[usize]) -> Target {
    match targets {
        [single] => Target::Node(*single),
        many => Target::Group(many.to_vec()),
    }
}

/// Gradients of the mean predicted-class cross-entropy over the view's
/// targets with respect to the directed edge weights and the GCN input.
fn predicted_loss_grads(
    model: &Model,
    view: &ComputationView,
    edge_weights: Vec<f64>,
    h0: Tensor,
) -> Result<(Vec<f64>, Tensor), ExplainError> {
    let mut tape = Tape::new();
    let ws: Vec<Var> = model.gcn.weights.iter().map(|w| tape.constant(w.clone())).collect();
    let bs: Vec<Var> = model.gcn.biases.iter().map(|b| tape.constant(b.clone())).collect();
    let ew = tape.param(Tensor::vector(edge_weights));
    let shape = h0.shape().to_vec();
    let h = tape.param(h0);
    let logits = gcn_forward(&mut tape, &view.graph, &ws, &bs, ew, h, 0.0, None)?;
    let pred = predictions(tape.value(logits));
    let targets = Arc::new(one_hot(&pred, view.graph.num_classes()));
    let loss = tape.softmax_cross_entropy(logits, targets, view.targets.as_slice().into())?;
    if !tape.value(loss).item().is_finite() {
        return Err(ExplainError::NonFinite("predicted-class loss".into()));
    }
    tape.backward(loss)?;
    let ge = tape.grad(ew).expect("leaf").to_vec();
    let gh = Tensor::new(shape, tape.grad(h).expect("leaf").to_vec())?;
    Ok((ge, gh))
}

/// `Σ_{k ∈ CS} |g[k, l]|`, optionally weighting each entry by `X[k, l]`.
fn feature_grad_scores(view: &ComputationView, grad: &Tensor, times_x: bool) -> Vec<f64> {
    let x = view.graph.features();
    let d = x.cols();
    let mut out = vec![0.0; d];
    for &k in &view.cs_nodes {
        for (l, o) in out.iter_mut().enumerate() {
            let factor = if times_x { x.get(k, l) } else { 1.0 };
            *o += (grad.get(k, l) * factor).abs();
        }
    }
    out
}

fn masked_features(x: &Tensor, p: &[f64]) -> Tensor {
    let d = x.cols();
    let data = x.data().iter().enumerate().map(|(i, v)| v * p[i % d]).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Learned probabilities: the mean of the two directed `P_As` entries per
/// edge, and `σ(m)` per feature.
pub fn gisst_global(model: &Model, graph: &Graph, targets: &[usize]) -> Result<Explanation, ExplainError> {
    require(model, Method::GisstGlobal)?;
    let view = computation_view(graph, targets, model.num_layers())?;
    let (edge_p, feat_p) = model.importance(&view.graph)?.expect("importance model");
    let edges = view.fold_directed(&edge_p, |v| v);
    Ok(view.explanation(Method::GisstGlobal, target_of(targets), edges, feat_p))
}

/// `|∂L_pred / ∂P_As|` per edge and `Σ_k |∂L_pred / ∂P_Xs[k, l]|` per
/// feature, with `L_pred` the mean predicted-class loss over `targets`.
pub fn gisst_grad(model: &Model, graph: &Graph, targets: &[usize]) -> Result<Explanation, ExplainError> {
    require(model, Method::GisstGrad)?;
    let view = computation_view(graph, targets, model.num_layers())?;
    let (edge_p, feat_p) = model.importance(&view.graph)?.expect("importance model");
    let h0 = masked_features(view.graph.features(), &feat_p);
    // ∂L/∂P_Xs[k, l] = ∂L/∂H0[k, l] · X[k, l] since H0 = X ⊙ P_Xs.
    let (ge, gh) = predicted_loss_grads(model, &view, edge_p, h0)?;
    let edges = view.fold_directed(&ge, f64::abs);
    let feats = feature_grad_scores(&view, &gh, true);
    Ok(view.explanation(Method::GisstGrad, target_of(targets), edges, feats))
}

/// `|∂L_pred / ∂w_e|` at unit edge weights and `Σ_k |∂L_pred / ∂X[k, l]|`.
pub fn grad_baseline(model: &Model, graph: &Graph, targets: &[usize]) -> Result<Explanation, ExplainError> {
    require(model, Method::Grad)?;
    let view = computation_view(graph, targets, model.num_layers())?;
    let ones = vec![1.0; view.graph.directed_edges().len()];
    let (ge, gh) = predicted_loss_grads(model, &view, ones, view.graph.features().clone())?;
    let edges = view.fold_directed(&ge, f64::abs);
    let feats = feature_grad_scores(&view, &gh, false);
    Ok(view.explanation(Method::Grad, target_of(targets), edges, feats))
}

/// Fixed, untuned settings of the mask-optimisation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskOptConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Coefficient of the summed mask probabilities.
    pub size_coef: f64,
    /// Coefficient of the mean mask entropy.
    pub entropy_coef: f64,
}

impl Default for MaskOptConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            learning_rate: 0.01,
            size_coef: 0.005,
            entropy_coef: 1.0,
        }
    }
}

/// Soft masks fitted to keep one node's predicted class: one logit per
/// computation-subgraph edge (shared by both directions) and one per
/// feature, all starting at 0.
/// Edge masks scale normalised messages, so degrees stay those of the
/// unmasked graph. Scores are the final mask probabilities.
pub fn mask_opt_baseline(
    model: &Model,
    graph: &Graph,
    target: usize,
    config: &MaskOptConfig,
) -> Result<Explanation, ExplainError> {
    require(model, Method::MaskOpt)?;
    let view = computation_view(graph, &[target], model.num_layers())?;
    let g = &view.graph;
    let n_dir = g.directed_edges().len();
    let pred = predictions(&model.logits(g)?);
    let targets = Arc::new(one_hot(&pred, g.num_classes()));
    let mask_rows: Arc<[usize]> = view.targets.as_slice().into();

    // Masked directed edges are scattered into their slots; the rest pass
    // messages unchanged.
    let slots: Arc<[usize]> = view.cs_edges.iter().flat_map(|&e| [2 * e, 2 * e + 1]).collect();
    let mut fixed = vec![1.0; n_dir];
    for &s in slots.iter() {
        fixed[s] = 0.0;
    }
    let fixed = Tensor::vector(fixed);

    let pairs: Arc<[usize]> = (0..view.cs_edges.len()).flat_map(|i| [i, i]).collect();
    let mut edge_logits = vec![0.0; view.cs_edges.len()];
    let mut feat_logits = vec![0.0; g.num_features()];
    let mut adam = Adam::new(config.learning_rate);
    let sig = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect() };
    for step in 0..config.steps {
        let mut tape = Tape::new();
        let el = tape.param(Tensor::vector(edge_logits.clone()));
        let fl = tape.param(Tensor::vector(feat_logits.clone()));
        let em = tape.sigmoid(el);
        let fm = tape.sigmoid(fl);
        let both = tape.gather(em, pairs.clone())?;
        let scattered = tape.segment_sum(both, slots.clone(), n_dir)?;
        let fixed_v = tape.constant(fixed.clone());
        let mask = tape.add(scattered, fixed_v)?;
        let ones = tape.constant(Tensor::filled(&[n_dir], 1.0));
        let x = tape.constant(g.features().clone());
        let h0 = tape.col_scale(x, fm)?;
        let ws: Vec<Var> = model.gcn.weights.iter().map(|w| tape.constant(w.clone())).collect();
        let bs: Vec<Var> = model.gcn.biases.iter().map(|b| tape.constant(b.clone())).collect();
        let logits = gcn_forward_masked(&mut tape, g, &ws, &bs, ones, Some(mask), h0, 0.0, None)?;
        let mut loss = tape.softmax_cross_entropy(logits, targets.clone(), mask_rows.clone())?;
        for mask in [em, fm] {
            let size = tape.sum(mask);
            let size = tape.scale(size, config.size_coef);
            let ent = entropy_reg(&mut tape, mask).map_err(|e| ExplainError::Invalid(e.to_string()))?;
            let ent = tape.scale(ent, config.entropy_coef);
            loss = tape.add(loss, size)?;
            loss = tape.add(loss, ent)?;
        }
        if !tape.value(loss).item().is_finite() {
            return Err(ExplainError::NonFinite(format!("mask loss at step {step}")));
        }
        tape.backward(loss)?;
        let ge = tape.grad(el).expect("leaf").to_vec();
        let gf = tape.grad(fl).expect("leaf").to_vec();
        adam.step(&mut [&mut edge_logits, &mut feat_logits], &[&ge, &gf], &[0.0, 0.0])
            .map_err(|e| ExplainError::Invalid(e.to_string()))?;
    }
    Ok(view.explanation(Method::MaskOpt, Target::Node(target), sig(&edge_logits), sig(&feat_logits)))
}

/// Explanation of a single node.
pub fn explain(
    model: &Model,
    graph: &Graph,
    method: Method,
    target: usize,
    mask_opt: &MaskOptConfig,
) -> Result<Explanation, ExplainError> {
    match method {
        Method::GisstGlobal => gisst_global(model, graph, &[target]),
        Method::GisstGrad => gisst_grad(model, graph, &[target]),
        Method::Grad => grad_baseline(model, graph, &[target]),
        Method::MaskOpt => mask_opt_baseline(model, graph, target, mask_opt),
    }
}

/// Median (mean of the middle pair for even counts).
pub(super) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Explanation of a node set. Gradient methods differentiate the mean
/// predicted-class loss over the set; mask optimisation fits one mask per
/// node and takes the per-edge and per-feature median.
pub fn explain_group(
    model: &Model,
    graph: &Graph,
    method: Method,
    nodes: &[usize],
    mask_opt: &MaskOptConfig,
    threads: usize,
) -> Result<Explanation, ExplainError> {
    match method {
        Method::GisstGlobal => gisst_global(model, graph, nodes),
        Method::GisstGrad => gisst_grad(model, graph, nodes),
        Method::Grad => grad_baseline(model, graph, nodes),
        Method::MaskOpt => {
            if nodes.is_empty() {
                return Err(ExplainError::Invalid("no target nodes".into()));
            }
            let each = crate::par_map(nodes, threads, |&n| mask_opt_baseline(model, graph, n, mask_opt))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            let mut per_edge: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
            let mut node_set = std::collections::BTreeSet::new();
            for ex in &each {
                node_set.extend(ex.nodes.iter().copied());
                for e in &ex.edge_scores {
                    per_edge.entry((e.u, e.v)).or_default().push(e.score);
                }
            }
            let edge_scores = per_edge
                .into_iter()
                .map(|((u, v), mut s)| EdgeScore {
                    u,
                    v,
                    score: median(&mut s),
                })
                .collect();
            let d = graph.num_features();
            let feature_scores = (0..d)
                .map(|l| median(&mut each.iter().map(|e| e.feature_scores[l]).collect::<Vec<_>>()))
                .collect();
            Ok(Explanation {
                method,
                target: Target::Group(nodes.to_vec()),
                layers: model.num_layers(),
                nodes: node_set.into_iter().collect(),
                edge_scores,
                feature_scores,
            })
        }
    }
}
