//! Threshold-search subgraph extraction and explanation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{explain, Explanation, ExplainError, MaskOptConfig, Method, Target};
use crate::graph::Dataset;
use crate::model::Model;

/// Edges kept by the threshold search and the nodes they span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub threshold: f64,
    /// Sorted `(u, v)` pairs, `u < v`.
    pub edges: Vec<(usize, usize)>,
    pub nodes: Vec<usize>,
}

/// Largest threshold `t` among the explanation's edge scores such that the
/// edges scoring at least `t` span `v_m` nodes. `None` when even the whole
/// computation subgraph spans fewer than `v_m` nodes.
pub fn extract_subgraph(ex: &Explanation, v_m: usize) -> Result<Option<Extraction>, ExplainError> {
    if v_m < 2 {
        return Err(ExplainError::Invalid(format!("V_M must be at least 2, got {v_m}")));
    }
    if ex.edge_scores.iter().any(|e| e.score.is_nan()) {
        return Err(ExplainError::NonFinite("edge score".into()));
    }
    let mut order: Vec<usize> = (0..ex.edge_scores.len()).collect();
    order.sort_by(|&a, &b| ex.edge_scores[b].score.total_cmp(&ex.edge_scores[a].score).then(a.cmp(&b)));
    let mut nodes = BTreeSet::new();
    let mut i = 0;
    while i < order.len() {
        let t = ex.edge_scores[order[i]].score;
        let mut j = i;
        while j < order.len() && ex.edge_scores[order[j]].score == t {
            let e = ex.edge_scores[order[j]];
            nodes.insert(e.u);
            nodes.insert(e.v);
            j += 1;
        }
        if nodes.len() >= v_m {
            let mut edges: Vec<(usize, usize)> = order[..j]
                .iter()
                .map(|&k| (ex.edge_scores[k].u, ex.edge_scores[k].v))
                .collect();
            edges.sort_unstable();
            return Ok(Some(Extraction {
                threshold: t,
                edges,
                nodes: nodes.into_iter().collect(),
            }));
        }
        i = j;
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub precision: f64,
    /// `None` when the computation subgraph holds no important edge.
    pub recall: Option<f64>,
    pub accuracy: f64,
    pub true_positives: usize,
    pub extracted: usize,
    pub important: usize,
}

/// Precision over the extracted edges, recall over the important edges
/// inside the computation subgraph, accuracy over all its edges.
pub fn edge_metrics(
    extraction: &Extraction,
    important: &BTreeSet<(usize, usize)>,
    cs_edges: &[(usize, usize)],
) -> Result<EdgeMetrics, ExplainError> {
    if extraction.edges.is_empty() {
        return Err(ExplainError::Invalid("empty extraction".into()));
    }
    let cs: BTreeSet<(usize, usize)> = cs_edges.iter().copied().collect();
    let extracted: BTreeSet<(usize, usize)> = extraction.edges.iter().copied().collect();
    if let Some(e) = extracted.iter().find(|e| !cs.contains(e)) {
        return Err(ExplainError::Invalid(format!(
            "extracted edge {e:?} is outside the computation subgraph"
        )));
    }
    let tp = extracted.iter().filter(|e| important.contains(e)).count();
    let relevant = cs.iter().filter(|e| important.contains(e)).count();
    let correct = cs
        .iter()
        .filter(|e| extracted.contains(e) == important.contains(e))
        .count();
    Ok(EdgeMetrics {
        precision: tp as f64 / extracted.len() as f64,
        recall: (relevant > 0).then(|| tp as f64 / relevant as f64),
        accuracy: if cs.is_empty() { 0.0 } else { correct as f64 / cs.len() as f64 },
        true_positives: tp,
        extracted: extracted.len(),
        important: relevant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Selected features, best first.
    pub top_k: Vec<usize>,
    /// Number of per-node score vectors averaged.
    pub nodes: usize,
}

fn minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Min-max normalises each node's scores, averages them and selects the
/// top `k` features (ties to the lower index).
pub fn feature_metrics(
    per_node: &[Vec<f64>],
    important: &[usize],
    k: usize,
) -> Result<FeatureMetrics, ExplainError> {
    let Some(d) = per_node.first().map(Vec::len) else {
        return Err(ExplainError::Invalid("no feature scores to evaluate".into()));
    };
    if per_node.iter().any(|s| s.len() != d) {
        return Err(ExplainError::Invalid("feature score vectors differ in length".into()));
    }
    if k == 0 || d < k {
        return Err(ExplainError::Invalid(format!("top-{k} needs 1 <= K <= d = {d}")));
    }
    if per_node.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ExplainError::NonFinite("feature score".into()));
    }
    let mut avg = vec![0.0; d];
    for s in per_node {
        for (a, v) in avg.iter_mut().zip(minmax(s)) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= per_node.len() as f64);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]).then(a.cmp(&b)));
    let top_k = order[..k].to_vec();
    let imp: BTreeSet<usize> = important.iter().copied().collect();
    let top: BTreeSet<usize> = top_k.iter().copied().collect();
    let tp = top.intersection(&imp).count();
    let tn = (0..d).filter(|l| !top.contains(l) && !imp.contains(l)).count();
    Ok(FeatureMetrics {
        precision: tp as f64 / k as f64,
        recall: if imp.is_empty() { 0.0 } else { tp as f64 / imp.len() as f64 },
        accuracy: (tp + tn) as f64 / d as f64,
        top_k,
        nodes: per_node.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Minimum extracted-subgraph size; the dataset's motif size when unset.
    #[serde(default)]
    pub v_m: Option<usize>,
    pub top_k: usize,
    #[serde(default)]
    pub mask_opt: MaskOptConfig,
    /// Worker threads for per-node explanations.
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::GisstGrad, Method::GisstGlobal, Method::Grad, Method::MaskOpt],
            v_m: None,
            top_k: 40,
            mask_opt: MaskOptConfig::default(),
            threads: 1,
        }
    }
}

/// Mean over `n` evaluated nodes (`None` when `n = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMean {
    pub mean: Option<f64>,
    pub n: usize,
}

impl MetricMean {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            mean: (n > 0).then(|| values.iter().sum::<f64>() / n as f64),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEdgeResult {
    pub node: usize,
    pub method: Method,
    /// `None` when the node was excluded (computation subgraph below `V_M`).
    pub metrics: Option<EdgeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub edge_precision: MetricMean,
    pub edge_recall: MetricMean,
    pub edge_accuracy: MetricMean,
    pub feat_precision: MetricMean,
    pub feat_recall: MetricMean,
    pub feat_accuracy: MetricMean,
    pub top_features: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub summaries: Vec<MethodSummary>,
    pub nodes: Vec<NodeEdgeResult>,
}

impl EvalReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// `dataset,method,metric,mean,n`; undefined means are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,method,metric,mean,n\n");
        for s in &self.summaries {
            let rows = [
                ("edge_precision", s.edge_precision),
                ("edge_recall", s.edge_recall),
                ("edge_accuracy", s.edge_accuracy),
                ("feat_precision", s.feat_precision),
                ("feat_recall", s.feat_recall),
                ("feat_accuracy", s.feat_accuracy),
            ];
            for (name, m) in rows {
                let mean = m.mean.map_or_else(|| "NA".to_string(), |v| v.to_string());
                let _ = writeln!(out, "{},{},{},{},{}", self.dataset, s.method, name, mean, m.n);
            }
        }
        out
    }
}

/// Explains every test node with each method. Edge metrics are averaged over
/// test nodes inside a motif, feature metrics over all test nodes.
pub fn evaluate_dataset(
    dataset: &Dataset,
    gisst: Option<&Model>,
    gcn: Option<&Model>,
    config: &EvalConfig,
) -> Result<EvalReport, ExplainError> {
    let graph = &dataset.graph;
    let test = &graph.masks().test;
    let mut per_method = Vec::new();
    for &method in &config.methods {
        let model = match method.model_kind() {
            crate::model::ModelKind::Gisst => gisst,
            crate::model::ModelKind::Gcn => gcn,
        }
        .ok_or_else(|| {
            ExplainError::Invalid(format!("{method} needs a trained {:?} model", method.model_kind()))
        })?;
        let explanations = crate::par_map(test, config.threads, |&n| {
            explain(model, graph, method, n, &config.mask_opt)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        per_method.push((method, explanations));
    }
    evaluate_explanations(dataset, &per_method, config)
}

/// Scores precomputed single-node explanations of test nodes, one list per
/// method. Metrics are taken over the nodes present, in node order.
pub fn evaluate_explanations(
    dataset: &Dataset,
    per_method: &[(Method, Vec<Explanation>)],
    config: &EvalConfig,
) -> Result<EvalReport, ExplainError> {
    let graph = &dataset.graph;
    let gt = &dataset.ground_truth;
    let v_m = config.v_m.unwrap_or(gt.motif_size);
    let test = &graph.masks().test;
    if test.is_empty() {
        return Err(ExplainError::Invalid("dataset has no test nodes".into()));
    }
    let motif_nodes: BTreeSet<usize> = gt.all_motif_nodes().into_iter().collect();
    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    let mut summaries = Vec::new();
    let mut node_results = Vec::new();
    for (method, explanations) in per_method {
        let method = *method;
        let mut by_node: BTreeMap<usize, &Explanation> = BTreeMap::new();
        for ex in explanations {
            if ex.method != method {
                return Err(ExplainError::Invalid(format!(
                    "{} explanation listed under {method}",
                    ex.method
                )));
            }
            let &Target::Node(n) = &ex.target else {
                return Err(ExplainError::Invalid("group explanation in per-node evaluation".into()));
            };
            by_node.insert(n, ex);
        }
        if let Some(n) = by_node.keys().find(|n| !test_set.contains(n)) {
            return Err(ExplainError::Invalid(format!("{method} explanation for non-test node {n}")));
        }
        if by_node.is_empty() {
            return Err(ExplainError::Invalid(format!("no {method} explanations")));
        }
        let (nodes, ordered): (Vec<usize>, Vec<&Explanation>) = by_node.into_iter().unzip();

        let (mut prec, mut rec, mut acc) = (Vec::new(), Vec::new(), Vec::new());
        for (ex, &node) in ordered.iter().zip(&nodes) {
            if !motif_nodes.contains(&node) {
                continue;
            }
            let cs: Vec<(usize, usize)> = ex.edge_scores.iter().map(|e| (e.u, e.v)).collect();
            let metrics = match extract_subgraph(ex, v_m)? {
                Some(extraction) => Some(edge_metrics(&extraction, &gt.important_edges, &cs)?),
                None => None,
            };
            if let Some(m) = &metrics {
                prec.push(m.precision);
                acc.push(m.accuracy);
                rec.extend(m.recall);
            }
            node_results.push(NodeEdgeResult {
                node,
                method,
                metrics,
            });
        }
        let per_node: Vec<Vec<f64>> = ordered.iter().map(|e| e.feature_scores.clone()).collect();
        let fm = feature_metrics(&per_node, &gt.important_features, config.top_k)?;
        let feat = |v: f64| MetricMean {
            mean: Some(v),
            n: fm.nodes,
        };
        summaries.push(MethodSummary {
            method,
            edge_precision: MetricMean::of(&prec),
            edge_recall: MetricMean::of(&rec),
            edge_accuracy: MetricMean::of(&acc),
            feat_precision: feat(fm.precision),
            feat_recall: feat(fm.recall),
            feat_accuracy: feat(fm.accuracy),
            top_features: fm.top_k.clone(),
        });
    }
    Ok(EvalReport {
        dataset: dataset.spec.kind.name().to_string(),
        summaries,
        nodes: node_results,
    })
}
