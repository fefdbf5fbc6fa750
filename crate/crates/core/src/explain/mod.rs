//! Edge and feature importance scores, subgraph extraction and explanation
//! metrics.
//!
//! Every method scores the undirected edges of the target's computation
//! subgraph (the induced `L`-hop neighbourhood for an `L`-layer model) and all
//! `d` features. A directed pair of scores is folded into one undirected score
//! by averaging.

mod dot;
mod metrics;
mod scores;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::graph::GraphError;
use crate::model::{ModelError, ModelKind};

pub use dot::to_dot;
pub use metrics::{
    evaluate_dataset, evaluate_explanations, extract_subgraph, feature_metrics, edge_metrics,
    EdgeMetrics, EvalConfig, EvalReport, Extraction, FeatureMetrics, MethodSummary, MetricMean,
    NodeEdgeResult,
};
pub use scores::{
    computation_view, explain, explain_group, gisst_global, gisst_grad, grad_baseline,
    mask_opt_baseline, ComputationView, MaskOptConfig,
};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{method} needs a {expected:?} model")]
    WrongModel { method: Method, expected: ModelKind },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Learned probabilities: `P_As` for edges, `σ(m)` for features.
    GisstGlobal,
    /// Gradients of the predicted-class loss with respect to `P_As`, `P_Xs`.
    GisstGrad,
    /// Gradients of a plain GCN with respect to unit edge weights and `X`.
    Grad,
    /// Post-hoc optimisation of soft edge and feature masks on a plain GCN.
    MaskOpt,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::GisstGlobal,
        Method::GisstGrad,
        Method::Grad,
        Method::MaskOpt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GisstGlobal => "gisst-global",
            Method::GisstGrad => "gisst-grad",
            Method::Grad => "grad",
            Method::MaskOpt => "mask-opt",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Model kind the method explains.
    pub fn model_kind(self) -> ModelKind {
        match self {
            Method::GisstGlobal | Method::GisstGrad => ModelKind::Gisst,
            Method::Grad | Method::MaskOpt => ModelKind::Gcn,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Node(usize),
    Group(Vec<usize>),
}

impl Target {
    pub fn nodes(&self) -> &[usize] {
        match self {
            Target::Node(n) => std::slice::from_ref(n),
            Target::Group(v) => v,
        }
    }
}

/// Score of one undirected edge `(u, v)`, `u < v`, in parent node ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub u: usize,
    pub v: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explanation {
    pub method: Method,
    pub target: Target,
    /// Graph layers of the explained model (the computation-subgraph radius).
    pub layers: usize,
    /// Nodes of the computation subgraph, ascending.
    pub nodes: Vec<usize>,
    /// One entry per computation-subgraph edge, sorted by `(u, v)`.
    pub edge_scores: Vec<EdgeScore>,
    /// One non-negative score per feature.
    pub feature_scores: Vec<f64>,
}

impl Explanation {
    pub fn edge_map(&self) -> BTreeMap<(usize, usize), f64> {
        self.edge_scores.iter().map(|e| ((e.u, e.v), e.score)).collect()
    }

    pub fn score(&self, u: usize, v: usize) -> Option<f64> {
        let key = (u.min(v), u.max(v));
        self.edge_scores
            .binary_search_by(|e| (e.u, e.v).cmp(&key))
            .ok()
            .map(|i| self.edge_scores[i].score)
    }

    pub fn to_json(&self) -> Result<String, ExplainError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ExplainError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ExplainError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
