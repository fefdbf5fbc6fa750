//! GCN classifier wrapped with the importance layer.
//!
//! The importance layer owns one logit per node feature (`m`) and a weight
//! vector over concatenated source/target features (`b`), optionally extended
//! with edge-feature coefficients (`a`) and per-edge-type copies of both.
//! Feature probabilities `σ(m)` scale the input columns and edge probabilities
//! weight the adjacency before GCN normalisation.

mod layers;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::graph::Graph;

pub use layers::{
    directed_edge_features, dropout, edge_probs, feature_probs, gcn_forward, gcn_forward_masked,
    propagation,
    xavier_uniform, EdgeScorerVars, Propagation,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("edge features have width {got}, parameters expect {expected}")]
    EdgeFeatureMismatch { expected: usize, got: usize },
    #[error("edge type {edge_type} has no parameters ({known} types known)")]
    UnknownEdgeType { edge_type: usize, known: usize },
    #[error("typed edge parameters need edge types on the graph")]
    MissingEdgeTypes,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// GCN with the importance layer.
    Gisst,
    /// GCN on the raw graph; used by the post-hoc baselines.
    Gcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_units: usize,
    /// Graph convolution layers, including the output layer.
    pub num_layers: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub l1_edge: f64,
    pub ent_edge: f64,
    pub l1_feat: f64,
    pub ent_feat: f64,
    pub epochs: usize,
    #[serde(default)]
    pub use_edge_features: bool,
    #[serde(default)]
    pub use_edge_types: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gisst,
            hidden_units: 32,
            num_layers: 3,
            dropout_rate: 0.1,
            learning_rate: 0.005,
            l2_penalty: 0.0005,
            l1_edge: 0.005,
            ent_edge: 0.01,
            l1_feat: 0.0005,
            ent_feat: 0.001,
            epochs: 1000,
            use_edge_features: false,
            use_edge_types: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let rates = [("dropout_rate", self.dropout_rate), ("learning_rate", self.learning_rate)];
        for (name, v) in rates {
            if !(0.0..1.0).contains(&v) {
                return Err(ModelError::Config(format!("{name} = {v} not in [0, 1)")));
            }
        }
        let penalties = [
            ("l2_penalty", self.l2_penalty),
            ("l1_edge", self.l1_edge),
            ("ent_edge", self.ent_edge),
            ("l1_feat", self.l1_feat),
            ("ent_feat", self.ent_feat),
        ];
        for (name, v) in penalties {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::Config(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.num_layers == 0 || self.hidden_units == 0 {
            return Err(ModelError::Config("need at least one layer and one hidden unit".into()));
        }
        if self.kind == ModelKind::Gcn && (self.use_edge_features || self.use_edge_types) {
            return Err(ModelError::Config(
                "edge attributes are only used by the importance layer".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of a stack of graph convolutions, `d → hidden → … → C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnStack {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl GcnStack {
    /// Xavier-uniform weights and zero biases.
    pub fn init(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(out_dim);
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for pair in dims.windows(2) {
            weights.push(xavier_uniform(&[pair[0], pair[1]], rng)?);
            biases.push(Tensor::zeros(&[pair[1]]));
        }
        Ok(Self { weights, biases })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedEdgeParams {
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
}

/// Importance-layer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GisstParams {
    /// Feature logits; `σ(m_l)` is the importance of feature `l`.
    pub m: Vec<f64>,
    /// Edge attention weights over `[x_i ⊙ p || x_j ⊙ p]`, length `2d`.
    pub b: Vec<f64>,
    /// Edge-feature coefficients, length `h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    /// Per-edge-type `(b_r, a_r)`; when non-empty these replace `b` and `a`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub typed: Vec<TypedEdgeParams>,
}

impl GisstParams {
    /// `m = 0` (every feature starts at probability 0.5); `b`, `a` and their
    /// typed copies are Xavier-uniform column vectors.
    pub fn init(
        num_features: usize,
        edge_feature_dim: Option<usize>,
        num_edge_types: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let column = |len: usize, rng: &mut ChaCha8Rng| -> Result<Vec<f64>, ModelError> {
            Ok(xavier_uniform(&[len, 1], rng)?.into_data())
        };
        let b = column(2 * num_features, rng)?;
        let a = edge_feature_dim.map(|h| column(h, rng)).transpose()?;
        let mut typed = Vec::new();
        for _ in 0..num_edge_types.unwrap_or(0) {
            typed.push(TypedEdgeParams {
                b: column(2 * num_features, rng)?,
                a: edge_feature_dim.map(|h| column(h, rng)).transpose()?,
            });
        }
        Ok(Self {
            m: vec![0.0; num_features],
            b,
            a,
            typed,
        })
    }

    /// `σ(m)`.
    pub fn feature_probabilities(&self) -> Vec<f64> {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::vector(self.m.clone()));
        let p = feature_probs(&mut tape, m);
        tape.value(p).data().to_vec()
    }
}

/// Tape handles for every trainable tensor, in optimiser order.
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub m: Option<Var>,
    pub b: Option<Var>,
    pub a: Option<Var>,
    pub typed: Vec<EdgeScorerVars>,
}

impl ParamVars {
    /// All handles in the order used by [`Model::param_slices_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.weights.iter().chain(&self.biases).copied().collect();
        v.extend(self.m);
        v.extend(self.b);
        v.extend(self.a);
        for t in &self.typed {
            v.push(t.b);
            v.extend(t.a);
        }
        v
    }
}

/// Result of recording a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    /// Directed-edge probabilities (importance layer only).
    pub edge_probs: Option<Var>,
    /// Feature probabilities (importance layer only).
    pub feat_probs: Option<Var>,
    pub params: ParamVars,
}

/// Which optimiser group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// GCN weight matrices; subject to the L2 penalty.
    Weight,
    /// GCN biases.
    Bias,
    /// Importance-layer parameters.
    Importance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub config: ModelConfig,
    pub gcn: GcnStack,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gisst: Option<GisstParams>,
    pub seed: u64,
}

impl Model {
    /// Initialises parameters for `graph`'s feature, class and edge-attribute
    /// dimensions.
    pub fn init(config: ModelConfig, graph: &Graph, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcn = GcnStack::init(
            graph.num_features(),
            config.hidden_units,
            graph.num_classes(),
            config.num_layers,
            &mut rng,
        )?;
        let gisst = match config.kind {
            ModelKind::Gcn => None,
            ModelKind::Gisst => {
                let h = if config.use_edge_features {
                    Some(graph.edge_features().map(Tensor::cols).ok_or_else(|| {
                        ModelError::Config("use_edge_features set but graph has none".into())
                    })?)
                } else {
                    None
                };
                let types = if config.use_edge_types {
                    let t = graph.edge_types().ok_or(ModelError::MissingEdgeTypes)?;
                    Some(t.iter().max().map_or(1, |m| m + 1).max(2))
                } else {
                    None
                };
                Some(GisstParams::init(graph.num_features(), h, types, &mut rng)?)
            }
        };
        Ok(Self {
            config,
            gcn,
            gisst,
            seed,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn num_layers(&self) -> usize {
        self.gcn.weights.len()
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let mut vars = ParamVars {
            weights: self.gcn.weights.iter().map(|w| tape.param(w.clone())).collect(),
            biases: self.gcn.biases.iter().map(|b| tape.param(b.clone())).collect(),
            ..ParamVars::default()
        };
        if let Some(g) = &self.gisst {
            vars.m = Some(tape.param(Tensor::vector(g.m.clone())));
            vars.b = Some(tape.param(Tensor::vector(g.b.clone())));
            vars.a = g.a.as_ref().map(|a| tape.param(Tensor::vector(a.clone())));
            vars.typed = g
                .typed
                .iter()
                .map(|t| EdgeScorerVars {
                    b: tape.param(Tensor::vector(t.b.clone())),
                    a: t.a.as_ref().map(|a| tape.param(Tensor::vector(a.clone()))),
                })
                .collect();
        }
        vars
    }

    /// Mutable parameter buffers in the same order as [`ParamVars::all`].
    pub fn param_slices_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        for w in &mut self.gcn.weights {
            out.push((ParamGroup::Weight, w.data_mut()));
        }
        for b in &mut self.gcn.biases {
            out.push((ParamGroup::Bias, b.data_mut()));
        }
        if let Some(g) = &mut self.gisst {
            out.push((ParamGroup::Importance, &mut g.m));
            out.push((ParamGroup::Importance, &mut g.b));
            if let Some(a) = &mut g.a {
                out.push((ParamGroup::Importance, a));
            }
            for t in &mut g.typed {
                out.push((ParamGroup::Importance, &mut t.b));
                if let Some(a) = &mut t.a {
                    out.push((ParamGroup::Importance, a));
                }
            }
        }
        out
    }

    /// Importance probabilities for `graph`: directed-edge probabilities and
    /// `X ⊙ P_Xs`, or `None` for a plain GCN.
    pub fn record_importance(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        vars: &ParamVars,
    ) -> Result<Option<(Var, Var, Var)>, ModelError> {
        let (Some(m), Some(b)) = (vars.m, vars.b) else {
            return Ok(None);
        };
        let x = tape.constant(graph.features().clone());
        let p = feature_probs(tape, m);
        let masked_x = tape.col_scale(x, p)?;
        let scorers = if vars.typed.is_empty() {
            vec![EdgeScorerVars { b, a: vars.a }]
        } else {
            vars.typed.clone()
        };
        let uses_edge_feats = scorers.iter().any(|s| s.a.is_some());
        let z = if uses_edge_feats {
            let z = directed_edge_features(graph).ok_or(ModelError::EdgeFeatureMismatch {
                expected: 1,
                got: 0,
            })?;
            Some(tape.constant(z))
        } else {
            None
        };
        let probs = edge_probs(tape, graph, masked_x, &scorers, z)?;
        Ok(Some((probs, p, masked_x)))
    }

    /// Records the full forward pass. Dropout is active iff `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Forward, ModelError> {
        let params = self.register(tape);
        let (edge_weights, h0, edge_probs, feat_probs) =
            match self.record_importance(tape, graph, &params)? {
                Some((probs, p, masked_x)) => (probs, masked_x, Some(probs), Some(p)),
                None => {
                    let ones = tape.constant(Tensor::filled(&[graph.directed_edges().len()], 1.0));
                    let x = tape.constant(graph.features().clone());
                    (ones, x, None, None)
                }
            };
        let logits = gcn_forward(
            tape,
            graph,
            &params.weights,
            &params.biases,
            edge_weights,
            h0,
            self.config.dropout_rate,
            rng,
        )?;
        Ok(Forward {
            logits,
            edge_probs,
            feat_probs,
            params,
        })
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, graph: &Graph) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, graph, None)?;
        Ok(tape.value(f.logits).clone())
    }

    /// Directed-edge and feature probabilities (importance layer only).
    pub fn importance(&self, graph: &Graph) -> Result<Option<(Vec<f64>, Vec<f64>)>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        Ok(self
            .record_importance(&mut tape, graph, &vars)?
            .map(|(e, p, _)| (tape.value(e).data().to_vec(), tape.value(p).data().to_vec())))
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: Model = serde_json::from_str(text)?;
        model.config.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Row-wise argmax (ties go to the lower class).
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `nodes` whose prediction matches its label (0 for no nodes).
pub fn accuracy(logits: &Tensor, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let pred = predictions(logits);
    let hits = nodes.iter().filter(|&&n| pred[n] == labels[n]).count();
    hits as f64 / nodes.len() as f64
}
