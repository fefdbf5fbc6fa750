//! Composite loss, Adam and the full-batch training loop.
//!
//! The importance regularisers are means: over directed edges for the edge
//! probabilities and over the `d` features for the feature probabilities.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{one_hot, AutodiffError, Tape, Var};
use crate::graph::Graph;
use crate::model::{accuracy, Forward, Model, ModelConfig, ModelError, ParamGroup};

/// Probabilities are clamped into `[ENTROPY_EPS, 1 - ENTROPY_EPS]` before
/// taking logs.
pub const ENTROPY_EPS: f64 = 1e-7;

const DROPOUT_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Mean of the entries (`0` for an empty vector).
pub fn l1_reg(tape: &mut Tape, probs: Var) -> Var {
    tape.mean(probs)
}

/// Mean binary entropy `-(p log p + (1 - p) log(1 - p))` of clamped entries.
pub fn entropy_reg(tape: &mut Tape, probs: Var) -> Result<Var, TrainError> {
    let q = tape.clamp(probs, ENTROPY_EPS, 1.0 - ENTROPY_EPS);
    let log_q = tape.log(q)?;
    let q_log_q = tape.hadamard(q, log_q)?;
    let one_minus = tape.neg(q);
    let one_minus = tape.add_scalar(one_minus, 1.0);
    let log_one_minus = tape.log(one_minus)?;
    let second = tape.hadamard(one_minus, log_one_minus)?;
    let sum = tape.add(q_log_q, second)?;
    let mean = tape.mean(sum);
    Ok(tape.neg(mean))
}

/// Per-term values of the training objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class_loss: f64,
    pub edge_l1: f64,
    pub edge_entropy: f64,
    pub feat_l1: f64,
    pub feat_entropy: f64,
    /// `½ Σ W²` over the GCN weight matrices (biases excluded).
    pub l2_weight_penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `class + λ₁ edge_l1 + λ₂ edge_ent + λ₃ feat_l1 + λ₄ feat_ent + λ₅ l2`.
    pub fn weighted_total(&self, config: &ModelConfig) -> f64 {
        self.class_loss
            + config.l1_edge * self.edge_l1
            + config.ent_edge * self.edge_entropy
            + config.l1_feat * self.feat_l1
            + config.ent_feat * self.feat_entropy
            + config.l2_penalty * self.l2_weight_penalty
    }
}

/// `½ Σ W²` over the weight matrices of `model`.
pub fn l2_weight_penalty(model: &Model) -> f64 {
    0.5 * model
        .gcn
        .weights
        .iter()
        .flat_map(|w| w.data())
        .map(|v| v * v)
        .sum::<f64>()
}

/// The differentiable part of the objective recorded on a tape. The L2 term
/// is left to the optimiser's weight decay, which has the same gradient.
pub struct RecordedLoss {
    pub objective: Var,
    class: Var,
    terms: Option<[Var; 4]>,
}

impl RecordedLoss {
    pub fn breakdown(&self, tape: &Tape, model: &Model) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item();
        let mut b = LossBreakdown {
            class_loss: v(self.class),
            l2_weight_penalty: l2_weight_penalty(model),
            ..LossBreakdown::default()
        };
        if let Some([el1, eent, fl1, fent]) = self.terms {
            b.edge_l1 = v(el1);
            b.edge_entropy = v(eent);
            b.feat_l1 = v(fl1);
            b.feat_entropy = v(fent);
        }
        b.total = b.weighted_total(&model.config);
        b
    }
}

/// Records cross-entropy on `nodes` plus the weighted importance regularisers.
pub fn record_loss(
    tape: &mut Tape,
    model: &Model,
    graph: &Graph,
    forward: &Forward,
    nodes: &[usize],
) -> Result<RecordedLoss, TrainError> {
    let targets = Arc::new(one_hot(graph.labels(), graph.num_classes()));
    let class = tape.softmax_cross_entropy(forward.logits, targets, nodes.into())?;
    let (Some(edge), Some(feat)) = (forward.edge_probs, forward.feat_probs) else {
        return Ok(RecordedLoss {
            objective: class,
            class,
            terms: None,
        });
    };
    let c = &model.config;
    let terms = [
        l1_reg(tape, edge),
        entropy_reg(tape, edge)?,
        l1_reg(tape, feat),
        entropy_reg(tape, feat)?,
    ];
    let mut objective = class;
    for (term, coef) in terms.iter().zip([c.l1_edge, c.ent_edge, c.l1_feat, c.ent_feat]) {
        let scaled = tape.scale(*term, coef);
        objective = tape.add(objective, scaled)?;
    }
    Ok(RecordedLoss {
        objective,
        class,
        terms: Some(terms),
    })
}

/// Evaluation-mode loss on the training nodes.
pub fn total_loss(model: &Model, graph: &Graph) -> Result<LossBreakdown, TrainError> {
    let mut tape = Tape::new();
    let forward = model.forward(&mut tape, graph, None)?;
    let loss = record_loss(&mut tape, model, graph, &forward, &graph.masks().train)?;
    Ok(loss.breakdown(&tape, model))
}

/// Adam with bias correction and optional per-tensor L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `weight_decay[i]` adds `wd · θ` to the gradient of tensor
    /// `i`. Moment buffers are created on the first call.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        weight_decay: &[f64],
    ) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != weight_decay.len() {
            return Err(TrainError::Invalid(format!(
                "adam got {} params, {} grads, {} decay terms",
                params.len(),
                grads.len(),
                weight_decay.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || self.m.get(i).map(Vec::len) != Some(p.len()) {
                return Err(TrainError::Invalid(format!(
                    "adam shape mismatch for tensor {i}: param {}, grad {}",
                    p.len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let g = grads[i][k] + weight_decay[i] * p[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: ModelConfig,
    /// One record per epoch: the training-step loss and evaluation-mode
    /// accuracies of the parameters that step started from.
    pub history: Vec<EpochRecord>,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
    pub final_test_acc: f64,
    /// Evaluation-mode loss of the final parameters.
    pub final_loss: LossBreakdown,
    pub model: Model,
    /// Not persisted, so reports stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn history_csv(&self) -> String {
        let mut out =
            String::from("epoch,class_loss,edge_l1,edge_entropy,feat_l1,feat_entropy,total,train_acc,val_acc\n");
        for r in &self.history {
            let l = &r.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                l.class_loss,
                l.edge_l1,
                l.edge_entropy,
                l.feat_l1,
                l.feat_entropy,
                l.total,
                r.train_acc,
                r.val_acc
            );
        }
        out
    }
}

fn accuracies(model: &Model, graph: &Graph) -> Result<(f64, f64, f64), TrainError> {
    let logits = model.logits(graph)?;
    let m = graph.masks();
    let labels = graph.labels();
    Ok((
        accuracy(&logits, labels, &m.train),
        accuracy(&logits, labels, &m.val),
        accuracy(&logits, labels, &m.test),
    ))
}

fn check_finite(epoch: usize, loss: &LossBreakdown) -> Result<(), TrainError> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Diverged {
            epoch,
            detail: format!("non-finite loss {loss:?}"),
        })
    }
}

/// Full-batch training on the graph's train mask for `config.epochs` epochs.
/// The returned model holds the parameters after the last epoch.
pub fn train(graph: &Graph, config: &ModelConfig, seed: u64) -> Result<TrainReport, TrainError> {
    let started = Instant::now();
    if graph.masks().train.is_empty() {
        return Err(TrainError::Invalid("graph has no training nodes".into()));
    }
    let mut model = Model::init(config.clone(), graph, seed)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut adam = Adam::new(config.learning_rate);
    let decay: Vec<f64> = model
        .param_slices_mut()
        .iter()
        .map(|(group, _)| match group {
            ParamGroup::Weight => config.l2_penalty,
            _ => 0.0,
        })
        .collect();
    let train_nodes = graph.masks().train.clone();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (train_acc, val_acc, test_acc) = accuracies(&model, graph)?;
        let mut tape = Tape::new();
        let forward = model.forward(&mut tape, graph, Some(&mut dropout_rng))?;
        let loss = record_loss(&mut tape, &model, graph, &forward, &train_nodes)?;
        let breakdown = loss.breakdown(&tape, &model);
        check_finite(epoch, &breakdown)?;
        tape.backward(loss.objective)?;
        let vars = forward.params.all();
        // Parameters the forward pass never touched (the shared edge scorer
        // when typed scorers replace it) get a zero gradient.
        let zeros: Vec<Vec<f64>> = vars.iter().map(|&v| vec![0.0; tape.value(v).len()]).collect();
        let grads: Vec<&[f64]> = vars
            .iter()
            .zip(&zeros)
            .map(|(&v, z)| tape.grad(v).unwrap_or(z))
            .collect();
        let mut slices = model.param_slices_mut();
        let mut params: Vec<&mut [f64]> = slices.iter_mut().map(|(_, s)| &mut **s).collect();
        adam.step(&mut params, &grads, &decay)?;
        history.push(EpochRecord {
            epoch,
            loss: breakdown,
            train_acc,
            val_acc,
            test_acc,
        });
    }
    let final_loss = total_loss(&model, graph)?;
    check_finite(config.epochs, &final_loss)?;
    let (final_train_acc, final_val_acc, final_test_acc) = accuracies(&model, graph)?;
    Ok(TrainReport {
        seed,
        config: config.clone(),
        history,
        final_train_acc,
        final_val_acc,
        final_test_acc,
        final_loss,
        model,
        wall_clock: started.elapsed(),
    })
}

/// Hyperparameter grid; every field lists the values to try.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub hidden_units: Vec<usize>,
    pub num_layers: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub l2_penalty: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub l1_edge: Vec<f64>,
    pub ent_edge: Vec<f64>,
    pub l1_feat: Vec<f64>,
    pub ent_feat: Vec<f64>,
}

impl Grid {
    /// The grid tuned for the importance-layer model.
    pub fn gisst() -> Self {
        Self {
            hidden_units: vec![16, 32],
            num_layers: vec![2, 3, 4],
            learning_rate: vec![0.001, 0.005],
            l2_penalty: vec![0.0005, 0.005],
            dropout_rate: vec![0.1, 0.2],
            l1_edge: vec![0.005, 0.05, 0.5],
            ent_edge: vec![0.01, 0.1, 1.0],
            l1_feat: vec![0.0005, 0.005, 0.05],
            ent_feat: vec![0.001, 0.01, 0.1],
        }
    }

    /// The grid tuned for the plain GCN used by the post-hoc baselines.
    pub fn gcn() -> Self {
        Self {
            hidden_units: vec![16, 32],
            num_layers: vec![2, 3, 4],
            learning_rate: vec![0.001, 0.005],
            l2_penalty: vec![0.0005, 0.005, 0.5],
            dropout_rate: vec![0.1, 0.2, 0.3, 0.4],
            l1_edge: vec![0.0],
            ent_edge: vec![0.0],
            l1_feat: vec![0.0],
            ent_feat: vec![0.0],
        }
    }

    /// A grid containing exactly `config`'s values.
    pub fn single(config: &ModelConfig) -> Self {
        Self {
            hidden_units: vec![config.hidden_units],
            num_layers: vec![config.num_layers],
            learning_rate: vec![config.learning_rate],
            l2_penalty: vec![config.l2_penalty],
            dropout_rate: vec![config.dropout_rate],
            l1_edge: vec![config.l1_edge],
            ent_edge: vec![config.ent_edge],
            l1_feat: vec![config.l1_feat],
            ent_feat: vec![config.ent_feat],
        }
    }

    /// Restricts the layer count (the tuned depth is fixed per dataset).
    pub fn with_layers(mut self, layers: usize) -> Self {
        self.num_layers = vec![layers];
        self
    }

    /// All combinations in lexicographic field order; the remaining fields of
    /// `base` (kind, epochs, edge attribute switches) are copied.
    pub fn configs(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &hidden_units in &self.hidden_units {
            for &num_layers in &self.num_layers {
                for &learning_rate in &self.learning_rate {
                    for &l2_penalty in &self.l2_penalty {
                        for &dropout_rate in &self.dropout_rate {
                            for &l1_edge in &self.l1_edge {
                                for &ent_edge in &self.ent_edge {
                                    for &l1_feat in &self.l1_feat {
                                        for &ent_feat in &self.ent_feat {
                                            out.push(ModelConfig {
                                                hidden_units,
                                                num_layers,
                                                learning_rate,
                                                l2_penalty,
                                                dropout_rate,
                                                l1_edge,
                                                ent_edge,
                                                l1_feat,
                                                ent_feat,
                                                ..base.clone()
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_index: usize,
    pub reports: Vec<TrainReport>,
}

impl GridResult {
    pub fn best(&self) -> &TrainReport {
        &self.reports[self.best_index]
    }
}

/// Index of the best report: highest final validation accuracy, then lowest
/// final total loss, then earliest position.
pub fn select_best(reports: &[TrainReport]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in reports.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &reports[b];
                r.final_val_acc > cur.final_val_acc
                    || (r.final_val_acc == cur.final_val_acc && r.final_loss.total < cur.final_loss.total)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Trains every configuration of `grid` with the same seed. With
/// `threads > 1` configurations run concurrently; results are merged in
/// configuration order, so the outcome does not depend on `threads`.
pub fn grid_search(
    graph: &Graph,
    grid: &Grid,
    base: &ModelConfig,
    seed: u64,
    threads: usize,
) -> Result<GridResult, TrainError> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(TrainError::Invalid("empty hyperparameter grid".into()));
    }
    let reports = crate::par_map(&configs, threads, |c| train(graph, c, seed))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let best_index = select_best(&reports).expect("non-empty");
    Ok(GridResult {
        best_index,
        reports,
    })
}
