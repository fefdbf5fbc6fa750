//! Reproducible run directories.
//!
//! A [`RunConfig`] fixes everything a run depends on. [`run`] writes the
//! generated dataset, trained checkpoints, per-node explanations and the
//! metric table under the configured output directory, then records a
//! `manifest.json` holding the normalised config and a SHA-256 hash of every
//! other file. Nothing time- or host-dependent is written, so two runs of the
//! same config produce byte-identical directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::explain::{
    evaluate_explanations, explain, EvalConfig, EvalReport, ExplainError, Explanation, MaskOptConfig, Method,
    Target,
};
use crate::graph::{generate, Dataset, DatasetKind, DatasetSpec, GeneratorParams, GraphError};
use crate::model::{ModelConfig, ModelError, ModelKind};
use crate::train::{train, TrainError, TrainReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const EXPLANATIONS_DIR: &str = "explanations";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("{}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Separate seeds for the synthetic graph and for model initialisation and
/// dropout, so model variance can be measured on a fixed dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub train: u64,
}

/// Everything a run depends on. Optional fields are filled with per-dataset
/// defaults by [`RunConfig::normalized`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub generator: Option<GeneratorParams>,
    pub seeds: Seeds,
    /// Importance-layer model used by the GISST methods.
    #[serde(default)]
    pub gisst: Option<ModelConfig>,
    /// Plain GCN used by the post-hoc baselines.
    #[serde(default)]
    pub gcn: Option<ModelConfig>,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    /// Minimum extracted-subgraph size; the motif size when unset.
    #[serde(default)]
    pub v_m: Option<usize>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub mask_opt: Option<MaskOptConfig>,
}

/// Tuned depth: 3 layers on the BA graphs, 4 on the trees.
pub fn default_layers(kind: DatasetKind) -> usize {
    match kind {
        DatasetKind::NoisyBaHouse | DatasetKind::NoisyBaCommunity => 3,
        DatasetKind::NoisyTreeCycle | DatasetKind::NoisyTreeGrid => 4,
        DatasetKind::PlantedEdgeFeature => 2,
    }
}

/// Default model config of `kind` for a dataset.
pub fn default_model_config(dataset: DatasetKind, kind: ModelKind) -> ModelConfig {
    let base = ModelConfig {
        kind,
        num_layers: default_layers(dataset),
        ..ModelConfig::default()
    };
    match kind {
        ModelKind::Gisst => ModelConfig {
            use_edge_features: dataset == DatasetKind::PlantedEdgeFeature,
            ..base
        },
        ModelKind::Gcn => ModelConfig {
            l1_edge: 0.0,
            ent_edge: 0.0,
            l1_feat: 0.0,
            ent_feat: 0.0,
            ..base
        },
    }
}

impl RunConfig {
    /// A config with every default filled in.
    pub fn new(dataset: DatasetKind, seeds: Seeds, methods: Vec<Method>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset,
            generator: None,
            seeds,
            gisst: None,
            gcn: None,
            methods,
            output_dir: output_dir.into(),
            v_m: None,
            top_k: None,
            mask_opt: None,
        }
        .normalized()
    }

    pub fn normalized(mut self) -> Self {
        let kind = self.dataset;
        self.generator.get_or_insert_with(|| GeneratorParams::defaults(kind));
        self.gisst.get_or_insert_with(|| default_model_config(kind, ModelKind::Gisst));
        self.gcn.get_or_insert_with(|| default_model_config(kind, ModelKind::Gcn));
        self.v_m.get_or_insert(kind.motif_size());
        self.top_k.get_or_insert(40);
        self.mask_opt.get_or_insert_with(MaskOptConfig::default);
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, cfg, kind) in [
            ("gisst", &self.gisst, ModelKind::Gisst),
            ("gcn", &self.gcn, ModelKind::Gcn),
        ] {
            if let Some(cfg) = cfg {
                if cfg.kind != kind {
                    return Err(PipelineError::Invalid(format!("{name} model config has kind {:?}", cfg.kind)));
                }
                cfg.validate()?;
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return Err(PipelineError::Invalid(format!("method {m} listed twice")));
        }
        if self.v_m == Some(0) || self.top_k == Some(0) {
            return Err(PipelineError::Invalid("v_m and top_k must be positive".into()));
        }
        Ok(())
    }

    /// Parses, normalises and validates.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text)?;
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            kind: self.dataset,
            seed: self.seeds.data,
            params: self
                .generator
                .clone()
                .unwrap_or_else(|| GeneratorParams::defaults(self.dataset)),
        }
    }

    pub fn eval_config(&self, threads: usize) -> EvalConfig {
        let defaults = EvalConfig::default();
        EvalConfig {
            methods: self.methods.clone(),
            v_m: self.v_m,
            top_k: self.top_k.unwrap_or(defaults.top_k),
            mask_opt: self.mask_opt.unwrap_or_default(),
            threads,
        }
    }

    fn model_config(&self, kind: ModelKind) -> ModelConfig {
        let cfg = match kind {
            ModelKind::Gisst => &self.gisst,
            ModelKind::Gcn => &self.gcn,
        };
        cfg.clone().unwrap_or_else(|| default_model_config(self.dataset, kind))
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Audit record of a directory: tool version, the inputs that produced it and
/// the hash of every file except the manifest itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: serde_json::Value,
    /// `/`-separated path relative to the directory → SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    /// Hashes every file under `dir`.
    pub fn build(dir: &Path, command: &str, inputs: serde_json::Value) -> Result<Self, PipelineError> {
        let mut files = BTreeMap::new();
        collect_hashes(dir, dir, &mut files)?;
        files.remove(MANIFEST_FILE);
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs,
            files,
        })
    }

    /// Builds the manifest for `dir` and writes it to `dir/manifest.json`.
    pub fn write(dir: &Path, command: &str, inputs: serde_json::Value) -> Result<Self, PipelineError> {
        let manifest = Self::build(dir, command, inputs)?;
        write_file(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        Ok(serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)?)
    }

    /// Paths whose current hash differs from the recorded one, including
    /// missing and unlisted files.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>, PipelineError> {
        let mut current = BTreeMap::new();
        collect_hashes(dir, dir, &mut current)?;
        current.remove(MANIFEST_FILE);
        let mut bad: Vec<String> = self
            .files
            .iter()
            .filter(|(p, h)| current.get(*p) != Some(*h))
            .map(|(p, _)| p.clone())
            .collect();
        bad.extend(current.keys().filter(|p| !self.files.contains_key(*p)).cloned());
        bad.sort();
        Ok(bad)
    }
}

fn collect_hashes(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), PipelineError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_hashes(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(())
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// File name of an explanation inside its method directory.
pub fn explanation_file_name(target: &Target) -> String {
    match target {
        Target::Node(n) => format!("node-{n}.json"),
        Target::Group(_) => "group.json".to_string(),
    }
}

/// Writes `dir/<method>/<target>.json` for each explanation and returns the
/// written paths.
pub fn save_explanations(dir: &Path, explanations: &[Explanation]) -> Result<Vec<PathBuf>, PipelineError> {
    explanations
        .iter()
        .map(|ex| {
            let path = dir.join(ex.method.name()).join(explanation_file_name(&ex.target));
            write_file(&path, &ex.to_json()?)?;
            Ok(path)
        })
        .collect()
}

/// Loads the single-node explanations in `dir/<method>/`, ordered by node.
pub fn load_explanations(dir: &Path, method: Method) -> Result<Vec<Explanation>, PipelineError> {
    let sub = dir.join(method.name());
    let mut out = Vec::new();
    for entry in fs::read_dir(&sub).map_err(io_err(&sub))? {
        let path = entry.map_err(io_err(&sub))?.path();
        let is_node = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("node-") && n.ends_with(".json"));
        if !is_node {
            continue;
        }
        let ex = Explanation::from_json(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
        if ex.method != method {
            return Err(PipelineError::Invalid(format!(
                "{} holds a {} explanation",
                path.display(),
                ex.method
            )));
        }
        out.push(ex);
    }
    out.sort_by_key(|ex| ex.target.nodes().to_vec());
    Ok(out)
}

/// Writes a trained model as `model.json`, `report.json` and `history.csv`.
pub fn save_training(dir: &Path, report: &TrainReport) -> Result<(), PipelineError> {
    write_file(&dir.join("model.json"), &report.model.to_json()?)?;
    write_file(&dir.join("report.json"), &report.to_json()?)?;
    write_file(&dir.join("history.csv"), &report.history_csv())?;
    Ok(())
}

/// Outputs of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dataset: Dataset,
    pub gisst: Option<TrainReport>,
    pub gcn: Option<TrainReport>,
    pub eval: EvalReport,
    pub manifest: Manifest,
}

/// Generates, trains the models the methods need, explains every test node,
/// scores the explanations and writes the manifest. `threads` only affects
/// speed.
pub fn run(config: &RunConfig, threads: usize) -> Result<RunOutcome, PipelineError> {
    let config = config.clone().normalized();
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(CONFIG_FILE), &config.to_json()?)?;

    let dataset = generate(&config.dataset_spec())?;
    write_file(&dir.join(DATASET_FILE), &dataset.to_json()?)?;

    let needs = |kind: ModelKind| config.methods.iter().any(|m| m.model_kind() == kind);
    let mut trained = BTreeMap::new();
    for (name, kind) in [("gisst", ModelKind::Gisst), ("gcn", ModelKind::Gcn)] {
        if needs(kind) {
            let report = train(&dataset.graph, &config.model_config(kind), config.seeds.train)?;
            save_training(&dir.join("models").join(name), &report)?;
            trained.insert(name, report);
        }
    }

    let eval_cfg = config.eval_config(threads);
    let test = &dataset.graph.masks().test;
    let mut per_method = Vec::new();
    for &method in &config.methods {
        let name = match method.model_kind() {
            ModelKind::Gisst => "gisst",
            ModelKind::Gcn => "gcn",
        };
        let model = &trained[name].model;
        let explanations = crate::par_map(test, threads, |&n| {
            explain(model, &dataset.graph, method, n, &eval_cfg.mask_opt)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        save_explanations(&dir.join(EXPLANATIONS_DIR), &explanations)?;
        per_method.push((method, explanations));
    }

    let eval = if per_method.is_empty() {
        EvalReport {
            dataset: config.dataset.name().to_string(),
            summaries: Vec::new(),
            nodes: Vec::new(),
        }
    } else {
        evaluate_explanations(&dataset, &per_method, &eval_cfg)?
    };
    write_file(&dir.join(METRICS_FILE), &eval.to_csv())?;
    write_file(&dir.join(EVAL_FILE), &serde_json::to_string_pretty(&eval)?)?;

    let manifest = Manifest::write(dir, "run", serde_json::to_value(&config)?)?;
    Ok(RunOutcome {
        dataset,
        gisst: trained.remove("gisst"),
        gcn: trained.remove("gcn"),
        eval,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path, methods: Vec<Method>) -> RunConfig {
        let mut cfg = RunConfig::new(DatasetKind::NoisyTreeCycle, Seeds { data: 3, train: 5 }, methods, dir);
        for m in [cfg.gisst.as_mut(), cfg.gcn.as_mut()].into_iter().flatten() {
            m.epochs = 3;
            m.hidden_units = 8;
            m.num_layers = 2;
        }
        let g = cfg.generator.as_mut().unwrap();
        g.tree_depth = 4;
        g.num_motifs = 3;
        cfg.mask_opt.as_mut().unwrap().steps = 2;
        cfg
    }

    #[test]
    fn config_round_trips_to_identical_normal_form() {
        let cfg = tiny(Path::new("out"), vec![Method::GisstGrad, Method::Grad]);
        let text = cfg.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn minimal_config_is_filled_with_defaults() {
        let text = r#"{"dataset":"noisy-tree-grid","seeds":{"data":1,"train":2},"methods":["gisst-grad"],"output_dir":"x"}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.gisst.as_ref().unwrap().num_layers, 4);
        assert_eq!(cfg.gcn.as_ref().unwrap().kind, ModelKind::Gcn);
        assert_eq!(cfg.v_m, Some(9));
        assert_eq!(cfg.top_k, Some(40));
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"dataset":"noisy-tree-grid","seeds":{"data":1,"train":2},"methods":[],"output_dir":"x","extra":1}"#;
        assert!(RunConfig::from_json(text).is_err());
        let nested = r#"{"dataset":"noisy-tree-grid","seeds":{"data":1,"train":2,"model":3},"methods":[],"output_dir":"x"}"#;
        assert!(RunConfig::from_json(nested).is_err());
    }

    #[test]
    fn mismatched_model_kind_is_rejected() {
        let mut cfg = tiny(Path::new("x"), vec![]);
        cfg.gcn.as_mut().unwrap().kind = ModelKind::Gisst;
        assert!(cfg.validate().is_err());
        let dup = tiny(Path::new("x"), vec![Method::Grad, Method::Grad]);
        assert!(dup.validate().is_err());
    }

    #[test]
    fn sha256_matches_known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn run_is_byte_reproducible_and_manifest_verifies() {
        let tmp = tempfile::tempdir().unwrap();
        let methods = vec![Method::GisstGrad, Method::GisstGlobal, Method::Grad, Method::MaskOpt];
        let a = tiny(&tmp.path().join("a"), methods.clone());
        let mut b = a.clone();
        b.output_dir = tmp.path().join("b");
        let first = run(&a, 1).unwrap();
        let ra = run(&a, 3).unwrap();
        assert_eq!(ra.manifest, first.manifest);
        let manifest_text = fs::read_to_string(a.output_dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(Manifest::load(&a.output_dir).unwrap(), ra.manifest);

        // Only the recorded config (which names the output directory) differs.
        let rb = run(&b, 2).unwrap();
        let strip = |m: &Manifest| {
            let mut f = m.files.clone();
            f.remove(CONFIG_FILE);
            f
        };
        assert_eq!(strip(&ra.manifest), strip(&rb.manifest));
        assert!(manifest_text.contains("\"command\": \"run\""));
        assert!(ra.manifest.files.contains_key("models/gisst/model.json"));
        assert!(ra.manifest.files.contains_key(METRICS_FILE));
        assert!(ra.manifest.verify(&a.output_dir).unwrap().is_empty());

        let csv = fs::read_to_string(a.output_dir.join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1 + 6 * methods.len());

        let reloaded = load_explanations(&a.output_dir.join(EXPLANATIONS_DIR), Method::Grad).unwrap();
        assert_eq!(reloaded.len(), ra.dataset.graph.masks().test.len());

        fs::write(a.output_dir.join(METRICS_FILE), "tampered").unwrap();
        assert_eq!(ra.manifest.verify(&a.output_dir).unwrap(), vec![METRICS_FILE.to_string()]);
    }

    #[test]
    fn empty_method_list_gives_header_only_table() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path(), vec![]);
        let out = run(&cfg, 1).unwrap();
        assert!(out.gisst.is_none() && out.gcn.is_none());
        let csv = fs::read_to_string(tmp.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv, "dataset,method,metric,mean,n\n");
    }
}
