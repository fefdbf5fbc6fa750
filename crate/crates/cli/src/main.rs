//! `gisst` command-line tool: generate benchmark graphs, train models, write
//! explanations and evaluate them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gisst::explain::{
    evaluate_explanations, explain, explain_group, extract_subgraph, to_dot, EvalConfig,
    EvalReport, Explanation, MaskOptConfig, Method,
};
use gisst::graph::{generate, Dataset, DatasetKind, DatasetSpec};
use gisst::model::{Model, ModelConfig, ModelKind};
use gisst::pipeline::{
    self, default_model_config, load_explanations, save_explanations, save_training, write_file, Manifest,
    RunConfig, Seeds, METRICS_FILE,
};
use gisst::train::{grid_search, train, Grid};

#[derive(Parser, Debug)]
#[command(name = "gisst", version, about = "Sparse edge and feature importance for graph neural networks")]
struct Cli {
    /// Root for default output locations.
    #[arg(long, global = true, env = "GISST_OUT", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark graph as JSON.
    Generate(GenerateArgs),
    /// Train a model on a dataset file.
    Train(TrainArgs),
    /// Explain predictions of a trained model.
    Explain(ExplainArgs),
    /// Score explanations, or run the whole pipeline, into a metrics CSV.
    Evaluate(EvaluateArgs),
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = DatasetKind::BENCHMARKS
            .iter()
            .chain([&DatasetKind::PlantedEdgeFeature])
            .map(|k| k.name())
            .collect();
        format!("unknown dataset kind '{s}' (expected one of {})", names.join(", "))
    })
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| {
        let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method '{s}' (expected one of {})", names.join(", "))
    })
}

#[derive(Debug, Clone)]
struct MethodList(Vec<Method>);

/// Comma-separated method list; an empty string is the empty list.
fn parse_methods(s: &str) -> Result<MethodList, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(parse_method)
        .collect::<Result<_, _>>()
        .map(MethodList)
}

fn parse_model_kind(s: &str) -> Result<ModelKind, String> {
    match s {
        "gisst" => Ok(ModelKind::Gisst),
        "gcn" => Ok(ModelKind::Gcn),
        _ => Err(format!("unknown model '{s}' (expected gisst or gcn)")),
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: DatasetKind,
    #[arg(long)]
    seed: u64,
    /// Output file; defaults to `<out-root>/datasets/<kind>-seed<seed>.json`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Initialisation and dropout seed.
    #[arg(long)]
    seed: u64,
    /// `gisst` or `gcn`; taken from `--config` when given, else `gisst`.
    #[arg(long, value_parser = parse_model_kind)]
    model: Option<ModelKind>,
    /// Full model config as JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    l1_edge: Option<f64>,
    #[arg(long)]
    ent_edge: Option<f64>,
    #[arg(long)]
    l1_feat: Option<f64>,
    #[arg(long)]
    ent_feat: Option<f64>,
    #[arg(long)]
    edge_features: bool,
    #[arg(long)]
    edge_types: bool,
    /// Search the hyperparameter grid (depth fixed) and keep the model with
    /// the best validation accuracy.
    #[arg(long)]
    grid: bool,
    /// Worker threads for the grid search.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Output directory; defaults to `<out-root>/models/<dataset>-<model>-seed<seed>`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Node to explain; repeatable.
    #[arg(long = "target", required_unless_present_any = ["all_test_motifs", "all_test"])]
    targets: Vec<usize>,
    /// Explain every test node that lies in a motif.
    #[arg(long, conflicts_with_all = ["targets", "all_test"])]
    all_test_motifs: bool,
    /// Explain every test node.
    #[arg(long, conflicts_with = "targets")]
    all_test: bool,
    /// One explanation for the whole target set instead of one per node.
    #[arg(long)]
    group: bool,
    /// Also write a Graphviz file next to each explanation.
    #[arg(long)]
    dot: bool,
    /// Minimum extracted-subgraph size for the DOT highlight; motif size by default.
    #[arg(long)]
    v_m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Output directory; explanations go to `<out>/<method>/`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Score explanations previously written by `explain` (needs `--dataset`).
    #[arg(long, requires = "dataset", conflicts_with_all = ["config", "kinds"])]
    explanations: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Run the pipeline described by a run config file.
    #[arg(long, conflicts_with = "kinds")]
    config: Option<PathBuf>,
    /// Datasets for an end-to-end run (comma separated); all four benchmarks by default.
    #[arg(long = "kind", value_parser = parse_kind, value_delimiter = ',')]
    kinds: Vec<DatasetKind>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    train_seed: Option<u64>,
    /// Comma-separated methods; all methods by default, "" for none.
    #[arg(long, value_parser = parse_methods)]
    methods: Option<MethodList>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    v_m: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Worker threads for per-node explanations.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Output directory; defaults to `<out-root>/eval`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Explain(a) => cmd_explain(&cli, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| {
        cli.out_root
            .join("datasets")
            .join(format!("{}-seed{}.json", a.kind, a.seed))
    });
    let dataset = generate(&DatasetSpec::new(a.kind, a.seed))?;
    write_file(&out, &dataset.to_json()?)?;
    let g = &dataset.graph;
    println!(
        "{}: {} nodes, {} edges, {} features, {} classes -> {}",
        a.kind,
        g.num_nodes(),
        g.num_edges(),
        g.num_features(),
        g.num_classes(),
        out.display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs, dataset: DatasetKind) -> Result<ModelConfig> {
    let mut cfg: ModelConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing model config {}", path.display()))?
        }
        None => default_model_config(dataset, a.model.unwrap_or(ModelKind::Gisst)),
    };
    if let Some(kind) = a.model.filter(|&k| k != cfg.kind) {
        bail!("--model {kind:?} contradicts the config's kind {:?}", cfg.kind);
    }
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.layers {
        cfg.num_layers = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden_units = v;
    }
    set(&mut cfg.learning_rate, a.lr);
    set(&mut cfg.dropout_rate, a.dropout);
    set(&mut cfg.l2_penalty, a.l2);
    set(&mut cfg.l1_edge, a.l1_edge);
    set(&mut cfg.ent_edge, a.ent_edge);
    set(&mut cfg.l1_feat, a.l1_feat);
    set(&mut cfg.ent_feat, a.ent_feat);
    cfg.use_edge_features |= a.edge_features;
    cfg.use_edge_types |= a.edge_types;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let dataset = load_dataset(&a.dataset)?;
    let cfg = train_config(a, dataset.spec.kind)?;
    let model_name = match cfg.kind {
        ModelKind::Gisst => "gisst",
        ModelKind::Gcn => "gcn",
    };
    let out = a.out.clone().unwrap_or_else(|| {
        cli.out_root
            .join("models")
            .join(format!("{}-{model_name}-seed{}", dataset.spec.kind, a.seed))
    });
    let report = if a.grid {
        let grid = match cfg.kind {
            ModelKind::Gisst => Grid::gisst(),
            ModelKind::Gcn => Grid::gcn(),
        }
        .with_layers(cfg.num_layers);
        let result = grid_search(&dataset.graph, &grid, &cfg, a.seed, a.parallel)?;
        result.best().clone()
    } else {
        train(&dataset.graph, &cfg, a.seed).context("training failed")?
    };
    save_training(&out, &report)?;
    let inputs = serde_json::json!({
        "dataset": dataset.spec,
        "seed": a.seed,
        "grid": a.grid,
        "config": report.config,
    });
    Manifest::write(&out, "train", inputs)?;
    println!(
        "train_acc={:.4} val_acc={:.4} test_acc={:.4} loss={:.6} -> {}",
        report.final_train_acc,
        report.final_val_acc,
        report.final_test_acc,
        report.final_loss.total,
        out.display()
    );
    Ok(())
}

fn cmd_explain(cli: &Cli, a: &ExplainArgs) -> Result<()> {
    let dataset = load_dataset(&a.dataset)?;
    let model = Model::load(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    if model.kind() != a.method.model_kind() {
        bail!(
            "method {} needs a {:?} checkpoint but {} holds a {:?} model",
            a.method,
            a.method.model_kind(),
            a.checkpoint.display(),
            model.kind()
        );
    }
    let targets: Vec<usize> = if a.all_test_motifs {
        let motif: BTreeSet<usize> = dataset.ground_truth.all_motif_nodes().into_iter().collect();
        dataset.graph.masks().test.iter().copied().filter(|n| motif.contains(n)).collect()
    } else if a.all_test {
        dataset.graph.masks().test.clone()
    } else {
        a.targets.clone()
    };
    if targets.is_empty() {
        bail!("no target nodes to explain");
    }
    let out = a.out.clone().unwrap_or_else(|| cli.out_root.join("explanations"));
    let mask_cfg = MaskOptConfig::default();
    let graph = &dataset.graph;
    let explanations: Vec<Explanation> = if a.group {
        vec![explain_group(&model, graph, a.method, &targets, &mask_cfg, a.parallel)?]
    } else {
        gisst::par_map(&targets, a.parallel, |&n| explain(&model, graph, a.method, n, &mask_cfg))
            .into_iter()
            .collect::<Result<_, _>>()?
    };
    let paths = save_explanations(&out, &explanations)?;
    if a.dot {
        let v_m = a.v_m.unwrap_or(dataset.ground_truth.motif_size);
        for (ex, path) in explanations.iter().zip(&paths) {
            let extraction = extract_subgraph(ex, v_m)?;
            let important = &dataset.ground_truth.important_edges;
            write_file(&path.with_extension("dot"), &to_dot(ex, extraction.as_ref(), Some(important)))?;
        }
    }
    let inputs = serde_json::json!({
        "checkpoint": a.checkpoint,
        "dataset": dataset.spec,
    });
    Manifest::write(&out, "explain", inputs)?;
    println!("{} {} explanation(s) -> {}", explanations.len(), a.method, out.join(a.method.name()).display());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| cli.out_root.join("eval"));
    if let Some(dir) = &a.explanations {
        return evaluate_dir(a, dir, &out);
    }
    let configs = if let Some(path) = &a.config {
        let mut cfg = RunConfig::load(path)?;
        if a.out.is_some() {
            cfg.output_dir = out.clone();
        }
        vec![cfg]
    } else {
        let (Some(data), Some(train)) = (a.data_seed, a.train_seed) else {
            bail!("an end-to-end run needs --data-seed and --train-seed (or --config)");
        };
        let kinds = if a.kinds.is_empty() {
            DatasetKind::BENCHMARKS.to_vec()
        } else {
            a.kinds.clone()
        };
        let methods = a.methods.clone().map_or_else(|| Method::ALL.to_vec(), |m| m.0);
        kinds
            .into_iter()
            .map(|kind| {
                let mut cfg = RunConfig::new(kind, Seeds { data, train }, methods.clone(), out.join(kind.name()));
                if let Some(e) = a.epochs {
                    for m in [cfg.gisst.as_mut(), cfg.gcn.as_mut()].into_iter().flatten() {
                        m.epochs = e;
                    }
                }
                cfg.v_m = a.v_m.or(cfg.v_m);
                cfg.top_k = a.top_k.or(cfg.top_k);
                cfg
            })
            .collect()
    };
    let mut csv = String::from("dataset,method,metric,mean,n\n");
    for cfg in &configs {
        let outcome = pipeline::run(cfg, a.parallel).with_context(|| format!("running {}", cfg.dataset))?;
        for (name, r) in [("gisst", &outcome.gisst), ("gcn", &outcome.gcn)] {
            if let Some(r) = r {
                eprintln!(
                    "{} {name}: train_acc={:.4} val_acc={:.4} test_acc={:.4}",
                    cfg.dataset, r.final_train_acc, r.final_val_acc, r.final_test_acc
                );
            }
        }
        csv.extend(outcome.eval.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
    }
    if a.config.is_none() {
        write_file(&out.join(METRICS_FILE), &csv)?;
        Manifest::write(&out, "evaluate", serde_json::to_value(&configs)?)?;
    }
    print!("{csv}");
    Ok(())
}

fn evaluate_dir(a: &EvaluateArgs, dir: &Path, out: &Path) -> Result<()> {
    let dataset_path = a.dataset.as_ref().expect("clap enforces --dataset");
    let dataset = load_dataset(dataset_path)?;
    let methods = match &a.methods {
        Some(m) => m.0.clone(),
        None => Method::ALL
            .into_iter()
            .filter(|m| dir.join(m.name()).is_dir())
            .collect(),
    };
    let mut per_method = Vec::new();
    for &m in &methods {
        let exs = load_explanations(dir, m).with_context(|| format!("loading {m} explanations"))?;
        per_method.push((m, exs));
    }
    let cfg = EvalConfig {
        methods: methods.clone(),
        v_m: a.v_m,
        top_k: a.top_k.unwrap_or(EvalConfig::default().top_k),
        mask_opt: MaskOptConfig::default(),
        threads: a.parallel,
    };
    let report = if per_method.is_empty() {
        EvalReport {
            dataset: dataset.spec.kind.name().to_string(),
            summaries: Vec::new(),
            nodes: Vec::new(),
        }
    } else {
        evaluate_explanations(&dataset, &per_method, &cfg)?
    };
    let csv = report.to_csv();
    write_file(&out.join(METRICS_FILE), &csv)?;
    let inputs = serde_json::json!({
        "explanations": dir,
        "dataset": dataset.spec,
        "methods": methods,
        "v_m": a.v_m,
        "top_k": cfg.top_k,
    });
    Manifest::write(out, "evaluate", inputs)?;
    print!("{csv}");
    Ok(())
}
