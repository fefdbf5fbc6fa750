//! Public-API workflow: generate, train, explain, persist and score.

use gisst::explain::{
    evaluate_dataset, evaluate_explanations, explain, explain_group, extract_subgraph, EvalConfig, MaskOptConfig,
    Method, Target,
};
use gisst::graph::{generate, k_hop_nodes, Dataset, DatasetKind, DatasetSpec};
use gisst::model::{Model, ModelKind};
use gisst::pipeline::{default_model_config, load_explanations, save_explanations};
use gisst::train::train;

fn short(kind: DatasetKind, model: ModelKind, epochs: usize) -> gisst::model::ModelConfig {
    gisst::model::ModelConfig {
        epochs,
        ..default_model_config(kind, model)
    }
}

#[test]
fn artefacts_round_trip_through_json() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = generate(&DatasetSpec::new(DatasetKind::NoisyTreeCycle, 5)).unwrap();
    ds.save(tmp.path().join("d.json")).unwrap();
    assert_eq!(Dataset::load(tmp.path().join("d.json")).unwrap().to_json().unwrap(), ds.to_json().unwrap());

    let report = train(&ds.graph, &short(DatasetKind::NoisyTreeCycle, ModelKind::Gisst, 15), 2).unwrap();
    report.model.save(tmp.path().join("m.json")).unwrap();
    let model = Model::load(tmp.path().join("m.json")).unwrap();
    assert_eq!(model, report.model);
    assert_eq!(model.logits(&ds.graph).unwrap(), report.model.logits(&ds.graph).unwrap());
}

#[test]
fn explanations_stay_in_the_computation_subgraph_and_score_in_range() {
    let kind = DatasetKind::NoisyBaHouse;
    let ds = generate(&DatasetSpec::new(kind, 3)).unwrap();
    let gisst = train(&ds.graph, &short(kind, ModelKind::Gisst, 30), 0).unwrap().model;
    let gcn = train(&ds.graph, &short(kind, ModelKind::Gcn, 30), 0).unwrap().model;
    let layers = gisst.num_layers();
    let target = ds.graph.masks().test[0];
    let hood = k_hop_nodes(&ds.graph, &[target], layers).unwrap();

    for method in Method::ALL {
        let model = if method.model_kind() == ModelKind::Gisst { &gisst } else { &gcn };
        let ex = explain(model, &ds.graph, method, target, &MaskOptConfig::default()).unwrap();
        assert_eq!(ex.target, Target::Node(target));
        assert_eq!(ex.nodes, hood);
        assert_eq!(ex.feature_scores.len(), ds.graph.num_features());
        assert!(ex.edge_scores.iter().all(|e| e.u < e.v && e.score.is_finite() && e.score >= 0.0));
        if let Some(x) = extract_subgraph(&ex, kind.motif_size()).unwrap() {
            assert!(x.nodes.len() >= kind.motif_size());
        }
    }

    let test = &ds.graph.masks().test;
    let group = explain_group(&gisst, &ds.graph, Method::GisstGrad, &test[..5], &MaskOptConfig::default(), 1).unwrap();
    assert_eq!(group.target, Target::Group(test[..5].to_vec()));

    let cfg = EvalConfig {
        methods: vec![Method::GisstGrad, Method::Grad],
        ..EvalConfig::default()
    };
    let report = evaluate_dataset(&ds, Some(&gisst), Some(&gcn), &cfg).unwrap();
    for s in &report.summaries {
        for m in [s.edge_precision, s.edge_recall, s.edge_accuracy, s.feat_precision] {
            let v = m.mean.unwrap();
            assert!((0.0..=1.0).contains(&v), "{} out of range: {v}", s.method);
        }
        assert_eq!(s.feat_precision.n, test.len());
    }
}

#[test]
fn saved_explanations_rescore_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let kind = DatasetKind::NoisyTreeGrid;
    let ds = generate(&DatasetSpec::new(kind, 1)).unwrap();
    let gcn = train(&ds.graph, &short(kind, ModelKind::Gcn, 10), 4).unwrap().model;
    let cfg = EvalConfig {
        methods: vec![Method::Grad],
        ..EvalConfig::default()
    };
    let direct = evaluate_dataset(&ds, None, Some(&gcn), &cfg).unwrap();

    let exs: Vec<_> = ds
        .graph
        .masks()
        .test
        .iter()
        .map(|&n| explain(&gcn, &ds.graph, Method::Grad, n, &cfg.mask_opt).unwrap())
        .collect();
    save_explanations(tmp.path(), &exs).unwrap();
    let loaded = load_explanations(tmp.path(), Method::Grad).unwrap();
    let rescored = evaluate_explanations(&ds, &[(Method::Grad, loaded)], &cfg).unwrap();
    assert_eq!(rescored, direct);

    // A method without a model is an error, not a silent skip.
    let missing = EvalConfig {
        methods: vec![Method::GisstGrad],
        ..EvalConfig::default()
    };
    assert!(evaluate_dataset(&ds, None, Some(&gcn), &missing).is_err());
}
