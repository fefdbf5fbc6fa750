use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{one_hot, Tape, Tensor, Var};
use crate::graph::{Graph, GroundTruth};
use crate::model::{gcn_forward, predictions, Model, ModelConfig, ModelKind};

fn toy_graph() -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Graph::new(
        6,
        vec![(0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (0, 5)],
        Tensor::matrix(6, 3, x).unwrap(),
        vec![0, 1, 0, 1, 0, 1],
        2,
    )
    .unwrap()
}

fn random_graph(n: usize, d: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|i| i % 3).collect();
    Graph::new(n, edges, Tensor::matrix(n, d, x).unwrap(), labels, 3).unwrap()
}

fn config(kind: ModelKind, layers: usize) -> ModelConfig {
    ModelConfig {
        kind,
        hidden_units: 4,
        num_layers: layers,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    }
}

fn gisst_model(graph: &Graph, layers: usize, seed: u64) -> Model {
    let mut model = Model::init(config(ModelKind::Gisst, layers), graph, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let g = model.gisst.as_mut().unwrap();
    g.m.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
    for b in &mut model.gcn.biases {
        b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    model
}

fn gcn_model(graph: &Graph, layers: usize, seed: u64) -> Model {
    Model::init(config(ModelKind::Gcn, layers), graph, seed).unwrap()
}

/// Predicted-class loss on the full graph for explicit edge weights and
/// input features, with the classes held fixed.
fn fixed_class_loss(model: &Model, graph: &Graph, targets: &[usize], ew: &[f64], h0: &Tensor, classes: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let ws: Vec<Var> = model.gcn.weights.iter().map(|w| tape.constant(w.clone())).collect();
    let bs: Vec<Var> = model.gcn.biases.iter().map(|b| tape.constant(b.clone())).collect();
    let e = tape.constant(Tensor::vector(ew.to_vec()));
    let h = tape.constant(h0.clone());
    let logits = gcn_forward(&mut tape, graph, &ws, &bs, e, h, 0.0, None).unwrap();
    let t = Arc::new(one_hot(classes, graph.num_classes()));
    let loss = tape.softmax_cross_entropy(logits, t, targets.into()).unwrap();
    tape.value(loss).item()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6) <= tol
}

const H: f64 = 1e-6;

/// Central-difference edge and feature scores following the definitions.
fn fd_scores(model: &Model, graph: &Graph, targets: &[usize], ew: &[f64], h0: &Tensor, feat_factor: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let classes = predictions(&model.logits(graph).unwrap());
    let f = |ew: &[f64], h0: &Tensor| fixed_class_loss(model, graph, targets, ew, h0, &classes);
    let mut edge = Vec::new();
    for e in 0..graph.num_edges() {
        let mut total = 0.0;
        for dir in [2 * e, 2 * e + 1] {
            let (mut p, mut m) = (ew.to_vec(), ew.to_vec());
            p[dir] += H;
            m[dir] -= H;
            total += ((f(&p, h0) - f(&m, h0)) / (2.0 * H)).abs();
        }
        edge.push(total / 2.0);
    }
    let d = graph.num_features();
    let mut feats = vec![0.0; d];
    let cs = crate::graph::k_hop_nodes(graph, targets, model.num_layers()).unwrap();
    for &k in &cs {
        for (l, out) in feats.iter_mut().enumerate() {
            let (mut p, mut m) = (h0.clone(), h0.clone());
            p.data_mut()[k * d + l] += H;
            m.data_mut()[k * d + l] -= H;
            let g = (f(ew, &p) - f(ew, &m)) / (2.0 * H);
            *out += (g * feat_factor.get(k, l)).abs();
        }
    }
    (edge, feats)
}

#[test]
fn view_reproduces_target_outputs() {
    let g = random_graph(40, 3, 0.08, 1);
    for layers in 1..4 {
        let model = gisst_model(&g, layers, 5);
        let full = model.logits(&g).unwrap();
        for target in [0, 7, 21, 39] {
            let view = computation_view(&g, &[target], layers).unwrap();
            let local = model.logits(&view.graph).unwrap();
            let lt = view.targets[0];
            for c in 0..3 {
                assert!((local.get(lt, c) - full.get(target, c)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn edges_outside_the_computation_subgraph_are_absent() {
    let x = Tensor::zeros(&[6, 2]);
    let g = Graph::new(6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], x, vec![0; 6], 2).unwrap();
    let model = gisst_model(&g, 2, 1);
    let ex = gisst_grad(&model, &g, &[0]).unwrap();
    let keys: Vec<(usize, usize)> = ex.edge_scores.iter().map(|e| (e.u, e.v)).collect();
    assert_eq!(keys, vec![(0, 1), (1, 2)]);
    assert_eq!(ex.nodes, vec![0, 1, 2]);
    assert!(ex.score(2, 3).is_none());
}

#[test]
fn zero_weights_give_zero_edge_gradients() {
    let g = toy_graph();
    let mut gm = gisst_model(&g, 2, 3);
    let mut pm = gcn_model(&g, 2, 3);
    for m in [&mut gm, &mut pm] {
        m.gcn.weights.iter_mut().for_each(|w| w.data_mut().fill(0.0));
        m.gcn.biases.iter_mut().for_each(|b| b.data_mut().fill(0.0));
    }
    for ex in [gisst_grad(&gm, &g, &[1]).unwrap(), grad_baseline(&pm, &g, &[1]).unwrap()] {
        assert!(ex.edge_scores.iter().all(|e| e.score == 0.0));
        assert!(ex.feature_scores.iter().all(|&s| s == 0.0));
    }
}

#[test]
fn gisst_grad_matches_finite_differences() {
    let g = toy_graph();
    let model = gisst_model(&g, 2, 7);
    let (edge_p, feat_p) = model.importance(&g).unwrap().unwrap();
    let x = g.features().clone();
    let h0 = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().enumerate().map(|(i, v)| v * feat_p[i % 3]).collect(),
    )
    .unwrap();
    for target in [0, 2, 4] {
        let ex = gisst_grad(&model, &g, &[target]).unwrap();
        let (fd_edge, fd_feat) = fd_scores(&model, &g, &[target], &edge_p, &h0, &x);
        for e in &ex.edge_scores {
            let idx = g.edge_index(e.u, e.v).unwrap();
            assert!(rel_close(e.score, fd_edge[idx], 1e-3), "{e:?} vs {}", fd_edge[idx]);
        }
        for (a, b) in ex.feature_scores.iter().zip(&fd_feat) {
            assert!(rel_close(*a, *b, 1e-3), "{a} vs {b}");
        }
    }
}

#[test]
fn grad_baseline_matches_finite_differences() {
    let g = toy_graph();
    let model = gcn_model(&g, 2, 8);
    let ones = Tensor::filled(&[6, 3], 1.0);
    for target in [1, 3, 5] {
        let ex = grad_baseline(&model, &g, &[target]).unwrap();
        let (fd_edge, fd_feat) = fd_scores(&model, &g, &[target], &[1.0; 12], g.features(), &ones);
        for e in &ex.edge_scores {
            let idx = g.edge_index(e.u, e.v).unwrap();
            assert!(rel_close(e.score, fd_edge[idx], 1e-3));
        }
        for (a, b) in ex.feature_scores.iter().zip(&fd_feat) {
            assert!(rel_close(*a, *b, 1e-3));
        }
    }
}

#[test]
fn group_gradient_matches_mean_loss() {
    let g = toy_graph();
    let model = gcn_model(&g, 2, 9);
    let ones = Tensor::filled(&[6, 3], 1.0);
    let ex = grad_baseline(&model, &g, &[0, 3]).unwrap();
    assert_eq!(ex.target, Target::Group(vec![0, 3]));
    let (fd_edge, _) = fd_scores(&model, &g, &[0, 3], &[1.0; 12], g.features(), &ones);
    for e in &ex.edge_scores {
        assert!(rel_close(e.score, fd_edge[g.edge_index(e.u, e.v).unwrap()], 1e-3));
    }
}

#[test]
fn isolated_target_has_no_edge_scores() {
    let g = Graph::new(3, vec![(1, 2)], Tensor::filled(&[3, 2], 1.0), vec![0, 1, 0], 2).unwrap();
    let model = gcn_model(&g, 2, 1);
    let ex = grad_baseline(&model, &g, &[0]).unwrap();
    assert!(ex.edge_scores.is_empty());
    assert_eq!(ex.nodes, vec![0]);
    assert_eq!(extract_subgraph(&ex, 2).unwrap(), None);
}

#[test]
fn mirrored_branches_score_equally() {
    // 0 is attached to two identical paths 0-1-2 and 0-3-4.
    let x = Tensor::from_rows(&[
        vec![0.3, -0.2],
        vec![1.0, 0.5],
        vec![-0.4, 0.8],
        vec![1.0, 0.5],
        vec![-0.4, 0.8],
    ])
    .unwrap();
    let g = Graph::new(5, vec![(0, 1), (1, 2), (0, 3), (3, 4)], x, vec![0, 1, 0, 1, 0], 2).unwrap();
    let model = gcn_model(&g, 2, 4);
    let ex = grad_baseline(&model, &g, &[0]).unwrap();
    assert!(ex.score(0, 1).unwrap() > 0.0);
    assert_eq!(ex.score(0, 1), ex.score(0, 3));
    assert_eq!(ex.score(1, 2), ex.score(3, 4));
}

#[test]
fn methods_check_the_model_kind() {
    let g = toy_graph();
    let plain = gcn_model(&g, 2, 1);
    let gisst = gisst_model(&g, 2, 1);
    assert!(matches!(gisst_grad(&plain, &g, &[0]), Err(ExplainError::WrongModel { .. })));
    assert!(matches!(grad_baseline(&gisst, &g, &[0]), Err(ExplainError::WrongModel { .. })));
    let mut broken = plain.clone();
    broken.gcn.weights[0].data_mut()[0] = f64::NAN;
    assert!(matches!(grad_baseline(&broken, &g, &[0]), Err(ExplainError::NonFinite(_))));
}

#[test]
fn gisst_global_reports_probabilities() {
    let g = toy_graph();
    let model = gisst_model(&g, 2, 2);
    let ex = gisst_global(&model, &g, &[0]).unwrap();
    let (edge_p, feat_p) = model.importance(&g).unwrap().unwrap();
    assert_eq!(ex.feature_scores, feat_p);
    for e in &ex.edge_scores {
        let i = g.edge_index(e.u, e.v).unwrap();
        assert_eq!(e.score, 0.5 * (edge_p[2 * i] + edge_p[2 * i + 1]));
    }
}

#[test]
fn mask_opt_without_steps_stays_at_half() {
    let g = toy_graph();
    let model = gcn_model(&g, 2, 3);
    let cfg = MaskOptConfig {
        steps: 0,
        ..MaskOptConfig::default()
    };
    let ex = mask_opt_baseline(&model, &g, 1, &cfg).unwrap();
    assert!(!ex.edge_scores.is_empty());
    assert!(ex.edge_scores.iter().all(|e| e.score == 0.5));
    assert!(ex.feature_scores.iter().all(|&s| s == 0.5));
}

/// Node 0 is class 0 on its own and class 1 once its single neighbour's
/// message arrives.
fn flip_fixture() -> (Graph, Model) {
    let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![4.0, 0.0]]).unwrap();
    let g = Graph::new(2, vec![(0, 1)], x, vec![1, 1], 2).unwrap();
    let mut model = gcn_model(&g, 1, 0);
    model.gcn.weights[0] = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    (g, model)
}

#[test]
fn mask_opt_keeps_a_decisive_edge() {
    let (g, model) = flip_fixture();
    let classes = predictions(&model.logits(&g).unwrap());
    assert_eq!(classes[0], 1);
    let with_edge = fixed_class_loss(&model, &g, &[0], &[1.0, 1.0], g.features(), &classes);
    let without = fixed_class_loss(&model, &g, &[0], &[0.0, 0.0], g.features(), &classes);
    assert!(with_edge < without);
    let no_edge_classes = predictions(&{
        let lone = Graph::new(1, vec![], Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap(), vec![1], 2).unwrap();
        model.logits(&lone).unwrap()
    });
    assert_eq!(no_edge_classes[0], 0);

    let ex = mask_opt_baseline(&model, &g, 0, &MaskOptConfig::default()).unwrap();
    assert!(ex.score(0, 1).unwrap() > 0.5);
}

#[test]
fn mask_opt_group_takes_medians() {
    let g = toy_graph();
    let model = gcn_model(&g, 2, 3);
    let cfg = MaskOptConfig {
        steps: 5,
        ..MaskOptConfig::default()
    };
    let nodes = [0, 2, 4];
    let each: Vec<Explanation> = nodes.iter().map(|&n| mask_opt_baseline(&model, &g, n, &cfg).unwrap()).collect();
    let group = explain_group(&model, &g, Method::MaskOpt, &nodes, &cfg, 2).unwrap();
    for e in &group.edge_scores {
        let mut s: Vec<f64> = each.iter().filter_map(|x| x.score(e.u, e.v)).collect();
        s.sort_by(f64::total_cmp);
        let expect = if s.len() % 2 == 1 {
            s[s.len() / 2]
        } else {
            (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0
        };
        assert_eq!(e.score, expect);
    }
    assert_eq!(scores::median(&mut [3.0, 1.0, 2.0, 10.0]), 2.5);
}

fn ex_from(scores: &[((usize, usize), f64)]) -> Explanation {
    let mut edge_scores: Vec<EdgeScore> = scores
        .iter()
        .map(|&((u, v), score)| EdgeScore { u, v, score })
        .collect();
    edge_scores.sort_by_key(|e| (e.u, e.v));
    let nodes: BTreeSet<usize> = scores.iter().flat_map(|&((u, v), _)| [u, v]).collect();
    Explanation {
        method: Method::Grad,
        target: Target::Node(0),
        layers: 2,
        nodes: nodes.into_iter().collect(),
        edge_scores,
        feature_scores: vec![],
    }
}

#[test]
fn extraction_examples() {
    let path = ex_from(&[((0, 1), 0.9), ((1, 2), 0.8), ((2, 3), 0.1)]);
    let x = extract_subgraph(&path, 3).unwrap().unwrap();
    assert_eq!(x.threshold, 0.8);
    assert_eq!(x.edges, vec![(0, 1), (1, 2)]);
    assert_eq!(x.nodes, vec![0, 1, 2]);

    let top = extract_subgraph(&path, 2).unwrap().unwrap();
    assert_eq!(top.edges, vec![(0, 1)]);

    let flat = ex_from(&[((0, 1), 0.3), ((1, 2), 0.3), ((2, 3), 0.3)]);
    assert_eq!(extract_subgraph(&flat, 2).unwrap().unwrap().edges.len(), 3);
    assert_eq!(extract_subgraph(&flat, 5).unwrap(), None);
    assert!(matches!(extract_subgraph(&flat, 1), Err(ExplainError::Invalid(_))));
}

/// Tries every candidate threshold from high to low.
fn brute_force_extract(ex: &Explanation, v_m: usize) -> Option<(f64, Vec<(usize, usize)>)> {
    let mut ts: Vec<f64> = ex.edge_scores.iter().map(|e| e.score).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    for t in ts {
        let edges: Vec<(usize, usize)> = ex
            .edge_scores
            .iter()
            .filter(|e| e.score >= t)
            .map(|e| (e.u, e.v))
            .collect();
        let nodes: BTreeSet<usize> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
        if nodes.len() >= v_m {
            return Some((t, edges));
        }
    }
    None
}

fn small_scored_graph() -> impl Strategy<Value = (Vec<((usize, usize), f64)>, usize)> {
    (prop::collection::btree_set((0usize..8, 0usize..8), 1..30), 2usize..7).prop_flat_map(|(pairs, v_m)| {
        let edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .take(12)
            .collect();
        let n = edges.len();
        (Just(edges), prop::collection::vec(0u8..6, n), Just(v_m))
            .prop_map(|(edges, s, v_m)| (edges.into_iter().zip(s.into_iter().map(|x| x as f64 / 5.0)).collect(), v_m))
    })
}

proptest! {
    #[test]
    fn extraction_matches_exhaustive_search((scores, v_m) in small_scored_graph()) {
        prop_assume!(!scores.is_empty());
        let ex = ex_from(&scores);
        let got = extract_subgraph(&ex, v_m).unwrap();
        let want = brute_force_extract(&ex, v_m);
        match (got, want) {
            (None, None) => {}
            (Some(x), Some((t, edges))) => {
                prop_assert_eq!(x.threshold, t);
                prop_assert_eq!(x.edges, edges);
                prop_assert!(x.nodes.len() >= v_m);
            }
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn extraction_is_scale_invariant((scores, v_m) in small_scored_graph(), exp in -10i32..10) {
        prop_assume!(!scores.is_empty());
        let c = 2f64.powi(exp);
        let scaled: Vec<_> = scores.iter().map(|&(e, s)| (e, s * c)).collect();
        let a = extract_subgraph(&ex_from(&scores), v_m).unwrap();
        let b = extract_subgraph(&ex_from(&scaled), v_m).unwrap();
        prop_assert_eq!(a.map(|x| x.edges), b.map(|x| x.edges));
    }

    #[test]
    fn lower_thresholds_only_add_edges((scores, v_m) in small_scored_graph()) {
        prop_assume!(!scores.is_empty());
        let ex = ex_from(&scores);
        if let (Some(a), Some(b)) = (extract_subgraph(&ex, v_m).unwrap(), extract_subgraph(&ex, v_m + 1).unwrap()) {
            prop_assert!(b.threshold <= a.threshold);
            let bs: BTreeSet<_> = b.edges.into_iter().collect();
            prop_assert!(a.edges.iter().all(|e| bs.contains(e)));
        }
    }

    #[test]
    fn edge_metric_counts_are_integral((scores, v_m) in small_scored_graph(), imp_mask in prop::collection::vec(any::<bool>(), 12)) {
        prop_assume!(!scores.is_empty());
        let ex = ex_from(&scores);
        let cs: Vec<(usize, usize)> = scores.iter().map(|&(e, _)| e).collect();
        let important: BTreeSet<(usize, usize)> = cs.iter().zip(&imp_mask).filter(|(_, &m)| m).map(|(e, _)| *e).collect();
        if let Some(x) = extract_subgraph(&ex, v_m).unwrap() {
            let m = edge_metrics(&x, &important, &cs).unwrap();
            for v in [m.precision, m.accuracy].into_iter().chain(m.recall) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((m.precision * m.extracted as f64 - m.true_positives as f64).abs() < 1e-9);
            if let Some(r) = m.recall {
                prop_assert!((r * m.important as f64 - m.true_positives as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn top_k_precision_equals_recall(scores in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 50), 1..6)) {
        let important: Vec<usize> = (0..40).collect();
        let m = feature_metrics(&scores, &important, 40).unwrap();
        prop_assert_eq!(m.precision, m.recall);
    }
}

#[test]
fn house_with_two_extra_edges() {
    let house = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)];
    let important: BTreeSet<(usize, usize)> = house.into_iter().collect();
    let mut edges: Vec<(usize, usize)> = house.to_vec();
    edges.extend([(4, 5), (5, 6)]);
    let cs: Vec<(usize, usize)> = edges.iter().copied().chain([(6, 7), (7, 8)]).collect();
    let x = Extraction {
        threshold: 0.5,
        edges: edges.clone(),
        nodes: (0..7).collect(),
    };
    let m = edge_metrics(&x, &important, &cs).unwrap();
    assert_eq!(m.precision, 0.75);
    assert_eq!(m.recall, Some(1.0));
    assert_eq!(m.accuracy, 8.0 / 10.0);

    let exact = Extraction {
        threshold: 0.5,
        edges: house.to_vec(),
        nodes: (0..5).collect(),
    };
    let m = edge_metrics(&exact, &important, &cs).unwrap();
    assert_eq!((m.precision, m.recall, m.accuracy), (1.0, Some(1.0), 1.0));

    let outside = Extraction {
        threshold: 0.5,
        edges: vec![(20, 21)],
        nodes: vec![20, 21],
    };
    assert!(edge_metrics(&outside, &important, &cs).is_err());
}

#[test]
fn every_motif_edge_in_the_computation_subgraph_counts() {
    // Path 0-1-2-3-4 with motifs {0,1,2} and {3,4}; node 1 is explained.
    let x = Tensor::matrix(5, 2, vec![1.0; 10]).unwrap();
    let graph = Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)], x, vec![1, 1, 1, 1, 1], 2)
        .unwrap()
        .with_masks(crate::graph::Masks {
            train: vec![0],
            val: vec![2],
            test: vec![1],
        })
        .unwrap();
    let ground_truth = GroundTruth {
        important_edges: [(0, 1), (1, 2), (3, 4)].into_iter().collect(),
        important_features: vec![0],
        motif_nodes: vec![vec![0, 1, 2], vec![3, 4]],
        motif_size: 3,
    };
    let dataset = crate::graph::Dataset {
        graph,
        ground_truth,
        spec: crate::graph::DatasetSpec::new(crate::graph::DatasetKind::NoisyTreeCycle, 0),
    };
    let scores = [((0, 1), 0.9), ((1, 2), 0.8), ((2, 3), 0.1), ((3, 4), 0.95)];
    let ex = Explanation {
        method: Method::Grad,
        target: Target::Node(1),
        layers: 3,
        nodes: (0..5).collect(),
        edge_scores: scores.iter().map(|&((u, v), score)| EdgeScore { u, v, score }).collect(),
        feature_scores: vec![1.0, 0.0],
    };
    let cfg = EvalConfig {
        methods: vec![Method::Grad],
        top_k: 1,
        ..EvalConfig::default()
    };
    let report = evaluate_explanations(&dataset, &[(Method::Grad, vec![ex])], &cfg).unwrap();
    // Threshold 0.9 keeps (3,4) and (0,1): both are motif edges.
    let m = report.nodes[0].metrics.unwrap();
    assert_eq!((m.true_positives, m.extracted, m.important), (2, 2, 3));
    assert_eq!(m.precision, 1.0);
    assert_eq!(m.recall, Some(2.0 / 3.0));
    let s = report.summary(Method::Grad).unwrap();
    assert_eq!(s.feat_precision.mean, Some(1.0));
}

#[test]
fn feature_metric_examples() {
    let important: Vec<usize> = (0..40).collect();
    let indicator: Vec<f64> = (0..50).map(|l| if l < 40 { 1.0 } else { 0.0 }).collect();
    let m = feature_metrics(&[indicator], &important, 40).unwrap();
    assert_eq!((m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0));

    // A constant vector normalises to zeros and contributes nothing.
    let constant = vec![7.0; 50];
    let reversed: Vec<f64> = (0..50).map(|l| l as f64).collect();
    let m = feature_metrics(&[constant.clone(), reversed], &important, 40).unwrap();
    assert_eq!(m.top_k[0], 49);
    assert_eq!(m.precision, 30.0 / 40.0);
    let m = feature_metrics(&[constant], &important, 40).unwrap();
    assert_eq!(m.top_k, (0..40).collect::<Vec<_>>());
    assert!(feature_metrics(&[vec![0.0; 10]], &important, 40).is_err());
}

#[test]
fn explanation_json_round_trip() {
    let g = toy_graph();
    let ex = gisst_grad(&gisst_model(&g, 2, 1), &g, &[2]).unwrap();
    let text = ex.to_json().unwrap();
    let back = Explanation::from_json(&text).unwrap();
    assert_eq!(back, ex);
    assert_eq!(back.to_json().unwrap(), text);
}

/// Minimal reader for the edge statements emitted by [`to_dot`].
fn parse_dot_edges(dot: &str) -> Vec<(usize, usize, Vec<(String, String)>)> {
    dot.lines()
        .filter_map(|line| {
            let line = line.trim().strip_suffix(';')?;
            let (lhs, attrs) = line.split_once(" [")?;
            let (u, v) = lhs.split_once(" -- ")?;
            let attrs = attrs
                .strip_suffix(']')?
                .split(", ")
                .map(|kv| {
                    let (k, v) = kv.split_once('=').unwrap();
                    (k.to_string(), v.to_string())
                })
                .collect();
            Some((u.parse().ok()?, v.parse().ok()?, attrs))
        })
        .collect()
}

#[test]
fn dot_export_marks_edges() {
    let ex = ex_from(&[((0, 1), 0.9), ((1, 2), 0.8), ((2, 3), 0.1)]);
    let x = extract_subgraph(&ex, 3).unwrap().unwrap();
    let important: BTreeSet<(usize, usize)> = [(1, 2), (2, 3)].into_iter().collect();
    let dot = to_dot(&ex, Some(&x), Some(&important));
    assert!(dot.starts_with("graph explanation {"));
    assert!(dot.trim_end().ends_with('}'));
    assert!(dot.contains("  0 [style=filled, fillcolor=lightblue];"));
    let edges = parse_dot_edges(&dot);
    assert_eq!(edges.len(), 3);
    for (u, v, attrs) in edges {
        let get = |k: &str| attrs.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
        let w: f64 = get("weight").unwrap().parse().unwrap();
        assert_eq!(Some(w), ex.score(u, v));
        assert_eq!(get("style").is_some(), x.edges.contains(&(u, v)));
        assert_eq!(get("color").as_deref() == Some("red"), important.contains(&(u, v)));
    }
}

#[test]
fn evaluate_single_method_gives_single_row() {
    let ds = crate::graph::generate_tree_cycle(0).unwrap();
    let cfg = ModelConfig {
        epochs: 5,
        num_layers: 2,
        hidden_units: 8,
        ..ModelConfig::default()
    };
    let report = crate::train::train(&ds.graph, &cfg, 0).unwrap();
    let eval = EvalConfig {
        methods: vec![Method::GisstGrad],
        ..EvalConfig::default()
    };
    let r = evaluate_dataset(&ds, Some(&report.model), None, &eval).unwrap();
    assert_eq!(r.summaries.len(), 1);
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.lines().nth(1).unwrap().starts_with("noisy-tree-cycle,gisst-grad,edge_precision,"));
    let s = r.summary(Method::GisstGrad).unwrap();
    assert_eq!(s.feat_precision.mean, s.feat_recall.mean);
    assert!(s.edge_precision.n > 0);

    let missing = EvalConfig {
        methods: vec![Method::Grad],
        ..EvalConfig::default()
    };
    assert!(evaluate_dataset(&ds, Some(&report.model), None, &missing).is_err());
}
