//! Noisy synthetic node-classification benchmarks with planted motifs.
//!
//! Node ids are laid out base graph first, then motifs in attachment order.
//! Every generator is a pure function of its spec and seed. Structure, node
//! features and the data split draw from separate ChaCha streams of the same
//! seed, so changing one stage never shifts the others.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{canonical, Dataset, Graph, GraphError, GroundTruth, Masks};
use crate::autodiff::Tensor;

const STRUCTURE_STREAM: u64 = 0;
const FEATURE_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;
const SECOND_COMMUNITY_STREAM: u64 = 3;
const JOIN_STREAM: u64 = 4;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    NoisyBaHouse,
    NoisyBaCommunity,
    NoisyTreeCycle,
    NoisyTreeGrid,
    /// Two-class graph whose useful edges are marked by an edge feature and
    /// an edge type; exercises the edge-attribute extension.
    PlantedEdgeFeature,
}

impl DatasetKind {
    pub const BENCHMARKS: [DatasetKind; 4] = [
        DatasetKind::NoisyBaHouse,
        DatasetKind::NoisyBaCommunity,
        DatasetKind::NoisyTreeCycle,
        DatasetKind::NoisyTreeGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::NoisyBaHouse => "noisy-ba-house",
            DatasetKind::NoisyBaCommunity => "noisy-ba-community",
            DatasetKind::NoisyTreeCycle => "noisy-tree-cycle",
            DatasetKind::NoisyTreeGrid => "noisy-tree-grid",
            DatasetKind::PlantedEdgeFeature => "planted-edge-feature",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            DatasetKind::NoisyBaHouse,
            DatasetKind::NoisyBaCommunity,
            DatasetKind::NoisyTreeCycle,
            DatasetKind::NoisyTreeGrid,
            DatasetKind::PlantedEdgeFeature,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }

    /// Motif node count, used as the minimum extracted-subgraph size.
    pub fn motif_size(self) -> usize {
        match self {
            DatasetKind::NoisyBaHouse | DatasetKind::NoisyBaCommunity => 5,
            DatasetKind::NoisyTreeCycle => 6,
            DatasetKind::NoisyTreeGrid => 9,
            DatasetKind::PlantedEdgeFeature => 2,
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    /// Barabási–Albert base size (BA kinds) or node count (planted kind).
    pub base_nodes: usize,
    /// Levels of the balanced binary tree (tree kinds).
    pub tree_depth: usize,
    pub num_motifs: usize,
    /// Edges added per new node during preferential attachment.
    pub ba_edges_per_node: usize,
    /// Random edges added after motif attachment, as a fraction of node count.
    pub perturbation_ratio: f64,
    /// Random edges joining the two communities, as a fraction of node count.
    pub inter_community_ratio: f64,
    pub num_important_features: usize,
    pub num_unimportant_features: usize,
    pub feature_sigma: f64,
}

impl GeneratorParams {
    pub fn defaults(kind: DatasetKind) -> Self {
        let base = Self {
            base_nodes: 300,
            tree_depth: 8,
            num_motifs: 80,
            ba_edges_per_node: 5,
            perturbation_ratio: 0.1,
            inter_community_ratio: 0.01,
            num_important_features: 40,
            num_unimportant_features: 10,
            feature_sigma: 0.15,
        };
        match kind {
            DatasetKind::NoisyBaHouse | DatasetKind::NoisyBaCommunity => base,
            DatasetKind::NoisyTreeCycle | DatasetKind::NoisyTreeGrid => Self {
                feature_sigma: 0.5,
                ..base
            },
            DatasetKind::PlantedEdgeFeature => Self {
                base_nodes: 200,
                num_motifs: 0,
                perturbation_ratio: 0.0,
                num_important_features: 4,
                num_unimportant_features: 0,
                feature_sigma: 2.0,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub seed: u64,
    pub params: GeneratorParams,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            params: GeneratorParams::defaults(kind),
        }
    }
}

/// Dispatches on the spec's kind.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset, GraphError> {
    match spec.kind {
        DatasetKind::NoisyBaHouse => ba_house_dataset(spec),
        DatasetKind::NoisyBaCommunity => ba_community_dataset(spec),
        DatasetKind::NoisyTreeCycle | DatasetKind::NoisyTreeGrid => tree_dataset(spec),
        DatasetKind::PlantedEdgeFeature => planted_dataset(spec),
    }
}

pub fn generate_ba_house(seed: u64) -> Result<Dataset, GraphError> {
    generate(&DatasetSpec::new(DatasetKind::NoisyBaHouse, seed))
}

pub fn generate_ba_community(seed: u64) -> Result<Dataset, GraphError> {
    generate(&DatasetSpec::new(DatasetKind::NoisyBaCommunity, seed))
}

pub fn generate_tree_cycle(seed: u64) -> Result<Dataset, GraphError> {
    generate(&DatasetSpec::new(DatasetKind::NoisyTreeCycle, seed))
}

pub fn generate_tree_grid(seed: u64) -> Result<Dataset, GraphError> {
    generate(&DatasetSpec::new(DatasetKind::NoisyTreeGrid, seed))
}

pub fn generate_planted_edge_feature(seed: u64) -> Result<Dataset, GraphError> {
    generate(&DatasetSpec::new(DatasetKind::PlantedEdgeFeature, seed))
}

/// Preferential-attachment graph on `n` nodes: a star on `m + 1` nodes, then
/// each new node links to `m` distinct existing nodes drawn proportionally to
/// degree.
pub fn barabasi_albert(
    n: usize,
    m: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>, GraphError> {
    if m == 0 || n <= m {
        return Err(GraphError::Invalid(format!(
            "preferential attachment needs 0 < m < n (m = {m}, n = {n})"
        )));
    }
    let mut edges: Vec<(usize, usize)> = (1..=m).map(|v| (0, v)).collect();
    let mut repeated: Vec<usize> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    for new in m + 1..n {
        let mut targets = Vec::with_capacity(m);
        while targets.len() < m {
            let t = repeated[rng.random_range(0..repeated.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, new));
            repeated.push(t);
            repeated.push(new);
        }
    }
    Ok(edges)
}

/// A planted motif template: node roles (labels) and internal edges over
/// local ids, plus the local id that attaches to the base graph.
struct Template {
    roles: Vec<usize>,
    edges: Vec<(usize, usize)>,
    anchor: usize,
}

fn house() -> Template {
    // 0 top; 1, 2 middle; 3, 4 bottom.
    Template {
        roles: vec![1, 2, 2, 3, 3],
        edges: vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)],
        anchor: 1,
    }
}

fn cycle(len: usize) -> Template {
    Template {
        roles: vec![1; len],
        edges: (0..len).map(|i| (i, (i + 1) % len)).collect(),
        anchor: 0,
    }
}

fn grid(side: usize) -> Template {
    let mut edges = Vec::new();
    for r in 0..side {
        for c in 0..side {
            let id = r * side + c;
            if c + 1 < side {
                edges.push((id, id + 1));
            }
            if r + 1 < side {
                edges.push((id, id + side));
            }
        }
    }
    Template {
        roles: vec![1; side * side],
        edges,
        anchor: 0,
    }
}

/// Structure and labels before features are attached.
struct Skeleton {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
    labels: Vec<usize>,
    important: BTreeSet<(usize, usize)>,
    motifs: Vec<Vec<usize>>,
}

impl Skeleton {
    fn new(num_nodes: usize, base_edges: Vec<(usize, usize)>, labels: Vec<usize>) -> Self {
        let mut s = Self {
            num_nodes,
            edges: Vec::new(),
            edge_set: HashSet::new(),
            labels,
            important: BTreeSet::new(),
            motifs: Vec::new(),
        };
        for (u, v) in base_edges {
            s.add_edge(u, v);
        }
        s
    }

    fn add_edge(&mut self, u: usize, v: usize) -> bool {
        let e = canonical(u, v);
        if u == v || !self.edge_set.insert(e) {
            return false;
        }
        self.edges.push(e);
        true
    }

    /// Appends `count` copies of `template`, each joined by one edge to a
    /// uniformly drawn node in `0..base_nodes`.
    fn attach(&mut self, template: &Template, count: usize, base_nodes: usize, rng: &mut impl Rng) {
        for _ in 0..count {
            let offset = self.num_nodes;
            let size = template.roles.len();
            self.num_nodes += size;
            self.labels.extend_from_slice(&template.roles);
            for &(a, b) in &template.edges {
                self.add_edge(offset + a, offset + b);
                self.important.insert(canonical(offset + a, offset + b));
            }
            let host = rng.random_range(0..base_nodes);
            self.add_edge(host, offset + template.anchor);
            self.motifs.push((offset..offset + size).collect());
        }
    }

    /// Adds `count` new random edges between distinct, unconnected nodes.
    fn perturb(&mut self, count: usize, rng: &mut impl Rng) {
        let mut added = 0;
        while added < count {
            let u = rng.random_range(0..self.num_nodes);
            let v = rng.random_range(0..self.num_nodes);
            if self.add_edge(u, v) {
                added += 1;
            }
        }
    }
}

fn ba_house_skeleton(params: &GeneratorParams, rng: &mut impl Rng) -> Result<Skeleton, GraphError> {
    let base = barabasi_albert(params.base_nodes, params.ba_edges_per_node, rng)?;
    let mut s = Skeleton::new(params.base_nodes, base, vec![0; params.base_nodes]);
    s.attach(&house(), params.num_motifs, params.base_nodes, rng);
    let count = (params.perturbation_ratio * s.num_nodes as f64).floor() as usize;
    s.perturb(count, rng);
    Ok(s)
}

fn finish(spec: &DatasetSpec, s: Skeleton, num_classes: usize) -> Result<Dataset, GraphError> {
    let p = &spec.params;
    let features = generate_features(
        &s.labels,
        p.num_important_features,
        p.num_unimportant_features,
        p.feature_sigma,
        spec.seed,
    )?;
    let graph = Graph::new(s.num_nodes, s.edges, features, s.labels, num_classes)?;
    let masks = split_masks(&graph, spec.seed)?;
    let graph = graph.with_masks(masks)?;
    Ok(Dataset {
        graph,
        ground_truth: GroundTruth {
            important_edges: s.important,
            important_features: (0..p.num_important_features).collect(),
            motif_nodes: s.motifs,
            motif_size: spec.kind.motif_size(),
        },
        spec: spec.clone(),
    })
}

fn ba_house_dataset(spec: &DatasetSpec) -> Result<Dataset, GraphError> {
    let mut rng = rng_for(spec.seed, STRUCTURE_STREAM);
    let s = ba_house_skeleton(&spec.params, &mut rng)?;
    finish(spec, s, 4)
}

fn ba_community_dataset(spec: &DatasetSpec) -> Result<Dataset, GraphError> {
    let first = ba_house_skeleton(&spec.params, &mut rng_for(spec.seed, STRUCTURE_STREAM))?;
    let second = ba_house_skeleton(&spec.params, &mut rng_for(spec.seed, SECOND_COMMUNITY_STREAM))?;
    let offset = first.num_nodes;
    let mut joined = Skeleton {
        num_nodes: first.num_nodes + second.num_nodes,
        edges: first.edges,
        edge_set: first.edge_set,
        labels: first.labels,
        important: first.important,
        motifs: first.motifs,
    };
    for (u, v) in second.edges {
        joined.add_edge(u + offset, v + offset);
    }
    joined.labels.extend(second.labels.iter().map(|l| l + 4));
    joined
        .important
        .extend(second.important.iter().map(|&(u, v)| (u + offset, v + offset)));
    joined.motifs.extend(
        second
            .motifs
            .iter()
            .map(|m| m.iter().map(|n| n + offset).collect()),
    );
    let mut rng = rng_for(spec.seed, JOIN_STREAM);
    let count = (spec.params.inter_community_ratio * joined.num_nodes as f64).floor() as usize;
    let mut added = 0;
    while added < count {
        let u = rng.random_range(0..offset);
        let v = offset + rng.random_range(0..second.num_nodes);
        if joined.add_edge(u, v) {
            added += 1;
        }
    }
    finish(spec, joined, 8)
}

fn balanced_binary_tree(depth: usize) -> (usize, Vec<(usize, usize)>) {
    let n = (1usize << depth) - 1;
    let edges = (1..n).map(|child| ((child - 1) / 2, child)).collect();
    (n, edges)
}

fn tree_dataset(spec: &DatasetSpec) -> Result<Dataset, GraphError> {
    let p = &spec.params;
    if p.tree_depth == 0 {
        return Err(GraphError::Invalid("tree depth must be positive".into()));
    }
    let mut rng = rng_for(spec.seed, STRUCTURE_STREAM);
    let (n, edges) = balanced_binary_tree(p.tree_depth);
    let mut s = Skeleton::new(n, edges, vec![0; n]);
    let template = match spec.kind {
        DatasetKind::NoisyTreeCycle => cycle(6),
        _ => grid(3),
    };
    s.attach(&template, p.num_motifs, n, &mut rng);
    let count = (p.perturbation_ratio * s.num_nodes as f64).floor() as usize;
    s.perturb(count, &mut rng);
    finish(spec, s, 2)
}

/// Two balanced classes. Every node draws three partners from its own class
/// (edge feature `+1`, type 0, ground-truth important) and three from the
/// other class (edge feature `-1`, type 1). A second edge feature is pure
/// noise. Node features are a near-constant column followed by weakly
/// class-informative columns.
fn planted_dataset(spec: &DatasetSpec) -> Result<Dataset, GraphError> {
    let p = &spec.params;
    let n = p.base_nodes;
    if n < 10 {
        return Err(GraphError::Invalid("planted dataset needs at least 10 nodes".into()));
    }
    let mut rng = rng_for(spec.seed, STRUCTURE_STREAM);
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    let mut s = Skeleton::new(n, Vec::new(), labels.clone());
    let mut kinds = Vec::new();
    for u in 0..n {
        for same in [true, false] {
            let mut added = 0;
            let mut attempts = 0;
            while added < 3 && attempts < 100 {
                attempts += 1;
                let v = rng.random_range(0..n);
                if (labels[v] == labels[u]) != same {
                    continue;
                }
                if s.add_edge(u, v) {
                    kinds.push(same);
                    if same {
                        s.important.insert(canonical(u, v));
                    }
                    added += 1;
                }
            }
        }
    }

    let mut feat_rng = rng_for(spec.seed, FEATURE_STREAM);
    let d = 1 + p.num_important_features;
    let bias_col = Normal::new(1.0, 0.1).expect("valid normal");
    let mut data = Vec::with_capacity(n * d);
    for &label in &labels {
        data.push(bias_col.sample(&mut feat_rng));
        let signal = Normal::new(label as f64, p.feature_sigma)
            .map_err(|e| GraphError::Invalid(e.to_string()))?;
        for _ in 0..p.num_important_features {
            data.push(signal.sample(&mut feat_rng));
        }
    }
    let features = Tensor::matrix(n, d, data).expect("dims");
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let edge_feats: Vec<f64> = kinds
        .iter()
        .flat_map(|&same| [if same { 1.0 } else { -1.0 }, noise.sample(&mut feat_rng)])
        .collect();
    let types = kinds.iter().map(|&same| usize::from(!same)).collect();
    let graph = Graph::new(n, s.edges, features, labels, 2)?
        .with_edge_features(Tensor::matrix(kinds.len(), 2, edge_feats).expect("dims"))?
        .with_edge_types(types)?;
    let masks = split_masks(&graph, spec.seed)?;
    let graph = graph.with_masks(masks)?;
    Ok(Dataset {
        graph,
        ground_truth: GroundTruth {
            important_edges: s.important,
            important_features: (1..d).collect(),
            motif_nodes: Vec::new(),
            motif_size: spec.kind.motif_size(),
        },
        spec: spec.clone(),
    })
}

/// Gaussian node features. Columns `0..num_important` have mean equal to the
/// node's class index; the remaining `num_unimportant` columns have mean 0
/// for every class. All columns share standard deviation `sigma`.
pub fn generate_features(
    labels: &[usize],
    num_important: usize,
    num_unimportant: usize,
    sigma: f64,
    seed: u64,
) -> Result<Tensor, GraphError> {
    if !(sigma > 0.0) {
        return Err(GraphError::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = rng_for(seed, FEATURE_STREAM);
    let noise = Normal::new(0.0, sigma).map_err(|e| GraphError::Invalid(e.to_string()))?;
    let d = num_important + num_unimportant;
    let mut data = Vec::with_capacity(labels.len() * d);
    for &label in labels {
        for l in 0..d {
            let mean = if l < num_important { label as f64 } else { 0.0 };
            data.push(mean + noise.sample(&mut rng));
        }
    }
    Tensor::matrix(labels.len(), d, data).map_err(|e| GraphError::Invalid(e.to_string()))
}

/// Random 80/10/10 split. Train and validation sizes are floored; the test
/// set takes the remainder. Each set is returned in ascending order.
pub fn split_masks(graph: &Graph, seed: u64) -> Result<Masks, GraphError> {
    let n = graph.num_nodes();
    if n < 10 {
        return Err(GraphError::Invalid(format!("cannot split {n} nodes 80/10/10")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, MASK_STREAM));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let take = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Masks {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}
