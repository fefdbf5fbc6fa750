//! Graph data model, synthetic benchmarks with ground-truth explanations,
//! and k-hop computation subgraphs.

mod generators;
mod subgraph;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub use generators::{
    barabasi_albert, generate, generate_ba_community, generate_ba_house, generate_features,
    generate_planted_edge_feature, generate_tree_cycle, generate_tree_grid, split_masks,
    DatasetKind, DatasetSpec, GeneratorParams,
};
pub use subgraph::{bfs_distances, k_hop_nodes, k_hop_subgraph, Subgraph};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node {node} out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Undirected simple graph with node features and labels.
///
/// Undirected edge `i = (u, v)` with `u < v` is realised as the directed
/// edges `2i = u→v` and `2i + 1 = v→u`. Optional edge features and edge
/// types are stored per undirected edge and shared by both directions.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    masks: Masks,
    edge_features: Option<Tensor>,
    edge_types: Option<Vec<usize>>,
    directed: Arc<[(usize, usize)]>,
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
    adjacency: Vec<Vec<(usize, usize)>>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes
            && self.edges == other.edges
            && self.features == other.features
            && self.labels == other.labels
            && self.num_classes == other.num_classes
            && self.masks == other.masks
            && self.edge_features == other.edge_features
            && self.edge_types == other.edge_types
    }
}

pub(crate) fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

impl Graph {
    /// Validates and indexes a graph. Edges are canonicalised to `(min, max)`;
    /// self-loops, duplicates and out-of-range endpoints are rejected.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        if !features.is_matrix() || features.rows() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "feature matrix {:?} does not have {num_nodes} rows",
                features.shape()
            )));
        }
        if labels.len() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(GraphError::Invalid(format!(
                "label {l} outside {num_classes} classes"
            )));
        }
        let mut edge_lookup = HashMap::with_capacity(edges.len());
        let mut canon = Vec::with_capacity(edges.len());
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::InvalidEdge(u, v, "endpoint out of range"));
            }
            if u == v {
                return Err(GraphError::InvalidEdge(u, v, "self-loop"));
            }
            let e = canonical(u, v);
            if edge_lookup.insert(e, i).is_some() {
                return Err(GraphError::InvalidEdge(u, v, "duplicate edge"));
            }
            canon.push(e);
        }
        let mut adjacency = vec![Vec::new(); num_nodes];
        let mut directed = Vec::with_capacity(2 * canon.len());
        for (i, &(u, v)) in canon.iter().enumerate() {
            adjacency[u].push((v, i));
            adjacency[v].push((u, i));
            directed.push((u, v));
            directed.push((v, u));
        }
        let sources = directed.iter().map(|e| e.0).collect();
        let targets = directed.iter().map(|e| e.1).collect();
        Ok(Self {
            num_nodes,
            edges: canon,
            features,
            labels,
            num_classes,
            masks: Masks::default(),
            edge_features: None,
            edge_types: None,
            directed: Arc::from(directed),
            sources,
            targets,
            adjacency,
            edge_lookup,
        })
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self, GraphError> {
        let mut seen = vec![false; self.num_nodes];
        for &n in masks.train.iter().chain(&masks.val).chain(&masks.test) {
            if n >= self.num_nodes {
                return Err(GraphError::NodeOutOfRange {
                    node: n,
                    num_nodes: self.num_nodes,
                });
            }
            if std::mem::replace(&mut seen[n], true) {
                return Err(GraphError::Invalid(format!("node {n} in more than one mask")));
            }
        }
        self.masks = masks;
        Ok(self)
    }

    /// Attaches one feature row per undirected edge.
    pub fn with_edge_features(mut self, feats: Tensor) -> Result<Self, GraphError> {
        if !feats.is_matrix() || feats.rows() != self.edges.len() {
            return Err(GraphError::Invalid(format!(
                "edge features {:?} for {} edges",
                feats.shape(),
                self.edges.len()
            )));
        }
        self.edge_features = Some(feats);
        Ok(self)
    }

    /// Attaches a type index per undirected edge.
    pub fn with_edge_types(mut self, types: Vec<usize>) -> Result<Self, GraphError> {
        if types.len() != self.edges.len() {
            return Err(GraphError::Invalid(format!(
                "{} edge types for {} edges",
                types.len(),
                self.edges.len()
            )));
        }
        self.edge_types = Some(types);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Undirected edges as `(min, max)` pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Directed edge list, two entries per undirected edge.
    pub fn directed_edges(&self) -> &Arc<[(usize, usize)]> {
        &self.directed
    }

    pub fn sources(&self) -> &Arc<[usize]> {
        &self.sources
    }

    pub fn targets(&self) -> &Arc<[usize]> {
        &self.targets
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn edge_features(&self) -> Option<&Tensor> {
        self.edge_features.as_ref()
    }

    pub fn edge_types(&self) -> Option<&[usize]> {
        self.edge_types.as_deref()
    }

    /// `(neighbour, undirected edge index)` pairs of `node`.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    /// Undirected edge index of `{u, v}`.
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.edge_lookup.get(&canonical(u, v)).copied()
    }

    pub fn check_node(&self, node: usize) -> Result<(), GraphError> {
        if node < self.num_nodes {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange {
                node,
                num_nodes: self.num_nodes,
            })
        }
    }

    /// Induced subgraph on `nodes` (original ids, any order). Returns the
    /// subgraph with nodes renumbered in ascending original order and the
    /// original index of every kept undirected edge.
    pub fn induced(&self, nodes: &[usize]) -> Result<(Graph, Vec<usize>, Vec<usize>), GraphError> {
        let mut node_map: Vec<usize> = nodes.to_vec();
        node_map.sort_unstable();
        node_map.dedup();
        let mut local = vec![usize::MAX; self.num_nodes];
        for (i, &n) in node_map.iter().enumerate() {
            self.check_node(n)?;
            local[n] = i;
        }
        let mut edges = Vec::new();
        let mut edge_map = Vec::new();
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            if local[u] != usize::MAX && local[v] != usize::MAX {
                edges.push((local[u], local[v]));
                edge_map.push(i);
            }
        }
        let d = self.num_features();
        let mut feats = Vec::with_capacity(node_map.len() * d);
        for &n in &node_map {
            feats.extend_from_slice(self.features.row(n));
        }
        let features = Tensor::matrix(node_map.len(), d, feats).expect("consistent dims");
        let labels = node_map.iter().map(|&n| self.labels[n]).collect();
        let mut g = Graph::new(node_map.len(), edges, features, labels, self.num_classes)?;
        if let Some(ef) = &self.edge_features {
            let h = ef.cols();
            let rows: Vec<f64> = edge_map.iter().flat_map(|&e| ef.row(e).to_vec()).collect();
            g = g.with_edge_features(Tensor::matrix(edge_map.len(), h, rows).expect("dims"))?;
        }
        if let Some(types) = &self.edge_types {
            g = g.with_edge_types(edge_map.iter().map(|&e| types[e]).collect())?;
        }
        Ok((g, node_map, edge_map))
    }
}

/// Ground-truth explanation annotations for a synthetic dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Motif-internal undirected edges as `(min, max)` pairs.
    pub important_edges: BTreeSet<(usize, usize)>,
    pub important_features: Vec<usize>,
    pub motif_nodes: Vec<Vec<usize>>,
    /// Minimum extracted-subgraph size used for evaluation.
    pub motif_size: usize,
}

impl GroundTruth {
    pub fn is_important(&self, u: usize, v: usize) -> bool {
        self.important_edges.contains(&canonical(u, v))
    }

    /// All nodes belonging to some motif, ascending.
    pub fn all_motif_nodes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.motif_nodes.iter().flatten().copied().collect();
        set.into_iter().collect()
    }
}

/// A graph together with its ground truth and the spec that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub ground_truth: GroundTruth,
    pub spec: DatasetSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    masks: Masks,
    ground_truth: GroundTruth,
    spec: DatasetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_features: Option<Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_types: Option<Vec<usize>>,
}

impl Dataset {
    pub fn to_json(&self) -> Result<String, GraphError> {
        let g = &self.graph;
        let file = DatasetFile {
            num_nodes: g.num_nodes,
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            features: g.features.clone(),
            labels: g.labels.clone(),
            num_classes: g.num_classes,
            masks: g.masks.clone(),
            ground_truth: self.ground_truth.clone(),
            spec: self.spec.clone(),
            edge_features: g.edge_features.clone(),
            edge_types: g.edge_types.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let mut graph = Graph::new(
            file.num_nodes,
            file.edges.into_iter().map(|[u, v]| (u, v)).collect(),
            file.features,
            file.labels,
            file.num_classes,
        )?
        .with_masks(file.masks)?;
        if let Some(ef) = file.edge_features {
            graph = graph.with_edge_features(ef)?;
        }
        if let Some(t) = file.edge_types {
            graph = graph.with_edge_types(t)?;
        }
        for &(u, v) in &file.ground_truth.important_edges {
            if graph.edge_index(u, v).is_none() {
                return Err(GraphError::InvalidEdge(u, v, "important edge not in graph"));
            }
        }
        Ok(Self {
            graph,
            ground_truth: file.ground_truth,
            spec: file.spec,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> Graph {
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(n, edges, Tensor::zeros(&[n, 2]), vec![0; n], 2).unwrap()
    }

    #[test]
    fn directed_edges_come_in_pairs() {
        let g = Graph::new(3, vec![(2, 0), (1, 2)], Tensor::zeros(&[3, 1]), vec![0; 3], 1).unwrap();
        assert_eq!(g.edges(), &[(0, 2), (1, 2)]);
        assert_eq!(&g.directed_edges()[..], &[(0, 2), (2, 0), (1, 2), (2, 1)]);
        assert_eq!(g.edge_index(2, 1), Some(1));
        assert_eq!(g.edge_index(0, 1), None);
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let f = Tensor::zeros(&[3, 1]);
        assert!(Graph::new(3, vec![(1, 1)], f.clone(), vec![0; 3], 1).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)], f.clone(), vec![0; 3], 1).is_err());
        assert!(Graph::new(3, vec![(0, 3)], f, vec![0; 3], 1).is_err());
    }

    #[test]
    fn masks_must_be_disjoint() {
        let g = path_graph(4);
        let overlapping = Masks {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        assert!(g.clone().with_masks(overlapping).is_err());
        let ok = Masks {
            train: vec![0, 1],
            val: vec![2],
            test: vec![3],
        };
        assert!(g.with_masks(ok).is_ok());
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = path_graph(5);
        let (sub, nodes, edges) = g.induced(&[3, 1, 2]).unwrap();
        assert_eq!(nodes, vec![1, 2, 3]);
        assert_eq!(sub.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(edges, vec![1, 2]);
    }
}
