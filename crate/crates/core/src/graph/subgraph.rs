use std::collections::VecDeque;

use super::{Graph, GraphError};

/// Breadth-first hop distances from a set of sources (`None` = unreachable).
pub fn bfs_distances(graph: &Graph, sources: &[usize]) -> Result<Vec<Option<usize>>, GraphError> {
    let mut dist = vec![None; graph.num_nodes()];
    let mut queue = VecDeque::new();
    for &s in sources {
        graph.check_node(s)?;
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for &(v, _) in graph.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    Ok(dist)
}

/// Nodes within `k` hops of any source, ascending.
pub fn k_hop_nodes(graph: &Graph, sources: &[usize], k: usize) -> Result<Vec<usize>, GraphError> {
    let dist = bfs_distances(graph, sources)?;
    Ok(dist
        .iter()
        .enumerate()
        .filter_map(|(n, d)| d.filter(|&d| d <= k).map(|_| n))
        .collect())
}

/// Induced subgraph with maps back to the parent graph.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: Graph,
    /// Parent id of each local node, ascending.
    pub node_map: Vec<usize>,
    /// Parent undirected-edge index of each local undirected edge.
    pub edge_map: Vec<usize>,
}

impl Subgraph {
    pub fn local_node(&self, parent: usize) -> Option<usize> {
        self.node_map.binary_search(&parent).ok()
    }
}

/// The induced subgraph on all nodes within `k` hops of `node`.
pub fn k_hop_subgraph(graph: &Graph, node: usize, k: usize) -> Result<Subgraph, GraphError> {
    if k == 0 {
        return Err(GraphError::Invalid("k_hop_subgraph needs k >= 1".into()));
    }
    let nodes = k_hop_nodes(graph, &[node], k)?;
    let (sub, node_map, edge_map) = graph.induced(&nodes)?;
    Ok(Subgraph {
        graph: sub,
        node_map,
        edge_map,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tensor;

    fn graph_from(n: usize, edges: Vec<(usize, usize)>) -> Graph {
        Graph::new(n, edges, Tensor::zeros(&[n, 1]), vec![0; n], 1).unwrap()
    }

    #[test]
    fn isolated_node() {
        let g = graph_from(3, vec![(1, 2)]);
        let s = k_hop_subgraph(&g, 0, 3).unwrap();
        assert_eq!(s.node_map, vec![0]);
        assert_eq!(s.graph.num_edges(), 0);
    }

    #[test]
    fn path_one_hop() {
        // a-b-c-d-e, target c
        let g = graph_from(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        let s = k_hop_subgraph(&g, 2, 1).unwrap();
        assert_eq!(s.node_map, vec![1, 2, 3]);
        let parent_edges: Vec<_> = s.edge_map.iter().map(|&e| g.edges()[e]).collect();
        assert_eq!(parent_edges, vec![(1, 2), (2, 3)]);
        assert_eq!(s.local_node(3), Some(2));
        assert_eq!(s.local_node(4), None);
    }

    #[test]
    fn out_of_range_target() {
        let g = graph_from(2, vec![(0, 1)]);
        assert!(matches!(
            k_hop_subgraph(&g, 2, 1),
            Err(GraphError::NodeOutOfRange { .. })
        ));
    }

    /// Floyd–Warshall distances, independent of the BFS path.
    fn all_pairs(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for &(u, v) in edges {
            d[u][v] = 1;
            d[v][u] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn matches_brute_force_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 20;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(0.12) {
                        edges.push((u, v));
                    }
                }
            }
            let g = graph_from(n, edges.clone());
            let d = all_pairs(n, &edges);
            for target in [0, 7, 19] {
                for k in 1..4 {
                    let s = k_hop_subgraph(&g, target, k).unwrap();
                    let expected: Vec<usize> = (0..n).filter(|&v| d[target][v] <= k).collect();
                    assert_eq!(s.node_map, expected);
                    let expected_edges: Vec<usize> = edges
                        .iter()
                        .enumerate()
                        .filter(|(_, &(u, v))| d[target][u] <= k && d[target][v] <= k)
                        .map(|(i, _)| i)
                        .collect();
                    assert_eq!(s.edge_map, expected_edges);
                }
            }
        }
    }
}
