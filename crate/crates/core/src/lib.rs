//! Sparse edge and node-feature importance learning for graph neural networks.
//!
//! A GCN classifier is wrapped with a single-layer importance network that
//! assigns every node feature and every edge a probability. The probabilities
//! mask the input graph during training and are pushed towards sparse, near
//! binary values by L1 and entropy penalties, so they double as an
//! explanation of what the classifier relies on.
//!
//! Modules:
//! - [`autodiff`]: reverse-mode differentiation over dense tensors.
//! - [`graph`]: graph data, synthetic motif benchmarks and k-hop subgraphs.
//! - [`model`]: GCN stack and importance layer.
//! - [`train`]: composite loss, Adam and the training loop.
//! - [`explain`]: importance scores, baselines, subgraph extraction and metrics.
//! - [`pipeline`]: reproducible run directories used by the CLI.

pub mod autodiff;
pub mod graph;
pub mod model;
pub mod train;
pub mod explain;
pub mod pipeline;

/// Maps `f` over `items` on a dedicated pool of `threads` workers (inline for
/// one thread). Output order follows `items`.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
