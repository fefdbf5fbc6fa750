//! Graphviz export of an explanation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{Explanation, Extraction, Target};

/// Undirected DOT graph of the computation subgraph. Every edge carries
/// `weight=<score>`; extracted edges are bold and ground-truth edges red.
/// Target nodes are filled.
pub fn to_dot(
    ex: &Explanation,
    extraction: Option<&Extraction>,
    important: Option<&BTreeSet<(usize, usize)>>,
) -> String {
    let extracted: BTreeSet<(usize, usize)> = extraction
        .map(|x| x.edges.iter().copied().collect())
        .unwrap_or_default();
    let targets: BTreeSet<usize> = match &ex.target {
        Target::Node(n) => [*n].into(),
        Target::Group(v) => v.iter().copied().collect(),
    };
    let mut out = String::new();
    let _ = writeln!(out, "graph explanation {{");
    let _ = writeln!(out, "  label=\"{}\";", ex.method);
    let _ = writeln!(out, "  node [shape=circle];");
    for &n in &ex.nodes {
        if targets.contains(&n) {
            let _ = writeln!(out, "  {n} [style=filled, fillcolor=lightblue];");
        } else {
            let _ = writeln!(out, "  {n};");
        }
    }
    for e in &ex.edge_scores {
        let mut attrs = vec![format!("weight={}", e.score)];
        if extracted.contains(&(e.u, e.v)) {
            attrs.push("style=bold".into());
        }
        if important.is_some_and(|s| s.contains(&(e.u, e.v))) {
            attrs.push("color=red".into());
        }
        let _ = writeln!(out, "  {} -- {} [{}];", e.u, e.v, attrs.join(", "));
    }
    out.push_str("}\n");
    out
}
