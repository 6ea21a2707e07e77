//! Shared fixtures for the criterion benches.

use aggstab::graph::{build_shift_from_adjacency, random_graph, Normalization, RandomGraphModel};
use aggstab::Graph;

/// Degree-normalized Erdős–Rényi graph used by every bench.
pub fn bench_graph(n: usize, seed: u64) -> Graph {
    let raw = random_graph(&RandomGraphModel::ErdosRenyi { p: 0.3 }, n, seed).expect("valid model");
    build_shift_from_adjacency(raw.shift(), Normalization::SymmetricDegree).expect("valid adjacency")
}
