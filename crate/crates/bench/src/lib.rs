//! Inputs shared by the benchmarks.

use lattice_inverse::bvp::Potential;
use lattice_inverse::network::{ConductanceNetwork, NetworkEdge};
use lattice_inverse::HexParallelogram;
use std::collections::BTreeMap;

/// A deterministic potential with `Q` in `[-0.8, 0.8]` on the parallelogram interior.
pub fn parallelogram_potential(par: &HexParallelogram, lambda: f64) -> Potential {
    let q = par
        .region()
        .interior()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, 0.8 * (((i * 7919) % 101) as f64 / 50.0 - 1.0)))
        .collect();
    Potential::from_q(&q, lambda)
}

/// An `n × n` grid network with its perimeter as boundary.
pub fn grid_network(n: u32) -> ConductanceNetwork {
    let id = |r: u32, c: u32| r * n + c;
    let mut edges = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let gamma = 1.0 + ((r * 31 + c * 17) % 7) as f64 / 7.0;
            if c + 1 < n {
                edges.push(NetworkEdge { a: id(r, c), b: id(r, c + 1), gamma });
            }
            if r + 1 < n {
                edges.push(NetworkEdge { a: id(r, c), b: id(r + 1, c), gamma: 2.0 / gamma });
            }
        }
    }
    let mut boundary: Vec<u32> = (0..n).map(|c| id(0, c)).collect();
    boundary.extend((1..n).map(|r| id(r, n - 1)));
    boundary.extend((0..n - 1).rev().map(|c| id(n - 1, c)));
    boundary.extend((1..n - 1).rev().map(|r| id(r, 0)));
    let positions: BTreeMap<u32, [f64; 2]> =
        (0..n).flat_map(|r| (0..n).map(move |c| (id(r, c), [c as f64, -(r as f64)]))).collect();
    ConductanceNetwork::new(boundary, edges, [], positions).expect("grid network")
}
