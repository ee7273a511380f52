//! Shared test helpers: an independent brute-force d-separation oracle and
//! a random DAG generator.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use satcausal::Dag;

/// Literal path-blocking oracle: enumerate every simple undirected path and
/// apply the chain/fork/collider rules verbatim. Deliberately independent
/// of the reachability-based implementation it checks.
pub fn dsep_oracle(g: &Dag, x: usize, y: usize, s: &BTreeSet<usize>) -> bool {
    let n = g.node_count();
    // Undirected adjacency with per-edge direction lookup.
    let mut neighbors = vec![BTreeSet::new(); n];
    for (u, v) in g.edges() {
        neighbors[u].insert(v);
        neighbors[v].insert(u);
    }
    let points_to = |u: usize, v: usize| g.children(u).contains(&v);

    // Descendants by a plain child walk.
    let descendants = |w: usize| -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = g.children(w).to_vec();
        while let Some(u) = stack.pop() {
            if out.insert(u) {
                stack.extend_from_slice(g.children(u));
            }
        }
        out
    };

    // DFS over simple paths from x to y.
    let mut path = vec![x];
    let mut on_path = vec![false; n];
    on_path[x] = true;
    let mut stack: Vec<Vec<usize>> = vec![neighbors[x].iter().copied().collect()];
    while !path.is_empty() {
        let depth = path.len() - 1;
        match stack[depth].pop() {
            None => {
                let popped = path.pop().unwrap();
                on_path[popped] = false;
                stack.pop();
            }
            Some(next) => {
                if on_path[next] {
                    continue;
                }
                if next == y {
                    // Found a full path; check whether anything blocks it.
                    let full: Vec<usize> = path.iter().copied().chain([y]).collect();
                    let mut blocked = false;
                    for i in 1..full.len() - 1 {
                        let (prev, w, nxt) = (full[i - 1], full[i], full[i + 1]);
                        let collider = points_to(prev, w) && points_to(nxt, w);
                        let w_blocked = if collider {
                            !s.contains(&w) && descendants(w).intersection(s).count() == 0
                        } else {
                            s.contains(&w)
                        };
                        if w_blocked {
                            blocked = true;
                            break;
                        }
                    }
                    if !blocked {
                        return false; // an active path connects x and y
                    }
                    continue;
                }
                path.push(next);
                on_path[next] = true;
                stack.push(neighbors[next].iter().copied().collect());
            }
        }
    }
    true
}

/// Random DAG on `n` nodes: an edge between each pair with probability
/// `edge_prob`, oriented along a random node permutation.
pub fn random_dag(n: usize, edge_prob: f64, seed: u64) -> Dag {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
    // Random topological order.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut edges: Vec<(String, String)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(edge_prob) {
                edges.push((names[order[i]].clone(), names[order[j]].clone()));
            }
        }
    }
    let refs: Vec<(&str, &str)> = edges
        .iter()
        .map(|(u, v)| (u.as_str(), v.as_str()))
        .collect();
    Dag::new(&names, &refs).expect("orientation along a permutation is acyclic")
}
