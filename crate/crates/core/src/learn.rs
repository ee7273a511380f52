//! Constrained hill-climbing structure search and k-fold majority-vote
//! graph averaging.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Dag, DagError, EdgeConstraints, EdgeEdit};
use crate::dataset::{kfold_split, Dataset, DatasetError};
use crate::score::{ScoreEngine, ScoreError};
use crate::substream;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("whitelist is cyclic")]
    CyclicWhitelist,
    #[error("constraint references unknown column {0}")]
    UnknownColumn(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Dag(#[from] DagError),
}

/// One accepted search move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    /// Rendered edit, e.g. `add(LBD, Utility)`.
    pub edit: String,
    pub score_after: f64,
}

/// Record of one hill-climbing run. Scores are strictly increasing across
/// steps by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub seed: u64,
    pub steps: Vec<SearchStep>,
    pub final_score: f64,
}

/// Vote count for one directed edge across the fold graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeVote {
    pub from: String,
    pub to: String,
    pub votes: u32,
}

/// Per-edge vote counts over k fold graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub k: usize,
    /// Sorted by (from, to); absent pairs have zero votes.
    pub votes: Vec<EdgeVote>,
    /// Adjacencies that cleared the majority threshold but whose two
    /// directions tied; they are dropped from the averaged graph.
    pub dropped_ties: Vec<(String, String)>,
}

impl VoteTally {
    pub fn count(&self, from: &str, to: &str) -> u32 {
        self.votes
            .iter()
            .find(|v| v.from == from && v.to == to)
            .map(|v| v.votes)
            .unwrap_or(0)
    }
}

/// A valid edit, its score delta, and the re-scored children.
type Candidate = (EdgeEdit, f64, Vec<(usize, f64)>);

fn render_edit(g: &Dag, edit: EdgeEdit) -> String {
    let (u, v) = edit.endpoints();
    let kind = match edit {
        EdgeEdit::Add(..) => "add",
        EdgeEdit::Remove(..) => "remove",
        EdgeEdit::Reverse(..) => "reverse",
    };
    format!("{kind}({}, {})", g.node_name(u), g.node_name(v))
}

/// Steepest-ascent hill climbing over add/remove/reverse edits.
///
/// Starts from the whitelist-only graph and, each round, scores every valid
/// single-edge perturbation, keeping the best one if it strictly improves
/// the BIC; terminates at a local optimum. Enumeration order is fixed
/// (edit kind, then source, then target index), and score ties keep the
/// earliest candidate, so the search is fully deterministic; the seed is
/// only recorded in the trace.
///
/// Candidates whose parent sets are collinear (singular design) or too
/// large for the row count are skipped rather than failing the search.
pub fn hill_climb(
    c: &EdgeConstraints,
    d: &Dataset,
    seed: u64,
) -> Result<(Dag, SearchTrace), LearnError> {
    let engine = ScoreEngine::new(d);
    hill_climb_with_engine(c, d, seed, &engine)
}

fn hill_climb_with_engine(
    c: &EdgeConstraints,
    d: &Dataset,
    seed: u64,
    engine: &ScoreEngine,
) -> Result<(Dag, SearchTrace), LearnError> {
    let nodes = d.column_names();
    for (u, v) in c.whitelist().iter().chain(c.blacklist()) {
        for name in [u, v] {
            if !nodes.contains(name) {
                return Err(LearnError::UnknownColumn(name.clone()));
            }
        }
    }
    let whitelist_edges: Vec<(&str, &str)> = c
        .whitelist()
        .iter()
        .map(|(u, v)| (u.as_str(), v.as_str()))
        .collect();
    let mut graph = match Dag::new(&nodes, &whitelist_edges) {
        Ok(g) => g,
        Err(DagError::Cyclic) => return Err(LearnError::CyclicWhitelist),
        Err(e) => return Err(e.into()),
    };

    let n = graph.node_count();
    // Scoring the start graph surfaces degenerate data immediately.
    let mut locals = vec![0.0f64; n];
    for (i, slot) in locals.iter_mut().enumerate() {
        *slot = engine.local_score_idx(i, graph.parents(i))?;
    }
    let mut total: f64 = locals.iter().sum();

    let mut trace = SearchTrace {
        seed,
        steps: Vec::new(),
        final_score: total,
    };
    loop {
        let mut best: Option<Candidate> = None;
        for edit in enumerate_edits(&graph) {
            let (u, v) = edit.endpoints();
            // Dummy-coded categoricals have no Gaussian likelihood as a
            // response, so they stay roots.
            let gaining_parent = match edit {
                EdgeEdit::Add(..) => v,
                EdgeEdit::Reverse(..) => u,
                EdgeEdit::Remove(..) => usize::MAX,
            };
            if gaining_parent != usize::MAX && engine.is_categorical(gaining_parent) {
                continue;
            }
            let candidate = match graph.apply_edit(edit, c) {
                Ok(g) => g,
                Err(_) => continue,
            };
            // Only the children whose parent sets changed need re-scoring.
            let affected: &[usize] = match edit {
                EdgeEdit::Add(..) | EdgeEdit::Remove(..) => &[v],
                EdgeEdit::Reverse(..) => &[u, v],
            };
            let mut delta = 0.0;
            let mut updates = Vec::with_capacity(affected.len());
            let mut valid = true;
            for &child in affected {
                match engine.local_score_idx(child, candidate.parents(child)) {
                    Ok(s) => {
                        delta += s - locals[child];
                        updates.push((child, s));
                    }
                    Err(_) => {
                        valid = false;
                        break;
                    }
                }
            }
            if !valid {
                continue;
            }
            if delta > 0.0 && best.as_ref().map(|(_, d, _)| delta > *d).unwrap_or(true) {
                best = Some((edit, delta, updates));
            }
        }
        match best {
            None => break,
            Some((edit, _, updates)) => {
                graph = graph.apply_edit(edit, c).expect("validated above");
                for (child, s) in updates {
                    locals[child] = s;
                }
                total = locals.iter().sum();
                trace.steps.push(SearchStep {
                    edit: render_edit(&graph, edit),
                    score_after: total,
                });
            }
        }
    }
    trace.final_score = total;
    Ok((graph, trace))
}

/// All candidate edits of `g` in deterministic order: adds, then removes,
/// then reverses, each by (source, target) index.
fn enumerate_edits(g: &Dag) -> Vec<EdgeEdit> {
    let n = g.node_count();
    let mut edits = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && !g.has_edge(u, v) {
                edits.push(EdgeEdit::Add(u, v));
            }
        }
    }
    for u in 0..n {
        for v in 0..n {
            if g.has_edge(u, v) {
                edits.push(EdgeEdit::Remove(u, v));
            }
        }
    }
    for u in 0..n {
        for v in 0..n {
            if g.has_edge(u, v) {
                edits.push(EdgeEdit::Reverse(u, v));
            }
        }
    }
    edits
}

/// Exhaustive post-hoc check that no single valid edit improves the score.
pub fn verify_local_optimum(g: &Dag, c: &EdgeConstraints, d: &Dataset) -> Result<bool, LearnError> {
    let engine = ScoreEngine::new(d);
    let mut locals = Vec::with_capacity(g.node_count());
    for i in 0..g.node_count() {
        locals.push(engine.local_score_idx(i, g.parents(i))?);
    }
    for edit in enumerate_edits(g) {
        let (u, v) = edit.endpoints();
        let gaining = match edit {
            EdgeEdit::Add(..) => Some(v),
            EdgeEdit::Reverse(..) => Some(u),
            EdgeEdit::Remove(..) => None,
        };
        if gaining.map(|i| engine.is_categorical(i)).unwrap_or(false) {
            continue;
        }
        let candidate = match g.apply_edit(edit, c) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let affected: &[usize] = match edit {
            EdgeEdit::Add(..) | EdgeEdit::Remove(..) => &[v],
            EdgeEdit::Reverse(..) => &[u, v],
        };
        let mut delta = 0.0;
        let mut ok = true;
        for &child in affected {
            match engine.local_score_idx(child, candidate.parents(child)) {
                Ok(s) => delta += s - locals[child],
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && delta > 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Learns a graph per fold (leaving the fold out), then averages by
/// majority vote: an adjacency needs a strict majority of folds, direction
/// goes to the plurality, direction ties drop the edge, and any remaining
/// cycle loses its weakest edge until the result is a DAG.
pub fn cv_learn(
    c: &EdgeConstraints,
    d: &Dataset,
    k: usize,
    seed: u64,
) -> Result<(Dag, VoteTally), LearnError> {
    let plan = kfold_split(d.n_rows(), k, seed)?;
    let fold_graphs: Vec<Dag> = (0..k)
        .into_par_iter()
        .map(|i| -> Result<Dag, LearnError> {
            let train = d.select_rows(&plan.train_rows(i))?;
            let (g, _) = hill_climb(c, &train, substream(seed, i as u64))?;
            Ok(g)
        })
        .collect::<Result<_, _>>()?;

    let mut counts: BTreeMap<(String, String), u32> = BTreeMap::new();
    for g in &fold_graphs {
        for (u, v) in g.named_edges() {
            *counts.entry((u, v)).or_insert(0) += 1;
        }
    }
    let mut tally = VoteTally {
        k,
        votes: counts
            .iter()
            .map(|((u, v), n)| EdgeVote {
                from: u.clone(),
                to: v.clone(),
                votes: *n,
            })
            .collect(),
        dropped_ties: Vec::new(),
    };
    let averaged = average_votes(&mut tally, &d.column_names(), c)?;
    Ok((averaged, tally))
}

/// Builds the averaged graph from a tally. Exposed separately so vote
/// patterns that never arise from real folds (cycles, conflicting
/// directions) can be exercised directly.
pub fn average_votes(
    tally: &mut VoteTally,
    nodes: &[String],
    c: &EdgeConstraints,
) -> Result<Dag, LearnError> {
    let k = tally.k as u32;
    let counts: BTreeMap<(String, String), u32> = tally
        .votes
        .iter()
        .map(|v| ((v.from.clone(), v.to.clone()), v.votes))
        .collect();
    let count = |u: &str, v: &str| {
        counts
            .get(&(u.to_string(), v.to_string()))
            .copied()
            .unwrap_or(0)
    };

    let mut edges: Vec<(String, String, u32)> = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let (u, v) = (&nodes[i], &nodes[j]);
            let forward = count(u, v);
            let backward = count(v, u);
            if 2 * (forward + backward) <= k {
                continue; // no strict majority for the adjacency
            }
            match forward.cmp(&backward) {
                std::cmp::Ordering::Greater => edges.push((u.clone(), v.clone(), forward)),
                std::cmp::Ordering::Less => edges.push((v.clone(), u.clone(), backward)),
                std::cmp::Ordering::Equal => dropped.push((u.clone(), v.clone())),
            }
        }
    }
    tally.dropped_ties = dropped;

    // Cycle repair: drop the weakest non-whitelisted edge on a cycle until
    // none remain. The whitelist subgraph is acyclic, so a cycle always
    // offers a removable edge.
    loop {
        let named: Vec<(&str, &str)> = edges
            .iter()
            .map(|(u, v, _)| (u.as_str(), v.as_str()))
            .collect();
        match Dag::new(nodes, &named) {
            Ok(g) => {
                debug_assert!(c.satisfied_by(&g));
                return Ok(g);
            }
            Err(DagError::Cyclic) => {
                let cycle = find_cycle(nodes, &edges);
                let victim = cycle
                    .iter()
                    .filter(|(u, v)| !c.requires(u, v))
                    .min_by(|(au, av), (bu, bv)| {
                        count(au, av)
                            .cmp(&count(bu, bv))
                            .then_with(|| (au, av).cmp(&(bu, bv)))
                    })
                    .cloned()
                    .expect("cycle must contain a non-whitelisted edge");
                edges.retain(|(u, v, _)| {
                    (u.as_str(), v.as_str()) != (victim.0.as_str(), victim.1.as_str())
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Finds one directed cycle in a (possibly cyclic) edge list, returned as
/// its edges.
fn find_cycle(nodes: &[String], edges: &[(String, String, u32)]) -> Vec<(String, String)> {
    let index: BTreeMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let n = nodes.len();
    let mut adj = vec![Vec::new(); n];
    for (u, v, _) in edges {
        adj[index[u.as_str()]].push(index[v.as_str()]);
    }
    // Iterative DFS with colors; on a back edge, reconstruct the loop from
    // the current stack.
    let mut color = vec![0u8; n]; // 0 white, 1 gray, 2 black
    let mut parent = vec![usize::MAX; n];
    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        color[start] = 1;
        while let Some(&(u, ei)) = stack.last() {
            if ei < adj[u].len() {
                stack.last_mut().unwrap().1 += 1;
                let v = adj[u][ei];
                match color[v] {
                    0 => {
                        color[v] = 1;
                        parent[v] = u;
                        stack.push((v, 0));
                    }
                    1 => {
                        // Back edge u -> v closes a cycle v -> ... -> u -> v.
                        let mut cycle = vec![(nodes[u].clone(), nodes[v].clone())];
                        let mut w = u;
                        while w != v {
                            cycle.push((nodes[parent[w]].clone(), nodes[w].clone()));
                            w = parent[w];
                        }
                        cycle.reverse();
                        return cycle;
                    }
                    _ => {}
                }
            } else {
                color[u] = 2;
                stack.pop();
            }
        }
    }
    unreachable!("called only when a cycle exists")
}
