//! Directed acyclic graphs over named variables: d-separation, constrained
//! edits, and deterministic DOT/JSON export.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{columns, ColumnSchema};

#[derive(Debug, Error, PartialEq)]
pub enum DagError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("duplicate node name {0}")]
    DuplicateNode(String),
    #[error("edge set contains a cycle")]
    Cyclic,
    #[error("self-loop on {0}")]
    SelfLoop(String),
    #[error("whitelist and blacklist overlap on ({0}, {1})")]
    ConstraintOverlap(String, String),
    #[error("whitelist is cyclic")]
    CyclicWhitelist,
    #[error("nodes {0} and {1} must be distinct and outside the conditioning set")]
    BadSeparationQuery(String, String),
    #[error("malformed graph JSON: {0}")]
    BadJson(String),
}

/// Reason an edge edit was rejected.
#[derive(Debug, Error, PartialEq, Clone, Copy)]
pub enum EditError {
    #[error("edit would create a cycle")]
    Cycle,
    #[error("edit removes or reverses a whitelisted edge")]
    WhitelistViolation,
    #[error("edit introduces a blacklisted edge")]
    BlacklistViolation,
    #[error("edge does not exist")]
    NoSuchEdge,
    #[error("edge already exists")]
    EdgeExists,
}

/// One add/remove/reverse perturbation, in node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeEdit {
    Add(usize, usize),
    Remove(usize, usize),
    Reverse(usize, usize),
}

impl EdgeEdit {
    pub fn endpoints(&self) -> (usize, usize) {
        match *self {
            EdgeEdit::Add(u, v) | EdgeEdit::Remove(u, v) | EdgeEdit::Reverse(u, v) => (u, v),
        }
    }
}

/// Immutable DAG. Every constructor and edit re-verifies acyclicity, so a
/// value of this type is a directed *acyclic* graph by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    /// Graph with the given nodes and no edges.
    pub fn empty(nodes: &[String]) -> Result<Dag, DagError> {
        let mut index = HashMap::new();
        for (i, name) in nodes.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(DagError::DuplicateNode(name.clone()));
            }
        }
        let n = nodes.len();
        Ok(Dag {
            nodes: nodes.to_vec(),
            index,
            parents: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
        })
    }

    /// Graph with the given named edges; rejects cycles, self-loops, and
    /// unknown endpoints. Duplicate edges collapse to one.
    pub fn new(nodes: &[String], edges: &[(&str, &str)]) -> Result<Dag, DagError> {
        let mut g = Dag::empty(nodes)?;
        for (u, v) in edges {
            let ui = g
                .node_index(u)
                .ok_or_else(|| DagError::UnknownNode(u.to_string()))?;
            let vi = g
                .node_index(v)
                .ok_or_else(|| DagError::UnknownNode(v.to_string()))?;
            if ui == vi {
                return Err(DagError::SelfLoop(u.to_string()));
            }
            g.insert_edge(ui, vi);
        }
        if g.has_cycle() {
            return Err(DagError::Cyclic);
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_name(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    fn require(&self, name: &str) -> Result<usize, DagError> {
        self.node_index(name)
            .ok_or_else(|| DagError::UnknownNode(name.to_string()))
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.children[u].binary_search(&v).is_ok()
    }

    /// Edges in (source, target) index order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, ch) in self.children.iter().enumerate() {
            for &v in ch {
                out.push((u, v));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Edges as name pairs, sorted lexicographically.
    pub fn named_edges(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .edges()
            .iter()
            .map(|&(u, v)| (self.nodes[u].clone(), self.nodes[v].clone()))
            .collect();
        out.sort();
        out
    }

    fn insert_edge(&mut self, u: usize, v: usize) {
        if let Err(pos) = self.children[u].binary_search(&v) {
            self.children[u].insert(pos, v);
        }
        if let Err(pos) = self.parents[v].binary_search(&u) {
            self.parents[v].insert(pos, u);
        }
    }

    fn erase_edge(&mut self, u: usize, v: usize) {
        if let Ok(pos) = self.children[u].binary_search(&v) {
            self.children[u].remove(pos);
        }
        if let Ok(pos) = self.parents[v].binary_search(&u) {
            self.parents[v].remove(pos);
        }
    }

    fn has_cycle(&self) -> bool {
        // Kahn's algorithm; a leftover node means a cycle.
        let n = self.node_count();
        let mut indeg: Vec<usize> = (0..n).map(|i| self.parents[i].len()).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(u) = queue.pop_front() {
            seen += 1;
            for &v in &self.children[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        seen != n
    }

    /// Nodes in dependency order (parents before children). Deterministic:
    /// ties broken by node index.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut indeg: Vec<usize> = (0..n).map(|i| self.parents[i].len()).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&u) = ready.iter().next() {
            ready.remove(&u);
            order.push(u);
            for &v in &self.children[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.insert(v);
                }
            }
        }
        debug_assert_eq!(order.len(), n);
        order
    }

    /// True if a directed path leads from `u` to `v`.
    pub fn has_directed_path(&self, u: usize, v: usize) -> bool {
        if u == v {
            return true;
        }
        let mut stack = vec![u];
        let mut seen = vec![false; self.node_count()];
        while let Some(x) = stack.pop() {
            if x == v {
                return true;
            }
            if std::mem::replace(&mut seen[x], true) {
                continue;
            }
            stack.extend_from_slice(&self.children[x]);
        }
        false
    }

    /// All nodes reachable from `x` by directed paths, excluding `x` itself.
    pub fn descendants(&self, x: &str) -> Result<BTreeSet<String>, DagError> {
        let xi = self.require(x)?;
        Ok(self
            .descendant_indices(xi)
            .into_iter()
            .map(|i| self.nodes[i].clone())
            .collect())
    }

    pub fn descendant_indices(&self, x: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = self.children[x].to_vec();
        while let Some(u) = stack.pop() {
            if out.insert(u) {
                stack.extend_from_slice(&self.children[u]);
            }
        }
        out
    }

    /// A copy of the graph with every outgoing edge of `x` removed; the
    /// graph in which backdoor sets are checked.
    pub fn without_outgoing(&self, x: usize) -> Dag {
        let mut g = self.clone();
        for v in self.children[x].clone() {
            g.erase_edge(x, v);
        }
        g
    }

    /// Applies one edit under `constraints`. The result is returned only if
    /// it is acyclic, keeps every whitelisted edge, and contains no
    /// blacklisted edge; otherwise the reason for rejection is returned.
    pub fn apply_edit(
        &self,
        edit: EdgeEdit,
        constraints: &EdgeConstraints,
    ) -> Result<Dag, EditError> {
        let (u, v) = edit.endpoints();
        assert!(
            u < self.node_count() && v < self.node_count(),
            "edit endpoints must be nodes"
        );
        let mut g = self.clone();
        match edit {
            EdgeEdit::Add(..) => {
                if u == v {
                    return Err(EditError::Cycle);
                }
                if self.has_edge(u, v) {
                    return Err(EditError::EdgeExists);
                }
                if constraints.forbids(&self.nodes[u], &self.nodes[v]) {
                    return Err(EditError::BlacklistViolation);
                }
                g.insert_edge(u, v);
            }
            EdgeEdit::Remove(..) => {
                if !self.has_edge(u, v) {
                    return Err(EditError::NoSuchEdge);
                }
                if constraints.requires(&self.nodes[u], &self.nodes[v]) {
                    return Err(EditError::WhitelistViolation);
                }
                g.erase_edge(u, v);
            }
            EdgeEdit::Reverse(..) => {
                if !self.has_edge(u, v) {
                    return Err(EditError::NoSuchEdge);
                }
                if constraints.requires(&self.nodes[u], &self.nodes[v]) {
                    return Err(EditError::WhitelistViolation);
                }
                if constraints.forbids(&self.nodes[v], &self.nodes[u]) {
                    return Err(EditError::BlacklistViolation);
                }
                g.erase_edge(u, v);
                g.insert_edge(v, u);
            }
        }
        if g.has_cycle() {
            return Err(EditError::Cycle);
        }
        Ok(g)
    }

    /// d-separation of `x` and `y` by the set `s`, by reachability along
    /// active trails. A path is blocked when a chain or fork midpoint is in
    /// `s`, or a collider (with all its descendants) is outside `s`.
    pub fn d_separated(&self, x: &str, y: &str, s: &BTreeSet<String>) -> Result<bool, DagError> {
        let xi = self.require(x)?;
        let yi = self.require(y)?;
        let mut si = BTreeSet::new();
        for name in s {
            si.insert(self.require(name)?);
        }
        if xi == yi || si.contains(&xi) || si.contains(&yi) {
            return Err(DagError::BadSeparationQuery(x.to_string(), y.to_string()));
        }
        Ok(self.d_separated_idx(xi, yi, &si))
    }

    /// Index-based d-separation used by the identification loops.
    pub fn d_separated_idx(&self, x: usize, y: usize, s: &BTreeSet<usize>) -> bool {
        let n = self.node_count();

        // Nodes in s, or with a descendant in s: exactly the colliders that
        // an active trail may pass through.
        let mut anc_of_s = vec![false; n];
        let mut stack: Vec<usize> = s.iter().copied().collect();
        while let Some(u) = stack.pop() {
            if std::mem::replace(&mut anc_of_s[u], true) {
                continue;
            }
            stack.extend_from_slice(&self.parents[u]);
        }

        let in_s = |u: usize| s.contains(&u);

        // Trail states: (node, arrived-from-child?). Arriving from a child
        // means the trail enters against the edge direction.
        const FROM_CHILD: usize = 0;
        const FROM_PARENT: usize = 1;
        let mut visited = vec![[false; 2]; n];
        let mut queue = VecDeque::new();
        queue.push_back((x, FROM_CHILD));
        while let Some((u, dir)) = queue.pop_front() {
            if visited[u][dir] {
                continue;
            }
            visited[u][dir] = true;
            if u == y && !in_s(u) {
                return false;
            }
            if dir == FROM_CHILD {
                if !in_s(u) {
                    for &p in &self.parents[u] {
                        queue.push_back((p, FROM_CHILD));
                    }
                    for &c in &self.children[u] {
                        queue.push_back((c, FROM_PARENT));
                    }
                }
            } else {
                if !in_s(u) {
                    for &c in &self.children[u] {
                        queue.push_back((c, FROM_PARENT));
                    }
                }
                if anc_of_s[u] {
                    for &p in &self.parents[u] {
                        queue.push_back((p, FROM_CHILD));
                    }
                }
            }
        }
        true
    }

    /// DOT rendering with nodes in declaration order and edges sorted
    /// lexicographically by name: identical graphs produce identical bytes.
    pub fn to_dot(&self) -> String {
        fn id(name: &str) -> String {
            let plain = !name.is_empty()
                && name.chars().next().unwrap().is_ascii_alphabetic()
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if plain {
                name.to_string()
            } else {
                format!("\"{}\"", name.replace('"', "\\\""))
            }
        }
        let mut out = String::from("digraph {\n");
        for name in &self.nodes {
            out.push_str(&format!("    {};\n", id(name)));
        }
        for (u, v) in self.named_edges() {
            out.push_str(&format!("    {} -> {};\n", id(&u), id(&v)));
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            format_version: crate::FORMAT_VERSION,
            nodes: self.nodes.clone(),
            edges: self.named_edges(),
        }
    }

    pub fn from_json(doc: &GraphJson) -> Result<Dag, DagError> {
        let edges: Vec<(&str, &str)> = doc
            .edges
            .iter()
            .map(|(u, v)| (u.as_str(), v.as_str()))
            .collect();
        Dag::new(&doc.nodes, &edges)
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self
            .named_edges()
            .iter()
            .map(|(u, v)| format!("{u}->{v}"))
            .collect();
        write!(f, "[{}]", edges.join(", "))
    }
}

/// Serializable graph interchange format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphJson {
    pub format_version: u32,
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

// ---------------------------------------------------------------------------
// Edge constraints
// ---------------------------------------------------------------------------

/// Prior knowledge about edges: `whitelist` must appear in every graph,
/// `blacklist` must never appear.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeConstraints {
    whitelist: BTreeSet<(String, String)>,
    blacklist: BTreeSet<(String, String)>,
}

impl EdgeConstraints {
    pub fn new(
        whitelist: impl IntoIterator<Item = (String, String)>,
        blacklist: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, DagError> {
        let whitelist: BTreeSet<_> = whitelist.into_iter().collect();
        let blacklist: BTreeSet<_> = blacklist.into_iter().collect();
        if let Some((u, v)) = whitelist.intersection(&blacklist).next() {
            return Err(DagError::ConstraintOverlap(u.clone(), v.clone()));
        }
        // The whitelist alone must be realizable as a DAG.
        let mut nodes: Vec<String> = Vec::new();
        for (u, v) in &whitelist {
            for name in [u, v] {
                if !nodes.contains(name) {
                    nodes.push(name.clone());
                }
            }
        }
        let edges: Vec<(&str, &str)> = whitelist
            .iter()
            .map(|(u, v)| (u.as_str(), v.as_str()))
            .collect();
        Dag::new(&nodes, &edges).map_err(|_| DagError::CyclicWhitelist)?;
        Ok(EdgeConstraints {
            whitelist,
            blacklist,
        })
    }

    pub fn none() -> Self {
        EdgeConstraints::default()
    }

    pub fn whitelist(&self) -> &BTreeSet<(String, String)> {
        &self.whitelist
    }

    pub fn blacklist(&self) -> &BTreeSet<(String, String)> {
        &self.blacklist
    }

    pub fn forbids(&self, u: &str, v: &str) -> bool {
        self.blacklist.contains(&(u.to_string(), v.to_string()))
    }

    pub fn requires(&self, u: &str, v: &str) -> bool {
        self.whitelist.contains(&(u.to_string(), v.to_string()))
    }

    /// True when `g` contains every whitelisted edge and no blacklisted one.
    pub fn satisfied_by(&self, g: &Dag) -> bool {
        let edges: BTreeSet<(String, String)> = g.named_edges().into_iter().collect();
        self.whitelist.iter().all(|e| edges.contains(e))
            && self.blacklist.iter().all(|e| !edges.contains(e))
    }
}

/// Solver prior knowledge as an edge blacklist over the clause-trace schema:
///
/// 1. nothing may point into `Branching` or `Restart` (user-chosen),
/// 2. nothing may point into `Time` (ticks are fixed),
/// 3. only `Branching`/`Restart` may point into `LBD` or `Size`
///    (both are fixed before the remaining quantities), and
/// 4. nothing may leave `Utility` (it follows everything else).
///
/// The whitelist is empty.
pub fn default_sat_constraints(schema: &[ColumnSchema]) -> Result<EdgeConstraints, DagError> {
    let names: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    for required in [
        columns::BRANCHING,
        columns::RESTART,
        columns::SIZE,
        columns::LBD,
        columns::TIME,
        columns::UTILITY,
    ] {
        if !names.contains(&required) {
            return Err(DagError::UnknownColumn(required.to_string()));
        }
    }
    let mut blacklist = BTreeSet::new();
    let heuristics = [columns::BRANCHING, columns::RESTART];
    for &u in &names {
        for &v in &names {
            if u == v {
                continue;
            }
            let into_root =
                (v == columns::BRANCHING || v == columns::RESTART) || v == columns::TIME;
            let into_structural =
                (v == columns::LBD || v == columns::SIZE) && !heuristics.contains(&u);
            let out_of_outcome = u == columns::UTILITY;
            if into_root || into_structural || out_of_outcome {
                blacklist.insert((u.to_string(), v.to_string()));
            }
        }
    }
    EdgeConstraints::new([], blacklist)
}
