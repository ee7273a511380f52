//! Decomposable Gaussian BIC scoring of DAGs against a dataset.
//!
//! Scores are computed from a centered cross-moment (Gram) matrix built once
//! per dataset, so a local score costs O(p^3) regardless of the row count.
//! Categorical variables enter regressions through their dummy encoding; as
//! graph nodes they may only appear as roots, where they contribute a
//! multinomial term that is constant across all graphs satisfying that
//! restriction.

use std::collections::{BTreeSet, HashMap};
use std::sync::RwLock;

use thiserror::Error;

use crate::dag::Dag;
use crate::dataset::{encode_categoricals, Dataset};
use crate::linalg::cholesky_solve;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("singular design scoring {node}: zero residual variance or collinear parents")]
    SingularDesign { node: String },
    #[error("too few rows to score {node}: n = {n}, regressors = {regressors}")]
    TooFewRows {
        node: String,
        n: usize,
        regressors: usize,
    },
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("categorical variable {0} cannot have parents under the Gaussian score")]
    CategoricalChild(String),
}

/// BIC contribution of one node given a parent set; higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalScore {
    pub node: String,
    pub parents: BTreeSet<String>,
    pub value: f64,
}

/// Per-variable layout inside the encoded column block.
#[derive(Debug, Clone)]
struct VariableLayout {
    name: String,
    /// Indices of this variable's encoded columns (one for continuous,
    /// m-1 dummies for an m-category variable).
    cols: Vec<usize>,
    /// Category counts for categorical variables, empty otherwise.
    category_counts: Vec<usize>,
}

/// Precomputed scoring state for one dataset.
///
/// The memo cache tolerates concurrent readers; a duplicated computation
/// under contention is acceptable because results are identical.
pub struct ScoreEngine {
    variables: Vec<VariableLayout>,
    index: HashMap<String, usize>,
    /// Centered Gram matrix over the encoded columns.
    gram: Vec<Vec<f64>>,
    n: usize,
    cache: RwLock<HashMap<(usize, Vec<usize>), f64>>,
}

impl ScoreEngine {
    pub fn new(d: &Dataset) -> ScoreEngine {
        let enc = encode_categoricals(d);
        let n = enc.n_rows();

        // Centered copies of every encoded column.
        let mut centered: Vec<Vec<f64>> = Vec::with_capacity(enc.n_columns());
        for name in enc.column_names() {
            let vals = enc
                .continuous(&name)
                .expect("encoded columns are continuous");
            let mean = vals.iter().sum::<f64>() / n as f64;
            centered.push(vals.iter().map(|v| v - mean).collect());
        }
        let m = centered.len();
        let mut gram = vec![vec![0.0f64; m]; m];
        for i in 0..m {
            for j in i..m {
                let dot: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum();
                gram[i][j] = dot;
                gram[j][i] = dot;
            }
        }

        // Map raw variables to their encoded column ranges.
        let enc_names = enc.column_names();
        let mut variables = Vec::new();
        let mut index = HashMap::new();
        for cs in d.schema() {
            let cols: Vec<usize> = if cs.is_categorical() {
                crate::dataset::dummy_names(cs)
                    .iter()
                    .map(|dn| enc_names.iter().position(|e| e == dn).unwrap())
                    .collect()
            } else {
                vec![enc_names.iter().position(|e| *e == cs.name).unwrap()]
            };
            let category_counts = if cs.is_categorical() {
                let codes = d.categorical_codes(&cs.name).unwrap();
                let mut counts = vec![0usize; cs.categories().len()];
                for &c in codes {
                    counts[c as usize] += 1;
                }
                counts
            } else {
                Vec::new()
            };
            index.insert(cs.name.clone(), variables.len());
            variables.push(VariableLayout {
                name: cs.name.clone(),
                cols,
                category_counts,
            });
        }

        ScoreEngine {
            variables,
            index,
            gram,
            n,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    fn variable(&self, name: &str) -> Result<usize, ScoreError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| ScoreError::UnknownColumn(name.to_string()))
    }

    pub fn is_categorical(&self, var: usize) -> bool {
        !self.variables[var].category_counts.is_empty()
    }

    /// Local score of `node` given `parents`, both raw variable indices.
    /// Results are memoized by (node, sorted parents).
    pub fn local_score_idx(&self, node: usize, parents: &[usize]) -> Result<f64, ScoreError> {
        let mut key_parents: Vec<usize> = parents.to_vec();
        key_parents.sort_unstable();
        key_parents.dedup();
        let key = (node, key_parents);
        if let Some(v) = self.cache.read().unwrap().get(&key) {
            return Ok(*v);
        }
        let value = self.compute_local(node, &key.1)?;
        self.cache.write().unwrap().insert(key, value);
        Ok(value)
    }

    fn compute_local(&self, node: usize, parents: &[usize]) -> Result<f64, ScoreError> {
        let n = self.n as f64;
        let spec = &self.variables[node];

        if self.is_categorical(node) {
            if !parents.is_empty() {
                return Err(ScoreError::CategoricalChild(spec.name.clone()));
            }
            // Multinomial maximum likelihood with a BIC penalty of m-1
            // free parameters.
            let m = spec.category_counts.len() as f64;
            let loglik: f64 = spec
                .category_counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| (c as f64) * ((c as f64) / n).ln())
                .sum();
            return Ok(loglik - (m - 1.0) / 2.0 * n.ln());
        }

        let y = spec.cols[0];
        let xcols: Vec<usize> = parents
            .iter()
            .flat_map(|&p| self.variables[p].cols.iter().copied())
            .collect();
        let w = xcols.len();
        if self.n <= w + 1 {
            return Err(ScoreError::TooFewRows {
                node: spec.name.clone(),
                n: self.n,
                regressors: w,
            });
        }

        let syy = self.gram[y][y];
        let rss = if w == 0 {
            syy
        } else {
            let mut g = vec![vec![0.0f64; w]; w];
            let mut v = vec![0.0f64; w];
            for (i, &ci) in xcols.iter().enumerate() {
                for (j, &cj) in xcols.iter().enumerate() {
                    g[i][j] = self.gram[ci][cj];
                }
                v[i] = self.gram[ci][y];
            }
            let max_diag = (0..w).fold(0.0f64, |m, i| m.max(g[i][i]));
            let tol = max_diag * 1e-12;
            let beta = cholesky_solve(&g, &v, tol).ok_or_else(|| ScoreError::SingularDesign {
                node: spec.name.clone(),
            })?;
            let explained: f64 = beta.iter().zip(&v).map(|(b, vi)| b * vi).sum();
            syy - explained
        };

        // A numerically exact fit means a deterministic relation; surface it
        // instead of returning an unbounded score.
        if rss <= syy.max(1e-300) * 1e-9 {
            return Err(ScoreError::SingularDesign {
                node: spec.name.clone(),
            });
        }

        let sigma2 = rss / n;
        let p = w as f64 + 2.0; // coefficients + intercept + variance
        Ok(-(n / 2.0) * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - (p / 2.0) * n.ln())
    }

    /// Local score by name.
    pub fn local_score(
        &self,
        node: &str,
        parents: &BTreeSet<String>,
    ) -> Result<LocalScore, ScoreError> {
        let ni = self.variable(node)?;
        let pi: Vec<usize> = parents
            .iter()
            .map(|p| self.variable(p))
            .collect::<Result<_, _>>()?;
        let value = self.local_score_idx(ni, &pi)?;
        Ok(LocalScore {
            node: node.to_string(),
            parents: parents.clone(),
            value,
        })
    }

    /// Total score of a graph whose nodes are this engine's variables:
    /// the sum of local scores. After a single-edge edit only the affected
    /// child's term changes, and the memo cache makes re-scoring cheap.
    pub fn graph_score(&self, g: &Dag) -> Result<f64, ScoreError> {
        let mut total = 0.0;
        for (i, name) in g.node_names().iter().enumerate() {
            let vi = self.variable(name)?;
            let parents: Vec<usize> = g
                .parents(i)
                .iter()
                .map(|&p| self.variable(g.node_name(p)))
                .collect::<Result<_, _>>()?;
            total += self.local_score_idx(vi, &parents)?;
        }
        Ok(total)
    }
}

/// One-shot local score against a dataset.
pub fn local_score(
    node: &str,
    parents: &BTreeSet<String>,
    d: &Dataset,
) -> Result<LocalScore, ScoreError> {
    ScoreEngine::new(d).local_score(node, parents)
}

/// One-shot BIC score of `g` against `d`. Graph nodes must be dataset
/// columns.
pub fn bic_score(g: &Dag, d: &Dataset) -> Result<f64, ScoreError> {
    ScoreEngine::new(d).graph_score(g)
}
