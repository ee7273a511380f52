//! Ground-truth structural causal models: ancestral sampling, analytic
//! effect oracles, and the built-in clause-trace generator.
//!
//! All mechanisms are linear in their parents plus independent noise; that
//! is exactly the regime in which the regression estimator is provably
//! unbiased, so these models serve as oracles for the whole pipeline.
//! Categorical variables are restricted to root nodes (they have no
//! incoming edges in the solver prior anyway) and act on children through
//! per-category offsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::Dag;
use crate::dataset::{columns, Column, ColumnKind, ColumnSchema, ColumnValue, Dataset};
use crate::substream;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0}: mechanism parents disagree with declared weights")]
    BadMechanism(String),
    #[error("categorical node {0} cannot have parents")]
    CategoricalWithParents(String),
    #[error("node {node}: noise spec does not fit the column kind")]
    BadNoise { node: String },
    #[error("graph implied by the mechanisms is cyclic")]
    Cyclic,
    #[error("treatment value {value} invalid for {node}")]
    BadTreatmentValue { node: String, value: String },
    #[error("sample count {0} too small")]
    TooFewSamples(usize),
    #[error("treatment and outcome must differ")]
    SameNode,
}

/// Independent noise attached to one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    Normal {
        sd: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Category probabilities, aligned with the schema's category list.
    Categorical {
        probs: Vec<f64>,
    },
}

/// Contribution of one parent to a linear mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParentWeight {
    Linear(f64),
    /// Additive offset per category of a categorical parent.
    PerCategory(Vec<f64>),
}

/// Observation-side transform applied after the linear mechanism, used by
/// the trace generator to keep columns in plausible ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PostTransform {
    Identity,
    /// Round to the nearest integer, then clamp below at `min`.
    RoundAtLeast(f64),
    /// Softplus, which is the identity to machine precision away from zero
    /// but guarantees a strictly positive value.
    SoftplusFloor,
}

impl PostTransform {
    fn apply(self, v: f64) -> f64 {
        match self {
            PostTransform::Identity => v,
            PostTransform::RoundAtLeast(min) => v.round().max(min),
            PostTransform::SoftplusFloor => v.max(0.0) + (-v.abs()).exp().ln_1p(),
        }
    }
}

/// Linear mechanism of one node: intercept + weighted parents + noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub intercept: f64,
    pub weights: Vec<(String, ParentWeight)>,
    pub noise: NoiseSpec,
    pub transform: PostTransform,
}

impl Mechanism {
    pub fn root(noise: NoiseSpec) -> Mechanism {
        Mechanism {
            intercept: 0.0,
            weights: Vec::new(),
            noise,
            transform: PostTransform::Identity,
        }
    }

    pub fn linear(intercept: f64, weights: &[(&str, f64)], noise: NoiseSpec) -> Mechanism {
        Mechanism {
            intercept,
            weights: weights
                .iter()
                .map(|(n, w)| (n.to_string(), ParentWeight::Linear(*w)))
                .collect(),
            noise,
            transform: PostTransform::Identity,
        }
    }

    pub fn with_transform(mut self, t: PostTransform) -> Mechanism {
        self.transform = t;
        self
    }
}

/// A structural causal model: a DAG plus per-node linear mechanisms and
/// mutually independent noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scm {
    schema: Vec<ColumnSchema>,
    mechanisms: Vec<Mechanism>,
    #[serde(skip)]
    graph: std::sync::OnceLock<Dag>,
}

impl PartialEq for Scm {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.mechanisms == other.mechanisms
    }
}

impl Scm {
    /// Validates mechanism/graph agreement and builds the implied DAG.
    pub fn new(schema: Vec<ColumnSchema>, mechanisms: Vec<Mechanism>) -> Result<Scm, SynthError> {
        assert_eq!(schema.len(), mechanisms.len(), "one mechanism per node");
        let names: Vec<String> = schema.iter().map(|c| c.name.clone()).collect();
        let mut edges: Vec<(String, String)> = Vec::new();
        for (cs, mech) in schema.iter().zip(&mechanisms) {
            let categorical = cs.is_categorical();
            if categorical && !mech.weights.is_empty() {
                return Err(SynthError::CategoricalWithParents(cs.name.clone()));
            }
            match (&mech.noise, categorical) {
                (NoiseSpec::Categorical { probs }, true) => {
                    if probs.len() != cs.categories().len()
                        || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
                    {
                        return Err(SynthError::BadNoise {
                            node: cs.name.clone(),
                        });
                    }
                }
                (NoiseSpec::Categorical { .. }, false) | (_, true) => {
                    return Err(SynthError::BadNoise {
                        node: cs.name.clone(),
                    });
                }
                _ => {}
            }
            for (parent, weight) in &mech.weights {
                let pi = names
                    .iter()
                    .position(|n| n == parent)
                    .ok_or_else(|| SynthError::UnknownNode(parent.clone()))?;
                match (weight, schema[pi].is_categorical()) {
                    (ParentWeight::Linear(_), false) => {}
                    (ParentWeight::PerCategory(offs), true) => {
                        if offs.len() != schema[pi].categories().len() {
                            return Err(SynthError::BadMechanism(cs.name.clone()));
                        }
                    }
                    _ => return Err(SynthError::BadMechanism(cs.name.clone())),
                }
                edges.push((parent.clone(), cs.name.clone()));
            }
        }
        let edge_refs: Vec<(&str, &str)> = edges
            .iter()
            .map(|(u, v)| (u.as_str(), v.as_str()))
            .collect();
        let graph = Dag::new(&names, &edge_refs).map_err(|_| SynthError::Cyclic)?;
        let lock = std::sync::OnceLock::new();
        lock.set(graph).unwrap();
        Ok(Scm {
            schema,
            mechanisms,
            graph: lock,
        })
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn mechanisms(&self) -> &[Mechanism] {
        &self.mechanisms
    }

    pub fn graph(&self) -> &Dag {
        self.graph.get_or_init(|| {
            // Only reachable after deserialization; reconstruct from the
            // mechanisms, which were validated before serialization.
            let names: Vec<String> = self.schema.iter().map(|c| c.name.clone()).collect();
            let mut edges = Vec::new();
            for (cs, mech) in self.schema.iter().zip(&self.mechanisms) {
                for (parent, _) in &mech.weights {
                    edges.push((parent.clone(), cs.name.clone()));
                }
            }
            let refs: Vec<(&str, &str)> = edges
                .iter()
                .map(|(u, v)| (u.as_str(), v.as_str()))
                .collect();
            Dag::new(&names, &refs).expect("validated at construction")
        })
    }

    fn node_index(&self, name: &str) -> Result<usize, SynthError> {
        self.schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| SynthError::UnknownNode(name.to_string()))
    }
}

/// Ancestral sampling in dependency order. Each node draws from its own
/// seeded substream, so the output is one deterministic function of
/// `(scm, n, seed)` regardless of evaluation order.
pub fn sample(scm: &Scm, n: usize, seed: u64) -> Dataset {
    assert!(n >= 1);
    let g = scm.graph();
    let order = g.topological_order();
    let mut values: Vec<Option<Vec<f64>>> = vec![None; scm.schema.len()];
    let mut codes: Vec<Option<Vec<u32>>> = vec![None; scm.schema.len()];

    for &node in &order {
        let mech = &scm.mechanisms[node];
        let mut rng = ChaCha12Rng::seed_from_u64(substream(seed, node as u64));
        match &mech.noise {
            NoiseSpec::Categorical { probs } => {
                let mut cum = Vec::with_capacity(probs.len());
                let mut acc = 0.0;
                for p in probs {
                    acc += p;
                    cum.push(acc);
                }
                let col: Vec<u32> = (0..n)
                    .map(|_| {
                        let u: f64 = rng.random();
                        cum.iter().position(|c| u < *c).unwrap_or(probs.len() - 1) as u32
                    })
                    .collect();
                codes[node] = Some(col);
            }
            _ => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                let mut col = Vec::with_capacity(n);
                for row in 0..n {
                    let mut v = mech.intercept;
                    for (parent, weight) in &mech.weights {
                        let pi = scm.node_index(parent).unwrap();
                        v += match weight {
                            ParentWeight::Linear(w) => {
                                w * values[pi].as_ref().expect("parents sampled first")[row]
                            }
                            ParentWeight::PerCategory(offs) => {
                                offs[codes[pi].as_ref().unwrap()[row] as usize]
                            }
                        };
                    }
                    v += match &mech.noise {
                        NoiseSpec::Normal { sd } => sd * normal.sample(&mut rng),
                        NoiseSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
                        NoiseSpec::Categorical { .. } => unreachable!(),
                    };
                    col.push(mech.transform.apply(v));
                }
                values[node] = Some(col);
            }
        }
    }

    let data: Vec<Column> = scm
        .schema
        .iter()
        .enumerate()
        .map(|(i, cs)| match cs.kind {
            ColumnKind::Continuous => Column::Continuous(values[i].take().unwrap()),
            ColumnKind::Categorical { .. } => Column::Categorical(codes[i].take().unwrap()),
        })
        .collect();
    Dataset::new(scm.schema.clone(), data, "synthetic").expect("generated data is valid")
}

/// Analytic interventional contrast `E[y | do(x=a)] - E[y | do(x=b)]`.
///
/// Computed by propagating the per-node expected shift through the linear
/// mechanisms in dependency order, which equals the sum over all directed
/// paths of the product of edge coefficients. Returns 0 when no directed
/// path connects `x` to `y`. Post-transforms are ignored: the oracle speaks
/// about the linear core.
pub fn oracle_ate(
    scm: &Scm,
    x: &str,
    y: &str,
    a: &ColumnValue,
    b: &ColumnValue,
) -> Result<f64, SynthError> {
    let xi = scm.node_index(x)?;
    let yi = scm.node_index(y)?;
    if xi == yi {
        return Err(SynthError::SameNode);
    }
    let g = scm.graph();
    let n = scm.schema.len();
    let mut delta = vec![0.0f64; n];

    // For a continuous treatment the shift enters x itself; for a
    // categorical treatment it enters each child through the offset
    // contrast, because the category is not a number.
    let cat_contrast: Option<(usize, usize)> = match (&scm.schema[xi].kind, a, b) {
        (ColumnKind::Continuous, ColumnValue::Num(av), ColumnValue::Num(bv)) => {
            delta[xi] = av - bv;
            None
        }
        (ColumnKind::Categorical { categories }, ColumnValue::Cat(al), ColumnValue::Cat(bl)) => {
            let ai = categories.iter().position(|c| c == al).ok_or_else(|| {
                SynthError::BadTreatmentValue {
                    node: x.to_string(),
                    value: al.clone(),
                }
            })?;
            let bi = categories.iter().position(|c| c == bl).ok_or_else(|| {
                SynthError::BadTreatmentValue {
                    node: x.to_string(),
                    value: bl.clone(),
                }
            })?;
            Some((ai, bi))
        }
        _ => {
            return Err(SynthError::BadTreatmentValue {
                node: x.to_string(),
                value: format!("{a} / {b}"),
            })
        }
    };

    for node in g.topological_order() {
        if node == xi {
            continue;
        }
        let mut shift = 0.0;
        for (parent, weight) in &scm.mechanisms[node].weights {
            let pi = scm.node_index(parent).unwrap();
            match weight {
                ParentWeight::Linear(w) => shift += w * delta[pi],
                ParentWeight::PerCategory(offs) => {
                    if pi == xi {
                        if let Some((ai, bi)) = cat_contrast {
                            shift += offs[ai] - offs[bi];
                        }
                    }
                    // Categorical non-treatment parents are roots and carry
                    // no shift.
                }
            }
        }
        delta[node] = shift;
    }
    Ok(delta[yi])
}

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

/// The fixed ground-truth model behind [`generate_trace_like`].
///
/// The graph satisfies all four solver prior-knowledge rules. Injected
/// effects, all totals over every directed path:
///
/// - `LBD -> Utility` is negative (-5.16 per unit),
/// - `Propagation -> Utility` is positive (+0.12 per unit),
/// - `Branching`: Maple beats VSIDS (+3.8),
/// - `Restart`: Luby (+4.8) > Geometric (+1.9) > LBD-based (0),
/// - `Size -> Utility` is negative (-0.52), also when LBD is held fixed,
/// - `Time -> Utility` is negative (-0.0032 per conflict).
///
/// Bounded uniform noise keeps `LBD` in `[3, 10]` and `Size` in `[13, 39]`,
/// so every row satisfies `LBD <= Size`; `Utility` passes through a softplus
/// floor, so it stays positive. Column ranges are otherwise invented but
/// sized so the per-column magnitudes resemble real traces.
pub fn trace_scm() -> Scm {
    use columns::*;
    let schema = crate::dataset::clause_trace_schema();
    // One mechanism per schema column, in schema order.
    let mechanisms = vec![
        Mechanism::root(NoiseSpec::Categorical {
            probs: vec![0.5, 0.5],
        }),
        Mechanism::root(NoiseSpec::Categorical {
            probs: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }),
        Mechanism {
            intercept: 13.0,
            weights: vec![
                (
                    BRANCHING.to_string(),
                    ParentWeight::PerCategory(vec![0.0, 2.0]),
                ),
                (
                    RESTART.to_string(),
                    ParentWeight::PerCategory(vec![0.0, 1.0, 2.0]),
                ),
            ],
            noise: NoiseSpec::Uniform { lo: 0.0, hi: 22.0 },
            transform: PostTransform::RoundAtLeast(1.0),
        },
        Mechanism {
            intercept: 3.0,
            weights: vec![
                (
                    BRANCHING.to_string(),
                    ParentWeight::PerCategory(vec![0.0, 1.0]),
                ),
                (
                    RESTART.to_string(),
                    ParentWeight::PerCategory(vec![0.0, 0.5, 1.0]),
                ),
            ],
            noise: NoiseSpec::Uniform { lo: 0.0, hi: 5.0 },
            transform: PostTransform::RoundAtLeast(1.0),
        },
        Mechanism::linear(
            2.0,
            &[(PROPAGATION, 0.02), (UIP, 0.5), (LAST_TOUCH, -0.004)],
            NoiseSpec::Normal { sd: 3.0 },
        ),
        Mechanism::linear(
            20.0,
            &[(LBD, -2.0), (PROPAGATION, 0.05)],
            NoiseSpec::Normal { sd: 6.0 },
        ),
        Mechanism::linear(
            220.0,
            &[(LBD, -8.0), (SIZE, -1.0), (TIME, 0.04)],
            NoiseSpec::Normal { sd: 25.0 },
        ),
        Mechanism::linear(
            150.0,
            &[(LBD, 30.0), (PROPAGATION, -0.1), (TIME, 0.12)],
            NoiseSpec::Normal { sd: 40.0 },
        ),
        Mechanism::root(NoiseSpec::Uniform {
            lo: 0.0,
            hi: 10000.0,
        })
        .with_transform(PostTransform::RoundAtLeast(0.0)),
        Mechanism {
            intercept: 90.0,
            weights: vec![
                (
                    BRANCHING.to_string(),
                    ParentWeight::PerCategory(vec![0.0, 10.0]),
                ),
                (
                    RESTART.to_string(),
                    ParentWeight::PerCategory(vec![0.0, 5.0, 11.0]),
                ),
                (SIZE.to_string(), ParentWeight::Linear(-0.4)),
                (LBD.to_string(), ParentWeight::Linear(-3.0)),
                (UIP.to_string(), ParentWeight::Linear(0.6)),
                (PROPAGATION.to_string(), ParentWeight::Linear(0.09)),
                (TIME.to_string(), ParentWeight::Linear(-0.008)),
            ],
            noise: NoiseSpec::Normal { sd: 8.0 },
            transform: PostTransform::SoftplusFloor,
        },
    ];
    Scm::new(schema, mechanisms).expect("built-in model is valid")
}

/// Samples a clause-trace-shaped dataset from [`trace_scm`] with a known
/// ground truth, so every preset query has an oracle answer.
pub fn generate_trace_like(n: usize, seed: u64) -> Result<(Dataset, Scm), SynthError> {
    if n < 1000 {
        return Err(SynthError::TooFewSamples(n));
    }
    let scm = trace_scm();
    let d = sample(&scm, n, seed);
    Ok((d, scm))
}

/// The four-variable over-controlling scenario: a common cause (`LBD`) of
/// `Propagation` and `LastTouch`, plus `Activity` as a common effect of
/// both. Adjusting for `LBD` identifies the `Propagation -> LastTouch`
/// effect (-2.5); additionally adjusting for the collider `Activity`
/// biases it.
pub fn overcontrol_scenario(seed: u64) -> (Dataset, Scm) {
    use columns::*;
    let schema = vec![
        ColumnSchema::continuous(LBD),
        ColumnSchema::continuous(PROPAGATION),
        ColumnSchema::continuous(LAST_TOUCH),
        ColumnSchema::continuous(ACTIVITY),
    ];
    let mechanisms = vec![
        Mechanism::linear(5.0, &[], NoiseSpec::Normal { sd: 2.0 }),
        Mechanism::linear(10.0, &[(LBD, -1.5)], NoiseSpec::Normal { sd: 1.0 }),
        Mechanism::linear(
            20.0,
            &[(LBD, 2.0), (PROPAGATION, -2.5)],
            NoiseSpec::Normal { sd: 1.0 },
        ),
        Mechanism::linear(
            5.0,
            &[(PROPAGATION, 1.2), (LAST_TOUCH, 0.8)],
            NoiseSpec::Normal { sd: 1.0 },
        ),
    ];
    let scm = Scm::new(schema, mechanisms).expect("scenario model is valid");
    let d = sample(&scm, 100_000, seed);
    (d, scm)
}

/// A random linear-Gaussian SCM over `n_nodes` continuous variables, used
/// for the estimator-vs-oracle batteries. Edges go from lower to higher
/// index with probability `edge_prob`; coefficients are bounded away from
/// zero so effects are detectable.
pub fn random_linear_scm(n_nodes: usize, edge_prob: f64, seed: u64) -> Scm {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let schema: Vec<ColumnSchema> = (0..n_nodes)
        .map(|i| ColumnSchema::continuous(&format!("X{i}")))
        .collect();
    let mut mechanisms = Vec::with_capacity(n_nodes);
    for v in 0..n_nodes {
        let mut weights = Vec::new();
        for parent in &schema[..v] {
            if rng.random_bool(edge_prob) {
                let magnitude = 0.5 + 1.5 * rng.random::<f64>();
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                weights.push((parent.name.clone(), ParentWeight::Linear(sign * magnitude)));
            }
        }
        let intercept = -1.0 + 2.0 * rng.random::<f64>();
        let sd = 0.5 + rng.random::<f64>();
        mechanisms.push(Mechanism {
            intercept,
            weights,
            noise: NoiseSpec::Normal { sd },
            transform: PostTransform::Identity,
        });
    }
    Scm::new(schema, mechanisms).expect("construction keeps edges acyclic")
}
