//! Acceptance suite: one test per criterion, gating the whole toolkit on
//! oracle equivalence, estimator algebra, and synthetic ground truth.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use satcausal::causal::{
    estimate_effect, find_backdoor_set, fit_ols, refute_all, stratified_estimand, BackdoorSet,
    Identification, RefutationKind,
};
use satcausal::dataset::{
    clause_trace_schema, columns, normalize_standard_score, Column, ColumnSchema, ColumnValue,
    Dataset,
};
use satcausal::learn::cv_learn;
use satcausal::query::QuerySpec;
use satcausal::synth::{
    self, generate_trace_like, overcontrol_scenario, random_linear_scm, trace_scm,
};
use satcausal::{dag::default_sat_constraints, substream, Dag};

use common::{dsep_oracle, random_dag};

fn num(v: f64) -> ColumnValue {
    ColumnValue::Num(v)
}

fn ate(t: &str, o: &str, a: f64, b: f64) -> QuerySpec {
    QuerySpec::ate(t, o, num(a), num(b))
}

/// Criterion 1: the reachability d-separation agrees with the brute-force
/// path-enumeration oracle on >= 10^4 sampled DAGs of up to 5 nodes, over
/// every node pair and every conditioning set.
#[test]
fn acceptance_1_dsep_matches_brute_force() {
    let start = Instant::now();
    let mut checks = 0u64;
    for graph_seed in 0..10_000u64 {
        let n = 2 + (graph_seed % 4) as usize; // 2..=5 nodes
        let edge_prob = [0.3, 0.5, 0.8][(graph_seed / 4 % 3) as usize];
        let g = random_dag(n, edge_prob, substream(0xD5E9, graph_seed));
        for x in 0..n {
            for y in (x + 1)..n {
                let others: Vec<usize> = (0..n).filter(|&v| v != x && v != y).collect();
                for mask in 0..(1u32 << others.len()) {
                    let s: BTreeSet<usize> = others
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, &v)| v)
                        .collect();
                    let got = g.d_separated_idx(x, y, &s);
                    let want = dsep_oracle(&g, x, y, &s);
                    assert_eq!(got, want, "disagreement on {g} with x={x} y={y} s={s:?}");
                    checks += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("ACCEPTANCE 1 (d-separation oracle equivalence, {checks} checks): PASS");
}

/// Criterion 2: on exactly linear discrete data the regression ATE equals
/// the stratified estimand to 1e-9, across 100 seeded tables.
#[test]
fn acceptance_2_lemma_identity_on_linear_tables() {
    let start = Instant::now();
    for seed in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(substream(0x1E44A, seed));
        let b0: f64 = rng.random_range(-2.0..2.0);
        let b1: f64 = rng.random_range(0.5..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let b2: f64 = rng.random_range(-2.0..2.0);
        let b3: f64 = rng.random_range(-2.0..2.0);

        // Full factorial over X in {0,1,2}, Z1 in {0,1}, Z2 in {0,1,2},
        // with uneven replication so strata carry different weights.
        let mut x = Vec::new();
        let mut z1 = Vec::new();
        let mut z2 = Vec::new();
        let mut y = Vec::new();
        for xi in 0..3 {
            for z1i in 0..2 {
                for z2i in 0..3 {
                    let reps = 1 + (xi + 2 * z1i + z2i + seed as usize) % 3;
                    for _ in 0..reps {
                        let (xf, z1f, z2f) = (xi as f64, z1i as f64, z2i as f64);
                        x.push(xf);
                        z1.push(z1f);
                        z2.push(z2f);
                        y.push(b0 + b1 * xf + b2 * z1f + b3 * z2f);
                    }
                }
            }
        }
        let d = Dataset::new(
            vec![
                ColumnSchema::continuous("X"),
                ColumnSchema::continuous("Z1"),
                ColumnSchema::continuous("Z2"),
                ColumnSchema::continuous("Y"),
            ],
            vec![
                Column::Continuous(x),
                Column::Continuous(z1),
                Column::Continuous(z2),
                Column::Continuous(y),
            ],
            "factorial",
        )
        .unwrap();

        let names: Vec<String> = ["X", "Z1", "Z2", "Y"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let g = Dag::new(
            &names,
            &[
                ("Z1", "X"),
                ("Z2", "X"),
                ("Z1", "Y"),
                ("Z2", "Y"),
                ("X", "Y"),
            ],
        )
        .unwrap();

        let q = ate("X", "Y", 2.0, 0.0);
        let e = estimate_effect(&q, &g, &d).unwrap();
        let backdoor = match &e.identification {
            Identification::Backdoor(b) => b.clone(),
            other => panic!("expected backdoor identification, got {other:?}"),
        };
        let strat = stratified_estimand(&q, &backdoor, &d).unwrap();
        assert!(
            (e.value - strat).abs() < 1e-9,
            "seed {seed}: regression {} vs stratified {strat}",
            e.value
        );
        assert!(
            (e.value - 2.0 * b1).abs() < 1e-9,
            "both routes must hit the truth"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!("ACCEPTANCE 2 (stratified-estimand identity, 100 tables): PASS");
}

/// Criterion 3: across 10 random linear SCMs with n = 1e5, every backdoor
/// estimate lands within 4 analytic standard errors of the interventional
/// oracle, and at least 98% within 3.
#[test]
fn acceptance_3_oracle_ate_recovery() {
    let start = Instant::now();
    let mut total = 0usize;
    let mut within3 = 0usize;
    for scm_idx in 0..10u64 {
        let n_nodes = 5 + (scm_idx % 6) as usize;
        let scm = random_linear_scm(n_nodes, 0.4, substream(0xBA77E, scm_idx));
        let data = synth::sample(&scm, 100_000, substream(0xDA7A, scm_idx));
        let g = scm.graph();

        // Prefer connected treatment/outcome pairs; pad when scarce.
        let names = g.node_names();
        let mut connected = Vec::new();
        let mut rest = Vec::new();
        for x in 0..names.len() {
            for y in 0..names.len() {
                if x == y {
                    continue;
                }
                if g.has_directed_path(x, y) && !g.children(x).is_empty() {
                    connected.push((x, y));
                } else {
                    rest.push((x, y));
                }
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(substream(0x9A185, scm_idx));
        let mut pairs = Vec::new();
        while pairs.len() < 5 {
            let pool = if connected.is_empty() {
                &rest
            } else {
                &connected
            };
            let pick = pool[rng.random_range(0..pool.len())];
            if !pairs.contains(&pick) || connected.len() < 5 {
                pairs.push(pick);
            }
        }

        for (x, y) in pairs {
            let q = ate(&names[x], &names[y], 1.0, 0.0);
            let e = estimate_effect(&q, g, &data).unwrap();
            let oracle =
                synth::oracle_ate(&scm, &names[x], &names[y], &num(1.0), &num(0.0)).unwrap();
            let err = (e.value - oracle).abs();
            assert!(
                err <= 4.0 * e.std_error + 1e-12,
                "scm {scm_idx} {}->{}: estimate {} oracle {oracle} se {}",
                names[x],
                names[y],
                e.value,
                e.std_error
            );
            total += 1;
            if err <= 3.0 * e.std_error + 1e-12 {
                within3 += 1;
            }
        }
    }
    assert!(
        within3 as f64 >= 0.98 * total as f64,
        "only {within3}/{total} within 3 standard errors"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!("ACCEPTANCE 3 (oracle recovery, {within3}/{total} within 3 SE): PASS");
}

/// Criterion 4: in the four-variable scenario, adjusting for the collider
/// biases the estimate by more than 5 standard errors, while the correct
/// common-cause adjustment stays within 3.
#[test]
fn acceptance_4_overcontrolling_reproduction() {
    let (data, scm) = overcontrol_scenario(1729);
    let truth = synth::oracle_ate(
        &scm,
        columns::PROPAGATION,
        columns::LAST_TOUCH,
        &num(2.0),
        &num(1.0),
    )
    .unwrap();
    assert_eq!(truth, -2.5);

    // The identification machinery picks {LBD} on the true graph.
    let ident = find_backdoor_set(scm.graph(), columns::PROPAGATION, columns::LAST_TOUCH).unwrap();
    match &ident {
        Identification::Backdoor(b) => {
            assert_eq!(b.variables, [columns::LBD.to_string()].into())
        }
        other => panic!("expected backdoor, got {other:?}"),
    }
    let q = ate(columns::PROPAGATION, columns::LAST_TOUCH, 2.0, 1.0);
    let good = estimate_effect(&q, scm.graph(), &data).unwrap();
    let good_err = (good.value - truth).abs();
    assert!(
        good_err <= 3.0 * good.std_error,
        "common-cause adjustment off by {} with se {}",
        good_err,
        good.std_error
    );

    // Force the collider into the regression the way an over-eager analyst
    // would.
    let regressors: Vec<String> = [columns::PROPAGATION, columns::LBD, columns::ACTIVITY]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let biased = fit_ols(columns::LAST_TOUCH, &regressors, &data).unwrap();
    let beta = biased.coefficient(columns::PROPAGATION).unwrap();
    let se = biased.coefficient_se(0);
    let bias_multiple = (beta - truth).abs() / se;
    assert!(
        bias_multiple > 5.0,
        "collider adjustment deviates only {bias_multiple:.1} standard errors"
    );
    println!(
        "ACCEPTANCE 4 (over-controlling: {:.1} SE biased vs {:.2} SE correct): PASS",
        bias_multiple,
        good_err / good.std_error
    );
}

/// Companion to criterion 4: against a deliberately mis-specified graph
/// whose identification drags the collider into the adjustment set, the
/// estimate shifts and the subset-resampling spread inflates.
#[test]
fn collider_adjustment_shifts_and_destabilizes() {
    let (data, scm) = overcontrol_scenario(1729);
    let q = ate(columns::PROPAGATION, columns::LAST_TOUCH, 2.0, 1.0);
    let truth = -2.5;

    let good = {
        let mut e = estimate_effect(&q, scm.graph(), &data).unwrap();
        refute_all(&mut e, scm.graph(), &data, 40, 99).unwrap();
        e
    };

    // Reverse the Activity edges: the wrong graph makes Activity look like
    // a confounder, so identification adjusts for it.
    let names: Vec<String> = scm.graph().node_names().to_vec();
    let wrong = Dag::new(
        &names,
        &[
            (columns::LBD, columns::PROPAGATION),
            (columns::LBD, columns::LAST_TOUCH),
            (columns::PROPAGATION, columns::LAST_TOUCH),
            (columns::ACTIVITY, columns::PROPAGATION),
            (columns::ACTIVITY, columns::LAST_TOUCH),
        ],
    )
    .unwrap();
    let bad = {
        let mut e = estimate_effect(&q, &wrong, &data).unwrap();
        match &e.identification {
            Identification::Backdoor(b) => {
                assert!(
                    b.variables.contains(columns::ACTIVITY),
                    "collider must be adjusted"
                )
            }
            other => panic!("expected backdoor, got {other:?}"),
        }
        refute_all(&mut e, &wrong, &data, 40, 99).unwrap();
        e
    };

    assert!(
        (bad.value - truth).abs() > 10.0 * (good.value - truth).abs(),
        "collider adjustment must visibly shift the estimate: good {} bad {}",
        good.value,
        bad.value
    );
    let spread = |e: &satcausal::EffectEstimate| {
        e.refutations
            .iter()
            .find(|r| r.kind == RefutationKind::DataSubset)
            .map(|r| r.run_std)
            .unwrap()
    };
    assert!(
        spread(&bad) > spread(&good),
        "subset spread should inflate: good {} bad {}",
        spread(&good),
        spread(&bad)
    );
}

/// Criterion 5: cross-validated learning on the ten-variable trace model
/// recovers at least 90% of the true adjacencies with at most one spurious
/// adjacency, averaged over five seeds.
#[test]
fn acceptance_5_structure_recovery() {
    let start = Instant::now();
    let scm = trace_scm();
    let truth: BTreeSet<(String, String)> = scm
        .graph()
        .named_edges()
        .into_iter()
        .map(|(u, v)| if u < v { (u, v) } else { (v, u) })
        .collect();
    let constraints = default_sat_constraints(&clause_trace_schema()).unwrap();

    let mut recall_sum = 0.0;
    let mut spurious_sum = 0.0;
    for seed in 0..5u64 {
        let (data, _) = generate_trace_like(50_000, substream(0x57E0C, seed)).unwrap();
        let (g, _tally) = cv_learn(&constraints, &data, 10, seed).unwrap();
        let learned: BTreeSet<(String, String)> = g
            .named_edges()
            .into_iter()
            .map(|(u, v)| if u < v { (u, v) } else { (v, u) })
            .collect();
        let hit = truth.intersection(&learned).count();
        let spurious = learned.difference(&truth).count();
        recall_sum += hit as f64 / truth.len() as f64;
        spurious_sum += spurious as f64;
    }
    let recall = recall_sum / 5.0;
    let spurious = spurious_sum / 5.0;
    assert!(recall >= 0.90, "adjacency recall {recall:.3}");
    assert!(spurious <= 1.0, "spurious adjacencies {spurious:.2}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!("ACCEPTANCE 5 (structure recovery: recall {recall:.3}, spurious {spurious:.2}): PASS");
}

/// Criterion 7: refutation sanity on correct estimates: every placebo mean
/// sits within 3 run standard deviations of zero, and at least 95% of all
/// refutation tests pass.
#[test]
fn acceptance_7_refutation_sanity() {
    let mut passes = 0usize;
    let mut total = 0usize;
    for idx in 0..10u64 {
        let scm = random_linear_scm(5 + (idx % 4) as usize, 0.5, substream(0xEF07E, idx));
        let data = synth::sample(&scm, 20_000, substream(0x5EED, idx));
        let g = scm.graph();
        let names = g.node_names();
        // First connected pair in index order keeps the battery deterministic.
        let pair = (0..names.len())
            .flat_map(|x| (0..names.len()).map(move |y| (x, y)))
            .find(|&(x, y)| x != y && !g.children(x).is_empty() && g.has_directed_path(x, y));
        let Some((x, y)) = pair else { continue };
        let q = ate(&names[x], &names[y], 1.0, 0.0);
        let mut e = estimate_effect(&q, g, &data).unwrap();
        refute_all(&mut e, g, &data, 60, substream(0xF00D, idx)).unwrap();
        for r in &e.refutations {
            total += 1;
            if r.passed {
                passes += 1;
            }
            if r.kind == RefutationKind::PlaceboTreatment {
                assert!(
                    r.new_estimate.abs() <= 3.0 * r.run_std,
                    "scm {idx}: placebo mean {} vs run sd {}",
                    r.new_estimate,
                    r.run_std
                );
            }
        }
    }
    assert!(total >= 24, "battery too small: {total}");
    assert!(
        passes as f64 >= 0.95 * total as f64,
        "only {passes}/{total} refutation tests passed"
    );
    println!("ACCEPTANCE 7 (refutation sanity, {passes}/{total} passed): PASS");
}

/// Criterion 8: estimator algebra on 100 random regression instances:
/// scale equivariance, a = b giving exactly zero, and the normalization
/// covariance identity, all to 1e-9.
#[test]
fn acceptance_8_estimator_algebra() {
    for seed in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(substream(0xA16EB, seed));
        // Confounded triple with random coefficients and scales.
        let schema = vec![
            ColumnSchema::continuous("Z"),
            ColumnSchema::continuous("X"),
            ColumnSchema::continuous("Y"),
        ];
        let mechs = vec![
            synth::Mechanism::linear(
                rng.random_range(-5.0..5.0),
                &[],
                synth::NoiseSpec::Normal {
                    sd: rng.random_range(0.5..3.0),
                },
            ),
            synth::Mechanism::linear(
                rng.random_range(-5.0..5.0),
                &[("Z", rng.random_range(-2.0..2.0))],
                synth::NoiseSpec::Normal {
                    sd: rng.random_range(0.5..3.0),
                },
            ),
            synth::Mechanism::linear(
                rng.random_range(-5.0..5.0),
                &[
                    ("X", rng.random_range(-3.0..3.0)),
                    ("Z", rng.random_range(-2.0..2.0)),
                ],
                synth::NoiseSpec::Normal {
                    sd: rng.random_range(0.5..3.0),
                },
            ),
        ];
        let scm = synth::Scm::new(schema, mechs).unwrap();
        let data = synth::sample(&scm, 500, substream(0xDA7A2, seed));
        let g = scm.graph();

        // Scale equivariance: both queries estimate beta * delta.
        let (a, b) = (rng.random_range(1.0..4.0), rng.random_range(-3.0..0.5));
        let (c, dd) = (rng.random_range(4.5..9.0), rng.random_range(-9.0..-4.0));
        let e_ab = estimate_effect(&ate("X", "Y", a, b), g, &data).unwrap();
        let e_cd = estimate_effect(&ate("X", "Y", c, dd), g, &data).unwrap();
        let rescaled = e_cd.value * (a - b) / (c - dd);
        assert!(
            (e_ab.value - rescaled).abs() <= 1e-9 * e_ab.value.abs().max(1.0),
            "seed {seed}: scale equivariance broke: {} vs {rescaled}",
            e_ab.value
        );

        // Identical interventions: exactly zero.
        let e_same = estimate_effect(&ate("X", "Y", a, a), g, &data).unwrap();
        assert_eq!(e_same.value, 0.0);

        // Normalization covariance: normalized-data ATE equals the raw ATE
        // scaled by sigma_X / sigma_Y.
        let (norm, moments) = normalize_standard_score(&data).unwrap();
        let sd_of = |name: &str| {
            moments
                .iter()
                .find(|m| m.column == name)
                .map(|m| m.stddev)
                .unwrap()
        };
        let e_raw = estimate_effect(&ate("X", "Y", 1.0, 0.0), g, &data).unwrap();
        let e_norm = estimate_effect(&ate("X", "Y", 1.0, 0.0), g, &norm).unwrap();
        let expected = e_raw.value * sd_of("X") / sd_of("Y");
        assert!(
            (e_norm.value - expected).abs() <= 1e-9 * expected.abs().max(1.0),
            "seed {seed}: normalization covariance broke: {} vs {expected}",
            e_norm.value
        );
    }
    println!("ACCEPTANCE 8 (estimator algebra, 100 instances): PASS");
}

/// Companion to criterion 3: every backdoor set the identifier returns is
/// minimal, i.e. dropping any single member re-connects the pair in the
/// backdoor graph.
#[test]
fn backdoor_sets_are_minimal() {
    for seed in 0..200u64 {
        let g = random_dag(6, 0.5, substream(0x3ACDC, seed));
        let names = g.node_names().to_vec();
        for x in 0..names.len() {
            for y in 0..names.len() {
                if x == y {
                    continue;
                }
                let ident = find_backdoor_set(&g, &names[x], &names[y]).unwrap();
                let Identification::Backdoor(BackdoorSet { variables, .. }) = ident else {
                    continue;
                };
                let bd_graph = g.without_outgoing(x);
                let full: BTreeSet<usize> =
                    variables.iter().map(|v| g.node_index(v).unwrap()).collect();
                assert!(bd_graph.d_separated_idx(x, y, &full));
                for drop in &full {
                    let mut smaller = full.clone();
                    smaller.remove(drop);
                    assert!(
                        !bd_graph.d_separated_idx(x, y, &smaller),
                        "{g}: set {full:?} for ({x},{y}) is not minimal"
                    );
                }
            }
        }
    }
    println!("backdoor minimality over 200 random graphs: PASS");
}
