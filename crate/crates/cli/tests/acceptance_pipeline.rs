//! Flagship end-to-end acceptance: the full pipeline on 200k simulated
//! rows must answer all seven presets with the injected ground truth's
//! signs and orderings, pass every refutation, finish within its time
//! budget, and reproduce byte-identically under the same seed.

use std::process::Command;
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

use satcausal::dataset::{columns, ColumnValue};
use satcausal::synth::{generate_trace_like, oracle_ate};

const N: usize = 200_000;
const SEED: u64 = 1;

fn num(v: f64) -> ColumnValue {
    ColumnValue::Num(v)
}

fn cat(s: &str) -> ColumnValue {
    ColumnValue::Cat(s.to_string())
}

fn preset<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["presets"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["name"] == name)
        .unwrap_or_else(|| panic!("{name} missing from report"))
}

fn single_value(answer: &Value) -> f64 {
    answer["body"]["estimate"]["value"].as_f64().unwrap()
}

#[test]
fn acceptance_6_pipeline_end_to_end() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let args = [
        "pipeline",
        "--simulate",
        "n=200000",
        "--seed",
        "1",
        "--out-dir",
        out_dir,
    ];

    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_satcausal"))
        .args(args)
        .output()
        .unwrap();
    let elapsed = started.elapsed();
    assert_eq!(
        out.status.code(),
        Some(0),
        "pipeline failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(elapsed.as_secs() < 600, "pipeline took {elapsed:?}");

    let report_path = dir.path().join("report.json");
    let first_bytes = std::fs::read(&report_path).unwrap();
    let report: Value = serde_json::from_slice(&first_bytes).unwrap();

    // Rebuild the ground truth exactly as the pipeline did.
    let (data, scm) = generate_trace_like(N, SEED).unwrap();
    let u = columns::UTILITY;
    let oracle = |t: &str, a: &ColumnValue, b: &ColumnValue| oracle_ate(&scm, t, u, a, b).unwrap();
    let sd = |col: &str| {
        let v = data.continuous(col).unwrap();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let sd_u = sd(u);

    // Every preset ran and every refutation passed.
    assert_eq!(report["presets"].as_array().unwrap().len(), 7);
    for p in report["presets"].as_array().unwrap() {
        assert_eq!(p["status"], "Ok", "{} failed refutation: {p}", p["name"]);
    }
    assert_eq!(report["all_refutations_passed"], true);

    // Q1: sign of the LBD effect matches the injected truth (negative).
    let q1 = single_value(&preset(&report, "Q1")["answers"][0]);
    let o1 = oracle(columns::LBD, &num(2.0), &num(1.0));
    assert!(o1 < 0.0 && q1 < 0.0, "Q1: estimate {q1}, oracle {o1}");

    // Q2: both the plain and the LBD-conditioned size effects match their
    // injected signs.
    let q2 = preset(&report, "Q2");
    let o2 = oracle(columns::SIZE, &num(2.0), &num(1.0));
    for part in 0..2 {
        let v = single_value(&q2["answers"][part]);
        assert_eq!(
            v.is_sign_negative(),
            o2.is_sign_negative(),
            "Q2 part {part}: estimate {v}, oracle {o2}"
        );
    }

    // Q3: the time effect within both LBD strata carries the injected sign.
    let q3 = preset(&report, "Q3");
    let o3 = oracle(columns::TIME, &num(10_000.0), &num(0.0));
    for part in 0..2 {
        let v = single_value(&q3["answers"][part]);
        assert_eq!(
            v.is_sign_negative(),
            o3.is_sign_negative(),
            "Q3 part {part}: estimate {v}, oracle {o3}"
        );
    }

    // Q4: the normalized magnitude ordering of Size vs LBD matches truth.
    let q4 = &preset(&report, "Q4")["answers"][0]["body"];
    let left = q4["left"]["value"].as_f64().unwrap(); // Size, normalized
    let right = q4["right"]["value"].as_f64().unwrap(); // LBD, normalized
    let o_size_norm = (o2 * sd(columns::SIZE) / sd_u).abs();
    let o_lbd_norm = (o1 * sd(columns::LBD) / sd_u).abs();
    assert_eq!(
        left.abs() > right.abs(),
        o_size_norm > o_lbd_norm,
        "Q4 ordering: |{left}| vs |{right}|, oracle |{o_size_norm}| vs |{o_lbd_norm}|"
    );
    assert_eq!(q4["holds"], Value::Bool(o_size_norm > o_lbd_norm));

    // Q5: the argmax winner matches the oracle's normalized ranking.
    let expected_winner = {
        let mut best = (String::new(), f64::NEG_INFINITY);
        for cs in data.schema() {
            if cs.name == u {
                continue;
            }
            let normalized = if cs.is_categorical() {
                let cats = cs.categories();
                let mut m: f64 = 0.0;
                for i in 0..cats.len() {
                    for j in (i + 1)..cats.len() {
                        let c = oracle(&cs.name, &cat(&cats[j]), &cat(&cats[i])).abs();
                        m = m.max(c);
                    }
                }
                m / sd_u
            } else {
                (oracle(&cs.name, &num(2.0), &num(1.0)) * sd(&cs.name) / sd_u).abs()
            };
            if normalized > best.1 {
                best = (cs.name.clone(), normalized);
            }
        }
        best.0
    };
    let q5 = &preset(&report, "Q5")["answers"][0]["body"];
    assert_eq!(q5["winner"].as_str().unwrap(), expected_winner, "Q5 winner");

    // Q6: the branching contrast carries the injected sign (Maple wins).
    let q6 = single_value(&preset(&report, "Q6")["answers"][0]);
    let o6 = oracle(columns::BRANCHING, &cat("Maple"), &cat("VSIDS"));
    assert!(o6 > 0.0 && q6 > 0.0, "Q6: estimate {q6}, oracle {o6}");

    // Q7: all three restart contrasts match the injected signs, and the
    // derived order is the injected one.
    let q7 = &preset(&report, "Q7")["answers"][0]["body"];
    let contrast_pairs = [
        ("Luby", "Geometric"),
        ("Luby", "LBD-based"),
        ("Geometric", "LBD-based"),
    ];
    let estimates = q7["contrasts"].as_array().unwrap();
    for (i, (a, b)) in contrast_pairs.iter().enumerate() {
        let v = estimates[i]["value"].as_f64().unwrap();
        let o = oracle(columns::RESTART, &cat(a), &cat(b));
        assert_eq!(
            v.is_sign_positive(),
            o.is_sign_positive(),
            "Q7 {a} vs {b}: estimate {v}, oracle {o}"
        );
    }
    assert_eq!(q7["intransitive"], Value::Bool(false));
    let order: Vec<&str> = q7["order"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(order, ["Luby", "Geometric", "LBD-based"]);

    // Same command, same seed: byte-identical report.
    let out = Command::new(env!("CARGO_BIN_EXE_satcausal"))
        .args(args)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let second_bytes = std::fs::read(&report_path).unwrap();
    assert_eq!(first_bytes, second_bytes, "report must be reproducible");

    println!(
        "ACCEPTANCE 6 (pipeline end-to-end, {} rows in {elapsed:?}): PASS",
        report["n_rows"]
    );
}
