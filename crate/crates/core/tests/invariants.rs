//! Cross-module invariants: sampled data must respect the graph that
//! generated it, measured through vanishing partial correlations.

use satcausal::causal::fit_ols;
use satcausal::dataset::Dataset;
use satcausal::fitness::pearson;
use satcausal::substream;
use satcausal::synth::{random_linear_scm, sample};

/// Residuals of `column` after regressing on `given`.
fn residuals(column: &str, given: &[String], d: &Dataset) -> Vec<f64> {
    let vals = d.continuous(column).unwrap();
    if given.is_empty() {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        return vals.iter().map(|v| v - mean).collect();
    }
    let model = fit_ols(column, given, d).unwrap();
    let cols: Vec<&[f64]> = model
        .regressors
        .iter()
        .map(|r| d.continuous(r).unwrap())
        .collect();
    (0..d.n_rows())
        .map(|row| {
            let mut pred = model.intercept();
            for (c, coef) in cols.iter().zip(&model.coefficients) {
                pred += coef * c[row];
            }
            vals[row] - pred
        })
        .collect()
}

/// For every non-adjacent pair (x, y) with x no later than y in dependency
/// order, the parents of y d-separate the pair, and the partial correlation
/// of the sampled columns given those parents is near zero.
#[test]
fn sampled_data_matches_graph_independences() {
    for idx in 0..3u64 {
        let scm = random_linear_scm(6, 0.4, substream(0xC0FFEE, idx));
        let data = sample(&scm, 100_000, substream(0x5A11, idx));
        let g = scm.graph();
        let order = g.topological_order();
        let pos: Vec<usize> = {
            let mut p = vec![0; order.len()];
            for (rank, &node) in order.iter().enumerate() {
                p[node] = rank;
            }
            p
        };
        let names = g.node_names();

        let mut tested = 0;
        for x in 0..names.len() {
            for y in 0..names.len() {
                if x == y || pos[x] >= pos[y] {
                    continue;
                }
                if g.has_edge(x, y) || g.has_edge(y, x) {
                    continue;
                }
                let parents: Vec<String> =
                    g.parents(y).iter().map(|&p| names[p].to_string()).collect();
                let s = parents.iter().cloned().collect();
                assert!(
                    g.d_separated(&names[x], &names[y], &s).unwrap(),
                    "parents of a later non-adjacent node must separate"
                );
                let rx = residuals(&names[x], &parents, &data);
                let ry = residuals(&names[y], &parents, &data);
                let r = pearson(&rx, &ry).unwrap();
                assert!(
                    r.abs() < 0.02,
                    "scm {idx}: partial correlation {}-{} given {parents:?} is {r}",
                    names[x],
                    names[y]
                );
                tested += 1;
            }
        }
        assert!(tested > 0, "scm {idx} had no testable pair");
    }
}
