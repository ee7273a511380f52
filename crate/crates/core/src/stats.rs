//! Small statistical helpers shared across modules.

/// Standard normal CDF via the Abramowitz & Stegun 26.2.17 rational
/// approximation (absolute error below 7.5e-8, plenty for p-values).
pub fn normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_cdf(-z);
    }
    let t = 1.0 / (1.0 + 0.2316419 * z);
    let d = 0.398_942_280_401_432_7; // 1/sqrt(2*pi)
    let poly = t
        * (0.319381530
            + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
    1.0 - d * (-z * z / 2.0).exp() * poly
}

/// Two-sided p-value of observing `value` under Normal(mean, sd).
/// A degenerate sd treats exact agreement as certain and anything else as
/// impossible.
pub fn two_sided_p(value: f64, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return if (value - mean).abs() < 1e-12 {
            1.0
        } else {
            0.0
        };
    }
    let z = ((value - mean) / sd).abs();
    2.0 * (1.0 - normal_cdf(z))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}
