#![allow(dead_code)]

/// Pearson statistic of `observed` against `expected` probabilities.
pub fn chi2(observed: &[u64], expected: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    observed
        .iter()
        .zip(expected)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper critical value at roughly the 1e-4 level (Wilson-Hilferty).
pub fn chi2_critical(df: usize) -> f64 {
    let d = df as f64;
    let z = 3.72;
    d * (1.0 - 2.0 / (9.0 * d) + z * (2.0 / (9.0 * d)).sqrt()).powi(3)
}

/// Four standard deviations of a binomial proportion.
pub fn binomial_slack(p: f64, n: u64) -> f64 {
    4.0 * (p * (1.0 - p) / n as f64).sqrt()
}
