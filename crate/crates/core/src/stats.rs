//! Small exact statistics used by paired comparisons in tests and
//! reports: a one-sided binomial sign test and order statistics.

use serde::{Deserialize, Serialize};

/// Result of a paired sign test. Ties carry no information and are
/// dropped from the effective trial count, per the standard treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTestResult {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided p-value: probability of at least `wins` successes in
    /// `wins + losses` fair coin flips.
    pub p_value: f64,
}

/// Exact one-sided binomial tail: `P(X >= wins)` for
/// `X ~ Binomial(trials, 1/2)`. Exact integer arithmetic, so it is an
/// oracle rather than an approximation; supports up to 126 trials,
/// far beyond any paired comparison run here.
pub fn binomial_tail_one_sided(wins: usize, trials: usize) -> f64 {
    assert!(trials <= 126, "exact tail supports at most 126 trials, got {}", trials);
    if wins > trials {
        return 0.0;
    }
    let mut tail: u128 = 0;
    let mut coeff: u128 = 1; // C(trials, 0)
    for i in 0..=trials {
        if i >= wins {
            tail += coeff;
        }
        if i < trials {
            coeff = coeff * (trials - i) as u128 / (i + 1) as u128;
        }
    }
    tail as f64 / (1u128 << trials) as f64
}

/// Sign test over paired observations; a "win" is `a > b` strictly.
pub fn paired_sign_test(pairs: &[(f64, f64)]) -> SignTestResult {
    let mut wins = 0usize;
    let mut losses = 0usize;
    let mut ties = 0usize;
    for &(a, b) in pairs {
        if a > b {
            wins += 1;
        } else if a < b {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let trials = wins + losses;
    let p_value = if trials == 0 { 1.0 } else { binomial_tail_one_sided(wins, trials) };
    SignTestResult { wins, losses, ties, p_value }
}

/// Median of a sample; the even case averages the middle pair.
/// Panics on an empty slice.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Arithmetic mean; panics on an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty sample");
    values.iter().sum::<f64>() / values.len() as f64
}
