//! Wilcoxon signed-rank test over paired scores.
//!
//! Differences are `b - a`. Zeros are dropped, tied magnitudes share average
//! ranks. The exact null distribution of `W+` is counted over all `2^n`
//! sign assignments by subset-sum dynamic programming on doubled ranks, so
//! average ranks stay integral and every tail probability is an exact
//! count divided by a power of two.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Largest tie-free sample for which the automatic method stays exact.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

impl WilcoxonMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            WilcoxonMethod::Exact => "exact",
            WilcoxonMethod::NormalApprox => "normal-approx",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n_pairs: usize,
    pub n_nonzero: usize,
    pub n_zero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// P(W+ >= observed): evidence that `b` exceeds `a`.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub method: WilcoxonMethod,
    pub mean_diff: f64,
}

/// Exact when `n_nonzero <= 25` and no magnitudes tie, normal
/// approximation otherwise.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult, EvalError> {
    wilcoxon_with(pairs, None)
}

/// Same test with the method forced; `Exact` accepts ties and up to 63
/// nonzero differences.
pub fn wilcoxon_with(
    pairs: &[(f64, f64)],
    method: Option<WilcoxonMethod>,
) -> Result<WilcoxonResult, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(EvalError::AllZeroDifferences);
    }
    let n = nonzero.len();
    let (doubled_ranks, tie_sizes) = doubled_average_ranks(&nonzero);
    let has_ties = tie_sizes.iter().any(|&t| t > 1);

    let w_plus2: u64 = nonzero
        .iter()
        .zip(&doubled_ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total2 = (n * (n + 1)) as u64;
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;

    let method = method.unwrap_or(if n <= EXACT_LIMIT && !has_ties {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::NormalApprox
    });

    let (p_greater, p_less) = match method {
        WilcoxonMethod::Exact => {
            if n > 63 {
                return Err(EvalError::ExactTooLarge(n));
            }
            exact_tails(&doubled_ranks, w_plus2)
        }
        WilcoxonMethod::NormalApprox => normal_tails(n, &tie_sizes, w_plus),
    };

    Ok(WilcoxonResult {
        n_pairs: pairs.len(),
        n_nonzero: n,
        n_zero: pairs.len() - n,
        w_plus,
        w_minus,
        p_one_sided: p_greater,
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
        method,
        mean_diff,
    })
}

/// Twice the average rank of each |difference| and the size of every tie block.
fn doubled_average_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0u64; diffs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

fn exact_tails(doubled_ranks: &[u64], observed2: u64) -> (f64, f64) {
    let total: u64 = doubled_ranks.iter().sum();
    // counts[s] = number of sign assignments with doubled W+ equal to s
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let denom = 2f64.powi(doubled_ranks.len() as i32);
    let obs = observed2 as usize;
    let ge: u64 = counts[obs..].iter().sum();
    let le: u64 = counts[..=obs].iter().sum();
    (ge as f64 / denom, le as f64 / denom)
}

fn normal_tails(n: usize, tie_sizes: &[usize], w_plus: f64) -> (f64, f64) {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return (1.0, 1.0);
    }
    let sd = var.sqrt();
    let upper_z = (w_plus - mean - 0.5) / sd;
    let lower_z = (w_plus - mean + 0.5) / sd;
    (normal_sf(upper_z).min(1.0), normal_cdf(lower_z).min(1.0))
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}
