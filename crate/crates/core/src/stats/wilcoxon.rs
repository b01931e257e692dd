use statrs::function::erf::erfc;

use super::{check_finite, StatsError, TestName, TestResult};

/// Largest effective sample size for which the exact null distribution is
/// used (tie-free data only).
pub const EXACT_MAX_N: usize = 50;

/// Outcome of a signed-rank test with the rank sums that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRankTest {
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub n_zero: usize,
    pub exact: bool,
    pub result: TestResult,
}

/// Number of sign assignments of ranks `1..=n` for each positive-rank sum
/// `0..=n(n+1)/2`. Sums to `2^n`.
pub fn signed_rank_null_counts(n: usize) -> Vec<u64> {
    assert!(n <= 63, "counts overflow u64 beyond n = 63");
    let max = n * (n + 1) / 2;
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for rank in 1..=n {
        for s in (rank..=rank * (rank + 1) / 2).rev() {
            counts[s] += counts[s - rank];
        }
    }
    counts
}

/// Average ranks (1-based) of `values`, plus the sizes of tie groups.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Two-sided paired Wilcoxon signed-rank test of `x` against `y`.
///
/// Zero differences are dropped. The reported statistic is `min(W+, W-)`.
/// The p-value is exact for tie-free data with at most [`EXACT_MAX_N`]
/// effective pairs, and otherwise uses the normal approximation with tie
/// correction and continuity correction.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<SignedRankTest, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::PairedLength {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(x)?;
    check_finite(y)?;
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n_zero = x.len() - diffs.len();
    if diffs.is_empty() {
        return Err(StatsError::DegenerateSample(
            "all paired differences are zero".into(),
        ));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let (mut w_plus, mut w_minus) = (0.0, 0.0);
    for (d, r) in diffs.iter().zip(&ranks) {
        if *d > 0.0 {
            w_plus += r;
        } else {
            w_minus += r;
        }
    }
    let statistic = f64::min(w_plus, w_minus);
    let exact = ties.is_empty() && n <= EXACT_MAX_N;

    let (p_value, path) = if exact {
        let counts = signed_rank_null_counts(n);
        // no ties: ranks are integers, so the statistic is too
        let t = statistic as usize;
        let tail: u64 = counts[..=t].iter().sum();
        let p = (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0);
        (p, "exact null distribution".to_string())
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>()
            / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let mut d = statistic - mean;
        d -= 0.5 * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        let p = if var > 0.0 {
            let z = d / var.sqrt();
            // 2 * Phi(-|z|)
            erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
        } else {
            1.0
        };
        let reason = if ties.is_empty() {
            format!("n > {EXACT_MAX_N}")
        } else {
            format!("{} tie group(s) among |d|", ties.len())
        };
        (
            p,
            format!("normal approximation ({reason}) with tie and continuity correction"),
        )
    };

    Ok(SignedRankTest {
        w_plus,
        w_minus,
        n_effective: n,
        n_zero,
        exact,
        result: TestResult {
            test_name: TestName::WilcoxonSignedRank,
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            method_note: format!(
                "{path}; statistic = min(W+, W-); {n_zero} zero difference(s) dropped (wilcox method); n = {n}"
            ),
        },
    })
}
