use statrs::function::erf::erfc;

use super::{check_finite, sorted, summarize, StatsError, TestName, TestResult};

const SERIES_EPS: f64 = 1e-12;
const SERIES_MAX_TERMS: usize = 1_000_000;

/// Survival function of the Kolmogorov distribution,
/// `Q(t) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 t^2)`.
///
/// The alternating series is truncated once a term drops below `1e-12`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t <= 0.0 {
        return 1.0;
    }
    let t2 = t * t;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=SERIES_MAX_TERMS {
        let k = k as f64;
        let term = (-2.0 * k * k * t2).exp();
        sum += sign * term;
        if term < SERIES_EPS {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// One-sample KS test of normality with mean and standard deviation estimated
/// from the sample. Uses the plain Kolmogorov distribution (no Lilliefors
/// correction), which is conservative when parameters are estimated.
pub fn ks_normality(scores: &[f64]) -> Result<TestResult, StatsError> {
    if scores.len() < 3 {
        return Err(StatsError::InsufficientSample {
            needed: 3,
            got: scores.len(),
        });
    }
    check_finite(scores)?;
    let summary = summarize(scores)?;
    if summary.std <= 0.0 {
        return Err(StatsError::DegenerateSample("zero variance".into()));
    }
    let xs = sorted(scores);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = normal_cdf((x - summary.mean) / summary.std);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    let d = d.clamp(0.0, 1.0);
    Ok(TestResult {
        test_name: TestName::KsNormality,
        statistic: d,
        p_value: kolmogorov_survival(n.sqrt() * d),
        method_note: format!(
            "asymptotic Kolmogorov distribution; normal parameters estimated from sample \
             (mean={:.6}, sd={:.6}); no Lilliefors correction",
            summary.mean, summary.std
        ),
    })
}

/// Exact two-sample KS distance as the ratio `numerator / (n_a * n_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoSampleStatistic {
    pub numerator: u64,
    pub n_a: u64,
    pub n_b: u64,
}

impl TwoSampleStatistic {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / (self.n_a * self.n_b) as f64
    }
}

/// `sup_x |ECDF_a(x) - ECDF_b(x)|`, evaluated at every pooled sample point in
/// integer arithmetic.
pub fn two_sample_statistic(a: &[f64], b: &[f64]) -> Result<TwoSampleStatistic, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(a)?;
    check_finite(b)?;
    let (xa, xb) = (sorted(a), sorted(b));
    let (na, nb) = (xa.len() as u64, xb.len() as u64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0u64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] == x {
            i += 1;
        }
        while j < xb.len() && xb[j] == x {
            j += 1;
        }
        best = best.max((i as u64 * nb).abs_diff(j as u64 * na));
    }
    Ok(TwoSampleStatistic {
        numerator: best,
        n_a: na,
        n_b: nb,
    })
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    let stat = two_sample_statistic(a, b)?;
    let d = stat.value();
    let (na, nb) = (stat.n_a as f64, stat.n_b as f64);
    let en = (na * nb / (na + nb)).sqrt();
    Ok(TestResult {
        test_name: TestName::KsTwoSample,
        statistic: d,
        p_value: kolmogorov_survival(en * d),
        method_note: "asymptotic".into(),
    })
}
