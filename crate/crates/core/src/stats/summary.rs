use serde::{Deserialize, Serialize};

use super::{check_finite, sorted, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`); zero when `n == 1`.
    pub std: f64,
    pub median: f64,
    pub n: usize,
}

pub fn summarize(scores: &[f64]) -> Result<SummaryStats, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(scores)?;
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss: f64 = scores.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    let s = sorted(scores);
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    Ok(SummaryStats {
        mean,
        std,
        median,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.median, s.n), (5.0, 0.0, 5.0, 1));

        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        // sqrt(5/3)
        assert!((s.std - 1.2909944487358056).abs() < 1e-12);
        assert_eq!(s.median, 2.5);

        let s = summarize(&[10.0, 10.0, 10.0]).unwrap();
        assert_eq!((s.mean, s.std, s.median), (10.0, 0.0, 10.0));
    }

    #[test]
    fn median_is_order_free() {
        assert_eq!(summarize(&[3.0, 1.0, 2.0]).unwrap().median, 2.0);
        assert_eq!(summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.5);
    }

    #[test]
    fn empty_and_nan() {
        assert_eq!(summarize(&[]), Err(StatsError::EmptySample));
        assert_eq!(summarize(&[1.0, f64::NAN]), Err(StatsError::NonFinite(1)));
    }
}
