use std::fmt;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::metric::{semantic_consistency_score, PromptRun};

/// Relative tolerance for convergence against both references.
pub const CONVERGENCE_TOLERANCE: f64 = 0.01;
/// Tighter tolerance reported at [`REFERENCE_REPETITIONS`].
pub const HALF_PERCENT: f64 = 0.005;
/// Repetition count at which `fraction_within_half_percent` is measured.
pub const REFERENCE_REPETITIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub model_id: String,
    pub prompt_ids: Vec<String>,
    pub repetition_grid: Vec<usize>,
    /// `scores[p][g]` is the score of prompt `p` over the first
    /// `repetition_grid[g]` seeds.
    pub scores: Vec<Vec<f64>>,
    /// Per prompt, the mean of its scores over the grid.
    pub grid_mean: Vec<f64>,
    /// Per prompt, its score at the largest grid point.
    pub final_score: Vec<f64>,
    /// Per prompt, the smallest grid point within 1% of both references.
    pub convergence: Vec<Option<usize>>,
    /// Fraction of prompts whose score at 20 repetitions lies within 0.5% of
    /// both references; `None` when 20 is not on the grid.
    pub fraction_within_half_percent: Option<f64>,
}

pub(crate) fn relative_deviation(x: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if x == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (x - reference).abs() / reference.abs()
    }
}

fn within(x: f64, mean: f64, last: f64, tol: f64) -> bool {
    relative_deviation(x, mean) <= tol && relative_deviation(x, last) <= tol
}

fn validate_grid(grid: &[usize]) -> Result<(), AnalysisError> {
    match grid.first() {
        None => return Err(AnalysisError::InvalidGrid("empty".into())),
        Some(&g) if g < 2 => {
            return Err(AnalysisError::InvalidGrid(format!(
                "{g} repetitions give no pairs; the smallest grid point must be at least 2"
            )))
        }
        _ => {}
    }
    if let Some(w) = grid.windows(2).find(|w| w[0] >= w[1]) {
        return Err(AnalysisError::InvalidGrid(format!(
            "not strictly increasing at {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Scores each run over growing prefixes of its seeds and finds where the
/// score settles.
pub fn sensitivity_analysis(
    runs: &[PromptRun],
    grid: &[usize],
) -> Result<SensitivityReport, AnalysisError> {
    validate_grid(grid)?;
    let max_r = *grid.last().expect("validated nonempty");
    let short: Vec<AnalysisError> = runs
        .iter()
        .filter(|r| r.len() < max_r)
        .map(|r| AnalysisError::InsufficientImages {
            prompt_id: r.prompt_id().into(),
            needed: max_r,
            available: r.len(),
        })
        .collect();
    if let Some(e) = AnalysisError::collect(short) {
        return Err(e);
    }

    let scores: Vec<Vec<f64>> = runs
        .iter()
        .map(|run| {
            grid.iter()
                .map(|&r| semantic_consistency_score(&run.prefix(r).expect("length checked")).score())
                .collect()
        })
        .collect();
    let grid_mean: Vec<f64> = scores
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    let final_score: Vec<f64> = scores.iter().map(|row| row[row.len() - 1]).collect();
    let convergence = scores
        .iter()
        .zip(grid_mean.iter().zip(&final_score))
        .map(|(row, (&mean, &last))| {
            row.iter()
                .zip(grid)
                .find(|(&s, _)| within(s, mean, last, CONVERGENCE_TOLERANCE))
                .map(|(_, &r)| r)
        })
        .collect();
    let fraction_within_half_percent = grid
        .iter()
        .position(|&r| r == REFERENCE_REPETITIONS)
        .filter(|_| !runs.is_empty())
        .map(|g| {
            let hits = (0..runs.len())
                .filter(|&p| within(scores[p][g], grid_mean[p], final_score[p], HALF_PERCENT))
                .count();
            hits as f64 / runs.len() as f64
        });

    Ok(SensitivityReport {
        model_id: runs
            .first()
            .map(|r| r.model_id().to_string())
            .unwrap_or_default(),
        prompt_ids: runs.iter().map(|r| r.prompt_id().to_string()).collect(),
        repetition_grid: grid.to_vec(),
        scores,
        grid_mean,
        final_score,
        convergence,
        fraction_within_half_percent,
    })
}

impl fmt::Display for SensitivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "sensitivity for {} over {} prompts, grid {:?}",
            self.model_id,
            self.prompt_ids.len(),
            self.repetition_grid
        )?;
        for (i, pid) in self.prompt_ids.iter().enumerate() {
            let conv = match self.convergence[i] {
                Some(r) => r.to_string(),
                None => "not converged".into(),
            };
            writeln!(
                f,
                "  {pid:<24} R*={conv:<14} grid mean {:.3}  final {:.3}",
                self.grid_mean[i], self.final_score[i]
            )?;
        }
        match self.fraction_within_half_percent {
            Some(x) => writeln!(
                f,
                "  within 0.5% of both references at R={REFERENCE_REPETITIONS}: {:.1}%",
                100.0 * x
            ),
            None => writeln!(f, "  R={REFERENCE_REPETITIONS} not on the grid"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::EmbeddingVector;

    fn run(vectors: Vec<Vec<f32>>) -> PromptRun {
        let embs = vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| EmbeddingVector::new(format!("p/{i}"), v).unwrap())
            .collect();
        PromptRun::from_embeddings("p", "m", embs).unwrap()
    }

    #[test]
    fn constant_run_converges_at_first_point() {
        let r = run(vec![vec![0.6, 0.8, 0.0]; 30]);
        let rep = sensitivity_analysis(&[r], &[5, 10, 20, 30]).unwrap();
        assert!(rep.scores[0].iter().all(|&s| (s - 100.0).abs() < 1e-9));
        assert_eq!(rep.convergence, vec![Some(5)]);
        assert_eq!(rep.fraction_within_half_percent, Some(1.0));
    }

    #[test]
    fn grid_validation() {
        let r = run(vec![vec![1.0, 0.0]; 10]);
        for bad in [&[][..], &[1, 5], &[5, 5], &[6, 4]] {
            assert!(matches!(
                sensitivity_analysis(std::slice::from_ref(&r), bad),
                Err(AnalysisError::InvalidGrid(_))
            ));
        }
        match sensitivity_analysis(&[r], &[5, 11]) {
            Err(AnalysisError::InsufficientImages {
                prompt_id,
                needed: 11,
                available: 10,
            }) => assert_eq!(prompt_id, "p"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn late_outlier_delays_convergence() {
        // seed index 25 is orthogonal to the other 99 identical vectors
        let mut v = vec![vec![1.0, 0.0]; 100];
        v[25] = vec![0.0, 1.0];
        let grid: Vec<usize> = (1..=10).map(|k| 10 * k).collect();
        let rep = sensitivity_analysis(&[run(v)], &grid).unwrap();
        for (&r, &s) in grid.iter().zip(&rep.scores[0]) {
            let pairs = (r * (r - 1) / 2) as f64;
            let orthogonal = if r > 25 { (r - 1) as f64 } else { 0.0 };
            assert!((s - 100.0 * (pairs - orthogonal) / pairs).abs() < 1e-9, "R={r}: {s}");
        }
        assert_eq!(rep.convergence, vec![Some(70)]);
        assert_eq!(rep.fraction_within_half_percent, Some(0.0));
    }

    #[test]
    fn relative_deviation_at_zero() {
        assert_eq!(relative_deviation(0.0, 0.0), 0.0);
        assert!(relative_deviation(1.0, 0.0).is_infinite());
        assert!((relative_deviation(99.0, 100.0) - 0.01).abs() < 1e-15);
    }
}
