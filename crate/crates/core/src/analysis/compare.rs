use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataset::ScoreTable;
use crate::stats::{
    ks_normality, ks_two_sample, summarize, wilcoxon_signed_rank, StatsError, SummaryStats,
    TestResult,
};

/// Winner label when both models score the same on a prompt.
pub const TIE: &str = "tie";

/// A test that either ran or could not run on this data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TestOutcome {
    Computed(TestResult),
    NotApplicable { reason: String },
}

impl TestOutcome {
    fn from_stats(r: Result<TestResult, StatsError>) -> Self {
        match r {
            Ok(t) => Self::Computed(t),
            Err(e) => Self::NotApplicable {
                reason: e.to_string(),
            },
        }
    }

    pub fn result(&self) -> Option<&TestResult> {
        match self {
            Self::Computed(t) => Some(t),
            Self::NotApplicable { .. } => None,
        }
    }
}

/// Signed-rank sums with `a - b` as the difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSums {
    pub w_plus: f64,
    pub w_minus: f64,
    pub n_effective: usize,
    pub n_zero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptComparison {
    pub prompt_id: String,
    pub score_a: f64,
    pub score_b: f64,
    /// Model id of the higher score, or `"tie"`.
    pub winner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_a: String,
    pub model_b: String,
    pub summary_a: SummaryStats,
    pub summary_b: SummaryStats,
    pub normality_a: TestOutcome,
    pub normality_b: TestOutcome,
    pub ks_two_sample: TestOutcome,
    pub wilcoxon: TestOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wilcoxon_rank_sums: Option<RankSums>,
    pub per_prompt: Vec<PromptComparison>,
    /// Pairs clamped at zero across both tables; `None` when either table
    /// was loaded without diagnostics.
    pub clamp_activation_count: Option<usize>,
}

pub(crate) fn winner<'a>(model_a: &'a str, model_b: &'a str, a: f64, b: f64) -> &'a str {
    if a > b {
        model_a
    } else if b > a {
        model_b
    } else {
        TIE
    }
}

fn pairing_error(a: &ScoreTable, b: &ScoreTable) -> Option<AnalysisError> {
    let set_a: HashSet<&str> = a.prompt_ids().collect();
    let set_b: HashSet<&str> = b.prompt_ids().collect();
    if set_a == set_b {
        return None;
    }
    let only_in_a = a
        .prompt_ids()
        .filter(|p| !set_b.contains(p))
        .map(String::from)
        .collect();
    let only_in_b = b
        .prompt_ids()
        .filter(|p| !set_a.contains(p))
        .map(String::from)
        .collect();
    Some(AnalysisError::Pairing {
        model_a: a.model_id().into(),
        model_b: b.model_id().into(),
        only_in_a,
        only_in_b,
    })
}

/// Paired comparison of two models over the same prompt set, in the prompt
/// order of `table_a`.
pub fn compare_models(
    table_a: &ScoreTable,
    table_b: &ScoreTable,
) -> Result<ComparisonReport, AnalysisError> {
    if let Some(e) = pairing_error(table_a, table_b) {
        return Err(e);
    }
    let (model_a, model_b) = (table_a.model_id(), table_b.model_id());
    let per_prompt: Vec<PromptComparison> = table_a
        .iter()
        .map(|(pid, va)| {
            let score_a = va.score();
            let score_b = table_b.get(pid).expect("paired").score();
            PromptComparison {
                prompt_id: pid.to_string(),
                score_a,
                score_b,
                winner: winner(model_a, model_b, score_a, score_b).to_string(),
            }
        })
        .collect();
    let xs: Vec<f64> = per_prompt.iter().map(|p| p.score_a).collect();
    let ys: Vec<f64> = per_prompt.iter().map(|p| p.score_b).collect();

    let signed_rank = wilcoxon_signed_rank(&xs, &ys);
    let wilcoxon_rank_sums = signed_rank.as_ref().ok().map(|t| RankSums {
        w_plus: t.w_plus,
        w_minus: t.w_minus,
        n_effective: t.n_effective,
        n_zero: t.n_zero,
    });
    let wilcoxon = match signed_rank {
        Ok(t) => TestOutcome::Computed(t.result),
        Err(StatsError::DegenerateSample(_)) => TestOutcome::NotApplicable {
            reason: "no paired differences: every prompt scored identically".into(),
        },
        Err(e) => TestOutcome::NotApplicable {
            reason: e.to_string(),
        },
    };

    let clamp_activation_count = table_a
        .clamped_pairs()
        .zip(table_b.clamped_pairs())
        .map(|(a, b)| a + b);

    Ok(ComparisonReport {
        model_a: model_a.into(),
        model_b: model_b.into(),
        summary_a: summarize(&xs).expect("tables are nonempty"),
        summary_b: summarize(&ys).expect("tables are nonempty"),
        normality_a: TestOutcome::from_stats(ks_normality(&xs)),
        normality_b: TestOutcome::from_stats(ks_normality(&ys)),
        ks_two_sample: TestOutcome::from_stats(ks_two_sample(&xs, &ys)),
        wilcoxon,
        wilcoxon_rank_sums,
        per_prompt,
        clamp_activation_count,
    })
}

fn fmt_test(f: &mut fmt::Formatter<'_>, label: &str, t: &TestOutcome) -> fmt::Result {
    match t {
        TestOutcome::Computed(r) => writeln!(
            f,
            "  {label:<22} statistic={:<10} p={:.3e}  [{}]",
            format!("{:.4}", r.statistic),
            r.p_value,
            r.method_note
        ),
        TestOutcome::NotApplicable { reason } => writeln!(f, "  {label:<22} n/a ({reason})"),
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} vs {} over {} prompts", self.model_a, self.model_b, self.per_prompt.len())?;
        for (m, s) in [(&self.model_a, &self.summary_a), (&self.model_b, &self.summary_b)] {
            writeln!(
                f,
                "  {m:<22} mean {:.1} ± {:.1} (median {:.1}, n={})",
                s.mean, s.std, s.median, s.n
            )?;
        }
        fmt_test(f, &format!("normality {}", self.model_a), &self.normality_a)?;
        fmt_test(f, &format!("normality {}", self.model_b), &self.normality_b)?;
        fmt_test(f, "two-sample KS", &self.ks_two_sample)?;
        fmt_test(f, "Wilcoxon signed-rank", &self.wilcoxon)?;
        let wins = |m: &str| self.per_prompt.iter().filter(|p| p.winner == m).count();
        writeln!(
            f,
            "  per-prompt winners: {} {}, {} {}, ties {}",
            self.model_a,
            wins(&self.model_a),
            self.model_b,
            wins(&self.model_b),
            wins(TIE)
        )?;
        match self.clamp_activation_count {
            Some(n) => writeln!(f, "  clamped pairs: {n}"),
            None => writeln!(f, "  clamped pairs: unknown (tables loaded from CSV)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::ScsValue;

    fn table(model: &str, scores: &[(&str, f64)]) -> ScoreTable {
        ScoreTable::new(
            model,
            scores
                .iter()
                .map(|&(p, s)| (p.to_string(), ScsValue::new(s, 20, 190).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_tables() {
        let a = table("a", &[("p1", 80.0), ("p2", 90.0), ("p3", 85.5)]);
        let b = table("b", &[("p1", 80.0), ("p2", 90.0), ("p3", 85.5)]);
        let r = compare_models(&a, &b).unwrap();
        let ks = r.ks_two_sample.result().unwrap();
        assert_eq!((ks.statistic, ks.p_value), (0.0, 1.0));
        match &r.wilcoxon {
            TestOutcome::NotApplicable { reason } => assert!(reason.contains("no paired differences")),
            other => panic!("{other:?}"),
        }
        assert!(r.per_prompt.iter().all(|p| p.winner == TIE));
        assert_eq!(r.clamp_activation_count, None);
    }

    #[test]
    fn shifted_table_is_one_sided() {
        let a = table("a", &[("p1", 80.0), ("p2", 90.0), ("p3", 70.0), ("p4", 60.0)]);
        let b = table("b", &[("p1", 81.0), ("p2", 91.0), ("p3", 71.0), ("p4", 61.0)]);
        let r = compare_models(&a, &b).unwrap();
        assert_eq!(r.wilcoxon.result().unwrap().statistic, 0.0);
        assert!(r.per_prompt.iter().all(|p| p.winner == "b"));
    }

    #[test]
    fn unpaired_tables() {
        let a = table("a", &[("p1", 1.0), ("p2", 2.0)]);
        let b = table("b", &[("p2", 1.0), ("p3", 2.0)]);
        match compare_models(&a, &b) {
            Err(AnalysisError::Pairing { only_in_a, only_in_b, .. }) => {
                assert_eq!(only_in_a, vec!["p1"]);
                assert_eq!(only_in_b, vec!["p3"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mirrored_comparison() {
        let a = table("a", &[("p1", 80.0), ("p2", 95.0), ("p3", 70.0), ("p4", 66.0), ("p5", 99.0)]);
        let b = table("b", &[("p3", 75.0), ("p1", 82.0), ("p2", 90.0), ("p5", 99.0), ("p4", 61.5)]);
        let ab = compare_models(&a, &b).unwrap();
        let ba = compare_models(&b, &a).unwrap();
        assert_eq!(ab.summary_a, ba.summary_b);
        assert_eq!(ab.summary_b, ba.summary_a);
        assert_eq!(ab.ks_two_sample, ba.ks_two_sample);
        assert_eq!(ab.wilcoxon, ba.wilcoxon);
        let ws = ab.wilcoxon_rank_sums.unwrap();
        let sw = ba.wilcoxon_rank_sums.unwrap();
        assert_eq!((ws.w_plus, ws.w_minus), (sw.w_minus, sw.w_plus));
        for p in &ab.per_prompt {
            let q = ba.per_prompt.iter().find(|q| q.prompt_id == p.prompt_id).unwrap();
            assert_eq!(p.winner, q.winner);
        }
    }

    #[test]
    fn report_serializes_with_status_tags() {
        let a = table("a", &[("p1", 80.0), ("p2", 90.0)]);
        let b = table("b", &[("p1", 80.0), ("p2", 91.0)]);
        let r = compare_models(&a, &b).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["wilcoxon"]["status"], "computed");
        assert_eq!(v["wilcoxon"]["test_name"], "wilcoxon_signed_rank");
        assert_eq!(v["normality_a"]["status"], "not_applicable");
        let text = r.to_string();
        assert!(text.contains("two-sample KS"));
    }
}
