use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::compare::{winner, TIE};
use super::AnalysisError;
use crate::dataset::{effective_records, AnnotationRecord, ScoreTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorAgreement {
    pub agreed: usize,
    pub scored: usize,
}

impl AnnotatorAgreement {
    pub fn rate(&self) -> f64 {
        self.agreed as f64 / self.scored as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub model_a: String,
    pub model_b: String,
    /// Fraction of each annotator's choices that match the higher-scoring model.
    pub per_annotator: BTreeMap<String, f64>,
    pub per_annotator_counts: BTreeMap<String, AnnotatorAgreement>,
    /// Fraction of majority choices that match; `None` when every prompt was
    /// excluded.
    pub aggregate_rate: Option<f64>,
    /// Unweighted mean of `per_annotator`.
    pub mean_annotator_rate: f64,
    /// Prompts whose annotator vote split evenly.
    pub excluded_prompts: Vec<String>,
    /// Annotated prompts where both models scored the same.
    pub score_tie_prompts: Vec<String>,
    /// Annotators whose every choice fell on a score tie.
    pub annotators_without_scored_prompts: Vec<String>,
    /// Prompts counted in `aggregate_rate`.
    pub n_prompts_scored: usize,
}

fn validate(
    records: &[AnnotationRecord],
    table_a: &ScoreTable,
    table_b: &ScoreTable,
) -> Result<(), AnalysisError> {
    let (ma, mb) = (table_a.model_id(), table_b.model_id());
    if records.is_empty() {
        return Err(AnalysisError::Annotation("no annotation records".into()));
    }
    if ma == mb {
        return Err(AnalysisError::Annotation(format!(
            "both score tables belong to model `{ma}`"
        )));
    }
    let mut problems = BTreeSet::new();
    for r in records {
        if table_a.get(&r.prompt_id).is_none() || table_b.get(&r.prompt_id).is_none() {
            problems.insert(format!("prompt `{}` is not scored for both models", r.prompt_id));
        }
        if r.chosen_model_id != ma && r.chosen_model_id != mb {
            problems.insert(format!(
                "annotator `{}` chose unknown model `{}` on prompt `{}`",
                r.annotator_id, r.chosen_model_id, r.prompt_id
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(AnalysisError::Annotation(
            problems.into_iter().collect::<Vec<_>>().join("; "),
        ))
    }
}

/// Agreement between annotator choices and the higher-scoring model.
///
/// Only the latest record per (annotator, prompt) counts.
pub fn compute_agreement(
    records: &[AnnotationRecord],
    table_a: &ScoreTable,
    table_b: &ScoreTable,
) -> Result<AgreementReport, AnalysisError> {
    validate(records, table_a, table_b)?;
    let (ma, mb) = (table_a.model_id(), table_b.model_id());
    let effective = effective_records(records);

    let mut winners: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &effective {
        let a = table_a.get(&r.prompt_id).expect("validated").score();
        let b = table_b.get(&r.prompt_id).expect("validated").score();
        winners.insert(&r.prompt_id, winner(ma, mb, a, b));
    }
    let score_tie_prompts: Vec<String> = winners
        .iter()
        .filter(|(_, &w)| w == TIE)
        .map(|(p, _)| p.to_string())
        .collect();

    let mut counts: BTreeMap<String, AnnotatorAgreement> = BTreeMap::new();
    let mut without = BTreeSet::new();
    // per prompt: votes for model a, votes for model b
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &effective {
        let w = winners[r.prompt_id.as_str()];
        if w == TIE {
            without.insert(r.annotator_id.clone());
            continue;
        }
        let c = counts.entry(r.annotator_id.clone()).or_insert(AnnotatorAgreement {
            agreed: 0,
            scored: 0,
        });
        c.scored += 1;
        c.agreed += usize::from(r.chosen_model_id == w);
        let v = votes.entry(&r.prompt_id).or_default();
        if r.chosen_model_id == ma {
            v.0 += 1;
        } else {
            v.1 += 1;
        }
    }
    without.retain(|a| !counts.contains_key(a));
    if counts.is_empty() {
        return Err(AnalysisError::Annotation(
            "no annotated prompt has a score winner".into(),
        ));
    }

    let per_annotator: BTreeMap<String, f64> =
        counts.iter().map(|(a, c)| (a.clone(), c.rate())).collect();
    let mean_annotator_rate = per_annotator.values().sum::<f64>() / per_annotator.len() as f64;

    let mut excluded_prompts = Vec::new();
    let mut n_prompts_scored = 0;
    let mut majority_agrees = 0;
    for (&pid, &(va, vb)) in &votes {
        if va == vb {
            excluded_prompts.push(pid.to_string());
            continue;
        }
        n_prompts_scored += 1;
        let mode = if va > vb { ma } else { mb };
        majority_agrees += usize::from(mode == winners[pid]);
    }
    let aggregate_rate =
        (n_prompts_scored > 0).then(|| majority_agrees as f64 / n_prompts_scored as f64);

    Ok(AgreementReport {
        model_a: ma.into(),
        model_b: mb.into(),
        per_annotator,
        per_annotator_counts: counts,
        aggregate_rate,
        mean_annotator_rate,
        excluded_prompts,
        score_tie_prompts,
        annotators_without_scored_prompts: without.into_iter().collect(),
        n_prompts_scored,
    })
}

impl fmt::Display for AgreementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "agreement with score winner, {} vs {}", self.model_a, self.model_b)?;
        match self.aggregate_rate {
            Some(r) => writeln!(
                f,
                "  majority vote: {:.1}% of {} prompts",
                100.0 * r,
                self.n_prompts_scored
            )?,
            None => writeln!(f, "  majority vote: no prompt with a clear majority")?,
        }
        let (lo, hi) = self
            .per_annotator
            .values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        writeln!(
            f,
            "  per annotator: mean {:.1}% (range {:.1}%..{:.1}%) over {} annotators",
            100.0 * self.mean_annotator_rate,
            100.0 * lo,
            100.0 * hi,
            self.per_annotator.len()
        )?;
        for (a, c) in &self.per_annotator_counts {
            writeln!(f, "    {a:<20} {}/{}", c.agreed, c.scored)?;
        }
        if !self.excluded_prompts.is_empty() {
            writeln!(f, "  split votes: {}", self.excluded_prompts.join(", "))?;
        }
        if !self.score_tie_prompts.is_empty() {
            writeln!(f, "  equal scores: {}", self.score_tie_prompts.join(", "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::ScsValue;
    use chrono::{TimeZone, Utc};

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

    fn rec(a: &str, p: &str, m: &str) -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: a.into(),
            prompt_id: p.into(),
            chosen_model_id: m.into(),
            timestamp: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
        }
    }

    #[test]
    fn single_annotator_agreeing() {
        let a = table("a", &[("p1", 90.0), ("p2", 50.0)]);
        let b = table("b", &[("p1", 80.0), ("p2", 60.0)]);
        let r = compute_agreement(&[rec("x", "p1", "a"), rec("x", "p2", "b")], &a, &b).unwrap();
        assert_eq!(r.per_annotator["x"], 1.0);
        assert_eq!(r.aggregate_rate, Some(1.0));
        assert_eq!(r.mean_annotator_rate, 1.0);
    }

    #[test]
    fn three_annotators_two_prompts() {
        // p1: winner a, votes a,a,b -> mode a agrees
        // p2: winner a, votes b,b,a -> mode b disagrees
        let a = table("a", &[("p1", 90.0), ("p2", 90.0)]);
        let b = table("b", &[("p1", 80.0), ("p2", 80.0)]);
        let recs = [
            rec("x", "p1", "a"),
            rec("y", "p1", "a"),
            rec("z", "p1", "b"),
            rec("x", "p2", "b"),
            rec("y", "p2", "b"),
            rec("z", "p2", "a"),
        ];
        let r = compute_agreement(&recs, &a, &b).unwrap();
        assert_eq!(r.aggregate_rate, Some(0.5));
        assert_eq!(r.n_prompts_scored, 2);
        assert_eq!(r.per_annotator["x"], 0.5);
        assert_eq!(r.per_annotator["z"], 0.5);
    }

    #[test]
    fn split_vote_is_excluded() {
        let a = table("a", &[("p1", 90.0), ("p2", 90.0)]);
        let b = table("b", &[("p1", 80.0), ("p2", 80.0)]);
        let recs = [
            rec("x", "p1", "a"),
            rec("y", "p1", "b"),
            rec("x", "p2", "a"),
            rec("y", "p2", "a"),
        ];
        let r = compute_agreement(&recs, &a, &b).unwrap();
        assert_eq!(r.excluded_prompts, vec!["p1"]);
        assert_eq!(r.n_prompts_scored, 1);
        assert_eq!(r.aggregate_rate, Some(1.0));
    }

    #[test]
    fn score_ties_are_listed_not_counted() {
        let a = table("a", &[("p1", 80.0), ("p2", 90.0)]);
        let b = table("b", &[("p1", 80.0), ("p2", 70.0)]);
        let recs = [rec("x", "p1", "a"), rec("x", "p2", "a"), rec("y", "p1", "b")];
        let r = compute_agreement(&recs, &a, &b).unwrap();
        assert_eq!(r.score_tie_prompts, vec!["p1"]);
        assert_eq!(r.annotators_without_scored_prompts, vec!["y"]);
        assert_eq!(r.per_annotator.len(), 1);
        assert_eq!(r.n_prompts_scored, 1);
    }

    #[test]
    fn rejects_unknown_ids() {
        let a = table("a", &[("p1", 80.0)]);
        let b = table("b", &[("p1", 70.0)]);
        let err = compute_agreement(&[rec("x", "p9", "a"), rec("x", "p1", "c")], &a, &b)
            .unwrap_err()
            .to_string();
        assert!(err.contains("p9") && err.contains("`c`"), "{err}");
        assert!(compute_agreement(&[], &a, &b).is_err());
        assert!(compute_agreement(&[rec("x", "p1", "a")], &a, &a).is_err());
    }
}
