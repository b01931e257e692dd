use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::metric::ScsValue;

pub const SCORES_HEADER: [&str; 4] = ["prompt_id", "score", "n_images", "n_pairs"];

#[derive(Debug, Error)]
pub enum ScoresError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scores CSV at line {line}: {reason}")]
    Format { line: u64, reason: String },
    #[error("invalid score table: {0}")]
    Invalid(String),
}

/// Per-prompt scores of one model, in prompt order.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreTable {
    model_id: String,
    rows: Vec<(String, ScsValue)>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Pairs whose cosine was clamped, summed over prompts. `None` when
    /// unknown, e.g. after loading from CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    clamped_pairs: Option<usize>,
}

impl PartialEq for ScoreTable {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id
            && self.rows == other.rows
            && self.clamped_pairs == other.clamped_pairs
    }
}

impl ScoreTable {
    pub fn new(
        model_id: impl Into<String>,
        rows: Vec<(String, ScsValue)>,
    ) -> Result<Self, ScoresError> {
        if rows.is_empty() {
            return Err(ScoresError::Invalid("no entries".into()));
        }
        let mut index = HashMap::with_capacity(rows.len());
        for (i, (pid, _)) in rows.iter().enumerate() {
            if index.insert(pid.clone(), i).is_some() {
                return Err(ScoresError::Invalid(format!("duplicate prompt `{pid}`")));
            }
        }
        Ok(Self {
            model_id: model_id.into(),
            rows,
            index,
            clamped_pairs: None,
        })
    }

    pub fn with_clamped_pairs(mut self, n: usize) -> Self {
        self.clamped_pairs = Some(n);
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn clamped_pairs(&self) -> Option<usize> {
        self.clamped_pairs
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, prompt_id: &str) -> Option<&ScsValue> {
        self.index.get(prompt_id).map(|&i| &self.rows[i].1)
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(p, _)| p.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ScsValue)> {
        self.rows.iter().map(|(p, v)| (p.as_str(), v))
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|(_, v)| v.score()).collect()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SCORES_HEADER).expect("write to Vec");
        for (pid, v) in &self.rows {
            // `{}` on f64 is the shortest representation that round-trips
            w.write_record([
                pid.as_str(),
                &v.score().to_string(),
                &v.n_images().to_string(),
                &v.n_pairs().to_string(),
            ])
            .expect("write to Vec");
        }
        w.into_inner().expect("flush to Vec")
    }

    pub fn from_csv(model_id: impl Into<String>, data: &[u8]) -> Result<Self, ScoresError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(data);
        let fmt = |line: u64, reason: String| ScoresError::Format { line, reason };
        let mut records = r.records();
        match records.next() {
            Some(Ok(h)) if h.iter().eq(SCORES_HEADER) => {}
            Some(Ok(h)) => {
                return Err(fmt(
                    1,
                    format!("expected header {:?}, found {:?}", SCORES_HEADER.join(","), h.iter().collect::<Vec<_>>().join(",")),
                ))
            }
            Some(Err(e)) => return Err(fmt(1, e.to_string())),
            None => return Err(fmt(1, "empty file".into())),
        }
        let mut rows = Vec::new();
        let mut seen = HashMap::new();
        for rec in records {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                fmt(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 4 {
                return Err(fmt(line, format!("expected 4 fields, found {}", rec.len())));
            }
            let pid = rec[0].to_string();
            let score: f64 = rec[1]
                .parse()
                .map_err(|e| fmt(line, format!("score `{}`: {e}", &rec[1])))?;
            let n_images: usize = rec[2]
                .parse()
                .map_err(|e| fmt(line, format!("n_images `{}`: {e}", &rec[2])))?;
            let n_pairs: usize = rec[3]
                .parse()
                .map_err(|e| fmt(line, format!("n_pairs `{}`: {e}", &rec[3])))?;
            let value =
                ScsValue::new(score, n_images, n_pairs).map_err(|e| fmt(line, e.to_string()))?;
            if let Some(prev) = seen.insert(pid.clone(), line) {
                return Err(fmt(line, format!("prompt `{pid}` already on line {prev}")));
            }
            rows.push((pid, value));
        }
        if rows.is_empty() {
            return Err(fmt(2, "no score rows".into()));
        }
        Self::new(model_id, rows)
    }
}

pub fn persist_scores(table: &ScoreTable, file: &Path) -> Result<(), ScoresError> {
    let io = |source| ScoresError::Io {
        path: file.display().to_string(),
        source,
    };
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = std::fs::File::create(file).map_err(io)?;
    f.write_all(&table.to_csv()).map_err(io)?;
    f.sync_all().map_err(io)
}

/// Loads a table whose model id is the file stem (`<model_id>.csv`).
pub fn load_scores(file: &Path) -> Result<ScoreTable, ScoresError> {
    let model_id = file
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| ScoresError::Invalid(format!("cannot derive model id from {}", file.display())))?
        .to_string();
    load_scores_as(file, model_id)
}

pub fn load_scores_as(file: &Path, model_id: impl Into<String>) -> Result<ScoreTable, ScoresError> {
    let data = std::fs::read(file).map_err(|source| ScoresError::Io {
        path: file.display().to_string(),
        source,
    })?;
    ScoreTable::from_csv(model_id, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(score: f64) -> ScsValue {
        ScsValue::new(score, 20, 190).unwrap()
    }

    #[test]
    fn csv_layout() {
        let t = ScoreTable::new("m", vec![("p2".into(), v(88.9)), ("p1".into(), v(100.0))]).unwrap();
        let text = String::from_utf8(t.to_csv()).unwrap();
        assert_eq!(text, "prompt_id,score,n_images,n_pairs\np2,88.9,20,190\np1,100,20,190\n");
        assert_eq!(ScoreTable::from_csv("m", text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let line = |s: &str| match ScoreTable::from_csv("m", s.as_bytes()) {
            Err(ScoresError::Format { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line("prompt,score\n"), 1);
        assert_eq!(line("prompt_id,score,n_images,n_pairs\np1,50,20,190\np2,abc,20,190\n"), 3);
        assert_eq!(line("prompt_id,score,n_images,n_pairs\np1,150,20,190\n"), 2);
        assert_eq!(line("prompt_id,score,n_images,n_pairs\np1,50,20,19\n"), 2);
        assert_eq!(line("prompt_id,score,n_images,n_pairs\np1,50,20,190\np1,51,20,190\n"), 3);
        assert_eq!(line("prompt_id,score,n_images,n_pairs\n"), 2);
        assert_eq!(line(""), 1);
    }

    #[test]
    fn duplicate_prompt_rejected() {
        assert!(ScoreTable::new("m", vec![("a".into(), v(1.0)), ("a".into(), v(2.0))]).is_err());
        assert!(ScoreTable::new("m", vec![]).is_err());
    }

    #[test]
    fn file_round_trip_uses_stem_as_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/sdxl.csv");
        let t = ScoreTable::new("sdxl", vec![("p".into(), v(1.0 / 3.0))]).unwrap();
        persist_scores(&t, &path).unwrap();
        assert_eq!(load_scores(&path).unwrap(), t);
    }

    proptest! {
        #[test]
        fn persist_load_round_trip(
            rows in prop::collection::vec((0.0f64..=100.0, 2usize..200), 1..40)
        ) {
            let rows: Vec<(String, ScsValue)> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (s, n))| (format!("p{i}"), ScsValue::new(s, n, n * (n - 1) / 2).unwrap()))
                .rev()
                .collect();
            let t = ScoreTable::new("model", rows).unwrap();
            let back = ScoreTable::from_csv("model", &t.to_csv()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
