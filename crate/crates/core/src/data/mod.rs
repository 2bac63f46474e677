//! Cohort records, featurization, normalization and synthetic data.

pub mod features;
pub mod matching;
pub mod normalize;
pub mod records;
pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{feature_names, feature_width, featurize, featurize_with, FeatureMatrix, ImputationStats};
pub use matching::match_negatives;
pub use normalize::{apply_normalizer, fit_normalizer, NormalizationStats};
pub use records::{read_jsonl, write_jsonl, Event, Label, PatientRecord};
pub use synth::{synth_generate, SynthCohort, SynthConfig};

use crate::error::{csv_err, Error, Result};

/// Everything test-time featurization needs from the training cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub symptoms: usize,
    pub imputation: ImputationStats,
    pub normalization: NormalizationStats,
}

impl FeatureStats {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Featurizes the training cohort, fits imputation and normalization on it and
/// returns the normalized matrix.
pub fn fit_features(records: &[PatientRecord], symptoms: usize, cohort: &str) -> Result<(FeatureMatrix, FeatureStats)> {
    let (mut m, imputation) = featurize(records, symptoms)?;
    let normalization = fit_normalizer(&m.values, cohort)?;
    m.values = apply_normalizer(&m.values, &normalization)?;
    let stats = FeatureStats {
        symptoms,
        imputation,
        normalization,
    };
    Ok((m, stats))
}

/// Featurizes and normalizes with stored training statistics.
pub fn transform_features(records: &[PatientRecord], stats: &FeatureStats) -> Result<FeatureMatrix> {
    let mut m = featurize_with(records, &stats.imputation)?;
    m.values = apply_normalizer(&m.values, &stats.normalization)?;
    Ok(m)
}

/// `(id, label)` rows kept apart from the records they describe.
pub fn write_labels_csv(path: &Path, labels: &[(String, u8)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["id", "label"]).map_err(|e| csv_err(path, e))?;
    for (id, y) in labels {
        w.write_record([id.as_str(), &y.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, u8)>> {
    read_two_column(path, "label", |s| s.parse::<u8>().ok().filter(|&y| y <= 1))
}

/// `(id, score)` rows.
pub fn write_scores_csv(path: &Path, ids: &[String], scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["id", "score"]).map_err(|e| csv_err(path, e))?;
    for (id, s) in ids.iter().zip(scores) {
        w.write_record([id.as_str(), &s.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    read_two_column(path, "score", |s| s.parse::<f64>().ok().filter(|v| !v.is_nan()))
}

fn read_two_column<T>(path: &Path, column: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<(String, T)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 2 {
            return Err(bad(format!("expected 2 fields (id, {column}), got {}", rec.len())));
        }
        let v = parse(&rec[1]).ok_or_else(|| bad(format!("invalid {column} {:?}", &rec[1])))?;
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}
