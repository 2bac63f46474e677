//! Per-symptom time-difference, count and frequency columns.
//!
//! For `S` symptoms the matrix has `3·S + 2` columns: for each symptom
//! `time_diff`, `count`, `freq`, then `age` and `gender`. Only events before a
//! patient's diagnosis date are used.
//!
//! `freq = count / (span + 1)` where `span` is the number of days between the
//! patient's first and last usable event of any symptom. A symptom the patient
//! never had takes count and frequency 0 and the largest `time_diff` seen for
//! that symptom in the fitting cohort.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::PatientRecord;
use crate::error::{csv_err, Error, Result};
use crate::tensor::Tensor;

pub const COLUMNS_PER_SYMPTOM: usize = 3;

pub fn feature_width(symptoms: usize) -> usize {
    COLUMNS_PER_SYMPTOM * symptoms + 2
}

pub fn feature_names(symptoms: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(feature_width(symptoms));
    for j in 0..symptoms {
        names.push(format!("sym{j}_time_diff"));
        names.push(format!("sym{j}_count"));
        names.push(format!("sym{j}_freq"));
    }
    names.push("age".into());
    names.push("gender".into());
    names
}

/// Largest observed `time_diff` per symptom, used to fill absent symptoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationStats {
    pub time_diff_max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    pub values: Tensor,
}

struct RawRow {
    /// `None` where the symptom is absent.
    time_diff: Vec<Option<f64>>,
    count: Vec<f64>,
    freq: Vec<f64>,
    age: f64,
    gender: f64,
}

fn raw_row(r: &PatientRecord, symptoms: usize) -> Result<RawRow> {
    let events = r.usable_events();
    let mut first = vec![i64::MAX; symptoms];
    let mut last = vec![i64::MIN; symptoms];
    let mut count = vec![0.0; symptoms];
    for e in events {
        if e.symptom >= symptoms {
            return Err(Error::Data(format!(
                "patient {}: symptom id {} is outside [0, {symptoms})",
                r.id, e.symptom
            )));
        }
        first[e.symptom] = first[e.symptom].min(e.day);
        last[e.symptom] = last[e.symptom].max(e.day);
        count[e.symptom] += 1.0;
    }
    // events are sorted, so the span is last minus first
    let span = match (events.first(), events.last()) {
        (Some(a), Some(b)) => (b.day - a.day) as f64,
        _ => 0.0,
    };
    let time_diff = (0..symptoms)
        .map(|j| (count[j] > 0.0).then(|| (last[j] - first[j]) as f64))
        .collect();
    let freq = count.iter().map(|&c| c / (span + 1.0)).collect();
    Ok(RawRow {
        time_diff,
        count,
        freq,
        age: r.age as f64,
        gender: r.gender as f64,
    })
}

fn raw_rows(records: &[PatientRecord], symptoms: usize) -> Result<Vec<RawRow>> {
    records.iter().map(|r| raw_row(r, symptoms)).collect()
}

fn fit_imputation(rows: &[RawRow], symptoms: usize) -> ImputationStats {
    let time_diff_max = (0..symptoms)
        .map(|j| {
            rows.iter()
                .filter_map(|r| r.time_diff[j])
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
                .unwrap_or(0.0)
        })
        .collect();
    ImputationStats { time_diff_max }
}

fn assemble(records: &[PatientRecord], rows: Vec<RawRow>, imp: &ImputationStats) -> Result<FeatureMatrix> {
    let symptoms = imp.time_diff_max.len();
    let width = feature_width(symptoms);
    let mut values = Vec::with_capacity(rows.len() * width);
    for row in &rows {
        for j in 0..symptoms {
            values.push(row.time_diff[j].unwrap_or(imp.time_diff_max[j]));
            values.push(row.count[j]);
            values.push(row.freq[j]);
        }
        values.push(row.age);
        values.push(row.gender);
    }
    Ok(FeatureMatrix {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        names: feature_names(symptoms),
        values: Tensor::matrix(rows.len(), width, values)?,
    })
}

/// Featurizes a training cohort and returns the imputation maxima fitted on it.
pub fn featurize(records: &[PatientRecord], symptoms: usize) -> Result<(FeatureMatrix, ImputationStats)> {
    let rows = raw_rows(records, symptoms)?;
    let imp = fit_imputation(&rows, symptoms);
    let m = assemble(records, rows, &imp)?;
    Ok((m, imp))
}

/// Featurizes with imputation maxima from an earlier fit.
pub fn featurize_with(records: &[PatientRecord], imp: &ImputationStats) -> Result<FeatureMatrix> {
    let rows = raw_rows(records, imp.time_diff_max.len())?;
    assemble(records, rows, imp)
}

impl FeatureMatrix {
    pub fn select(&self, rows: &[usize]) -> Result<FeatureMatrix> {
        Ok(FeatureMatrix {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            names: self.names.clone(),
            values: self.values.select_rows(rows)?,
        })
    }

    /// CSV with an `id` column followed by one column per feature.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.get(0) != Some("id") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "first column must be `id`".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.to_string(),
            })?;
            ids.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                values.push(field.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("not a number: {field:?}"),
                })?);
            }
        }
        let values = Tensor::matrix(ids.len(), names.len(), values)?;
        Ok(FeatureMatrix { ids, names, values })
    }
}
