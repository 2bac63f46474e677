//! Patient records and their JSON-lines form.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days since 1970-01-01.
pub type Day = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

impl Label {
    /// `Some(1)` / `Some(0)` for labeled patients.
    pub fn as_binary(self) -> Option<u8> {
        match self {
            Label::Positive => Some(1),
            Label::Negative => Some(0),
            Label::Unlabeled => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub day: Day,
    pub symptom: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub age: u32,
    pub gender: u8,
    /// Sorted by day, then symptom.
    pub events: Vec<Event>,
    pub diagnosis_date: Option<Day>,
    pub label: Label,
}

impl PatientRecord {
    pub fn new(
        id: impl Into<String>,
        age: u32,
        gender: u8,
        mut events: Vec<Event>,
        diagnosis_date: Option<Day>,
        label: Label,
    ) -> Result<Self> {
        let id = id.into();
        if gender > 1 {
            return Err(Error::Data(format!("patient {id}: gender must be 0 or 1, got {gender}")));
        }
        if label == Label::Positive && diagnosis_date.is_none() {
            return Err(Error::Data(format!("patient {id}: positive label without a diagnosis date")));
        }
        events.sort_unstable();
        Ok(PatientRecord {
            id,
            age,
            gender,
            events,
            diagnosis_date,
            label,
        })
    }

    /// Events strictly before the diagnosis date, or all of them when there is none.
    pub fn usable_events(&self) -> &[Event] {
        match self.diagnosis_date {
            Some(dx) => {
                let cut = self.events.partition_point(|e| e.day < dx);
                &self.events[..cut]
            }
            None => &self.events,
        }
    }
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

pub fn parse_date(s: &str) -> Option<Day> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.signed_duration_since(epoch()).num_days())
}

pub fn format_date(day: Day) -> String {
    (epoch() + chrono::Duration::days(day)).format("%Y-%m-%d").to_string()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    symptom: usize,
    date: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    age: u32,
    gender: u8,
    events: Vec<RawEvent>,
    #[serde(default)]
    diagnosis_date: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

impl RawRecord {
    fn into_record(self) -> std::result::Result<PatientRecord, String> {
        let date = |s: &str| parse_date(s).ok_or_else(|| format!("bad date {s:?}, expected YYYY-MM-DD"));
        let events = self
            .events
            .iter()
            .map(|e| Ok(Event { day: date(&e.date)?, symptom: e.symptom }))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let diagnosis_date = self.diagnosis_date.as_deref().map(date).transpose()?;
        let label = match self.label.as_deref() {
            Some("pos") => Label::Positive,
            Some("neg") => Label::Negative,
            None => Label::Unlabeled,
            Some(other) => return Err(format!("unknown label {other:?}")),
        };
        PatientRecord::new(self.id, self.age, self.gender, events, diagnosis_date, label).map_err(|e| e.to_string())
    }
}

impl From<&PatientRecord> for RawRecord {
    fn from(r: &PatientRecord) -> Self {
        RawRecord {
            id: r.id.clone(),
            age: r.age,
            gender: r.gender,
            events: r
                .events
                .iter()
                .map(|e| RawEvent {
                    symptom: e.symptom,
                    date: format_date(e.day),
                })
                .collect(),
            diagnosis_date: r.diagnosis_date.map(format_date),
            label: match r.label {
                Label::Positive => Some("pos".into()),
                Label::Negative => Some("neg".into()),
                Label::Unlabeled => None,
            },
        }
    }
}

pub fn record_to_json(r: &PatientRecord) -> String {
    serde_json::to_string(&RawRecord::from(r)).expect("records serialize")
}

/// Parses one JSON line; `line` is 1-based and only used in errors.
pub fn record_from_json(text: &str, path: &Path, line: usize) -> Result<PatientRecord> {
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    raw.into_record().map_err(parse_err)
}

/// Reads a JSON-lines file, skipping blank lines.
pub fn read_jsonl(path: &Path) -> Result<Vec<PatientRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(record_from_json(&line, path, i + 1)?);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", record_to_json(r)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
