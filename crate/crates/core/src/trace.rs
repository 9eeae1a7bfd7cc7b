//! Training records and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub split: Split,
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// Mean feedback/exact delta cosine per hidden layer.
    pub alignment: Vec<Option<f64>>,
    pub optical_seconds: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub config_hash: String,
    pub alignment_columns: usize,
    pub records: Vec<TraceRecord>,
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(8).fold(String::with_capacity(16), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainingTrace {
    pub fn new(config_hash: String, alignment_columns: usize) -> Self {
        Self {
            config_hash,
            alignment_columns,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.step <= record.step));
        self.records.push(record);
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn last(&self, split: Split) -> Option<&TraceRecord> {
        self.split(split).last()
    }

    /// Header plus one row per record. With `wall_clock == false` the
    /// wall-seconds column is left empty so the file is reproducible.
    pub fn to_csv(&self, wall_clock: bool) -> String {
        let mut out = String::from("step,split,loss,accuracy");
        for k in 1..=self.alignment_columns {
            let _ = write!(out, ",align_{k}");
        }
        out.push_str(",optical_seconds,wall_seconds,config_hash\n");
        for r in &self.records {
            let _ = write!(out, "{},{},{},{}", r.step, r.split.as_str(), r.loss, fmt_opt(r.accuracy));
            for k in 0..self.alignment_columns {
                let _ = write!(out, ",{}", fmt_opt(r.alignment.get(k).copied().flatten()));
            }
            let wall = if wall_clock { r.wall_seconds.to_string() } else { String::new() };
            let _ = writeln!(out, ",{},{},{}", r.optical_seconds, wall, self.config_hash);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = TrainingTrace::new("abc".into(), 2);
        t.push(TraceRecord {
            step: 0,
            split: Split::Validation,
            loss: 2.5,
            accuracy: Some(0.1),
            alignment: vec![Some(0.25), None],
            optical_seconds: 0.0,
            wall_seconds: 1.5,
        });
        assert_eq!(
            t.to_csv(false),
            "step,split,loss,accuracy,align_1,align_2,optical_seconds,wall_seconds,config_hash\n0,validation,2.5,0.1,0.25,,0,,abc\n"
        );
        assert!(t.to_csv(true).contains(",0,1.5,abc"));
    }

    #[test]
    fn hash_is_stable_and_short() {
        let a = config_hash(&serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_hash(&serde_json::json!({"seed": 1})).unwrap());
        assert_ne!(a, config_hash(&serde_json::json!({"seed": 2})).unwrap());
    }
}
