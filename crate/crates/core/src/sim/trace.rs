//! Per-step episode records and their CSV form.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::model::CompleteState;
use crate::objectives::StepObjective;
use crate::scalar::Scalar;

pub const TRACE_COLUMNS: [&str; 13] = [
    "t",
    "o",
    "s1",
    "s2",
    "a",
    "a1",
    "a2",
    "J",
    "L",
    "KL",
    "total",
    "running_rate",
    "advantage",
];

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<S> {
    pub t: usize,
    pub state: CompleteState,
    pub objective: StepObjective<S>,
    /// Mean of `total` over steps `1..=t`.
    pub running_rate: S,
    /// `total − running_rate`.
    pub advantage: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace<S> {
    pub episode: usize,
    pub seed: u64,
    pub config_digest: String,
    pub records: Vec<StepRecord<S>>,
}

/// One CSV row with the columns of [`TRACE_COLUMNS`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub o: usize,
    pub s1: usize,
    pub s2: usize,
    pub a: usize,
    pub a1: usize,
    pub a2: usize,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "KL")]
    pub kl: f64,
    pub total: f64,
    pub running_rate: f64,
    pub advantage: f64,
}

impl<S: Scalar> Trace<S> {
    /// Global rate of the episode: the final running rate.
    pub fn rate(&self) -> Option<S> {
        self.records.last().map(|r| r.running_rate)
    }

    /// Mean reference surprisal `J` over the episode.
    pub fn mean_reference_surprisal(&self) -> Option<S> {
        if self.records.is_empty() {
            return None;
        }
        let j: Vec<S> = self.records.iter().map(|r| r.objective.j).collect();
        Some(crate::logspace::pairwise_sum(&j) / S::of_usize(j.len()))
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        self.records
            .iter()
            .map(|r| TraceRow {
                t: r.t,
                o: r.state.o,
                s1: r.state.s1,
                s2: r.state.s2,
                a: r.state.a,
                a1: r.state.a1,
                a2: r.state.a2,
                j: r.objective.j.as_f64(),
                l: r.objective.l.as_f64(),
                kl: r.objective.kl.as_f64(),
                total: r.objective.total.as_f64(),
                running_rate: r.running_rate.as_f64(),
                advantage: r.advantage.as_f64(),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Hex SHA-256 of a configuration's bytes.
pub fn config_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
