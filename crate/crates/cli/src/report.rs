//! Per-member scores and the per-band summary table.

use std::fs;
use std::path::Path;

use misr_core::Band;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Network,
    Bicubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberScore {
    pub member: String,
    pub band: Band,
    pub cpsnr_bicubic: f64,
    pub cpsnr_network: f64,
    /// The network wins only with a strictly higher score.
    pub winner: Winner,
}

impl MemberScore {
    pub fn new(member: String, band: Band, cpsnr_bicubic: f64, cpsnr_network: f64) -> Self {
        let winner = if cpsnr_network > cpsnr_bicubic {
            Winner::Network
        } else {
            Winner::Bicubic
        };
        Self {
            member,
            band,
            cpsnr_bicubic,
            cpsnr_network,
            winner,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    /// `RED`, `NIR` or `ALL`.
    pub band: String,
    pub avg_cpsnr_bicubic: f64,
    pub avg_cpsnr_network: f64,
    pub n_images: usize,
    pub n_network_wins: usize,
}

impl BandSummary {
    /// Means are plain left-to-right sums over `rows` divided by the count.
    pub fn of<'a>(band: &str, rows: impl IntoIterator<Item = &'a MemberScore>) -> Self {
        let mut bicubic = 0.0;
        let mut network = 0.0;
        let mut n = 0usize;
        let mut wins = 0usize;
        for r in rows {
            bicubic += r.cpsnr_bicubic;
            network += r.cpsnr_network;
            n += 1;
            wins += usize::from(r.winner == Winner::Network);
        }
        let mean = |s: f64| if n == 0 { f64::NAN } else { s / n as f64 };
        Self {
            band: band.to_string(),
            avg_cpsnr_bicubic: mean(bicubic),
            avg_cpsnr_network: mean(network),
            n_images: n,
            n_network_wins: wins,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<MemberScore>,
    /// One line per band present, then `ALL`.
    pub summary: Vec<BandSummary>,
}

impl ScoreReport {
    pub fn from_rows(rows: Vec<MemberScore>) -> Self {
        let summary = summarize(&rows);
        Self { rows, summary }
    }

    pub fn overall(&self) -> &BandSummary {
        self.summary.last().expect("ALL line always present")
    }

    pub fn write_json(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::data)?;
        text.push('\n');
        fs::write(path, text).map_err(io_at(path))
    }

    pub fn read_json(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        serde_json::from_str(&text).map_err(CliError::data)
    }

    pub fn write_rows_csv(&self, path: &Path) -> Result<(), CliError> {
        write_csv(path, &self.rows)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<(), CliError> {
        write_csv(path, &self.summary)
    }
}

pub fn summarize(rows: &[MemberScore]) -> Vec<BandSummary> {
    let mut out = Vec::new();
    for band in Band::ALL {
        if rows.iter().any(|r| r.band == band) {
            out.push(BandSummary::of(band.as_str(), rows.iter().filter(|r| r.band == band)));
        }
    }
    out.push(BandSummary::of("ALL", rows));
    out
}

pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::data)?;
    for r in records {
        w.serialize(r).map_err(CliError::data)?;
    }
    w.flush().map_err(io_at(path))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(CliError::data)?;
    r.deserialize().map(|rec| rec.map_err(CliError::data)).collect()
}
