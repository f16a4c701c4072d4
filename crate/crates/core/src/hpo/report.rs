use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::asha::HpoTrial;
use crate::error::Result;

pub const REPORT_COLUMNS: [&str; 9] = [
    "trial_id",
    "hidden_dim",
    "layers",
    "batch_size",
    "dropout",
    "lr",
    "final_loss",
    "epochs",
    "status",
];

/// One line of the trials table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub trial_id: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub status: String,
}

impl From<&HpoTrial> for ReportRow {
    fn from(t: &HpoTrial) -> Self {
        Self {
            trial_id: t.id,
            hidden_dim: t.config.hidden_dim,
            layers: t.config.layers,
            batch_size: t.config.batch_size,
            dropout: t.config.dropout,
            lr: t.config.lr,
            final_loss: t.final_loss,
            epochs: t.epochs(),
            status: t.status.as_str().to_string(),
        }
    }
}

pub fn write_trials_report<W: Write>(trials: &[HpoTrial], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for t in trials {
        w.serialize(ReportRow::from(t))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV row per trial under a header in [`REPORT_COLUMNS`] order.
pub fn export_trials_report(trials: &[HpoTrial], path: &Path) -> Result<()> {
    write_trials_report(trials, std::fs::File::create(path)?)
}

pub fn parse_trials_report<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

pub fn read_trials_report(path: &Path) -> Result<Vec<ReportRow>> {
    parse_trials_report(std::fs::File::open(path)?)
}
