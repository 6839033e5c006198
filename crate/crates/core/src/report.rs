//! Machine-readable evaluation reports.
//!
//! CSV columns, in exact order: method, sequence, frame, kind, n_valid,
//! avg, sd, a50, a75, a99, a100, r1, r2, r3, r4, acc. The r-columns bind to
//! the kind-specific threshold sets ({0.5, 0.75, 1, 2} for EE,
//! {2, 5, 7.5, 10} for AE); the acc column is filled for EE rows only.
//! The JSON report mirrors the same tree and embeds the configuration used,
//! so every run can be reproduced from its own report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ErrorStats;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Statistics of one evaluated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub ee: ErrorStats,
    pub ae: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence: String,
    pub frames: Vec<FrameReport>,
    /// Accumulated Avg.EE per frame index.
    pub acc_ee: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub sequences: Vec<SequenceReport>,
}

/// Full evaluation report across methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Angle-error formula in use; recorded because AE has no single
    /// universal definition.
    pub ae_convention: String,
    /// Configuration the producing run used, for reproducibility.
    pub config: serde_json::Value,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            ae_convention: "augmented (u,v,1) vectors, degrees".to_string(),
            config,
            methods: Vec::new(),
        }
    }

    /// Mean Avg.EE of a method over all frames of all sequences.
    pub fn mean_avg_ee(method: &MethodReport) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for seq in &method.sequences {
            for frame in &seq.frames {
                sum += frame.ee.avg;
                count += 1;
            }
        }
        if count == 0 {
            f64::INFINITY
        } else {
            sum / count as f64
        }
    }

    /// Methods ordered by mean Avg.EE ascending (rank 1 first).
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut ranks: Vec<(String, f64)> = self
            .methods
            .iter()
            .map(|m| (m.method.clone(), Self::mean_avg_ee(m)))
            .collect();
        ranks.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        ranks
    }

    /// Plain-text ranking table.
    pub fn ranking_table(&self) -> String {
        let mut out = String::from("rank  method                    avg.ee\n");
        for (i, (name, ee)) in self.ranking().iter().enumerate() {
            out.push_str(&format!("{:>4}  {:<24}  {:.4}\n", i + 1, name, ee));
        }
        out
    }
}

/// CSV header, the exact external column contract.
pub const CSV_HEADER: &str =
    "method,sequence,frame,kind,n_valid,avg,sd,a50,a75,a99,a100,r1,r2,r3,r4,acc";

pub fn write_csv(report: &EvalReport, path: &Path) -> Result<(), ReportError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for method in &report.methods {
        for seq in &method.sequences {
            for (idx, frame) in seq.frames.iter().enumerate() {
                for (stats, kind) in [(&frame.ee, "ee"), (&frame.ae, "ae")] {
                    let acc = if kind == "ee" {
                        format!("{}", seq.acc_ee[idx])
                    } else {
                        String::new()
                    };
                    let rx: Vec<String> =
                        stats.rx.iter().map(|r| format!("{}", r.fraction)).collect();
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        method.method,
                        seq.sequence,
                        frame.frame,
                        kind,
                        stats.n_valid,
                        stats.avg,
                        stats.sd,
                        stats.a50,
                        stats.a75,
                        stats.a99,
                        stats.a100,
                        rx.join(","),
                        acc,
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(report: &EvalReport, path: &Path) -> Result<(), ReportError> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, report)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<EvalReport, ReportError> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
