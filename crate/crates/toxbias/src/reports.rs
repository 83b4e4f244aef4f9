//! JSON artifacts written by the CLI and their flat CSV companions.
//!
//! Every artifact carries the tool version, the SHA-256 of each input file and
//! a `metadata` block. Only `metadata` holds values that vary between
//! otherwise identical invocations (timestamps, wall-clock time).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use toxbias_core::metrics::{BiasReport, Score};
use toxbias_core::templates::ProbeResult;

use crate::fsutil::{read_json, write_atomic, write_json};
use crate::{Error, Result};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generated_unix_secs: u64,
    pub wall_clock_secs: Option<f64>,
}

impl Metadata {
    pub fn now(wall_clock_secs: Option<f64>) -> Self {
        let generated_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Metadata { generated_unix_secs, wall_clock_secs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub format_version: u32,
    /// `run`, `bias_report`, `probe`, `grid_search` or `replication`.
    pub kind: String,
    pub tool_version: String,
    /// Input name → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub content: T,
    pub metadata: Metadata,
}

impl<T: Serialize + serde::de::DeserializeOwned> Artifact<T> {
    pub fn new(kind: &str, inputs: BTreeMap<String, String>, content: T, metadata: Metadata) -> Self {
        Artifact {
            format_version: ARTIFACT_VERSION,
            kind: kind.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            content,
            metadata,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads an artifact and checks its version and kind.
    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let a: Artifact<T> = read_json(path)?;
        if a.format_version != ARTIFACT_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: artifact format version {} is not supported",
                path.display(),
                a.format_version
            )));
        }
        if a.kind != kind {
            return Err(Error::format(path, format!("expected a {kind} file, found {}", a.kind)));
        }
        Ok(a)
    }
}

fn cell(s: Score) -> String {
    s.value().map_or(String::new(), |v| v.to_string())
}

fn csv_bytes(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::format(path, e.to_string()))
}

/// Columns: `subgroup, size, subgroup_auc, subgroup_n_pos, subgroup_n_neg,
/// bpsn_auc, bpsn_n_pos, bpsn_n_neg`. Undefined AUCs are empty cells.
pub fn write_report_csv(path: &Path, report: &BiasReport) -> Result<()> {
    let rows = report
        .subgroups
        .iter()
        .map(|s| {
            vec![
                s.name.clone(),
                s.size.to_string(),
                cell(s.subgroup_auc.auc),
                s.subgroup_auc.n_pos.to_string(),
                s.subgroup_auc.n_neg.to_string(),
                cell(s.bpsn_auc.auc),
                s.bpsn_auc.n_pos.to_string(),
                s.bpsn_auc.n_neg.to_string(),
            ]
        })
        .collect();
    let header = [
        "subgroup", "size", "subgroup_auc", "subgroup_n_pos", "subgroup_n_neg", "bpsn_auc", "bpsn_n_pos", "bpsn_n_neg",
    ];
    write_atomic(path, &csv_bytes(path, &header, rows)?)
}

/// Columns: `identity, polarity, template, text, score, misclassified`, one
/// row per scored template.
pub fn write_probe_csv(path: &Path, results: &[ProbeResult], threshold: f64) -> Result<()> {
    let rows = results
        .iter()
        .flat_map(|r| {
            r.scores.iter().map(|s| {
                vec![
                    r.identity.clone(),
                    s.polarity.as_str().to_string(),
                    s.template.clone(),
                    s.text.clone(),
                    s.score.to_string(),
                    s.misclassified(threshold).to_string(),
                ]
            })
        })
        .collect();
    let header = ["identity", "polarity", "template", "text", "score", "misclassified"];
    write_atomic(path, &csv_bytes(path, &header, rows)?)
}

/// `report.json` → `report.csv`.
pub fn csv_sibling(path: &Path) -> std::path::PathBuf {
    path.with_extension("csv")
}
