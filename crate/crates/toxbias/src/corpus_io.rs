//! Civil Comments style corpora in CSV (with header) or JSON Lines.
//!
//! Recognized columns are `id` (optional), `comment_text`, `target`, the
//! schema's identity and subtype columns, and the remaining Kaggle metadata
//! and identity columns, which are skipped. Any other column is rejected, so
//! a misspelled identity does not silently turn into "not annotated".
//!
//! An empty identity cell (or JSON `null`) means "not annotated". A row whose
//! identity cells are all empty, or a file without identity columns, yields
//! `identity_scores: None`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Value};
use toxbias_core::corpus::{LabelSchema, RawRecord};

use crate::fsutil::write_atomic;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl`/`.json` → JSONL, anything else → CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown corpus format {other:?} (expected csv or jsonl)")),
        }
    }
}

/// Kaggle columns that carry no label used here.
pub const KAGGLE_IGNORED: [&str; 28] = [
    "created_date", "publication_id", "parent_id", "article_id", "rating", "funny", "wow", "sad", "likes",
    "disagree", "sexual_explicit", "identity_annotator_count", "toxicity_annotator_count", "asian", "atheist",
    "bisexual", "buddhist", "heterosexual", "hindu", "intellectual_or_learning_disability", "latino",
    "other_disability", "other_gender", "other_race_or_ethnicity", "other_religion", "other_sexual_orientation",
    "physical_disability", "transgender",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Column {
    Id,
    Text,
    Target,
    Identity,
    Subtype,
    Ignored,
}

fn classify(name: &str, schema: &LabelSchema) -> Option<Column> {
    Some(match name {
        "id" => Column::Id,
        "comment_text" => Column::Text,
        "target" => Column::Target,
        n if schema.identity_index(n).is_some() => Column::Identity,
        n if schema.subtype_index(n).is_some() => Column::Subtype,
        n if KAGGLE_IGNORED.contains(&n) => Column::Ignored,
        _ => return None,
    })
}

/// Cell values of one record, before validation. `None` is an empty cell.
struct RowBuilder<'a> {
    path: &'a Path,
    row: usize,
    id: Option<String>,
    text: Option<String>,
    target: Option<f64>,
    identities: Vec<(String, Option<f64>)>,
    subtypes: BTreeMap<String, f64>,
}

impl<'a> RowBuilder<'a> {
    fn new(path: &'a Path, row: usize) -> Self {
        RowBuilder { path, row, id: None, text: None, target: None, identities: Vec::new(), subtypes: BTreeMap::new() }
    }

    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Row { path: self.path.into(), row: self.row, field: field.into(), message: message.into() }
    }

    fn unit(&self, field: &str, v: f64) -> Result<f64> {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(self.err(field, format!("{v} is outside [0, 1]")))
        }
    }

    fn parse_unit(&self, field: &str, cell: &str) -> Result<Option<f64>> {
        let cell = cell.trim();
        if cell.is_empty() {
            return Ok(None);
        }
        let v: f64 = cell.parse().map_err(|_| self.err(field, format!("{cell:?} is not a number")))?;
        self.unit(field, v).map(Some)
    }

    fn set(&mut self, col: Column, name: &str, value: Option<f64>) -> Result<()> {
        match col {
            Column::Target => self.target = Some(value.ok_or_else(|| self.err(name, "missing value"))?),
            Column::Identity => self.identities.push((name.into(), value)),
            Column::Subtype => {
                if let Some(v) = value {
                    self.subtypes.insert(name.into(), v);
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn finish(self) -> Result<RawRecord> {
        let comment_text = self.text.clone().ok_or_else(|| self.err("comment_text", "missing value"))?;
        let target = self.target.ok_or_else(|| self.err("target", "missing value"))?;
        let annotated = self.identities.iter().filter(|(_, v)| v.is_some()).count();
        let identity_scores = if annotated == 0 {
            None
        } else if let Some((name, _)) = self.identities.iter().find(|(_, v)| v.is_none()) {
            return Err(self.err(name, "empty identity score in a row that annotates other identities"));
        } else {
            Some(self.identities.iter().map(|(n, v)| (n.clone(), v.unwrap_or_default())).collect())
        };
        Ok(RawRecord {
            id: self.id.unwrap_or_else(|| self.row.to_string()),
            comment_text,
            target,
            identity_scores,
            subtype_scores: self.subtypes,
        })
    }
}

fn check_columns<'h>(path: &Path, names: impl Iterator<Item = &'h str>, schema: &LabelSchema) -> Result<Vec<Column>> {
    let mut cols = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for name in names {
        let col = classify(name, schema)
            .ok_or_else(|| Error::format(path, format!("unknown column {name:?} (not a configured identity or subtype)")))?;
        if !seen.insert(name.to_string()) {
            return Err(Error::format(path, format!("duplicate column {name:?}")));
        }
        cols.push(col);
    }
    Ok(cols)
}

pub fn load_corpus(path: &Path, format: Format, schema: &LabelSchema) -> Result<Vec<RawRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    match format {
        Format::Csv => read_csv(path, file, schema),
        Format::Jsonl => read_jsonl(path, BufReader::new(file), schema),
    }
}

pub fn read_csv<R: std::io::Read>(path: &Path, reader: R, schema: &LabelSchema) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let cols = check_columns(path, headers.iter(), schema)?;
    for required in ["comment_text", "target"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::format(path, format!("missing required column {required:?}")));
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row { path: path.into(), row, field: String::new(), message: e.to_string() })?;
        let mut b = RowBuilder::new(path, row);
        for ((cell, name), &col) in rec.iter().zip(headers.iter()).zip(&cols) {
            match col {
                Column::Id => b.id = Some(cell.to_string()),
                Column::Text => b.text = Some(cell.to_string()),
                Column::Ignored => {}
                _ => {
                    let v = b.parse_unit(name, cell)?;
                    b.set(col, name, v)?;
                }
            }
        }
        out.push(b.finish()?);
    }
    Ok(out)
}

pub fn read_jsonl<R: BufRead>(path: &Path, reader: R, schema: &LabelSchema) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> = serde_json::from_str(&line)
            .map_err(|e| Error::Row { path: path.into(), row, field: String::new(), message: e.to_string() })?;
        let cols = check_columns(path, obj.keys().map(String::as_str), schema)?;
        let mut b = RowBuilder::new(path, row);
        // Identity entries are visited in schema order so partial annotations
        // are reported against a stable field.
        let mut identities: Vec<(&String, &Value)> = Vec::new();
        for ((name, value), col) in obj.iter().zip(cols) {
            match col {
                Column::Id => {
                    b.id = Some(match value {
                        Value::String(s) => s.clone(),
                        Value::Number(n) => n.to_string(),
                        _ => return Err(b.err(name, "expected a string or integer id")),
                    })
                }
                Column::Text => match value {
                    Value::String(s) => b.text = Some(s.clone()),
                    _ => return Err(b.err(name, "expected a string")),
                },
                Column::Ignored => {}
                Column::Identity => identities.push((name, value)),
                _ => {
                    let v = json_unit(&b, name, value)?;
                    b.set(col, name, v)?;
                }
            }
        }
        identities.sort_by_key(|(n, _)| schema.identity_index(n));
        for (name, value) in identities {
            let v = json_unit(&b, name, value)?;
            b.set(Column::Identity, name, v)?;
        }
        out.push(b.finish()?);
    }
    Ok(out)
}

fn json_unit(b: &RowBuilder<'_>, field: &str, value: &Value) -> Result<Option<f64>> {
    match value {
        Value::Null => Ok(None),
        Value::Number(n) => {
            let v = n.as_f64().ok_or_else(|| b.err(field, "number out of range"))?;
            b.unit(field, v).map(Some)
        }
        Value::String(s) => b.parse_unit(field, s),
        _ => Err(b.err(field, "expected a number")),
    }
}

/// Writes records with every schema column; unannotated rows get empty
/// identity cells (`null` in JSONL).
pub fn write_corpus(path: &Path, records: &[RawRecord], schema: &LabelSchema, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Csv => csv_bytes(path, records, schema)?,
        Format::Jsonl => {
            let mut out = Vec::new();
            for r in records {
                let mut obj = Map::new();
                obj.insert("id".into(), r.id.clone().into());
                obj.insert("comment_text".into(), r.comment_text.clone().into());
                obj.insert("target".into(), r.target.into());
                for name in &schema.identities {
                    let v = r.identity_scores.as_ref().map(|m| m.get(name).copied().unwrap_or(0.0));
                    obj.insert(name.clone(), v.map_or(Value::Null, Value::from));
                }
                for name in &schema.subtypes {
                    obj.insert(name.clone(), r.subtype_scores.get(name).map_or(Value::Null, |&v| v.into()));
                }
                serde_json::to_writer(&mut out, &obj).map_err(|e| Error::format(path, e.to_string()))?;
                out.push(b'\n');
            }
            out
        }
    };
    write_atomic(path, &bytes)
}

fn csv_bytes(path: &Path, records: &[RawRecord], schema: &LabelSchema) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::format(PathBuf::from(path), e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id", "comment_text", "target"];
    header.extend(schema.identities.iter().map(String::as_str));
    header.extend(schema.subtypes.iter().map(String::as_str));
    w.write_record(&header).map_err(err)?;
    for r in records {
        let mut row = vec![r.id.clone(), r.comment_text.clone(), r.target.to_string()];
        for name in &schema.identities {
            row.push(r.identity_scores.as_ref().map_or(String::new(), |m| m.get(name).copied().unwrap_or(0.0).to_string()));
        }
        for name in &schema.subtypes {
            row.push(r.subtype_scores.get(name).map_or(String::new(), f64::to_string));
        }
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::format(PathBuf::from(path), e.to_string()))
}
