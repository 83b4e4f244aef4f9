//! Predictions files: `id, score, label, <identity columns>` as CSV or JSONL.
//! Any model's scores, including external ones, can be audited through this
//! format. `label` and identity values are binarized at 0.5; an empty identity
//! cell counts as not mentioning that identity.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::{Map, Value};
use toxbias_core::corpus::POSITIVE_THRESHOLD;
use toxbias_core::metrics::ScoredExample;

use crate::corpus_io::Format;
use crate::fsutil::write_atomic;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub score: f64,
    pub label: f64,
    /// Aligned with the file's identity columns.
    pub identities: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub identity_columns: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

impl Predictions {
    pub fn scored_examples(&self) -> Vec<ScoredExample> {
        self.rows
            .iter()
            .map(|r| {
                let groups = self
                    .identity_columns
                    .iter()
                    .zip(&r.identities)
                    .filter(|(_, v)| v.is_some_and(|v| v >= POSITIVE_THRESHOLD))
                    .map(|(n, _)| n.as_str());
                ScoredExample::new(r.score, r.label >= POSITIVE_THRESHOLD, groups)
            })
            .collect()
    }

    pub fn load(path: &Path, format: Format) -> Result<Self> {
        let file = File::open(path).map_err(Error::io(path))?;
        match format {
            Format::Csv => read_csv(path, file),
            Format::Jsonl => read_jsonl(path, BufReader::new(file)),
        }
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        let fmt_err = |e: String| Error::format(path, e);
        let bytes = match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let mut header = vec!["id", "score", "label"];
                header.extend(self.identity_columns.iter().map(String::as_str));
                w.write_record(&header).map_err(|e| fmt_err(e.to_string()))?;
                for r in &self.rows {
                    let mut row = vec![r.id.clone(), r.score.to_string(), r.label.to_string()];
                    row.extend(r.identities.iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
                    w.write_record(&row).map_err(|e| fmt_err(e.to_string()))?;
                }
                w.into_inner().map_err(|e| fmt_err(e.to_string()))?
            }
            Format::Jsonl => {
                let mut out = Vec::new();
                for r in &self.rows {
                    let mut obj = Map::new();
                    obj.insert("id".into(), r.id.clone().into());
                    obj.insert("score".into(), r.score.into());
                    obj.insert("label".into(), r.label.into());
                    for (n, v) in self.identity_columns.iter().zip(&r.identities) {
                        obj.insert(n.clone(), v.map_or(Value::Null, Value::from));
                    }
                    serde_json::to_writer(&mut out, &obj).map_err(|e| fmt_err(e.to_string()))?;
                    out.push(b'\n');
                }
                out
            }
        };
        write_atomic(path, &bytes)
    }
}

struct Cells<'a> {
    path: &'a Path,
    row: usize,
}

impl Cells<'_> {
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

    fn parse(&self, field: &str, cell: &str) -> Result<Option<f64>> {
        let cell = cell.trim();
        if cell.is_empty() {
            return Ok(None);
        }
        let v = cell.parse().map_err(|_| self.err(field, format!("{cell:?} is not a number")))?;
        self.unit(field, v).map(Some)
    }

    fn json(&self, field: &str, v: Option<&Value>) -> Result<Option<f64>> {
        match v {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => self.unit(field, n.as_f64().unwrap_or(f64::NAN)).map(Some),
            Some(Value::String(s)) => self.parse(field, s),
            Some(_) => Err(self.err(field, "expected a number")),
        }
    }

    fn required(&self, field: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| self.err(field, "missing value"))
    }
}

fn read_csv<R: std::io::Read>(path: &Path, reader: R) -> Result<Predictions> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (score_at, label_at) = match (find("score"), find("label")) {
        (Some(s), Some(l)) => (s, l),
        _ => return Err(Error::format(path, "predictions need `score` and `label` columns")),
    };
    let id_at = find("id");
    let identity_at: Vec<usize> = (0..headers.len()).filter(|&i| ![Some(score_at), Some(label_at), id_at].contains(&Some(i))).collect();
    let identity_columns: Vec<String> = identity_at.iter().map(|&i| headers[i].to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let c = Cells { path, row: i + 1 };
        let rec = rec.map_err(|e| c.err("", e.to_string()))?;
        let identities = identity_at.iter().map(|&j| c.parse(&headers[j], &rec[j])).collect::<Result<Vec<_>>>()?;
        rows.push(PredictionRow {
            id: id_at.map_or_else(|| c.row.to_string(), |j| rec[j].to_string()),
            score: c.required("score", c.parse("score", &rec[score_at])?)?,
            label: c.required("label", c.parse("label", &rec[label_at])?)?,
            identities,
        });
    }
    Ok(Predictions { identity_columns, rows })
}

fn read_jsonl<R: BufRead>(path: &Path, reader: R) -> Result<Predictions> {
    let mut identity_columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let c = Cells { path, row: i + 1 };
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> = serde_json::from_str(&line).map_err(|e| c.err("", e.to_string()))?;
        let cols = identity_columns.get_or_insert_with(|| {
            obj.keys().filter(|k| !["id", "score", "label"].contains(&k.as_str())).cloned().collect()
        });
        if let Some(extra) = obj.keys().find(|k| !["id", "score", "label"].contains(&k.as_str()) && !cols.contains(k)) {
            return Err(c.err(extra, "identity column not present in the first record"));
        }
        let id = match obj.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            None => c.row.to_string(),
            Some(_) => return Err(c.err("id", "expected a string or integer id")),
        };
        rows.push(PredictionRow {
            id,
            score: c.required("score", c.json("score", obj.get("score"))?)?,
            label: c.required("label", c.json("label", obj.get("label"))?)?,
            identities: cols.iter().map(|n| c.json(n, obj.get(n))).collect::<Result<Vec<_>>>()?,
        });
    }
    Ok(Predictions { identity_columns: identity_columns.unwrap_or_default(), rows })
}
