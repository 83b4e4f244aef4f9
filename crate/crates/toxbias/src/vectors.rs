//! Word vectors in GloVe text format (`word v1 … v_dim` per line), with the
//! optional FastText `count dim` header line.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use toxbias_core::embed::VectorMap;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedVectors {
    pub vectors: VectorMap,
    /// Words seen more than once, with the line of each repeat. The last
    /// occurrence wins.
    pub duplicates: Vec<(usize, String)>,
}

pub fn load_vectors(path: &Path, dim: usize) -> Result<VectorMap> {
    let file = File::open(path).map_err(Error::io(path))?;
    let loaded = parse_vectors(path, BufReader::new(file), dim)?;
    for (line, word) in &loaded.duplicates {
        log::warn!("{}: line {line}: duplicate vector for {word:?}, keeping the later one", path.display());
    }
    Ok(loaded.vectors)
}

fn is_header(fields: &[&str]) -> bool {
    fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
}

pub fn parse_vectors<R: BufRead>(path: &Path, reader: R, dim: usize) -> Result<LoadedVectors> {
    let mut out = LoadedVectors::default();
    let line_err = |line: usize, message: String| Error::Line { path: path.into(), line, message };
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(Error::io(path))?;
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        if n == 1 && is_header(&fields) {
            let declared: usize = fields[1].parse().map_err(|_| line_err(n, "bad header".into()))?;
            if declared != dim {
                return Err(line_err(n, format!("header declares dimension {declared}, expected {dim}")));
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(line_err(n, format!("expected a word and {dim} values, found {} fields", fields.len())));
        }
        let values = fields[1..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(line_err(n, format!("{f:?} is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let word = fields[0].to_string();
        if out.vectors.insert(word.clone(), values).is_some() {
            out.duplicates.push((n, word));
        }
    }
    Ok(out)
}

/// Writes vectors in GloVe text format, words in sorted order.
pub fn format_vectors(vectors: &VectorMap) -> String {
    let mut s = String::new();
    for (word, v) in vectors {
        s.push_str(word);
        for x in v {
            s.push(' ');
            s.push_str(&x.to_string());
        }
        s.push('\n');
    }
    s
}
