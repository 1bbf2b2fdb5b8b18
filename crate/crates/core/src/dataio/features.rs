//! Feature files: a flat little-endian f64 matrix plus a JSON sidecar with
//! the shape and per-row metadata. CSV is accepted as a slower alternative.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub split: Split,
    pub state: String,
    pub object: String,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub id: String,
    pub split: Split,
    pub state: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub samples: Vec<SidecarRow>,
}

pub fn write_features(bin: &Path, sidecar: &Path, records: &[FeatureRecord]) -> Result<()> {
    let cols = records.first().map_or(0, |r| r.feature.len());
    let mut bytes = Vec::with_capacity(records.len() * cols * 8);
    for r in records {
        if r.feature.len() != cols {
            return Err(Error::Dimension {
                context: format!("feature of '{}'", r.id),
                expected: cols,
                found: r.feature.len(),
            });
        }
        for x in &r.feature {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let meta = FeatureSidecar {
        rows: records.len(),
        cols,
        dtype: "f64-le".into(),
        samples: records
            .iter()
            .map(|r| SidecarRow {
                id: r.id.clone(),
                split: r.split,
                state: r.state.clone(),
                object: r.object.clone(),
            })
            .collect(),
    };
    std::fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(sidecar, json + "\n").map_err(|e| Error::io(sidecar, e))
}

pub fn read_features(bin: &Path, sidecar: &Path) -> Result<Vec<FeatureRecord>> {
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let meta: FeatureSidecar = serde_json::from_str(&text)?;
    if meta.dtype != "f64-le" {
        return Err(Error::Validation(format!("unsupported dtype '{}'", meta.dtype)));
    }
    if meta.samples.len() != meta.rows {
        return Err(Error::Dimension {
            context: "feature sidecar sample list".into(),
            expected: meta.rows,
            found: meta.samples.len(),
        });
    }
    let bytes = std::fs::read(bin).map_err(|e| Error::io(bin, e))?;
    if bytes.len() != meta.rows * meta.cols * 8 {
        return Err(Error::Dimension {
            context: format!("byte length of {}", bin.display()),
            expected: meta.rows * meta.cols * 8,
            found: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("feature file has non-finite values".into()));
    }
    Ok(meta
        .samples
        .into_iter()
        .zip(values.chunks(meta.cols.max(1)))
        .map(|(row, feature)| FeatureRecord {
            id: row.id,
            split: row.split,
            state: row.state,
            object: row.object,
            feature: if meta.cols == 0 { Vec::new() } else { feature.to_vec() },
        })
        .collect())
}

/// Reads `id,split,state,object,f0,f1,...` rows; the first line is a header.
pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 5 {
            return Err(parse_err("expected id,split,state,object,features...".into()));
        }
        let feature = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(e.to_string()))?;
        if *width.get_or_insert(feature.len()) != feature.len() {
            return Err(parse_err("inconsistent feature width".into()));
        }
        out.push(FeatureRecord {
            id: fields[0].to_string(),
            split: fields[1].parse().map_err(|e: Error| parse_err(e.to_string()))?,
            state: fields[2].to_string(),
            object: fields[3].to_string(),
            feature,
        });
    }
    Ok(out)
}
