//! On-disk pool layout: a JSON manifest plus little-endian binary files.
//!
//! Prediction file: `"ENCP"`, u32 version = 1, u32 S, u32 C, then `S*C`
//! float32 values, row-major. Labels file: `"ENCL"`, u32 version = 1, u32 S,
//! then S u32 class indices.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{ModelEntry, ModelPool, PredictionMatrix};
use crate::error::{Error, Result};

pub const PREDICTIONS_MAGIC: &[u8; 4] = b"ENCP";
pub const LABELS_MAGIC: &[u8; 4] = b"ENCL";
const FORMAT_VERSION: u32 = 1;
const MANIFEST_NAME: &str = "pool.json";
const LABELS_NAME: &str = "labels.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub name: String,
    pub num_samples: usize,
    pub num_classes: usize,
    pub labels_file: String,
    pub models: Vec<ManifestModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestModel {
    pub id: String,
    pub flops_m: f64,
    pub pred_file: String,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_header(r: &mut impl Read, path: &Path, magic: &[u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)
        .map_err(|_| format_err(path, "truncated header"))?;
    if &found != magic {
        return Err(format_err(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err(path, "truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(format_err(path, "trailing bytes after payload")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn dim_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Dimension(format!("{what} {value} exceeds u32")))
}

/// Reads a prediction file; returns the matrix without validating row sums.
pub fn read_prediction_file(path: &Path) -> Result<PredictionMatrix> {
    let mut r = open(path)?;
    read_header(&mut r, path, PREDICTIONS_MAGIC)?;
    let rows = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err(path, "truncated header"))? as usize;
    let cols = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err(path, "truncated header"))? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| format_err(path, "matrix size overflows"))?;
    let mut values = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|_| format_err(path, format!("payload shorter than {rows}x{cols} floats")))?;
    expect_eof(&mut r, path)?;
    PredictionMatrix::new(values, rows, cols)
}

pub fn write_prediction_file(path: &Path, matrix: &PredictionMatrix) -> Result<()> {
    let rows = dim_u32(matrix.rows(), "row count")?;
    let cols = dim_u32(matrix.cols(), "column count")?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(PREDICTIONS_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(rows).map_err(io)?;
    w.write_u32::<LittleEndian>(cols).map_err(io)?;
    for &v in matrix.values() {
        w.write_f32::<LittleEndian>(v).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_labels_file(path: &Path) -> Result<Vec<u32>> {
    let mut r = open(path)?;
    read_header(&mut r, path, LABELS_MAGIC)?;
    let n = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err(path, "truncated header"))? as usize;
    let mut labels = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut labels)
        .map_err(|_| format_err(path, format!("payload shorter than {n} labels")))?;
    expect_eof(&mut r, path)?;
    Ok(labels)
}

pub fn write_labels_file(path: &Path, labels: &[u32]) -> Result<()> {
    let n = dim_u32(labels.len(), "label count")?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(LABELS_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(n).map_err(io)?;
    for &l in labels {
        w.write_u32::<LittleEndian>(l).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and validates a pool from its manifest. Relative file names are
/// resolved against the manifest's directory.
pub fn load_pool(manifest_path: &Path) -> Result<ModelPool> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: PoolManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let labels = read_labels_file(&resolve(base, &manifest.labels_file))?;
    if labels.len() != manifest.num_samples {
        return Err(Error::Dimension(format!(
            "labels file {} holds {} labels, manifest declares {} samples",
            manifest.labels_file,
            labels.len(),
            manifest.num_samples
        )));
    }

    let mut models = Vec::with_capacity(manifest.models.len());
    for m in &manifest.models {
        let preds = read_prediction_file(&resolve(base, &m.pred_file))?;
        if preds.rows() != manifest.num_samples || preds.cols() != manifest.num_classes {
            return Err(Error::Dimension(format!(
                "model {} has {}x{} predictions, manifest declares {}x{}",
                m.id,
                preds.rows(),
                preds.cols(),
                manifest.num_samples,
                manifest.num_classes
            )));
        }
        models.push(ModelEntry::new(m.id.clone(), m.flops_m, preds)?);
    }
    ModelPool::new(manifest.name, labels, manifest.num_classes, models)
}

/// Writes `dir/pool.json`, `dir/labels.bin` and one `dir/pred_NNNN.bin` per
/// model; returns the manifest path.
pub fn write_pool(pool: &ModelPool, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_labels_file(&dir.join(LABELS_NAME), pool.labels())?;
    let mut models = Vec::with_capacity(pool.num_models());
    for (i, m) in pool.models().iter().enumerate() {
        let file = format!("pred_{i:04}.bin");
        write_prediction_file(&dir.join(&file), m.predictions())?;
        models.push(ManifestModel {
            id: m.id().to_string(),
            flops_m: m.flops_m(),
            pred_file: file,
        });
    }
    let manifest = PoolManifest {
        name: pool.name().to_string(),
        num_samples: pool.num_samples(),
        num_classes: pool.num_classes(),
        labels_file: LABELS_NAME.to_string(),
        models,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

/// Reads a CSV with one row per sample and one probability per column.
pub fn read_prediction_csv(path: &Path) -> Result<PredictionMatrix> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in csv_reader(path)?.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Dimension(format!(
                    "{}: row {i} has {} columns, expected {c}",
                    path.display(),
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f32 = field.parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                msg: format!("row {i}: cannot parse {field:?} as a float"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    PredictionMatrix::new(values, rows, cols.unwrap_or(0))
}

/// Reads labels from a CSV holding one class index per row.
pub fn read_label_csv(path: &Path) -> Result<Vec<u32>> {
    let mut labels = Vec::new();
    for (i, record) in csv_reader(path)?.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let Some(field) = record.get(0).filter(|f| !f.is_empty()) else {
            continue;
        };
        labels.push(field.parse().map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            msg: format!("row {i}: cannot parse {field:?} as a class index"),
        })?);
    }
    Ok(labels)
}
