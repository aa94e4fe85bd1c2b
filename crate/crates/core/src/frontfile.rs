//! Front files: a JSON array of scored cascades, plus a plotting CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CascadeGenome, DecodedCascade, ThresholdGrid};
use crate::pareto::{FrontEntry, ObjectivePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub models: Vec<u32>,
    /// Threshold *values* for the `k - 1` threshold slots.
    pub thresholds: Vec<f64>,
    pub accuracy_pct: f64,
    pub mflops: f64,
    pub stage_fractions: Vec<f64>,
}

impl FrontRecord {
    pub fn from_entry(entry: &FrontEntry, grid: &ThresholdGrid) -> Self {
        Self {
            name: None,
            models: entry.genome.models.clone(),
            thresholds: entry
                .genome
                .thresholds
                .iter()
                .map(|&t| grid.value(t as usize))
                .collect(),
            accuracy_pct: entry.metrics.accuracy_pct,
            mflops: entry.metrics.expected_mflops,
            stage_fractions: entry.metrics.stage_fractions.clone(),
        }
    }

    pub fn point(&self) -> ObjectivePoint {
        ObjectivePoint::new(self.mflops, self.accuracy_pct)
    }

    pub fn cascade(&self) -> Result<DecodedCascade> {
        DecodedCascade::from_slots(&self.models, &self.thresholds)
    }

    /// Maps threshold values back onto grid indices.
    pub fn genome(&self, grid: &ThresholdGrid) -> Result<CascadeGenome> {
        let thresholds = self
            .thresholds
            .iter()
            .map(|&v| {
                grid.index_of(v).map(|i| i as u32).ok_or_else(|| {
                    Error::InvalidGenome(format!("threshold {v} is not a grid value"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(CascadeGenome::new(self.models.clone(), thresholds))
    }
}

pub fn records_from_entries(entries: &[FrontEntry], grid: &ThresholdGrid) -> Vec<FrontRecord> {
    entries
        .iter()
        .map(|e| FrontRecord::from_entry(e, grid))
        .collect()
}

pub fn write_front_file(path: &Path, records: &[FrontRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_front_file(path: &Path) -> Result<Vec<FrontRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// CSV with columns `name,mflops,accuracy_pct`.
pub fn write_front_csv<W: Write>(out: W, records: &[FrontRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Csv {
        path: "<output>".into(),
        msg: e.to_string(),
    };
    w.write_record(["name", "mflops", "accuracy_pct"])
        .map_err(err)?;
    for r in records {
        w.write_record([
            r.name.clone().unwrap_or_default(),
            r.mflops.to_string(),
            r.accuracy_pct.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::CascadeMetrics;

    #[test]
    fn record_round_trip() {
        let grid = ThresholdGrid::default();
        let metrics = CascadeMetrics {
            accuracy_pct: 91.5,
            expected_mflops: 123.0,
            stage_fractions: vec![1.0, 0.25],
            correct: 183,
            num_samples: 200,
            exit_stage: None,
        };
        let entry = FrontEntry::new(CascadeGenome::new(vec![3, 1], vec![40]), metrics);
        let rec = FrontRecord::from_entry(&entry, &grid);
        assert_eq!(rec.thresholds, vec![0.8]);
        assert_eq!(rec.genome(&grid).unwrap(), entry.genome);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("front.json");
        write_front_file(&path, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_front_file(&path).unwrap(), vec![rec.clone()]);

        let mut csv = Vec::new();
        write_front_csv(&mut csv, &[rec]).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "name,mflops,accuracy_pct\n,123,91.5\n"
        );
    }
}
