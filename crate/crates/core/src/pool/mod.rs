//! Model prediction pools: the precomputed outputs every cascade is scored against.
//!
//! A pool stores, for each model, an `S x C` matrix of float32 class
//! probabilities together with the model's cost in MFLOPs, plus one shared
//! vector of ground-truth labels. Pools are immutable once built, so a single
//! instance can be shared across any number of evaluation workers.

mod format;
mod synth;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use format::{
    load_pool, read_label_csv, read_labels_file, read_prediction_csv, read_prediction_file,
    write_labels_file, write_pool, write_prediction_file, ManifestModel, PoolManifest,
    LABELS_MAGIC, PREDICTIONS_MAGIC,
};
pub use synth::{synth_pool, SynthPoolSpec};

/// Allowed absolute deviation of a stored probability row from summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Row-major `rows x cols` probability matrix as persisted (float32).
///
/// Rows are renormalized on read: [`PredictionMatrix::add_row_to`] divides
/// each stored value by the 64-bit row sum, so downstream arithmetic sees
/// row-stochastic data while the stored bits stay untouched.
#[derive(Debug, Clone)]
pub struct PredictionMatrix {
    values: Vec<f32>,
    rows: usize,
    cols: usize,
    row_sums: Vec<f64>,
}

impl PredictionMatrix {
    pub fn new(values: Vec<f32>, rows: usize, cols: usize) -> Result<Self> {
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::Dimension(format!(
                "prediction matrix of {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                values.len()
            )));
        }
        let row_sums = if cols == 0 {
            vec![0.0; rows]
        } else {
            values
                .chunks_exact(cols)
                .map(|row| row.iter().map(|&v| v as f64).sum())
                .collect()
        };
        Ok(Self {
            values,
            rows,
            cols,
            row_sums,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Stored (unnormalized) float32 row.
    pub fn row(&self, sample: usize) -> &[f32] {
        &self.values[sample * self.cols..(sample + 1) * self.cols]
    }

    pub fn row_sum(&self, sample: usize) -> f64 {
        self.row_sums[sample]
    }

    /// Normalized probability of `class` for `sample`.
    #[inline]
    pub fn prob(&self, sample: usize, class: usize) -> f64 {
        self.values[sample * self.cols + class] as f64 / self.row_sums[sample]
    }

    /// Writes the normalized row into `out`.
    pub fn normalized_row_into(&self, sample: usize, out: &mut [f64]) {
        let sum = self.row_sums[sample];
        for (o, &v) in out.iter_mut().zip(self.row(sample)) {
            *o = v as f64 / sum;
        }
    }

    /// Adds the normalized row to `acc` element-wise.
    #[inline]
    pub fn add_row_to(&self, sample: usize, acc: &mut [f64]) {
        let sum = self.row_sums[sample];
        for (a, &v) in acc.iter_mut().zip(self.row(sample)) {
            *a += v as f64 / sum;
        }
    }

    /// `out = base + row(sample)` with the same per-element arithmetic as
    /// [`Self::add_row_to`] on a copy of `base`.
    #[inline]
    pub fn add_row_into(&self, sample: usize, base: &[f64], out: &mut [f64]) {
        let sum = self.row_sums[sample];
        for ((o, &b), &v) in out.iter_mut().zip(base).zip(self.row(sample)) {
            *o = b + v as f64 / sum;
        }
    }

    fn validate(&self, model: &str) -> Result<()> {
        for (row, values) in self.values.chunks_exact(self.cols.max(1)).enumerate() {
            if let Some((col, &value)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::EntryRange {
                    model: model.to_string(),
                    row,
                    col,
                    value,
                });
            }
            let sum = self.row_sums[row];
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowSum {
                    model: model.to_string(),
                    row,
                    sum,
                });
            }
        }
        Ok(())
    }

    fn select_rows(&self, samples: &[usize]) -> Self {
        let mut values = Vec::with_capacity(samples.len() * self.cols);
        for &s in samples {
            values.extend_from_slice(self.row(s));
        }
        let row_sums = samples.iter().map(|&s| self.row_sums[s]).collect();
        Self {
            values,
            rows: samples.len(),
            cols: self.cols,
            row_sums,
        }
    }
}

impl PartialEq for PredictionMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// One selectable cascade member.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    id: String,
    flops_m: f64,
    predictions: PredictionMatrix,
}

impl ModelEntry {
    /// Validates cost and every prediction row (entries in `[0, 1]`, rows sum to one).
    pub fn new(id: impl Into<String>, flops_m: f64, predictions: PredictionMatrix) -> Result<Self> {
        let id = id.into();
        if !(flops_m.is_finite() && flops_m > 0.0) {
            return Err(Error::InvalidPool(format!(
                "model {id}: flops_m must be finite and positive, got {flops_m}"
            )));
        }
        predictions.validate(&id)?;
        Ok(Self {
            id,
            flops_m,
            predictions,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn flops_m(&self) -> f64 {
        self.flops_m
    }

    pub fn predictions(&self) -> &PredictionMatrix {
        &self.predictions
    }
}

/// N models evaluated on the same S labelled samples with C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPool {
    name: String,
    labels: Vec<u32>,
    num_classes: usize,
    models: Vec<ModelEntry>,
}

impl ModelPool {
    pub fn new(
        name: impl Into<String>,
        labels: Vec<u32>,
        num_classes: usize,
        models: Vec<ModelEntry>,
    ) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::InvalidPool("pool needs at least one sample".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidPool(format!(
                "pool needs at least two classes, got {num_classes}"
            )));
        }
        if models.is_empty() {
            return Err(Error::InvalidPool("pool needs at least one model".into()));
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::LabelRange {
                index,
                label,
                classes: num_classes,
            });
        }
        let mut seen = HashSet::new();
        for m in &models {
            if !seen.insert(m.id.as_str()) {
                return Err(Error::InvalidPool(format!("duplicate model id {}", m.id)));
            }
            let p = &m.predictions;
            if p.rows != labels.len() || p.cols != num_classes {
                return Err(Error::Dimension(format!(
                    "model {} has {}x{} predictions, pool expects {}x{}",
                    m.id,
                    p.rows,
                    p.cols,
                    labels.len(),
                    num_classes
                )));
            }
        }
        Ok(Self {
            name,
            labels,
            num_classes,
            models,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[ModelEntry] {
        &self.models
    }

    /// Model by zero-based position (genome value minus one).
    pub fn model(&self, index: usize) -> &ModelEntry {
        &self.models[index]
    }

    /// Standalone top-1 accuracy (percent) of the model at zero-based `index`.
    pub fn model_accuracy(&self, index: usize) -> f64 {
        let preds = &self.models[index].predictions;
        let mut buf = vec![0.0; self.num_classes];
        let correct = (0..self.num_samples())
            .filter(|&s| {
                preds.normalized_row_into(s, &mut buf);
                crate::eval::argmax(&buf) == self.labels[s] as usize
            })
            .count();
        100.0 * correct as f64 / self.num_samples() as f64
    }

    /// Restricts the pool to the given sample indices, in the given order.
    pub fn select_samples(&self, samples: &[usize], name: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidPool("sample selection is empty".into()));
        }
        if let Some(&bad) = samples.iter().find(|&&s| s >= self.num_samples()) {
            return Err(Error::Dimension(format!(
                "sample index {bad} out of range for {} samples",
                self.num_samples()
            )));
        }
        Ok(Self {
            name: name.into(),
            labels: samples.iter().map(|&s| self.labels[s]).collect(),
            num_classes: self.num_classes,
            models: self
                .models
                .iter()
                .map(|m| ModelEntry {
                    id: m.id.clone(),
                    flops_m: m.flops_m,
                    predictions: m.predictions.select_rows(samples),
                })
                .collect(),
        })
    }
}

/// Concatenates the model lists of pools built on the same samples.
///
/// Ids that would collide are prefixed with `<pool name>/`.
pub fn merge_pools(pools: &[ModelPool]) -> Result<ModelPool> {
    let first = pools
        .first()
        .ok_or_else(|| Error::InvalidPool("merge needs at least one pool".into()))?;
    if pools.len() == 1 {
        return Ok(first.clone());
    }
    for p in &pools[1..] {
        if p.num_samples() != first.num_samples() || p.num_classes != first.num_classes {
            return Err(Error::Dimension(format!(
                "pool {} is {}x{}, pool {} is {}x{}",
                first.name,
                first.num_samples(),
                first.num_classes,
                p.name,
                p.num_samples(),
                p.num_classes
            )));
        }
        if let Some(index) = first.labels.iter().zip(&p.labels).position(|(a, b)| a != b) {
            return Err(Error::LabelMismatch {
                first: first.name.clone(),
                second: p.name.clone(),
                index,
            });
        }
    }

    let mut counts = std::collections::HashMap::<&str, usize>::new();
    for p in pools {
        for m in &p.models {
            *counts.entry(m.id.as_str()).or_default() += 1;
        }
    }
    let mut models = Vec::with_capacity(pools.iter().map(|p| p.num_models()).sum());
    for p in pools {
        for m in &p.models {
            let mut entry = m.clone();
            if counts[m.id.as_str()] > 1 {
                entry.id = format!("{}/{}", p.name, m.id);
            }
            models.push(entry);
        }
    }
    let name = pools
        .iter()
        .map(|p| p.name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    ModelPool::new(name, first.labels.clone(), first.num_classes, models)
}

/// Randomly partitions the samples into two pools.
///
/// The first part receives `floor(fraction * S)` samples, clamped so both
/// parts keep at least one sample. Samples keep their original relative order.
pub fn split_pool(pool: &ModelPool, fraction: f64, seed: u64) -> Result<(ModelPool, ModelPool)> {
    let n = pool.num_samples();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidPool(format!(
            "cannot split a pool of {n} sample(s) into two nonempty parts"
        )));
    }
    let first_len = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = order.split_at_mut(first_len);
    a.sort_unstable();
    b.sort_unstable();
    Ok((
        pool.select_samples(a, format!("{}.0", pool.name))?,
        pool.select_samples(b, format!("{}.1", pool.name))?,
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// The two-model, two-sample pool used throughout the docs and tests.
    pub(crate) fn worked_pool() -> ModelPool {
        let a = PredictionMatrix::new(vec![0.9, 0.1, 0.6, 0.4], 2, 2).unwrap();
        let b = PredictionMatrix::new(vec![0.5, 0.5, 0.2, 0.8], 2, 2).unwrap();
        ModelPool::new(
            "worked",
            vec![0, 1],
            2,
            vec![
                ModelEntry::new("A", 100.0, a).unwrap(),
                ModelEntry::new("B", 300.0, b).unwrap(),
            ],
        )
        .unwrap()
    }

    fn tiny(name: &str, labels: Vec<u32>, ids: &[&str]) -> ModelPool {
        let s = labels.len();
        let models = ids
            .iter()
            .map(|id| {
                let values = (0..s).flat_map(|_| [0.25f32, 0.75]).collect();
                ModelEntry::new(*id, 10.0, PredictionMatrix::new(values, s, 2).unwrap()).unwrap()
            })
            .collect();
        ModelPool::new(name, labels, 2, models).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let m = PredictionMatrix::new(vec![0.5, 0.4, 0.5, 0.5], 2, 2).unwrap();
        match ModelEntry::new("x", 1.0, m) {
            Err(Error::RowSum { row, model, .. }) => {
                assert_eq!(row, 0);
                assert_eq!(model, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
        let m = PredictionMatrix::new(vec![1.5, -0.5], 1, 2).unwrap();
        assert!(matches!(
            ModelEntry::new("x", 1.0, m),
            Err(Error::EntryRange { col: 0, .. })
        ));
        let m = PredictionMatrix::new(vec![0.5, 0.5], 1, 2).unwrap();
        assert!(ModelEntry::new("x", 0.0, m).is_err());
    }

    #[test]
    fn rejects_invalid_pools() {
        let m = || {
            ModelEntry::new(
                "m",
                1.0,
                PredictionMatrix::new(vec![0.5, 0.5], 1, 2).unwrap(),
            )
            .unwrap()
        };
        assert!(matches!(
            ModelPool::new("p", vec![2], 2, vec![m()]),
            Err(Error::LabelRange { label: 2, .. })
        ));
        assert!(ModelPool::new("p", vec![0], 2, vec![m(), m()]).is_err());
        assert!(ModelPool::new("p", vec![0], 2, vec![]).is_err());
        assert!(matches!(
            ModelPool::new("p", vec![0, 1], 2, vec![m()]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn normalized_rows_are_stochastic() {
        let m = PredictionMatrix::new(vec![0.30001, 0.70001], 1, 2).unwrap();
        let mut out = [0.0; 2];
        m.normalized_row_into(0, &mut out);
        assert!((out[0] + out[1] - 1.0).abs() < 1e-15);
        assert_eq!(m.prob(0, 1), out[1]);
    }

    #[test]
    fn merge_counts_and_collisions() {
        let a = tiny("a", vec![0, 1, 1], &["m1", "m2", "m3"]);
        let b = tiny("b", vec![0, 1, 1], &["m3", "m4"]);
        let merged = merge_pools(&[a.clone(), b]).unwrap();
        assert_eq!(merged.num_models(), 5);
        let ids: Vec<_> = merged.models().iter().map(|m| m.id()).collect();
        assert_eq!(ids, ["m1", "m2", "a/m3", "b/m3", "m4"]);
        assert_eq!(merge_pools(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn merge_rejects_label_mismatch() {
        let a = tiny("a", vec![0, 1, 1], &["m1"]);
        let b = tiny("b", vec![0, 0, 1], &["m2"]);
        assert!(matches!(
            merge_pools(&[a, b]),
            Err(Error::LabelMismatch { index: 1, .. })
        ));
        let c = tiny("c", vec![0, 1], &["m3"]);
        let d = tiny("d", vec![0, 1, 1], &["m4"]);
        assert!(matches!(merge_pools(&[c, d]), Err(Error::Dimension(_))));
        assert!(merge_pools(&[]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let p = tiny("p", (0..100).map(|i| i % 2).collect(), &["m"]);
        let (a, b) = split_pool(&p, 0.5, 7).unwrap();
        assert_eq!((a.num_samples(), b.num_samples()), (50, 50));
        let (a2, b2) = split_pool(&p, 0.5, 7).unwrap();
        assert_eq!((a, b), (a2, b2));

        let two = tiny("two", vec![0, 1], &["m"]);
        let (a, b) = split_pool(&two, 0.999, 3).unwrap();
        assert_eq!((a.num_samples(), b.num_samples()), (1, 1));
        let (a, b) = split_pool(&two, 0.001, 3).unwrap();
        assert_eq!((a.num_samples(), b.num_samples()), (1, 1));

        let one = tiny("one", vec![0], &["m"]);
        assert!(split_pool(&one, 0.5, 0).is_err());
        assert!(split_pool(&p, 1.0, 0).is_err());
        assert!(split_pool(&p, 0.0, 0).is_err());
    }
}
