//! Cascade genomes and their evaluation against a [`ModelPool`].
//!
//! A genome of maximum cascade size `k` holds `k` model slots (value 0 is the
//! no-op model, `1..=N` select pool models) and `k - 1` threshold slots that
//! index a [`ThresholdGrid`]. Decoding drops the no-op slots; evaluation then
//! runs every sample through the surviving stages, averaging the outputs of
//! all models used so far and stopping once the confidence of that average
//! exceeds the stage threshold.

mod engine;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::ModelPool;

pub use engine::{Evaluator, DEFAULT_MEMO_BYTES};

/// Ordered set of admissible confidence thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid {
    values: Vec<f64>,
}

impl ThresholdGrid {
    /// Strictly increasing values in `[0, 1]`, ending at exactly 1.0.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("threshold grid is empty".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(
                "threshold grid values must lie in [0, 1]".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "threshold grid must be strictly increasing".into(),
            ));
        }
        if *values.last().unwrap() != 1.0 {
            return Err(Error::Config("threshold grid must end at 1.0".into()));
        }
        Ok(Self { values })
    }

    /// `steps + 1` evenly spaced values `0, 1/steps, ..., 1`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        Self::new((0..=steps).map(|i| i as f64 / steps as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Index of the grid value 1.0.
    pub fn top_index(&self) -> usize {
        self.values.len() - 1
    }

    /// Index of the grid member equal to `value` (within 1e-9).
    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.values.iter().position(|&v| (v - value).abs() <= 1e-9)
    }
}

impl Default for ThresholdGrid {
    /// 51 values `0.00, 0.02, ..., 1.00`.
    fn default() -> Self {
        Self::uniform(50).unwrap()
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(grid: ThresholdGrid) -> Self {
        grid.values
    }
}

/// Fixed-length categorical encoding of a cascade.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CascadeGenome {
    /// `k` slots, 0 = no-op, `1..=N` = pool model.
    pub models: Vec<u32>,
    /// `k - 1` indices into the threshold grid.
    pub thresholds: Vec<u32>,
}

impl CascadeGenome {
    pub fn new(models: Vec<u32>, thresholds: Vec<u32>) -> Self {
        Self { models, thresholds }
    }

    /// Maximum cascade size.
    pub fn k(&self) -> usize {
        self.models.len()
    }

    /// Number of categorical positions (`2k - 1`): model slots first, then thresholds.
    pub fn len(&self) -> usize {
        self.models.len() + self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, position: usize) -> u32 {
        if position < self.models.len() {
            self.models[position]
        } else {
            self.thresholds[position - self.models.len()]
        }
    }

    pub fn set(&mut self, position: usize, value: u32) {
        if position < self.models.len() {
            self.models[position] = value;
        } else {
            let k = self.models.len();
            self.thresholds[position - k] = value;
        }
    }

    /// Checks slot counts and value ranges for a pool of `num_models` models.
    pub fn validate(&self, num_models: usize, grid_len: usize) -> Result<()> {
        let k = self.models.len();
        if k == 0 {
            return Err(Error::InvalidGenome("genome has no model slots".into()));
        }
        if self.thresholds.len() != k - 1 {
            return Err(Error::InvalidGenome(format!(
                "{k} model slots need {} threshold slots, got {}",
                k - 1,
                self.thresholds.len()
            )));
        }
        if let Some(&m) = self.models.iter().find(|&&m| m as usize > num_models) {
            return Err(Error::InvalidGenome(format!(
                "model slot value {m} exceeds pool size {num_models}"
            )));
        }
        if let Some(&t) = self.thresholds.iter().find(|&&t| t as usize >= grid_len) {
            return Err(Error::InvalidGenome(format!(
                "threshold index {t} out of range for a grid of {grid_len} values"
            )));
        }
        Ok(())
    }

    /// Cardinality of each position's categorical domain.
    pub fn domain_sizes(k: usize, num_models: usize, grid_len: usize) -> Vec<u32> {
        let mut sizes = vec![num_models as u32 + 1; k];
        sizes.extend(std::iter::repeat_n(grid_len as u32, k.saturating_sub(1)));
        sizes
    }
}

/// One active cascade stage. `model` is the zero-based pool index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub model: usize,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodedCascade {
    pub stages: Vec<Stage>,
}

impl DecodedCascade {
    /// Builds a cascade from slot values and threshold *values*; applies the
    /// same no-op removal as [`decode`].
    pub fn from_slots(models: &[u32], thresholds: &[f64]) -> Result<Self> {
        if models.is_empty() || thresholds.len() + 1 != models.len() {
            return Err(Error::InvalidGenome(format!(
                "{} model slots need {} thresholds, got {}",
                models.len(),
                models.len().saturating_sub(1),
                thresholds.len()
            )));
        }
        Ok(build(models, |i| thresholds[i]))
    }

    /// All stages average every sample; thresholds are 1.0.
    pub fn ensemble(models: &[usize]) -> Self {
        let n = models.len();
        Self {
            stages: models
                .iter()
                .enumerate()
                .map(|(i, &model)| Stage {
                    model,
                    threshold: (i + 1 < n).then_some(1.0),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn models(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.model).collect()
    }
}

fn build(models: &[u32], threshold: impl Fn(usize) -> f64) -> DecodedCascade {
    let active: Vec<usize> = (0..models.len()).filter(|&i| models[i] != 0).collect();
    let stages = active
        .iter()
        .enumerate()
        .map(|(j, &pos)| Stage {
            model: models[pos] as usize - 1,
            threshold: (j + 1 < active.len()).then(|| threshold(pos)),
        })
        .collect();
    DecodedCascade { stages }
}

/// Drops no-op slots. Each remaining non-final stage keeps the threshold at
/// its own position; the last active stage carries none.
pub fn decode(genome: &CascadeGenome, grid: &ThresholdGrid) -> DecodedCascade {
    build(&genome.models, |pos| {
        grid.value(genome.thresholds[pos] as usize)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMode {
    /// Largest probability.
    #[default]
    MaxProb,
    /// Largest minus second-largest probability.
    TopGap,
}

impl std::str::FromStr for ConfidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-prob" => Ok(Self::MaxProb),
            "top-gap" => Ok(Self::TopGap),
            other => Err(Error::Config(format!("unknown confidence mode {other:?}"))),
        }
    }
}

pub fn confidence(probs: &[f64], mode: ConfidenceMode) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::Config(format!(
            "confidence needs at least two classes, got {}",
            probs.len()
        )));
    }
    Ok(confidence_of_sum(probs, 1.0, mode))
}

fn top_two(values: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in values {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    (first, second)
}

/// Confidence of the mean vector `sum / count`.
///
/// Division by a positive count is monotone under rounding, so the largest
/// mean entry is exactly `max(sum) / count`; no mean vector is materialized.
#[inline]
pub(crate) fn confidence_of_sum(sum: &[f64], count: f64, mode: ConfidenceMode) -> f64 {
    match mode {
        ConfidenceMode::MaxProb => sum.iter().copied().fold(f64::NEG_INFINITY, f64::max) / count,
        ConfidenceMode::TopGap => {
            let (a, b) = top_two(sum);
            a / count - b / count
        }
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Largest entry and the first index holding it. Lane-wise so the scan
/// vectorizes; agrees with [`argmax`] on finite input.
#[inline]
pub(crate) fn max_first(values: &[f64]) -> (f64, usize) {
    const LANES: usize = 8;
    let mut lanes = [f64::NEG_INFINITY; LANES];
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for chunk in chunks {
        for (m, &v) in lanes.iter_mut().zip(chunk) {
            if v > *m {
                *m = v;
            }
        }
    }
    let mut top = lanes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &v in tail {
        if v > top {
            top = v;
        }
    }
    let best = values.iter().position(|&v| v == top).unwrap_or(0);
    (top, best)
}

/// Confidence and predicted class of the mean vector `sum / count`.
#[inline]
pub(crate) fn score_sum(sum: &[f64], count: f64, mode: ConfidenceMode) -> (f64, usize) {
    let (top, best) = max_first(sum);
    let conf = match mode {
        ConfidenceMode::MaxProb => top / count,
        ConfidenceMode::TopGap => confidence_of_sum(sum, count, mode),
    };
    (conf, mean_argmax_from(sum, count, best))
}

/// `argmax(sum / count)` with ties to the lowest class index.
#[inline]
pub(crate) fn argmax_of_mean(sum: &[f64], count: f64) -> usize {
    mean_argmax_from(sum, count, argmax(sum))
}

/// [`argmax_of_mean`] given `best`, the first argmax of `sum`.
#[inline]
fn mean_argmax_from(sum: &[f64], count: f64, best: usize) -> usize {
    if count == 1.0 {
        return best;
    }
    // Distinct sums can collapse to the same mean after rounding; only
    // entries before `best` can win such a tie.
    let top = sum[best] / count;
    let floor = sum[best] * (1.0 - 1e-12);
    (0..best)
        .find(|&c| sum[c] >= floor && sum[c] / count == top)
        .unwrap_or(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeMetrics {
    pub accuracy_pct: f64,
    pub expected_mflops: f64,
    /// Fraction of samples that reached each stage.
    pub stage_fractions: Vec<f64>,
    pub correct: usize,
    pub num_samples: usize,
    /// Per-sample index of the stage that produced the output (diagnostic).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_stage: Option<Vec<u32>>,
}

impl CascadeMetrics {
    /// Metrics from integer reach/correct counts. Every evaluation path goes
    /// through here so equal counts give bit-equal metrics.
    pub(crate) fn from_counts(
        pool: &ModelPool,
        cascade: &DecodedCascade,
        reached: &[usize],
        correct: usize,
    ) -> Self {
        let n = pool.num_samples() as f64;
        let stage_fractions: Vec<f64> = reached.iter().map(|&r| r as f64 / n).collect();
        let expected_mflops = cascade
            .stages
            .iter()
            .zip(&stage_fractions)
            .map(|(st, f)| pool.model(st.model).flops_m() * f)
            .sum();
        Self {
            accuracy_pct: 100.0 * correct as f64 / n,
            expected_mflops,
            stage_fractions,
            correct,
            num_samples: pool.num_samples(),
            exit_stage: None,
        }
    }

    /// Worst-case fitness for genomes that decode to no stages.
    pub fn empty_sentinel(num_samples: usize) -> Self {
        Self {
            accuracy_pct: 0.0,
            expected_mflops: f64::INFINITY,
            stage_fractions: Vec::new(),
            correct: 0,
            num_samples,
            exit_stage: None,
        }
    }
}

fn check_stages(cascade: &DecodedCascade, pool: &ModelPool) -> Result<()> {
    if cascade.is_empty() {
        return Err(Error::EmptyCascade);
    }
    if let Some(st) = cascade.stages.iter().find(|s| s.model >= pool.num_models()) {
        return Err(Error::ModelIndex {
            index: st.model + 1,
            models: pool.num_models(),
        });
    }
    Ok(())
}

/// Reference per-sample cascade evaluation (no caching).
pub fn evaluate_cascade(
    cascade: &DecodedCascade,
    pool: &ModelPool,
    mode: ConfidenceMode,
) -> Result<CascadeMetrics> {
    check_stages(cascade, pool)?;
    let last = cascade.len() - 1;
    let mut reached = vec![0usize; cascade.len()];
    let mut exit_stage = Vec::with_capacity(pool.num_samples());
    let mut correct = 0;
    let mut sum = vec![0.0f64; pool.num_classes()];
    for (s, &label) in pool.labels().iter().enumerate() {
        sum.fill(0.0);
        let mut used = 0;
        for (i, st) in cascade.stages.iter().enumerate() {
            reached[i] += 1;
            pool.model(st.model).predictions().add_row_to(s, &mut sum);
            used += 1;
            if i == last {
                break;
            }
            let t = st.threshold.expect("non-final stage carries a threshold");
            if confidence_of_sum(&sum, used as f64, mode) > t {
                break;
            }
        }
        if argmax_of_mean(&sum, used as f64) == label as usize {
            correct += 1;
        }
        exit_stage.push(used as u32 - 1);
    }
    let mut metrics = CascadeMetrics::from_counts(pool, cascade, &reached, correct);
    metrics.exit_stage = Some(exit_stage);
    Ok(metrics)
}

/// Every member sees every sample; prediction is the argmax of the mean output.
pub fn evaluate_ensemble(models: &[usize], pool: &ModelPool) -> Result<CascadeMetrics> {
    let cascade = DecodedCascade::ensemble(models);
    check_stages(&cascade, pool)?;
    let mut sum = vec![0.0f64; pool.num_classes()];
    let count = models.len() as f64;
    let correct = pool
        .labels()
        .iter()
        .enumerate()
        .filter(|&(s, &label)| {
            sum.fill(0.0);
            for &m in models {
                pool.model(m).predictions().add_row_to(s, &mut sum);
            }
            argmax_of_mean(&sum, count) == label as usize
        })
        .count();
    let reached = vec![pool.num_samples(); models.len()];
    Ok(CascadeMetrics::from_counts(
        pool, &cascade, &reached, correct,
    ))
}

/// `(N + 1)^k * grid_len^(k - 1)`; sizes beyond `i64::MAX` are reported as
/// [`Error::SpaceOverflow`].
pub fn genome_space_size(num_models: u64, k: u32, grid_len: u64) -> Result<u64> {
    if num_models == 0 || k == 0 || grid_len == 0 {
        return Err(Error::Config(
            "genome space arguments must all be >= 1".into(),
        ));
    }
    let models = (num_models as u128 + 1).checked_pow(k);
    let thresholds = (grid_len as u128).checked_pow(k - 1);
    models
        .zip(thresholds)
        .and_then(|(m, t)| m.checked_mul(t))
        .filter(|&size| size <= i64::MAX as u128)
        .map(|size| size as u64)
        .ok_or(Error::SpaceOverflow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::tests::worked_pool;

    fn grid() -> ThresholdGrid {
        ThresholdGrid::default()
    }

    #[test]
    fn default_grid_has_51_values() {
        let g = grid();
        assert_eq!(g.len(), 51);
        assert_eq!(g.value(0), 0.0);
        assert_eq!(g.value(25), 0.5);
        assert_eq!(g.value(50), 1.0);
        assert_eq!(g.index_of(0.02), Some(1));
        assert_eq!(g.index_of(0.03), None);
        assert!(ThresholdGrid::new(vec![0.5, 0.5, 1.0]).is_err());
        assert!(ThresholdGrid::new(vec![0.0, 0.5]).is_err());
        assert!(ThresholdGrid::new(vec![0.5, 1.0]).is_ok());
    }

    #[test]
    fn decode_drops_noops_and_trailing_threshold() {
        let g = grid();
        let genome = CascadeGenome::new(vec![2, 0, 5], vec![25, 45]);
        let d = decode(&genome, &g);
        assert_eq!(
            d.stages,
            vec![
                Stage {
                    model: 1,
                    threshold: Some(0.5)
                },
                Stage {
                    model: 4,
                    threshold: None
                },
            ]
        );
        assert!(decode(&CascadeGenome::new(vec![0, 0, 0], vec![1, 2]), &g).is_empty());
        let single = decode(&CascadeGenome::new(vec![7], vec![]), &g);
        assert_eq!(
            single.stages,
            vec![Stage {
                model: 6,
                threshold: None
            }]
        );
        // the last active stage loses its own threshold
        let d = decode(&CascadeGenome::new(vec![3, 4, 0], vec![10, 20]), &g);
        assert_eq!(d.stages[0].threshold, Some(0.2));
        assert_eq!(d.stages[1].threshold, None);
    }

    #[test]
    fn from_slots_matches_decode() {
        let g = grid();
        let genome = CascadeGenome::new(vec![0, 2, 1], vec![3, 40]);
        let values: Vec<f64> = genome
            .thresholds
            .iter()
            .map(|&t| g.value(t as usize))
            .collect();
        assert_eq!(
            DecodedCascade::from_slots(&genome.models, &values).unwrap(),
            decode(&genome, &g)
        );
        assert!(DecodedCascade::from_slots(&[1, 2], &[]).is_err());
    }

    #[test]
    fn genome_validation() {
        let g = CascadeGenome::new(vec![1, 4], vec![0]);
        assert!(g.validate(3, 51).is_err());
        assert!(g.validate(4, 51).is_ok());
        assert!(CascadeGenome::new(vec![1, 2], vec![])
            .validate(4, 51)
            .is_err());
        assert!(CascadeGenome::new(vec![1, 2], vec![51])
            .validate(4, 51)
            .is_err());
    }

    #[test]
    fn confidence_values() {
        assert_eq!(
            confidence(&[0.9, 0.1], ConfidenceMode::MaxProb).unwrap(),
            0.9
        );
        assert_eq!(
            confidence(&[0.25, 0.25, 0.25, 0.25], ConfidenceMode::MaxProb).unwrap(),
            0.25
        );
        let gap = confidence(&[0.6, 0.3, 0.1], ConfidenceMode::TopGap).unwrap();
        assert!((gap - 0.3).abs() < 1e-15);
        assert_eq!(
            confidence(&[0.5, 0.5], ConfidenceMode::TopGap).unwrap(),
            0.0
        );
        assert!(confidence(&[1.0], ConfidenceMode::MaxProb).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_of_mean(&[0.5, 0.5], 2.0), 0);
        assert_eq!(argmax_of_mean(&[0.1, 0.7, 0.2], 3.0), 1);
        let row: Vec<f64> = (0..19).map(|i| ((i * 7) % 11) as f64).collect();
        assert_eq!(max_first(&row), (10.0, 3));
        assert_eq!(max_first(&row).1, argmax(&row));
    }

    #[test]
    fn worked_two_sample_cascade() {
        let pool = worked_pool();
        let cascade = DecodedCascade {
            stages: vec![
                Stage {
                    model: 0,
                    threshold: Some(0.7),
                },
                Stage {
                    model: 1,
                    threshold: None,
                },
            ],
        };
        let m = evaluate_cascade(&cascade, &pool, ConfidenceMode::MaxProb).unwrap();
        assert_eq!(m.accuracy_pct, 100.0);
        assert_eq!(m.stage_fractions, vec![1.0, 0.5]);
        assert_eq!(m.expected_mflops, 250.0);
        assert_eq!(m.exit_stage, Some(vec![0, 1]));
    }

    #[test]
    fn single_stage_matches_model() {
        let pool = worked_pool();
        let c = DecodedCascade {
            stages: vec![Stage {
                model: 1,
                threshold: None,
            }],
        };
        let m = evaluate_cascade(&c, &pool, ConfidenceMode::MaxProb).unwrap();
        assert_eq!(m.accuracy_pct, pool.model_accuracy(1));
        // sample 1 is a (0.5, 0.5) tie, which resolves to class 0 = label
        assert_eq!(m.accuracy_pct, 100.0);
        assert_eq!(m.expected_mflops, 300.0);
        assert_eq!(pool.model_accuracy(0), 50.0);
        assert_eq!(m.stage_fractions, vec![1.0]);
    }

    #[test]
    fn ensemble_rules() {
        let pool = worked_pool();
        let both = evaluate_ensemble(&[0, 1], &pool).unwrap();
        assert_eq!(both.expected_mflops, 400.0);
        assert_eq!(both.stage_fractions, vec![1.0, 1.0]);
        // sample 2: mean (0.4, 0.6) with label 1 is correct
        assert_eq!(both.correct, 2);
        let solo = evaluate_ensemble(&[0], &pool).unwrap();
        let c = DecodedCascade {
            stages: vec![Stage {
                model: 0,
                threshold: None,
            }],
        };
        let mut reference = evaluate_cascade(&c, &pool, ConfidenceMode::MaxProb).unwrap();
        reference.exit_stage = None;
        assert_eq!(solo, reference);
        assert!(matches!(
            evaluate_ensemble(&[], &pool),
            Err(Error::EmptyCascade)
        ));
    }

    #[test]
    fn evaluation_errors() {
        let pool = worked_pool();
        assert!(matches!(
            evaluate_cascade(&DecodedCascade::default(), &pool, ConfidenceMode::MaxProb),
            Err(Error::EmptyCascade)
        ));
        let c = DecodedCascade {
            stages: vec![Stage {
                model: 2,
                threshold: None,
            }],
        };
        assert!(matches!(
            evaluate_cascade(&c, &pool, ConfidenceMode::MaxProb),
            Err(Error::ModelIndex {
                index: 3,
                models: 2
            })
        ));
    }

    #[test]
    fn space_sizes() {
        assert_eq!(genome_space_size(3, 2, 2).unwrap(), 32);
        assert_eq!(genome_space_size(9, 1, 51).unwrap(), 10);
        // 301^5 * 51^4 = 2470770901501 * 6765201 > 2^63
        let exact = 2_470_770_901_501u128 * 6_765_201u128;
        assert!(exact > 1u128 << 63);
        assert!(matches!(
            genome_space_size(300, 5, 51),
            Err(Error::SpaceOverflow)
        ));
        assert_eq!(genome_space_size(300, 2, 51).unwrap(), 301 * 301 * 51);
        assert!(genome_space_size(0, 1, 1).is_err());
    }
}
