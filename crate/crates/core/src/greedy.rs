//! GreedyCascade-style baseline: grow cascades by prepending cheap gates in
//! front of an anchor model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CascadeGenome, ConfidenceMode, DecodedCascade, Evaluator, Stage, ThresholdGrid};
use crate::pareto::{nondominated_entries, FrontEntry};
use crate::pool::ModelPool;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchors {
    All,
    /// The most accurate `ceil(f * N)` models (at least one).
    TopFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    pub grid: ThresholdGrid,
    pub max_stages: usize,
    pub anchors: Anchors,
    pub confidence: ConfidenceMode,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            grid: ThresholdGrid::default(),
            max_stages: 3,
            anchors: Anchors::All,
            confidence: ConfidenceMode::MaxProb,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_stages == 0 {
            return Err(Error::Config("max_stages must be at least 1".into()));
        }
        if let Anchors::TopFraction(f) = self.anchors {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "anchor fraction {f} is outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    pub front: Vec<FrontEntry>,
    /// Cascade evaluations performed, single models included.
    pub evaluations: u64,
}

/// Genome of length `2 * max_stages - 1` that decodes to `stages`.
fn to_genome(stages: &[(usize, usize)], max_stages: usize, grid: &ThresholdGrid) -> CascadeGenome {
    let top = grid.top_index() as u32;
    let mut models = vec![0u32; max_stages];
    let mut thresholds = vec![top; max_stages - 1];
    for (i, &(m, t)) in stages.iter().enumerate() {
        models[i] = m as u32 + 1;
        if i + 1 < stages.len() {
            thresholds[i] = t as u32;
        }
    }
    CascadeGenome::new(models, thresholds)
}

fn to_cascade(stages: &[(usize, usize)], grid: &ThresholdGrid) -> DecodedCascade {
    let last = stages.len() - 1;
    DecodedCascade {
        stages: stages
            .iter()
            .enumerate()
            .map(|(i, &(model, t))| Stage {
                model,
                threshold: (i < last).then(|| grid.value(t)),
            })
            .collect(),
    }
}

/// Builds one cascade per anchor, then returns the nondominated set of those
/// cascades and all single models.
///
/// From the current cascade every (model, threshold) prepend is tried; the
/// one with the lowest expected MFLOPs among those that lower cost without
/// lowering accuracy is kept, ties going to the lower model index and then
/// the lower threshold.
pub fn greedy_fronts(pool: &ModelPool, cfg: &GreedyConfig) -> Result<GreedyResult> {
    cfg.validate()?;
    let n = pool.num_models();
    if n == 0 {
        return Err(Error::InvalidPool("empty pool".into()));
    }
    let evaluator = Evaluator::new(pool, cfg.confidence);
    let grid = &cfg.grid;
    let score = |stages: &[(usize, usize)]| -> FrontEntry {
        let metrics = evaluator
            .evaluate(&to_cascade(stages, grid))
            .expect("greedy cascades use pool models");
        FrontEntry::new(to_genome(stages, cfg.max_stages, grid), metrics)
    };

    let mut evaluations = 0u64;
    let singles: Vec<FrontEntry> = (0..n).map(|m| score(&[(m, 0)])).collect();
    evaluations += n as u64;

    let mut by_accuracy: Vec<usize> = (0..n).collect();
    by_accuracy.sort_by(|&a, &b| {
        singles[b]
            .point
            .accuracy_pct
            .total_cmp(&singles[a].point.accuracy_pct)
            .then(a.cmp(&b))
    });
    let anchor_count = match cfg.anchors {
        Anchors::All => n,
        Anchors::TopFraction(f) => ((f * n as f64).ceil() as usize).clamp(1, n),
    };

    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|p| (0..grid.len()).map(move |t| (p, t)))
        .collect();
    let mut all = singles;
    for &anchor in &by_accuracy[..anchor_count] {
        let mut stages = vec![(anchor, 0)];
        let mut current = all[anchor].clone();
        while stages.len() < cfg.max_stages {
            let scored: Vec<FrontEntry> = candidates
                .par_iter()
                .map(|&c| {
                    let mut s = Vec::with_capacity(stages.len() + 1);
                    s.push(c);
                    s.extend_from_slice(&stages);
                    score(&s)
                })
                .collect();
            evaluations += scored.len() as u64;
            // candidates are in (model, threshold) order, so the first
            // minimum wins ties
            let best = scored
                .into_iter()
                .zip(&candidates)
                .filter(|(e, _)| {
                    e.point.accuracy_pct >= current.point.accuracy_pct
                        && e.point.mflops < current.point.mflops
                })
                .reduce(|a, b| {
                    if b.0.point.mflops < a.0.point.mflops {
                        b
                    } else {
                        a
                    }
                });
            match best {
                Some((entry, &c)) => {
                    stages.insert(0, c);
                    current = entry;
                }
                None => break,
            }
        }
        if stages.len() > 1 {
            all.push(current);
        }
    }
    Ok(GreedyResult {
        front: nondominated_entries(&all),
        evaluations,
    })
}
