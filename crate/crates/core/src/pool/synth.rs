//! Synthetic pools with controlled per-model accuracy, cost and error overlap.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelEntry, ModelPool, PredictionMatrix};
use crate::error::{Error, Result};

fn default_name() -> String {
    "synth".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPoolSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub num_models: usize,
    pub num_samples: usize,
    pub num_classes: usize,
    /// Target top-1 accuracy range in percent, inclusive.
    pub accuracy_range: (f64, f64),
    /// Cost range in MFLOPs, inclusive; the lower bound must be positive.
    pub flops_range: (f64, f64),
    /// 0 makes models err on nested (identical where sizes allow) sample
    /// sets; 1 draws every model's error set independently.
    pub diversity: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthPoolSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_models == 0 {
            return bad("num_models must be at least 1".into());
        }
        if self.num_samples == 0 {
            return bad("num_samples must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        let (lo, hi) = self.accuracy_range;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo > hi {
            return bad(format!(
                "accuracy_range ({lo}, {hi}) must satisfy 0 <= low <= high <= 100"
            ));
        }
        let (lo, hi) = self.flops_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return bad(format!(
                "flops_range ({lo}, {hi}) must satisfy 0 < low <= high"
            ));
        }
        if !(0.0..=1.0).contains(&self.diversity) {
            return bad(format!("diversity {} must lie in [0, 1]", self.diversity));
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Generates a pool whose models hit their target accuracies to within half
/// a sample.
///
/// Each sample gets a shared difficulty; each model ranks samples by a blend
/// of that difficulty and private noise (weighted by `diversity`) and errs on
/// the top `round((1 - a/100) * S)` of them. Confident-looking rows are more
/// often correct, so early exits behave like they do on real networks.
pub fn synth_pool(spec: &SynthPoolSpec) -> Result<ModelPool> {
    spec.validate()?;
    let s = spec.num_samples;
    let c = spec.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let labels: Vec<u32> = (0..s).map(|_| rng.random_range(0..c as u32)).collect();
    let difficulty: Vec<f64> = (0..s).map(|_| rng.random::<f64>()).collect();

    let mut models = Vec::with_capacity(spec.num_models);
    let mut logits = vec![0.0f64; c];
    for m in 0..spec.num_models {
        let target = uniform_in(&mut rng, spec.accuracy_range);
        let flops = uniform_in(&mut rng, spec.flops_range);
        let errors = (((1.0 - target / 100.0) * s as f64).round() as usize).min(s);

        let score: Vec<f64> = difficulty
            .iter()
            .map(|&u| (1.0 - spec.diversity) * u + spec.diversity * rng.random::<f64>())
            .collect();
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
        let mut wrong = vec![false; s];
        for &i in &order[..errors] {
            wrong[i] = true;
        }

        let mut values = Vec::with_capacity(s * c);
        for i in 0..s {
            let label = labels[i] as usize;
            for z in logits.iter_mut() {
                *z = rng.sample::<f64, _>(StandardNormal);
            }
            let e: f64 = rng.sample(Exp1);
            let (winner, margin) = if wrong[i] {
                let mut w = rng.random_range(0..c - 1);
                if w >= label {
                    w += 1;
                }
                // with two classes the label is already the runner-up
                if c > 2 && rng.random_bool(0.5) {
                    let runner_up = max_excluding(&logits, w, label);
                    logits[label] = runner_up + 0.05;
                }
                (w, 0.1 + 0.6 * e)
            } else {
                (label, 0.2 + 2.5 * (1.2 - score[i]) * e)
            };
            logits[winner] = max_excluding(&logits, winner, winner) + margin;

            let top = logits[winner];
            let total: f64 = logits.iter().map(|z| (z - top).exp()).sum();
            values.extend(logits.iter().map(|z| ((z - top).exp() / total) as f32));
        }
        let preds = PredictionMatrix::new(values, s, c)?;
        models.push(ModelEntry::new(format!("m{m:03}"), flops, preds)?);
    }
    ModelPool::new(spec.name.clone(), labels, c, models)
}

fn max_excluding(values: &[f64], skip_a: usize, skip_b: usize) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != skip_a && i != skip_b)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SynthPoolSpec {
        SynthPoolSpec {
            name: "t".into(),
            num_models: 10,
            num_samples: 2000,
            num_classes: 10,
            accuracy_range: (60.0, 90.0),
            flops_range: (50.0, 500.0),
            diversity: 0.5,
            seed,
        }
    }

    #[test]
    fn same_seed_same_pool() {
        let mut small = spec(11);
        small.num_samples = 200;
        assert_eq!(synth_pool(&small).unwrap(), synth_pool(&small).unwrap());
        small.seed = 12;
        assert_ne!(synth_pool(&small).unwrap(), synth_pool(&spec(11)).unwrap());
    }

    #[test]
    fn rejects_infeasible_specs() {
        let mut s = spec(0);
        s.num_classes = 1;
        assert!(synth_pool(&s).is_err());
        let mut s = spec(0);
        s.num_models = 0;
        assert!(synth_pool(&s).is_err());
        let mut s = spec(0);
        s.accuracy_range = (80.0, 70.0);
        assert!(synth_pool(&s).is_err());
        let mut s = spec(0);
        s.flops_range = (0.0, 10.0);
        assert!(synth_pool(&s).is_err());
    }

    #[test]
    fn zero_diversity_nests_error_sets() {
        let mut s = spec(5);
        s.diversity = 0.0;
        s.num_models = 3;
        s.num_samples = 500;
        let pool = synth_pool(&s).unwrap();
        let wrong_sets: Vec<Vec<bool>> = (0..3)
            .map(|m| {
                let mut buf = vec![0.0; 10];
                (0..500)
                    .map(|i| {
                        pool.model(m).predictions().normalized_row_into(i, &mut buf);
                        crate::eval::argmax(&buf) != pool.labels()[i] as usize
                    })
                    .collect()
            })
            .collect();
        for a in &wrong_sets {
            for b in &wrong_sets {
                let a_in_b = a.iter().zip(b).all(|(x, y)| !*x || *y);
                let b_in_a = a.iter().zip(b).all(|(x, y)| !*y || *x);
                assert!(a_in_b || b_in_a);
            }
        }
    }
}
