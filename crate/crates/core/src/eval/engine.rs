//! Prefix-memoized cascade evaluation.
//!
//! Evolutionary populations re-evaluate the same cascade prefixes over and
//! over. The state after a prefix (which samples reached its last stage, their
//! running output sums, and the confidence/correctness of each running mean)
//! depends only on the prefix, so it is cached and extended stage by stage.
//! Per-sample arithmetic is identical to [`super::evaluate_cascade`], so cached
//! and uncached results are bit-equal.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use super::{
    argmax, check_stages, confidence_of_sum, score_sum, CascadeMetrics, ConfidenceMode,
    DecodedCascade,
};
use crate::error::Result;
use crate::pool::ModelPool;

/// Default memory budget for cached prefix states.
pub const DEFAULT_MEMO_BYTES: usize = 512 << 20;

/// Normalized rows of every model are kept as `f64` when they fit here.
pub const DENSE_ROW_BYTES: usize = 1 << 30;

const CHUNK: usize = 512;

/// Single-model statistics for every sample.
struct Head {
    conf: Vec<f64>,
    correct: Vec<bool>,
    n_correct: usize,
}

/// Samples that reached the last stage of a prefix, with their running sums.
struct PrefixState {
    reached: Vec<usize>,
    exited_correct: usize,
    samples: Vec<u32>,
    sums: Vec<f64>,
    conf: Vec<f64>,
    correct: Vec<bool>,
}

impl PrefixState {
    fn bytes(&self) -> usize {
        self.samples.len() * 4 + (self.sums.len() + self.conf.len()) * 8 + self.correct.len() + 64
    }
}

#[derive(Default)]
struct PrefixCache {
    map: HashMap<Vec<u64>, Arc<PrefixState>>,
    order: VecDeque<Vec<u64>>,
    bytes: usize,
}

/// Cascade evaluator bound to one pool and one confidence function.
pub struct Evaluator<'a> {
    pool: &'a ModelPool,
    mode: ConfidenceMode,
    heads: Vec<OnceLock<Head>>,
    dense: Option<Vec<OnceLock<Vec<f64>>>>,
    cache: Mutex<PrefixCache>,
    capacity: usize,
    max_cached_depth: usize,
}

fn prefix_key(cascade: &DecodedCascade, depth: usize) -> Vec<u64> {
    let mut key = Vec::with_capacity(2 * depth);
    for (i, st) in cascade.stages[..depth].iter().enumerate() {
        key.push(st.model as u64);
        if i + 1 < depth {
            key.push(st.threshold.map_or(u64::MAX, f64::to_bits));
        }
    }
    key
}

impl<'a> Evaluator<'a> {
    pub fn new(pool: &'a ModelPool, mode: ConfidenceMode) -> Self {
        Self::with_memo_bytes(pool, mode, DEFAULT_MEMO_BYTES)
    }

    /// `capacity` bounds the bytes held by cached prefix states; 0 disables caching.
    pub fn with_memo_bytes(pool: &'a ModelPool, mode: ConfidenceMode, capacity: usize) -> Self {
        Self {
            pool,
            mode,
            heads: (0..pool.num_models()).map(|_| OnceLock::new()).collect(),
            dense: (pool.num_models() * pool.num_samples() * pool.num_classes() * 8
                <= DENSE_ROW_BYTES)
                .then(|| (0..pool.num_models()).map(|_| OnceLock::new()).collect()),
            cache: Mutex::new(PrefixCache::default()),
            capacity,
            max_cached_depth: usize::MAX,
        }
    }

    /// States of cascades this deep are never extended, so they are not cached.
    pub fn with_max_depth(mut self, k: usize) -> Self {
        self.max_cached_depth = k.saturating_sub(1).max(1);
        self
    }

    pub fn pool(&self) -> &'a ModelPool {
        self.pool
    }

    pub fn mode(&self) -> ConfidenceMode {
        self.mode
    }

    pub fn cached_states(&self) -> usize {
        self.cache.lock().unwrap().map.len()
    }

    pub fn evaluate(&self, cascade: &DecodedCascade) -> Result<CascadeMetrics> {
        check_stages(cascade, self.pool)?;
        let depth = cascade.len();
        let head = self.head(cascade.stages[0].model);
        if depth == 1 {
            return Ok(CascadeMetrics::from_counts(
                self.pool,
                cascade,
                &[self.pool.num_samples()],
                head.n_correct,
            ));
        }

        let hit = (2..=depth)
            .rev()
            .find_map(|d| self.lookup(&prefix_key(cascade, d)).map(|state| (d, state)));
        let (mut d, mut state) = match hit {
            Some(hit) => hit,
            None => {
                let materialize = depth > 2 || self.cacheable(2);
                let state = self.head_state(head, cascade, materialize);
                if !materialize {
                    return Ok(self.metrics(cascade, &state));
                }
                let state = Arc::new(state);
                self.store(cascade, 2, &state);
                (2, state)
            }
        };
        while d < depth {
            let materialize = d + 1 < depth || self.cacheable(d + 1);
            let next = self.extend(&state, cascade, d, materialize);
            d += 1;
            if !materialize {
                return Ok(self.metrics(cascade, &next));
            }
            state = Arc::new(next);
            self.store(cascade, d, &state);
        }
        Ok(self.metrics(cascade, &state))
    }

    fn metrics(&self, cascade: &DecodedCascade, state: &PrefixState) -> CascadeMetrics {
        let correct = state.exited_correct + state.correct.iter().filter(|&&c| c).count();
        CascadeMetrics::from_counts(self.pool, cascade, &state.reached, correct)
    }

    fn cacheable(&self, depth: usize) -> bool {
        self.capacity > 0 && depth <= self.max_cached_depth
    }

    /// Ensemble of the given zero-based models (all thresholds 1.0).
    pub fn evaluate_ensemble(&self, models: &[usize]) -> Result<CascadeMetrics> {
        self.evaluate(&DecodedCascade::ensemble(models))
    }

    fn lookup(&self, key: &[u64]) -> Option<Arc<PrefixState>> {
        if self.capacity == 0 {
            return None;
        }
        self.cache.lock().unwrap().map.get(key).cloned()
    }

    fn store(&self, cascade: &DecodedCascade, depth: usize, state: &Arc<PrefixState>) {
        if self.capacity == 0 || depth > self.max_cached_depth {
            return;
        }
        let size = state.bytes();
        if size > self.capacity {
            return;
        }
        let key = prefix_key(cascade, depth);
        let mut cache = self.cache.lock().unwrap();
        if cache.map.contains_key(&key) {
            return;
        }
        while cache.bytes + size > self.capacity {
            let Some(old) = cache.order.pop_front() else {
                break;
            };
            if let Some(evicted) = cache.map.remove(&old) {
                cache.bytes -= evicted.bytes();
            }
        }
        cache.bytes += size;
        cache.order.push_back(key.clone());
        cache.map.insert(key, Arc::clone(state));
    }

    fn head(&self, model: usize) -> &Head {
        self.heads[model].get_or_init(|| {
            let pool = self.pool;
            let preds = pool.model(model).predictions();
            let c = pool.num_classes();
            let chunks: Vec<(Vec<f64>, Vec<bool>)> = (0..pool.num_samples())
                .collect::<Vec<_>>()
                .par_chunks(CHUNK)
                .map(|idx| {
                    let mut row = vec![0.0; c];
                    let mut conf = Vec::with_capacity(idx.len());
                    let mut correct = Vec::with_capacity(idx.len());
                    for &s in idx {
                        row.fill(0.0);
                        preds.add_row_to(s, &mut row);
                        conf.push(confidence_of_sum(&row, 1.0, self.mode));
                        correct.push(argmax(&row) == pool.labels()[s] as usize);
                    }
                    (conf, correct)
                })
                .collect();
            let mut conf = Vec::with_capacity(pool.num_samples());
            let mut correct = Vec::with_capacity(pool.num_samples());
            for (a, b) in chunks {
                conf.extend(a);
                correct.extend(b);
            }
            let n_correct = correct.iter().filter(|&&c| c).count();
            Head {
                conf,
                correct,
                n_correct,
            }
        })
    }

    /// `out = base + p` (or `out += p`) for the normalized row `p` of `model`.
    #[inline]
    fn add_row(&self, model: usize, sample: usize, base: Option<&[f64]>, out: &mut [f64]) {
        let preds = self.pool.model(model).predictions();
        let Some(dense) = &self.dense else {
            match base {
                Some(b) => preds.add_row_into(sample, b, out),
                None => preds.add_row_to(sample, out),
            }
            return;
        };
        let c = out.len();
        let rows = dense[model].get_or_init(|| {
            let mut rows = Vec::with_capacity(preds.rows() * c);
            for s in 0..preds.rows() {
                let sum = preds.row_sum(s);
                rows.extend(preds.row(s).iter().map(|&v| v as f64 / sum));
            }
            rows
        });
        let row = &rows[sample * c..(sample + 1) * c];
        match base {
            Some(b) => {
                for ((o, &b), &p) in out.iter_mut().zip(b).zip(row) {
                    *o = b + p;
                }
            }
            None => {
                for (o, &p) in out.iter_mut().zip(row) {
                    *o += p;
                }
            }
        }
    }

    /// Depth-2 state: survivors of stage 0 with the sums of stages 0 and 1.
    fn head_state(&self, head: &Head, cascade: &DecodedCascade, materialize: bool) -> PrefixState {
        let t = cascade.stages[0]
            .threshold
            .expect("non-final stage threshold");
        let mut samples = Vec::new();
        let mut exited_correct = 0;
        for (s, (&conf, &ok)) in head.conf.iter().zip(&head.correct).enumerate() {
            if conf > t {
                exited_correct += ok as usize;
            } else {
                samples.push(s as u32);
            }
        }
        let models = [cascade.stages[0].model, cascade.stages[1].model];
        let step = self.step(&samples, Base::Zero, &models, 2.0, materialize);
        PrefixState {
            reached: vec![self.pool.num_samples(), samples.len()],
            exited_correct: exited_correct + step.streamed_correct,
            samples,
            sums: step.sums,
            conf: step.conf,
            correct: step.correct,
        }
    }

    /// Applies the threshold of stage `depth - 1` and adds stage `depth`.
    fn extend(
        &self,
        prev: &PrefixState,
        cascade: &DecodedCascade,
        depth: usize,
        materialize: bool,
    ) -> PrefixState {
        let t = cascade.stages[depth - 1]
            .threshold
            .expect("non-final stage threshold");
        let mut samples = Vec::new();
        let mut keep = Vec::new();
        let mut exited_correct = prev.exited_correct;
        for (i, &s) in prev.samples.iter().enumerate() {
            if prev.conf[i] > t {
                exited_correct += prev.correct[i] as usize;
            } else {
                samples.push(s);
                keep.push(i);
            }
        }
        let base = Base::Rows {
            sums: &prev.sums,
            keep: &keep,
        };
        let model = cascade.stages[depth].model;
        let step = self.step(&samples, base, &[model], (depth + 1) as f64, materialize);
        let mut reached = prev.reached.clone();
        reached.push(samples.len());
        PrefixState {
            reached,
            exited_correct: exited_correct + step.streamed_correct,
            samples,
            sums: step.sums,
            conf: step.conf,
            correct: step.correct,
        }
    }

    /// For each sample: start from its base row, add the given models' rows
    /// in order, then score the mean over `count` outputs. Without
    /// `materialize` only the number of correct predictions is kept.
    fn step(
        &self,
        samples: &[u32],
        base: Base<'_>,
        models: &[usize],
        count: f64,
        materialize: bool,
    ) -> Step {
        let pool = self.pool;
        let c = pool.num_classes();
        let labels = pool.labels();
        let fill = |j: usize, s: usize, out: &mut [f64]| {
            let rest = match base {
                Base::Zero => {
                    out.fill(0.0);
                    models
                }
                Base::Rows { sums, keep } => {
                    let i = keep[j];
                    self.add_row(models[0], s, Some(&sums[i * c..(i + 1) * c]), out);
                    &models[1..]
                }
            };
            for &m in rest {
                self.add_row(m, s, None, out);
            }
        };

        if !materialize {
            let streamed_correct = samples
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, idx)| {
                    let mut row = vec![0.0; c];
                    idx.iter()
                        .enumerate()
                        .filter(|&(j, &s)| {
                            fill(ci * CHUNK + j, s as usize, &mut row);
                            score_sum(&row, count, self.mode).1 == labels[s as usize] as usize
                        })
                        .count()
                })
                .sum();
            return Step {
                streamed_correct,
                ..Step::default()
            };
        }

        let mut sums = vec![0.0; samples.len() * c];
        let mut conf = vec![0.0; samples.len()];
        let mut correct = vec![false; samples.len()];
        sums.par_chunks_mut(CHUNK * c)
            .zip(conf.par_chunks_mut(CHUNK))
            .zip(correct.par_chunks_mut(CHUNK))
            .zip(samples.par_chunks(CHUNK))
            .enumerate()
            .for_each(|(ci, (((sum_chunk, conf_chunk), ok_chunk), idx))| {
                for (j, &s) in idx.iter().enumerate() {
                    let s = s as usize;
                    let sum = &mut sum_chunk[j * c..(j + 1) * c];
                    fill(ci * CHUNK + j, s, sum);
                    let (conf, class) = score_sum(sum, count, self.mode);
                    conf_chunk[j] = conf;
                    ok_chunk[j] = class == labels[s] as usize;
                }
            });
        Step {
            sums,
            conf,
            correct,
            streamed_correct: 0,
        }
    }
}

/// Where the running sums of a new stage start.
#[derive(Clone, Copy)]
enum Base<'s> {
    Zero,
    /// Row `keep[j]` of the previous state's sums, for surviving sample `j`.
    Rows {
        sums: &'s [f64],
        keep: &'s [usize],
    },
}

#[derive(Default)]
struct Step {
    sums: Vec<f64>,
    conf: Vec<f64>,
    correct: Vec<bool>,
    streamed_correct: usize,
}
