//! Bi-objective Pareto utilities: minimize MFLOPs, maximize accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CascadeGenome, CascadeMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub mflops: f64,
    pub accuracy_pct: f64,
}

impl ObjectivePoint {
    pub fn new(mflops: f64, accuracy_pct: f64) -> Self {
        Self {
            mflops,
            accuracy_pct,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mflops.is_finite() && self.accuracy_pct.is_finite()
    }
}

impl From<&CascadeMetrics> for ObjectivePoint {
    fn from(m: &CascadeMetrics) -> Self {
        Self::new(m.expected_mflops, m.accuracy_pct)
    }
}

/// A scored genome.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontEntry {
    pub genome: CascadeGenome,
    pub point: ObjectivePoint,
    pub metrics: CascadeMetrics,
}

impl FrontEntry {
    pub fn new(genome: CascadeGenome, metrics: CascadeMetrics) -> Self {
        Self {
            genome,
            point: ObjectivePoint::from(&metrics),
            metrics,
        }
    }
}

/// `a` is no worse in both objectives and strictly better in at least one.
pub fn dominates(a: &ObjectivePoint, b: &ObjectivePoint) -> bool {
    a.mflops <= b.mflops
        && a.accuracy_pct >= b.accuracy_pct
        && (a.mflops < b.mflops || a.accuracy_pct > b.accuracy_pct)
}

/// Maximal nondominated subset sorted by MFLOPs ascending (accuracy then
/// strictly increases). Of several entries with the same point the first in
/// input order is kept; entries with non-finite objectives are skipped.
pub fn nondominated_front<T: Clone>(entries: &[T], point: impl Fn(&T) -> ObjectivePoint) -> Vec<T> {
    let mut order: Vec<usize> = (0..entries.len())
        .filter(|&i| point(&entries[i]).is_finite())
        .collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (point(&entries[a]), point(&entries[b]));
        pa.mflops
            .total_cmp(&pb.mflops)
            .then(pb.accuracy_pct.total_cmp(&pa.accuracy_pct))
            .then(a.cmp(&b))
    });
    let mut best = f64::NEG_INFINITY;
    let mut front = Vec::new();
    for i in order {
        let acc = point(&entries[i]).accuracy_pct;
        if acc > best {
            best = acc;
            front.push(entries[i].clone());
        }
    }
    front
}

pub fn nondominated_entries(entries: &[FrontEntry]) -> Vec<FrontEntry> {
    nondominated_front(entries, |e| e.point)
}

/// Accuracy in tenths of a percent, rounded half away from zero.
fn tenths(accuracy_pct: f64) -> i64 {
    (accuracy_pct * 10.0).round() as i64
}

/// Walks a front from least to most accurate and keeps an entry only when its
/// accuracy, rounded to one decimal, beats the last kept entry's.
pub fn filter_front<T: Clone>(front: &[T], accuracy: impl Fn(&T) -> f64) -> Vec<T> {
    let mut kept: Vec<T> = Vec::new();
    let mut last = None;
    for e in front {
        let r = tenths(accuracy(e));
        if last.is_none_or(|l| r > l) {
            kept.push(e.clone());
            last = Some(r);
        }
    }
    kept
}

pub fn filter_entries(front: &[FrontEntry]) -> Vec<FrontEntry> {
    filter_front(front, |e| e.point.accuracy_pct)
}

/// Reference and ideal corners of the normalization box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypervolumeConfig {
    pub ref_mflops: f64,
    pub ref_accuracy: f64,
    pub ideal_mflops: f64,
    pub ideal_accuracy: f64,
}

impl Default for HypervolumeConfig {
    fn default() -> Self {
        Self {
            ref_mflops: 4000.0,
            ref_accuracy: 60.0,
            ideal_mflops: 0.0,
            ideal_accuracy: 100.0,
        }
    }
}

impl HypervolumeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ref_mflops > self.ideal_mflops && self.ref_accuracy < self.ideal_accuracy) {
            return Err(Error::Config(format!(
                "hypervolume box is empty: reference ({}, {}), ideal ({}, {})",
                self.ref_mflops, self.ref_accuracy, self.ideal_mflops, self.ideal_accuracy
            )));
        }
        Ok(())
    }
}

/// Normalized 2-D hypervolume dominated by `points` within the box.
///
/// Points at or beyond the reference point add nothing; points beyond the
/// ideal corner are clamped onto it.
pub fn hypervolume(points: &[ObjectivePoint], cfg: &HypervolumeConfig) -> f64 {
    let clipped: Vec<ObjectivePoint> = points
        .iter()
        .filter(|p| p.is_finite() && p.mflops < cfg.ref_mflops && p.accuracy_pct > cfg.ref_accuracy)
        .map(|p| {
            ObjectivePoint::new(
                p.mflops.max(cfg.ideal_mflops),
                p.accuracy_pct.min(cfg.ideal_accuracy),
            )
        })
        .collect();
    // sweeping only the front keeps dominated points out of the arithmetic,
    // so adding one leaves the result bit-identical
    let front = nondominated_front(&clipped, |p| *p);
    let mut area = 0.0;
    for (i, p) in front.iter().enumerate() {
        let next = front.get(i + 1).map_or(cfg.ref_mflops, |q| q.mflops);
        area += (next - p.mflops) * (p.accuracy_pct - cfg.ref_accuracy);
    }
    area / ((cfg.ref_mflops - cfg.ideal_mflops) * (cfg.ideal_accuracy - cfg.ref_accuracy))
}

/// For every multiple of 100 MFLOPs spanning the front, picks the entry
/// closest to it (ties to the cheaper entry), deduplicated and named
/// `ENCAS@<rounded MFLOPs>`.
pub fn representative_subset<T: Clone>(
    front: &[T],
    mflops: impl Fn(&T) -> f64,
) -> Result<Vec<(String, T)>> {
    let finite: Vec<usize> = (0..front.len())
        .filter(|&i| mflops(&front[i]).is_finite())
        .collect();
    if finite.is_empty() {
        return Err(Error::Config(
            "representative subset of an empty front".into(),
        ));
    }
    let lo = finite
        .iter()
        .map(|&i| mflops(&front[i]))
        .fold(f64::INFINITY, f64::min);
    let hi = finite
        .iter()
        .map(|&i| mflops(&front[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / 100.0).floor() as i64;
    let last = (hi / 100.0).ceil() as i64;

    let mut chosen: Vec<usize> = Vec::new();
    for k in first..=last {
        let target = 100.0 * k as f64;
        let best = finite
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let (fa, fb) = (mflops(&front[a]), mflops(&front[b]));
                (fa - target)
                    .abs()
                    .total_cmp(&(fb - target).abs())
                    .then(fa.total_cmp(&fb))
                    .then(a.cmp(&b))
            })
            .unwrap();
        if !chosen.contains(&best) {
            chosen.push(best);
        }
    }
    chosen.sort_by(|&a, &b| {
        mflops(&front[a])
            .total_cmp(&mflops(&front[b]))
            .then(a.cmp(&b))
    });
    Ok(chosen
        .into_iter()
        .map(|i| {
            let name = format!("ENCAS@{}", mflops(&front[i]).round() as i64);
            (name, front[i].clone())
        })
        .collect())
}
