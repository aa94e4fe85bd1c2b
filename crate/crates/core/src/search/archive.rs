use crate::pareto::{dominates, FrontEntry, ObjectivePoint};

/// Every nondominated solution seen so far, sorted by MFLOPs ascending.
///
/// No entry dominates another and no two entries share an objective point.
#[derive(Debug, Clone, Default)]
pub struct ElitistArchive {
    entries: Vec<FrontEntry>,
}

impl ElitistArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[FrontEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self) -> Vec<ObjectivePoint> {
        self.entries.iter().map(|e| e.point).collect()
    }

    /// Inserts `entry` unless an archived point dominates or equals it;
    /// drops archived entries that `entry` dominates.
    pub fn insert(&mut self, entry: &FrontEntry) -> bool {
        let p = entry.point;
        if !p.is_finite() {
            return false;
        }
        if self
            .entries
            .iter()
            .any(|e| e.point == p || dominates(&e.point, &p))
        {
            return false;
        }
        self.entries.retain(|e| !dominates(&p, &e.point));
        let at = self.entries.partition_point(|e| e.point.mflops < p.mflops);
        self.entries.insert(at, entry.clone());
        debug_assert!(self.is_consistent());
        true
    }

    fn is_consistent(&self) -> bool {
        self.entries.iter().enumerate().all(|(i, a)| {
            self.entries[i + 1..].iter().all(|b| {
                a.point != b.point
                    && !dominates(&a.point, &b.point)
                    && !dominates(&b.point, &a.point)
            })
        })
    }

    pub fn into_entries(self) -> Vec<FrontEntry> {
        self.entries
    }
}

/// Free-function form of [`ElitistArchive::insert`].
pub fn archive_insert(archive: &mut ElitistArchive, entry: &FrontEntry) -> bool {
    archive.insert(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{CascadeGenome, CascadeMetrics};

    pub(crate) fn entry(mflops: f64, acc: f64) -> FrontEntry {
        let metrics = CascadeMetrics {
            accuracy_pct: acc,
            expected_mflops: mflops,
            stage_fractions: vec![1.0],
            correct: 0,
            num_samples: 1,
            exit_stage: None,
        };
        FrontEntry::new(CascadeGenome::new(vec![1], vec![]), metrics)
    }

    #[test]
    fn insertion_rules() {
        let mut a = ElitistArchive::new();
        assert!(archive_insert(&mut a, &entry(100.0, 80.0)));
        assert!(a.insert(&entry(200.0, 90.0)));
        assert!(!a.insert(&entry(150.0, 75.0)));
        assert!(!a.insert(&entry(100.0, 80.0)));
        assert_eq!(a.len(), 2);
        assert!(a.insert(&entry(50.0, 95.0)));
        assert_eq!(a.points(), vec![ObjectivePoint::new(50.0, 95.0)]);
        assert!(!a.insert(&entry(f64::INFINITY, 0.0)));
    }

    #[test]
    fn stays_sorted() {
        let mut a = ElitistArchive::new();
        for (m, acc) in [(300.0, 90.0), (100.0, 70.0), (200.0, 80.0), (150.0, 75.0)] {
            assert!(a.insert(&entry(m, acc)));
        }
        let m: Vec<f64> = a.points().iter().map(|p| p.mflops).collect();
        assert_eq!(m, vec![100.0, 150.0, 200.0, 300.0]);
    }
}
