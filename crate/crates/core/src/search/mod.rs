//! Multi-objective search over cascade genomes.
//!
//! Three backends share one budgeted fitness function and one elitist
//! archive: MO-GOMEA (linkage-learning gene-pool optimal mixing), uniform
//! random sampling, and exhaustive enumeration for small spaces.

mod archive;
mod baselines;
mod gomea;
mod linkage;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    decode, CascadeGenome, CascadeMetrics, ConfidenceMode, Evaluator, ThresholdGrid,
};
use crate::pareto::{hypervolume, FrontEntry, HypervolumeConfig};
use crate::pool::ModelPool;

pub use archive::{archive_insert, ElitistArchive};
pub use baselines::{exhaustive_run, random_search_run};
pub use gomea::{cluster_population, gom_step, mogomea_run, Clustering};
pub use linkage::{learn_linkage_tree, normalized_mutual_information, LinkageModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Mogomea,
    Random,
    Exhaustive,
}

/// What a genome is scored as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitnessMode {
    #[default]
    Cascade,
    /// Thresholds are pinned to 1.0 and the active models are averaged on
    /// every sample; cost is the sum of member costs.
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub backend: Backend,
    pub budget: u64,
    /// Maximum cascade size.
    pub k: usize,
    pub grid: ThresholdGrid,
    pub confidence: ConfidenceMode,
    pub mode: FitnessMode,
    pub seed: u64,
    pub population_size: usize,
    pub cluster_count: usize,
    pub seed_singletons: bool,
    /// Largest genome space the exhaustive backend will enumerate.
    pub exhaustive_limit: u64,
    /// Memory budget for cached cascade prefixes.
    pub memo_bytes: usize,
    /// Reference box for the per-generation hypervolume trace.
    pub hv_reference: HypervolumeConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mogomea,
            budget: 600_000,
            k: 5,
            grid: ThresholdGrid::default(),
            confidence: ConfidenceMode::MaxProb,
            mode: FitnessMode::Cascade,
            seed: 0,
            population_size: 100,
            cluster_count: 5,
            seed_singletons: true,
            exhaustive_limit: 10_000_000,
            memo_bytes: crate::eval::DEFAULT_MEMO_BYTES,
            hv_reference: HypervolumeConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1 evaluation".into()));
        }
        if self.k == 0 {
            return Err(Error::Config(
                "maximum cascade size k must be at least 1".into(),
            ));
        }
        if self.backend == Backend::Mogomea {
            if self.population_size < 2 {
                return Err(Error::Config("population_size must be at least 2".into()));
            }
            if self.cluster_count == 0 {
                return Err(Error::Config("cluster_count must be at least 1".into()));
            }
        }
        self.hv_reference.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Final nondominated set, MFLOPs ascending.
    pub front: Vec<FrontEntry>,
    pub evaluations_used: u64,
    /// Archive hypervolume after initialization and after every generation
    /// (or every batch for the sampling backends).
    pub hv_trace: Vec<f64>,
}

/// Scores genomes against a budget.
pub trait FitnessFn {
    /// `None` once the budget is spent.
    fn evaluate(&mut self, genome: &CascadeGenome) -> Option<FrontEntry>;
}

impl<F: FnMut(&CascadeGenome) -> Option<FrontEntry>> FitnessFn for F {
    fn evaluate(&mut self, genome: &CascadeGenome) -> Option<FrontEntry> {
        self(genome)
    }
}

/// Fitness over a pool that counts every evaluation, including genomes that
/// decode to an empty cascade (scored with the worst-case sentinel).
pub struct BudgetedFitness<'a> {
    evaluator: Evaluator<'a>,
    grid: ThresholdGrid,
    mode: FitnessMode,
    budget: u64,
    used: u64,
}

impl<'a> BudgetedFitness<'a> {
    pub fn new(pool: &'a ModelPool, cfg: &SearchConfig) -> Self {
        Self {
            evaluator: Evaluator::with_memo_bytes(pool, cfg.confidence, cfg.memo_bytes)
                .with_max_depth(cfg.k),
            grid: cfg.grid.clone(),
            mode: cfg.mode,
            budget: cfg.budget,
            used: 0,
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.used
    }

    pub fn pool(&self) -> &'a ModelPool {
        self.evaluator.pool()
    }

    /// Scores without touching the budget.
    pub fn score(&self, genome: &CascadeGenome) -> FrontEntry {
        let metrics = match self.mode {
            FitnessMode::Cascade => {
                let cascade = decode(genome, &self.grid);
                if cascade.is_empty() {
                    None
                } else {
                    Some(self.evaluator.evaluate(&cascade))
                }
            }
            FitnessMode::Ensemble => {
                let models: Vec<usize> = genome
                    .models
                    .iter()
                    .filter(|&&m| m != 0)
                    .map(|&m| m as usize - 1)
                    .collect();
                if models.is_empty() {
                    None
                } else {
                    Some(self.evaluator.evaluate_ensemble(&models))
                }
            }
        };
        let metrics = match metrics {
            Some(m) => m.expect("search genomes stay within the pool"),
            None => CascadeMetrics::empty_sentinel(self.pool().num_samples()),
        };
        FrontEntry::new(genome.clone(), metrics)
    }

    /// Scores as many of `genomes` as the budget allows, in parallel,
    /// returning results in input order.
    pub fn evaluate_batch(&mut self, genomes: &[CascadeGenome]) -> Vec<FrontEntry> {
        let take = (self.remaining().min(genomes.len() as u64)) as usize;
        self.used += take as u64;
        let this = &*self;
        genomes[..take].par_iter().map(|g| this.score(g)).collect()
    }
}

impl FitnessFn for BudgetedFitness<'_> {
    fn evaluate(&mut self, genome: &CascadeGenome) -> Option<FrontEntry> {
        if self.used >= self.budget {
            return None;
        }
        self.used += 1;
        Some(self.score(genome))
    }
}

/// Uniform genome; in ensemble mode threshold slots are pinned to 1.0.
pub(crate) fn random_genome(
    rng: &mut impl Rng,
    k: usize,
    num_models: usize,
    grid: &ThresholdGrid,
    mode: FitnessMode,
) -> CascadeGenome {
    let models = (0..k)
        .map(|_| rng.random_range(0..=num_models as u32))
        .collect();
    let thresholds = (0..k - 1)
        .map(|_| match mode {
            FitnessMode::Cascade => rng.random_range(0..grid.len() as u32),
            FitnessMode::Ensemble => grid.top_index() as u32,
        })
        .collect();
    CascadeGenome::new(models, thresholds)
}

/// Independent RNG stream for the `index`-th sampled genome.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn archive_hv(archive: &ElitistArchive, cfg: &SearchConfig) -> f64 {
    hypervolume(&archive.points(), &cfg.hv_reference)
}

/// Runs the configured backend.
pub fn search(pool: &ModelPool, cfg: &SearchConfig) -> Result<SearchResult> {
    match cfg.backend {
        Backend::Mogomea => mogomea_run(pool, cfg),
        Backend::Random => random_search_run(pool, cfg),
        Backend::Exhaustive => exhaustive_run(pool, cfg),
    }
}

/// Front of the pool's models taken on their own.
pub fn single_model_front(pool: &ModelPool, cfg: &SearchConfig) -> Vec<FrontEntry> {
    let fitness = BudgetedFitness::new(pool, cfg);
    let entries: Vec<FrontEntry> = (1..=pool.num_models() as u32)
        .map(|m| {
            let mut models = vec![0; cfg.k];
            models[0] = m;
            fitness.score(&CascadeGenome::new(
                models,
                vec![cfg.grid.top_index() as u32; cfg.k - 1],
            ))
        })
        .collect();
    crate::pareto::nondominated_entries(&entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::tests::worked_pool;

    #[test]
    fn config_validation() {
        let mut cfg = SearchConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.budget = 0;
        assert!(cfg.validate().is_err());
        let cfg = SearchConfig {
            population_size: 1,
            ..SearchConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SearchConfig {
            k: 0,
            ..SearchConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SearchConfig =
            serde_json::from_str(r#"{"backend": "random", "budget": 10}"#).unwrap();
        assert_eq!(cfg.backend, Backend::Random);
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.grid.len(), 51);
        let back: SearchConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn budget_counts_empty_genomes() {
        let pool = worked_pool();
        let cfg = SearchConfig {
            budget: 2,
            k: 2,
            ..SearchConfig::default()
        };
        let mut f = BudgetedFitness::new(&pool, &cfg);
        let empty = f
            .evaluate(&CascadeGenome::new(vec![0, 0], vec![3]))
            .unwrap();
        assert_eq!(empty.point.mflops, f64::INFINITY);
        assert_eq!(empty.point.accuracy_pct, 0.0);
        assert!(f
            .evaluate(&CascadeGenome::new(vec![1, 0], vec![3]))
            .is_some());
        assert!(f
            .evaluate(&CascadeGenome::new(vec![1, 0], vec![3]))
            .is_none());
        assert_eq!(f.used(), 2);
    }

    #[test]
    fn ensemble_mode_ignores_thresholds() {
        let pool = worked_pool();
        let cfg = SearchConfig {
            k: 2,
            mode: FitnessMode::Ensemble,
            ..SearchConfig::default()
        };
        let f = BudgetedFitness::new(&pool, &cfg);
        let e = f.score(&CascadeGenome::new(vec![1, 2], vec![0]));
        assert_eq!(e.metrics.stage_fractions, vec![1.0, 1.0]);
        assert_eq!(e.metrics.expected_mflops, 400.0);
    }
}
