//! Uniform random sampling and exhaustive enumeration.

use super::{
    archive_hv, random_genome, stream_rng, BudgetedFitness, ElitistArchive, FitnessMode,
    SearchConfig, SearchResult,
};
use crate::error::{Error, Result};
use crate::eval::{genome_space_size, CascadeGenome};
use crate::pool::ModelPool;

const ENUM_BATCH: u64 = 4096;

fn run_batches(
    pool: &ModelPool,
    cfg: &SearchConfig,
    total: u64,
    batch: u64,
    make: impl Fn(u64) -> CascadeGenome,
) -> SearchResult {
    let mut fitness = BudgetedFitness::new(pool, cfg);
    let mut archive = ElitistArchive::new();
    let mut hv_trace = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + batch).min(total);
        let genomes: Vec<CascadeGenome> = (start..end).map(&make).collect();
        for e in fitness.evaluate_batch(&genomes) {
            archive.insert(&e);
        }
        hv_trace.push(archive_hv(&archive, cfg));
        start = end;
    }
    SearchResult {
        front: archive.into_entries(),
        evaluations_used: fitness.used(),
        hv_trace,
    }
}

/// Samples `budget` genomes uniformly. Genome `i` is drawn from its own RNG
/// stream, so results do not depend on batching or worker count.
pub fn random_search_run(pool: &ModelPool, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let batch = cfg.population_size.max(1) as u64;
    let n = pool.num_models();
    Ok(run_batches(pool, cfg, cfg.budget, batch, |i| {
        random_genome(&mut stream_rng(cfg.seed, i), cfg.k, n, &cfg.grid, cfg.mode)
    }))
}

/// Evaluates every genome of the space in mixed-radix order.
pub fn exhaustive_run(pool: &ModelPool, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let n = pool.num_models();
    let grid_len = match cfg.mode {
        FitnessMode::Cascade => cfg.grid.len() as u64,
        FitnessMode::Ensemble => 1,
    };
    let size = genome_space_size(n as u64, cfg.k as u32, grid_len)?;
    if size > cfg.exhaustive_limit {
        return Err(Error::SpaceTooLarge {
            size,
            limit: cfg.exhaustive_limit,
        });
    }
    if size > cfg.budget {
        return Err(Error::Config(format!(
            "exhaustive search needs {size} evaluations but the budget is {}",
            cfg.budget
        )));
    }
    let k = cfg.k;
    let top = cfg.grid.top_index() as u32;
    let radix_model = n as u64 + 1;
    Ok(run_batches(pool, cfg, size, ENUM_BATCH, |mut i| {
        let mut models = vec![0u32; k];
        let mut thresholds = vec![top; k - 1];
        for m in models.iter_mut() {
            *m = (i % radix_model) as u32;
            i /= radix_model;
        }
        if cfg.mode == FitnessMode::Cascade {
            for t in thresholds.iter_mut() {
                *t = (i % grid_len) as u32;
                i /= grid_len;
            }
        }
        CascadeGenome::new(models, thresholds)
    }))
}
