//! Multi-objective gene-pool optimal mixing with objective-space clustering.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    archive_hv, learn_linkage_tree, random_genome, BudgetedFitness, ElitistArchive, FitnessFn,
    FitnessMode, LinkageModel, SearchConfig, SearchResult,
};
use crate::error::{Error, Result};
use crate::eval::CascadeGenome;
use crate::pareto::{dominates, FrontEntry, ObjectivePoint};
use crate::pool::ModelPool;

const KMEANS_ROUNDS: usize = 10;

/// Overlapping clusters in objective space plus each solution's home cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub members: Vec<Vec<usize>>,
    pub assignment: Vec<usize>,
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Objectives rescaled to [0, 1], both minimized. Non-finite costs are put
/// at the worst finite cost.
fn normalized(points: &[ObjectivePoint]) -> Vec<(f64, f64)> {
    let finite = |v: f64| v.is_finite();
    let bounds = |vals: Vec<f64>| {
        let lo = vals
            .iter()
            .copied()
            .filter(|v| finite(*v))
            .fold(f64::INFINITY, f64::min);
        let hi = vals
            .iter()
            .copied()
            .filter(|v| finite(*v))
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (clo, chi) = bounds(points.iter().map(|p| p.mflops).collect());
    let (alo, ahi) = bounds(points.iter().map(|p| -p.accuracy_pct).collect());
    let scale = |v: f64, lo: f64, hi: f64| {
        if !lo.is_finite() || hi <= lo {
            0.0
        } else if !v.is_finite() {
            1.0
        } else {
            (v - lo) / (hi - lo)
        }
    };
    points
        .iter()
        .map(|p| (scale(p.mflops, clo, chi), scale(-p.accuracy_pct, alo, ahi)))
        .collect()
}

/// Leader-seeded balanced k-means: `q` clusters, each holding the
/// `ceil(2n/q)` points nearest its mean, so neighbouring clusters overlap.
pub fn cluster_population(points: &[ObjectivePoint], q: usize, rng: &mut impl Rng) -> Clustering {
    let n = points.len();
    if n == 0 {
        return Clustering {
            members: Vec::new(),
            assignment: Vec::new(),
        };
    }
    let q = q.clamp(1, n);
    let size = (2 * n).div_ceil(q).min(n);
    let xs = normalized(points);

    let mut leaders = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = xs.iter().map(|&x| sq_dist(x, xs[leaders[0]])).collect();
    while leaders.len() < q {
        let next = (0..n)
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
            .unwrap();
        leaders.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(xs[i], xs[next]));
        }
    }

    let closest = |mean: (f64, f64)| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            sq_dist(xs[a], mean)
                .total_cmp(&sq_dist(xs[b], mean))
                .then(a.cmp(&b))
        });
        idx.truncate(size);
        idx
    };
    let mut means: Vec<(f64, f64)> = leaders.iter().map(|&l| xs[l]).collect();
    let mut members: Vec<Vec<usize>> = means.iter().map(|&m| closest(m)).collect();
    for _ in 0..KMEANS_ROUNDS {
        let updated: Vec<(f64, f64)> = members
            .iter()
            .map(|m| {
                let (sx, sy) = m
                    .iter()
                    .fold((0.0, 0.0), |acc, &i| (acc.0 + xs[i].0, acc.1 + xs[i].1));
                (sx / m.len() as f64, sy / m.len() as f64)
            })
            .collect();
        if updated == means {
            break;
        }
        means = updated;
        members = means.iter().map(|&m| closest(m)).collect();
    }

    let assignment = xs
        .iter()
        .map(|&x| {
            (0..means.len())
                .min_by(|&a, &b| {
                    sq_dist(x, means[a])
                        .total_cmp(&sq_dist(x, means[b]))
                        .then(a.cmp(&b))
                })
                .unwrap()
        })
        .collect();
    Clustering {
        members,
        assignment,
    }
}

/// One round of gene-pool optimal mixing on `solution`.
///
/// Subsets are visited in random order; each copies a random donor's values
/// into the working genome. A change is kept when it enters the archive, or
/// when its objectives are dominated neither by the solution just before the
/// change nor by the original `solution`. Stops early when the fitness
/// budget runs out.
pub fn gom_step<F: FitnessFn + ?Sized>(
    solution: &FrontEntry,
    donors: &[&FrontEntry],
    fos: &LinkageModel,
    archive: &mut ElitistArchive,
    fitness: &mut F,
    rng: &mut impl Rng,
) -> FrontEntry {
    mix(solution, donors, fos, archive, fitness, rng).0
}

/// [`gom_step`] that also reports whether any kept change entered the
/// archive or dominated its predecessor.
fn mix<F: FitnessFn + ?Sized>(
    solution: &FrontEntry,
    donors: &[&FrontEntry],
    fos: &LinkageModel,
    archive: &mut ElitistArchive,
    fitness: &mut F,
    rng: &mut impl Rng,
) -> (FrontEntry, bool) {
    let mut current = solution.clone();
    let mut improved = false;
    if donors.is_empty() {
        return (current, improved);
    }
    let mut order: Vec<usize> = (0..fos.subsets.len()).collect();
    order.shuffle(rng);
    for s in order {
        let donor = donors[rng.random_range(0..donors.len())];
        let mut candidate = current.genome.clone();
        for &pos in &fos.subsets[s] {
            candidate.set(pos, donor.genome.get(pos));
        }
        if candidate == current.genome {
            continue;
        }
        let Some(entry) = fitness.evaluate(&candidate) else {
            break;
        };
        let inserted = archive.insert(&entry);
        let keep = !dominates(&solution.point, &entry.point)
            && (inserted || !dominates(&current.point, &entry.point));
        if keep {
            improved |= inserted || dominates(&entry.point, &current.point);
            current = entry;
        }
    }
    (current, improved)
}

/// Mixes in values from one random archive member, subset by subset, and
/// stops at the first change that enters the archive or dominates the
/// solution. Without such a change the solution becomes that archive member.
fn forced_improvement<F: FitnessFn + ?Sized>(
    solution: &FrontEntry,
    fos: &LinkageModel,
    archive: &mut ElitistArchive,
    fitness: &mut F,
    rng: &mut impl Rng,
) -> FrontEntry {
    if archive.is_empty() {
        return solution.clone();
    }
    let donor = archive.entries()[rng.random_range(0..archive.len())].clone();
    let current = solution.clone();
    let mut order: Vec<usize> = (0..fos.subsets.len()).collect();
    order.shuffle(rng);
    for s in order {
        let mut candidate = current.genome.clone();
        for &pos in &fos.subsets[s] {
            candidate.set(pos, donor.genome.get(pos));
        }
        if candidate == current.genome {
            continue;
        }
        let Some(entry) = fitness.evaluate(&candidate) else {
            return current;
        };
        let inserted = archive.insert(&entry);
        if inserted || dominates(&entry.point, &current.point) {
            return entry;
        }
    }
    donor
}

fn initial_genomes(
    rng: &mut ChaCha8Rng,
    cfg: &SearchConfig,
    num_models: usize,
    singletons: bool,
) -> Vec<CascadeGenome> {
    let mut genomes = Vec::with_capacity(cfg.population_size);
    if singletons {
        for m in 1..=num_models.min(cfg.population_size) {
            let mut g = random_genome(rng, cfg.k, num_models, &cfg.grid, cfg.mode);
            g.models = vec![0; cfg.k];
            g.models[0] = m as u32;
            genomes.push(g);
        }
    }
    while genomes.len() < cfg.population_size {
        genomes.push(random_genome(rng, cfg.k, num_models, &cfg.grid, cfg.mode));
    }
    genomes
}

fn fos_for(genomes: &[&CascadeGenome], len: usize, mode: FitnessMode, k: usize) -> LinkageModel {
    let owned: Vec<CascadeGenome> = genomes.iter().map(|g| (*g).clone()).collect();
    let mut fos = learn_linkage_tree(&owned).unwrap_or_else(|_| LinkageModel::univariate(len));
    if mode == FitnessMode::Ensemble {
        // threshold slots are pinned; only model slots are worth mixing
        fos.subsets.retain(|s| s.iter().any(|&p| p < k));
    }
    fos
}

/// Runs MO-GOMEA until the budget is spent.
///
/// If a whole generation produces no new evaluations the population has
/// collapsed; it is then replaced by fresh random genomes while the archive
/// is kept.
pub fn mogomea_run(pool: &ModelPool, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    if cfg.budget < cfg.population_size as u64 {
        return Err(Error::Config(format!(
            "budget {} is smaller than the population size {}",
            cfg.budget, cfg.population_size
        )));
    }
    let n_models = pool.num_models();
    let mut fitness = BudgetedFitness::new(pool, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut archive = ElitistArchive::new();

    let genomes = initial_genomes(&mut rng, cfg, n_models, cfg.seed_singletons);
    let mut population = fitness.evaluate_batch(&genomes);
    for e in &population {
        archive.insert(e);
    }
    let mut hv_trace = vec![archive_hv(&archive, cfg)];

    while fitness.remaining() > 0 {
        let before = fitness.used();
        let points: Vec<ObjectivePoint> = population.iter().map(|e| e.point).collect();
        let clusters = cluster_population(&points, cfg.cluster_count, &mut rng);
        let genome_len = population[0].genome.len();
        let models: Vec<LinkageModel> = clusters
            .members
            .iter()
            .map(|m| {
                let gs: Vec<&CascadeGenome> = m.iter().map(|&i| &population[i].genome).collect();
                fos_for(&gs, genome_len, cfg.mode, cfg.k)
            })
            .collect();

        let mut offspring = Vec::with_capacity(population.len());
        for (i, solution) in population.iter().enumerate() {
            if fitness.remaining() == 0 {
                offspring.push(solution.clone());
                continue;
            }
            let c = clusters.assignment[i];
            let donors: Vec<&FrontEntry> = clusters.members[c]
                .iter()
                .map(|&j| &population[j])
                .collect();
            let (mut child, improved) = mix(
                solution,
                &donors,
                &models[c],
                &mut archive,
                &mut fitness,
                &mut rng,
            );
            if !improved {
                child =
                    forced_improvement(&child, &models[c], &mut archive, &mut fitness, &mut rng);
            }
            offspring.push(child);
        }
        population = offspring;
        hv_trace.push(archive_hv(&archive, cfg));

        if fitness.used() == before {
            let genomes = initial_genomes(&mut rng, cfg, n_models, false);
            let fresh = fitness.evaluate_batch(&genomes);
            for e in &fresh {
                archive.insert(e);
            }
            if fresh.len() < 2 {
                break;
            }
            population = fresh;
        }
    }

    Ok(SearchResult {
        front: archive.into_entries(),
        evaluations_used: fitness.used(),
        hv_trace,
    })
}
