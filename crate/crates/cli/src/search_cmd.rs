use std::fs;

use anyhow::{Context, Result};
use cascade_search::frontfile::{records_from_entries, FrontRecord};
use cascade_search::greedy::{greedy_fronts, Anchors, GreedyConfig};
use cascade_search::pareto::{filter_entries, hypervolume, FrontEntry};
use cascade_search::search::{search, Backend, FitnessMode, SearchConfig};
use serde::Serialize;
use serde_json::json;

use crate::common::{parse_grid, sibling, usage, write_json_atomic, Part, Run, SplitSource};
use crate::{BackendArg, ModeArg, SearchArgs};

/// Label for the greedy baseline in every output.
const GREEDY_LABEL: &str = "GreedyCascade-style";

#[derive(Serialize)]
struct RunLog {
    seed: Option<u64>,
    method: String,
    config: serde_json::Value,
    evaluations_used: u64,
    hv_trace: Vec<f64>,
}

fn build_config(args: &SearchArgs) -> Result<SearchConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SearchConfig::default(),
    };
    match args.backend {
        Some(BackendArg::Mogomea) => cfg.backend = Backend::Mogomea,
        Some(BackendArg::Random) => cfg.backend = Backend::Random,
        Some(BackendArg::Exhaustive) => cfg.backend = Backend::Exhaustive,
        Some(BackendArg::Greedy) | None => {}
    }
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::Cascade => FitnessMode::Cascade,
            ModeArg::Ensemble => FitnessMode::Ensemble,
        };
    }
    if let Some(c) = args.confidence {
        cfg.confidence = c.into();
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = &args.grid {
        cfg.grid = parse_grid(grid)?;
    }
    if let Some(p) = args.population_size {
        cfg.population_size = p;
    }
    if let Some(q) = args.clusters {
        cfg.cluster_count = q;
    }
    if args.no_seed_singletons {
        cfg.seed_singletons = false;
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    let greedy = args.backend == Some(BackendArg::Greedy);
    if !greedy && cfg.backend == Backend::Mogomea && cfg.budget < cfg.population_size as u64 {
        return usage(format!(
            "budget {} is smaller than the population size {}",
            cfg.budget, cfg.population_size
        ));
    }
    Ok(cfg)
}

pub fn run(args: SearchArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let greedy = args.backend == Some(BackendArg::Greedy);
    let randomized = !greedy && matches!(cfg.backend, Backend::Mogomea | Backend::Random);
    if randomized && args.seed.is_none() {
        return usage("randomized backends need an explicit --seed");
    }
    if greedy && cfg.mode == FitnessMode::Ensemble {
        return usage("the greedy backend builds cascades; --mode ensemble is not supported");
    }

    let mut run = Run::start();
    run.hash_pool(&args.manifest)?;
    if let Some(c) = &args.config {
        run.hash_file(c)?;
    }
    let source = SplitSource::load(
        &args.manifest,
        args.split.val_fraction,
        args.split.split_seed,
    )?;
    let pool = source.part(Part::Val)?;
    let split_echo = json!({
        "val_fraction": args.split.val_fraction,
        "split_seed": args.split.split_seed,
    });

    let (front, grid, log) = if greedy {
        let gcfg = GreedyConfig {
            grid: cfg.grid.clone(),
            max_stages: args.max_stages,
            anchors: args
                .anchor_fraction
                .map_or(Anchors::All, Anchors::TopFraction),
            confidence: cfg.confidence,
        };
        if let Err(e) = gcfg.validate() {
            return usage(e.to_string());
        }
        let result = greedy_fronts(&pool, &gcfg)?;
        let hv = front_hv(&result.front, &cfg);
        let log = RunLog {
            seed: None,
            method: GREEDY_LABEL.into(),
            config: json!({ "greedy": gcfg, "split": split_echo }),
            evaluations_used: result.evaluations,
            hv_trace: vec![hv],
        };
        (result.front, gcfg.grid, log)
    } else {
        let result = search(&pool, &cfg)?;
        let log = RunLog {
            seed: Some(cfg.seed),
            method: format!("{:?}", cfg.backend).to_lowercase(),
            config: json!({ "search": cfg, "split": split_echo }),
            evaluations_used: result.evaluations_used,
            hv_trace: result.hv_trace,
        };
        (result.front, cfg.grid.clone(), log)
    };

    let filtered = filter_entries(&front);
    let mut records: Vec<FrontRecord> = records_from_entries(&filtered, &grid);
    if greedy {
        for r in &mut records {
            r.name = Some(format!("{GREEDY_LABEL}@{}", r.mflops.round() as i64));
        }
    }
    write_json_atomic(&args.out, &records)?;
    write_json_atomic(&sibling(&args.out, "runlog"), &log)?;
    run.finish(
        &sibling(&args.out, "manifest"),
        log.config.clone(),
        log.seed,
    )?;

    println!(
        "{}: {} front entries ({} before filtering), {} evaluations, hypervolume {:.6}",
        log.method,
        records.len(),
        front.len(),
        log.evaluations_used,
        front_hv(&filtered, &cfg)
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn front_hv(front: &[FrontEntry], cfg: &SearchConfig) -> f64 {
    let points: Vec<_> = front.iter().map(|e| e.point).collect();
    hypervolume(&points, &cfg.hv_reference)
}
