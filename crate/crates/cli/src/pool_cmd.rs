use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cascade_search::pool::{
    load_pool, merge_pools, read_label_csv, read_prediction_csv, split_pool, synth_pool,
    write_pool, SynthPoolSpec,
};
use cascade_search::{ModelEntry, ModelPool};
use serde_json::json;

use crate::common::{usage, Run};
use crate::PoolCommand;

const RUN_MANIFEST: &str = "run_manifest.json";

pub fn run(cmd: PoolCommand) -> Result<()> {
    match cmd {
        PoolCommand::Validate { manifest } => validate(&manifest),
        PoolCommand::Synth {
            spec,
            out_dir,
            seed,
        } => synth(&spec, &out_dir, seed),
        PoolCommand::Merge { mut paths } => {
            let out = paths.pop().expect("clap requires three paths");
            merge(&paths, &out)
        }
        PoolCommand::Split {
            manifest,
            out_dir,
            fraction,
            seed,
        } => split(&manifest, &out_dir, fraction, seed),
        PoolCommand::ImportCsv {
            labels,
            models,
            name,
            out,
        } => import_csv(&labels, &models, &name, &out),
    }
}

fn describe(pool: &ModelPool) -> String {
    format!(
        "N={} S={} C={}",
        pool.num_models(),
        pool.num_samples(),
        pool.num_classes()
    )
}

fn validate(manifest: &Path) -> Result<()> {
    let pool = load_pool(manifest)?;
    println!("OK: {}", describe(&pool));
    println!("{:<24} {:>12} {:>10}", "model", "mflops", "accuracy");
    for (i, m) in pool.models().iter().enumerate() {
        println!(
            "{:<24} {:>12.3} {:>10.2}",
            m.id(),
            m.flops_m(),
            pool.model_accuracy(i)
        );
    }
    Ok(())
}

fn synth(spec_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let mut run = Run::start();
    run.hash_file(spec_path)?;
    let text = fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec: SynthPoolSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    spec.seed = seed;
    let pool = synth_pool(&spec)?;
    let manifest = write_pool(&pool, out)?;
    run.finish(
        &out.join(RUN_MANIFEST),
        serde_json::to_value(&spec)?,
        Some(seed),
    )?;
    println!("wrote {} ({})", manifest.display(), describe(&pool));
    Ok(())
}

fn merge(inputs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    let mut run = Run::start();
    let mut pools = Vec::with_capacity(inputs.len());
    for p in inputs {
        run.hash_pool(p)?;
        pools.push(load_pool(p)?);
    }
    let merged = merge_pools(&pools)?;
    let manifest = write_pool(&merged, out)?;
    run.finish(&out.join(RUN_MANIFEST), json!({ "inputs": inputs }), None)?;
    println!("wrote {} ({})", manifest.display(), describe(&merged));
    Ok(())
}

fn split(manifest: &Path, out: &Path, fraction: f64, seed: u64) -> Result<()> {
    let mut run = Run::start();
    run.hash_pool(manifest)?;
    let pool = load_pool(manifest)?;
    let (val, test) = split_pool(&pool, fraction, seed)?;
    let val_manifest = write_pool(&val, &out.join("val"))?;
    let test_manifest = write_pool(&test, &out.join("test"))?;
    run.finish(
        &out.join(RUN_MANIFEST),
        json!({ "fraction": fraction, "seed": seed }),
        Some(seed),
    )?;
    println!("wrote {} ({})", val_manifest.display(), describe(&val));
    println!("wrote {} ({})", test_manifest.display(), describe(&test));
    Ok(())
}

fn import_csv(labels: &Path, models: &[String], name: &str, out: &Path) -> Result<()> {
    let mut run = Run::start();
    run.hash_file(labels)?;
    let label_values = read_label_csv(labels)?;
    let mut entries = Vec::with_capacity(models.len());
    let mut num_classes = 0;
    for spec in models {
        let mut parts = spec.splitn(3, ':');
        let (Some(id), Some(flops), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
            return usage(format!("--model {spec:?} is not ID:MFLOPS:PATH"));
        };
        let Ok(flops) = flops.parse::<f64>() else {
            return usage(format!("--model {spec:?}: cannot parse MFLOPs {flops:?}"));
        };
        let path = Path::new(path);
        run.hash_file(path)?;
        let preds = read_prediction_csv(path)?;
        num_classes = preds.cols();
        entries.push(ModelEntry::new(id, flops, preds)?);
    }
    let pool = ModelPool::new(name, label_values, num_classes, entries)?;
    let manifest = write_pool(&pool, out)?;
    run.finish(
        &out.join(RUN_MANIFEST),
        json!({ "name": name, "models": models }),
        None,
    )?;
    println!("wrote {} ({})", manifest.display(), describe(&pool));
    Ok(())
}
