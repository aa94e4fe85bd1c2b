use std::path::Path;

use anyhow::{Context, Result};
use cascade_search::eval::evaluate_cascade;
use cascade_search::{CascadeMetrics, DecodedCascade};
use serde::Deserialize;

use crate::common::{usage, Part, SplitSource};
use crate::{EvalArgs, SplitChoice};

/// Model slots (0 = no-op) and threshold values; extra fields such as the
/// metrics stored in front files are ignored.
#[derive(Debug, Deserialize)]
struct GenomeSpec {
    models: Vec<u32>,
    thresholds: Vec<f64>,
}

fn read_genome(arg: &str, index: usize) -> Result<DecodedCascade> {
    let text = if Path::new(arg).is_file() {
        std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    } else {
        arg.to_string()
    };
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return usage(format!("--genome is neither a file nor JSON: {e}")),
    };
    let spec: GenomeSpec = match value {
        serde_json::Value::Array(items) => {
            let Some(item) = items.into_iter().nth(index) else {
                anyhow::bail!("front file has no entry {index}");
            };
            serde_json::from_value(item)?
        }
        other => serde_json::from_value(other)?,
    };
    Ok(DecodedCascade::from_slots(&spec.models, &spec.thresholds)?)
}

fn metrics_on(
    source: &SplitSource,
    part: Part,
    cascade: &DecodedCascade,
    args: &EvalArgs,
) -> Result<CascadeMetrics> {
    let pool = source.part(part)?;
    let mut m = evaluate_cascade(cascade, &pool, args.confidence.into())?;
    m.exit_stage = None;
    Ok(m)
}

pub fn run(args: EvalArgs) -> Result<()> {
    let cascade = read_genome(&args.genome, args.index)?;
    if cascade.is_empty() {
        anyhow::bail!("genome decodes to an empty cascade");
    }
    let source = SplitSource::load(
        &args.manifest,
        args.split_args.val_fraction,
        args.split_args.split_seed,
    )?;
    let out = match args.split {
        SplitChoice::All => serde_json::to_value(metrics_on(&source, Part::All, &cascade, &args)?)?,
        SplitChoice::Val => serde_json::to_value(metrics_on(&source, Part::Val, &cascade, &args)?)?,
        SplitChoice::Test => {
            serde_json::to_value(metrics_on(&source, Part::Test, &cascade, &args)?)?
        }
        SplitChoice::Both => serde_json::json!({
            "val": metrics_on(&source, Part::Val, &cascade, &args)?,
            "test": metrics_on(&source, Part::Test, &cascade, &args)?,
        }),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
