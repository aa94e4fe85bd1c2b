use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cascade_search::eval::evaluate_cascade;
use cascade_search::frontfile::{read_front_file, write_front_csv, FrontRecord};
use cascade_search::pareto::{filter_front, hypervolume, representative_subset, HypervolumeConfig};
use serde_json::json;

use crate::common::{
    mean_std, sibling, usage, write_atomic, write_json_atomic, Part, Run, SplitSource,
};
use crate::{AnalyzeCommand, TestArgs};

pub fn run(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Hv {
            fronts,
            ref_mflops,
            ref_accuracy,
            test,
        } => hv(&fronts, ref_mflops, ref_accuracy, &test),
        AnalyzeCommand::Filter { front, out } => filter(&front, out.as_deref()),
        AnalyzeCommand::Representative { front, test, out } => {
            representative(&front, &test, out.as_deref())
        }
        AnalyzeCommand::ExportCsv { fronts, out } => export_csv(&fronts, out.as_deref()),
    }
}

fn load(path: &Path) -> Result<Vec<FrontRecord>> {
    read_front_file(path).with_context(|| format!("loading front {}", path.display()))
}

/// Replaces each record's objectives with those measured on the test pool.
fn retarget(records: &[FrontRecord], test: &TestArgs) -> Result<Option<Vec<FrontRecord>>> {
    let Some(manifest) = &test.test else {
        if test.split.val_fraction.is_some() || test.split.split_seed.is_some() {
            return usage("--val-fraction/--split-seed here only apply together with --test");
        }
        return Ok(None);
    };
    let source = SplitSource::load(manifest, test.split.val_fraction, test.split.split_seed)?;
    let part = if source.split.is_some() {
        Part::Test
    } else {
        Part::All
    };
    let pool = source.part(part)?;
    records
        .iter()
        .map(|r| {
            let m = evaluate_cascade(&r.cascade()?, &pool, test.confidence.into())?;
            Ok(FrontRecord {
                accuracy_pct: m.accuracy_pct,
                mflops: m.expected_mflops,
                stage_fractions: m.stage_fractions,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn hv(fronts: &[PathBuf], ref_mflops: f64, ref_accuracy: f64, test: &TestArgs) -> Result<()> {
    let cfg = HypervolumeConfig {
        ref_mflops,
        ref_accuracy,
        ..HypervolumeConfig::default()
    };
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    let mut values = Vec::with_capacity(fronts.len());
    for path in fronts {
        let mut records = load(path)?;
        if let Some(on_test) = retarget(&records, test)? {
            records = on_test;
        }
        let points: Vec<_> = records.iter().map(FrontRecord::point).collect();
        values.push(hypervolume(&points, &cfg));
    }
    if let [only] = values[..] {
        println!("{only}");
        return Ok(());
    }
    for (path, v) in fronts.iter().zip(&values) {
        println!("{}\t{v:.6}", path.display());
    }
    let (mean, std) = mean_std(&values);
    println!("mean\t{mean:.6}");
    println!("std\t{std:.6}");
    Ok(())
}

fn filter(front: &Path, out: Option<&Path>) -> Result<()> {
    let records = load(front)?;
    let kept = filter_front(&records, |r| r.accuracy_pct);
    match out {
        Some(out) => {
            let mut run = Run::start();
            run.hash_file(front)?;
            write_json_atomic(out, &kept)?;
            run.finish(
                &sibling(out, "manifest"),
                json!({ "filter": "one-decimal accuracy" }),
                None,
            )?;
            println!(
                "kept {} of {} entries, wrote {}",
                kept.len(),
                records.len(),
                out.display()
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&kept)?),
    }
    Ok(())
}

fn representative(front: &Path, test: &TestArgs, out: Option<&Path>) -> Result<()> {
    let records = load(front)?;
    let named = representative_subset(&records, |r| r.mflops)?;
    let named: Vec<FrontRecord> = named
        .into_iter()
        .map(|(name, r)| FrontRecord {
            name: Some(name),
            ..r
        })
        .collect();
    let on_test = retarget(&named, test)?;

    match &on_test {
        Some(_) => println!(
            "{:<16} {:>10} {:>10} {:>14} {:>14}",
            "name", "mflops", "accuracy", "test_mflops", "test_accuracy"
        ),
        None => println!("{:<16} {:>10} {:>10}", "name", "mflops", "accuracy"),
    }
    for (i, r) in named.iter().enumerate() {
        let name = r.name.as_deref().unwrap_or_default();
        match &on_test {
            Some(t) => println!(
                "{:<16} {:>10.1} {:>10.2} {:>14.1} {:>14.2}",
                name, r.mflops, r.accuracy_pct, t[i].mflops, t[i].accuracy_pct
            ),
            None => println!("{:<16} {:>10.1} {:>10.2}", name, r.mflops, r.accuracy_pct),
        }
    }
    if let Some(out) = out {
        let mut run = Run::start();
        run.hash_file(front)?;
        write_json_atomic(out, &named)?;
        run.finish(
            &sibling(out, "manifest"),
            json!({ "representative": "every 100 MFLOPs" }),
            None,
        )?;
    }
    Ok(())
}

fn export_csv(fronts: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    if let [single] = fronts {
        write_front_csv(&mut buf, &load(single)?)?;
    } else {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["run", "name", "mflops", "accuracy_pct"])?;
        for path in fronts {
            let run = path.display().to_string();
            for r in load(path)? {
                w.write_record([
                    run.clone(),
                    r.name.unwrap_or_default(),
                    r.mflops.to_string(),
                    r.accuracy_pct.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    match out {
        Some(out) => {
            let mut run = Run::start();
            for f in fronts {
                run.hash_file(f)?;
            }
            write_atomic(out, &buf)?;
            run.finish(&sibling(out, "manifest"), json!({ "export": "csv" }), None)?;
        }
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}
