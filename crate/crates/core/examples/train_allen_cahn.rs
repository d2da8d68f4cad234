//! Desk-scale Allen-Cahn run: generate data, train a reduced VIDON and report
//! test errors for the stored layout and for re-observed sensor layouts.
//!
//! Usage: train_allen_cahn [epochs] [sensor kind] [output dir]
//! The halving epochs shrink with the epoch budget.

use std::path::PathBuf;

use vidon::config::ExperimentConfig;
use vidon::dataset::Split;
use vidon::pipeline;
use vidon::sensors::SensorKind;

fn main() -> vidon::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let kind: SensorKind = args
        .next()
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(SensorKind::Regular);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("vidon-desk-{}", kind.name())));

    let mut cfg = ExperimentConfig::desk_allen_cahn(kind);
    cfg.out = out;
    let full = cfg.train.max_epochs;
    cfg.train.halve_at = cfg
        .train
        .halve_at
        .iter()
        .map(|e| e * epochs / full)
        .filter(|&e| e > 0)
        .collect();
    cfg.train.max_epochs = epochs;

    let built = pipeline::generate(&cfg)?;
    println!(
        "data: {} samples in {:.1}s",
        built.counts.iter().sum::<usize>(),
        built.seconds
    );
    let res = pipeline::train(&cfg, None, (epochs / 10).max(1))?;
    println!(
        "best epoch {} validation {:.3}%",
        res.best.epoch,
        100.0 * res.best.val_rel_l2
    );

    let data = cfg.data_dir();
    let (test, _) = pipeline::evaluate_checkpoint(&res.best, &data, Split::Test, None, None)?;
    println!(
        "test ({}): {:.3}% +- {:.3}%",
        kind.name(),
        100.0 * test.mean_rel_l2,
        100.0 * test.std_rel_l2
    );
    for other in [SensorKind::Missing, SensorKind::VariableRandom] {
        if other != kind {
            let (s, _) = pipeline::evaluate_checkpoint(&res.best, &data, Split::Test, Some(other), None)?;
            println!("test re-observed as {}: {:.3}%", other.name(), 100.0 * s.mean_rel_l2);
        }
    }
    Ok(())
}
