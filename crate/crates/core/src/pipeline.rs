//! End-to-end steps shared by the command line, examples and tests.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dataset::{build_dataset, generate_sample, BuildSummary, DatasetMeta, OperatorSample, Split};
use crate::error::{Error, Result};
use crate::seed::{derived_rng, stream};
use crate::sensors::SensorKind;
use crate::train::{evaluate, fit, prepare, Checkpoint, EvalSummary, FitOptions, FitResult};

/// Writes the dataset of `cfg` to `<out>/data`.
pub fn generate(cfg: &ExperimentConfig) -> Result<BuildSummary> {
    cfg.validate()?;
    build_dataset(&cfg.data, cfg.seed, &cfg.data_dir())
}

/// Trains on `<out>/data`, writing checkpoints and metrics to `<out>/run`.
pub fn train(cfg: &ExperimentConfig, resume: Option<&Path>, log_every: usize) -> Result<FitResult> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    let meta = DatasetMeta::load(&dir)?;
    if meta.config != cfg.data || meta.seed != cfg.seed {
        return Err(Error::Config(format!(
            "dataset in {} was generated from a different data section or seed",
            dir.display()
        )));
    }
    let norm = &meta.normalization;
    let train = prepare(&meta.load_split(&dir, Split::Train)?, norm)?;
    let val = prepare(&meta.load_split(&dir, Split::Val)?, norm)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let model = cfg.model.init(&mut derived_rng(cfg.seed, stream::INIT, 1))?;
    if let Some(ck) = &resume {
        if ck.model.spec() != cfg.model {
            return Err(Error::Config("resume checkpoint has a different model section".into()));
        }
    }
    let run = cfg.run_dir();
    fs::create_dir_all(&run).map_err(|e| Error::io(&run, e))?;
    cfg.save(&run.join("config.json"))?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.train_seed();
    let opts = FitOptions {
        out_dir: Some(run),
        config_hash: cfg.hash()?,
        resume,
        log_every,
    };
    fit(model, &train, &val, norm, &tcfg, &opts)
}

/// Records of `split`, optionally re-observed through another sensor layout
/// on the same underlying functions. `layout_seed` defaults to the dataset seed.
pub fn load_split(
    data_dir: &Path,
    split: Split,
    sensors: Option<SensorKind>,
    layout_seed: Option<u64>,
) -> Result<Vec<OperatorSample>> {
    let meta = DatasetMeta::load(data_dir)?;
    match sensors {
        None => meta.load_split(data_dir, split),
        Some(kind) => {
            let layout_seed = layout_seed.unwrap_or(meta.seed);
            let mut layout = meta.config.sensors.clone();
            layout.kind = kind;
            (0..meta.config.count(split))
                .into_par_iter()
                .map(|i| generate_sample(&meta.config, &layout, meta.seed, layout_seed, split, i))
                .collect()
        }
    }
}

/// Relative L2 errors of a checkpoint on one split, with their summary.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data_dir: &Path,
    split: Split,
    sensors: Option<SensorKind>,
    layout_seed: Option<u64>,
) -> Result<(EvalSummary, Vec<f64>)> {
    let samples = load_split(data_dir, split, sensors, layout_seed)?;
    let examples = prepare(&samples, &ck.normalization)?;
    let errors = evaluate(&ck.model, &examples, &ck.normalization)?;
    Ok((EvalSummary::from_errors(&errors), errors))
}
