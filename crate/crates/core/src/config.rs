//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DataConfig, Problem};
use crate::error::{Error, Result};
use crate::model::{DeeponetSpec, ModelSpec, VidonSpec};
use crate::nn::Activation;
use crate::sensors::{SensorConfig, SensorKind};
use crate::train::{config_hash, TrainConfig};

/// One experiment: data, model and training settings plus the master seed.
///
/// Datasets go to `<out>/data`, checkpoints and metrics to `<out>/run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("{}: key '{}': {}", path.display(), e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        let d_q = self.data.problem.query_dim();
        match &self.model {
            ModelSpec::Vidon(s) => {
                s.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
                if s.coord_dim != 2 || s.value_dim != 1 || s.query_dim != d_q {
                    return Err(Error::Config(format!(
                        "model dims (coord {}, value {}, query {}) do not fit {} (2, 1, {d_q})",
                        s.coord_dim,
                        s.value_dim,
                        s.query_dim,
                        self.data.problem.name()
                    )));
                }
            }
            ModelSpec::Deeponet(s) => {
                s.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
                if !self.data.sensors.kind.is_fixed() {
                    return Err(Error::Config(format!(
                        "model.kind deeponet needs a fixed sensor layout, not '{}'",
                        self.data.sensors.kind
                    )));
                }
                if s.sensors != self.data.sensors.base_count() || s.query_dim != d_q {
                    return Err(Error::Config("model.sensors must equal the sensor lattice size".into()));
                }
            }
        }
        Ok(())
    }

    /// Seed of the training run (initialization and shuffling).
    pub fn train_seed(&self) -> u64 {
        crate::seed::derive_seed(self.seed, crate::seed::stream::INIT, 0)
    }

    /// Hash of the canonical JSON, stored in checkpoints.
    pub fn hash(&self) -> Result<u64> {
        Ok(config_hash(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join("run")
    }

    /// Full-size settings for `problem` with the given sensor layout; training
    /// runs 5000 epochs with the halving points scaled to match.
    pub fn full_size(problem: Problem, kind: SensorKind) -> Self {
        let mut data = DataConfig::full_size(problem);
        data.sensors.kind = kind;
        let (lr0, halve_at, weight_decay) = full_schedule(problem, kind);
        let mut train = TrainConfig::new(lr0, 5000);
        train.halve_at = halve_at;
        train.weight_decay = weight_decay;
        Self {
            seed: 0,
            out: PathBuf::from(format!("runs/{}-{}", problem.name(), kind.name())),
            data,
            model: ModelSpec::Vidon(full_vidon(problem)),
            train,
        }
    }

    /// Small Allen-Cahn setting that trains on a laptop: 200/16/100 samples,
    /// a 16x16 lattice with 11 time slices, two heads and 50 basis functions.
    pub fn desk_allen_cahn(kind: SensorKind) -> Self {
        let mut data = DataConfig::full_size(Problem::AllenCahn);
        data.sensors = SensorConfig::new(kind, 16, 16);
        data.train = 200;
        data.val = 16;
        data.test = 100;
        data.test_grid = (16, 16);
        data.time_slices = 11;
        data.test_time_slices = 11;
        let mut train = TrainConfig::new(1e-3, 5000);
        train.halve_at = vec![1000, 2000, 3000, 4000];
        train.query_batch = Some(256);
        Self {
            seed: 0,
            out: PathBuf::from(format!("runs/desk-allen-cahn-{}", kind.name())),
            data,
            model: ModelSpec::Vidon(desk_vidon()),
            train,
        }
    }
}

/// Learning rate, halving epochs (scaled to 5000 epochs) and weight decay.
fn full_schedule(problem: Problem, kind: SensorKind) -> (f64, Vec<usize>, f64) {
    use SensorKind::*;
    let even = vec![1000, 2000, 3000, 4000];
    match problem {
        Problem::Darcy => {
            let wd = if matches!(kind, Random | VariableRandom) {
                1e-8
            } else {
                1e-9
            };
            (1e-4, even, wd)
        }
        Problem::AllenCahn => {
            let lr = if matches!(kind, Missing | VariableRandom) {
                2e-4
            } else {
                1e-4
            };
            (lr, even, 1e-9)
        }
        Problem::NavierStokes => {
            let ns = vec![500, 1000, 2000, 3000, 4000];
            match kind {
                Random => (2e-4, ns, 1.5e-7),
                VariableRandom => (2e-4, ns, 2e-7),
                _ => (1e-4, ns, 1e-7),
            }
        }
    }
}

/// Full-size VIDON: four heads, 4x40 encoders, 4x128 head networks and a
/// 4x256 combiner; basis size and trunk depend on the problem.
pub fn full_vidon(problem: Problem) -> VidonSpec {
    let (basis, trunk, head_out) = match problem {
        Problem::Darcy => (100, 250, 64),
        Problem::AllenCahn => (400, 500, 64),
        Problem::NavierStokes => (100, 250, 32),
    };
    VidonSpec {
        coord_dim: 2,
        value_dim: 1,
        enc_dim: 40,
        heads: 4,
        basis,
        head_out,
        query_dim: problem.query_dim(),
        coord_hidden: vec![40; 4],
        value_hidden: vec![40; 4],
        weight_hidden: vec![128; 4],
        head_hidden: vec![128; 4],
        combiner_hidden: vec![256; 4],
        trunk_hidden: vec![trunk; 4],
        activation: Activation::Tanh,
    }
}

/// Reduced VIDON for desk-scale Allen-Cahn runs.
pub fn desk_vidon() -> VidonSpec {
    VidonSpec {
        coord_dim: 2,
        value_dim: 1,
        enc_dim: 32,
        heads: 2,
        basis: 50,
        head_out: 32,
        query_dim: 3,
        coord_hidden: vec![32, 32],
        value_hidden: vec![32, 32],
        weight_hidden: vec![64, 64],
        head_hidden: vec![64, 64],
        combiner_hidden: vec![64, 64],
        trunk_hidden: vec![64, 64, 64],
        activation: Activation::Tanh,
    }
}

/// Fixed-input DeepONet baseline: branch and trunk of four 250-wide layers.
pub fn full_deeponet(problem: Problem, sensors: usize) -> DeeponetSpec {
    DeeponetSpec {
        sensors,
        value_dim: 1,
        basis: 100,
        query_dim: problem.query_dim(),
        branch_hidden: vec![250; 4],
        trunk_hidden: vec![250; 4],
        activation: Activation::Tanh,
    }
}
