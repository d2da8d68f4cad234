//! Fixed-input DeepONet on the regular desk lattice next to VIDON with the
//! same data and budget. DeepONet needs one sensor layout for every sample.

use vidon::config::ExperimentConfig;
use vidon::dataset::Split;
use vidon::model::{DeeponetSpec, ModelSpec};
use vidon::nn::Activation;
use vidon::pipeline;
use vidon::sensors::SensorKind;

fn main() -> vidon::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let mut vidon_cfg = ExperimentConfig::desk_allen_cahn(SensorKind::Regular);
    vidon_cfg.out = std::env::temp_dir().join("vidon-baseline-vidon");
    vidon_cfg.train.max_epochs = epochs;
    vidon_cfg.train.halve_at.clear();

    let mut deeponet_cfg = vidon_cfg.clone();
    deeponet_cfg.out = std::env::temp_dir().join("vidon-baseline-deeponet");
    deeponet_cfg.model = ModelSpec::Deeponet(DeeponetSpec {
        sensors: deeponet_cfg.data.sensors.base_count(),
        value_dim: 1,
        basis: 50,
        query_dim: 3,
        branch_hidden: vec![64; 3],
        trunk_hidden: vec![64; 3],
        activation: Activation::Tanh,
    });

    for cfg in [&vidon_cfg, &deeponet_cfg] {
        pipeline::generate(cfg)?;
        let res = pipeline::train(cfg, None, 0)?;
        let (test, _) = pipeline::evaluate_checkpoint(&res.best, &cfg.data_dir(), Split::Test, None, None)?;
        let name = match cfg.model {
            ModelSpec::Vidon(_) => "vidon",
            ModelSpec::Deeponet(_) => "deeponet",
        };
        println!(
            "{name:<9} parameters {:>6}  test relative L2 {:.3}%",
            res.best.model.count_params(),
            100.0 * test.mean_rel_l2
        );
    }

    let mut missing = deeponet_cfg.clone();
    missing.data.sensors.kind = SensorKind::Missing;
    match missing.validate() {
        Err(e) => println!("deeponet with missing sensors: {e}"),
        Ok(()) => println!("deeponet with missing sensors: accepted"),
    }
    Ok(())
}
