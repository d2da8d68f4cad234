//! Generates a small Allen-Cahn dataset with variable sensor counts, reads it
//! back and checks that normalization inverts.

use vidon::config::ExperimentConfig;
use vidon::dataset::{DatasetMeta, Format, Split};
use vidon::pipeline;
use vidon::sensors::SensorKind;

fn main() -> vidon::Result<()> {
    let out = std::env::temp_dir().join("vidon-dataset-roundtrip");
    let mut cfg = ExperimentConfig::desk_allen_cahn(SensorKind::VariableRandom);
    cfg.out = out.clone();
    cfg.data.train = 24;
    cfg.data.val = 4;
    cfg.data.test = 4;
    for format in [Format::Bin, Format::Jsonl] {
        cfg.data.format = format;
        let summary = pipeline::generate(&cfg)?;
        let dir = cfg.data_dir();
        let meta = DatasetMeta::load(&dir)?;
        let train = meta.load_split(&dir, Split::Train)?;
        let bytes = std::fs::metadata(meta.split_path(&dir, Split::Train))
            .map(|m| m.len())
            .unwrap_or(0);
        let counts: Vec<usize> = train.iter().map(|s| s.m()).collect();
        let mut worst = 0.0f64;
        for s in &train {
            let back = meta.normalization.denormalize(&meta.normalization.normalize(s));
            for (a, b) in s
                .values
                .iter()
                .zip(&back.values)
                .chain(s.coords.iter().zip(&back.coords))
            {
                worst = worst.max((a - b).abs());
            }
        }
        println!(
            "{:?}: {} train records, {} bytes, sensors per sample {:?} (allowed {}..={}), normalization round trip {:.1e}",
            format,
            train.len(),
            bytes,
            &counts[..6],
            summary.allowed_counts.0,
            summary.allowed_counts.1,
            worst
        );
    }
    println!("files in {}", cfg.data_dir().display());
    Ok(())
}
