//! Sensor layouts: where each sample's input function is observed.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derived_rng, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorKind {
    /// The base lattice, identical for every sample.
    Regular,
    /// One uniform draw of `m0` points shared by every sample.
    Irregular,
    /// The lattice with a random subset removed per sample.
    Missing,
    /// The lattice with jittered nodes and a per-sample count change.
    Perturbed,
    /// `m0` fresh uniform points per sample.
    Random,
    /// A per-sample count of fresh uniform points.
    VariableRandom,
}

impl SensorKind {
    pub const ALL: [SensorKind; 6] = [
        SensorKind::Regular,
        SensorKind::Irregular,
        SensorKind::Missing,
        SensorKind::Perturbed,
        SensorKind::Random,
        SensorKind::VariableRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Regular => "regular",
            SensorKind::Irregular => "irregular",
            SensorKind::Missing => "missing",
            SensorKind::Perturbed => "perturbed",
            SensorKind::Random => "random",
            SensorKind::VariableRandom => "variable-random",
        }
    }

    /// Whether every sample shares one layout, so a fixed-input model applies.
    pub fn is_fixed(self) -> bool {
        matches!(self, SensorKind::Regular | SensorKind::Irregular)
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sensor kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub kind: SensorKind,
    /// Base lattice `(n_x, n_y)`.
    pub base_grid: (usize, usize),
    #[serde(default = "default_drop")]
    pub drop_fraction_max: f64,
    /// Jitter half-width as a fraction of the lattice spacing.
    #[serde(default = "default_perturb")]
    pub perturb_scale: f64,
    #[serde(default = "default_variance")]
    pub count_variance: f64,
}

fn default_drop() -> f64 {
    0.2
}

fn default_perturb() -> f64 {
    0.5
}

fn default_variance() -> f64 {
    0.1
}

/// Closed square `[lo, hi]^2` containing all sensors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().all(|&v| v >= self.lo && v <= self.hi)
    }
}

impl SensorConfig {
    pub fn new(kind: SensorKind, nx: usize, ny: usize) -> Self {
        Self {
            kind,
            base_grid: (nx, ny),
            drop_fraction_max: default_drop(),
            perturb_scale: default_perturb(),
            count_variance: default_variance(),
        }
    }

    pub fn base_count(&self) -> usize {
        self.base_grid.0 * self.base_grid.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_grid.0 < 2 || self.base_grid.1 < 2 {
            return Err(Error::Config(format!(
                "sensors.base_grid must be at least 2x2, got {:?}",
                self.base_grid
            )));
        }
        if !(0.0..1.0).contains(&self.drop_fraction_max) {
            return Err(Error::Config("sensors.drop_fraction_max must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.count_variance) {
            return Err(Error::Config("sensors.count_variance must lie in [0, 1)".into()));
        }
        if !(self.perturb_scale >= 0.0) {
            return Err(Error::Config("sensors.perturb_scale must be non-negative".into()));
        }
        Ok(())
    }

    fn variable_range(&self) -> (usize, usize) {
        let m0 = self.base_count() as f64;
        (
            ((1.0 - self.count_variance) * m0).round() as usize,
            ((1.0 + self.count_variance) * m0).round() as usize,
        )
    }

    fn max_drop(&self) -> usize {
        (self.drop_fraction_max * self.base_count() as f64).round() as usize
    }
}

/// Inclusive bounds on the sensor count of any sample.
pub fn config_ranges(cfg: &SensorConfig) -> (usize, usize) {
    let m0 = cfg.base_count();
    match cfg.kind {
        SensorKind::Regular | SensorKind::Irregular | SensorKind::Random => (m0, m0),
        SensorKind::Missing => (m0 - cfg.max_drop(), m0),
        SensorKind::Perturbed | SensorKind::VariableRandom => cfg.variable_range(),
    }
}

/// Lattice nodes `lo + i (hi - lo) / (n - 1)` in both directions, row-major in `x`.
pub fn lattice(nx: usize, ny: usize, domain: Domain) -> Vec<f64> {
    let step = |i: usize, n: usize| domain.lo + domain.width() * i as f64 / (n - 1) as f64;
    (0..nx)
        .flat_map(|i| (0..ny).flat_map(move |j| [step(i, nx), step(j, ny)]))
        .collect()
}

fn uniform_points(m: usize, domain: Domain, rng: &mut impl Rng) -> Vec<f64> {
    (0..2 * m).map(|_| rng.random_range(domain.lo..=domain.hi)).collect()
}

/// Keeps the rows of `coords` not listed in `drop`, preserving order.
fn drop_rows(coords: &[f64], drop: &[usize]) -> Vec<f64> {
    let mut removed = vec![false; coords.len() / 2];
    drop.iter().for_each(|&i| removed[i] = true);
    coords
        .chunks_exact(2)
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .flat_map(|(p, _)| p.to_vec())
        .collect()
}

/// Sensor coordinates `[m x 2]` (row-major) for sample `index` of a dataset
/// with seed `dataset_seed`; a pure function of its arguments.
pub fn sample_coords(cfg: &SensorConfig, domain: Domain, dataset_seed: u64, index: u64) -> Vec<f64> {
    let (nx, ny) = cfg.base_grid;
    let m0 = cfg.base_count();
    let mut rng = derived_rng(dataset_seed, stream::SENSORS, index);
    match cfg.kind {
        SensorKind::Regular => lattice(nx, ny, domain),
        SensorKind::Irregular => {
            let mut shared = derived_rng(dataset_seed, stream::LAYOUT, 0);
            uniform_points(m0, domain, &mut shared)
        }
        SensorKind::Missing => {
            let k = rng.random_range(0..=cfg.max_drop());
            let drop = index::sample(&mut rng, m0, k).into_vec();
            drop_rows(&lattice(nx, ny, domain), &drop)
        }
        SensorKind::Perturbed => {
            let hx = domain.width() / (nx - 1) as f64;
            let hy = domain.width() / (ny - 1) as f64;
            let base = lattice(nx, ny, domain);
            let jitter = |p: &[f64], rng: &mut rand_chacha::ChaCha8Rng| {
                let s = cfg.perturb_scale;
                [
                    (p[0] + rng.random_range(-s..=s) * hx).clamp(domain.lo, domain.hi),
                    (p[1] + rng.random_range(-s..=s) * hy).clamp(domain.lo, domain.hi),
                ]
            };
            let moved: Vec<f64> = base.chunks_exact(2).flat_map(|p| jitter(p, &mut rng)).collect();
            let (lo, hi) = cfg.variable_range();
            let m = rng.random_range(lo..=hi);
            if m <= m0 {
                let drop = index::sample(&mut rng, m0, m0 - m).into_vec();
                drop_rows(&moved, &drop)
            } else {
                let mut out = moved;
                for _ in 0..m - m0 {
                    let node = rng.random_range(0..m0);
                    let extra = jitter(&base[2 * node..2 * node + 2], &mut rng);
                    out.extend_from_slice(&extra);
                }
                out
            }
        }
        SensorKind::Random => uniform_points(m0, domain, &mut rng),
        SensorKind::VariableRandom => {
            let (lo, hi) = cfg.variable_range();
            let m = rng.random_range(lo..=hi);
            uniform_points(m, domain, &mut rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: Domain = Domain { lo: 0.0, hi: 1.0 };

    #[test]
    fn lattice_counts_and_ranges() {
        let reg = SensorConfig::new(SensorKind::Regular, 51, 51);
        assert_eq!(sample_coords(&reg, UNIT, 1, 0).len(), 2 * 2601);
        assert_eq!(config_ranges(&reg), (2601, 2601));
        assert_eq!(
            config_ranges(&SensorConfig::new(SensorKind::Missing, 51, 51)),
            (2081, 2601)
        );
        assert_eq!(
            config_ranges(&SensorConfig::new(SensorKind::Perturbed, 51, 51)),
            (2341, 2861)
        );
        assert_eq!(
            config_ranges(&SensorConfig::new(SensorKind::Missing, 26, 26)),
            (541, 676)
        );
        assert_eq!(
            config_ranges(&SensorConfig::new(SensorKind::VariableRandom, 33, 33)),
            (980, 1198)
        );
    }

    #[test]
    fn counts_within_ranges_and_inside_domain() {
        let dom = Domain::new(0.0, 2.0);
        for kind in SensorKind::ALL {
            let cfg = SensorConfig::new(kind, 12, 10);
            let (lo, hi) = config_ranges(&cfg);
            for i in 0..40 {
                let c = sample_coords(&cfg, dom, 9, i);
                let m = c.len() / 2;
                assert!(m >= lo && m <= hi, "{kind}: {m} not in [{lo}, {hi}]");
                assert!(c.chunks(2).all(|p| dom.contains(p)));
            }
        }
    }

    #[test]
    fn irregular_layout_is_shared() {
        let cfg = SensorConfig::new(SensorKind::Irregular, 8, 8);
        let first = sample_coords(&cfg, UNIT, 3, 0);
        for i in 1..10 {
            assert_eq!(sample_coords(&cfg, UNIT, 3, i), first);
        }
        assert_ne!(sample_coords(&cfg, UNIT, 4, 0), first);
    }

    #[test]
    fn per_sample_determinism() {
        let cfg = SensorConfig::new(SensorKind::Perturbed, 9, 9);
        assert_eq!(sample_coords(&cfg, UNIT, 5, 7), sample_coords(&cfg, UNIT, 5, 7));
        assert_ne!(sample_coords(&cfg, UNIT, 5, 7), sample_coords(&cfg, UNIT, 5, 8));
    }

    #[test]
    fn kinds_parse_from_flag_names() {
        for k in SensorKind::ALL {
            assert_eq!(k.name().parse::<SensorKind>().unwrap(), k);
        }
        assert!("grid".parse::<SensorKind>().is_err());
    }
}
