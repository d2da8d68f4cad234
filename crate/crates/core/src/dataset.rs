//! Operator-learning datasets: generation, normalization and record IO.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::model::SensorSet;
use crate::pde::{
    allen_cahn_eval, darcy_sample, ns_sample, AcWaveParams, DarcyConfig, GridField, NsConfig, AC_DOMAIN, AC_FINAL_TIME,
};
use crate::seed::{derive_seed, rng_from, stream};
use crate::sensors::{config_ranges, lattice, sample_coords, Domain, SensorConfig};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"VIDN";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Darcy,
    AllenCahn,
    NavierStokes,
}

impl Problem {
    pub fn domain(self) -> Domain {
        match self {
            Problem::AllenCahn => Domain::new(0.0, AC_DOMAIN),
            _ => Domain::new(0.0, 1.0),
        }
    }

    pub fn is_time_dependent(self) -> bool {
        self == Problem::AllenCahn
    }

    pub fn query_dim(self) -> usize {
        if self.is_time_dependent() {
            3
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Problem::Darcy => "darcy",
            Problem::AllenCahn => "allen-cahn",
            Problem::NavierStokes => "navier-stokes",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => stream::TRAIN,
            Split::Val => stream::VAL,
            Split::Test => stream::TEST,
        }
    }

    /// Offset separating the sensor-layout indices of the splits.
    fn layout_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1 << 32,
            Split::Test => 2 << 32,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Bin,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Bin => "bin",
            Format::Jsonl => "jsonl",
        }
    }
}

/// Everything that determines a dataset besides the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub problem: Problem,
    pub sensors: SensorConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Spatial lattice of the test outputs.
    pub test_grid: (usize, usize),
    /// Time slices of train/val outputs (time-dependent problems).
    #[serde(default = "one")]
    pub time_slices: usize,
    /// Time slices of test outputs (time-dependent problems).
    #[serde(default = "one")]
    pub test_time_slices: usize,
    #[serde(default)]
    pub darcy: DarcyConfig,
    #[serde(default)]
    pub navier_stokes: NsConfig,
    #[serde(default)]
    pub format: Format,
}

fn one() -> usize {
    1
}

impl DataConfig {
    /// Full-size settings for `problem` with a regular sensor lattice.
    pub fn full_size(problem: Problem) -> Self {
        use crate::sensors::SensorKind::Regular;
        let (base, test_grid, slices, test_slices) = match problem {
            Problem::Darcy => (51, 51, 1, 1),
            Problem::AllenCahn => (26, 76, 21, 41),
            Problem::NavierStokes => (33, 65, 1, 1),
        };
        Self {
            problem,
            sensors: SensorConfig::new(Regular, base, base),
            train: 1000,
            val: 32,
            test: 5000,
            test_grid: (test_grid, test_grid),
            time_slices: slices,
            test_time_slices: test_slices,
            darcy: DarcyConfig::default(),
            navier_stokes: NsConfig::default(),
            format: Format::Bin,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sensors.validate()?;
        if self.train == 0 || self.val == 0 {
            return Err(Error::Config("data.train and data.val must be positive".into()));
        }
        if self.test_grid.0 < 2 || self.test_grid.1 < 2 {
            return Err(Error::Config("data.test_grid must be at least 2x2".into()));
        }
        if self.problem.is_time_dependent() && (self.time_slices == 0 || self.test_time_slices == 0) {
            return Err(Error::Config("data.time_slices must be positive".into()));
        }
        if self.problem == Problem::NavierStokes && !self.navier_stokes.resolution.is_power_of_two() {
            return Err(Error::Config(
                "data.navier_stokes.resolution must be a power of two".into(),
            ));
        }
        Ok(())
    }
}

/// One record: a sensor set and the target values at query points.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSample {
    pub id: u32,
    pub d: usize,
    pub d_v: usize,
    pub d_q: usize,
    pub d_u: usize,
    /// `[m x d]` row-major.
    pub coords: Vec<f64>,
    /// `[m x d_v]` row-major.
    pub values: Vec<f64>,
    /// `[q x d_q]` row-major.
    pub query: Vec<f64>,
    /// `[q x d_u]` row-major.
    pub target: Vec<f64>,
}

impl OperatorSample {
    pub fn m(&self) -> usize {
        self.coords.len() / self.d.max(1)
    }

    pub fn q(&self) -> usize {
        self.query.len() / self.d_q.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, q) = (self.m(), self.q());
        if m == 0 || q == 0 || self.coords.len() != m * self.d || self.values.len() != m * self.d_v {
            return Err(Error::dim(
                "sample sensors",
                &[m, self.d, self.d_v],
                &[self.coords.len(), self.values.len()],
            ));
        }
        if self.query.len() != q * self.d_q || self.target.len() != q * self.d_u {
            return Err(Error::dim(
                "sample queries",
                &[q, self.d_q, self.d_u],
                &[self.query.len(), self.target.len()],
            ));
        }
        Ok(())
    }

    pub fn sensor_set(&self) -> Result<SensorSet> {
        SensorSet::from_flat(self.coords.clone(), self.d, self.values.clone(), self.d_v)
    }

    pub fn query_tensor(&self) -> Result<Tensor> {
        Tensor::matrix(self.q(), self.d_q, self.query.clone())
    }

    pub fn target_tensor(&self) -> Result<Tensor> {
        Tensor::matrix(self.q(), self.d_u, self.target.clone())
    }
}

/// Affine map of one channel onto `[0, 1]`; the identity when the channel is
/// constant or normalization is disabled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelScale {
    pub min: f64,
    pub max: f64,
}

impl ChannelScale {
    pub const IDENTITY: ChannelScale = ChannelScale { min: 0.0, max: 1.0 };

    fn from_range(min: f64, max: f64) -> Self {
        if min < max {
            Self { min, max }
        } else {
            Self::IDENTITY
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

/// Per-channel scales for sensor coordinates, sensor values, query
/// coordinates and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub coords: Vec<ChannelScale>,
    pub values: Vec<ChannelScale>,
    pub query: Vec<ChannelScale>,
    pub target: Vec<ChannelScale>,
}

fn channel_ranges<'a>(arrays: impl Iterator<Item = &'a [f64]>, width: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); width];
    for a in arrays {
        for row in a.chunks_exact(width) {
            for (r, &v) in out.iter_mut().zip(row) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
    }
    out
}

impl Normalization {
    /// Min-max scales from training records. Coordinates are always scaled;
    /// values and targets only when `scale_fields` is set.
    pub fn fit(train: &[OperatorSample], scale_fields: bool) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Domain("normalization needs at least one training sample".into()))?;
        let scales = |ranges: Vec<(f64, f64)>, on: bool| -> Vec<ChannelScale> {
            ranges
                .into_iter()
                .map(|(lo, hi)| {
                    if on {
                        ChannelScale::from_range(lo, hi)
                    } else {
                        ChannelScale::IDENTITY
                    }
                })
                .collect()
        };
        Ok(Self {
            coords: scales(channel_ranges(train.iter().map(|s| &s.coords[..]), first.d), true),
            values: scales(
                channel_ranges(train.iter().map(|s| &s.values[..]), first.d_v),
                scale_fields,
            ),
            query: scales(channel_ranges(train.iter().map(|s| &s.query[..]), first.d_q), true),
            target: scales(
                channel_ranges(train.iter().map(|s| &s.target[..]), first.d_u),
                scale_fields,
            ),
        })
    }

    pub fn identity(d: usize, d_v: usize, d_q: usize, d_u: usize) -> Self {
        Self {
            coords: vec![ChannelScale::IDENTITY; d],
            values: vec![ChannelScale::IDENTITY; d_v],
            query: vec![ChannelScale::IDENTITY; d_q],
            target: vec![ChannelScale::IDENTITY; d_u],
        }
    }

    fn map(data: &[f64], scales: &[ChannelScale], f: impl Fn(&ChannelScale, f64) -> f64) -> Vec<f64> {
        data.chunks_exact(scales.len())
            .flat_map(|row| row.iter().zip(scales).map(|(&v, s)| f(s, v)).collect::<Vec<_>>())
            .collect()
    }

    pub fn normalize(&self, s: &OperatorSample) -> OperatorSample {
        OperatorSample {
            coords: Self::map(&s.coords, &self.coords, ChannelScale::apply),
            values: Self::map(&s.values, &self.values, ChannelScale::apply),
            query: Self::map(&s.query, &self.query, ChannelScale::apply),
            target: Self::map(&s.target, &self.target, ChannelScale::apply),
            ..s.clone()
        }
    }

    pub fn denormalize(&self, s: &OperatorSample) -> OperatorSample {
        OperatorSample {
            coords: Self::map(&s.coords, &self.coords, ChannelScale::invert),
            values: Self::map(&s.values, &self.values, ChannelScale::invert),
            query: Self::map(&s.query, &self.query, ChannelScale::invert),
            target: Self::map(&s.target, &self.target, ChannelScale::invert),
            ..s.clone()
        }
    }

    /// Maps normalized predictions `[q x d_u]` back to physical units.
    pub fn denormalize_target(&self, pred: &[f64]) -> Vec<f64> {
        Self::map(pred, &self.target, ChannelScale::invert)
    }
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: u32,
    pub seed: u64,
    pub config: DataConfig,
    pub normalization: Normalization,
    /// Observed `(min, max)` sensor counts over all splits.
    pub sensor_counts: (usize, usize),
}

impl DatasetMeta {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        if meta.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset version {} (expected {FORMAT_VERSION})",
                meta.version
            )));
        }
        Ok(meta)
    }

    pub fn split_path(&self, dir: &Path, split: Split) -> PathBuf {
        dir.join(format!("{}.{}", split.name(), self.config.format.extension()))
    }

    pub fn load_split(&self, dir: &Path, split: Split) -> Result<Vec<OperatorSample>> {
        read_records(&self.split_path(dir, split), self.config.format)
    }
}

/// Output locations `[q x d_q]` on a lattice (with time slices if needed).
fn grid_queries(problem: Problem, spatial: &[f64], slices: usize) -> Vec<f64> {
    if !problem.is_time_dependent() {
        return spatial.to_vec();
    }
    let times: Vec<f64> = if slices == 1 {
        vec![0.0]
    } else {
        (0..slices)
            .map(|k| AC_FINAL_TIME * k as f64 / (slices - 1) as f64)
            .collect()
    };
    times
        .iter()
        .flat_map(|&t| spatial.chunks_exact(2).flat_map(move |p| [p[0], p[1], t]))
        .collect()
}

enum Field {
    Darcy { a: GridField, u: GridField },
    AllenCahn(AcWaveParams),
    NavierStokes { w0: GridField, wt: GridField },
}

impl Field {
    fn generate(cfg: &DataConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed);
        Ok(match cfg.problem {
            Problem::Darcy => {
                let (a, u) = darcy_sample(&cfg.darcy, &mut rng)?;
                Field::Darcy { a, u }
            }
            Problem::AllenCahn => Field::AllenCahn(AcWaveParams::sample(&mut rng)),
            Problem::NavierStokes => {
                let run = ns_sample(&cfg.navier_stokes, &mut rng)?;
                Field::NavierStokes {
                    w0: run.omega0,
                    wt: run.omega_t,
                }
            }
        })
    }

    fn input(&self, p: &[f64]) -> f64 {
        match self {
            Field::Darcy { a, .. } => a.eval(p[0], p[1]),
            Field::AllenCahn(w) => allen_cahn_eval(w, p[0], p[1], 0.0),
            Field::NavierStokes { w0, .. } => w0.eval(p[0], p[1]),
        }
    }

    fn output(&self, q: &[f64]) -> f64 {
        match self {
            Field::Darcy { u, .. } => u.eval(q[0], q[1]),
            Field::AllenCahn(w) => allen_cahn_eval(w, q[0], q[1], q[2]),
            Field::NavierStokes { wt, .. } => wt.eval(q[0], q[1]),
        }
    }
}

/// Seed of the underlying input function of record `index` in `split`;
/// shared by every sensor configuration.
pub fn field_seed(master: u64, split: Split, index: usize) -> u64 {
    derive_seed(master, split.tag(), index as u64)
}

/// Generates record `index` of `split`: the input function comes from
/// `master`, the sensor layout `sensors` is drawn from `layout_seed`.
pub fn generate_sample(
    cfg: &DataConfig,
    sensors: &SensorConfig,
    master: u64,
    layout_seed: u64,
    split: Split,
    index: usize,
) -> Result<OperatorSample> {
    let wrap = |e: Error| Error::Sample {
        index,
        source: Box::new(e),
    };
    let field = Field::generate(cfg, field_seed(master, split, index)).map_err(wrap)?;
    let domain = cfg.problem.domain();
    let coords = sample_coords(sensors, domain, layout_seed, split.layout_offset() + index as u64);
    let values: Vec<f64> = coords.chunks_exact(2).map(|p| field.input(p)).collect();
    let query = match split {
        Split::Train | Split::Val => grid_queries(cfg.problem, &coords, cfg.time_slices),
        Split::Test => {
            let spatial = lattice(cfg.test_grid.0, cfg.test_grid.1, domain);
            grid_queries(cfg.problem, &spatial, cfg.test_time_slices)
        }
    };
    let d_q = cfg.problem.query_dim();
    let target: Vec<f64> = query.chunks_exact(d_q).map(|q| field.output(q)).collect();
    let sample = OperatorSample {
        id: index as u32,
        d: 2,
        d_v: 1,
        d_q,
        d_u: 1,
        coords,
        values,
        query,
        target,
    };
    if !sample.values.iter().chain(&sample.target).all(|v| v.is_finite()) {
        return Err(wrap(Error::Domain("non-finite field values".into())));
    }
    Ok(sample)
}

/// Generates all records of one split in parallel; the result does not
/// depend on the number of worker threads.
pub fn generate_split(cfg: &DataConfig, master: u64, split: Split) -> Result<Vec<OperatorSample>> {
    (0..cfg.count(split))
        .into_par_iter()
        .map(|i| generate_sample(cfg, &cfg.sensors, master, master, split, i))
        .collect()
}

/// Summary printed after a build.
#[derive(Clone, Debug, Serialize)]
pub struct BuildSummary {
    pub counts: [usize; 3],
    pub sensor_counts: (usize, usize),
    pub allowed_counts: (usize, usize),
    pub seconds: f64,
}

/// Generates every split and writes `meta.json` plus one record file per split.
pub fn build_dataset(cfg: &DataConfig, master: u64, out: &Path) -> Result<BuildSummary> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits: Vec<Vec<OperatorSample>> = Split::ALL
        .iter()
        .map(|&s| generate_split(cfg, master, s))
        .collect::<Result<_>>()?;
    let normalization = Normalization::fit(&splits[0], cfg.problem != Problem::AllenCahn)?;
    let counts = splits.iter().flatten().map(|s| s.m());
    let sensor_counts = counts.fold((usize::MAX, 0), |(lo, hi), m| (lo.min(m), hi.max(m)));
    let meta = DatasetMeta {
        version: FORMAT_VERSION,
        seed: master,
        config: cfg.clone(),
        normalization,
        sensor_counts,
    };
    for (split, records) in Split::ALL.iter().zip(&splits) {
        write_records(&meta.split_path(out, *split), records, cfg.format)?;
    }
    let meta_path = out.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(BuildSummary {
        counts: [cfg.train, cfg.val, cfg.test],
        sensor_counts,
        allowed_counts: config_ranges(&cfg.sensors),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: u32,
    coords: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    query: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
}

fn rows(data: &[f64], width: usize) -> Vec<Vec<f64>> {
    data.chunks_exact(width.max(1)).map(<[f64]>::to_vec).collect()
}

fn unrows(rows: Vec<Vec<f64>>, line: usize) -> Result<(Vec<f64>, usize)> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Format(format!("ragged array on line {line}")));
    }
    Ok((rows.into_iter().flatten().collect(), width))
}

pub fn write_records(path: &Path, records: &[OperatorSample], format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        Format::Jsonl => {
            for r in records {
                let rec = JsonRecord {
                    id: r.id,
                    coords: rows(&r.coords, r.d),
                    values: rows(&r.values, r.d_v),
                    query: rows(&r.query, r.d_q),
                    target: rows(&r.target, r.d_u),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        Format::Bin => {
            w.write_all(MAGIC).map_err(io)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
            for r in records {
                r.validate()?;
                let dims16 = |v: usize| -> Result<[u8; 2]> {
                    u16::try_from(v)
                        .map(u16::to_le_bytes)
                        .map_err(|_| Error::Format(format!("dimension {v} exceeds u16")))
                };
                let count32 = |v: usize| -> Result<[u8; 4]> {
                    u32::try_from(v)
                        .map(u32::to_le_bytes)
                        .map_err(|_| Error::Format(format!("count {v} exceeds u32")))
                };
                w.write_all(&r.id.to_le_bytes()).map_err(io)?;
                w.write_all(&count32(r.m())?).map_err(io)?;
                w.write_all(&count32(r.q())?).map_err(io)?;
                for d in [r.d, r.d_v, r.d_q, r.d_u] {
                    w.write_all(&dims16(d)?).map_err(io)?;
                }
                for arr in [&r.coords, &r.values, &r.query, &r.target] {
                    for v in arr.iter() {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_records(path: &Path, format: Format) -> Result<Vec<OperatorSample>> {
    match format {
        Format::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut out = Vec::new();
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonRecord = serde_json::from_str(&line)?;
                let (coords, d) = unrows(rec.coords, n + 1)?;
                let (values, d_v) = unrows(rec.values, n + 1)?;
                let (query, d_q) = unrows(rec.query, n + 1)?;
                let (target, d_u) = unrows(rec.target, n + 1)?;
                let s = OperatorSample {
                    id: rec.id,
                    d,
                    d_v,
                    d_q,
                    d_u,
                    coords,
                    values,
                    query,
                    target,
                };
                s.validate()?;
                out.push(s);
            }
            Ok(out)
        }
        Format::Bin => {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)
        }
    }
}

/// Decodes a packed binary record file; an empty buffer holds zero records.
pub fn decode_binary(bytes: &[u8]) -> Result<Vec<OperatorSample>> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let mut c = Reader::new(bytes);
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a dataset file".into()));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let mut out = Vec::new();
    while !c.at_end() {
        let id = c.u32("record id")?;
        let m = c.u32("sensor count")? as usize;
        let q = c.u32("query count")? as usize;
        let mut dim = |what| c.u16(what).map(usize::from);
        let (d, d_v, d_q, d_u) = (dim("d")?, dim("d_v")?, dim("d_q")?, dim("d_u")?);
        let coords = c.f64s(m * d, "coordinates")?;
        let values = c.f64s(m * d_v, "values")?;
        let query = c.f64s(q * d_q, "queries")?;
        let target = c.f64s(q * d_u, "targets")?;
        out.push(OperatorSample {
            id,
            d,
            d_v,
            d_q,
            d_u,
            coords,
            values,
            query,
            target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::SensorKind;

    fn toy(id: u32, m: usize) -> OperatorSample {
        let f = |k: usize| (k as f64 * 0.37 + id as f64).sin() / 3.0;
        OperatorSample {
            id,
            d: 2,
            d_v: 1,
            d_q: 3,
            d_u: 1,
            coords: (0..2 * m).map(f).collect(),
            values: (0..m).map(|k| f(k + 100)).collect(),
            query: (0..3 * m).map(|k| f(k + 7)).collect(),
            target: (0..m).map(|k| f(k + 300) * 1e-300).collect(),
        }
    }

    fn small_ac() -> DataConfig {
        let mut cfg = DataConfig::full_size(Problem::AllenCahn);
        cfg.sensors = SensorConfig::new(SensorKind::Missing, 6, 6);
        cfg.train = 5;
        cfg.val = 2;
        cfg.test = 3;
        cfg.test_grid = (4, 4);
        cfg.time_slices = 3;
        cfg.test_time_slices = 2;
        cfg
    }

    #[test]
    fn binary_and_jsonl_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![toy(0, 3), toy(1, 5), toy(7, 1)];
        for fmt in [Format::Bin, Format::Jsonl] {
            let p = dir.path().join(format!("x.{}", fmt.extension()));
            write_records(&p, &recs, fmt).unwrap();
            assert_eq!(read_records(&p, fmt).unwrap(), recs);
        }
    }

    #[test]
    fn empty_files_hold_no_records() {
        assert!(decode_binary(&[]).unwrap().is_empty());
        let mut header = MAGIC.to_vec();
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        assert!(decode_binary(&header).unwrap().is_empty());
    }

    #[test]
    fn truncation_and_bad_magic_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_records(&p, &[toy(0, 4)], Format::Bin).unwrap();
        let bytes = fs::read(&p).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match decode_binary(cut) {
            Err(Error::Corruption { offset, .. }) => assert!(offset > 8 && (offset as usize) < cut.len()),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_binary(&bad), Err(Error::Format(_))));
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        assert!(matches!(decode_binary(&wrong_version), Err(Error::Format(_))));
    }

    #[test]
    fn normalization_maps_train_extremes_and_inverts() {
        let recs = vec![toy(0, 6), toy(1, 9)];
        let n = Normalization::fit(&recs, true).unwrap();
        let normed: Vec<_> = recs.iter().map(|r| n.normalize(r)).collect();
        let all_t: Vec<f64> = normed.iter().flat_map(|r| r.target.clone()).collect();
        assert_eq!(all_t.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(all_t.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        for (r, s) in recs.iter().zip(&normed) {
            let back = n.denormalize(s);
            for (a, b) in back
                .coords
                .iter()
                .chain(&back.target)
                .zip(r.coords.iter().chain(&r.target))
            {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_channel_is_identity() {
        let mut r = toy(0, 4);
        r.values = vec![2.5; 4];
        let n = Normalization::fit(&[r.clone()], true).unwrap();
        assert_eq!(n.values[0], ChannelScale::IDENTITY);
        assert_eq!(n.normalize(&r).values, r.values);
    }

    #[test]
    fn allen_cahn_samples_have_expected_layout() {
        let cfg = small_ac();
        let s = generate_sample(&cfg, &cfg.sensors, 11, 11, Split::Train, 0).unwrap();
        assert_eq!(s.q(), 3 * s.m());
        assert_eq!(&s.query[..3], &[s.coords[0], s.coords[1], 0.0]);
        let t = generate_sample(&cfg, &cfg.sensors, 11, 11, Split::Test, 0).unwrap();
        assert_eq!(t.q(), 4 * 4 * 2);
        assert!(t.target.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn builds_are_deterministic_and_respect_ranges() {
        let cfg = small_ac();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let summary = build_dataset(&cfg, 5, a.path()).unwrap();
        build_dataset(&cfg, 5, b.path()).unwrap();
        for split in ["train.bin", "val.bin", "test.bin", "meta.json"] {
            assert_eq!(
                fs::read(a.path().join(split)).unwrap(),
                fs::read(b.path().join(split)).unwrap()
            );
        }
        let (lo, hi) = config_ranges(&cfg.sensors);
        assert!(summary.sensor_counts.0 >= lo && summary.sensor_counts.1 <= hi);
        let meta = DatasetMeta::load(a.path()).unwrap();
        assert_eq!(meta.load_split(a.path(), Split::Val).unwrap().len(), 2);
        assert_eq!(meta.normalization.target[0], ChannelScale::IDENTITY);
    }

    #[test]
    fn field_is_shared_across_sensor_layouts() {
        let cfg = small_ac();
        let reg = SensorConfig::new(SensorKind::Regular, 6, 6);
        let a = generate_sample(&cfg, &reg, 3, 3, Split::Test, 1).unwrap();
        let b = generate_sample(&cfg, &cfg.sensors, 3, 9, Split::Test, 1).unwrap();
        assert_eq!(a.target, b.target);
    }
}
