//! Training: MSE loss, Adam, learning-rate halving, validation-based
//! checkpoint selection and relative L2 evaluation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{put_f64s, Reader};
use crate::dataset::{Normalization, OperatorSample};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, OperatorModel, SensorSet};
use crate::seed::{derived_rng, stream};
use crate::tensor::{Tape, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"VIDC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs at which the learning rate halves.
    #[serde(default)]
    pub halve_at: Vec<usize>,
    #[serde(default)]
    pub weight_decay: f64,
    /// Apply weight decay directly to the parameters instead of the gradient.
    #[serde(default)]
    pub decoupled_weight_decay: bool,
    pub max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Random query points per sample and step; all points when absent.
    #[serde(default)]
    pub query_batch: Option<usize>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Shuffling and query-sampling seed; set from the experiment seed.
    #[serde(skip)]
    pub seed: u64,
    /// Epoch interval for refreshing `last.ckpt`.
    #[serde(default = "default_every")]
    pub checkpoint_every: usize,
}

fn default_batch() -> usize {
    16
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

fn default_every() -> usize {
    500
}

impl TrainConfig {
    pub fn new(lr0: f64, max_epochs: usize) -> Self {
        Self {
            lr0,
            halve_at: Vec::new(),
            weight_decay: 0.0,
            decoupled_weight_decay: false,
            max_epochs,
            batch_size: default_batch(),
            query_batch: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            seed: 0,
            checkpoint_every: default_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad("lr0 must be positive");
        }
        if self.halve_at.windows(2).any(|w| w[0] >= w[1]) {
            return bad("halve_at must be strictly increasing");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.query_batch == Some(0) {
            return bad("query_batch must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }
}

/// `lr0 * 2^-(number of halving epochs <= epoch)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let n = cfg.halve_at.iter().filter(|&&h| h <= epoch).count();
    cfg.lr0 * 0.5f64.powi(n as i32)
}

/// Mean of squared differences over all entries.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("mse", pred.shape(), target.shape()));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `||pred - target|| / ||target||` with uniform weights.
pub fn relative_l2(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || target.is_empty() {
        return Err(Error::dim("relative_l2", &[pred.len()], &[target.len()]));
    }
    let den = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Domain("relative L2 error of a zero target".into()));
    }
    let num = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Mean and standard deviation of per-sample errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_rel_l2: f64,
    pub std_rel_l2: f64,
    pub n: usize,
}

impl EvalSummary {
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n.max(1) as f64;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n.max(1) as f64;
        Self {
            mean_rel_l2: mean,
            std_rel_l2: var.sqrt(),
            n,
        }
    }
}

/// Adam moments with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn from_config(cfg: &TrainConfig, params: &[&Tensor]) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.eps, params)
    }

    /// One update. With `decoupled` the decay shrinks parameters directly;
    /// otherwise `weight_decay * theta` is added to the gradient.
    pub fn step(
        &mut self,
        params: Vec<&mut Tensor>,
        grads: &[Tensor],
        lr: f64,
        weight_decay: f64,
        decoupled: bool,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::dim("adam", &[params.len(), self.m.len()], &[grads.len()]));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim("adam", p.shape(), g.shape()));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let theta = p.data_mut();
            for i in 0..theta.len() {
                let mut gi = g.data()[i];
                if decoupled {
                    theta[i] -= lr * weight_decay * theta[i];
                } else {
                    gi += weight_decay * theta[i];
                }
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// A record ready for the network: normalized inputs plus the physical target.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: u32,
    pub sensors: SensorSet,
    /// Normalized queries `[q x d_q]`.
    pub queries: Tensor,
    /// Normalized targets `[q x d_u]`.
    pub target: Tensor,
    /// Targets in physical units, flattened.
    pub truth: Vec<f64>,
}

pub fn prepare(samples: &[OperatorSample], norm: &Normalization) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            let n = norm.normalize(s);
            Ok(Example {
                id: s.id,
                sensors: n.sensor_set()?,
                queries: n.query_tensor()?,
                target: n.target_tensor()?,
                truth: s.target.clone(),
            })
        })
        .collect()
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let c = t.cols();
    let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
    Tensor::matrix(rows.len(), c, data)
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradient(
    model: &OperatorModel,
    sensors: &SensorSet,
    queries: &Tensor,
    target: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let leaves = model.bind(&mut tape, true);
    let pred = model.forward_traced(&mut tape, &leaves, sensors, queries)?;
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean(sq)?;
    let value = tape.value(loss).item()?;
    Ok((value, tape.backward(loss)?.collect(&leaves)?))
}

/// One item of a training batch.
pub struct BatchItem<'a> {
    pub sensors: &'a SensorSet,
    pub queries: std::borrow::Cow<'a, Tensor>,
    pub target: std::borrow::Cow<'a, Tensor>,
}

/// Mean loss and mean gradient over samples of differing sizes. Samples run
/// in parallel; the reduction order is fixed.
pub fn batch_gradient(model: &OperatorModel, items: &[BatchItem<'_>]) -> Result<(f64, Vec<Tensor>)> {
    let parts: Vec<(f64, Vec<Tensor>)> = items
        .par_iter()
        .map(|it| sample_gradient(model, it.sensors, &it.queries, &it.target))
        .collect::<Result<_>>()?;
    let inv = 1.0 / items.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, first) = iter.next().ok_or_else(|| Error::Domain("empty batch".into()))?;
    let mut acc: Vec<Vec<f64>> = first.into_iter().map(Tensor::into_vec).collect();
    for (l, g) in iter {
        loss += l;
        for (a, t) in acc.iter_mut().zip(&g) {
            a.iter_mut().zip(t.data()).for_each(|(x, y)| *x += y);
        }
    }
    let shapes = model.tensors().into_iter().map(|t| t.shape().to_vec());
    let grads = acc
        .into_iter()
        .zip(shapes)
        .map(|(mut a, s)| {
            a.iter_mut().for_each(|x| *x *= inv);
            Tensor::new(s, a)
        })
        .collect::<Result<_>>()?;
    Ok((loss * inv, grads))
}

/// Per-sample relative L2 errors in physical units.
pub fn evaluate(model: &OperatorModel, examples: &[Example], norm: &Normalization) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| {
            let pred = model.forward(&ex.sensors, &ex.queries)?;
            relative_l2(&norm.denormalize_target(pred.data()), &ex.truth)
        })
        .collect()
}

/// Trained parameters with everything needed to evaluate or resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub val_rel_l2: f64,
    pub config_hash: u64,
    pub model: OperatorModel,
    pub normalization: Normalization,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    spec: ModelSpec,
    normalization: Normalization,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

fn put_block(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_f64s(out, data);
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            spec: self.model.spec(),
            normalization: self.normalization.clone(),
            adam: self.optimizer.as_ref().map(|a| AdamHeader {
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                step: a.step,
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.val_rel_l2.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let names = self.model.tensor_names();
        let tensors = self.model.tensors();
        let n_blocks = names.len() * if self.optimizer.is_some() { 3 } else { 1 };
        out.extend_from_slice(&(n_blocks as u32).to_le_bytes());
        for (name, t) in names.iter().zip(&tensors) {
            put_block(&mut out, name, t.shape(), t.data());
        }
        if let Some(adam) = &self.optimizer {
            for (prefix, moments) in [("adam.m", &adam.m), ("adam.v", &adam.v)] {
                for ((name, t), mom) in names.iter().zip(&tensors).zip(moments) {
                    put_block(&mut out, &format!("{prefix}/{name}"), t.shape(), mom);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic, not a checkpoint".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_hash = r.u64("config hash")?;
        let epoch = r.u64("epoch")? as usize;
        let val_rel_l2 = r.f64("validation error")?;
        let json_len = r.u32("header length")? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(json_len, "header")?)?;
        let mut blocks = std::collections::HashMap::new();
        for _ in 0..r.u32("block count")? {
            let offset = r.pos();
            let name_len = r.u16("block name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "block name")?.to_vec()).map_err(|_| Error::Corruption {
                offset: offset as u64,
                reason: "block name is not UTF-8".into(),
            })?;
            let ndim = r.u8("block rank")? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64("block shape").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Corruption {
                    offset: offset as u64,
                    reason: "block size overflows".into(),
                })?;
            let data = r.f64s(len, "block data")?;
            blocks.insert(name, (shape, data));
        }
        let mut model = header.spec.init(&mut ChaCha8Rng::seed_from_u64(0))?;
        let names = model.tensor_names();
        let mut take = |name: &str, expect: &[usize]| -> Result<Vec<f64>> {
            let (shape, data) = blocks
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks block '{name}'")))?;
            if shape != expect {
                return Err(Error::dim("checkpoint block", expect, &shape));
            }
            Ok(data)
        };
        for (name, t) in names.iter().zip(model.tensors_mut()) {
            let data = take(name, t.shape())?;
            t.data_mut().copy_from_slice(&data);
        }
        let optimizer = match header.adam {
            None => None,
            Some(h) => {
                let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
                let mut moments = |prefix: &str| -> Result<Vec<Vec<f64>>> {
                    names
                        .iter()
                        .zip(&shapes)
                        .map(|(n, s)| take(&format!("{prefix}/{n}"), s))
                        .collect()
                };
                let m = moments("adam.m")?;
                let v = moments("adam.v")?;
                Some(Adam {
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                    step: h.step,
                    m,
                    v,
                })
            }
        };
        if let Some(extra) = blocks.keys().next() {
            return Err(Error::Format(format!("unexpected checkpoint block '{extra}'")));
        }
        Ok(Self {
            epoch,
            val_rel_l2,
            config_hash,
            model,
            normalization: header.normalization,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// FNV-1a hash, used to tie checkpoints to the configuration that made them.
pub fn config_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_rel_l2: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Directory for `best.ckpt`, `last.ckpt` and `metrics.csv`.
    pub out_dir: Option<PathBuf>,
    pub config_hash: u64,
    pub resume: Option<Checkpoint>,
    /// Print one progress line every this many epochs (0 = silent).
    pub log_every: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

pub const METRICS_HEADER: &str = "epoch,train_mse,val_rel_l2,lr,seconds";

struct Metrics {
    writer: Option<BufWriter<File>>,
    path: PathBuf,
}

impl Metrics {
    fn open(dir: Option<&Path>, append: bool) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self {
                writer: None,
                path: PathBuf::new(),
            });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        let exists = path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut writer = BufWriter::new(file);
        if !append || !exists {
            writeln!(writer, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            writer: Some(writer),
            path,
        })
    }

    fn row(&mut self, r: &EpochRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:.3}",
                r.epoch, r.train_mse, r.val_rel_l2, r.lr, r.seconds
            )
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Trains `model` on `train`, selecting the parameters with the lowest mean
/// validation error (the initial parameters count as epoch 0).
pub fn fit(
    model: OperatorModel,
    train: &[Example],
    val: &[Example],
    norm: &Normalization,
    cfg: &TrainConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Domain(
            "training needs non-empty train and validation sets".into(),
        ));
    }
    let start = Instant::now();
    let dir = opts.out_dir.as_deref();
    let (mut model, mut adam, first_epoch) = match &opts.resume {
        Some(ck) => {
            let adam = ck
                .optimizer
                .clone()
                .ok_or_else(|| Error::Format("resume checkpoint has no optimizer state".into()))?;
            (ck.model.clone(), adam, ck.epoch)
        }
        None => {
            let adam = Adam::from_config(cfg, &model.tensors());
            (model, adam, 0)
        }
    };
    let snapshot = |model: &OperatorModel, adam: &Adam, epoch: usize, val: f64| Checkpoint {
        epoch,
        val_rel_l2: val,
        config_hash: opts.config_hash,
        model: model.clone(),
        normalization: norm.clone(),
        optimizer: Some(adam.clone()),
    };
    let save = |ck: &Checkpoint, name: &str| match dir {
        Some(d) => ck.save(&d.join(name)),
        None => Ok(()),
    };

    let initial_val = mean(&evaluate(&model, val, norm)?);
    let mut best = snapshot(&model, &adam, first_epoch, initial_val);
    if opts.resume.is_some() {
        if let Some(prev) = dir.map(|d| d.join("best.ckpt")).filter(|p| p.exists()) {
            let prev = Checkpoint::load(&prev)?;
            if prev.val_rel_l2 <= best.val_rel_l2 {
                best = prev;
            }
        }
    }
    save(&best, "best.ckpt")?;
    let mut metrics = Metrics::open(dir, opts.resume.is_some())?;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in first_epoch..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        order.sort_unstable();
        order.shuffle(&mut derived_rng(cfg.seed, stream::SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items = chunk
                .iter()
                .map(|&i| batch_item(&train[i], cfg, epoch, i))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_gradient(&model, &items)?;
            let max_grad = grads.iter().map(Tensor::max_abs).fold(0.0, f64::max);
            if !loss.is_finite() || !max_grad.is_finite() {
                return Err(Error::NonFinite {
                    epoch: epoch + 1,
                    batch: b,
                    max_grad,
                });
            }
            adam.step(
                model.tensors_mut(),
                &grads,
                lr,
                cfg.weight_decay,
                cfg.decoupled_weight_decay,
            )?;
            loss_sum += loss * chunk.len() as f64;
        }
        let val_err = mean(&evaluate(&model, val, norm)?);
        let record = EpochRecord {
            epoch: epoch + 1,
            train_mse: loss_sum / train.len() as f64,
            val_rel_l2: val_err,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        if val_err < best.val_rel_l2 {
            best = snapshot(&model, &adam, epoch + 1, val_err);
            save(&best, "best.ckpt")?;
        }
        metrics.row(&record)?;
        if opts.log_every > 0 && (epoch + 1) % opts.log_every == 0 {
            eprintln!(
                "epoch {:>6}  train_mse {:.3e}  val_rel_l2 {:.4e}  best {:.4e}  lr {:.2e}  {:.0}s",
                record.epoch, record.train_mse, record.val_rel_l2, best.val_rel_l2, lr, record.seconds
            );
        }
        history.push(record);
        if (epoch + 1) % cfg.checkpoint_every == 0 {
            save(&snapshot(&model, &adam, epoch + 1, val_err), "last.ckpt")?;
        }
    }
    let last_val = history.last().map_or(best.val_rel_l2, |r| r.val_rel_l2);
    let last = snapshot(&model, &adam, cfg.max_epochs.max(first_epoch), last_val);
    save(&last, "last.ckpt")?;
    Ok(FitResult { best, last, history })
}

fn batch_item<'a>(ex: &'a Example, cfg: &TrainConfig, epoch: usize, i: usize) -> Result<BatchItem<'a>> {
    use std::borrow::Cow;
    let q = ex.queries.rows();
    match cfg.query_batch {
        Some(k) if k < q => {
            let mut rng = derived_rng(cfg.seed, stream::QUERIES, ((epoch as u64) << 32) | i as u64);
            let mut rows = index::sample(&mut rng, q, k).into_vec();
            rows.sort_unstable();
            Ok(BatchItem {
                sensors: &ex.sensors,
                queries: Cow::Owned(select_rows(&ex.queries, &rows)?),
                target: Cow::Owned(select_rows(&ex.target, &rows)?),
            })
        }
        _ => Ok(BatchItem {
            sensors: &ex.sensors,
            queries: Cow::Borrowed(&ex.queries),
            target: Cow::Borrowed(&ex.target),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeeponetParams, DeeponetSpec, VidonParams, VidonSpec};
    use crate::nn::{Activation, Mlp, MlpSpec};

    fn tiny_vidon() -> OperatorModel {
        let spec = VidonSpec {
            coord_dim: 1,
            value_dim: 1,
            enc_dim: 4,
            heads: 2,
            basis: 3,
            head_out: 4,
            query_dim: 1,
            coord_hidden: vec![5],
            value_hidden: vec![5],
            weight_hidden: vec![5],
            head_hidden: vec![5],
            combiner_hidden: vec![6],
            trunk_hidden: vec![6],
            activation: Activation::Tanh,
        };
        OperatorModel::Vidon(VidonParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap())
    }

    fn toy_examples(n: usize, seed: u64) -> Vec<Example> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let m = 3 + i % 4;
                let a: f64 = rng.random_range(0.5..1.5);
                let xs: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
                let vs: Vec<f64> = xs.iter().map(|x| a * x).collect();
                let t: Vec<f64> = xs.iter().map(|x| a * x * x + 1.0).collect();
                Example {
                    id: i as u32,
                    sensors: SensorSet::from_flat(xs.clone(), 1, vs, 1).unwrap(),
                    queries: Tensor::matrix(m, 1, xs).unwrap(),
                    target: Tensor::matrix(m, 1, t.clone()).unwrap(),
                    truth: t,
                }
            })
            .collect()
    }

    #[test]
    fn mse_cases() {
        let t = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(mse_loss(&Tensor::vector(vec![1.0, 2.0]), &t).unwrap(), 2.5);
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let c = Tensor::vector(vec![0.3, 0.3]);
        assert!((mse_loss(&c, &t).unwrap() - 0.09).abs() < 1e-15);
        assert!(mse_loss(&t, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn relative_l2_cases() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(relative_l2(&t, &t).unwrap(), 0.0);
        assert_eq!(relative_l2(&[0.0; 3], &t).unwrap(), 1.0);
        let scaled: Vec<f64> = t.iter().map(|v| 1.01 * v).collect();
        assert!((relative_l2(&scaled, &t).unwrap() - 0.01).abs() < 1e-14);
        assert!(matches!(relative_l2(&t, &[0.0; 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn schedule_halvings() {
        let mut cfg = TrainConfig::new(1e-4, 100_000);
        cfg.halve_at = vec![20_000, 40_000, 60_000, 80_000];
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert!((lr_at(50_000, &cfg) - 2.5e-5).abs() < 1e-20);
        assert_eq!(lr_at(90_000, &cfg), 1e-4 / 16.0);
        cfg.halve_at = vec![5, 5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adam_zero_gradient_and_first_step_bound() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let orig = p.clone();
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[&p]);
        adam.step(vec![&mut p], &[Tensor::zeros(&[3])], 1e-3, 0.0, false)
            .unwrap();
        assert_eq!(p, orig);
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[&p]);
        let g = Tensor::vector(vec![1e-6, -3.0, 250.0]);
        adam.step(vec![&mut p], &[g], 1e-3, 0.0, false).unwrap();
        for (a, b) in p.data().iter().zip(orig.data()) {
            let d = (a - b).abs();
            assert!(d <= 1e-3 * (1.0 + 1e-6) && d > 0.0);
        }
    }

    #[test]
    fn coupled_and_decoupled_decay() {
        let mut p = Tensor::vector(vec![2.0]);
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[&p]);
        adam.step(vec![&mut p], &[Tensor::zeros(&[1])], 0.1, 0.5, false)
            .unwrap();
        assert!((p.data()[0] - 1.9).abs() < 1e-7);
        let mut q = Tensor::vector(vec![2.0]);
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[&q]);
        adam.step(vec![&mut q], &[Tensor::zeros(&[1])], 0.1, 0.5, true).unwrap();
        assert_eq!(q.data()[0], 1.9);
    }

    #[test]
    fn ragged_batch_gradient_is_mean_of_samples() {
        let model = tiny_vidon();
        let ex = toy_examples(5, 2);
        let items: Vec<BatchItem> = ex
            .iter()
            .map(|e| BatchItem {
                sensors: &e.sensors,
                queries: std::borrow::Cow::Borrowed(&e.queries),
                target: std::borrow::Cow::Borrowed(&e.target),
            })
            .collect();
        let (loss, grads) = batch_gradient(&model, &items).unwrap();
        let singles: Vec<_> = ex
            .iter()
            .map(|e| sample_gradient(&model, &e.sensors, &e.queries, &e.target).unwrap())
            .collect();
        let mean_loss = singles.iter().map(|s| s.0).sum::<f64>() / 5.0;
        assert!((loss - mean_loss).abs() < 1e-12);
        for (k, g) in grads.iter().enumerate() {
            for (i, v) in g.data().iter().enumerate() {
                let avg = singles.iter().map(|s| s.1[k].data()[i]).sum::<f64>() / 5.0;
                assert!((v - avg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let model = tiny_vidon();
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &model.tensors());
        adam.step = 7;
        adam.m[0][0] = 0.25;
        let ck = Checkpoint {
            epoch: 12,
            val_rel_l2: 0.125,
            config_hash: 99,
            model,
            normalization: Normalization::identity(1, 1, 1, 1),
            optimizer: Some(adam),
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        match Checkpoint::from_bytes(&bytes[..bytes.len() - 5]) {
            Err(Error::Corruption { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes;
        bad[1] = b'x';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn zero_epochs_keeps_initial_parameters() {
        let model = tiny_vidon();
        let ex = toy_examples(4, 3);
        let norm = Normalization::identity(1, 1, 1, 1);
        let res = fit(
            model.clone(),
            &ex,
            &ex,
            &norm,
            &TrainConfig::new(1e-3, 0),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(res.best.model, model);
        assert_eq!(res.best.epoch, 0);
        let expect = mean(&evaluate(&model, &ex, &norm).unwrap());
        assert_eq!(res.best.val_rel_l2, expect);
        assert!(res.history.is_empty());
    }

    #[test]
    fn convex_fit_improves_and_best_is_minimal() {
        // Affine DeepONet on a linear operator: a least-squares problem.
        let spec = DeeponetSpec {
            sensors: 3,
            value_dim: 1,
            basis: 1,
            query_dim: 1,
            branch_hidden: vec![],
            trunk_hidden: vec![],
            activation: Activation::Tanh,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let branch = Mlp::init(&MlpSpec::new(3, &[], 1), &mut rng);
        let mut trunk = Mlp::zeros(&MlpSpec::new(1, &[], 2));
        trunk
            .tensors_mut()
            .nth(1)
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.0, 1.0]);
        let model = OperatorModel::Deeponet(DeeponetParams::from_parts(&spec, branch, trunk).unwrap());
        let xs = vec![0.0, 0.5, 1.0];
        let ex: Vec<Example> = (0..8)
            .map(|i| {
                let a = 0.5 + i as f64 / 8.0;
                let vs: Vec<f64> = xs.iter().map(|x| a * (1.0 + x)).collect();
                let t = vec![3.0 * a];
                Example {
                    id: i,
                    sensors: SensorSet::from_flat(xs.clone(), 1, vs, 1).unwrap(),
                    queries: Tensor::matrix(1, 1, vec![0.0]).unwrap(),
                    target: Tensor::matrix(1, 1, t.clone()).unwrap(),
                    truth: t,
                }
            })
            .collect();
        let mut cfg = TrainConfig::new(1e-2, 100);
        cfg.batch_size = 8;
        let norm = Normalization::identity(1, 1, 1, 1);
        let res = fit(model, &ex, &ex, &norm, &cfg, &FitOptions::default()).unwrap();
        let v: Vec<f64> = res.history.iter().map(|r| r.val_rel_l2).collect();
        assert!(v[99] < 0.1 * v[0], "{} -> {}", v[0], v[99]);
        let first: f64 = v[..10].iter().sum();
        let last: f64 = v[90..].iter().sum();
        assert!(last < first);
        assert!(v.iter().all(|&e| res.best.val_rel_l2 <= e));
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let ex = toy_examples(6, 5);
        let norm = Normalization::identity(1, 1, 1, 1);
        let mut cfg = TrainConfig::new(1e-2, 6);
        cfg.batch_size = 4;
        cfg.query_batch = Some(2);
        let full = fit(tiny_vidon(), &ex, &ex, &norm, &cfg, &FitOptions::default()).unwrap();
        let again = fit(tiny_vidon(), &ex, &ex, &norm, &cfg, &FitOptions::default()).unwrap();
        assert_eq!(full.last, again.last);

        let opts = FitOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..FitOptions::default()
        };
        let mut half = cfg.clone();
        half.max_epochs = 3;
        fit(tiny_vidon(), &ex, &ex, &norm, &half, &opts).unwrap();
        let resume = Checkpoint::load(&dir.path().join("last.ckpt")).unwrap();
        let opts = FitOptions {
            resume: Some(resume),
            ..opts
        };
        let resumed = fit(tiny_vidon(), &ex, &ex, &norm, &cfg, &opts).unwrap();
        assert_eq!(resumed.last.model, full.last.model);
        assert_eq!(resumed.history[0].epoch, 4);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 1 + 6);
        let best = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
        assert!(full.history.iter().all(|r| best.val_rel_l2 <= r.val_rel_l2));
        let reloaded = mean(&evaluate(&best.model, &ex, &norm).unwrap());
        assert_eq!(reloaded, best.val_rel_l2);
    }
}
