//! Oracle checks behind `vidon verify`: finite-difference gradients,
//! Monte-Carlo Fourier convergence, solver accuracy and symmetry properties.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{OperatorModel, SensorSet, VidonParams, VidonSpec};
use crate::nn::{Activation, Mlp};
use crate::pde::{darcy_solve, ns_integrate, AcWaveParams, GridField, NsConfig, AC_DOMAIN, AC_FINAL_TIME};
use crate::seed::rng_from;
use crate::spectral::{mc_fourier_estimate, project_pn_grid};
use crate::tensor::Tensor;
use crate::train::{mse_loss, sample_gradient};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Autodiff,
    Spectral,
    Pde,
    Invariance,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Autodiff, Suite::Spectral, Suite::Pde, Suite::Invariance];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Autodiff => "autodiff",
            Suite::Spectral => "spectral",
            Suite::Pde => "pde",
            Suite::Invariance => "invariance",
        }
    }
}

/// One measured quantity with its acceptance rule.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub measured: f64,
    pub rule: String,
    pub pass: bool,
}

fn below(suite: &'static str, name: &'static str, measured: f64, limit: f64) -> Check {
    Check {
        suite,
        name,
        measured,
        rule: format!("< {limit:e}"),
        pass: measured < limit,
    }
}

fn within(suite: &'static str, name: &'static str, measured: f64, lo: f64, hi: f64) -> Check {
    Check {
        suite,
        name,
        measured,
        rule: format!("in [{lo}, {hi}]"),
        pass: (lo..=hi).contains(&measured),
    }
}

fn inside(suite: &'static str, name: &'static str, measured: f64, lo: f64, hi: f64) -> Check {
    Check {
        suite,
        name,
        measured,
        rule: format!("in ({lo}, {hi})"),
        pass: lo < measured && measured < hi,
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    let s = suite.name();
    Ok(match suite {
        Suite::Autodiff => {
            let g = gradient_check(&gradient_check_spec(), seed, 1e-5)?;
            vec![
                below(s, "max relative gradient error, all parameters", g.max_rel_err, 1e-5),
                below(
                    s,
                    "max relative gradient error, |g| >= 1e-5",
                    g.max_rel_err_resolved,
                    1e-5,
                ),
                below(
                    s,
                    "max absolute error / (eps loss / h)",
                    g.max_abs_err / g.rounding_scale,
                    100.0,
                ),
            ]
        }
        Suite::Spectral => {
            let rate = mc_fourier_rate(&[100, 1000, 10_000, 100_000], 20, seed)?;
            vec![within(s, "Monte-Carlo Fourier log-log slope", rate.slope, -0.6, -0.4)]
        }
        Suite::Pde => {
            let d = darcy_convergence()?;
            let ac = allen_cahn_shift(1000, seed);
            vec![
                within(s, "Darcy error ratio 64 -> 128", d.ratio, 3.2, 4.8),
                below(s, "Darcy CG relative residual", d.residual, 1e-10),
                below(
                    s,
                    "Taylor-Green relative error",
                    taylor_green_error(64, 1e-3, 1.0)?,
                    1e-3,
                ),
                below(s, "Allen-Cahn travelling-wave shift error", ac.max_shift_error, 1e-12),
                inside(s, "Allen-Cahn smallest value", ac.min_value, 0.0, 1.0),
                inside(s, "Allen-Cahn largest value", ac.max_value, 0.0, 1.0),
            ]
        }
        Suite::Invariance => {
            let inv = invariance(50, &[1, 2, 17, 256], 20, seed)?;
            vec![
                below(s, "permutations changing the branch output", inv.mismatches as f64, 0.5),
                below(s, "relative change under duplication", inv.duplication, 1e-12),
                below(s, "mean-pooling deviation", inv.mean_pooling, 1e-13),
            ]
        }
    })
}

/// Small VIDON used for finite-difference checks.
pub fn gradient_check_spec() -> VidonSpec {
    VidonSpec {
        coord_dim: 2,
        value_dim: 1,
        enc_dim: 8,
        heads: 2,
        basis: 4,
        head_out: 6,
        query_dim: 2,
        coord_hidden: vec![8, 8],
        value_hidden: vec![8, 8],
        weight_hidden: vec![8],
        head_hidden: vec![8],
        combiner_hidden: vec![8],
        trunk_hidden: vec![8, 8],
        activation: Activation::Tanh,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheck {
    /// Over every parameter.
    pub max_rel_err: f64,
    /// Over components with `max(|analytic|, |difference|) >= 1e-5`, where the
    /// rounding noise of the difference quotient is well below the tolerance.
    pub max_rel_err_resolved: f64,
    pub max_abs_err: f64,
    /// `eps * loss / h`, the rounding scale of the difference quotient.
    pub rounding_scale: f64,
    pub params: usize,
}

fn random_sensors(m: usize, rng: &mut impl Rng) -> SensorSet {
    let coords = (0..2 * m).map(|_| rng.random_range(0.0..1.0)).collect();
    let values = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    SensorSet::from_flat(coords, 2, values, 1).expect("consistent shapes")
}

/// Compares tape gradients of the MSE loss with central differences of step
/// `h` for every parameter. The relative error uses `max(|a|, |b|, 1e-7)` as
/// denominator so that vanishing gradients compare in absolute terms.
pub fn gradient_check(spec: &VidonSpec, seed: u64, h: f64) -> Result<GradCheck> {
    let mut rng = rng_from(seed);
    let model = OperatorModel::Vidon(VidonParams::init(spec, &mut rng)?);
    let sensors = random_sensors(7, &mut rng);
    let q = 5;
    let queries = Tensor::matrix(
        q,
        spec.query_dim,
        (0..q * spec.query_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
    )?;
    let target = Tensor::matrix(q, 1, (0..q).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let (base_loss, grads) = sample_gradient(&model, &sensors, &queries, &target)?;
    let loss = |m: &OperatorModel| -> Result<f64> { mse_loss(&m.forward(&sensors, &queries)?, &target) };
    let (mut worst, mut worst_resolved, mut worst_abs) = (0.0f64, 0.0f64, 0.0f64);
    let mut probe = model.clone();
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = model.tensors()[k].data()[i];
            probe.tensors_mut()[k].data_mut()[i] = orig + h;
            let up = loss(&probe)?;
            probe.tensors_mut()[k].data_mut()[i] = orig - h;
            let down = loss(&probe)?;
            probe.tensors_mut()[k].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = g.data()[i];
            let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-7);
            worst = worst.max(rel);
            worst_abs = worst_abs.max((fd - ad).abs());
            if fd.abs().max(ad.abs()) >= 1e-5 {
                worst_resolved = worst_resolved.max(rel);
            }
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        max_rel_err_resolved: worst_resolved,
        max_abs_err: worst_abs,
        rounding_scale: f64::EPSILON * base_loss / h,
        params: model.count_params(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct McRate {
    pub samples: Vec<usize>,
    pub mean_errors: Vec<f64>,
    pub slope: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Mean `L^2` error of Monte-Carlo Fourier coefficients (band 2) of
/// `sin(x1) + cos(2 x2)` on the `2 pi` torus, for each sample count.
pub fn mc_fourier_rate(samples: &[usize], trials: usize, seed: u64) -> Result<McRate> {
    let period = 2.0 * PI;
    let v = |x: &[f64]| x[0].sin() + (2.0 * x[1]).cos();
    // Nodal values on an 8 x 8 grid determine the band-2 coefficients exactly.
    let n = 8;
    let grid: Vec<f64> = (0..n * n)
        .map(|c| {
            let (i, j) = (c / n, c % n);
            v(&[period * i as f64 / n as f64, period * j as f64 / n as f64])
        })
        .collect();
    let exact = project_pn_grid(&grid, 2, period, 2)?;
    let mut rng = rng_from(seed);
    let mut mean_errors = Vec::new();
    for &count in samples {
        let mut total = 0.0;
        for _ in 0..trials {
            total += mc_fourier_estimate(v, 2, period, 2, count, &mut rng)?.l2_distance(&exact);
        }
        mean_errors.push(total / trials as f64);
    }
    let xs: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    Ok(McRate {
        samples: samples.to_vec(),
        slope: loglog_slope(&xs, &mean_errors),
        mean_errors,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DarcyConvergence {
    pub coarse_error: f64,
    pub fine_error: f64,
    pub ratio: f64,
    pub residual: f64,
}

/// Manufactured solution `u = sin(2 pi x) cos(2 pi y)` with coefficient
/// `a = 1 + sin(2 pi x) sin(2 pi y) / 2`; discrete `L^2` errors on 64^2 and 128^2.
pub fn darcy_convergence() -> Result<DarcyConvergence> {
    let k = 2.0 * PI;
    let a = |x: f64, y: f64| 1.0 + 0.5 * (k * x).sin() * (k * y).sin();
    let u = |x: f64, y: f64| (k * x).sin() * (k * y).cos();
    let f = |x: f64, y: f64| {
        let ax = 0.5 * k * (k * x).cos() * (k * y).sin();
        let ay = 0.5 * k * (k * x).sin() * (k * y).cos();
        let ux = k * (k * x).cos() * (k * y).cos();
        let uy = -k * (k * x).sin() * (k * y).sin();
        -(ax * ux + ay * uy) + 2.0 * k * k * a(x, y) * u(x, y)
    };
    let mut errors = Vec::new();
    let mut residual = 0.0f64;
    for n in [64, 128] {
        let sol = darcy_solve(
            &GridField::from_fn(n, 1.0, a),
            &GridField::from_fn(n, 1.0, f),
            1e-12,
            20_000,
        )?;
        residual = residual.max(sol.residual);
        let exact = GridField::from_fn(n, 1.0, u);
        let diff: Vec<f64> = sol.u.values().iter().zip(exact.values()).map(|(p, q)| p - q).collect();
        errors.push(GridField::new(n, n, 1.0, diff)?.l2_norm());
    }
    Ok(DarcyConvergence {
        coarse_error: errors[0],
        fine_error: errors[1],
        ratio: errors[0] / errors[1],
        residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TravellingWave {
    /// Largest `|u(x, y, t) - u(x - 6 t c_x, y - 6 t c_y, 0)|`.
    pub max_shift_error: f64,
    pub min_value: f64,
    pub max_value: f64,
}

/// Checks the travelling-wave shift identity of the Allen-Cahn closed form at
/// `draws` random parameters and space-time points.
pub fn allen_cahn_shift(draws: usize, seed: u64) -> TravellingWave {
    let mut rng = rng_from(seed);
    let mut out = TravellingWave {
        max_shift_error: 0.0,
        min_value: f64::INFINITY,
        max_value: f64::NEG_INFINITY,
    };
    for _ in 0..draws {
        let w = AcWaveParams::sample(&mut rng);
        let x = rng.random_range(0.0..=AC_DOMAIN);
        let y = rng.random_range(0.0..=AC_DOMAIN);
        let t = rng.random_range(0.0..=AC_FINAL_TIME);
        let u = w.eval(x, y, t);
        let shifted = w.eval(x - 6.0 * t * w.cx, y - 6.0 * t * w.cy, 0.0);
        out.max_shift_error = out.max_shift_error.max((u - shifted).abs());
        out.min_value = out.min_value.min(u);
        out.max_value = out.max_value.max(u);
    }
    out
}

/// Relative `L^2` distance between the computed Taylor-Green vorticity at
/// time `t` and the exact decay `exp(-8 pi^2 nu t)`.
pub fn taylor_green_error(n: usize, nu: f64, t: f64) -> Result<f64> {
    let k = 2.0 * PI;
    let w0 = GridField::from_fn(n, 1.0, |x, y| -2.0 * k * k * (k * x).sin() * (k * y).sin());
    let cfg = NsConfig {
        resolution: n,
        nu,
        final_time: t,
        ..NsConfig::default()
    };
    let run = ns_integrate(&cfg, w0.clone())?;
    let decay = (-2.0 * k * k * nu * t).exp();
    let num: f64 = run
        .omega_t
        .values()
        .iter()
        .zip(w0.values())
        .map(|(a, b)| (a - decay * b).powi(2))
        .sum();
    let den: f64 = w0.values().iter().map(|b| (decay * b).powi(2)).sum();
    Ok((num / den).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct Invariance {
    pub evaluations: usize,
    pub mismatches: usize,
    pub duplication: f64,
    pub mean_pooling: f64,
}

fn width(rng: &mut impl Rng) -> Vec<usize> {
    vec![rng.random_range(3..=10); rng.random_range(1..=2)]
}

fn random_spec(rng: &mut impl Rng) -> VidonSpec {
    let enc = rng.random_range(3..=8);
    VidonSpec {
        coord_dim: 2,
        value_dim: 1,
        enc_dim: enc,
        heads: rng.random_range(1..=3),
        basis: rng.random_range(1..=6),
        head_out: rng.random_range(2..=6),
        query_dim: 2,
        coord_hidden: width(rng),
        value_hidden: width(rng),
        weight_hidden: width(rng),
        head_hidden: width(rng),
        combiner_hidden: width(rng),
        trunk_hidden: width(rng),
        activation: Activation::Tanh,
    }
}

fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Branch outputs of random instances under sensor permutations (bitwise),
/// under duplication of every sensor, and head outputs with zeroed weight
/// networks against plain averaging.
pub fn invariance(instances: usize, sizes: &[usize], perms: usize, seed: u64) -> Result<Invariance> {
    let mut rng = rng_from(seed);
    let mut out = Invariance {
        evaluations: 0,
        mismatches: 0,
        duplication: 0.0,
        mean_pooling: 0.0,
    };
    for _ in 0..instances {
        let spec = random_spec(&mut rng);
        let mut model = VidonParams::init(&spec, &mut rng)?;
        for &m in sizes {
            let s = random_sensors(m, &mut rng);
            let base = model.branch(&s)?;
            let mut perm: Vec<usize> = (0..m).collect();
            for _ in 0..perms {
                perm.shuffle(&mut rng);
                out.evaluations += 1;
                if model.branch(&s.permuted(&perm)?)?.data() != base.data() {
                    out.mismatches += 1;
                }
            }
            out.duplication = out
                .duplication
                .max(max_rel_diff(&base, &model.branch(&s.replicated(2)?)?));
        }
        for h in &mut model.heads {
            h.weight = Mlp::zeros(h.weight.spec());
        }
        let s = random_sensors(17, &mut rng);
        let psi = model.encode_sensors(&s)?;
        for l in 0..spec.heads {
            let head = model.head_output(l, &psi)?;
            let values = model.heads[l].value.forward(&psi)?;
            let m = values.rows() as f64;
            for (c, h) in head.data().iter().enumerate() {
                let mean = (0..values.rows()).map(|r| values.row(r)[c]).sum::<f64>() / m;
                out.mean_pooling = out.mean_pooling.max((h - mean).abs());
            }
        }
    }
    if out.evaluations == 0 {
        return Err(Error::Domain("invariance check needs at least one instance".into()));
    }
    Ok(out)
}
