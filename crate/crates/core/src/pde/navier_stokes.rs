use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::GridField;
use crate::error::{Error, Result};
use crate::spectral::{nyquist_cutoff, sample_grf, GrfSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const CFL_LIMIT: f64 = 0.5;

/// Pseudo-spectral vorticity solver on the unit torus with an `n x n` grid.
pub struct NsSolver {
    n: usize,
    nu: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    mask: Vec<bool>,
    bufs: [Vec<Complex64>; 4],
}

impl NsSolver {
    pub fn new(n: usize, nu: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Domain(format!("grid size must be a power of two >= 4, got {n}")));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch = vec![ZERO; fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
        let wave = |i: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
        let size = n * n;
        let (mut kx, mut ky, mut k2, mut mask) = (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![false; size]);
        let cut = n as f64 / 3.0;
        for i in 0..n {
            for j in 0..n {
                let c = i * n + j;
                let (mi, mj) = (wave(i), wave(j));
                // The Nyquist row has no well-defined derivative; the mask removes it anyway.
                kx[c] = if 2 * i == n { 0.0 } else { 2.0 * PI * mi };
                ky[c] = if 2 * j == n { 0.0 } else { 2.0 * PI * mj };
                k2[c] = (2.0 * PI).powi(2) * (mi * mi + mj * mj);
                mask[c] = mi.abs() < cut && mj.abs() < cut;
            }
        }
        Ok(Self {
            n,
            nu,
            fwd,
            inv,
            scratch,
            kx,
            ky,
            k2,
            mask,
            bufs: std::array::from_fn(|_| vec![ZERO; size]),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        for row in data.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut self.scratch);
        }
        transpose(data, n);
        for row in data.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut self.scratch);
        }
        transpose(data, n);
        if inverse {
            let s = 1.0 / (n * n) as f64;
            data.iter_mut().for_each(|z| *z *= s);
        }
    }

    pub fn to_spectral(&mut self, omega: &GridField) -> Result<Vec<Complex64>> {
        if omega.nx() != self.n || omega.ny() != self.n || omega.period() != 1.0 {
            return Err(Error::dim(
                "vorticity grid",
                &[self.n, self.n],
                &[omega.nx(), omega.ny()],
            ));
        }
        let mut w: Vec<Complex64> = omega.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut w, false);
        Ok(w)
    }

    pub fn to_physical(&mut self, w_hat: &[Complex64]) -> GridField {
        let mut w = w_hat.to_vec();
        self.transform(&mut w, true);
        GridField::new(self.n, self.n, 1.0, w.into_iter().map(|z| z.re).collect()).expect("square grid")
    }

    /// Largest velocity magnitude of the flow with vorticity `w_hat`.
    pub fn max_velocity(&mut self, w_hat: &[Complex64]) -> f64 {
        let mut bufs = std::mem::take(&mut self.bufs);
        let [u, v, _, _] = &mut bufs;
        self.velocity_hat(w_hat, u, v);
        self.transform(u, true);
        self.transform(v, true);
        let vmax = u
            .iter()
            .zip(v.iter())
            .map(|(a, b)| a.re.hypot(b.re))
            .fold(0.0, f64::max);
        self.bufs = bufs;
        vmax
    }

    /// `u = d_y psi`, `v = -d_x psi` with `-lap psi = omega`.
    fn velocity_hat(&self, w_hat: &[Complex64], u: &mut [Complex64], v: &mut [Complex64]) {
        for c in 0..w_hat.len() {
            let psi = if self.k2[c] == 0.0 { ZERO } else { w_hat[c] / self.k2[c] };
            u[c] = Complex64::new(0.0, self.ky[c]) * psi;
            v[c] = -Complex64::new(0.0, self.kx[c]) * psi;
        }
    }

    /// Right-hand side `-(u . grad omega) + nu lap omega` in spectral space.
    fn rhs(&mut self, w_hat: &[Complex64], out: &mut [Complex64]) {
        let [mut u, mut v, mut wx, mut wy] = std::mem::take(&mut self.bufs);
        self.velocity_hat(w_hat, &mut u, &mut v);
        for c in 0..w_hat.len() {
            wx[c] = Complex64::new(0.0, self.kx[c]) * w_hat[c];
            wy[c] = Complex64::new(0.0, self.ky[c]) * w_hat[c];
        }
        for buf in [&mut u, &mut v, &mut wx, &mut wy] {
            self.transform(buf, true);
        }
        for c in 0..w_hat.len() {
            u[c] = Complex64::new(u[c].re * wx[c].re + v[c].re * wy[c].re, 0.0);
        }
        self.transform(&mut u, false);
        for c in 0..w_hat.len() {
            let adv = if self.mask[c] { u[c] } else { ZERO };
            out[c] = -adv - self.nu * self.k2[c] * w_hat[c];
        }
        // Advection and diffusion leave the mean untouched.
        out[0] = ZERO;
        self.bufs = [u, v, wx, wy];
    }

    /// One SSP-RK3 step of size `dt`, in place.
    pub fn step_spectral(&mut self, w_hat: &mut [Complex64], dt: f64) {
        let len = w_hat.len();
        let mut k = vec![ZERO; len];
        self.rhs(w_hat, &mut k);
        let w1: Vec<Complex64> = w_hat.iter().zip(&k).map(|(w, r)| w + dt * r).collect();
        self.rhs(&w1, &mut k);
        let w2: Vec<Complex64> = w_hat
            .iter()
            .zip(&w1)
            .zip(&k)
            .map(|((w, a), r)| 0.75 * w + 0.25 * (a + dt * r))
            .collect();
        self.rhs(&w2, &mut k);
        for c in 0..len {
            w_hat[c] = w_hat[c] / 3.0 + 2.0 / 3.0 * (w2[c] + dt * k[c]);
        }
    }

    /// Largest admissible step: the advective CFL bound and the explicit
    /// diffusion bound.
    pub fn dt_bound(&mut self, w_hat: &[Complex64]) -> f64 {
        let h = 1.0 / self.n as f64;
        let vmax = self.max_velocity(w_hat);
        let cfl = if vmax > 0.0 {
            CFL_LIMIT * h / vmax
        } else {
            f64::INFINITY
        };
        let kmax = self.k2.iter().copied().fold(0.0, f64::max);
        let viscous = if self.nu > 0.0 {
            2.5 / (self.nu * kmax)
        } else {
            f64::INFINITY
        };
        cfl.min(viscous)
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// One SSP-RK3 step of `d_t omega + u . grad omega = nu lap omega`. Fails with
/// a stability error if `dt` exceeds `0.5 h / max|u|` or the diffusion limit.
pub fn ns_step(omega: &GridField, nu: f64, dt: f64) -> Result<GridField> {
    let mut solver = NsSolver::new(omega.nx(), nu)?;
    let mut w = solver.to_spectral(omega)?;
    let bound = solver.dt_bound(&w);
    if dt > bound {
        return Err(Error::Stability { dt, bound });
    }
    solver.step_spectral(&mut w, dt);
    Ok(solver.to_physical(&w))
}

/// Time step for the next stage: a safety fraction of the stability bound,
/// capped by `dt_max`.
pub fn stable_dt(solver: &mut NsSolver, w_hat: &[Complex64], cfl: f64, dt_max: f64) -> f64 {
    (cfl / CFL_LIMIT * solver.dt_bound(w_hat)).min(dt_max)
}

/// Kinetic energy `1/2 int |u|^2` of the flow with vorticity `omega`.
pub fn ns_energy(omega: &GridField) -> Result<f64> {
    let mut solver = NsSolver::new(omega.nx(), 0.0)?;
    let w = solver.to_spectral(omega)?;
    Ok(spectral_energy(&solver, &w))
}

fn spectral_energy(solver: &NsSolver, w_hat: &[Complex64]) -> f64 {
    let norm = (solver.n * solver.n) as f64;
    w_hat
        .iter()
        .zip(&solver.k2)
        .filter(|(_, &k2)| k2 > 0.0)
        .map(|(w, k2)| w.norm_sqr() / k2)
        .sum::<f64>()
        * 0.5
        / (norm * norm)
}

/// Enstrophy `1/2 int omega^2`.
pub fn ns_enstrophy(omega: &GridField) -> f64 {
    let (hx, hy) = omega.spacing();
    0.5 * hx * hy * omega.values().iter().map(|v| v * v).sum::<f64>()
}

/// Settings for Navier-Stokes samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsConfig {
    pub resolution: usize,
    pub nu: f64,
    pub final_time: f64,
    pub cfl: f64,
    pub dt_max: f64,
    pub tau2: f64,
    pub alpha: f64,
    pub scale: f64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            nu: 1e-3,
            final_time: 5.0,
            cfl: 0.4,
            dt_max: 1e-2,
            tau2: 49.0,
            alpha: 2.5,
            scale: 7f64.powf(1.5),
        }
    }
}

impl NsConfig {
    pub fn grf(&self) -> GrfSpec {
        GrfSpec {
            d: 2,
            period: 1.0,
            tau2: self.tau2,
            alpha: self.alpha,
            scale: self.scale,
            cutoff: nyquist_cutoff(self.resolution),
            zero_mean: true,
        }
    }
}

/// A simulated trajectory: initial and final vorticity and the kinetic
/// energy after every step (starting with the initial energy).
#[derive(Clone, Debug, PartialEq)]
pub struct NsRun {
    pub omega0: GridField,
    pub omega_t: GridField,
    pub energy: Vec<f64>,
    pub steps: usize,
}

/// Integrates `omega0` to `final_time` with adaptive CFL-limited steps; the
/// last step is shortened to land on `final_time` exactly.
pub fn ns_integrate(cfg: &NsConfig, omega0: GridField) -> Result<NsRun> {
    let mut solver = NsSolver::new(cfg.resolution, cfg.nu)?;
    let mut w = solver.to_spectral(&omega0)?;
    let mut t = 0.0;
    let mut energy = vec![spectral_energy(&solver, &w)];
    let mut steps = 0;
    while t < cfg.final_time {
        let mut dt = stable_dt(&mut solver, &w, cfg.cfl, cfg.dt_max);
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Stability { dt, bound: 0.0 });
        }
        if t + dt >= cfg.final_time {
            dt = cfg.final_time - t;
        }
        solver.step_spectral(&mut w, dt);
        t = if dt == cfg.final_time - t {
            cfg.final_time
        } else {
            t + dt
        };
        steps += 1;
        energy.push(spectral_energy(&solver, &w));
    }
    let omega_t = solver.to_physical(&w);
    if !omega_t.values().iter().all(|v| v.is_finite()) {
        return Err(Error::Stability {
            dt: cfg.dt_max,
            bound: 0.0,
        });
    }
    Ok(NsRun {
        omega0,
        omega_t,
        energy,
        steps,
    })
}

/// Draws a zero-mean initial vorticity and integrates it to `final_time`.
pub fn ns_sample(cfg: &NsConfig, rng: &mut impl Rng) -> Result<NsRun> {
    let g = sample_grf(&cfg.grf(), cfg.resolution, rng)?;
    let omega0 = GridField::new(cfg.resolution, cfg.resolution, 1.0, g.values)?;
    ns_integrate(cfg, omega0)
}
