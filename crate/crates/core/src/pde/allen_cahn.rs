use std::f64::consts::SQRT_2;

use rand::Rng;

use crate::error::{Error, Result};

/// Side length of the square domain `[0, 2]^2`.
pub const AC_DOMAIN: f64 = 2.0;
/// Final time of the recorded evolution.
pub const AC_FINAL_TIME: f64 = 0.05;

/// Parameters of the rotated travelling wave.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcWaveParams {
    pub eps: f64,
    pub ox: f64,
    pub oy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl AcWaveParams {
    /// `cy` is set to `sqrt(1 - cx^2)`.
    pub fn new(eps: f64, ox: f64, oy: f64, cx: f64) -> Result<Self> {
        if !(eps > 0.0) || !(cx.abs() <= 1.0) {
            return Err(Error::Domain(format!("invalid wave parameters eps = {eps}, cx = {cx}")));
        }
        Ok(Self {
            eps,
            ox,
            oy,
            cx,
            cy: (1.0 - cx * cx).sqrt(),
        })
    }

    /// Uniform draw of `eps in [0.13, 0.18]`, `o in [0, 2]^2`, `cx in [0, 1]`.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let eps = rng.random_range(0.13..=0.18);
        let ox = rng.random_range(0.0..=AC_DOMAIN);
        let oy = rng.random_range(0.0..=AC_DOMAIN);
        let cx = rng.random_range(0.0..=1.0);
        Self::new(eps, ox, oy, cx).expect("sampled parameters are valid")
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        allen_cahn_eval(self, x, y, t)
    }
}

/// `u = 1/2 - 1/2 tanh(c.(p - o) / (2 sqrt2 eps) - 3 t / (sqrt2 eps))`.
pub fn allen_cahn_eval(w: &AcWaveParams, x: f64, y: f64, t: f64) -> f64 {
    let s = (w.cx * (x - w.ox) + w.cy * (y - w.oy)) / (2.0 * SQRT_2 * w.eps) - 3.0 * t / (SQRT_2 * w.eps);
    0.5 - 0.5 * s.tanh()
}

/// Initial condition and space-time evolution on regular lattices.
#[derive(Clone, Debug, PartialEq)]
pub struct AcSample {
    pub params: AcWaveParams,
    /// `u(x, y, 0)` on the `n x n` lattice, row-major in `x`.
    pub u0: Vec<f64>,
    /// `u(x, y, t_k)` for `k = 0..n_t`, time slowest.
    pub u: Vec<f64>,
}

/// Lattice nodes `lo + i (hi - lo) / (n - 1)`, or `lo` when `n = 1`.
fn lattice(n: usize, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect()
}

/// Draws wave parameters and evaluates the closed form on an `n x n` spatial
/// lattice over `[0, 2]^2` at `n_t` equispaced times in `[0, T]`.
pub fn allen_cahn_sample(n: usize, n_t: usize, rng: &mut impl Rng) -> AcSample {
    let params = AcWaveParams::sample(rng);
    let xs = lattice(n, AC_DOMAIN);
    let ts = lattice(n_t, AC_FINAL_TIME);
    let slice = |t: f64| -> Vec<f64> {
        xs.iter()
            .flat_map(|&x| xs.iter().map(move |&y| (x, y)))
            .map(|(x, y)| params.eval(x, y, t))
            .collect()
    };
    let u0 = slice(0.0);
    let u = ts.iter().flat_map(|&t| slice(t)).collect();
    AcSample { params, u0, u }
}
