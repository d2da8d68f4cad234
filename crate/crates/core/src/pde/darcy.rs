use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GridField;
use crate::error::{Error, Result};
use crate::spectral::{nyquist_cutoff, sample_grf, GrfSpec};

/// Applies the conservative 5-point operator `-div(a grad u)` with periodic
/// wrap; face coefficients are arithmetic means of the adjacent nodes.
pub fn darcy_apply(a: &GridField, u: &[f64], out: &mut [f64]) {
    let (nx, ny) = (a.nx(), a.ny());
    let (hx, hy) = a.spacing();
    let (ix2, iy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let av = a.values();
    for i in 0..nx {
        let ip = (i + 1) % nx;
        let im = (i + nx - 1) % nx;
        for j in 0..ny {
            let jp = (j + 1) % ny;
            let jm = (j + ny - 1) % ny;
            let c = i * ny + j;
            let ac = av[c];
            let ae = 0.5 * (ac + av[ip * ny + j]);
            let aw = 0.5 * (ac + av[im * ny + j]);
            let an = 0.5 * (ac + av[i * ny + jp]);
            let as_ = 0.5 * (ac + av[i * ny + jm]);
            let uc = u[c];
            out[c] = -(ae * (u[ip * ny + j] - uc) - aw * (uc - u[im * ny + j])) * ix2
                - (an * (u[i * ny + jp] - uc) - as_ * (uc - u[i * ny + jm])) * iy2;
        }
    }
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of a Darcy solve.
#[derive(Clone, Debug, PartialEq)]
pub struct DarcySolution {
    pub u: GridField,
    pub iterations: usize,
    /// Final relative residual `||f - A u|| / ||f||`.
    pub residual: f64,
}

/// Solves `-div(a grad u) = f` with periodic boundaries and `mean(u) = 0` by
/// Jacobi-preconditioned conjugate gradients on the zero-mean subspace.
pub fn darcy_solve(a: &GridField, f: &GridField, tol: f64, max_iter: usize) -> Result<DarcySolution> {
    if a.nx() != f.nx() || a.ny() != f.ny() || a.period() != f.period() {
        return Err(Error::dim("darcy grids", &[a.nx(), a.ny()], &[f.nx(), f.ny()]));
    }
    if let Some(bad) = a.values().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("coefficient must be positive, found {bad}")));
    }
    let n = f.values().len();
    let mut b = f.values().to_vec();
    remove_mean(&mut b);
    let bnorm = dot(&b, &b).sqrt();
    let mut u = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(DarcySolution {
            u: GridField::new(f.nx(), f.ny(), f.period(), u)?,
            iterations: 0,
            residual: 0.0,
        });
    }
    let (hx, hy) = a.spacing();
    let diag: Vec<f64> = (0..n).map(|c| diagonal_entry(a, c, hx, hy)).collect();
    let precondition = |r: &[f64], z: &mut [f64]| {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&diag) {
            *zi = ri / di;
        }
        remove_mean(z);
    };
    let mut r = b.clone();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut residual = 1.0;
    for it in 1..=max_iter {
        darcy_apply(a, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..n {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        residual = dot(&r, &r).sqrt() / bnorm;
        if residual < tol {
            remove_mean(&mut u);
            // Report the true residual rather than the recursively updated one.
            darcy_apply(a, &u, &mut ap);
            let true_res = b.iter().zip(&ap).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / bnorm;
            return Ok(DarcySolution {
                u: GridField::new(f.nx(), f.ny(), f.period(), u)?,
                iterations: it,
                residual: true_res,
            });
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual,
    })
}

fn diagonal_entry(a: &GridField, c: usize, hx: f64, hy: f64) -> f64 {
    let ny = a.ny() as isize;
    let (i, j) = (c as isize / ny, c as isize % ny);
    let ac = a.at(i, j);
    let fx = 0.5 * (2.0 * ac + a.at(i + 1, j) + a.at(i - 1, j)) / (hx * hx);
    let fy = 0.5 * (2.0 * ac + a.at(i, j + 1) + a.at(i, j - 1)) / (hy * hy);
    fx + fy
}

/// The fixed forcing `sin(2 pi x) sin(2 pi y)` on the unit torus.
pub fn darcy_forcing(n: usize) -> GridField {
    GridField::from_fn(n, 1.0, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin())
}

/// Resolution and solver settings for Darcy samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DarcyConfig {
    pub resolution: usize,
    pub tau2: f64,
    pub alpha: f64,
    pub scale: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DarcyConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            tau2: 9.0,
            alpha: 2.0,
            scale: 1.0,
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

impl DarcyConfig {
    pub fn grf(&self) -> GrfSpec {
        GrfSpec {
            d: 2,
            period: 1.0,
            tau2: self.tau2,
            alpha: self.alpha,
            scale: self.scale,
            cutoff: nyquist_cutoff(self.resolution),
            zero_mean: false,
        }
    }
}

/// Draws `a = exp(g)` with `g` a Gaussian random field and solves for `u`.
pub fn darcy_sample(cfg: &DarcyConfig, rng: &mut impl Rng) -> Result<(GridField, GridField)> {
    let g = sample_grf(&cfg.grf(), cfg.resolution, rng)?;
    let a = GridField::new(cfg.resolution, cfg.resolution, 1.0, g.values)?.map(f64::exp);
    let sol = darcy_solve(&a, &darcy_forcing(cfg.resolution), cfg.tol, cfg.max_iter)?;
    Ok((a, sol.u))
}
