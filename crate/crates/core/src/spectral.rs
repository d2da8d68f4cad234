//! Real Fourier basis on the torus `[0, L)^d`, spectral projections, Gaussian
//! random fields and the Monte-Carlo Fourier coefficient estimator.
//!
//! Grid functions are row-major arrays of `n^d` samples at the nodes
//! `x_j = j * L / n`, the first axis varying slowest.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Integer wave vector `kappa` of one basis function.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FourierIndex {
    kappa: Vec<i64>,
}

impl FourierIndex {
    pub fn new(kappa: Vec<i64>) -> Self {
        Self { kappa }
    }

    pub fn kappa(&self) -> &[i64] {
        &self.kappa
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    /// Sign of the first non-zero component; zero only for `kappa = 0`.
    pub fn sigma(&self) -> i8 {
        self.kappa.iter().find(|&&k| k != 0).map_or(0, |&k| k.signum() as i8)
    }

    pub fn norm_inf(&self) -> i64 {
        self.kappa.iter().map(|k| k.abs()).max().unwrap_or(0)
    }
}

/// Normalization constant making `e_kappa` unit-norm in `L^2([0, L)^d)`.
pub fn basis_constant(sigma: i8, period: f64, d: usize) -> f64 {
    let vol = period.powi(d as i32);
    if sigma == 0 {
        vol.powf(-0.5)
    } else {
        (2.0 / vol).sqrt()
    }
}

/// `C_kappa * {1, cos<k', x>, sin<k', x>}` for `sigma = 0, -1, +1`,
/// with `k' = 2 pi kappa / period`.
pub fn basis_eval(idx: &FourierIndex, period: f64, x: &[f64]) -> f64 {
    debug_assert_eq!(idx.dim(), x.len());
    let sigma = idx.sigma();
    let c = basis_constant(sigma, period, idx.dim());
    if sigma == 0 {
        return c;
    }
    let w = 2.0 * PI / period;
    let theta: f64 = idx.kappa.iter().zip(x).map(|(&k, &xi)| w * k as f64 * xi).sum();
    if sigma < 0 {
        c * theta.cos()
    } else {
        c * theta.sin()
    }
}

/// All `kappa` with `|kappa|_inf <= n`, shell by shell in `|kappa|_inf`,
/// lexicographic within a shell. Contains `(2n + 1)^d` entries.
pub fn enumerate_modes(d: usize, n: usize) -> Vec<FourierIndex> {
    let mut all = box_modes(d, n);
    all.sort_by(|a, b| a.norm_inf().cmp(&b.norm_inf()).then_with(|| a.kappa.cmp(&b.kappa)));
    all
}

/// Modes of the box `{-n..n}^d` in mixed-radix order.
fn box_modes(d: usize, n: usize) -> Vec<FourierIndex> {
    let side = 2 * n + 1;
    let total = side.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut kappa = vec![0i64; d];
            for slot in kappa.iter_mut().rev() {
                *slot = (flat % side) as i64 - n as i64;
                flat /= side;
            }
            FourierIndex::new(kappa)
        })
        .collect()
}

/// Coefficients of a trigonometric polynomial of degree `band` in the real
/// basis, stored densely over `{-band..band}^d` in mixed-radix order.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierCoeffs {
    d: usize,
    band: usize,
    period: f64,
    values: Vec<f64>,
}

impl FourierCoeffs {
    pub fn zeros(d: usize, band: usize, period: f64) -> Self {
        Self {
            d,
            band,
            period,
            values: vec![0.0; (2 * band + 1).pow(d as u32)],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    fn offset(&self, kappa: &[i64]) -> Option<usize> {
        let side = 2 * self.band as i64 + 1;
        let mut flat = 0i64;
        for &k in kappa {
            if k.abs() > self.band as i64 {
                return None;
            }
            flat = flat * side + k + self.band as i64;
        }
        Some(flat as usize)
    }

    /// Coefficient of `e_kappa`; zero outside the band.
    pub fn get(&self, kappa: &[i64]) -> f64 {
        self.offset(kappa).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, kappa: &[i64], value: f64) -> Result<()> {
        let i = self
            .offset(kappa)
            .ok_or_else(|| Error::Domain(format!("mode {kappa:?} outside band {}", self.band)))?;
        self.values[i] = value;
        Ok(())
    }

    /// `(kappa, coefficient)` pairs in enumeration order.
    pub fn enumerated(&self) -> Vec<(FourierIndex, f64)> {
        enumerate_modes(self.d, self.band)
            .into_iter()
            .map(|k| {
                let c = self.get(k.kappa());
                (k, c)
            })
            .collect()
    }

    /// Evaluates `sum_kappa c_kappa e_kappa(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        box_modes(self.d, self.band)
            .iter()
            .zip(&self.values)
            .filter(|(_, &c)| c != 0.0)
            .map(|(k, &c)| c * basis_eval(k, self.period, x))
            .sum()
    }

    /// `L^2` norm by Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `L^2` distance by Parseval; bands may differ.
    pub fn l2_distance(&self, other: &FourierCoeffs) -> f64 {
        let band = self.band.max(other.band);
        box_modes(self.d, band)
            .iter()
            .map(|k| {
                let diff = self.get(k.kappa()) - other.get(k.kappa());
                diff * diff
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Samples on the `n^d` node grid.
    pub fn to_grid(&self, n: usize) -> Result<Vec<f64>> {
        if 2 * self.band + 1 > n {
            return Err(Error::Aliasing {
                band: self.band,
                nodes: n,
            });
        }
        let mut spec = vec![Complex64::new(0.0, 0.0); n.pow(self.d as u32)];
        for (k, &c) in box_modes(self.d, self.band).iter().zip(&self.values) {
            if c != 0.0 {
                add_real_mode(&mut spec, n, k, c * basis_constant(k.sigma(), self.period, self.d));
            }
        }
        fft_nd(&mut spec, n, self.d, true);
        Ok(spec.into_iter().map(|z| z.re).collect())
    }
}

/// Adds `a * {1, cos, sin}(<k', x>)` to a complex spectrum with the
/// synthesis convention `u_j = sum_k s_k exp(+2 pi i k.j / n)`.
fn add_real_mode(spec: &mut [Complex64], n: usize, k: &FourierIndex, a: f64) {
    let pos = wrap_index(k.kappa(), n);
    let neg = wrap_index(&k.kappa().iter().map(|v| -v).collect::<Vec<_>>(), n);
    match k.sigma() {
        0 => spec[pos] += a,
        s if s < 0 => {
            spec[pos] += 0.5 * a;
            spec[neg] += 0.5 * a;
        }
        _ => {
            spec[pos] += Complex64::new(0.0, -0.5 * a);
            spec[neg] += Complex64::new(0.0, 0.5 * a);
        }
    }
}

fn wrap_index(kappa: &[i64], n: usize) -> usize {
    kappa
        .iter()
        .fold(0usize, |acc, &k| acc * n + k.rem_euclid(n as i64) as usize)
}

/// In-place unnormalized `d`-dimensional DFT over an `n^d` row-major array.
/// The forward transform uses `exp(-2 pi i k.j / n)`.
pub(crate) fn fft_nd(data: &mut [Complex64], n: usize, d: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let total = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        if stride == 1 {
            for chunk in data.chunks_exact_mut(n) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
            continue;
        }
        let block = stride * n;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[base + off + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[base + off + i * stride] = *v;
                }
            }
        }
    }
}

fn grid_side(len: usize, d: usize) -> Result<usize> {
    let n = (len as f64).powf(1.0 / d as f64).round() as usize;
    if n == 0 || n.pow(d as u32) != len {
        return Err(Error::Domain(format!(
            "{len} samples do not form a {d}-dimensional cube"
        )));
    }
    Ok(n)
}

/// Discrete real coefficients of band `band` from samples on the node grid.
/// The DFT averages `u(x_j) e^{-i k'.x_j}`, which equals the continuous
/// coefficient whenever `u` contains no modes aliasing onto the band.
fn coeffs_from_samples(samples: &[f64], d: usize, period: f64, band: usize) -> Result<FourierCoeffs> {
    let n = grid_side(samples.len(), d)?;
    if 2 * band + 1 > n {
        return Err(Error::Aliasing { band, nodes: n });
    }
    let mut spec: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut spec, n, d, false);
    let scale = 1.0 / samples.len() as f64;
    let mut out = FourierCoeffs::zeros(d, band, period);
    for (k, slot) in box_modes(d, band).iter().zip(out.values.iter_mut()) {
        let s = spec[wrap_index(k.kappa(), n)] * scale;
        let sigma = k.sigma();
        let c = basis_constant(sigma, period, d);
        *slot = match sigma {
            0 => s.re / c,
            s_ if s_ < 0 => 2.0 * s.re / c,
            _ => -2.0 * s.im / c,
        };
    }
    Ok(out)
}

/// Orthogonal projection `P_N` of a coefficient set: drops every mode with
/// `|kappa|_inf > n`.
pub fn project_pn(coeffs: &FourierCoeffs, n: usize) -> FourierCoeffs {
    let band = n.min(coeffs.band);
    let mut out = FourierCoeffs::zeros(coeffs.d, band, coeffs.period);
    for k in box_modes(coeffs.d, band) {
        let v = coeffs.get(k.kappa());
        out.set(k.kappa(), v).expect("mode within band");
    }
    out
}

/// `P_N` of a grid function, resolving its coefficients by FFT. Fails with an
/// aliasing error when the grid has fewer than `2N + 1` nodes per axis.
pub fn project_pn_grid(samples: &[f64], d: usize, period: f64, n: usize) -> Result<FourierCoeffs> {
    coeffs_from_samples(samples, d, period, n)
}

/// Trigonometric interpolant `I_N` of degree `n` from samples on a uniform
/// node grid with `2N + 1` nodes per axis (exact interpolation) or `2N + 2`
/// nodes per axis (the Nyquist mode, which lies outside degree `N`, is dropped).
pub fn interpolate_in(samples: &[f64], d: usize, period: f64, n: usize) -> Result<FourierCoeffs> {
    let side = 2 * n + 1;
    let expect_odd = side.pow(d as u32);
    let expect_even = (side + 1).pow(d as u32);
    if samples.len() != expect_odd && samples.len() != expect_even {
        return Err(Error::dim("interpolation nodes", &[expect_odd], &[samples.len()]));
    }
    coeffs_from_samples(samples, d, period, n)
}

/// Isotropic Gaussian random field on the torus with spectrum
/// `lambda_kappa = scale * (|k'|^2 + tau2)^(-alpha)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GrfSpec {
    pub d: usize,
    pub period: f64,
    pub tau2: f64,
    pub alpha: f64,
    pub scale: f64,
    /// Largest `|kappa|_inf` retained.
    pub cutoff: usize,
    pub zero_mean: bool,
}

impl GrfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > self.d as f64 / 2.0) || !(self.period > 0.0) || !(self.scale >= 0.0) || !(self.tau2 > 0.0) {
            return Err(Error::Config(format!("invalid random field parameters: {self:?}")));
        }
        Ok(())
    }

    pub fn eigenvalue(&self, kappa: &[i64]) -> f64 {
        let w = 2.0 * PI / self.period;
        let k2: f64 = kappa.iter().map(|&k| (w * k as f64).powi(2)).sum();
        self.scale * (k2 + self.tau2).powf(-self.alpha)
    }

    /// Pointwise variance `sum_kappa lambda_kappa / L^d`, the same at every point.
    pub fn pointwise_variance(&self) -> f64 {
        let vol = self.period.powi(self.d as i32);
        // Each +/- pair contributes lambda * C^2 * (cos^2 + sin^2) = 2 lambda / vol.
        box_modes(self.d, self.cutoff)
            .iter()
            .filter(|k| !(self.zero_mean && k.sigma() == 0))
            .map(|k| self.eigenvalue(k.kappa()) / vol)
            .sum()
    }
}

/// A sampled field on the `n^d` grid and its coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct GrfSample {
    pub values: Vec<f64>,
    pub coeffs: FourierCoeffs,
}

/// Draws `sum_kappa sqrt(lambda_kappa) xi_kappa e_kappa` on an `n^d` grid.
/// Coefficients are drawn in enumeration order, so a larger cutoff extends
/// rather than reshuffles a draw.
pub fn sample_grf(spec: &GrfSpec, n: usize, rng: &mut impl Rng) -> Result<GrfSample> {
    spec.validate()?;
    if 2 * spec.cutoff + 1 > n {
        return Err(Error::Aliasing {
            band: spec.cutoff,
            nodes: n,
        });
    }
    let mut coeffs = FourierCoeffs::zeros(spec.d, spec.cutoff, spec.period);
    for k in enumerate_modes(spec.d, spec.cutoff) {
        if spec.zero_mean && k.sigma() == 0 {
            continue;
        }
        let xi: f64 = rng.sample(StandardNormal);
        coeffs.set(k.kappa(), spec.eigenvalue(k.kappa()).sqrt() * xi)?;
    }
    let values = coeffs.to_grid(n)?;
    Ok(GrfSample { values, coeffs })
}

/// Largest non-aliased cutoff for `n` nodes per axis.
pub fn nyquist_cutoff(n: usize) -> usize {
    n.saturating_sub(1) / 2
}

/// Monte-Carlo coefficients `c_kappa = |T^d|/N sum_n v(X_n) e_kappa(X_n)` for
/// `|kappa|_inf <= k` from `N` iid uniform points.
pub fn mc_fourier_estimate(
    v: impl Fn(&[f64]) -> f64,
    d: usize,
    period: f64,
    k: usize,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<FourierCoeffs> {
    if n_samples == 0 {
        return Err(Error::Domain("Monte-Carlo estimate needs at least one sample".into()));
    }
    let points: Vec<f64> = (0..n_samples * d).map(|_| rng.random::<f64>() * period).collect();
    let values: Vec<f64> = points.chunks_exact(d).map(&v).collect();
    mc_fourier_from_samples(&points, &values, d, period, k)
}

/// Estimator from given sample points (`[N x d]` row-major) and values. The
/// samples are summed in a canonical order, so the result does not depend on
/// how they are listed.
pub fn mc_fourier_from_samples(
    points: &[f64],
    values: &[f64],
    d: usize,
    period: f64,
    k: usize,
) -> Result<FourierCoeffs> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Domain("Monte-Carlo estimate needs at least one sample".into()));
    }
    if points.len() != n * d {
        return Err(Error::dim("sample points", &[n, d], &[points.len()]));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let pa = &points[a * d..(a + 1) * d];
        let pb = &points[b * d..(b + 1) * d];
        pa.iter()
            .zip(pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then_with(|| values[a].total_cmp(&values[b]))
    });
    let modes = box_modes(d, k);
    let mut out = FourierCoeffs::zeros(d, k, period);
    let vol = period.powi(d as i32);
    let mut basis = vec![0.0; modes.len()];
    for &i in &order {
        let x = &points[i * d..(i + 1) * d];
        for (b, m) in basis.iter_mut().zip(&modes) {
            *b = basis_eval(m, period, x);
        }
        for (acc, b) in out.values.iter_mut().zip(&basis) {
            *acc += values[i] * b;
        }
    }
    out.values.iter_mut().for_each(|c| *c *= vol / n as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TAU: f64 = 2.0 * PI;

    #[test]
    fn constant_mode_normalization() {
        let v = basis_eval(&FourierIndex::new(vec![0]), TAU, &[1.234]);
        assert!((v - TAU.powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn first_mode_is_scaled_sine() {
        let k = FourierIndex::new(vec![1]);
        assert_eq!(k.sigma(), 1);
        for x in [0.1, 1.0, 4.0] {
            assert!((basis_eval(&k, TAU, &[x]) - x.sin() / PI.sqrt()).abs() < 1e-15);
        }
        let km = FourierIndex::new(vec![-1]);
        assert!((basis_eval(&km, TAU, &[0.7]) - 0.7f64.cos() / PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sigma_follows_first_nonzero_component() {
        assert_eq!(FourierIndex::new(vec![0, 0]).sigma(), 0);
        assert_eq!(FourierIndex::new(vec![0, -3]).sigma(), -1);
        assert_eq!(FourierIndex::new(vec![2, -3]).sigma(), 1);
    }

    #[test]
    fn monte_carlo_gram_of_first_nine_modes() {
        let modes = enumerate_modes(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut gram = [[0.0; 9]; 9];
        for _ in 0..n {
            let x = [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU];
            let e: Vec<f64> = modes.iter().map(|m| basis_eval(m, TAU, &x)).collect();
            for i in 0..9 {
                for j in 0..9 {
                    gram[i][j] += e[i] * e[j];
                }
            }
        }
        let vol = TAU * TAU;
        for (i, row) in gram.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                let g = g * vol / n as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g - target).abs() < 3.0 / (n as f64).sqrt() * 2.0, "({i},{j}) = {g}");
            }
        }
    }

    #[test]
    fn enumeration_shells_and_count() {
        let e = enumerate_modes(2, 2);
        assert_eq!(e.len(), 25);
        assert_eq!(e[0].kappa(), &[0, 0]);
        let shell1: Vec<&[i64]> = e[1..9].iter().map(|k| k.kappa()).collect();
        assert_eq!(&shell1[..3], &[&[-1, -1][..], &[-1, 0], &[-1, 1]]);
        assert!(e.windows(2).all(|w| w[0].norm_inf() <= w[1].norm_inf()));
    }

    #[test]
    fn projection_of_bandlimited_grid_is_exact() {
        let mut c = FourierCoeffs::zeros(2, 2, 1.0);
        c.set(&[1, -2], 0.7).unwrap();
        c.set(&[0, 0], -1.5).unwrap();
        c.set(&[-2, 1], 0.25).unwrap();
        let grid = c.to_grid(16).unwrap();
        let back = project_pn_grid(&grid, 2, 1.0, 2).unwrap();
        assert!(back.l2_distance(&c) < 1e-13);
        let p0 = project_pn(&back, 0);
        assert!((p0.get(&[0, 0]) + 1.5).abs() < 1e-13);
        assert_eq!(p0.band(), 0);
        assert_eq!(project_pn(&project_pn(&back, 1), 1), project_pn(&back, 1));
    }

    #[test]
    fn projection_error_decreases() {
        let n = 64;
        let grid: Vec<f64> = (0..n).map(|j| (TAU * j as f64 / n as f64).sin().exp()).collect();
        let full = project_pn_grid(&grid, 1, TAU, 31).unwrap();
        let errs: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&b| full.l2_distance(&project_pn(&full, b)))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn coarse_grid_reports_aliasing() {
        assert!(matches!(
            project_pn_grid(&[0.0; 8], 1, 1.0, 4),
            Err(Error::Aliasing { band: 4, nodes: 8 })
        ));
    }

    #[test]
    fn interpolation_reproduces_nodes_and_constants() {
        let n = 2;
        let side = 2 * n + 1;
        let nodes: Vec<f64> = (0..side).map(|j| TAU * j as f64 / side as f64).collect();
        let samples: Vec<f64> = nodes.iter().map(|x| 0.3 + x.cos() - 2.0 * (2.0 * x).sin()).collect();
        let c = interpolate_in(&samples, 1, TAU, n).unwrap();
        for (x, u) in nodes.iter().zip(&samples) {
            assert!((c.eval(&[*x]) - u).abs() < 1e-13);
        }
        let flat = interpolate_in(&[2.0; 5], 1, TAU, n).unwrap();
        for (k, v) in flat.enumerated() {
            if k.sigma() != 0 {
                assert!(v.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interpolation_aliases_like_the_dft() {
        // sin(3x) on 5 nodes: naive DFT oracle for the k = 2 bin.
        let side = 5;
        let xs: Vec<f64> = (0..side).map(|j| TAU * j as f64 / side as f64).collect();
        let u: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        let c = interpolate_in(&u, 1, TAU, 2).unwrap();
        let im: f64 = xs.iter().zip(&u).map(|(x, v)| -v * (2.0 * x).sin()).sum::<f64>() / side as f64;
        let oracle = -2.0 * im * PI.sqrt();
        assert!((c.get(&[2]) - oracle).abs() < 1e-13);
        assert!((c.get(&[2]) + PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn interpolation_rejects_wrong_node_count() {
        assert!(matches!(
            interpolate_in(&[0.0; 7], 1, TAU, 2),
            Err(Error::Dimension { .. })
        ));
    }

    fn ns_like(cutoff: usize) -> GrfSpec {
        GrfSpec {
            d: 2,
            period: 1.0,
            tau2: 9.0,
            alpha: 2.0,
            scale: 1.0,
            cutoff,
            zero_mean: true,
        }
    }

    #[test]
    fn zero_cutoff_zero_mean_field_vanishes() {
        let s = sample_grf(&ns_like(0), 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grf_is_deterministic_and_matches_coefficients() {
        let a = sample_grf(&ns_like(3), 16, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_grf(&ns_like(3), 16, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let x = [5.0 / 16.0, 11.0 / 16.0];
        assert!((a.values[5 * 16 + 11] - a.coeffs.eval(&x)).abs() < 1e-12);
    }

    #[test]
    fn grf_pointwise_variance() {
        let spec = ns_like(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = sample_grf(&spec, 8, &mut rng).unwrap();
            acc += s.values[3 * 8 + 5].powi(2);
        }
        let emp = acc / draws as f64;
        let var = spec.pointwise_variance();
        assert!((emp / var - 1.0).abs() < 0.05, "{emp} vs {var}");
    }

    #[test]
    fn mc_estimate_rejects_zero_samples_and_zero_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(mc_fourier_estimate(|_| 0.0, 2, TAU, 2, 0, &mut rng).is_err());
        let c = mc_fourier_estimate(|_| 0.0, 2, TAU, 2, 100, &mut rng).unwrap();
        assert_eq!(c.l2_norm(), 0.0);
    }

    #[test]
    fn mc_estimate_recovers_single_mode() {
        let k0 = FourierIndex::new(vec![1, -1]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = mc_fourier_estimate(|x| basis_eval(&k0, TAU, x), 2, TAU, 1, 100_000, &mut rng).unwrap();
        for (k, v) in c.enumerated() {
            let target = if k == k0 { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 0.02, "{k:?}: {v}");
        }
    }

    #[test]
    fn mc_estimate_is_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<f64> = (0..400).map(|_| rng.random::<f64>() * TAU).collect();
        let vals: Vec<f64> = pts.chunks(2).map(|p| p[0].sin() + (2.0 * p[1]).cos()).collect();
        let a = mc_fourier_from_samples(&pts, &vals, 2, TAU, 2).unwrap();
        let rev_pts: Vec<f64> = pts.chunks(2).rev().flatten().copied().collect();
        let rev_vals: Vec<f64> = vals.iter().rev().copied().collect();
        assert_eq!(a, mc_fourier_from_samples(&rev_pts, &rev_vals, 2, TAU, 2).unwrap());
    }
}
