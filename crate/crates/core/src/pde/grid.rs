use crate::error::{Error, Result};

/// Samples of a periodic function on the uniform grid of `[0, L)^2`; node
/// `(i, j)` sits at `(i L / nx, j L / ny)` and is stored at `i * ny + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    nx: usize,
    ny: usize,
    period: f64,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(nx: usize, ny: usize, period: f64, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || values.len() != nx * ny {
            return Err(Error::dim("grid field", &[nx, ny], &[values.len()]));
        }
        if !(period > 0.0) {
            return Err(Error::Domain(format!("grid period must be positive, got {period}")));
        }
        Ok(Self { nx, ny, period, values })
    }

    pub fn zeros(nx: usize, ny: usize, period: f64) -> Self {
        Self::new(nx, ny, period, vec![0.0; nx * ny]).expect("valid grid")
    }

    /// Samples `f(x, y)` at every node of a square `n x n` grid.
    pub fn from_fn(n: usize, period: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = period / n as f64;
        let values = (0..n * n).map(|k| f((k / n) as f64 * h, (k % n) as f64 * h)).collect();
        Self::new(n, n, period, values).expect("valid grid")
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.period / self.nx as f64, self.period / self.ny as f64)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at node `(i, j)`, indices taken modulo the grid.
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let i = i.rem_euclid(self.nx as isize) as usize;
        let j = j.rem_euclid(self.ny as isize) as usize;
        self.values[i * self.ny + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete `L^2` norm `(h_x h_y sum v^2)^(1/2)`.
    pub fn l2_norm(&self) -> f64 {
        let (hx, hy) = self.spacing();
        (hx * hy * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Periodic bicubic (Catmull-Rom) interpolation; exact at nodes.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (hx, hy) = self.spacing();
        let (i, wx) = cubic_weights(x / hx);
        let (j, wy) = cubic_weights(y / hy);
        let mut acc = 0.0;
        for (a, wa) in wx.iter().enumerate() {
            let mut row = 0.0;
            for (b, wb) in wy.iter().enumerate() {
                row += wb * self.at(i + a as isize - 1, j + b as isize - 1);
            }
            acc += wa * row;
        }
        acc
    }
}

fn cubic_weights(s: f64) -> (isize, [f64; 4]) {
    let base = s.floor();
    let t = s - base;
    let (t2, t3) = (t * t, t * t * t);
    (
        base as isize,
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
    )
}
