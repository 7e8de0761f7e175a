//! Uniform-grid functions and inverse-CDF tables.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A function tabulated on `origin + j * step`, linearly interpolated
/// between nodes and zero outside the tabulated range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFn {
    pub origin: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn new(origin: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid step {step} must be positive")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidArgument("grid needs at least two nodes".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid values must be finite".into()));
        }
        Ok(Self { origin, step, values })
    }

    pub fn from_fn(origin: f64, step: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..n).map(|j| f(origin + j as f64 * step)).collect();
        Self { origin, step, values }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        self.origin + j as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.node(self.values.len() - 1)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let s = (x - self.origin) / self.step;
        if !(s >= 0.0) {
            return 0.0;
        }
        let j = s.floor() as usize;
        let last = self.values.len() - 1;
        if j >= last {
            return if j == last && s == last as f64 { self.values[last] } else { 0.0 };
        }
        let w = s - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }

    /// Exact integral of the piecewise-linear interpolant.
    pub fn integral(&self) -> f64 {
        let v = &self.values;
        let inner: f64 = v[1..v.len() - 1].iter().sum();
        self.step * (inner + 0.5 * (v[0] + v[v.len() - 1]))
    }

    /// Exact integral of the interpolant over `(-inf, x]`.
    pub fn cumulative(&self, x: f64) -> f64 {
        let s = (x - self.origin) / self.step;
        if s <= 0.0 {
            return 0.0;
        }
        let last = self.values.len() - 1;
        if s >= last as f64 {
            return self.integral();
        }
        let j = s.floor() as usize;
        let v = &self.values;
        let mut acc = 0.0;
        for k in 0..j {
            acc += 0.5 * (v[k] + v[k + 1]);
        }
        let w = s - j as f64;
        let at = v[j] * (1.0 - w) + v[j + 1] * w;
        (acc + 0.5 * w * (v[j] + at)) * self.step
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sampler for a piecewise-linear density on a uniform grid.
///
/// A cell is chosen from the cumulative trapezoid masses by binary search,
/// then the position inside the cell is drawn by inverting the quadratic
/// cell CDF, which is exact for the interpolant.
#[derive(Debug, Clone)]
pub struct InverseCdfTable {
    origin: f64,
    step: f64,
    density: Vec<f64>,
    cum: Vec<f64>,
}

impl InverseCdfTable {
    /// `density` need not be normalized; it must be nonnegative with
    /// positive total mass.
    pub fn new(origin: f64, step: f64, density: Vec<f64>) -> Result<Self> {
        if density.len() < 2 || density.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidDensity("table needs >= 2 finite nonnegative nodes".into()));
        }
        let mut cum = Vec::with_capacity(density.len());
        cum.push(0.0);
        let mut acc = 0.0;
        for w in density.windows(2) {
            acc += 0.5 * step * (w[0] + w[1]);
            cum.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidDensity("zero total mass".into()));
        }
        Ok(Self { origin, step, density, cum })
    }

    pub fn from_grid(g: &GridFn) -> Result<Self> {
        Self::new(g.origin, g.step, g.values.clone())
    }

    pub fn mass(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Normalized CDF of the interpolant.
    pub fn cdf(&self, x: f64) -> f64 {
        let s = (x - self.origin) / self.step;
        if s <= 0.0 {
            return 0.0;
        }
        let last = self.density.len() - 1;
        if s >= last as f64 {
            return 1.0;
        }
        let j = s.floor() as usize;
        let w = (s - j as f64) * self.step;
        let (f0, f1) = (self.density[j], self.density[j + 1]);
        let part = f0 * w + (f1 - f0) * w * w / (2.0 * self.step);
        (self.cum[j] + part) / self.mass()
    }

    /// Maps `u` in `[0, 1)` to a quantile.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = u * self.mass();
        let k = self.cum.partition_point(|&c| c <= target);
        let j = k.saturating_sub(1).min(self.density.len() - 2);
        let rem = (target - self.cum[j]).max(0.0);
        let (f0, f1) = (self.density[j], self.density[j + 1]);
        let h = self.step;
        let denom = f0 + (f0 * f0 + 2.0 * (f1 - f0) * rem / h).max(0.0).sqrt();
        let s = if denom > 0.0 { (2.0 * rem / denom).min(h) } else { 0.0 };
        self.origin + j as f64 * h + s
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}
