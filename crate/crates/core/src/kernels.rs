//! Mean infection intensity `tau(a)` and the quantities derived from it:
//! `R0`, the generation-time law `nu`, the Malthusian parameter, the
//! initial-infected intensity `tau_bar`, the backward generation-time
//! density and the joint law `G(w, z)` of (shifted contact age, initial age).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFn, InverseCdfTable};

/// Default age step for tabulations.
pub const DEFAULT_AGE_STEP: f64 = 0.01;
/// Tabulations extend to this many mean generation times.
pub const DEFAULT_AGE_SPAN: f64 = 40.0;
/// Default Malthusian bracket in inverse-time units.
pub const DEFAULT_BRACKET: (f64, f64) = (-5.0, 5.0);

/// `sum_i coef_i * exp(-rate_i * a)` on `a >= 0`, all rates positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSum {
    pub terms: Vec<(f64, f64)>,
}

impl ExpSum {
    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        if a < 0.0 {
            return 0.0;
        }
        self.terms.iter().map(|&(c, k)| c * (-k * a).exp()).sum()
    }

    /// `int_0^a`.
    pub fn cumulative(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        self.terms.iter().map(|&(c, k)| c * (-(-k * a).exp_m1()) / k).sum()
    }

    pub fn total(&self) -> f64 {
        self.terms.iter().map(|&(c, k)| c / k).sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.terms.iter().map(|&(c, k)| c / (k * k)).sum()
    }

    pub fn min_rate(&self) -> Option<f64> {
        self.terms.iter().map(|t| t.1).reduce(f64::min)
    }

    pub fn laplace(&self, alpha: f64) -> Option<f64> {
        match self.min_rate() {
            None => Some(0.0),
            Some(k) if alpha <= -k => None,
            Some(_) => Some(self.terms.iter().map(|&(c, k)| c / (k + alpha)).sum()),
        }
    }

    /// Upper bound on `sup_a` of the function.
    pub fn upper_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.0.max(0.0)).sum()
    }

    fn scaled(&self, s: f64) -> Self {
        Self { terms: self.terms.iter().map(|&(c, k)| (c * s, k)).collect() }
    }

    fn tilted(&self, alpha: f64) -> Self {
        Self { terms: self.terms.iter().map(|&(c, k)| (c, k + alpha)).collect() }
    }
}

/// Mean infection intensity `tau(a) = E[P(da)]/da`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IntensityKernel {
    /// Closed-form family with an analytic tail.
    ExpSum(ExpSum),
    /// Uniform table from age 0, linearly interpolated, zero past the end.
    Tabulated(GridFn),
}

impl IntensityKernel {
    /// `beta * exp(-gamma a)`.
    pub fn exponential(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidKernel(format!("beta = {beta} must be >= 0")));
        }
        if !(gamma > 0.0) {
            return Err(Error::InfiniteR0(format!("exponential tail with rate {gamma} diverges")));
        }
        Ok(Self::ExpSum(ExpSum { terms: if beta == 0.0 { vec![] } else { vec![(beta, gamma)] } }))
    }

    /// Intensity of an SEIR course: latency `Exp(lambda)`, infectious period
    /// `Exp(gamma)`, contacts at rate `beta` while infectious.
    pub fn seir(beta: f64, lambda: f64, gamma: f64) -> Result<Self> {
        if !(beta >= 0.0) || !(lambda > 0.0) {
            return Err(Error::InvalidKernel(format!("need beta >= 0, lambda > 0 (got {beta}, {lambda})")));
        }
        if !(gamma > 0.0) {
            return Err(Error::InfiniteR0(format!("infectious period rate {gamma} must be positive")));
        }
        if (lambda - gamma).abs() < 1e-12 * lambda.max(gamma) {
            return Err(Error::InvalidKernel("SEIR kernel requires lambda != gamma".into()));
        }
        let k = beta * lambda / (lambda - gamma);
        Ok(Self::ExpSum(ExpSum { terms: vec![(k, gamma), (-k, lambda)] }))
    }

    pub fn zero() -> Self {
        Self::ExpSum(ExpSum { terms: vec![] })
    }

    pub fn tabulated(step: f64, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidKernel("tau must be nonnegative".into()));
        }
        Ok(Self::Tabulated(GridFn::new(0.0, step, values)?))
    }

    /// Reads a two-column `age,intensity` CSV on a uniform age grid starting
    /// at 0. Lines starting with `#` and a non-numeric header are skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let (step, values) = read_two_column_grid(path)?;
        Self::tabulated(step, values)
    }

    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            Self::ExpSum(e) => e.eval(a),
            Self::Tabulated(g) => g.eval(a),
        }
    }

    /// `int_0^a tau`.
    pub fn cumulative(&self, a: f64) -> f64 {
        match self {
            Self::ExpSum(e) => e.cumulative(a),
            Self::Tabulated(g) => g.cumulative(a),
        }
    }

    /// `R0 = int_0^inf tau` (exact for the representation).
    pub fn r0(&self) -> f64 {
        match self {
            Self::ExpSum(e) => e.total(),
            Self::Tabulated(g) => g.integral(),
        }
    }

    /// Mean of `nu`; `None` when `R0 = 0`.
    pub fn mean_generation_time(&self) -> Option<f64> {
        let r0 = self.r0();
        if r0 <= 0.0 {
            return None;
        }
        let m = match self {
            Self::ExpSum(e) => e.first_moment(),
            Self::Tabulated(g) => {
                let xs = GridFn::from_fn(0.0, g.step, g.len(), |a| a * g.eval(a));
                xs.integral()
            }
        };
        Some(m / r0)
    }

    /// `int_0^inf exp(-alpha a) tau(a) da`; `None` when it diverges.
    pub fn laplace(&self, alpha: f64) -> Option<f64> {
        match self {
            Self::ExpSum(e) => e.laplace(alpha),
            Self::Tabulated(g) => Some(laplace_piecewise_linear(g, alpha)),
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match self {
            Self::ExpSum(e) => e.upper_bound(),
            Self::Tabulated(g) => g.max().max(0.0),
        }
    }

    /// Last age with possibly nonzero intensity (`None`: unbounded).
    pub fn support_end(&self) -> Option<f64> {
        match self {
            Self::ExpSum(e) if e.terms.is_empty() => Some(0.0),
            Self::ExpSum(_) => None,
            Self::Tabulated(g) => Some(g.end()),
        }
    }

    /// Step and horizon of the age grid used for tabulations.
    pub fn age_grid(&self) -> (f64, f64) {
        match self {
            Self::Tabulated(g) => (g.step, g.end()),
            Self::ExpSum(_) => {
                let m = self.mean_generation_time().unwrap_or(1.0);
                (DEFAULT_AGE_STEP, DEFAULT_AGE_SPAN * m)
            }
        }
    }

    /// `tau / R0`.
    pub fn generation_time(&self) -> Result<Density> {
        let r0 = self.r0();
        if !(r0 > 0.0) {
            return Err(Error::InvalidDensity("nu undefined when R0 = 0".into()));
        }
        Ok(match self {
            Self::ExpSum(e) => Density::ExpSum(e.scaled(1.0 / r0)),
            Self::Tabulated(g) => {
                Density::Tabulated(GridFn { values: g.values.iter().map(|v| v / r0).collect(), ..g.clone() })
            }
        })
    }

    /// Checks nonnegativity on a fine grid and finiteness of `R0`.
    pub fn validate(&self) -> Result<()> {
        let r0 = self.r0();
        if !r0.is_finite() {
            return Err(Error::InfiniteR0("integral diverges".into()));
        }
        if let Self::ExpSum(e) = self {
            if e.terms.iter().any(|t| !(t.1 > 0.0)) {
                return Err(Error::InfiniteR0("nonpositive decay rate".into()));
            }
            let (step, a_max) = self.age_grid();
            let n = (a_max / step).ceil() as usize + 1;
            if (0..n).any(|j| e.eval(j as f64 * step) < -1e-12) {
                return Err(Error::InvalidKernel("tau must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

fn laplace_piecewise_linear(g: &GridFn, alpha: f64) -> f64 {
    let h = g.step;
    let x = alpha * h;
    // I0 = int_0^h e^{-alpha s} ds, I1 = int_0^h s e^{-alpha s} ds
    let (i0, i1) = if x.abs() < 1e-3 {
        (
            h * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0),
            h * h * (0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0),
        )
    } else {
        let e = (-x).exp();
        ((1.0 - e) / alpha, (1.0 - e * (1.0 + x)) / (alpha * alpha))
    };
    let v = &g.values;
    let mut acc = 0.0;
    for j in 0..v.len() - 1 {
        let x0 = g.origin + j as f64 * h;
        acc += (-alpha * x0).exp() * (v[j] * i0 + (v[j + 1] - v[j]) / h * i1);
    }
    acc
}

pub(crate) fn read_two_column_grid(path: &Path) -> Result<(f64, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
            return Err(Error::InvalidArgument(format!("{}: expected two columns", path.display())));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(a), Ok(b)) => {
                xs.push(a);
                ys.push(b);
            }
            _ if xs.is_empty() => continue,
            _ => return Err(Error::InvalidArgument(format!("{}: bad row `{line}`", path.display()))),
        }
    }
    if xs.len() < 2 || xs[0].abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{}: grid must start at age 0", path.display())));
    }
    let step = xs[1] - xs[0];
    for (j, x) in xs.iter().enumerate() {
        if (x - j as f64 * step).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(Error::InvalidArgument(format!("{}: ages must be uniformly spaced", path.display())));
        }
    }
    Ok((step, ys))
}

/// Probability density on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Density {
    Exponential { rate: f64 },
    ExpSum(ExpSum),
    Tabulated(GridFn),
}

impl Density {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidDensity(format!("exponential rate {rate} must be positive")));
        }
        Ok(Self::Exponential { rate })
    }

    /// Tabulated density, renormalized to unit mass.
    pub fn tabulated(step: f64, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidDensity("density must be nonnegative".into()));
        }
        let g = GridFn::new(0.0, step, values)?;
        let m = g.integral();
        if !(m > 0.0) {
            return Err(Error::InvalidDensity("zero mass".into()));
        }
        Ok(Self::Tabulated(GridFn { values: g.values.iter().map(|v| v / m).collect(), ..g }))
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let (step, values) = read_two_column_grid(path)?;
        Self::tabulated(step, values)
    }

    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            Self::Exponential { rate } => {
                if a < 0.0 {
                    0.0
                } else {
                    rate * (-rate * a).exp()
                }
            }
            Self::ExpSum(e) => e.eval(a),
            Self::Tabulated(g) => g.eval(a),
        }
    }

    pub fn cdf(&self, a: f64) -> f64 {
        match self {
            Self::Exponential { rate } => {
                if a <= 0.0 {
                    0.0
                } else {
                    -(-rate * a).exp_m1()
                }
            }
            Self::ExpSum(e) => e.cumulative(a),
            Self::Tabulated(g) => g.cumulative(a),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Self::Exponential { .. } => 1.0,
            Self::ExpSum(e) => e.total(),
            Self::Tabulated(g) => g.integral(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::ExpSum(e) => e.first_moment() / e.total(),
            Self::Tabulated(g) => GridFn::from_fn(0.0, g.step, g.len(), |a| a * g.eval(a)).integral() / g.integral(),
        }
    }

    /// Quadrature step that resolves the density.
    pub fn resolution(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 0.02 / rate,
            Self::ExpSum(e) => 0.02 / e.terms.iter().map(|t| t.1).fold(1e-300, f64::max),
            Self::Tabulated(g) => g.step,
        }
    }

    /// Age beyond which the mass is below `1e-13` (or the table end).
    pub fn effective_support(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 30.0 / rate,
            Self::ExpSum(e) => 32.0 / e.min_rate().unwrap_or(1.0),
            Self::Tabulated(g) => g.end(),
        }
    }

    pub fn sampler(&self) -> Result<DensitySampler> {
        Ok(match self {
            Self::Exponential { rate } => DensitySampler::Exponential(*rate),
            Self::ExpSum(e) if e.terms.len() == 1 => DensitySampler::Exponential(e.terms[0].1),
            Self::ExpSum(e) => {
                let kmax = e.terms.iter().map(|t| t.1).fold(0.0, f64::max);
                let step = (0.05 / kmax).min(0.005);
                let end = self.effective_support();
                let n = (end / step).ceil() as usize + 1;
                let vals = (0..n).map(|j| e.eval(j as f64 * step).max(0.0)).collect();
                DensitySampler::Table(InverseCdfTable::new(0.0, step, vals)?)
            }
            Self::Tabulated(g) => DensitySampler::Table(InverseCdfTable::from_grid(g)?),
        })
    }

    /// Tabulation on `[0, end]` with the given step.
    pub fn to_grid(&self, step: f64, end: f64) -> GridFn {
        let n = (end / step).ceil() as usize + 1;
        GridFn::from_fn(0.0, step, n, |a| self.eval(a))
    }
}

/// Draws from a [`Density`]: exact inversion for exponentials, an
/// inverse-CDF table otherwise.
#[derive(Debug, Clone)]
pub enum DensitySampler {
    Exponential(f64),
    Table(InverseCdfTable),
}

impl DensitySampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential(rate) => -(1.0 - rng.random::<f64>()).ln() / rate,
            Self::Table(t) => t.sample(rng),
        }
    }
}

/// Time-varying probability that a contact at time `t` is effective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRate {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    linear: bool,
}

impl ContactRate {
    pub fn constant(c: f64) -> Result<Self> {
        Self::piecewise_constant(vec![0.0], vec![c])
    }

    /// `c(t) = values[i]` on `[breakpoints[i], breakpoints[i+1])`,
    /// right-continuous, terminal value beyond the last breakpoint.
    pub fn piecewise_constant(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::build(breakpoints, values, false)
    }

    /// Linear interpolation between `(breakpoints[i], values[i])`, constant
    /// after the last breakpoint.
    pub fn piecewise_linear(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::build(breakpoints, values, true)
    }

    fn build(breakpoints: Vec<f64>, values: Vec<f64>, linear: bool) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::InvalidArgument("contact rate needs matching, nonempty breakpoints and values".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidArgument("first contact-rate breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("contact-rate breakpoints must be finite and increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::ContactRate(format!("value {v}")));
        }
        Ok(Self { breakpoints, values, linear })
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        if i == 0 {
            return self.values[0];
        }
        let i = i - 1;
        if self.linear && i + 1 < self.values.len() {
            let (t0, t1) = (self.breakpoints[i], self.breakpoints[i + 1]);
            let w = (t - t0) / (t1 - t0);
            self.values[i] * (1.0 - w) + self.values[i + 1] * w
        } else {
            self.values[i]
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_linear(&self) -> bool {
        self.linear
    }

    /// `c_*`, the value after the last breakpoint.
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn last_breakpoint(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn constant_value(&self) -> Option<f64> {
        let v0 = self.values[0];
        self.values.iter().all(|v| *v == v0).then_some(v0)
    }
}

/// Fraction and age law of the initially infected, with the derived
/// initial-infected intensity `tau_bar(u) = int g(a) tau(a + u) da`.
#[derive(Debug, Clone)]
pub struct InitialCondition {
    pub i0: f64,
    pub g: Density,
    pub tau_bar: IntensityKernel,
    pub r0_bar: f64,
}

impl InitialCondition {
    pub fn new(i0: f64, g: Density, tau: &IntensityKernel) -> Result<Self> {
        if !(i0 > 0.0 && i0 < 1.0) {
            return Err(Error::InvalidArgument(format!("I0 in (0,1) required (got {i0})")));
        }
        let tau_bar = bar_tau(tau, &g);
        let r0_bar = tau_bar.r0();
        Ok(Self { i0, g, tau_bar, r0_bar })
    }

    pub fn s0(&self) -> f64 {
        1.0 - self.i0
    }

    /// `G(w, z) = g(z) tau(w + z) / R0_bar`.
    pub fn joint_density(&self, tau: &IntensityKernel, w: f64, z: f64) -> f64 {
        if w < 0.0 || z < 0.0 || self.r0_bar <= 0.0 {
            return 0.0;
        }
        self.g.eval(z) * tau.eval(w + z) / self.r0_bar
    }

    /// Alternative route to `R0_bar`: `int g(a) (R0 - int_0^a tau) da`.
    pub fn r0_bar_by_survival(&self, tau: &IntensityKernel) -> f64 {
        let r0 = tau.r0();
        let end = self.g.effective_support();
        let step = tau.age_grid().0.min(end / 200_000.0);
        let grid = GridFn::from_fn(0.0, step, (end / step).ceil() as usize + 1, |a| {
            self.g.eval(a) * (r0 - tau.cumulative(a))
        });
        grid.integral()
    }
}

/// `tau_bar(u) = int_0^inf g(a) tau(a + u) da`.
///
/// Closed form when `tau` is an exponential sum and `g` exponential;
/// otherwise tabulated on the kernel's age grid by trapezoid quadrature.
pub fn bar_tau(tau: &IntensityKernel, g: &Density) -> IntensityKernel {
    if let (IntensityKernel::ExpSum(e), Density::Exponential { rate }) = (tau, g) {
        let mu = *rate;
        return IntensityKernel::ExpSum(ExpSum {
            terms: e.terms.iter().map(|&(c, k)| (c * mu / (mu + k), k)).collect(),
        });
    }
    let (step, a_max) = tau.age_grid();
    let g_end = g.effective_support();
    let h = step.min(g.resolution());
    let n_u = (a_max / step).ceil() as usize + 1;
    let n_a = (g_end / h).ceil() as usize + 1;
    let gv: Vec<f64> = (0..n_a).map(|j| g.eval(j as f64 * h)).collect();
    let values = (0..n_u)
        .map(|i| {
            let u = i as f64 * step;
            let mut acc = 0.0;
            for (j, gj) in gv.iter().enumerate() {
                let w = if j == 0 || j == n_a - 1 { 0.5 } else { 1.0 };
                acc += w * gj * tau.eval(u + j as f64 * h);
            }
            acc * h
        })
        .collect();
    IntensityKernel::Tabulated(GridFn { origin: 0.0, step, values })
}

/// `R0 = int tau`.
pub fn basic_reproduction_number(tau: &IntensityKernel) -> Result<f64> {
    tau.validate()?;
    Ok(tau.r0())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalthusianSolve {
    pub alpha: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
}

/// Root of `L(alpha) = int exp(-alpha a) tau(a) da = 1` by bisection.
///
/// `L` is strictly decreasing. When `L` diverges at the lower end of the
/// bracket (exponential tails), the bracket is shrunk to the domain where
/// `L` is finite.
pub fn malthusian_parameter(tau: &IntensityKernel, bracket: (f64, f64), tol: f64) -> Result<MalthusianSolve> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty bracket [{lo}, {hi}]")));
    }
    if let IntensityKernel::ExpSum(e) = tau {
        if let Some(k) = e.min_rate() {
            let floor = -k + 1e-9 * k.max(1.0);
            if lo < floor {
                lo = floor;
            }
        }
    }
    if !(lo < hi) {
        return Err(Error::NoMalthusian { lo: bracket.0, hi: bracket.1 });
    }
    let f = |a: f64| tau.laplace(a).map(|l| l - 1.0);
    let (Some(flo), Some(fhi)) = (f(lo), f(hi)) else {
        return Err(Error::NoMalthusian { lo, hi });
    };
    if flo.abs() <= tol {
        return Ok(MalthusianSolve { alpha: lo, residual: flo.abs(), bracket: (lo, hi) });
    }
    if fhi.abs() <= tol {
        return Ok(MalthusianSolve { alpha: hi, residual: fhi.abs(), bracket: (lo, hi) });
    }
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::NoMalthusian { lo, hi });
    }
    let used = (lo, hi);
    let mut best = (0.5 * (lo + hi), f64::INFINITY);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid).expect("finite inside bracket");
        if fm.abs() < best.1 {
            best = (mid, fm.abs());
        }
        if fm.abs() <= tol && (hi - lo) < 1e-12 {
            break;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs().max(1e-300) {
            break;
        }
    }
    if best.1 > tol {
        return Err(Error::MalthusianResidual { residual: best.1, tol });
    }
    Ok(MalthusianSolve { alpha: best.0, residual: best.1, bracket: used })
}

/// Backward generation-time density `r(u) = exp(-alpha u) tau(u)`.
pub fn backward_density(tau: &IntensityKernel, alpha: f64) -> Result<Density> {
    let residual = match tau.laplace(alpha) {
        Some(l) => (l - 1.0).abs(),
        None => f64::INFINITY,
    };
    if residual > 1e-6 {
        return Err(Error::MalthusianResidual { residual, tol: 1e-6 });
    }
    Ok(match tau {
        IntensityKernel::ExpSum(e) => Density::ExpSum(e.tilted(alpha)),
        IntensityKernel::Tabulated(g) => Density::Tabulated(GridFn {
            values: g.values.iter().enumerate().map(|(j, v)| v * (-alpha * g.node(j)).exp()).collect(),
            ..g.clone()
        }),
    })
}

/// Sampler for `(W, Z)` with density `G(w, z) = g(z) tau(w + z) / R0_bar`.
///
/// Draws `A ~ nu` and `Z ~ g` independently and keeps the pair when
/// `A >= Z`, returning `(A - Z, Z)`; the acceptance rate is `R0_bar / R0`.
#[derive(Debug, Clone)]
pub struct JointGSampler {
    nu: DensitySampler,
    g: DensitySampler,
}

impl JointGSampler {
    pub fn new(tau: &IntensityKernel, ic: &InitialCondition) -> Result<Self> {
        if !(ic.r0_bar > 0.0) {
            return Err(Error::InvalidDensity("G undefined when R0_bar = 0".into()));
        }
        Ok(Self { nu: tau.generation_time()?.sampler()?, g: ic.g.sampler()? })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        loop {
            let a = self.nu.sample(rng);
            let z = self.g.sample(rng);
            if a >= z {
                return (a - z, z);
            }
        }
    }
}

/// One draw from `G`; see [`JointGSampler`] for repeated use.
pub fn sample_joint_g<R: Rng + ?Sized>(tau: &IntensityKernel, ic: &InitialCondition, rng: &mut R) -> Result<(f64, f64)> {
    Ok(JointGSampler::new(tau, ic)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sir() -> IntensityKernel {
        IntensityKernel::exponential(1.5, 1.0).unwrap()
    }

    fn seir() -> IntensityKernel {
        IntensityKernel::seir(0.9, 0.5, 0.3).unwrap()
    }

    /// Composite Simpson on [0, end] as an independent quadrature oracle.
    fn simpson(f: impl Fn(f64) -> f64, end: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = end / n as f64;
        let mut acc = f(0.0) + f(end);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn r0_examples() {
        assert!((basic_reproduction_number(&sir()).unwrap() - 1.5).abs() < 1e-14);
        assert_eq!(basic_reproduction_number(&IntensityKernel::zero()).unwrap(), 0.0);
        let r0 = basic_reproduction_number(&seir()).unwrap();
        assert!((r0 - 3.0).abs() < 1e-12);
        let t = seir();
        let oracle = simpson(|a| t.eval(a), 200.0, 200_000);
        assert!((oracle - 3.0).abs() < 1e-9, "oracle {oracle}");
    }

    #[test]
    fn divergent_tail_is_rejected() {
        assert!(matches!(IntensityKernel::exponential(1.0, 0.0), Err(Error::InfiniteR0(_))));
        let bad = IntensityKernel::ExpSum(ExpSum { terms: vec![(1.0, -0.1)] });
        assert!(matches!(basic_reproduction_number(&bad), Err(Error::InfiniteR0(_))));
    }

    #[test]
    fn malthusian_examples() {
        let m = malthusian_parameter(&sir(), DEFAULT_BRACKET, 1e-12).unwrap();
        assert!((m.alpha - 0.5).abs() < 1e-10);
        assert!(m.residual <= 1e-12);
        let crit = IntensityKernel::exponential(1.0, 1.0).unwrap();
        let m = malthusian_parameter(&crit, DEFAULT_BRACKET, 1e-12).unwrap();
        assert!(m.alpha.abs() < 1e-10);
        // (a + 0.3)(a + 0.5) = 0.45  =>  a = (-0.8 + sqrt(0.64 - 4 (0.15 - 0.45))) / 2
        let exact = (-0.8 + (0.64f64 + 1.2).sqrt()) / 2.0;
        let m = malthusian_parameter(&seir(), DEFAULT_BRACKET, 1e-12).unwrap();
        assert!((m.alpha - exact).abs() < 1e-10);
        assert!((m.alpha - 0.2782).abs() < 5e-5);
    }

    #[test]
    fn malthusian_without_sign_change() {
        let t = IntensityKernel::tabulated(0.1, vec![0.1; 11]).unwrap(); // R0 = 0.1
        assert!(matches!(malthusian_parameter(&t, (0.0, 5.0), 1e-12), Err(Error::NoMalthusian { .. })));
    }

    #[test]
    fn laplace_tabulated_matches_closed_form() {
        let t = sir();
        let tab = IntensityKernel::tabulated(0.01, (0..6001).map(|j| t.eval(j as f64 * 0.01)).collect()).unwrap();
        for alpha in [-0.5, 0.0, 0.3, 2.0] {
            let exact = 1.5 / (1.0 + alpha);
            let approx = tab.laplace(alpha).unwrap();
            assert!((approx - exact).abs() < 2e-5 * exact, "alpha {alpha}: {approx} vs {exact}");
        }
    }

    #[test]
    fn bar_tau_examples() {
        let ic = InitialCondition::new(0.01, Density::exponential(0.5).unwrap(), &sir()).unwrap();
        for u in [0.0, 0.7, 3.0] {
            assert!((ic.tau_bar.eval(u) - 0.5 * (-u).exp()).abs() < 1e-14);
        }
        assert!((ic.r0_bar - 0.5).abs() < 1e-14);
        assert!((ic.r0_bar_by_survival(&sir()) - 0.5).abs() < 1e-6);

        // narrow tabulated g at 0 gives tau_bar ~ tau
        let g = Density::tabulated(0.001, vec![1.0, 0.0]).unwrap();
        let ic = InitialCondition::new(0.01, g, &sir()).unwrap();
        for u in [0.0, 1.0, 2.5] {
            assert!((ic.tau_bar.eval(u) - sir().eval(u)).abs() < 2e-3, "u {u}");
        }
    }

    #[test]
    fn bar_tau_seir_against_double_quadrature() {
        let tau = seir();
        let alpha = malthusian_parameter(&tau, DEFAULT_BRACKET, 1e-12).unwrap().alpha;
        let g = Density::exponential(alpha).unwrap();
        let closed = bar_tau(&tau, &g);
        let tab_tau = IntensityKernel::tabulated(0.01, (0..20001).map(|j| tau.eval(j as f64 * 0.01)).collect()).unwrap();
        let tabulated = bar_tau(&tab_tau, &g);
        for u in [0.0, 0.5, 2.0, 10.0] {
            let oracle = simpson(|a| g.eval(a) * tau.eval(a + u), 150.0, 60_000);
            assert!((closed.eval(u) - oracle).abs() < 1e-9, "u {u}");
            assert!((tabulated.eval(u) - oracle).abs() < 1e-5 * oracle.max(1e-3), "u {u}");
        }
        let ic = InitialCondition::new(0.01, g, &tau).unwrap();
        assert!(ic.r0_bar >= 0.0 && ic.r0_bar <= tau.r0());
        assert!((ic.r0_bar - ic.r0_bar_by_survival(&tau)).abs() < 1e-5);
    }

    #[test]
    fn normalizations() {
        for tau in [sir(), seir()] {
            let nu = tau.generation_time().unwrap();
            assert!((nu.total_mass() - 1.0).abs() <= 1e-6);
            let ic = InitialCondition::new(0.05, Density::exponential(0.7).unwrap(), &tau).unwrap();
            let nu_bar = ic.tau_bar.generation_time().unwrap();
            assert!((nu_bar.total_mass() - 1.0).abs() <= 1e-6);
            assert!(ic.r0_bar <= tau.r0());
            // G integrates to one
            let mut acc = 0.0;
            let h = 0.02;
            for i in 0..2000 {
                for j in 0..2000 {
                    acc += ic.joint_density(&tau, (i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                }
            }
            assert!((acc * h * h - 1.0).abs() < 1e-3, "G mass {}", acc * h * h);
        }
    }

    #[test]
    fn backward_density_examples() {
        let b = backward_density(&sir(), 0.5).unwrap();
        for u in [0.0, 0.3, 4.0] {
            assert!((b.eval(u) - 1.5 * (-1.5 * u).exp()).abs() < 1e-14);
            assert!((b.eval(u) - (-0.5 * u).exp() * sir().eval(u)).abs() < 1e-15);
        }
        let crit = IntensityKernel::exponential(1.0, 1.0).unwrap();
        let b = backward_density(&crit, 0.0).unwrap();
        assert!((b.eval(0.8) - crit.eval(0.8)).abs() < 1e-15);
        let tau = seir();
        let alpha = malthusian_parameter(&tau, DEFAULT_BRACKET, 1e-12).unwrap().alpha;
        let b = backward_density(&tau, alpha).unwrap();
        let mass = simpson(|u| b.eval(u), 200.0, 100_000);
        assert!((mass - 1.0).abs() <= 1e-6);
        assert!(backward_density(&tau, alpha + 0.01).is_err());
    }

    #[test]
    fn joint_g_marginal_matches_nu_bar() {
        let tau = sir();
        let ic = InitialCondition::new(0.01, Density::exponential(0.5).unwrap(), &tau).unwrap();
        let sampler = JointGSampler::new(&tau, &ic).unwrap();
        let mut r = rng::stream(11, rng::tag::KERNELS, &[]);
        let n = 100_000;
        let width = 0.1;
        let mut hist = vec![0.0; 100];
        for _ in 0..n {
            let (w, z) = sampler.sample(&mut r);
            assert!(w >= 0.0 && z >= 0.0);
            let b = (w / width) as usize;
            if b < hist.len() {
                hist[b] += 1.0 / (n as f64 * width);
            }
        }
        let nu_bar = ic.tau_bar.generation_time().unwrap();
        let mut l1 = 0.0;
        for (b, h) in hist.iter().enumerate() {
            let lo = b as f64 * width;
            let p = nu_bar.cdf(lo + width) - nu_bar.cdf(lo);
            l1 += (h * width - p).abs();
        }
        l1 += 1.0 - nu_bar.cdf(10.0);
        assert!(l1 <= 0.02, "L1 {l1}");
    }

    #[test]
    fn joint_g_with_narrow_g_reduces_to_nu() {
        let tau = sir();
        let g = Density::tabulated(0.001, vec![1.0, 0.0]).unwrap();
        let ic = InitialCondition::new(0.01, g, &tau).unwrap();
        let sampler = JointGSampler::new(&tau, &ic).unwrap();
        let mut r = rng::stream(12, rng::tag::KERNELS, &[]);
        let n = 50_000;
        let mean: f64 = (0..n).map(|_| sampler.sample(&mut r).0).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02);
    }

    #[test]
    fn contact_rate_shapes() {
        let c = ContactRate::piecewise_constant(vec![0.0, 4.0, 8.0], vec![1.0, 0.3, 0.8]).unwrap();
        assert_eq!(c.eval(3.999), 1.0);
        assert_eq!(c.eval(4.0), 0.3);
        assert_eq!(c.eval(100.0), 0.8);
        assert_eq!(c.terminal(), 0.8);
        let l = ContactRate::piecewise_linear(vec![0.0, 2.0], vec![1.0, 0.0]).unwrap();
        assert!((l.eval(0.5) - 0.75).abs() < 1e-15);
        assert_eq!(l.eval(5.0), 0.0);
        assert!(matches!(ContactRate::constant(1.2), Err(Error::ContactRate(_))));
        assert!(ContactRate::piecewise_constant(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn initial_condition_requires_open_interval() {
        assert!(InitialCondition::new(0.0, Density::exponential(1.0).unwrap(), &sir()).is_err());
        assert!(InitialCondition::new(1.0, Density::exponential(1.0).unwrap(), &sir()).is_err());
    }
}
