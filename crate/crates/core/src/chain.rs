//! Backward transmission chains.
//!
//! [`sample_renewal`] draws the renewal process started at `t` with
//! increments from `r(u) = exp(-alpha u) tau(u)`; [`apply_killing`] kills it
//! at a state `x > 0` with probability `1 - c(x) S(x)`. The h-chain moves
//! from `x > 0` to `y < x` with density
//! `Q(x, y) = c(x) S(x) b(y) tau(x - y) / b(x)`, where `b(-u) = I0 g(u)`, and
//! stops at the first state `<= 0`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{backward_density, ContactRate, Density, DensitySampler, IntensityKernel};
use crate::rng;
use crate::solver::LimitSolution;

/// Smallest incidence at which the h-chain is started.
pub const MIN_INCIDENCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RenewalChain {
    /// `R_0 = t > R_1 > ... > R_L`, stored up to `min(L, K)`.
    pub times: Vec<f64>,
    /// First `k` with `R_k <= 0`, if reached.
    pub stop: Option<usize>,
    /// Index of the state at which the chain was killed.
    pub killed_at: Option<usize>,
}

impl RenewalChain {
    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn survived(&self) -> bool {
        self.killed_at.is_none()
    }

    /// `R_{k ^ L}` for a chain that ran to its stopping index.
    pub fn state(&self, k: usize) -> f64 {
        self.times[k.min(self.times.len() - 1)]
    }
}

/// Sampler of renewal increments from the backward generation-time density.
#[derive(Debug, Clone)]
pub struct RenewalSampler {
    pub alpha: f64,
    increments: DensitySampler,
}

impl RenewalSampler {
    pub fn new(tau: &IntensityKernel, alpha: f64) -> Result<Self> {
        Ok(Self { alpha, increments: backward_density(tau, alpha)?.sampler()? })
    }
}

pub fn sample_renewal<R: Rng + ?Sized>(t: f64, s: &RenewalSampler, rng: &mut R) -> RenewalChain {
    let mut times = vec![t];
    let mut x = t;
    while x > 0.0 {
        x -= s.increments.sample(rng);
        times.push(x);
    }
    RenewalChain { stop: Some(times.len() - 1), times, killed_at: None }
}

/// Per-state survival probability `l(x)`, equal to 1 for `x <= 0`.
#[derive(Debug, Clone, Copy)]
pub enum Survival<'a> {
    /// `c(x) S(x)` from a solution.
    Limit(&'a LimitSolution),
    /// `c(x)`, as if `S = 1`.
    Unsaturated(&'a ContactRate),
}

impl Survival<'_> {
    pub fn prob(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(1.0);
        }
        match self {
            Self::Limit(sol) => Ok(sol.c.eval(x) * sol.s_at(x)?),
            Self::Unsaturated(c) => Ok(c.eval(x)),
        }
    }
}

/// Runs the killing trials along the chain and truncates it at the killing
/// index.
pub fn apply_killing<R: Rng + ?Sized>(mut chain: RenewalChain, survival: Survival, rng: &mut R) -> Result<RenewalChain> {
    for k in 0..chain.times.len() {
        let x = chain.times[k];
        if x <= 0.0 {
            break;
        }
        if rng.random::<f64>() >= survival.prob(x)? {
            chain.killed_at = Some(k);
            chain.times.truncate(k + 1);
            chain.stop = None;
            break;
        }
    }
    Ok(chain)
}

/// Sampler for the kernel `Q`, tabulated on the solution's time grid.
#[derive(Debug, Clone)]
pub struct HChainSampler<'a> {
    sol: &'a LimitSolution,
    g: DensitySampler,
    tau_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HChain {
    /// Strictly decreasing from `t`; only the last entry is `<= 0`.
    pub times: Vec<f64>,
}

impl HChain {
    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[0] - w[1])
    }
}

/// Masses of `y -> b(y) tau(x - y)` on `[0, x]` (trapezoid on the grid plus
/// a final partial cell) and on `(-inf, 0)`.
struct Row {
    nodes: Vec<f64>,
    values: Vec<f64>,
    cum: Vec<f64>,
    negative: f64,
}

impl Row {
    fn positive(&self) -> f64 {
        *self.cum.last().unwrap()
    }
}

impl<'a> HChainSampler<'a> {
    pub fn new(sol: &'a LimitSolution) -> Result<Self> {
        Ok(Self { sol, g: sol.ic.g.sampler()?, tau_max: sol.tau.upper_bound() })
    }

    fn row(&self, x: f64) -> Result<Row> {
        let sol = self.sol;
        if x > sol.horizon() * (1.0 + 1e-12) {
            return Err(Error::OutOfHorizon { t: x, horizon: sol.horizon() });
        }
        let m = ((x / sol.dt).floor() as usize).min(sol.steps());
        let mut nodes = Vec::with_capacity(m + 2);
        let mut values = Vec::with_capacity(m + 2);
        for j in 0..=m {
            let y = sol.time(j);
            nodes.push(y);
            values.push(sol.b[j] * sol.tau.eval(x - y));
        }
        if x > nodes[m] {
            nodes.push(x);
            values.push(sol.b_at(x)? * sol.tau.eval(0.0));
        }
        let mut cum = Vec::with_capacity(nodes.len());
        cum.push(0.0);
        for j in 1..nodes.len() {
            let prev = cum[j - 1];
            cum.push(prev + 0.5 * (nodes[j] - nodes[j - 1]) * (values[j] + values[j - 1]));
        }
        let negative = sol.ic.i0 * sol.ic.tau_bar.eval(x);
        Ok(Row { nodes, values, cum, negative })
    }

    /// `int Q(x, y) dy` by the same quadrature used for sampling.
    pub fn row_sum(&self, x: f64) -> Result<f64> {
        let row = self.row(x)?;
        let l = self.sol.c.eval(x) * self.sol.s_at(x)?;
        Ok(l * (row.positive() + row.negative) / self.sol.b_at(x)?)
    }

    pub fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        if self.sol.c.eval(x) * self.sol.s_at(x)? <= 0.0 {
            return Err(Error::ZeroKillingState(x));
        }
        let row = self.row(x)?;
        let total = row.positive() + row.negative;
        if !(total > 0.0) {
            return Err(Error::ZeroKillingState(x));
        }
        let u = rng.random::<f64>() * total;
        if u < row.negative || row.positive() <= 0.0 {
            let tau = &self.sol.tau;
            loop {
                let z = self.g.sample(rng);
                if rng.random::<f64>() * self.tau_max <= tau.eval(x + z) {
                    return Ok(-z.max(f64::MIN_POSITIVE));
                }
            }
        }
        let target = u - row.negative;
        let j = row.cum.partition_point(|&c| c <= target).clamp(1, row.cum.len() - 1) - 1;
        let h = row.nodes[j + 1] - row.nodes[j];
        let (f0, f1) = (row.values[j], row.values[j + 1]);
        let rem = (target - row.cum[j]).max(0.0);
        let denom = f0 + (f0 * f0 + 2.0 * (f1 - f0) * rem / h).max(0.0).sqrt();
        let s = if denom > 0.0 { (2.0 * rem / denom).min(h) } else { 0.0 };
        let y = row.nodes[j] + s;
        // a draw on the cell edge at x would not move the chain
        Ok(if y >= x { row.nodes[j] } else { y })
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<HChain> {
        if !(self.sol.b_at(t)? >= MIN_INCIDENCE) {
            return Err(Error::ChainUndefined(t));
        }
        let mut times = vec![t];
        let mut x = t;
        while x > 0.0 {
            x = self.step(x, rng)?;
            times.push(x);
        }
        Ok(HChain { times })
    }
}

/// One h-chain from `t`.
pub fn sample_h_chain<R: Rng + ?Sized>(t: f64, sol: &LimitSolution, rng: &mut R) -> Result<HChain> {
    HChainSampler::new(sol)?.sample(t, rng)
}

/// `n` independent h-chains keyed by `(seed, index)`; starts are drawn by
/// `start` from each chain's own stream.
pub fn h_chains<F>(sol: &LimitSolution, n: usize, seed: u64, start: F) -> Result<Vec<HChain>>
where
    F: Fn(&mut rng::Stream) -> f64 + Sync,
{
    let sampler = HChainSampler::new(sol)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, rng::tag::CHAIN, &[1, i]);
            let t = start(&mut r);
            sampler.sample(t, &mut r)
        })
        .collect()
}

/// Killed renewal chains keyed by `(seed, index)`.
pub fn killed_chains(t: f64, renewal: &RenewalSampler, survival: Survival, n: usize, seed: u64) -> Result<Vec<RenewalChain>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, rng::tag::CHAIN, &[2, i]);
            let chain = sample_renewal(t, renewal, &mut r);
            apply_killing(chain, survival, &mut r)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MartingaleReport {
    pub t: f64,
    /// `b(t) exp(-alpha t)`.
    pub target: f64,
    pub means: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
}

impl MartingaleReport {
    /// Largest `|mean_k - target| / se_k` over `k` with positive SE.
    pub fn worst_z(&self) -> f64 {
        self.means
            .iter()
            .zip(&self.se)
            .filter(|(_, s)| **s > 0.0)
            .map(|(m, s)| (m - self.target).abs() / s)
            .fold(0.0, f64::max)
    }
}

/// Per-`k` means of `M_k = b(R_{k ^ L}) exp(-alpha R_{k ^ L}) 1{K >= k}`
/// for `k = 0..=k_max`. `b` is read from `sol`, which also sets the killing
/// when `survival` is [`Survival::Limit`].
pub fn martingale_diagnostic(
    t: f64,
    sol: &LimitSolution,
    renewal: &RenewalSampler,
    survival: Survival,
    n: usize,
    k_max: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    let alpha = renewal.alpha;
    let chains = killed_chains(t, renewal, survival, n, seed)?;
    // Welford per k; killed chains contribute zeros
    let mut mean = vec![0.0; k_max + 1];
    let mut m2 = vec![0.0; k_max + 1];
    for (i, ch) in chains.iter().enumerate() {
        let count = (i + 1) as f64;
        for k in 0..=k_max {
            // 1{K >= k}: trials at R_0..R_{k-1} succeeded
            let alive = ch.killed_at.is_none_or(|kk| kk >= k);
            let m = if alive {
                let x = ch.state(k);
                sol.b_at(x)? * (-alpha * x).exp()
            } else {
                0.0
            };
            let d = m - mean[k];
            mean[k] += d / count;
            m2[k] += d * (m - mean[k]);
        }
    }
    let nf = n as f64;
    let means = mean;
    let se = m2.iter().map(|q| (q / (nf - 1.0) / nf).sqrt()).collect();
    Ok(MartingaleReport { t, target: sol.b_at(t)? * (-alpha * t).exp(), means, se, n })
}

#[derive(Debug, Clone)]
pub struct SurvivalReport {
    pub t: f64,
    pub b_solver: f64,
    pub survival: f64,
    pub se: f64,
    /// `I0 alpha exp(alpha t) P_hat`.
    pub scaled_prediction: f64,
    /// `alpha exp(alpha t) P_hat`, normalized per initial infected.
    pub literal_prediction: f64,
    /// `3 I0 alpha exp(alpha t) SE`.
    pub tolerance: f64,
    pub n: usize,
}

impl SurvivalReport {
    pub fn scaled_error(&self) -> f64 {
        (self.b_solver - self.scaled_prediction).abs()
    }

    pub fn pass(&self) -> bool {
        self.scaled_error() <= self.tolerance
    }

    /// Normalization discrepancy: the per-initial-infected prediction
    /// exceeds the solver's incidence by the factor `1 / I0`.
    pub fn normalization_note(&self) -> String {
        format!(
            "t={}: b={:.6e}, I0-scaled {:.6e} (|diff| {:.2e} <= {:.2e}: {}), unit-normalized {:.6e} (ratio to b {:.4})",
            self.t,
            self.b_solver,
            self.scaled_prediction,
            self.scaled_error(),
            self.tolerance,
            self.pass(),
            self.literal_prediction,
            self.literal_prediction / self.b_solver
        )
    }
}

/// Compares `b(t)` with `I0 alpha exp(alpha t) P(not killed)`, valid for
/// `g = Exp(alpha)`.
pub fn survival_representation_check(t: f64, sol: &LimitSolution, renewal: &RenewalSampler, n: usize, seed: u64) -> Result<SurvivalReport> {
    let alpha = renewal.alpha;
    match sol.ic.g {
        Density::Exponential { rate } if (rate - alpha).abs() <= 1e-6 * alpha.abs().max(1.0) => {}
        _ => return Err(Error::NonEquilibriumG),
    }
    let chains = killed_chains(t, renewal, Survival::Limit(sol), n, seed)?;
    let nf = n as f64;
    let p = chains.iter().filter(|c| c.survived()).count() as f64 / nf;
    let se = (p * (1.0 - p) / nf).sqrt();
    let scale = alpha * (alpha * t).exp();
    let i0 = sol.ic.i0;
    Ok(SurvivalReport {
        t,
        b_solver: sol.b_at(t)?,
        survival: p,
        se,
        scaled_prediction: i0 * scale * p,
        literal_prediction: scale * p,
        tolerance: 3.0 * i0 * scale * se,
        n,
    })
}

/// First increments of surviving killed-renewal chains with their
/// Radon-Nikodym weights `b(R_L) exp(-alpha R_L) / (b(t) exp(-alpha t))`.
pub fn reweighted_first_increments(
    t: f64,
    sol: &LimitSolution,
    renewal: &RenewalSampler,
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let alpha = renewal.alpha;
    let norm = sol.b_at(t)? * (-alpha * t).exp();
    let chains = killed_chains(t, renewal, Survival::Limit(sol), n, seed)?;
    chains
        .iter()
        .filter(|c| c.survived() && c.times.len() >= 2)
        .map(|c| {
            let last = *c.times.last().unwrap();
            Ok((c.times[0] - c.times[1], sol.b_at(last)? * (-alpha * last).exp() / norm))
        })
        .collect()
}
