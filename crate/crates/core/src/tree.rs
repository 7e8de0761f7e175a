//! Limiting two-type Poisson tree and its active geodesic.
//!
//! A type-(S) vertex has `Poisson(S0 R0)` type-(S) children at edge lengths
//! drawn from `nu`, and `Poisson(I0 R0_bar)` type-(I) leaves carrying
//! `(W_bar, Z) ~ G`. Every edge carries a uniform mark `s` and is active
//! when `s <= c` at the calendar time of the contact it represents. The
//! root's infection time solves
//!
//! `sigma = min( min_S (W_i + sigma_i) 1{s_i <= c(W_i + sigma_i)},
//!               min_I W_bar_j 1{s_j <= c(W_bar_j)} )`
//!
//! (inactive terms count as infinite) and `B(t) = S0 P(sigma <= t)`.
//!
//! Vertices are expanded lazily and depth first. Each vertex draws its
//! offspring from its own stream keyed by its position in the tree, so the
//! realization does not depend on the horizon or the pruning.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::courses::{sample_course, sample_palm_course, CourseModel, DiseaseCourse};
use crate::error::{Error, Result};
use crate::kernels::{ContactRate, DensitySampler, InitialCondition, IntensityKernel, JointGSampler};
use crate::rng;

/// Default cap on expanded vertices per sample.
pub const DEFAULT_NODE_CAP: usize = 10_000;
/// Minimum number of conditioned samples for [`conditioned_first_step`].
pub const MIN_CONDITIONED: usize = 200;

#[derive(Debug, Clone)]
pub struct TreeParams {
    pub s0r0: f64,
    pub i0r0_bar: f64,
    pub c: ContactRate,
    pub horizon: f64,
    pub node_cap: usize,
    nu: Option<DensitySampler>,
    joint: Option<JointGSampler>,
    s_count: Option<Poisson<f64>>,
    i_count: Option<Poisson<f64>>,
    courses: Option<(CourseModel, f64)>,
}

impl TreeParams {
    pub fn new(tau: &IntensityKernel, ic: &InitialCondition, c: &ContactRate, horizon: f64) -> Result<Self> {
        let r0 = tau.r0();
        let s0r0 = ic.s0() * r0;
        let i0r0_bar = ic.i0 * ic.r0_bar;
        let nu = if r0 > 0.0 { Some(tau.generation_time()?.sampler()?) } else { None };
        let joint = if i0r0_bar > 0.0 { Some(JointGSampler::new(tau, ic)?) } else { None };
        let pois = |m: f64| if m > 0.0 { Poisson::new(m).ok() } else { None };
        Ok(Self {
            s0r0,
            i0r0_bar,
            c: c.clone(),
            horizon,
            node_cap: DEFAULT_NODE_CAP,
            nu,
            joint,
            s_count: pois(s0r0),
            i_count: pois(i0r0_bar),
            courses: None,
        })
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }

    /// Decorate reported geodesics with courses drawn from `model`, Palm
    /// laws using the given rejection window.
    pub fn with_courses(mut self, model: CourseModel, window: f64) -> Self {
        self.courses = Some((model, window));
        self
    }
}

/// Offspring of one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Offspring {
    /// `(edge length, mark, child key)`, sorted by length.
    pub s_children: Vec<(f64, f64, u64)>,
    /// `(W_bar, Z, mark)`.
    pub i_leaves: Vec<(f64, f64, f64)>,
}

pub fn offspring(p: &TreeParams, key: u64) -> Offspring {
    let mut r = rng::stream_from_key(key);
    let n_i = p.i_count.as_ref().map_or(0, |d| d.sample(&mut r) as usize);
    let n_s = p.s_count.as_ref().map_or(0, |d| d.sample(&mut r) as usize);
    let i_leaves = (0..n_i)
        .map(|_| {
            let (w, z) = p.joint.as_ref().unwrap().sample(&mut r);
            (w, z, r.random::<f64>())
        })
        .collect();
    let mut s_children: Vec<(f64, f64, u64)> = (0..n_s)
        .map(|i| (p.nu.as_ref().unwrap().sample(&mut r), r.random::<f64>(), rng::derive(key, rng::tag::TREE, &[i as u64])))
        .collect();
    s_children.sort_by(|a, b| a.0.total_cmp(&b.0));
    Offspring { s_children, i_leaves }
}

pub fn root_key(seed: u64, index: u64) -> u64 {
    rng::derive(seed, rng::tag::TREE, &[index])
}

/// One sampled geodesic.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSample {
    /// `None` when censored (`sigma > horizon`).
    pub sigma: Option<f64>,
    /// Ancestral times from `sigma` down to the initial infected's `-Z`.
    pub times: Vec<f64>,
    /// Age at which each infector on the path made the contact
    /// (`W` on (S)-edges, `W_bar + Z` for the initial infected).
    pub contact_ages: Vec<f64>,
    /// Root course, then one Palm course per infector, when requested.
    pub courses: Vec<DiseaseCourse>,
    pub explored: usize,
    pub max_depth: usize,
}

impl GeodesicSample {
    pub fn clipped(&self, horizon: f64) -> f64 {
        self.sigma.map_or(horizon, |s| s.min(horizon))
    }

    /// `R(1)`, the infection time of the root's infector.
    pub fn first_step(&self) -> Option<f64> {
        self.times.get(1).copied()
    }
}

struct Walk<'a> {
    p: &'a TreeParams,
    explored: usize,
    max_depth: usize,
}

/// `(sigma of infector, contact age)` from the leaf upwards.
type Chain = Vec<(f64, f64)>;

impl Walk<'_> {
    /// Geodesic time of the vertex if at most `budget`.
    fn value(&mut self, key: u64, budget: f64, depth: usize) -> Result<Option<(f64, Chain)>> {
        self.explored += 1;
        self.max_depth = self.max_depth.max(depth);
        if self.explored > self.p.node_cap {
            return Err(Error::DepthCap { cap: self.p.node_cap, depth, explored: self.explored });
        }
        let off = offspring(self.p, key);
        let mut best: Option<(f64, Chain)> = None;
        for &(w, z, s) in &off.i_leaves {
            if w <= budget && s <= self.p.c.eval(w) && best.as_ref().is_none_or(|b| w < b.0) {
                best = Some((w, vec![(-z, w + z)]));
            }
        }
        for &(w, s, child) in &off.s_children {
            let bound = best.as_ref().map_or(budget, |b| b.0.min(budget));
            if w > bound {
                break;
            }
            if let Some((v, mut chain)) = self.value(child, bound - w, depth + 1)? {
                let total = v + w;
                if total <= bound && s <= self.p.c.eval(total) && best.as_ref().is_none_or(|b| total < b.0) {
                    chain.push((v, w));
                    best = Some((total, chain));
                }
            }
        }
        Ok(best)
    }
}

/// Samples the root's geodesic, censored at the horizon.
pub fn sample_geodesic(p: &TreeParams, seed: u64, index: u64) -> Result<GeodesicSample> {
    let mut walk = Walk { p, explored: 0, max_depth: 0 };
    let found = walk.value(root_key(seed, index), p.horizon, 0)?;
    let mut out = GeodesicSample {
        sigma: None,
        times: vec![],
        contact_ages: vec![],
        courses: vec![],
        explored: walk.explored,
        max_depth: walk.max_depth,
    };
    if let Some((sigma, chain)) = found {
        out.sigma = Some(sigma);
        out.times.push(sigma);
        for &(t, a) in chain.iter().rev() {
            out.times.push(t);
            out.contact_ages.push(a);
        }
        if let Some((model, window)) = &p.courses {
            let mut r = rng::stream(seed, rng::tag::COURSES, &[index]);
            out.courses.push(sample_course(model, p.horizon, &mut r));
            for &a in &out.contact_ages {
                out.courses.push(sample_palm_course(model, a, *window, p.horizon + a, &mut r)?);
            }
        }
    }
    Ok(out)
}

/// Clipped geodesic times of `n` independent samples.
pub fn sample_many(p: &TreeParams, n: usize, seed: u64) -> Result<Vec<Option<f64>>> {
    (0..n as u64).into_par_iter().map(|i| sample_geodesic(p, seed, i).map(|g| g.sigma)).collect()
}

#[derive(Debug, Clone)]
pub struct BEstimate {
    pub t: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
}

/// `B_hat(t) = S0 P_hat(sigma <= t)` with binomial standard errors; the
/// horizon is raised to the largest `t` if needed.
pub fn estimate_b(p: &TreeParams, s0: f64, t_grid: &[f64], n: usize, seed: u64) -> Result<BEstimate> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("estimate needs at least 1000 samples (got {n})")));
    }
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    let p = p.clone().with_horizon(t_max);
    let sigmas = sample_many(&p, n, seed)?;
    let nf = n as f64;
    let mut b_hat = Vec::with_capacity(t_grid.len());
    let mut se = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let q = sigmas.iter().filter(|s| s.is_some_and(|s| s <= t)).count() as f64 / nf;
        b_hat.push(s0 * q);
        se.push(s0 * (q * (1.0 - q) / nf).sqrt());
    }
    Ok(BEstimate { t: t_grid.to_vec(), b_hat, se, n })
}

#[derive(Debug, Clone)]
pub struct ConditionedSteps {
    /// `R(1)` of every sample with `sigma` in `[t, t + delta]`.
    pub first_steps: Vec<f64>,
    /// Root geodesic times of the same samples.
    pub sigmas: Vec<f64>,
    pub samples: usize,
}

/// First backward step of the geodesic conditioned on `sigma` in
/// `[t, t + delta]`.
pub fn conditioned_first_step(p: &TreeParams, t: f64, delta: f64, n: usize, seed: u64) -> Result<ConditionedSteps> {
    let p = p.clone().with_horizon(t + delta);
    let hits: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let g = sample_geodesic(&p, seed, i)?;
            Ok(match g.sigma {
                Some(s) if s >= t => Some((s, g.times[1])),
                _ => None,
            })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if hits.len() < MIN_CONDITIONED {
        return Err(Error::TooFewConditioned { got: hits.len(), need: MIN_CONDITIONED });
    }
    Ok(ConditionedSteps {
        first_steps: hits.iter().map(|h| h.1).collect(),
        sigmas: hits.iter().map(|h| h.0).collect(),
        samples: n,
    })
}

/// Exhaustive evaluation of the root's geodesic on the realization within
/// `horizon`: every vertex whose depth is at most `horizon` is expanded, with
/// no pruning by the running minimum.
pub fn exhaustive_sigma(p: &TreeParams, seed: u64, index: u64) -> Option<f64> {
    fn go(p: &TreeParams, key: u64, depth: f64) -> f64 {
        let off = offspring(p, key);
        let mut best = f64::INFINITY;
        for &(w, _, s) in &off.i_leaves {
            if depth + w <= p.horizon && s <= p.c.eval(w) {
                best = best.min(w);
            }
        }
        for &(w, s, child) in &off.s_children {
            if depth + w > p.horizon {
                continue;
            }
            let v = go(p, child, depth + w) + w;
            if v.is_finite() && s <= p.c.eval(v) {
                best = best.min(v);
            }
        }
        best
    }
    let v = go(p, root_key(seed, index), 0.0);
    (v <= p.horizon).then_some(v)
}
