//! The acceptance suite: each criterion cross-checks two layers of the model
//! against each other or against an independent oracle.

use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    l1_histogram_distance, mean_se, reporting_indices, ComparisonReport, Histogram, REPORTING_POINTS,
};
use crate::chain::{h_chains, martingale_diagnostic, survival_representation_check, RenewalSampler, Survival};
use crate::config::Scenario;
use crate::courses::CourseModel;
use crate::error::{Error, Result};
use crate::grid::InverseCdfTable;
use crate::kernels::{ContactRate, InitialCondition};
use crate::rng;
use crate::sim::{compartment_series, first_increments_in_window, infected_fraction, simulate, InfectionGraph, InitialDraw, SimOptions};
use crate::solver::{compartment_values, final_size, final_size_after, picard_delay, solve_delay, LimitSolution};
use crate::tree::{conditioned_first_step, estimate_b, TreeParams};

/// Step of the reference solution used against ODE, Picard and the
/// stochastic layers.
pub const FINE_DT: f64 = 1e-3;
/// Step of the solution driving the backward chains.
pub const CHAIN_DT: f64 = 1e-2;

pub const CHAIN_SAMPLES: usize = 1_000_000;
pub const TREE_CONDITIONING_SAMPLES: usize = 1_000_000;
pub const H_CHAIN_SAMPLES: usize = 100_000;
pub const LOCAL_INSTANCES: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub checks: Vec<ComparisonReport>,
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl CriterionReport {
    fn new(id: u8, name: &str, checks: Vec<ComparisonReport>, notes: Vec<String>, start: Instant) -> Self {
        let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
        Self { id, name: name.into(), pass, checks, notes, seconds: start.elapsed().as_secs_f64() }
    }

    fn failed(id: u8, name: &str, err: &Error, start: Instant) -> Self {
        Self { id, name: name.into(), pass: false, checks: vec![], notes: vec![format!("error: {err}")], seconds: start.elapsed().as_secs_f64() }
    }

    /// One line: id, PASS/FAIL, name, then `check value <= threshold`.
    pub fn summary_line(&self) -> String {
        let checks: Vec<String> = self
            .checks
            .iter()
            .map(|c| format!("{}={:.3e}{}{:.3e}", c.name, c.value, if c.pass { "<=" } else { ">" }, c.threshold))
            .collect();
        format!(
            "criterion {:>2} {} {} ({:.1}s) {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            checks.join("; ")
        )
    }
}

pub const NAMES: [&str; 12] = [
    "solver vs SIR ODE",
    "marching vs Picard",
    "law of large numbers",
    "Poisson-tree dual",
    "final size",
    "small-instance geodesic oracle",
    "spinal law of the first backward step",
    "backward martingale",
    "survival representation",
    "backward generation time",
    "historical process",
    "heterogeneous contact rate",
];

/// Per-replica statistics of one forward batch.
#[derive(Debug, Clone)]
pub struct ReplicaSummary {
    pub sup_deviation: f64,
    pub final_fraction: f64,
    pub window_increments: Vec<f64>,
}

/// Window of infection times whose first backward increments are traced.
pub const HISTORICAL_WINDOW: (f64, f64) = (8.0, 9.0);

/// Lazily shared solutions and forward batches for one scenario.
pub struct Suite {
    pub scn: Scenario,
    pub hetero: Scenario,
    fine: OnceLock<Result<LimitSolution, String>>,
    coarse: OnceLock<Result<LimitSolution, String>>,
    batch: OnceLock<Result<Vec<ReplicaSummary>, String>>,
    hetero_fine: OnceLock<Result<LimitSolution, String>>,
    hetero_batch: OnceLock<Result<Vec<ReplicaSummary>, String>>,
}

/// `c = 1` on `[0, 4)`, `0.3` on `[4, 8)`, `0.8` afterwards.
pub fn heterogeneous_contact_rate() -> ContactRate {
    ContactRate::piecewise_constant(vec![0.0, 4.0, 8.0], vec![1.0, 0.3, 0.8]).expect("valid contact rate")
}

fn cached<T>(cell: &OnceLock<Result<T, String>>, f: impl FnOnce() -> Result<T>) -> Result<&T> {
    cell.get_or_init(|| f().map_err(|e| e.to_string())).as_ref().map_err(|e| Error::InvalidArgument(e.clone()))
}

impl Suite {
    pub fn new(scn: Scenario) -> Self {
        let mut hetero = scn.clone();
        hetero.c = heterogeneous_contact_rate();
        Self {
            scn,
            hetero,
            fine: OnceLock::new(),
            coarse: OnceLock::new(),
            batch: OnceLock::new(),
            hetero_fine: OnceLock::new(),
            hetero_batch: OnceLock::new(),
        }
    }

    pub fn fine(&self) -> Result<&LimitSolution> {
        cached(&self.fine, || solve_delay(&self.scn.tau, &self.scn.c, &self.scn.ic, self.scn.horizon, FINE_DT))
    }

    pub fn coarse(&self) -> Result<&LimitSolution> {
        cached(&self.coarse, || solve_delay(&self.scn.tau, &self.scn.c, &self.scn.ic, self.scn.horizon, CHAIN_DT))
    }

    fn hetero_fine(&self) -> Result<&LimitSolution> {
        cached(&self.hetero_fine, || solve_delay(&self.hetero.tau, &self.hetero.c, &self.hetero.ic, self.hetero.horizon, FINE_DT))
    }

    fn batch(&self) -> Result<&Vec<ReplicaSummary>> {
        cached(&self.batch, || forward_batch(&self.scn, self.fine()?))
    }

    fn hetero_batch(&self) -> Result<&Vec<ReplicaSummary>> {
        cached(&self.hetero_batch, || forward_batch(&self.hetero, self.hetero_fine()?))
    }

    pub fn run(&self, id: u8) -> CriterionReport {
        let start = Instant::now();
        let name = NAMES.get(id.wrapping_sub(1) as usize).copied().unwrap_or("unknown");
        let out = match id {
            1 => self.solver_vs_ode(),
            2 => self.marching_vs_picard(),
            3 => self.lln(&self.scn, || self.batch()),
            4 => self.tree_dual(&self.scn, self.fine()),
            5 => self.final_size(&self.scn, self.fine(), self.batch()),
            6 => self.geodesic_oracle(),
            7 => self.spinal_law(),
            8 => self.martingale(),
            9 => self.survival(),
            10 => self.backward_generation_time(),
            11 => self.historical(),
            12 => self.heterogeneous(),
            _ => Err(Error::InvalidArgument(format!("no criterion {id}"))),
        };
        match out {
            Ok((checks, notes)) => CriterionReport::new(id, name, checks, notes, start),
            Err(e) => CriterionReport::failed(id, name, &e, start),
        }
    }

    pub fn run_all(&self) -> Vec<CriterionReport> {
        (1..=12).map(|id| self.run(id)).collect()
    }

    fn check(&self, name: impl Into<String>, value: f64, threshold: f64, se: f64, samples: usize) -> ComparisonReport {
        ComparisonReport::new(name, value, threshold, se, samples).with_digest(&self.scn.digest)
    }

    fn solver_vs_ode(&self) -> Outcome {
        let (beta, gamma) = match self.scn.model {
            CourseModel::MarkovSir { beta, gamma } => (beta, gamma),
            _ => return Err(Error::InvalidArgument("ODE reduction needs a Markovian SIR model".into())),
        };
        let start = Instant::now();
        let sol = self.fine()?;
        let secs = start.elapsed().as_secs_f64();
        let ode = sir_ode_s(beta, gamma, &self.scn.c, &self.scn.ic, sol.dt, sol.steps());
        let err = sol.s.iter().zip(&ode).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((
            vec![
                self.check("sup |S - S_ode|", err, 1e-3, 0.0, sol.steps() + 1),
                self.check("solve seconds", secs, 10.0, 0.0, 1),
            ],
            vec![format!("dt = {}, T = {}", sol.dt, self.scn.horizon)],
        ))
    }

    fn marching_vs_picard(&self) -> Outcome {
        let sol = self.fine()?;
        let alpha = self.scn.alpha.unwrap_or(0.0);
        let pic = picard_delay(&self.scn.tau, &self.scn.c, &self.scn.ic, self.scn.horizon, sol.dt, alpha, 1e-13, 2000)?;
        let err = sol.big_b.iter().zip(&pic.big_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((
            vec![self.check("sup |B_march - B_picard|", err, 1e-6, 0.0, sol.steps() + 1)],
            vec![format!(
                "dt = {}, {} Picard iterations, last weighted increment {:.2e} (gamma = {})",
                sol.dt, pic.iterations, pic.last_increment, pic.gamma
            )],
        ))
    }

    fn lln<'a>(&'a self, scn: &Scenario, batch: impl FnOnce() -> Result<&'a Vec<ReplicaSummary>>) -> Outcome {
        let start = Instant::now();
        let batch = batch()?;
        let secs = start.elapsed().as_secs_f64();
        let devs: Vec<f64> = batch.iter().map(|r| r.sup_deviation).collect();
        let within = devs.iter().filter(|d| **d <= 0.02).count();
        let need = (scn.replicas * 9).div_ceil(10);
        let (m, se) = mean_se(&devs);
        Ok((
            vec![
                self.check("replicas with sup deviation > 0.02", (scn.replicas - within) as f64, (scn.replicas - need) as f64, 0.0, scn.replicas),
                self.check("batch seconds", secs, 120.0, 0.0, scn.replicas),
            ],
            vec![format!(
                "N = {}, {} replicas, mean sup deviation {:.4} (SE {:.4}), max {:.4}",
                scn.population,
                scn.replicas,
                m,
                se,
                devs.iter().copied().fold(0.0, f64::max)
            )],
        ))
    }

    fn tree_dual(&self, scn: &Scenario, sol: Result<&LimitSolution>) -> Outcome {
        let sol = sol?;
        let start = Instant::now();
        let ts = [2.0, 5.0, 10.0];
        let p = TreeParams::new(&scn.tau, &scn.ic, &scn.c, 10.0)?.with_node_cap(scn.node_cap);
        let est = estimate_b(&p, scn.ic.s0(), &ts, scn.samples, rng::derive(scn.seed, rng::tag::VALIDATE, &[4]))?;
        let secs = start.elapsed().as_secs_f64();
        let mut checks = Vec::new();
        let mut notes = Vec::new();
        for (j, &t) in ts.iter().enumerate() {
            let b = sol.big_b_at(t)?;
            let z = (est.b_hat[j] - b).abs() / est.se[j];
            checks.push(self.check(format!("|B_hat({t}) - B| / SE"), z, 3.0, est.se[j], est.n));
            notes.push(format!("t = {t}: B_hat = {:.6} +- {:.6}, B = {:.6}", est.b_hat[j], est.se[j], b));
        }
        checks.push(self.check("tree seconds", secs, 60.0, 0.0, est.n));
        Ok((checks, notes))
    }

    fn final_size(&self, scn: &Scenario, sol: Result<&LimitSolution>, batch: Result<&Vec<ReplicaSummary>>) -> Outcome {
        let sol = sol?;
        let fixed = match scn.c.constant_value() {
            Some(c) => final_size(scn.ic.r0_bar, scn.tau.r0(), scn.ic.i0, c)?,
            None => final_size_after(sol)?,
        };
        let fractions: Vec<f64> = batch?.iter().map(|r| r.final_fraction).collect();
        let (m, se) = mean_se(&fractions);
        let solver_total = sol.big_b_at(scn.horizon)? + scn.ic.i0;
        let mut notes = vec![format!(
            "fixed point {fixed:.6}; simulated {m:.6} +- {se:.6} over {} replicas; solver B(T) + I0 = {solver_total:.6}",
            fractions.len()
        )];
        let tail = sol.b_at(scn.horizon)?;
        if tail > 1e-4 {
            notes.push(format!("incidence at T is still {tail:.3e}: the epidemic has not finished by T = {}", scn.horizon));
            let long = solve_delay(&scn.tau, &scn.c, &scn.ic, 20.0 * scn.horizon, CHAIN_DT)?;
            let h = long.horizon();
            notes.push(format!(
                "extended horizon T = {h}: solver B(T) + I0 = {:.6}, |diff| to fixed point {:.2e}",
                long.big_b_at(h)? + scn.ic.i0,
                (long.big_b_at(h)? + scn.ic.i0 - fixed).abs()
            ));
        }
        Ok((
            vec![
                self.check("|simulated - fixed point| / SE", (m - fixed).abs() / se, 3.0, se, fractions.len()),
                self.check("|B(T) + I0 - fixed point|", (solver_total - fixed).abs(), 1e-3, 0.0, 1),
            ],
            notes,
        ))
    }

    fn geodesic_oracle(&self) -> Outcome {
        let mut small = self.scn.clone();
        small.set_i0(0.25)?;
        let horizon = 8.0;
        let hetero = heterogeneous_contact_rate();
        let seed = rng::derive(self.scn.seed, rng::tag::VALIDATE, &[6]);
        let results: Vec<(usize, usize)> = (0..LOCAL_INSTANCES as u64)
            .into_par_iter()
            .map(|i| {
                let n = 6 + (i as usize % 7);
                let c = if i % 2 == 0 { &small.c } else { &hetero };
                let out = simulate(&small.model, n, c, &small.ic, horizon, seed, i, &SimOptions::default())?;
                let g = InfectionGraph::build(&small.model, n, &small.ic, horizon, seed, i, &InitialDraw::Bernoulli)?;
                let oracle = g.brute_force_sigma(c);
                let mismatches = out.individuals.iter().zip(&oracle).filter(|(p, o)| p.sigma != **o).count();
                Ok((mismatches, g.edge_count()))
            })
            .collect::<Result<_>>()?;
        let mismatches: usize = results.iter().map(|r| r.0).sum();
        let max_edges = results.iter().map(|r| r.1).max().unwrap_or(0);
        Ok((
            vec![
                self.check("individuals with sigma != oracle", mismatches as f64, 0.0, 0.0, LOCAL_INSTANCES),
                self.check("max contacts per instance", max_edges as f64, 30.0, 0.0, LOCAL_INSTANCES),
            ],
            vec![format!("{LOCAL_INSTANCES} instances, N in 6..=12, I0 = 0.25, T = {horizon}, constant and piecewise c")],
        ))
    }

    /// Infector infection time of individuals infected in `[t, t + delta]`:
    /// tree sampler, quadrature of the spinal density, h-chain.
    fn spinal_law(&self) -> Outcome {
        let (t, delta) = (5.0, 1.0);
        let (lo, hi, bins) = (-6.0, 6.0, 48);
        let sol = self.fine()?;
        let p = TreeParams::new(&self.scn.tau, &self.scn.ic, &self.scn.c, t + delta)?.with_node_cap(self.scn.node_cap);
        let cond = conditioned_first_step(&p, t, delta, TREE_CONDITIONING_SAMPLES, rng::derive(self.scn.seed, rng::tag::VALIDATE, &[7]))?;
        let tree = Histogram::from_samples(&cond.first_steps, lo, hi, bins);
        let mass = sol.big_b_at(t + delta)? - sol.big_b_at(t)?;
        let density = |y: f64| spinal_density(sol, y, t, delta) / mass;
        let exact = Histogram::from_density(density, lo, hi, bins);
        let chains = self.window_h_chains(t, t + delta, 7)?;
        let firsts: Vec<f64> = chains.iter().map(|c| c[1]).collect();
        let hchain = Histogram::from_samples(&firsts, lo, hi, bins);
        let n = cond.first_steps.len();
        Ok((
            vec![
                self.check("1e4 / conditioned samples", 1e4 / n as f64, 1.0, 0.0, cond.samples),
                self.check("L1(tree, quadrature)", l1_histogram_distance(&tree, &exact)?, 0.05, 0.0, n),
                self.check("L1(tree, h-chain)", l1_histogram_distance(&tree, &hchain)?, 0.05, 0.0, n),
            ],
            vec![format!(
                "window [{t}, {}], {n} conditioned of {} tree samples, {} h-chains, quadrature mass {:.6}",
                t + delta,
                cond.samples,
                firsts.len(),
                exact.mass()
            )],
        ))
    }

    /// Times of h-chains started at points drawn with density `b` on `[t0, t1]`.
    fn window_h_chains(&self, t0: f64, t1: f64, key: u64) -> Result<Vec<Vec<f64>>> {
        let sol = self.coarse()?;
        h_chains_in_window(sol, t0, t1, H_CHAIN_SAMPLES, rng::derive(self.scn.seed, rng::tag::VALIDATE, &[key]))
    }

    fn martingale(&self) -> Outcome {
        let sol = self.coarse()?;
        let alpha = self.scn.alpha.ok_or(Error::InvalidArgument("no Malthusian parameter".into()))?;
        let renewal = RenewalSampler::new(&self.scn.tau, alpha)?;
        let t = 5.0;
        let rep = martingale_diagnostic(t, sol, &renewal, Survival::Limit(sol), CHAIN_SAMPLES, 10, rng::derive(self.scn.seed, rng::tag::VALIDATE, &[8]))?;
        let mut checks = Vec::new();
        for (k, (m, se)) in rep.means.iter().zip(&rep.se).enumerate() {
            // M_0 is deterministic
            let tol = 3.0 * se + 1e-12 * rep.target;
            checks.push(self.check(format!("|mean M_{k} - target|"), (m - rep.target).abs(), tol, *se, rep.n));
        }
        Ok((checks, vec![format!("t = {t}, target b(t) exp(-alpha t) = {:.6e}, worst z {:.2}", rep.target, rep.worst_z())]))
    }

    fn survival(&self) -> Outcome {
        let sol = self.coarse()?;
        let alpha = self.scn.alpha.ok_or(Error::InvalidArgument("no Malthusian parameter".into()))?;
        let renewal = RenewalSampler::new(&self.scn.tau, alpha)?;
        let mut checks = Vec::new();
        let mut notes = Vec::new();
        for (j, t) in [2.0, 5.0, 8.0].into_iter().enumerate() {
            let rep = survival_representation_check(t, sol, &renewal, CHAIN_SAMPLES, rng::derive(self.scn.seed, rng::tag::VALIDATE, &[9, j as u64]))?;
            checks.push(self.check(format!("|b({t}) - I0 alpha e^(alpha t) P|"), rep.scaled_error(), rep.tolerance, rep.se, rep.n));
            notes.push(rep.normalization_note());
        }
        Ok((checks, notes))
    }

    fn backward_generation_time(&self) -> Outcome {
        let mut lin = self.scn.clone();
        lin.set_i0(1e-3)?;
        lin.c = ContactRate::constant(1.0)?;
        let alpha = lin.alpha.ok_or(Error::InvalidArgument("no Malthusian parameter".into()))?;
        let sol = solve_delay(&lin.tau, &lin.c, &lin.ic, 3.0, CHAIN_DT)?;
        let chains = h_chains_in_window(&sol, 0.0, 3.0, H_CHAIN_SAMPLES, rng::derive(self.scn.seed, rng::tag::VALIDATE, &[10]))?;
        let incr: Vec<f64> = chains.iter().flat_map(|c| c.windows(2).map(|w| w[0] - w[1]).collect::<Vec<_>>()).collect();
        let (lo, hi, bins) = (0.0, 8.0, 32);
        let emp = Histogram::from_samples(&incr, lo, hi, bins);
        let tau = lin.tau.clone();
        let exact = Histogram::from_density(|u| (-alpha * u).exp() * tau.eval(u), lo, hi, bins);
        Ok((
            vec![self.check("L1(h-chain increments, e^(-alpha u) tau(u))", l1_histogram_distance(&emp, &exact)?, 0.05, 0.0, incr.len())],
            vec![format!("I0 = 1e-3, starts with density b on (0, 3], {} chains, {} increments", chains.len(), incr.len())],
        ))
    }

    fn historical(&self) -> Outcome {
        let (t0, t1) = HISTORICAL_WINDOW;
        let batch = self.batch()?;
        let traced: Vec<f64> = batch.iter().flat_map(|r| r.window_increments.iter().copied()).collect();
        let chains = self.window_h_chains(t0, t1, 11)?;
        let hchain: Vec<f64> = chains.iter().map(|c| c[0] - c[1]).collect();
        let (lo, hi, bins) = (0.0, 10.0, 40);
        let d = l1_histogram_distance(&Histogram::from_samples(&traced, lo, hi, bins), &Histogram::from_samples(&hchain, lo, hi, bins))?;
        Ok((
            vec![self.check("L1(traced first increments, h-chain)", d, 0.05, 0.0, traced.len())],
            vec![format!("window [{t0}, {t1}), {} traced individuals over {} replicas, {} h-chains", traced.len(), batch.len(), hchain.len())],
        ))
    }

    fn heterogeneous(&self) -> Outcome {
        let mut checks = Vec::new();
        let mut notes = Vec::new();
        for (label, out) in [
            ("LLN", self.lln(&self.hetero, || self.hetero_batch())),
            ("tree", self.tree_dual(&self.hetero, self.hetero_fine())),
            ("final size", self.final_size(&self.hetero, self.hetero_fine(), self.hetero_batch())),
        ] {
            let (c, n) = out?;
            checks.extend(c.into_iter().map(|mut c| {
                c.name = format!("{label}: {}", c.name);
                c
            }));
            notes.extend(n.into_iter().map(|n| format!("{label}: {n}")));
        }
        Ok((checks, notes))
    }
}

type Outcome = Result<(Vec<ComparisonReport>, Vec<String>)>;

/// Runs `scn.replicas` forward simulations and keeps only the statistics
/// the suite needs.
pub fn forward_batch(scn: &Scenario, sol: &LimitSolution) -> Result<Vec<ReplicaSummary>> {
    let i = scn.model.compartments().index("I")?;
    let ks = reporting_indices(scn.horizon, sol.dt, REPORTING_POINTS);
    let times: Vec<f64> = ks.iter().map(|&k| sol.time(k)).collect();
    let limit = compartment_values(sol, &scn.model, i, &ks)?;
    let (t0, t1) = HISTORICAL_WINDOW;
    (0..scn.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let out = simulate(&scn.model, scn.population, &scn.c, &scn.ic, scn.horizon, scn.seed, r, &SimOptions::default())?;
            let y = compartment_series(&out, i, &times)?;
            Ok(ReplicaSummary {
                sup_deviation: y.iter().zip(&limit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                final_fraction: infected_fraction(&out, scn.horizon),
                window_increments: first_increments_in_window(&out, t0, t1),
            })
        })
        .collect()
}

/// h-chains whose start has density proportional to `b` on `[t0, t1]`.
pub fn h_chains_in_window(sol: &LimitSolution, t0: f64, t1: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let k0 = (t0 / sol.dt).round() as usize;
    let k1 = ((t1 / sol.dt).round() as usize).min(sol.steps());
    let table = InverseCdfTable::new(sol.time(k0), sol.dt, sol.b[k0..=k1].to_vec())?;
    Ok(h_chains(sol, n, seed, |r| table.sample(r).max(sol.dt * 1e-6))?.into_iter().map(|c| c.times).collect())
}

/// `int_t^{t+delta} c(s) S(s) b(y) tau(s - y) ds` by Simpson's rule, with
/// `b(y) = I0 g(-y)` for `y < 0`.
pub fn spinal_density(sol: &LimitSolution, y: f64, t: f64, delta: f64) -> f64 {
    let lo = t.max(y);
    let hi = t + delta;
    let b = sol.b_at(y).unwrap_or(0.0);
    if b == 0.0 || lo >= hi {
        return 0.0;
    }
    let m = 64;
    let h = (hi - lo) / m as f64;
    let f = |s: f64| sol.c.eval(s) * sol.s_at(s).unwrap_or(0.0) * sol.tau.eval(s - y);
    let mut acc = f(lo) + f(hi);
    for j in 1..m {
        acc += if j % 2 == 1 { 4.0 } else { 2.0 } * f(lo + j as f64 * h);
    }
    b * acc * h / 3.0
}

/// RK4 for `S' = -beta c S I`, `I' = beta c S I - gamma I` with the
/// initially infected still infectious at time 0 in `I(0)`.
pub fn sir_ode_s(beta: f64, gamma: f64, c: &ContactRate, ic: &InitialCondition, dt: f64, steps: usize) -> Vec<f64> {
    // P(still infectious at age Z) = int g(z) exp(-gamma z) dz, trapezoid
    let h = ic.g.resolution() / 10.0;
    let n = (ic.g.effective_support() / h).ceil() as usize;
    let still = (0..=n)
        .map(|j| {
            let z = j as f64 * h;
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            w * ic.g.eval(z) * (-gamma * z).exp()
        })
        .sum::<f64>()
        * h;
    let f = |t: f64, s: f64, i: f64| {
        let inf = beta * c.eval(t) * s * i;
        (-inf, inf - gamma * i)
    };
    let (mut s, mut i) = (ic.s0(), ic.i0 * still);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s);
    for k in 0..steps {
        let t = k as f64 * dt;
        let (a1, b1) = f(t, s, i);
        let (a2, b2) = f(t + 0.5 * dt, s + 0.5 * dt * a1, i + 0.5 * dt * b1);
        let (a3, b3) = f(t + 0.5 * dt, s + 0.5 * dt * a2, i + 0.5 * dt * b2);
        let (a4, b4) = f(t + dt, s + dt * a3, i + dt * b3);
        s += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        i += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ode_oracle_agrees_with_solver_at_coarse_step() {
        let scn = Scenario::reference().unwrap();
        let sol = solve_delay(&scn.tau, &scn.c, &scn.ic, 10.0, 0.01).unwrap();
        let ode = sir_ode_s(1.5, 1.0, &scn.c, &scn.ic, 0.01, sol.steps());
        let err = sol.s.iter().zip(&ode).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn ode_oracle_without_transmission_keeps_s() {
        let scn = Scenario::reference().unwrap();
        let s = sir_ode_s(0.0, 1.0, &ContactRate::constant(1.0).unwrap(), &scn.ic, 0.1, 10);
        assert!(s.iter().all(|x| *x == scn.ic.s0()));
    }

    #[test]
    fn spinal_density_integrates_to_window_incidence() {
        let scn = Scenario::reference().unwrap();
        let sol = solve_delay(&scn.tau, &scn.c, &scn.ic, 6.0, 0.01).unwrap();
        let h = Histogram::from_density(|y| spinal_density(&sol, y, 5.0, 1.0), -15.0, 6.0, 84);
        let mass = sol.big_b_at(6.0).unwrap() - sol.big_b_at(5.0).unwrap();
        assert!((h.mass() / mass - 1.0).abs() < 1e-4, "{} vs {mass}", h.mass());
    }

    #[test]
    fn unknown_criterion_fails() {
        let suite = Suite::new(Scenario::reference().unwrap());
        let r = suite.run(13);
        assert!(!r.pass);
        assert!(r.summary_line().contains("FAIL"));
    }
}
