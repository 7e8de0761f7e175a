//! Disease courses: the i.i.d. pair of an infection point process (ages at
//! which contacts are made) and a compartment trajectory.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::kernels::IntensityKernel;

/// Finite set of compartments with an acyclic accessibility relation.
#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentSet {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl CompartmentSet {
    pub fn new(names: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        if edges.iter().any(|&(i, j)| i >= names.len() || j >= names.len()) {
            return Err(Error::InvalidArgument("compartment edge out of range".into()));
        }
        let set = Self { names, edges };
        set.topological_order()?;
        Ok(set)
    }

    /// Linear chain `names[0] -> names[1] -> ...`.
    pub fn chain(names: &[&str]) -> Self {
        let edges = (1..names.len()).map(|i| (i - 1, i)).collect();
        Self { names: names.iter().map(|s| s.to_string()).collect(), edges }
    }

    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.names.len();
        let mut indeg = vec![0usize; n];
        for &(_, j) in &self.edges {
            indeg[j] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for &(a, b) in &self.edges {
                if a == i {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        ready.push(b);
                    }
                }
            }
        }
        if order.len() != n {
            return Err(Error::CyclicCompartments);
        }
        Ok(order)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCompartment(name.to_string()))
    }

    /// Whether `j` is reachable from `i` (or `i == j`).
    pub fn reachable(&self, i: usize, j: usize) -> bool {
        let mut seen = vec![false; self.names.len()];
        let mut stack = vec![i];
        while let Some(k) = stack.pop() {
            if k == j {
                return true;
            }
            if std::mem::replace(&mut seen[k], true) {
                continue;
            }
            stack.extend(self.edges.iter().filter(|e| e.0 == k).map(|e| e.1));
        }
        false
    }
}

/// One individual's realization: contact ages and compartment path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiseaseCourse {
    /// Strictly increasing, nonnegative.
    pub atoms: Vec<f64>,
    /// `(entry age, compartment)`, starting at age 0.
    pub path: Vec<(f64, usize)>,
}

impl DiseaseCourse {
    pub fn compartment_at(&self, age: f64) -> usize {
        let k = self.path.partition_point(|&(a, _)| a <= age);
        self.path[k.saturating_sub(1)].1
    }

    /// Age at which the course leaves `compartment` (infinite if never).
    pub fn exit_age(&self, compartment: usize) -> Option<f64> {
        let k = self.path.iter().position(|p| p.1 == compartment)?;
        Some(self.path.get(k + 1).map_or(f64::INFINITY, |p| p.0))
    }

    pub fn is_valid(&self, compartments: &CompartmentSet) -> bool {
        let atoms_ok = self.atoms.first().is_none_or(|a| *a >= 0.0) && self.atoms.windows(2).all(|w| w[0] < w[1]);
        let path_ok = self.path.first().is_some_and(|p| p.0 == 0.0)
            && self.path.windows(2).all(|w| w[0].0 < w[1].0 && compartments.reachable(w[0].1, w[1].1) && w[0].1 != w[1].1)
            && self.path.iter().all(|p| p.1 < compartments.len());
        atoms_ok && path_ok
    }
}

/// Linear life cycle with exponential sojourns; the last stage absorbs.
#[derive(Debug, Clone, PartialEq)]
pub struct StageChain {
    names: Vec<String>,
    rates: Vec<f64>,
}

impl StageChain {
    /// `rates` has one entry per non-terminal stage.
    pub fn new(names: Vec<String>, rates: Vec<f64>) -> Result<Self> {
        if names.is_empty() || rates.len() + 1 != names.len() {
            return Err(Error::InvalidArgument("stage chain needs one rate per non-terminal stage".into()));
        }
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument("stage exit rates must be positive".into()));
        }
        Ok(Self { names, rates })
    }

    pub fn single(name: &str) -> Self {
        Self { names: vec![name.to_string()], rates: vec![] }
    }

    pub fn compartments(&self) -> CompartmentSet {
        let names: Vec<&str> = self.names.iter().map(String::as_str).collect();
        CompartmentSet::chain(&names)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(f64, usize)> {
        let mut path = vec![(0.0, 0)];
        let mut age = 0.0;
        for (i, r) in self.rates.iter().enumerate() {
            age += exp_sample(rng, *r);
            path.push((age, i + 1));
        }
        path
    }

    fn propagator(&self, h: f64) -> Vec<Vec<f64>> {
        // exp(M h) by uniformization in sub-steps with rate * dt <= 0.5
        let m = self.names.len();
        let lam = self.rates.iter().copied().fold(0.0, f64::max);
        let mut e = identity(m);
        if lam == 0.0 || h == 0.0 {
            return e;
        }
        let n_sub = (lam * h / 0.5).ceil().max(1.0) as usize;
        let dt = h / n_sub as f64;
        let x = lam * dt;
        // P = I + M / lam, column convention p_new = P p
        let mut p = identity(m);
        for (i, r) in self.rates.iter().enumerate() {
            p[i][i] -= r / lam;
            p[i + 1][i] += r / lam;
        }
        let mut step = vec![vec![0.0; m]; m];
        let mut term = identity(m);
        let mut weight = (-x).exp();
        for n in 0..40 {
            for a in 0..m {
                for b in 0..m {
                    step[a][b] += weight * term[a][b];
                }
            }
            term = matmul(&p, &term);
            weight *= x / (n + 1) as f64;
        }
        for _ in 0..n_sub {
            e = matmul(&step, &e);
        }
        e
    }

    /// `P(X(a) = i)` for all `i`.
    pub fn marginals(&self, a: f64) -> Vec<f64> {
        let e = self.propagator(a.max(0.0));
        (0..self.names.len()).map(|i| e[i][0]).collect()
    }

    /// Marginals on `j * step`, `j < n`; row `j` holds the vector at age `j * step`.
    pub fn marginal_table(&self, step: f64, n: usize) -> Vec<Vec<f64>> {
        let e = self.propagator(step);
        let m = self.names.len();
        let mut p = vec![0.0; m];
        p[0] = 1.0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(p.clone());
            p = (0..m).map(|a| (0..m).map(|b| e[a][b] * p[b]).sum()).collect();
        }
        out
    }
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.len();
    (0..m).map(|i| (0..m).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

#[inline]
pub(crate) fn exp_sample<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// User-supplied course generator; only joint sampling is required.
pub trait CourseSampler: fmt::Debug + Send + Sync {
    fn compartments(&self) -> CompartmentSet;
    fn sample(&self, horizon: f64, rng: &mut dyn RngCore) -> DiseaseCourse;
    /// Declared mean intensity, if known.
    fn kernel(&self) -> Option<IntensityKernel> {
        None
    }
}

#[derive(Debug, Clone)]
pub enum CourseModel {
    /// Inhomogeneous Poisson contacts with intensity `tau`, life cycle
    /// independent of the contacts.
    Poisson { tau: IntensityKernel, life_cycle: StageChain },
    /// Infectious period `Exp(gamma)` with Poisson(`beta`) contacts during it.
    MarkovSir { beta: f64, gamma: f64 },
    /// Latency `Exp(lambda)`, then infectious `Exp(gamma)` with Poisson(`beta`)
    /// contacts.
    MarkovSeir { beta: f64, lambda: f64, gamma: f64 },
    Custom(Arc<dyn CourseSampler>),
}

impl CourseModel {
    pub fn markov_sir(beta: f64, gamma: f64) -> Result<Self> {
        IntensityKernel::exponential(beta, gamma)?;
        Ok(Self::MarkovSir { beta, gamma })
    }

    pub fn markov_seir(beta: f64, lambda: f64, gamma: f64) -> Result<Self> {
        IntensityKernel::seir(beta, lambda, gamma)?;
        Ok(Self::MarkovSeir { beta, lambda, gamma })
    }

    pub fn poisson(tau: IntensityKernel, life_cycle: StageChain) -> Result<Self> {
        tau.validate()?;
        Ok(Self::Poisson { tau, life_cycle })
    }

    pub fn compartments(&self) -> CompartmentSet {
        match self {
            Self::Poisson { life_cycle, .. } => life_cycle.compartments(),
            Self::MarkovSir { .. } => CompartmentSet::chain(&["I", "R"]),
            Self::MarkovSeir { .. } => CompartmentSet::chain(&["E", "I", "R"]),
            Self::Custom(c) => c.compartments(),
        }
    }

    /// The model's declared intensity `tau`.
    pub fn kernel(&self) -> Result<IntensityKernel> {
        match self {
            Self::Poisson { tau, .. } => Ok(tau.clone()),
            Self::MarkovSir { beta, gamma } => IntensityKernel::exponential(*beta, *gamma),
            Self::MarkovSeir { beta, lambda, gamma } => IntensityKernel::seir(*beta, *lambda, *gamma),
            Self::Custom(c) => c.kernel().ok_or(Error::MarginalUnavailable),
        }
    }

    fn stage_chain(&self) -> Option<StageChain> {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        match self {
            Self::Poisson { life_cycle, .. } => Some(life_cycle.clone()),
            Self::MarkovSir { gamma, .. } => Some(StageChain { names: names(&["I", "R"]), rates: vec![*gamma] }),
            Self::MarkovSeir { lambda, gamma, .. } => {
                Some(StageChain { names: names(&["E", "I", "R"]), rates: vec![*lambda, *gamma] })
            }
            Self::Custom(_) => None,
        }
    }

    /// Default Palm rejection window, `1e-2` mean generation times.
    pub fn palm_window(&self) -> f64 {
        1e-2 * self.kernel().ok().and_then(|k| k.mean_generation_time()).unwrap_or(1.0)
    }

    /// Analytic `p(a, i) = P(X(a) = i)`.
    pub fn marginal_p(&self, a: f64, compartment: usize) -> Result<f64> {
        let chain = self.stage_chain().ok_or(Error::MarginalUnavailable)?;
        if compartment >= chain.names.len() {
            return Err(Error::UnknownCompartment(compartment.to_string()));
        }
        Ok(chain.marginals(a)[compartment])
    }

    /// `p(j * step, i)` for `j < n`; row `j` indexes ages.
    pub fn marginal_table(&self, step: f64, n: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.stage_chain().ok_or(Error::MarginalUnavailable)?.marginal_table(step, n))
    }
}

/// One i.i.d. course with contacts restricted to ages in `[0, horizon]`.
pub fn sample_course<R: Rng + ?Sized>(model: &CourseModel, horizon: f64, rng: &mut R) -> DiseaseCourse {
    match model {
        CourseModel::Poisson { tau, life_cycle } => {
            let atoms = poisson_atoms(tau, horizon, rng);
            DiseaseCourse { atoms, path: life_cycle.sample(rng) }
        }
        CourseModel::MarkovSir { beta, gamma } => {
            let d = exp_sample(rng, *gamma);
            let atoms = homogeneous_atoms(*beta, 0.0, d.min(horizon), rng);
            DiseaseCourse { atoms, path: vec![(0.0, 0), (d, 1)] }
        }
        CourseModel::MarkovSeir { beta, lambda, gamma } => {
            let e = exp_sample(rng, *lambda);
            let d = e + exp_sample(rng, *gamma);
            let atoms = homogeneous_atoms(*beta, e.min(horizon), d.min(horizon), rng);
            DiseaseCourse { atoms, path: vec![(0.0, 0), (e, 1), (d, 2)] }
        }
        CourseModel::Custom(c) => {
            let mut adapter = DynRng(rng);
            c.sample(horizon, &mut adapter)
        }
    }
}

struct DynRng<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

fn homogeneous_atoms<R: Rng + ?Sized>(rate: f64, from: f64, to: f64, rng: &mut R) -> Vec<f64> {
    let mut atoms = Vec::new();
    if rate <= 0.0 {
        return atoms;
    }
    let mut t = from;
    loop {
        t += exp_sample(rng, rate);
        if t >= to {
            return atoms;
        }
        atoms.push(t);
    }
}

/// Thinning of a homogeneous process at the kernel's upper bound.
fn poisson_atoms<R: Rng + ?Sized>(tau: &IntensityKernel, horizon: f64, rng: &mut R) -> Vec<f64> {
    let end = tau.support_end().map_or(horizon, |e| e.min(horizon));
    let bound = tau.upper_bound();
    let mut atoms = Vec::new();
    if bound <= 0.0 || end <= 0.0 {
        return atoms;
    }
    let mut t = 0.0;
    loop {
        t += exp_sample(rng, bound);
        if t > end {
            return atoms;
        }
        if rng.random::<f64>() * bound < tau.eval(t) {
            atoms.push(t);
        }
    }
}

/// Histogram estimate of `tau` with per-bin standard errors.
#[derive(Debug, Clone)]
pub struct EmpiricalTau {
    pub step: f64,
    /// Bin `j` covers `[j step, (j+1) step)`.
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
}

impl EmpiricalTau {
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.step
    }

    /// Tabulated kernel with node values averaged from adjacent bins.
    pub fn to_kernel(&self) -> Result<IntensityKernel> {
        let v = &self.values;
        let mut nodes = Vec::with_capacity(v.len() + 1);
        nodes.push(v[0]);
        for w in v.windows(2) {
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(*v.last().unwrap());
        IntensityKernel::tabulated(self.step, nodes)
    }
}

pub fn empirical_tau<R: Rng + ?Sized>(model: &CourseModel, n: usize, step: f64, a_max: f64, rng: &mut R) -> Result<EmpiricalTau> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("empirical tau needs n >= 1000 (got {n})")));
    }
    let bins = (a_max / step).ceil() as usize;
    let mut sum = vec![0.0; bins];
    let mut sum_sq = vec![0.0; bins];
    let mut local = vec![0u32; bins];
    for _ in 0..n {
        let course = sample_course(model, a_max, rng);
        let mut touched = Vec::new();
        for &a in &course.atoms {
            let b = (a / step) as usize;
            if b < bins {
                if local[b] == 0 {
                    touched.push(b);
                }
                local[b] += 1;
            }
        }
        for b in touched {
            let k = local[b] as f64;
            sum[b] += k;
            sum_sq[b] += k * k;
            local[b] = 0;
        }
    }
    let nf = n as f64;
    let values = sum.iter().map(|s| s / (nf * step)).collect();
    let se = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| {
            let mean = s / nf;
            let var = (q / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            (var / nf).sqrt() / step
        })
        .collect();
    Ok(EmpiricalTau { step, values, se, n })
}

/// Maximum proposals for the Palm rejection sampler.
pub const PALM_MAX_PROPOSALS: usize = 10_000_000;

/// Draw from the Palm law of the course at contact age `a`.
///
/// Exact for Poisson courses (independent atoms plus a forced atom at `a`).
/// Otherwise courses are proposed until one has a contact within
/// `[a - window/2, a + window/2]`; the nearest such contact is moved to `a`.
/// The window introduces an `O(window)` bias.
pub fn sample_palm_course<R: Rng + ?Sized>(
    model: &CourseModel,
    a: f64,
    window: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<DiseaseCourse> {
    if let Ok(k) = model.kernel() {
        if !(k.eval(a) > 0.0) {
            return Err(Error::PalmUndefined(a));
        }
    }
    if let CourseModel::Poisson { .. } = model {
        let mut course = sample_course(model, horizon.max(a), rng);
        let k = course.atoms.partition_point(|&x| x < a);
        course.atoms.insert(k, a);
        return Ok(course);
    }
    let (lo, hi) = (a - 0.5 * window, a + 0.5 * window);
    for _ in 0..PALM_MAX_PROPOSALS {
        let mut course = sample_course(model, horizon.max(hi), rng);
        let start = course.atoms.partition_point(|&x| x < lo);
        let stop = course.atoms.partition_point(|&x| x <= hi);
        if start == stop {
            continue;
        }
        let k = (start..stop)
            .min_by(|&i, &j| (course.atoms[i] - a).abs().total_cmp(&(course.atoms[j] - a).abs()))
            .unwrap();
        course.atoms[k] = a;
        if course.atoms.windows(2).all(|w| w[0] < w[1]) {
            return Ok(course);
        }
    }
    Err(Error::PalmExhausted(PALM_MAX_PROPOSALS))
}

/// Poisson draw with `mean >= 0`.
#[inline]
pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Grid of `p(a, i)` shared with the solver.
pub fn marginal_grid(model: &CourseModel, compartment: usize, step: f64, n: usize) -> Result<GridFn> {
    let table = model.marginal_table(step, n)?;
    if compartment >= model.compartments().len() {
        return Err(Error::UnknownCompartment(compartment.to_string()));
    }
    Ok(GridFn { origin: 0.0, step, values: table.iter().map(|row| row[compartment]).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sir() -> CourseModel {
        CourseModel::markov_sir(1.5, 1.0).unwrap()
    }

    #[test]
    fn sir_mean_atom_count_is_r0() {
        let mut r = rng::stream(1, rng::tag::COURSES, &[]);
        let n = 100_000;
        let counts: Vec<f64> = (0..n).map(|_| sample_course(&sir(), 100.0, &mut r).atoms.len() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.5).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn sir_atoms_within_infectious_period() {
        let mut r = rng::stream(2, rng::tag::COURSES, &[]);
        let set = sir().compartments();
        for _ in 0..10_000 {
            let c = sample_course(&sir(), 100.0, &mut r);
            let rec = c.exit_age(0).unwrap();
            assert!(c.atoms.iter().all(|&a| a >= 0.0 && a < rec));
            assert!(c.is_valid(&set));
        }
    }

    #[test]
    fn every_model_yields_valid_courses() {
        let tau = IntensityKernel::tabulated(0.5, vec![0.0, 1.0, 2.0, 0.5, 0.0]).unwrap();
        let models = [
            sir(),
            CourseModel::markov_seir(0.9, 0.5, 0.3).unwrap(),
            CourseModel::poisson(tau, StageChain::new(vec!["I".into(), "R".into()], vec![0.7]).unwrap()).unwrap(),
        ];
        let mut r = rng::stream(3, rng::tag::COURSES, &[]);
        for m in &models {
            let set = m.compartments();
            for _ in 0..10_000 {
                assert!(sample_course(m, 50.0, &mut r).is_valid(&set));
            }
        }
    }

    #[test]
    fn zero_poisson_course_is_empty() {
        let m = CourseModel::poisson(IntensityKernel::zero(), StageChain::single("I")).unwrap();
        let mut r = rng::stream(4, rng::tag::COURSES, &[]);
        for _ in 0..100 {
            assert!(sample_course(&m, 10.0, &mut r).atoms.is_empty());
        }
    }

    #[test]
    fn marginal_closed_forms() {
        let sir = sir();
        let seir = CourseModel::markov_seir(0.9, 0.5, 0.3).unwrap();
        for a in [0.0, 0.5, 2.0, 7.3, 30.0] {
            assert!((sir.marginal_p(a, 0).unwrap() - (-a).exp()).abs() < 1e-12);
            let e = (-0.5 * a).exp();
            let i = 2.5 * ((-0.3 * a).exp() - e);
            assert!((seir.marginal_p(a, 0).unwrap() - e).abs() < 1e-12);
            assert!((seir.marginal_p(a, 1).unwrap() - i).abs() < 1e-12);
            let total: f64 = (0..3).map(|k| seir.marginal_p(a, k).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seir_marginal_against_monte_carlo() {
        let seir = CourseModel::markov_seir(0.9, 0.5, 0.3).unwrap();
        let mut r = rng::stream(5, rng::tag::COURSES, &[]);
        let n = 100_000;
        let a = 3.0;
        let hits = (0..n).filter(|_| sample_course(&seir, 1.0, &mut r).compartment_at(a) == 1).count();
        let p = hits as f64 / n as f64;
        let exact = seir.marginal_p(a, 1).unwrap();
        assert!((p - exact).abs() < 3.0 * (exact * (1.0 - exact) / n as f64).sqrt() + 1e-3);
    }

    #[test]
    fn marginal_table_matches_pointwise() {
        let seir = CourseModel::markov_seir(0.9, 0.5, 0.3).unwrap();
        let t = seir.marginal_table(0.01, 1001).unwrap();
        for j in [0, 17, 500, 1000] {
            for i in 0..3 {
                assert!((t[j][i] - seir.marginal_p(j as f64 * 0.01, i).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn custom_model_has_no_marginal() {
        #[derive(Debug)]
        struct Fixed;
        impl CourseSampler for Fixed {
            fn compartments(&self) -> CompartmentSet {
                CompartmentSet::chain(&["I"])
            }
            fn sample(&self, _h: f64, _rng: &mut dyn RngCore) -> DiseaseCourse {
                DiseaseCourse { atoms: vec![1.0], path: vec![(0.0, 0)] }
            }
        }
        let m = CourseModel::Custom(Arc::new(Fixed));
        assert!(matches!(m.marginal_p(1.0, 0), Err(Error::MarginalUnavailable)));
        let mut r = rng::stream(6, rng::tag::COURSES, &[]);
        let emp = empirical_tau(&m, 1000, 0.5, 3.0, &mut r).unwrap();
        assert!((emp.values[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_tau_consistency_and_scaling() {
        let mut r = rng::stream(7, rng::tag::COURSES, &[]);
        let big = empirical_tau(&sir(), 100_000, 0.1, 6.0, &mut r).unwrap();
        let tau = sir().kernel().unwrap();
        let mut outside = 0;
        for j in 0..big.values.len() {
            let lo = j as f64 * big.step;
            let exact = (tau.cumulative(lo + big.step) - tau.cumulative(lo)) / big.step;
            if (big.values[j] - exact).abs() > 3.0 * big.se[j] {
                outside += 1;
            }
        }
        assert!(outside as f64 <= 0.01 * big.values.len() as f64 + 1.0, "{outside} bins outside 3 SE");
        let small = empirical_tau(&sir(), 1000, 0.1, 6.0, &mut r).unwrap();
        let ratio = small.se[..10].iter().sum::<f64>() / big.se[..10].iter().sum::<f64>();
        assert!((ratio - 10.0).abs() < 1.5, "SE ratio {ratio}");
    }

    #[test]
    fn empirical_tau_recovers_poisson_kernel() {
        let tau = IntensityKernel::tabulated(1.0, vec![0.5, 1.0, 0.0]).unwrap();
        let m = CourseModel::poisson(tau.clone(), StageChain::single("I")).unwrap();
        let mut r = rng::stream(8, rng::tag::COURSES, &[]);
        let emp = empirical_tau(&m, 50_000, 0.25, 2.0, &mut r).unwrap();
        for j in 0..emp.values.len() {
            let lo = j as f64 * 0.25;
            let exact = (tau.cumulative(lo + 0.25) - tau.cumulative(lo)) / 0.25;
            assert!((emp.values[j] - exact).abs() <= 4.0 * emp.se[j] + 1e-12, "bin {j}");
        }
    }

    #[test]
    fn palm_poisson_has_forced_atom() {
        let tau = IntensityKernel::exponential(1.5, 1.0).unwrap();
        let m = CourseModel::poisson(tau, StageChain::single("I")).unwrap();
        let mut r = rng::stream(9, rng::tag::COURSES, &[]);
        for _ in 0..1000 {
            let c = sample_palm_course(&m, 0.8, 0.01, 30.0, &mut r).unwrap();
            assert!(c.atoms.contains(&0.8));
        }
    }

    #[test]
    fn palm_sir_requires_infectiousness_and_biases_counts() {
        let mut r = rng::stream(10, rng::tag::COURSES, &[]);
        let delta = 1e-2;
        let n = 400;
        let mut total = 0.0;
        for _ in 0..n {
            let c = sample_palm_course(&sir(), 1.0, delta, 100.0, &mut r).unwrap();
            assert!(c.exit_age(0).unwrap() > 1.0 - delta / 2.0);
            assert!(c.atoms.contains(&1.0));
            total += c.atoms.len() as f64;
        }
        // unconditioned mean is 1.5; Palm at a=1 is 1 + 1.5 + 1.5 = 4 here
        assert!(total / n as f64 > 1.5 + 0.5);
    }

    #[test]
    fn palm_undefined_where_tau_vanishes() {
        let tau = IntensityKernel::tabulated(1.0, vec![1.0, 1.0]).unwrap();
        let m = CourseModel::poisson(tau, StageChain::single("I")).unwrap();
        let mut r = rng::stream(11, rng::tag::COURSES, &[]);
        assert!(matches!(sample_palm_course(&m, 3.0, 0.01, 10.0, &mut r), Err(Error::PalmUndefined(_))));
    }

    #[test]
    fn cyclic_compartments_rejected() {
        let names = vec!["A".to_string(), "B".to_string()];
        assert!(matches!(CompartmentSet::new(names, vec![(0, 1), (1, 0)]), Err(Error::CyclicCompartments)));
    }
}
