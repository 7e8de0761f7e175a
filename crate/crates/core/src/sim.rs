//! Event-driven simulation of the finite population.
//!
//! Individual `x` owns the random stream `(seed, replica, x)`. From it are
//! drawn, in order: the initial-infection indicator, the initial age `Z_x`
//! (initially infected only), the disease course, and a target and a
//! thinning mark `(U, s)` for every contact of the course. The infection
//! graph is therefore fixed by the seed, independent of the order in which
//! the event queue visits it, and [`InfectionGraph`] rebuilds it directly
//! for the brute-force geodesic check.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::courses::{sample_course, CompartmentSet, CourseModel, DiseaseCourse};
use crate::error::{Error, Result};
use crate::kernels::{ContactRate, DensitySampler, InitialCondition};
use crate::rng::{self, Stream};

/// How the initially infected set is chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialDraw {
    /// Independent `Bernoulli(I0)` per individual.
    #[default]
    Bernoulli,
    /// Exactly these individuals (the Bernoulli draw is still consumed).
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub record_events: bool,
    pub initial: InitialDraw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// Initial age; 0 unless initially infected.
    pub z: f64,
    /// Infection time: `-z` for the initially infected, `INFINITY` if never.
    pub sigma: f64,
    pub infector: Option<usize>,
    /// Index in the infector's course of the contact that infected us.
    pub via_atom: Option<usize>,
    pub course: Option<DiseaseCourse>,
}

impl Individual {
    pub fn is_initial(&self) -> bool {
        self.z > 0.0
    }

    pub fn is_infected_by(&self, t: f64) -> bool {
        self.sigma <= t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub time: f64,
    pub source: usize,
    pub target: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub n: usize,
    pub horizon: f64,
    pub seed: u64,
    pub replica: u64,
    pub compartments: CompartmentSet,
    pub individuals: Vec<Individual>,
    pub events: Vec<ContactEvent>,
}

/// Everything an individual contributes to the infection graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub initial: bool,
    pub z: f64,
    pub course: DiseaseCourse,
    /// `(target, s)` per atom of the course.
    pub marks: Vec<(usize, f64)>,
}

struct Draws<'a> {
    model: &'a CourseModel,
    g: DensitySampler,
    i0: f64,
    horizon: f64,
    n: usize,
    seed: u64,
    replica: u64,
}

impl Draws<'_> {
    fn stream(&self, x: usize) -> Stream {
        rng::stream(self.seed, rng::tag::SIM, &[self.replica, x as u64])
    }

    /// Initial status and age, leaving the stream positioned at the course.
    fn head(&self, forced: Option<bool>, r: &mut Stream) -> (bool, f64) {
        let bern = r.random::<f64>() < self.i0;
        let initial = forced.unwrap_or(bern);
        let z = if initial { self.g.sample(r).max(f64::MIN_POSITIVE) } else { 0.0 };
        (initial, z)
    }

    fn tail(&self, z: f64, r: &mut Stream) -> (DiseaseCourse, Vec<(usize, f64)>) {
        let course = sample_course(self.model, self.horizon + z, r);
        let marks = course.atoms.iter().map(|_| (r.random_range(0..self.n), r.random::<f64>())).collect();
        (course, marks)
    }
}

fn forced_flags(n: usize, initial: &InitialDraw) -> Result<Vec<Option<bool>>> {
    match initial {
        InitialDraw::Bernoulli => Ok(vec![None; n]),
        InitialDraw::Fixed(set) => {
            let mut v = vec![Some(false); n];
            for &x in set {
                *v.get_mut(x).ok_or_else(|| Error::InvalidArgument(format!("initial individual {x} >= N")))? = Some(true);
            }
            Ok(v)
        }
    }
}

#[derive(Debug, PartialEq)]
struct Pending {
    time: f64,
    source: usize,
    atom: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    // reversed: BinaryHeap pops the earliest (time, source, atom)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.source.cmp(&self.source))
            .then(other.atom.cmp(&self.atom))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs one replica up to `horizon`.
///
/// Contacts are processed in increasing `(time, source, atom)` order. A
/// contact of `x` at time `t` reaches the uniform target `U` and infects it
/// iff `U` is susceptible and `s <= c(t)`; self-contacts are rejected.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &CourseModel,
    n: usize,
    c: &ContactRate,
    ic: &InitialCondition,
    horizon: f64,
    seed: u64,
    replica: u64,
    opts: &SimOptions,
) -> Result<SimOutput> {
    if n == 0 {
        return Err(Error::InvalidArgument("population size must be positive".into()));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be finite")));
    }
    let draws = Draws { model, g: ic.g.sampler()?, i0: ic.i0, horizon, n, seed, replica };
    let forced = forced_flags(n, &opts.initial)?;
    let mut people = Vec::with_capacity(n);
    let mut streams = Vec::with_capacity(n);
    let mut marks: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut heap = BinaryHeap::new();
    for x in 0..n {
        let mut r = draws.stream(x);
        let (initial, z) = draws.head(forced[x], &mut r);
        if initial {
            let (course, m) = draws.tail(z, &mut r);
            let sigma = -z;
            schedule(&mut heap, x, sigma, &course, horizon);
            marks[x] = m;
            people.push(Individual { z, sigma, infector: None, via_atom: None, course: Some(course) });
        } else {
            people.push(Individual { z: 0.0, sigma: f64::INFINITY, infector: None, via_atom: None, course: None });
        }
        streams.push(r);
    }
    let mut events = Vec::new();
    let mut susceptible = people.iter().filter(|p| !p.is_initial()).count();
    let mut infected = n - susceptible;
    while let Some(Pending { time, source, atom }) = heap.pop() {
        let (target, s) = marks[source][atom];
        let accepted = target != source && people[target].sigma == f64::INFINITY && s <= c.eval(time);
        if opts.record_events {
            events.push(ContactEvent { time, source, target, accepted });
        }
        if !accepted {
            continue;
        }
        let (course, m) = draws.tail(0.0, &mut streams[target]);
        schedule(&mut heap, target, time, &course, horizon);
        marks[target] = m;
        people[target] = Individual { z: 0.0, sigma: time, infector: Some(source), via_atom: Some(atom), course: Some(course) };
        susceptible -= 1;
        infected += 1;
        debug_assert_eq!(susceptible + infected, n);
    }
    Ok(SimOutput { n, horizon, seed, replica, compartments: model.compartments(), individuals: people, events })
}

fn schedule(heap: &mut BinaryHeap<Pending>, x: usize, sigma: f64, course: &DiseaseCourse, horizon: f64) {
    for (k, &a) in course.atoms.iter().enumerate() {
        let time = sigma + a;
        if (0.0..=horizon).contains(&time) {
            heap.push(Pending { time, source: x, atom: k });
        }
    }
}

/// Infection graph of one replica: every individual's course and marks,
/// drawn whether or not the individual is ever infected.
#[derive(Debug, Clone)]
pub struct InfectionGraph {
    pub vertices: Vec<Vertex>,
    pub horizon: f64,
}

impl InfectionGraph {
    pub fn build(
        model: &CourseModel,
        n: usize,
        ic: &InitialCondition,
        horizon: f64,
        seed: u64,
        replica: u64,
        initial: &InitialDraw,
    ) -> Result<Self> {
        let draws = Draws { model, g: ic.g.sampler()?, i0: ic.i0, horizon, n, seed, replica };
        let forced = forced_flags(n, initial)?;
        let vertices = (0..n)
            .map(|x| {
                let mut r = draws.stream(x);
                let (initial, z) = draws.head(forced[x], &mut r);
                let (course, marks) = draws.tail(z, &mut r);
                Vertex { initial, z, course, marks }
            })
            .collect();
        Ok(Self { vertices, horizon })
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.iter().map(|v| v.marks.len()).sum()
    }

    /// Infection times from the path definition.
    ///
    /// All simple paths starting at an initially infected vertex and
    /// avoiding the other initially infected are enumerated; a path's
    /// length is the root's `-Z` plus the contact ages along it, and an edge
    /// is active when its mark `s` is at most `c` at the contact time. Paths
    /// are visited by increasing `(length, edges, last source, last atom)`;
    /// a path is the geodesic of its endpoint when it is active, its prefix
    /// is the geodesic of the previous vertex and no geodesic was recorded
    /// yet. Contacts outside `[0, horizon]` are dropped.
    pub fn brute_force_sigma(&self, c: &ContactRate) -> Vec<f64> {
        #[derive(Clone)]
        struct Path {
            length: f64,
            edges: Vec<(usize, usize)>,
            vertices: Vec<usize>,
            active: bool,
        }
        let n = self.vertices.len();
        let mut paths: Vec<Path> = Vec::new();
        let mut stack: Vec<Path> = Vec::new();
        for (x, v) in self.vertices.iter().enumerate() {
            if v.initial {
                stack.push(Path { length: -v.z, edges: vec![], vertices: vec![x], active: true });
            }
        }
        while let Some(p) = stack.pop() {
            let last = *p.vertices.last().unwrap();
            let v = &self.vertices[last];
            for (k, &a) in v.course.atoms.iter().enumerate() {
                let (target, s) = v.marks[k];
                let time = p.length + a;
                if !(0.0..=self.horizon).contains(&time) {
                    continue;
                }
                if p.vertices.contains(&target) || self.vertices[target].initial {
                    continue;
                }
                let mut q = p.clone();
                q.length = time;
                q.edges.push((last, k));
                q.vertices.push(target);
                q.active = p.active && s <= c.eval(time);
                stack.push(q.clone());
                paths.push(q);
            }
        }
        paths.sort_by(|a, b| {
            a.length
                .total_cmp(&b.length)
                .then(a.edges.len().cmp(&b.edges.len()))
                .then(a.edges.last().cmp(&b.edges.last()))
        });
        let mut sigma = vec![f64::INFINITY; n];
        let mut geodesic: Vec<Option<Vec<(usize, usize)>>> = vec![None; n];
        for (x, v) in self.vertices.iter().enumerate() {
            if v.initial {
                sigma[x] = -v.z;
                geodesic[x] = Some(vec![]);
            }
        }
        for p in paths {
            let end = *p.vertices.last().unwrap();
            if geodesic[end].is_some() || !p.active {
                continue;
            }
            let prev = p.vertices[p.vertices.len() - 2];
            if geodesic[prev].as_deref() != Some(&p.edges[..p.edges.len() - 1]) {
                continue;
            }
            sigma[end] = p.length;
            geodesic[end] = Some(p.edges);
        }
        sigma
    }
}

/// Histogram of `(age, compartment)` of the infected at time `t`.
#[derive(Debug, Clone)]
pub struct AgeCompartmentMeasure {
    pub age_step: f64,
    /// `mass[bin][compartment]`, each individual weighted `1/N`.
    pub mass: Vec<Vec<f64>>,
    /// Mass at ages beyond the last bin.
    pub overflow: f64,
}

impl AgeCompartmentMeasure {
    pub fn total(&self) -> f64 {
        self.mass.iter().flatten().sum::<f64>() + self.overflow
    }
}

pub fn age_compartment_measure(out: &SimOutput, t: f64, age_step: f64, bins: usize) -> Result<AgeCompartmentMeasure> {
    if t > out.horizon {
        return Err(Error::OutOfHorizon { t, horizon: out.horizon });
    }
    let w = 1.0 / out.n as f64;
    let mut mass = vec![vec![0.0; out.compartments.len()]; bins];
    let mut overflow = 0.0;
    for p in out.individuals.iter().filter(|p| p.sigma <= t) {
        let age = t - p.sigma;
        let i = p.course.as_ref().unwrap().compartment_at(age);
        match mass.get_mut((age / age_step) as usize) {
            Some(row) => row[i] += w,
            None => overflow += w,
        }
    }
    Ok(AgeCompartmentMeasure { age_step, mass, overflow })
}

/// `Y_t(i) / N`.
pub fn compartment_counts(out: &SimOutput, compartment: usize, t: f64) -> Result<f64> {
    Ok(compartment_series(out, compartment, &[t])?[0])
}

/// [`compartment_counts`] at several times.
pub fn compartment_series(out: &SimOutput, compartment: usize, times: &[f64]) -> Result<Vec<f64>> {
    if compartment >= out.compartments.len() {
        return Err(Error::UnknownCompartment(compartment.to_string()));
    }
    let mut counts = vec![0usize; times.len()];
    for p in out.individuals.iter().filter(|p| p.sigma.is_finite()) {
        let course = p.course.as_ref().unwrap();
        for (k, &t) in times.iter().enumerate() {
            if p.sigma <= t && course.compartment_at(t - p.sigma) == compartment {
                counts[k] += 1;
            }
        }
    }
    Ok(counts.into_iter().map(|k| k as f64 / out.n as f64).collect())
}

/// Fraction of the population with `sigma <= t`.
pub fn infected_fraction(out: &SimOutput, t: f64) -> f64 {
    out.individuals.iter().filter(|p| p.sigma <= t).count() as f64 / out.n as f64
}

/// Backward chain of infection times from an individual to an initially
/// infected one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AncestralPath {
    /// `R(0) = sigma_x > R(1) > ... > R(n)`, `R(n) < 0`.
    pub times: Vec<f64>,
    pub individuals: Vec<usize>,
    pub courses: Vec<DiseaseCourse>,
    /// Initial age of the root.
    pub root_z: f64,
}

impl AncestralPath {
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// `R(0) - R(1)`, if the path has a second entry.
    pub fn first_increment(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[0] - self.times[1])
    }
}

pub fn ancestral_path(out: &SimOutput, x: usize) -> Result<AncestralPath> {
    let p = out.individuals.get(x).ok_or_else(|| Error::InvalidArgument(format!("individual {x} >= N")))?;
    let mut path = AncestralPath::default();
    if !p.sigma.is_finite() {
        return Ok(path);
    }
    let mut cur = x;
    loop {
        let q = &out.individuals[cur];
        path.times.push(q.sigma);
        path.individuals.push(cur);
        path.courses.push(q.course.clone().unwrap());
        match q.infector {
            Some(y) => cur = y,
            None => {
                path.root_z = q.z;
                return Ok(path);
            }
        }
    }
}

/// Summary statistics of the historical measure at time `t`.
#[derive(Debug, Clone)]
pub struct HistoricalSummary {
    pub t: f64,
    /// Total mass, the infected fraction at `t`.
    pub mass: f64,
    /// `chain_lengths[k]`: mass of paths with `k + 1` entries.
    pub chain_lengths: Vec<f64>,
    /// `sigma_x - R(1)` for every path with at least two entries.
    pub first_increments: Vec<f64>,
    /// Initial age `Z` of every root.
    pub overshoots: Vec<f64>,
}

pub fn historical_measure(out: &SimOutput, t: f64) -> Result<HistoricalSummary> {
    if t > out.horizon {
        return Err(Error::OutOfHorizon { t, horizon: out.horizon });
    }
    let w = 1.0 / out.n as f64;
    let mut s = HistoricalSummary { t, mass: 0.0, chain_lengths: vec![], first_increments: vec![], overshoots: vec![] };
    for p in out.individuals.iter().filter(|p| p.sigma <= t) {
        let mut len = 1;
        let mut cur = p;
        while let Some(y) = cur.infector {
            cur = &out.individuals[y];
            len += 1;
        }
        if s.chain_lengths.len() < len {
            s.chain_lengths.resize(len, 0.0);
        }
        s.chain_lengths[len - 1] += w;
        s.mass += w;
        if let Some(y) = p.infector {
            s.first_increments.push(p.sigma - out.individuals[y].sigma);
        }
        s.overshoots.push(cur.z);
    }
    Ok(s)
}

/// First backward increments `sigma_x - sigma_infector` of individuals
/// infected in `[t0, t1)`.
pub fn first_increments_in_window(out: &SimOutput, t0: f64, t1: f64) -> Vec<f64> {
    out.individuals
        .iter()
        .filter(|p| p.sigma >= t0 && p.sigma < t1)
        .filter_map(|p| p.infector.map(|y| p.sigma - out.individuals[y].sigma))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Density, IntensityKernel};

    fn setup(i0: f64) -> (CourseModel, InitialCondition) {
        let tau = IntensityKernel::exponential(1.5, 1.0).unwrap();
        let ic = InitialCondition::new(i0, Density::exponential(0.5).unwrap(), &tau).unwrap();
        (CourseModel::markov_sir(1.5, 1.0).unwrap(), ic)
    }

    fn one() -> ContactRate {
        ContactRate::constant(1.0).unwrap()
    }

    fn run(n: usize, c: &ContactRate, seed: u64, opts: &SimOptions) -> SimOutput {
        let (m, ic) = setup(0.05);
        simulate(&m, n, c, &ic, 20.0, seed, 0, opts).unwrap()
    }

    #[test]
    fn zero_contact_rate_infects_nobody() {
        let out = run(2000, &ContactRate::constant(0.0).unwrap(), 1, &SimOptions::default());
        assert!(out.individuals.iter().all(|p| p.infector.is_none()));
        assert!(out.individuals.iter().all(|p| p.is_initial() || p.sigma == f64::INFINITY));
    }

    #[test]
    fn empty_initial_set_stays_susceptible() {
        let opts = SimOptions { initial: InitialDraw::Fixed(vec![]), ..Default::default() };
        let out = run(500, &one(), 2, &opts);
        assert!(out.individuals.iter().all(|p| p.sigma == f64::INFINITY));
    }

    #[test]
    fn output_invariants_and_event_log() {
        let opts = SimOptions { record_events: true, ..Default::default() };
        let out = run(3000, &one(), 3, &opts);
        for (x, p) in out.individuals.iter().enumerate() {
            if p.is_initial() {
                assert_eq!(p.sigma, -p.z);
                assert!(p.infector.is_none());
            }
            if let Some(y) = p.infector {
                let q = &out.individuals[y];
                assert!(q.sigma < p.sigma);
                let a = q.course.as_ref().unwrap().atoms[p.via_atom.unwrap()];
                assert_eq!(q.sigma + a, p.sigma);
                let path = ancestral_path(&out, x).unwrap();
                assert!(path.times.windows(2).all(|w| w[0] > w[1]));
                assert!(*path.times.last().unwrap() < 0.0);
            }
        }
        for t in [0.0, 5.0, 10.0, 20.0] {
            let inf = out.individuals.iter().filter(|p| p.sigma <= t).count();
            let sus = out.individuals.iter().filter(|p| p.sigma > t).count();
            assert_eq!(inf + sus, out.n);
        }
        let accepted: Vec<_> = out.events.iter().filter(|e| e.accepted).collect();
        assert_eq!(accepted.len(), out.individuals.iter().filter(|p| p.infector.is_some()).count());
        for e in accepted {
            assert_eq!(out.individuals[e.target].sigma, e.time);
            assert_eq!(out.individuals[e.target].infector, Some(e.source));
        }
        assert!(out.events.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run(2000, &one(), 4, &SimOptions::default());
        let b = run(2000, &one(), 4, &SimOptions::default());
        let c = run(2000, &one(), 5, &SimOptions::default());
        assert_eq!(a.individuals, b.individuals);
        assert_ne!(a.individuals, c.individuals);
    }

    #[test]
    fn initially_infected_path_has_length_one() {
        let out = run(1000, &one(), 6, &SimOptions::default());
        let x = out.individuals.iter().position(|p| p.is_initial()).unwrap();
        let path = ancestral_path(&out, x).unwrap();
        assert_eq!(path.times, vec![-out.individuals[x].z]);
        let s = out.individuals.iter().position(|p| p.sigma.is_infinite());
        if let Some(s) = s {
            assert!(ancestral_path(&out, s).unwrap().is_empty());
        }
    }

    #[test]
    fn measures_have_infected_mass() {
        let out = run(3000, &one(), 7, &SimOptions::default());
        for t in [0.0, 4.0, 12.0] {
            let f = infected_fraction(&out, t);
            let m = age_compartment_measure(&out, t, 0.5, 64).unwrap();
            assert!((m.total() - f).abs() < 1e-12);
            let h = historical_measure(&out, t).unwrap();
            assert!((h.mass - f).abs() < 1e-12);
            let sum: f64 = (0..2).map(|i| compartment_counts(&out, i, t).unwrap()).sum();
            assert!((sum - f).abs() < 1e-12);
        }
        let first = out.individuals.iter().filter(|p| p.infector.is_some()).map(|p| p.sigma).fold(f64::INFINITY, f64::min);
        let h = historical_measure(&out, first * 0.5).unwrap();
        assert_eq!(h.chain_lengths.len(), 1);
        assert!(compartment_counts(&out, 2, 1.0).is_err());
    }

    #[test]
    fn no_infectious_left_after_all_recoveries() {
        let (m, ic) = setup(0.05);
        let out = simulate(&m, 300, &one(), &ic, 20.0, 8, 0, &SimOptions::default()).unwrap();
        let last = out
            .individuals
            .iter()
            .filter_map(|p| p.course.as_ref().map(|c| p.sigma + c.exit_age(0).unwrap()))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(compartment_counts(&out, 0, last + 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn forward_matches_brute_force_on_small_graphs() {
        let (m, ic) = setup(0.2);
        let c = ContactRate::piecewise_constant(vec![0.0, 1.0, 2.5], vec![0.9, 0.4, 0.7]).unwrap();
        for seed in 0..30 {
            let out = simulate(&m, 8, &c, &ic, 6.0, seed, 0, &SimOptions::default()).unwrap();
            let g = InfectionGraph::build(&m, 8, &ic, 6.0, seed, 0, &InitialDraw::Bernoulli).unwrap();
            let sigma: Vec<f64> = out.individuals.iter().map(|p| p.sigma).collect();
            assert_eq!(sigma, g.brute_force_sigma(&c), "seed {seed}");
        }
    }
}
