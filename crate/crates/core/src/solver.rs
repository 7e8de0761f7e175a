//! Deterministic large-population limit.
//!
//! The incidence `b` solves the renewal equation
//! `b(t) = c(t) S(t) (int_0^t b(a) tau(t - a) da + I0 tau_bar(t))`
//! with `S = S0 - B` and `B = int_0^t b`. [`solve_delay`] marches on this
//! equation with trapezoid quadrature; [`picard_delay`] iterates the
//! equivalent integral form `B = S0 (1 - exp(-int c (tau * dB + I0 tau_bar)))`
//! from `B = 0` as an independent check.

use crate::courses::CourseModel;
use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::kernels::{ContactRate, InitialCondition, IntensityKernel};

/// Default bound on the per-point renewal residual.
pub const RENEWAL_TOL: f64 = 1e-8;
/// Final-size iteration tolerance and step budget.
pub const FINAL_SIZE_TOL: f64 = 1e-12;
pub const FINAL_SIZE_MAX_ITER: usize = 10_000;

/// Grid solution of the limit on `t_k = k dt`, `k = 0..=n`.
#[derive(Debug, Clone)]
pub struct LimitSolution {
    pub dt: f64,
    pub b: Vec<f64>,
    pub big_b: Vec<f64>,
    pub s: Vec<f64>,
    pub tau: IntensityKernel,
    pub c: ContactRate,
    pub ic: InitialCondition,
}

impl LimitSolution {
    pub fn horizon(&self) -> f64 {
        self.dt * (self.b.len() - 1) as f64
    }

    pub fn steps(&self) -> usize {
        self.b.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    fn interp(&self, v: &[f64], t: f64) -> f64 {
        let s = t / self.dt;
        let j = (s.floor() as usize).min(v.len() - 2);
        let w = s - j as f64;
        v[j] * (1.0 - w) + v[j + 1] * w
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon() * (1.0 + 1e-12)) {
            return Err(Error::OutOfHorizon { t, horizon: self.horizon() });
        }
        Ok(())
    }

    /// Incidence extended to negative times by `b(-u) = I0 g(u)`.
    pub fn b_at(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Ok(self.ic.i0 * self.ic.g.eval(-t));
        }
        self.check(t)?;
        Ok(self.interp(&self.b, t))
    }

    pub fn big_b_at(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.interp(&self.big_b, t))
    }

    pub fn s_at(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.interp(&self.s, t))
    }

    pub fn b_grid(&self) -> GridFn {
        GridFn { origin: 0.0, step: self.dt, values: self.b.clone() }
    }

    /// Largest `|b_k - c_k S_k (conv_k + I0 tau_bar_k)|` with the trapezoid
    /// convolution.
    pub fn renewal_residual(&self) -> f64 {
        let (tau, tau_bar, c) = grid_inputs(&self.tau, &self.ic, &self.c, self.dt, self.steps());
        let mut worst: f64 = 0.0;
        for k in 0..self.b.len() {
            let conv = if k == 0 {
                0.0
            } else {
                let mut acc = 0.5 * (self.b[0] * tau[k] + self.b[k] * tau[0]);
                for j in 1..k {
                    acc += self.b[j] * tau[k - j];
                }
                acc * self.dt
            };
            let rhs = c[k] * self.s[k] * (conv + self.ic.i0 * tau_bar[k]);
            worst = worst.max((self.b[k] - rhs).abs());
        }
        worst
    }
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and finite T > 0 (dt = {dt}, T = {horizon})")));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::GridMismatch(format!("dt = {dt} does not divide T = {horizon}")));
    }
    Ok(n as usize)
}

fn check_kernel_grid(tau: &IntensityKernel, dt: f64) -> Result<()> {
    if let IntensityKernel::Tabulated(g) = tau {
        let (a, b) = (g.step.max(dt), g.step.min(dt));
        let r = a / b;
        if (r - r.round()).abs() > 1e-9 * r {
            return Err(Error::GridMismatch(format!("time step {dt} and kernel step {} are incommensurate", g.step)));
        }
    }
    Ok(())
}

fn grid_inputs(tau: &IntensityKernel, ic: &InitialCondition, c: &ContactRate, dt: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = |k: usize| k as f64 * dt;
    (
        (0..=n).map(|k| tau.eval(t(k))).collect(),
        (0..=n).map(|k| ic.tau_bar.eval(t(k))).collect(),
        (0..=n).map(|k| c.eval(t(k))).collect(),
    )
}

/// Marches the renewal equation on `[0, T]` with step `dt`.
///
/// With trapezoid weights both the convolution and `B` depend linearly on
/// the unknown `b_k`, so each step is a quadratic in `b_k` whose
/// nonnegative root is taken in closed form.
pub fn solve_delay(tau: &IntensityKernel, c: &ContactRate, ic: &InitialCondition, horizon: f64, dt: f64) -> Result<LimitSolution> {
    march(tau, c, ic, horizon, dt, false)
}

/// Same scheme with `S = 1`: the linearized equation.
pub fn solve_linearized(tau: &IntensityKernel, c: &ContactRate, ic: &InitialCondition, horizon: f64, dt: f64) -> Result<GridFn> {
    let sol = march(tau, c, ic, horizon, dt, true)?;
    Ok(sol.b_grid())
}

/// Linearized solution as a [`LimitSolution`] with `S = 1`.
pub fn linearized_solution(tau: &IntensityKernel, c: &ContactRate, ic: &InitialCondition, horizon: f64, dt: f64) -> Result<LimitSolution> {
    march(tau, c, ic, horizon, dt, true)
}

fn march(tau: &IntensityKernel, c: &ContactRate, ic: &InitialCondition, horizon: f64, dt: f64, linear: bool) -> Result<LimitSolution> {
    tau.validate()?;
    let n = steps_for(horizon, dt)?;
    check_kernel_grid(tau, dt)?;
    let (tv, tbar, cv) = grid_inputs(tau, ic, c, dt, n);
    let s0 = ic.s0();
    let i0 = ic.i0;
    let h = 0.5 * dt;
    let mut b = vec![0.0; n + 1];
    let mut big_b = vec![0.0; n + 1];
    b[0] = cv[0] * if linear { 1.0 } else { s0 } * i0 * tbar[0];
    for k in 1..=n {
        let mut f = 0.5 * b[0] * tv[k];
        for j in 1..k {
            f += b[j] * tv[k - j];
        }
        let f = f * dt + i0 * tbar[k];
        let bk = if linear {
            let denom = 1.0 - cv[k] * h * tv[0];
            if !(denom > 0.0) {
                return Err(Error::StepSolve { step: k });
            }
            cv[k] * f / denom
        } else {
            // b = c (A - h b)(f + h tau0 b)
            let a = s0 - big_b[k - 1] - h * b[k - 1];
            let qa = cv[k] * h * h * tv[0];
            let qb = 1.0 - cv[k] * h * (a * tv[0] - f);
            let qc = cv[k] * a * f;
            let disc = qb * qb + 4.0 * qa * qc;
            let denom = qb + disc.max(0.0).sqrt();
            if qc <= 0.0 {
                0.0
            } else if !(denom > 0.0) || !denom.is_finite() {
                return Err(Error::StepSolve { step: k });
            } else {
                2.0 * qc / denom
            }
        };
        b[k] = bk;
        big_b[k] = big_b[k - 1] + h * (b[k - 1] + bk);
    }
    let s = if linear { vec![1.0; n + 1] } else { big_b.iter().map(|x| s0 - x).collect() };
    Ok(LimitSolution { dt, b, big_b, s, tau: tau.clone(), c: c.clone(), ic: ic.clone() })
}

/// Outcome of the Picard iteration `B <- Phi(B)` from `B = 0`.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub big_b: Vec<f64>,
    pub iterations: usize,
    /// `sup_t exp(-gamma t) |B_m - B_{m-1}|` at the last iteration.
    pub last_increment: f64,
    pub gamma: f64,
}

/// Picard iteration of the integral form on the grid, stopped once the
/// sup-norm increment is below `tol`. The increment in the contraction
/// metric `sup_t exp(-gamma t) |.|`, `gamma = max(alpha, 0) + 1`, is
/// reported alongside.
///
/// `dB` is taken cell by cell with `tau` averaged over the cell, the outer
/// integral by trapezoid.
#[allow(clippy::too_many_arguments)]
pub fn picard_delay(
    tau: &IntensityKernel,
    c: &ContactRate,
    ic: &InitialCondition,
    horizon: f64,
    dt: f64,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    let n = steps_for(horizon, dt)?;
    check_kernel_grid(tau, dt)?;
    let (tv, tbar, cv) = grid_inputs(tau, ic, c, dt, n);
    let w: Vec<f64> = (0..n).map(|m| 0.5 * (tv[m] + tv[m + 1])).collect();
    let gamma = alpha.max(0.0) + 1.0;
    let weight: Vec<f64> = (0..=n).map(|k| (-gamma * k as f64 * dt).exp()).collect();
    let s0 = ic.s0();
    let mut big_b = vec![0.0; n + 1];
    let mut d_b = vec![0.0; n + 1];
    let mut integrand = vec![0.0; n + 1];
    for it in 1..=max_iter {
        for k in 1..=n {
            d_b[k] = big_b[k] - big_b[k - 1];
        }
        for k in 0..=n {
            let mut inner = 0.0;
            for j in 1..=k {
                inner += d_b[j] * w[k - j];
            }
            integrand[k] = cv[k] * (inner + ic.i0 * tbar[k]);
        }
        let mut lambda = 0.0;
        let mut incr: f64 = 0.0;
        let mut weighted: f64 = 0.0;
        for k in 0..=n {
            if k > 0 {
                lambda += 0.5 * dt * (integrand[k - 1] + integrand[k]);
            }
            let next = -s0 * (-lambda).exp_m1();
            let d = (next - big_b[k]).abs();
            incr = incr.max(d);
            weighted = weighted.max(weight[k] * d);
            big_b[k] = next;
        }
        if incr <= tol {
            return Ok(PicardSolution { big_b, iterations: it, last_increment: weighted, gamma });
        }
    }
    Err(Error::StepSolve { step: max_iter })
}

/// Largest `|B_k - Phi(B)_k|` of the grid solution under the Picard
/// discretization, i.e. the residual of direct substitution into the
/// integral form.
pub fn delay_residual(sol: &LimitSolution) -> f64 {
    let n = sol.steps();
    let (tv, tbar, cv) = grid_inputs(&sol.tau, &sol.ic, &sol.c, sol.dt, n);
    let w: Vec<f64> = (0..n).map(|m| 0.5 * (tv[m] + tv[m + 1])).collect();
    let mut lambda = 0.0;
    let mut prev = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..=n {
        let mut inner = 0.0;
        for j in 1..=k {
            inner += (sol.big_b[j] - sol.big_b[j - 1]) * w[k - j];
        }
        let cur = cv[k] * (inner + sol.ic.i0 * tbar[k]);
        if k > 0 {
            lambda += 0.5 * sol.dt * (prev + cur);
        }
        prev = cur;
        worst = worst.max((sol.big_b[k] + sol.ic.s0() * (-lambda).exp_m1()).abs());
    }
    worst
}

/// Age density `n(t, a)`: `b(t - a)` for `a <= t`, `I0 g(a - t)` otherwise.
pub fn n_at(sol: &LimitSolution, t: f64, a: f64) -> Result<f64> {
    sol.check(t)?;
    if a < 0.0 {
        return Err(Error::InvalidArgument(format!("negative age {a}")));
    }
    if a <= t {
        sol.b_at(t - a)
    } else {
        Ok(sol.ic.i0 * sol.ic.g.eval(a - t))
    }
}

/// `t -> int n(t, a) p(a, i) da` at every grid time.
pub fn compartment_curve(sol: &LimitSolution, model: &CourseModel, compartment: usize) -> Result<GridFn> {
    let times: Vec<usize> = (0..=sol.steps()).collect();
    let values = compartment_values(sol, model, compartment, &times)?;
    Ok(GridFn { origin: 0.0, step: sol.dt, values })
}

/// [`compartment_curve`] at the grid indices `ks`.
///
/// The contribution of ages `a <= t` uses the solver grid; the initially
/// infected part `I0 int g(u) p(t + u, i) du` uses a `u`-grid no finer
/// than `0.01`.
pub fn compartment_values(sol: &LimitSolution, model: &CourseModel, compartment: usize, ks: &[usize]) -> Result<Vec<f64>> {
    let n = sol.steps();
    let dt = sol.dt;
    let stride = ((0.01 / dt).round() as usize).max(1);
    let du = stride as f64 * dt;
    let u_end = sol.ic.g.effective_support();
    let n_u = (u_end / du).ceil() as usize;
    let table_len = n + n_u * stride + 1;
    let table = model.marginal_table(dt, table_len)?;
    if compartment >= model.compartments().len() {
        return Err(Error::UnknownCompartment(compartment.to_string()));
    }
    let p: Vec<f64> = table.iter().map(|r| r[compartment]).collect();
    let gw: Vec<f64> = (0..=n_u)
        .map(|m| {
            let w = if m == 0 || m == n_u { 0.5 } else { 1.0 };
            w * du * sol.ic.i0 * sol.ic.g.eval(m as f64 * du)
        })
        .collect();
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k > n {
            return Err(Error::OutOfHorizon { t: k as f64 * dt, horizon: sol.horizon() });
        }
        let mut new = 0.0;
        if k > 0 {
            new = 0.5 * (sol.b[k] * p[0] + sol.b[0] * p[k]);
            for j in 1..k {
                new += sol.b[k - j] * p[j];
            }
            new *= dt;
        }
        let old: f64 = gw.iter().enumerate().map(|(m, w)| w * p[k + m * stride]).sum();
        out.push(new + old);
    }
    Ok(out)
}

/// Total infected fraction `B_inf + I0` for constant contact rate `c`, where
/// `B_inf = S0 (1 - exp(-c (R0 B_inf + I0 R0_bar)))`.
pub fn final_size(r0_bar: f64, r0: f64, i0: f64, c: f64) -> Result<f64> {
    let s0 = 1.0 - i0;
    let b = fixed_point(|b| s0 * -(-c * (r0 * b + i0 * r0_bar)).exp_m1(), s0)?;
    Ok(b + i0)
}

/// Total infected fraction when `c` is constant, equal to `c_*`, after
/// `t_b = sol.c.last_breakpoint()`.
///
/// Integrating the force of infection past `t_b` gives
/// `S_inf = S(t_b) exp(-c_* (R0 (B_inf - B(t_b)) + rem))` with
/// `rem = int_0^{t_b} b(a) (R0 - T(t_b - a)) da + I0 (R0_bar - Tbar(t_b))`,
/// `T`, `Tbar` the primitives of `tau`, `tau_bar`. Reduces to
/// [`final_size`] when `t_b = 0`.
pub fn final_size_after(sol: &LimitSolution) -> Result<f64> {
    if sol.c.is_linear() && sol.c.breakpoints().len() > 1 {
        return Err(Error::InvalidArgument("final size needs a piecewise-constant contact rate".into()));
    }
    let tb = sol.c.last_breakpoint();
    let kb = (tb / sol.dt).round() as usize;
    if kb > sol.steps() || (kb as f64 * sol.dt - tb).abs() > 1e-9 * tb.max(1.0) {
        return Err(Error::GridMismatch(format!("last breakpoint {tb} is not a grid time of the solution")));
    }
    let r0 = sol.tau.r0();
    let ic = &sol.ic;
    let mut rem = ic.i0 * (ic.r0_bar - ic.tau_bar.cumulative(tb));
    if kb > 0 {
        let f = |j: usize| sol.b[j] * (r0 - sol.tau.cumulative(tb - j as f64 * sol.dt));
        let mut acc = 0.5 * (f(0) + f(kb));
        for j in 1..kb {
            acc += f(j);
        }
        rem += acc * sol.dt;
    }
    let (b_tb, s_tb) = (sol.big_b[kb], sol.s[kb]);
    let c_star = sol.c.terminal();
    let s0 = ic.s0();
    let b = fixed_point(|b| s0 - s_tb * (-c_star * (r0 * (b - b_tb) + rem)).exp(), s0)?;
    Ok(b + ic.i0)
}

/// Damped iteration `x <- (x + f(x)) / 2` from `start`.
fn fixed_point(f: impl Fn(f64) -> f64, start: f64) -> Result<f64> {
    let mut x = start;
    for _ in 0..FINAL_SIZE_MAX_ITER {
        let next = 0.5 * (x + f(x));
        if (next - x).abs() <= FINAL_SIZE_TOL {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::FinalSize(FINAL_SIZE_MAX_ITER))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Density;

    fn scenario(i0: f64) -> (IntensityKernel, InitialCondition) {
        let tau = IntensityKernel::exponential(1.5, 1.0).unwrap();
        let ic = InitialCondition::new(i0, Density::exponential(0.5).unwrap(), &tau).unwrap();
        (tau, ic)
    }

    fn one() -> ContactRate {
        ContactRate::constant(1.0).unwrap()
    }

    #[test]
    fn no_transmission_cases() {
        let (tau, ic) = scenario(0.01);
        let zero = IntensityKernel::zero();
        let ic0 = InitialCondition::new(0.01, ic.g.clone(), &zero).unwrap();
        let sol = solve_delay(&zero, &one(), &ic0, 5.0, 0.01).unwrap();
        assert!(sol.b.iter().all(|b| *b == 0.0));
        assert!(sol.s.iter().all(|s| *s == 0.99));
        let sol = solve_delay(&tau, &ContactRate::constant(0.0).unwrap(), &ic, 5.0, 0.01).unwrap();
        assert!(sol.b.iter().all(|b| *b == 0.0));
        let lin = solve_linearized(&zero, &one(), &ic0, 5.0, 0.01).unwrap();
        assert!(lin.values.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn solution_invariants() {
        let (tau, ic) = scenario(0.01);
        let sol = solve_delay(&tau, &one(), &ic, 25.0, 0.01).unwrap();
        assert_eq!(sol.big_b[0], 0.0);
        for k in 0..sol.b.len() {
            assert!(sol.b[k] >= 0.0);
            assert!(sol.big_b[k] <= ic.s0());
            assert!((sol.s[k] - (ic.s0() - sol.big_b[k])).abs() <= 1e-12);
            if k > 0 {
                assert!(sol.big_b[k] >= sol.big_b[k - 1]);
            }
        }
        assert!(sol.renewal_residual() <= RENEWAL_TOL);
    }

    #[test]
    fn second_order_in_dt() {
        let (tau, ic) = scenario(0.01);
        let coarse = solve_delay(&tau, &one(), &ic, 20.0, 0.04).unwrap();
        let mid = solve_delay(&tau, &one(), &ic, 20.0, 0.02).unwrap();
        let fine = solve_delay(&tau, &one(), &ic, 20.0, 0.01).unwrap();
        let diff = |a: &LimitSolution, b: &LimitSolution| {
            let r = (b.dt / a.dt).recip().round() as usize;
            (0..a.b.len()).map(|k| (a.big_b[k] - b.big_b[k * r]).abs()).fold(0.0, f64::max)
        };
        let ratio = diff(&coarse, &mid) / diff(&mid, &fine);
        assert!((ratio - 4.0).abs() < 0.5, "convergence ratio {ratio}");
    }

    #[test]
    fn age_profile() {
        let (tau, ic) = scenario(0.01);
        let sol = solve_delay(&tau, &one(), &ic, 10.0, 0.01).unwrap();
        assert_eq!(n_at(&sol, 3.0, 5.0).unwrap(), 0.01 * ic.g.eval(2.0));
        assert!((n_at(&sol, 3.0, 0.0).unwrap() - sol.b[300]).abs() < 1e-15);
        assert!(n_at(&sol, 11.0, 1.0).is_err());
        // total mass 1 - S(t) at t = 6
        let t = 6.0;
        let step = 0.001;
        let end = t + ic.g.effective_support();
        let m = (end / step) as usize;
        let mass: f64 = (0..=m)
            .map(|j| {
                let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                w * n_at(&sol, t, j as f64 * step).unwrap()
            })
            .sum::<f64>()
            * step;
        assert!((mass - (1.0 - sol.s_at(t).unwrap())).abs() < 1e-4, "{mass}");
    }

    #[test]
    fn compartment_curves() {
        let (tau, ic) = scenario(0.01);
        let model = CourseModel::markov_sir(1.5, 1.0).unwrap();
        let sol = solve_delay(&tau, &one(), &ic, 30.0, 0.01).unwrap();
        let i = compartment_curve(&sol, &model, 0).unwrap();
        let r = compartment_curve(&sol, &model, 1).unwrap();
        for k in (0..sol.b.len()).step_by(50) {
            assert!((i.values[k] + r.values[k] - (1.0 - sol.s[k])).abs() < 1e-4, "k={k}");
        }
        // I(0) = I0 int g(a) e^{-a} da = I0 / 3
        assert!((i.values[0] - 0.01 / 3.0).abs() < 1e-6);
        let fs = final_size(ic.r0_bar, 1.5, 0.01, 1.0).unwrap();
        assert!((r.values.last().unwrap() - fs).abs() < 1e-3);
    }

    #[test]
    fn linearized_matches_exponential_growth() {
        let (tau, ic) = scenario(0.01);
        let lin = solve_linearized(&tau, &one(), &ic, 10.0, 0.001).unwrap();
        for k in (0..lin.values.len()).step_by(500) {
            let t = k as f64 * 0.001;
            let exact = 0.01 * 0.5 * (0.5 * t).exp();
            assert!((lin.values[k] / exact - 1.0).abs() < 1e-4, "t={t}");
        }
        let sol = solve_delay(&tau, &one(), &ic, 10.0, 0.001).unwrap();
        assert!(lin.values.iter().zip(&sol.b).all(|(l, b)| *l >= *b));
    }

    #[test]
    fn final_size_examples() {
        assert!((final_size(0.5, 1.5, 0.01, 0.0).unwrap() - 0.01).abs() < 1e-11);
        let f = final_size(0.5, 1.5, 0.01, 1.0).unwrap() - 0.01;
        // bisection oracle on B = 0.99 (1 - exp(-(1.5 B + 0.005)))
        let h = |b: f64| b - 0.99 * (1.0 - (-(1.5 * b + 0.005)).exp());
        let (mut lo, mut hi) = (0.1, 0.99);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if h(m) < 0.0 {
                lo = m
            } else {
                hi = m
            }
        }
        assert!((f - lo).abs() < 1e-10);
        assert!(final_size(0.5, 1.5, 0.01, 0.5).unwrap() <= final_size(0.5, 1.5, 0.01, 1.0).unwrap());
    }

    #[test]
    fn final_size_after_reduces_to_constant_case() {
        let (tau, ic) = scenario(0.01);
        let sol = solve_delay(&tau, &one(), &ic, 5.0, 0.01).unwrap();
        let a = final_size_after(&sol).unwrap();
        let b = final_size(ic.r0_bar, 1.5, 0.01, 1.0).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn picard_agrees_with_marching() {
        let (tau, ic) = scenario(0.01);
        let sol = solve_delay(&tau, &one(), &ic, 10.0, 0.005).unwrap();
        let pic = picard_delay(&tau, &one(), &ic, 10.0, 0.005, 0.5, 1e-14, 500).unwrap();
        let err = sol.big_b.iter().zip(&pic.big_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn incommensurate_grids_rejected() {
        let tau = IntensityKernel::tabulated(0.03, vec![1.0; 100]).unwrap();
        let ic = InitialCondition::new(0.01, Density::exponential(1.0).unwrap(), &tau).unwrap();
        assert!(matches!(solve_delay(&tau, &one(), &ic, 1.0, 0.02), Err(Error::GridMismatch(_))));
    }
}
