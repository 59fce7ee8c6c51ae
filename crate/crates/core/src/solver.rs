//! Sum-throughput maximization over harvest time and transmit powers.
//!
//! With `t = 1 / tau1` the energy-causality constraints become linear,
//! `p_n + p_c <= (t - 1) e_n`, and the problem turns into maximizing the ratio
//! `sum_n R_n(p) / t`. The outer loop ([`solve`]) is Dinkelbach's method on
//! `F(q) = max sum_n R_n(p) - q t`. For a fixed `q` the objective is a
//! difference of concave functions,
//!
//! ```text
//! sum_n R_n(p) = sum_n w_n(p) - sum_n v_n(p)
//! w_n(p) = log2(sum_m p_m g_{m,n} + sigma^2)
//! v_n(p) = log2(sum_{m != n} p_m g_{m,n} + sigma^2)
//! ```
//!
//! and [`dc_inner_solve`] maximizes it by repeatedly linearizing `v_n` at the
//! current point and solving the resulting concave problem
//! ([`convex_subproblem`]).

use std::f64::consts::LN_2;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Instance};

/// Relative tolerance for energy causality in the original variables.
pub const CAUSALITY_RTOL: f64 = 1e-9;

/// Relative gain a user-selection step must achieve to be accepted.
pub const SELECTION_RTOL: f64 = 1e-9;

const MAX_NEWTON_ITERS: usize = 200;
const MAX_HALVINGS: usize = 60;
const MAX_T_ITERS: usize = 200;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitRule {
    /// Half of each user's power budget at a moderate harvest time.
    EqualSplit,
    /// A tiny fraction of the same budget.
    ZeroPlusEpsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub q_init: f64,
    /// Dinkelbach stops once `|F(q)|` drops to this value.
    pub outer_tol: f64,
    /// The D.C. loop stops once the objective improves by less than this.
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Projected-gradient KKT residual for the concave subproblem.
    pub subproblem_tol: f64,
    pub init: InitRule,
    /// Smallest admissible WIT fraction; bounds `t` by `1 / tau1_min`.
    pub tau1_min: f64,
    /// Greedily silence pairs whose removal raises the throughput.
    pub select_users: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            q_init: 1.0,
            outer_tol: 1e-6,
            inner_tol: 1e-8,
            max_outer: 50,
            max_inner: 200,
            subproblem_tol: 1e-10,
            init: InitRule::EqualSplit,
            tau1_min: 1e-4,
            select_users: true,
        }
    }
}

impl SolverOptions {
    pub fn t_cap(&self) -> f64 {
        1.0 / self.tau1_min
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("subproblem_tol", self.subproblem_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        if !(self.tau1_min > 0.0 && self.tau1_min < 1.0) {
            return Err(Error::param("tau1_min", "must lie in (0, 1)"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::param("max_outer/max_inner", "must be >= 1"));
        }
        if !self.q_init.is_finite() {
            return Err(Error::param("q_init", "must be finite"));
        }
        Ok(())
    }
}

/// Harvest/transmit split and transmit powers. `tau0 + tau1 == 1` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub tau0: f64,
    pub tau1: f64,
    pub t: f64,
    pub p: Vec<f64>,
}

impl Allocation {
    pub fn from_t(t: f64, p: Vec<f64>) -> Self {
        let tau1 = 1.0 / t;
        Self {
            tau0: 1.0 - tau1,
            tau1,
            t,
            p,
        }
    }

    pub fn from_tau1(tau1: f64, p: Vec<f64>) -> Self {
        Self {
            tau0: 1.0 - tau1,
            tau1,
            t: 1.0 / tau1,
            p,
        }
    }

    /// Checks `tau1 (p_n + p_c) <= tau0 e_n` for every user in `users`.
    pub fn check_causality(&self, instance: &Instance, users: impl IntoIterator<Item = usize>) -> Result<()> {
        let pc = instance.params.circuit_power;
        for n in users {
            let consumed = self.tau1 * (self.p[n] + pc);
            let harvested = self.tau0 * instance.e[n];
            if consumed - harvested > CAUSALITY_RTOL * consumed.max(harvested) {
                return Err(Error::CausalityViolation {
                    user: n,
                    consumed,
                    harvested,
                });
            }
        }
        Ok(())
    }
}

/// Maps `(t, p)` back to `(tau0, tau1, p)` and re-verifies causality for all users.
pub fn recover_allocation(t: f64, p: &[f64], instance: &Instance) -> Result<Allocation> {
    if !(t >= 1.0) {
        return Err(Error::param("t", format!("must be >= 1, got {t}")));
    }
    let alloc = Allocation::from_t(t, p.to_vec());
    alloc.check_causality(instance, 0..instance.num_pairs())?;
    Ok(alloc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxOuter,
    MaxInner,
    Infeasible,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxOuter => "max_outer",
            Termination::MaxInner => "max_inner",
            Termination::Infeasible => "infeasible",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnostics of one D.C. run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerReport {
    /// `f(t, q, p)` at the start and after every accepted iteration.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub hit_cap: bool,
    /// Subproblems whose line search gave up.
    pub line_search_failures: usize,
    /// Largest final KKT residual over the subproblems.
    pub max_kkt_residual: f64,
    /// Largest `min_n [t - 1 - (p_n + p_c) / e_n]` over the subproblem solutions.
    pub max_activity_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    /// `q^0, q^1, ...`; the last entry is the returned ratio.
    pub q_trajectory: Vec<f64>,
    /// `F(q^k)` for every evaluated `q^k`.
    pub f_values: Vec<f64>,
    pub inner: Vec<InnerReport>,
    pub outer_iters: usize,
    pub total_inner_iters: usize,
    pub termination: Termination,
    pub wall_time: f64,
    /// Users kept in the optimization (indices into the instance).
    pub active_users: Vec<usize>,
    /// Users that cannot cover circuit power even at `t_cap`; they stay silent.
    pub excluded_users: Vec<usize>,
    /// Feasible users switched off by user selection.
    pub silent_users: Vec<usize>,
    /// Dinkelbach runs performed, including rejected selection candidates.
    pub selection_solves: usize,
    /// Final `sum_n R_n(p) / t`.
    pub objective: f64,
    /// `K * L * (N + 1)^3`, for comparison against the operation-count estimate.
    pub complexity_estimate: f64,
    pub notes: Vec<String>,
}

impl SolverReport {
    fn infeasible(n: usize, wall_time: f64) -> Self {
        Self {
            q_trajectory: vec![],
            f_values: vec![],
            inner: vec![],
            outer_iters: 0,
            total_inner_iters: 0,
            termination: Termination::Infeasible,
            wall_time,
            active_users: vec![],
            excluded_users: (0..n).collect(),
            silent_users: vec![],
            selection_solves: 0,
            objective: 0.0,
            complexity_estimate: 0.0,
            notes: vec!["no user can cover circuit power within t_cap".into()],
        }
    }

    /// Final `F(q)`, if any was evaluated.
    pub fn final_f(&self) -> Option<f64> {
        self.f_values.last().copied()
    }
}

/// `f(t, q, p) = sum_n R_n(p) - q t`.
pub fn objective(t: f64, q: f64, p: &[f64], instance: &Instance) -> f64 {
    model::sum_rate(p, instance) - q * t
}

/// Smallest `t` satisfying every causality constraint for `p`.
pub fn min_feasible_t(p: &[f64], instance: &Instance) -> f64 {
    let pc = instance.params.circuit_power;
    p.iter()
        .zip(&instance.e)
        .map(|(&pn, &en)| 1.0 + (pn + pc) / en)
        .fold(1.0, f64::max)
}

/// Gradient of `v_n` at `p_ref`. The own-power component is zero since `v_n`
/// does not depend on `p_n`.
pub fn grad_v(p_ref: &[f64], instance: &Instance, n: usize) -> Vec<f64> {
    let denom = LN_2 * instance.interference(p_ref, n);
    (0..instance.num_pairs())
        .map(|l| if l == n { 0.0 } else { instance.g_cross[l][n] / denom })
        .collect()
}

fn w_n(p: &[f64], instance: &Instance, n: usize) -> f64 {
    (instance.interference(p, n) + p[n] * instance.g_direct[n]).log2()
}

fn v_n(p: &[f64], instance: &Instance, n: usize) -> f64 {
    instance.interference(p, n).log2()
}

/// Concave lower bound of `f(t, q, p)` obtained by linearizing every `v_n` at `p_ref`.
pub fn surrogate_value(p: &[f64], t: f64, q: f64, p_ref: &[f64], instance: &Instance) -> f64 {
    let n_users = instance.num_pairs();
    let mut acc = 0.0;
    for n in 0..n_users {
        let grad = grad_v(p_ref, instance, n);
        let lin: f64 = grad.iter().zip(p.iter().zip(p_ref)).map(|(g, (a, b))| g * (a - b)).sum();
        acc += w_n(p, instance, n) - v_n(p_ref, instance, n) - lin;
    }
    acc - q * t
}

/// The concave surrogate at a fixed reference point, in scaled variables
/// `x_n = p_n / e_n`. In these units every upper bound is `t - 1 - p_c / e_n`.
struct Surrogate<'a> {
    inst: &'a Instance,
    q: f64,
    /// `sum_{n != l} dv_n/dp_l` at the reference.
    lin: Vec<f64>,
    /// `p_c / e_n`.
    offset: Vec<f64>,
}

struct BoxOutcome {
    grad: Vec<f64>,
    residual: f64,
    line_search_failed: bool,
}

impl<'a> Surrogate<'a> {
    fn new(inst: &'a Instance, q: f64, p_ref: &[f64]) -> Self {
        let n = inst.num_pairs();
        let mut lin = vec![0.0; n];
        for victim in 0..n {
            let denom = LN_2 * inst.interference(p_ref, victim);
            for (l, c) in lin.iter_mut().enumerate() {
                if l != victim {
                    *c += inst.g_cross[l][victim] / denom;
                }
            }
        }
        let pc = inst.params.circuit_power;
        let offset = inst.e.iter().map(|&e| pc / e).collect();
        Self { inst, q, lin, offset }
    }

    fn n(&self) -> usize {
        self.lin.len()
    }

    fn powers(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.inst.e).map(|(xi, e)| xi * e).collect()
    }

    /// Total received power plus noise at every receiver.
    fn received(&self, p: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|n| {
                p.iter().enumerate().map(|(m, &pm)| pm * self.inst.gain(m, n)).sum::<f64>()
                    + self.inst.params.noise_power
            })
            .collect()
    }

    fn upper(&self, t: f64) -> Vec<f64> {
        self.offset.iter().map(|c| (t - 1.0 - c).max(0.0)).collect()
    }

    /// Surrogate increase from `x` to `y` at fixed `t`, without cancellation.
    fn delta(&self, x: &[f64], y: &[f64], recv_x: &[f64]) -> f64 {
        let dp: Vec<f64> = (0..self.n()).map(|i| (y[i] - x[i]) * self.inst.e[i]).collect();
        let mut acc = 0.0;
        for (n, rx) in recv_x.iter().enumerate() {
            let d: f64 = dp.iter().enumerate().map(|(m, dpm)| dpm * self.inst.gain(m, n)).sum();
            acc += (d / rx).ln_1p() / LN_2;
        }
        acc - dp.iter().zip(&self.lin).map(|(d, c)| d * c).sum::<f64>()
    }

    fn gradient(&self, recv: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|l| {
                let dw: f64 = recv.iter().enumerate().map(|(n, r)| self.inst.gain(l, n) / r).sum();
                self.inst.e[l] * (dw / LN_2 - self.lin[l])
            })
            .collect()
    }

    /// Negated Hessian (positive semidefinite) in scaled variables.
    fn neg_hessian(&self, recv: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let e = &self.inst.e;
        DMatrix::from_fn(n, n, |l, k| {
            let s: f64 = recv
                .iter()
                .enumerate()
                .map(|(v, r)| self.inst.gain(l, v) * self.inst.gain(k, v) / (r * r))
                .sum();
            e[l] * e[k] * s / LN_2
        })
    }

    /// Projected Newton ascent on the box `0 <= x <= upper`.
    fn maximize_box(&self, x: &mut [f64], upper: &[f64], tol: f64) -> BoxOutcome {
        let n = self.n();
        for (xi, ui) in x.iter_mut().zip(upper) {
            *xi = xi.clamp(0.0, *ui);
        }
        let mut line_search_failed = false;
        let mut recv = self.received(&self.powers(x));
        let mut grad = self.gradient(&recv);
        let mut residual = kkt_residual(x, &grad, upper);

        for _ in 0..MAX_NEWTON_ITERS {
            if residual <= tol {
                break;
            }
            let eps = residual.min(1e-3);
            let free: Vec<usize> = (0..n)
                .filter(|&i| !((x[i] <= eps && grad[i] < 0.0) || (x[i] >= upper[i] - eps && grad[i] > 0.0)))
                .collect();

            let hess = self.neg_hessian(&recv);
            let mut dir = vec![0.0; n];
            for i in 0..n {
                dir[i] = grad[i] / hess[(i, i)].max(f64::MIN_POSITIVE);
            }
            if !free.is_empty() {
                let k = free.len();
                let ridge = 1e-14 * free.iter().map(|&i| hess[(i, i)]).fold(0.0, f64::max);
                let sub = DMatrix::from_fn(k, k, |a, b| hess[(free[a], free[b])] + if a == b { ridge } else { 0.0 });
                let rhs = DVector::from_iterator(k, free.iter().map(|&i| grad[i]));
                if let Some(chol) = sub.cholesky() {
                    let sol = chol.solve(&rhs);
                    for (a, &i) in free.iter().enumerate() {
                        dir[i] = sol[a];
                    }
                }
            }

            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let y: Vec<f64> = (0..n).map(|i| (x[i] + step * dir[i]).clamp(0.0, upper[i])).collect();
                let predicted: f64 = (0..n).map(|i| grad[i] * (y[i] - x[i])).sum();
                if predicted <= 0.0 {
                    step *= 0.5;
                    continue;
                }
                let actual = self.delta(x, &y, &recv);
                if actual >= ARMIJO * predicted {
                    accepted = Some(y);
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some(y) => x.copy_from_slice(&y),
                None => {
                    line_search_failed = true;
                    break;
                }
            }
            recv = self.received(&self.powers(x));
            grad = self.gradient(&recv);
            residual = kkt_residual(x, &grad, upper);
        }
        BoxOutcome {
            grad,
            residual,
            line_search_failed,
        }
    }
}

fn kkt_residual(x: &[f64], grad: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(grad)
        .zip(upper)
        .map(|((xi, gi), ui)| ((xi + gi).clamp(0.0, *ui) - xi).abs())
        .fold(0.0, f64::max)
}

/// Solution of one concave subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub t: f64,
    pub p: Vec<f64>,
    pub kkt_residual: f64,
    pub line_search_failed: bool,
    /// `min_n [t - 1 - (p_n + p_c) / e_n]`; zero when some constraint is active.
    pub activity_gap: f64,
}

/// Bounds on `t` for an instance where every user is active.
fn t_bounds(instance: &Instance, opts: &SolverOptions) -> (f64, f64) {
    let pc = instance.params.circuit_power;
    let t_lo = instance.e.iter().map(|e| 1.0 + pc / e).fold(1.0, f64::max);
    (t_lo, opts.t_cap().max(t_lo))
}

/// Maximizes the surrogate at `p_ref` over the causality constraints.
///
/// The optimal value as a function of `t` is concave, and its slope is the sum
/// of the multipliers of the upper power bounds minus `q`; `t` is found as the
/// root of that slope, with the powers at each trial `t` obtained by projected
/// Newton on the box `0 <= p_n <= (t - 1) e_n - p_c`. The returned `t` is the
/// smallest feasible one for the returned powers, so some constraint is active.
pub fn convex_subproblem(instance: &Instance, q: f64, p_ref: &[f64], opts: &SolverOptions) -> SubproblemSolution {
    let sur = Surrogate::new(instance, q, p_ref);
    let (t_lo, t_hi) = t_bounds(instance, opts);
    let tol = opts.subproblem_tol;

    // Start from the reference, expressed in scaled units.
    let mut x: Vec<f64> = p_ref.iter().zip(&instance.e).map(|(p, e)| p / e).collect();
    let mut failed = false;

    let mut eval = |t: f64, x: &mut Vec<f64>| -> f64 {
        let upper = sur.upper(t);
        let out = sur.maximize_box(x, &upper, tol);
        failed |= out.line_search_failed;
        out.grad.iter().map(|g| g.max(0.0)).sum::<f64>() - sur.q
    };

    let slope_lo = eval(t_lo, &mut x);
    let t_star = if slope_lo <= 0.0 {
        t_lo
    } else {
        // Expand upwards until the slope turns negative.
        let (mut a, mut fa) = (t_lo, slope_lo);
        let mut x_a = x.clone();
        let mut b = (2.0 * t_lo).min(t_hi);
        let mut fb = eval(b, &mut x);
        while fb > 0.0 && b < t_hi {
            a = b;
            fa = fb;
            x_a.clone_from(&x);
            b = (4.0 * b).min(t_hi);
            fb = eval(b, &mut x);
        }
        if fb >= 0.0 {
            t_hi
        } else {
            // Illinois-safeguarded regula falsi on the slope.
            let mut x_b = x.clone();
            let mut side = 0i8;
            let mut widths = [b - a, b - a];
            let mut t_best = b;
            for _ in 0..MAX_T_ITERS {
                let width = b - a;
                if width <= 1e-14 * b {
                    break;
                }
                let stalled = width > 0.5 * widths[0];
                let mut c = (a * fb - b * fa) / (fb - fa);
                if stalled || !(c > a && c < b) {
                    c = if b > 4.0 * a { (a * b).sqrt() } else { 0.5 * (a + b) };
                }
                widths = [widths[1], width];
                // Warm-start from the endpoint nearest to c.
                x = if c - a < b - c { x_a.clone() } else { x_b.clone() };
                let fc = eval(c, &mut x);
                t_best = c;
                if fc.abs() <= 1e-13 * sur.q.abs().max(1.0) {
                    break;
                }
                if fc > 0.0 {
                    a = c;
                    fa = fc;
                    x_a.clone_from(&x);
                    if side == 1 {
                        fb *= 0.5;
                    }
                    side = 1;
                } else {
                    b = c;
                    fb = fc;
                    x_b.clone_from(&x);
                    if side == -1 {
                        fa *= 0.5;
                    }
                    side = -1;
                }
            }
            t_best
        }
    };

    // Make sure x corresponds to t_star.
    let upper = sur.upper(t_star);
    let out = sur.maximize_box(&mut x, &upper, tol);
    failed |= out.line_search_failed;

    let p = sur.powers(&x);
    let t = min_feasible_t(&p, instance);
    let pc = instance.params.circuit_power;
    let activity_gap = p
        .iter()
        .zip(&instance.e)
        .map(|(pn, en)| t - 1.0 - (pn + pc) / en)
        .fold(f64::INFINITY, f64::min);
    SubproblemSolution {
        t,
        p,
        kkt_residual: out.residual,
        line_search_failed: failed,
        activity_gap,
    }
}

/// Projects powers onto `0 <= p_n <= (t_cap - 1) e_n - p_c`.
fn project_powers(p: &[f64], instance: &Instance, opts: &SolverOptions) -> Vec<f64> {
    let (_, t_hi) = t_bounds(instance, opts);
    let pc = instance.params.circuit_power;
    p.iter()
        .zip(&instance.e)
        .map(|(pn, en)| pn.clamp(0.0, ((t_hi - 1.0) * en - pc).max(0.0)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub t: f64,
    pub p: Vec<f64>,
    pub report: InnerReport,
}

/// Successive convex approximation for `max f(t, q, p)` starting at `p_init`.
pub fn dc_inner_solve(instance: &Instance, q: f64, p_init: &[f64], opts: &SolverOptions) -> InnerSolution {
    let mut p = project_powers(p_init, instance, opts);
    let mut t = min_feasible_t(&p, instance);
    let mut value = objective(t, q, &p, instance);
    let mut report = InnerReport {
        trajectory: vec![value],
        iterations: 0,
        hit_cap: false,
        line_search_failures: 0,
        max_kkt_residual: 0.0,
        max_activity_gap: 0.0,
    };

    loop {
        if report.iterations >= opts.max_inner {
            report.hit_cap = true;
            break;
        }
        report.iterations += 1;
        let sub = convex_subproblem(instance, q, &p, opts);
        report.line_search_failures += usize::from(sub.line_search_failed);
        report.max_kkt_residual = report.max_kkt_residual.max(sub.kkt_residual);
        report.max_activity_gap = report.max_activity_gap.max(sub.activity_gap);

        // The surrogate is tight at p, so its gain lower-bounds the true gain.
        let sur = Surrogate::new(instance, q, &p);
        let x_old: Vec<f64> = p.iter().zip(&instance.e).map(|(a, e)| a / e).collect();
        let x_new: Vec<f64> = sub.p.iter().zip(&instance.e).map(|(a, e)| a / e).collect();
        let gain = sur.delta(&x_old, &x_new, &sur.received(&p)) - q * (sub.t - t);
        if gain < 0.0 {
            break;
        }
        let next = objective(sub.t, q, &sub.p, instance);
        let improvement = next - value;
        p = sub.p;
        t = sub.t;
        value = next;
        report.trajectory.push(value);
        if improvement < opts.inner_tol {
            break;
        }
    }
    InnerSolution { t, p, report }
}

/// One Dinkelbach evaluation: `F(q)` with the maximizer found by the D.C. loop.
pub fn dinkelbach_f(instance: &Instance, q: f64, p_warm: &[f64], opts: &SolverOptions) -> (f64, InnerSolution) {
    let sol = dc_inner_solve(instance, q, p_warm, opts);
    let f = objective(sol.t, q, &sol.p, instance);
    (f, sol)
}

/// Starting powers for the first Dinkelbach iteration.
pub fn initial_powers(instance: &Instance, opts: &SolverOptions) -> Vec<f64> {
    let pc = instance.params.circuit_power;
    let (_, t_hi) = t_bounds(instance, opts);
    let t0 = instance
        .e
        .iter()
        .map(|e| 1.0 + 2.0 * pc / e)
        .fold(2.0, f64::max)
        .min(t_hi);
    let frac = match opts.init {
        InitRule::EqualSplit => 0.5,
        InitRule::ZeroPlusEpsilon => 1e-6,
    };
    instance
        .e
        .iter()
        .map(|e| frac * ((t0 - 1.0) * e - pc).max(0.0))
        .collect()
}

/// One full Dinkelbach run on a fixed user set.
struct Run {
    t: f64,
    p: Vec<f64>,
    ratio: f64,
    q_trajectory: Vec<f64>,
    f_values: Vec<f64>,
    inner: Vec<InnerReport>,
    termination: Termination,
}

fn dinkelbach(sub: &Instance, p_init: &[f64], opts: &SolverOptions) -> Run {
    let mut q = opts.q_init;
    let mut p_warm = p_init.to_vec();
    let mut run = Run {
        t: 1.0,
        p: vec![0.0; sub.num_pairs()],
        ratio: q,
        q_trajectory: vec![q],
        f_values: Vec::new(),
        inner: Vec::new(),
        termination: Termination::MaxOuter,
    };
    for _ in 0..opts.max_outer {
        let (f, sol) = dinkelbach_f(sub, q, &p_warm, opts);
        let hit_cap = sol.report.hit_cap;
        run.f_values.push(f);
        run.inner.push(sol.report);
        let ratio = model::sum_rate(&sol.p, sub) / sol.t;
        run.q_trajectory.push(ratio);
        run.t = sol.t;
        run.p.clone_from(&sol.p);
        run.ratio = ratio;
        if f.abs() <= opts.outer_tol {
            run.termination = if hit_cap {
                Termination::MaxInner
            } else {
                Termination::Converged
            };
            break;
        }
        q = ratio;
        p_warm = sol.p;
    }
    run
}

/// Dinkelbach iterations around the D.C. inner loop.
///
/// With `select_users`, pairs are then silenced one at a time while that
/// raises the throughput: a silent transmitter draws no circuit power, so it
/// no longer forces a long harvesting phase or interferes with the others.
pub fn solve(instance: &Instance, opts: &SolverOptions) -> Result<(Allocation, SolverReport)> {
    opts.validate()?;
    let start = Instant::now();
    let n = instance.num_pairs();
    let pc = instance.params.circuit_power;
    let t_cap = opts.t_cap();

    let (mut active, excluded): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| instance.e[i] > 0.0 && (t_cap - 1.0) * instance.e[i] - pc > 0.0);
    if active.is_empty() {
        let alloc = Allocation::from_tau1(0.0, vec![0.0; n]);
        return Ok((alloc, SolverReport::infeasible(n, start.elapsed().as_secs_f64())));
    }
    let full = instance.restrict(&active);
    let mut run = dinkelbach(&full, &initial_powers(&full, opts), opts);
    let mut silent = Vec::new();
    let mut solves = 1;

    while opts.select_users && active.len() > 1 {
        let mut best: Option<(usize, Run)> = None;
        for drop in 0..active.len() {
            let keep: Vec<usize> = (0..active.len()).filter(|&k| k != drop).collect();
            let users: Vec<usize> = keep.iter().map(|&k| active[k]).collect();
            let warm: Vec<f64> = keep.iter().map(|&k| run.p[k]).collect();
            let cand = dinkelbach(&instance.restrict(&users), &warm, opts);
            solves += 1;
            let bar = best.as_ref().map_or(run.ratio, |b| b.1.ratio);
            if cand.ratio > bar * (1.0 + SELECTION_RTOL) {
                best = Some((drop, cand));
            }
        }
        match best {
            Some((drop, cand)) => {
                silent.push(active.remove(drop));
                run = cand;
            }
            None => break,
        }
    }
    silent.sort_unstable();

    let sub = instance.restrict(&active);
    let sub_alloc = recover_allocation(run.t, &run.p, &sub)?;
    let mut p = vec![0.0; n];
    for (k, &i) in active.iter().enumerate() {
        p[i] = run.p[k];
    }
    let alloc = Allocation { p, ..sub_alloc };

    let mut notes = Vec::new();
    if !excluded.is_empty() {
        notes.push(format!("users {excluded:?} excluded: harvest cannot cover circuit power"));
    }
    if !silent.is_empty() {
        notes.push(format!("users {silent:?} silenced: throughput is higher without them"));
    }
    let failures: usize = run.inner.iter().map(|r| r.line_search_failures).sum();
    if failures > 0 {
        notes.push(format!("{failures} subproblem line searches stopped early"));
    }
    let k = run.f_values.len();
    let total_inner: usize = run.inner.iter().map(|r| r.iterations).sum();
    let dims = (sub.num_pairs() + 1) as f64;
    let report = SolverReport {
        objective: run.ratio,
        q_trajectory: run.q_trajectory,
        f_values: run.f_values,
        inner: run.inner,
        outer_iters: k,
        total_inner_iters: total_inner,
        termination: run.termination,
        wall_time: start.elapsed().as_secs_f64(),
        active_users: active,
        excluded_users: excluded,
        silent_users: silent,
        selection_solves: solves,
        complexity_estimate: k as f64 * total_inner as f64 * dims.powi(3),
        notes,
    };
    Ok((alloc, report))
}
