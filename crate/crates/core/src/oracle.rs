//! Reference solvers for small instances, independent of [`crate::solver`].
//!
//! - [`oracle_n1`]: exact single-pair optimum. With one pair there is no
//!   interference and causality is tight at the optimum, so the problem is the
//!   1-D quasi-concave maximization of `log2(1 + ((t-1) e - p_c) g / s) / t`.
//! - [`oracle_grid`]: exhaustive search over `tau1` and per-user power fractions.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Golden};
use crate::model::{self, Instance};

/// Default cap on `t = 1 / tau1`, matching the solver's `tau1_min = 1e-4`.
pub const DEFAULT_T_CAP: f64 = 1e4;

const SCAN_POINTS: usize = 10_000;

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `tol * max(1, |a|, |b|)`.
/// Returns `(x_max, f_max)`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol * a.abs().max(b.abs()).max(1.0) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct N1Solution {
    pub t: f64,
    pub p: f64,
    /// Throughput in bits/s/Hz.
    pub value: f64,
}

struct SinglePair {
    e: f64,
    pc: f64,
    snr_per_watt: f64,
    t_lo: f64,
    t_cap: f64,
}

impl SinglePair {
    fn new(instance: &Instance, t_cap: f64) -> Result<Self> {
        if instance.num_pairs() != 1 {
            return Err(Error::OracleSize {
                expected: 1,
                got: instance.num_pairs(),
            });
        }
        let e = instance.e[0];
        let pc = instance.params.circuit_power;
        Ok(Self {
            e,
            pc,
            snr_per_watt: instance.g_direct[0] / instance.params.noise_power,
            t_lo: 1.0 + pc / e,
            t_cap,
        })
    }

    fn power(&self, t: f64) -> f64 {
        ((t - 1.0) * self.e - self.pc).max(0.0)
    }

    fn value(&self, t: f64) -> f64 {
        (self.power(t) * self.snr_per_watt).ln_1p() / LN_2 / t
    }

    /// Sign-carrying part of d(value)/dt: `t L'(t) - L(t)` with `L` in nats.
    fn slope(&self, t: f64) -> f64 {
        let snr = self.power(t) * self.snr_per_watt;
        t * self.e * self.snr_per_watt / (1.0 + snr) - snr.ln_1p()
    }

    fn feasible(&self) -> bool {
        self.e > 0.0 && self.t_lo < self.t_cap
    }

    /// Scan points, dense near `t_lo` where the optimum usually sits.
    fn scan_grid(&self) -> Vec<f64> {
        let span = self.t_cap - self.t_lo;
        let mut ts = vec![self.t_lo];
        ts.extend((0..SCAN_POINTS).map(|k| {
            let frac = 10f64.powf(-12.0 + 12.0 * k as f64 / (SCAN_POINTS - 1) as f64);
            self.t_lo + span * frac
        }));
        ts
    }

    /// Bracket around the single sign change of the slope, after checking
    /// that the slope changes sign at most once on the scan.
    fn bracket(&self) -> Result<(f64, f64)> {
        let ts = self.scan_grid();
        let signs: Vec<bool> = ts.iter().map(|&t| self.slope(t) > 0.0).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        if changes > 1 || (changes == 1 && !signs[0]) {
            return Err(Error::Format(format!(
                "single-pair objective is not unimodal on the scan ({changes} sign changes)"
            )));
        }
        match signs.iter().position(|&s| !s) {
            None => Ok((ts[ts.len() - 2], self.t_cap)),
            Some(0) => Ok((self.t_lo, ts[1])),
            Some(k) => Ok((ts[k - 1], ts[k])),
        }
    }

    fn solution(&self, t: f64) -> N1Solution {
        N1Solution {
            t,
            p: self.power(t),
            value: self.value(t),
        }
    }
}

fn empty_n1(t_cap: f64) -> N1Solution {
    N1Solution {
        t: t_cap,
        p: 0.0,
        value: 0.0,
    }
}

/// Exact single-pair optimum by golden-section search over `t`.
pub fn oracle_n1(instance: &Instance, t_cap: f64) -> Result<N1Solution> {
    let pair = SinglePair::new(instance, t_cap)?;
    if !pair.feasible() {
        return Ok(empty_n1(t_cap));
    }
    let (a, b) = pair.bracket()?;
    let (t, _) = golden_section_max(|t| pair.value(t), a, b, 1e-15);
    Ok(pair.solution(t))
}

/// Same optimum found by bisection on the sign of the derivative.
pub fn oracle_n1_bisection(instance: &Instance, t_cap: f64) -> Result<N1Solution> {
    let pair = SinglePair::new(instance, t_cap)?;
    if !pair.feasible() {
        return Ok(empty_n1(t_cap));
    }
    let (mut a, mut b) = pair.bracket()?;
    if pair.slope(b) > 0.0 {
        return Ok(pair.solution(b));
    }
    if pair.slope(a) <= 0.0 {
        return Ok(pair.solution(a));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if pair.slope(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(pair.solution(0.5 * (a + b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    Linear,
    Log,
}

/// Power values are fractions of each user's budget at the given `tau1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub tau1_points: usize,
    pub power_points_per_user: usize,
    pub scale: GridScale,
    /// Decades spanned by the log power grid below the budget (a zero point is always included).
    pub log_decades: f64,
    pub budget: u64,
}

impl GridSpec {
    pub fn new(tau1_points: usize, power_points_per_user: usize) -> Self {
        Self {
            tau1_points,
            power_points_per_user,
            ..Self::default()
        }
    }

    /// `tau1_points` and `power_points_per_user` both set to `points`.
    pub fn uniform(points: usize) -> Self {
        Self::new(points, points)
    }

    fn tau1_values(&self) -> Vec<f64> {
        (1..=self.tau1_points).map(|i| i as f64 / self.tau1_points as f64).collect()
    }

    fn power_fractions(&self) -> Vec<f64> {
        let p = self.power_points_per_user;
        match self.scale {
            GridScale::Linear => (0..p).map(|j| j as f64 / (p - 1) as f64).collect(),
            GridScale::Log => std::iter::once(0.0)
                .chain((1..p).map(|j| {
                    let k = (p - 1 - j) as f64 / (p - 2).max(1) as f64;
                    10f64.powf(-self.log_decades * k)
                }))
                .collect(),
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            tau1_points: 200,
            power_points_per_user: 200,
            scale: GridScale::Log,
            log_decades: 6.0,
            budget: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub tau1: f64,
    pub p: Vec<f64>,
    pub value: f64,
    /// Largest drop from the best point to any grid neighbour, summed over
    /// the `N + 1` grid axes: the reported bound on how far the continuous
    /// optimum can sit above `value`.
    pub modulus: f64,
    pub evaluations: u128,
}

struct Grid<'a> {
    inst: &'a Instance,
    taus: Vec<f64>,
    fracs: Vec<f64>,
}

impl Grid<'_> {
    fn dims(&self) -> usize {
        self.inst.num_pairs()
    }

    /// Throughput at grid index `(i, js)`. A user whose harvest cannot cover
    /// circuit power at this `tau1` stays silent.
    fn eval(&self, i: usize, js: &[usize], p: &mut [f64]) -> f64 {
        let tau1 = self.taus[i];
        let pc = self.inst.params.circuit_power;
        for (n, &j) in js.iter().enumerate() {
            let cap = (1.0 / tau1 - 1.0) * self.inst.e[n] - pc;
            p[n] = if cap < 0.0 { 0.0 } else { self.fracs[j] * cap };
        }
        tau1 * model::sum_rate(p, self.inst)
    }

    /// Best point in the `tau1 = taus[i]` slice, ties going to the lowest index.
    fn best_in_row(&self, i: usize) -> (f64, Vec<usize>) {
        let n = self.dims();
        let k = self.fracs.len();
        let mut js = vec![0usize; n];
        let mut p = vec![0.0; n];
        let mut best = (f64::NEG_INFINITY, js.clone());
        loop {
            let v = self.eval(i, &js, &mut p);
            if v > best.0 {
                best = (v, js.clone());
            }
            // Odometer increment, last user fastest.
            let mut d = n;
            loop {
                if d == 0 {
                    return best;
                }
                d -= 1;
                js[d] += 1;
                if js[d] < k {
                    break;
                }
                js[d] = 0;
            }
        }
    }
}

/// Exhaustive grid search over `tau1` and per-user power fractions.
pub fn oracle_grid(instance: &Instance, spec: &GridSpec) -> Result<GridResult> {
    if spec.tau1_points < 1 || spec.power_points_per_user < 2 {
        return Err(Error::param("grid", "need >= 1 tau1 point and >= 2 power points"));
    }
    let n = instance.num_pairs() as u32;
    let requested = (spec.tau1_points as u128).saturating_mul((spec.power_points_per_user as u128).saturating_pow(n));
    if requested > u128::from(spec.budget) {
        return Err(Error::GridBudget {
            requested,
            budget: u128::from(spec.budget),
        });
    }
    let grid = Grid {
        inst: instance,
        taus: spec.tau1_values(),
        fracs: spec.power_fractions(),
    };

    let best = (0..grid.taus.len())
        .into_par_iter()
        .map(|i| {
            let (v, js) = grid.best_in_row(i);
            (v, i, js)
        })
        .reduce_with(|a, b| {
            // Larger value wins; ties resolve to the lower (i, js) index.
            if b.0 > a.0 || (b.0 == a.0 && (b.1, &b.2) < (a.1, &a.2)) {
                b
            } else {
                a
            }
        });

    let (value, i, js) = best.expect("tau1 grid is nonempty");
    if value <= 0.0 {
        // Nobody can transmit anywhere on the grid.
        return Ok(GridResult {
            tau1: 0.0,
            p: vec![0.0; instance.num_pairs()],
            value: 0.0,
            modulus: 0.0,
            evaluations: requested,
        });
    }

    let mut p = vec![0.0; instance.num_pairs()];
    grid.eval(i, &js, &mut p);
    let modulus = neighbour_modulus(&grid, i, &js, value);
    Ok(GridResult {
        tau1: grid.taus[i],
        p,
        value,
        modulus,
        evaluations: requested,
    })
}

fn neighbour_modulus(grid: &Grid<'_>, i: usize, js: &[usize], value: f64) -> f64 {
    let mut scratch = vec![0.0; js.len()];
    let mut drop_at = |i: usize, js: &[usize]| value - grid.eval(i, js, &mut scratch);

    let mut total = 0.0;
    let mut axis = 0.0f64;
    for ni in [i.checked_sub(1), Some(i + 1).filter(|&k| k < grid.taus.len())].into_iter().flatten() {
        axis = axis.max(drop_at(ni, js));
    }
    total += axis;
    for d in 0..js.len() {
        let mut axis = 0.0f64;
        for nj in [js[d].checked_sub(1), Some(js[d] + 1).filter(|&k| k < grid.fracs.len())]
            .into_iter()
            .flatten()
        {
            let mut moved = js.to_vec();
            moved[d] = nj;
            axis = axis.max(drop_at(i, &moved));
        }
        total += axis;
    }
    total
}

/// Committed small instances, each a seeded draw at the default parameters:
/// `(name, pairs, seed)`.
pub const FIXTURE_SEEDS: [(&str, usize, u64); 1] = [("n2_small", 2, 7)];

/// Grid resolution of the committed golden values.
pub const FIXTURE_GRID: usize = 200;

/// Committed files, `(name, instance TOML, golden TOML)`.
const COMMITTED: [(&str, &str, &str); 1] = [(
    "n2_small",
    include_str!("../fixtures/n2_small.toml"),
    include_str!("../fixtures/n2_small.golden.toml"),
)];

/// The committed instance called `name`.
pub fn fixture_instance(name: &str) -> Result<Instance> {
    let (_, text, _) = COMMITTED
        .iter()
        .find(|f| f.0 == name)
        .ok_or_else(|| Error::param("fixture", format!("unknown fixture `{name}`")))?;
    io::instance_from_toml(text)
}

/// The committed golden file for `name`, if any.
pub fn committed_golden(name: &str) -> Option<&'static str> {
    COMMITTED.iter().find(|f| f.0 == name).map(|f| f.2)
}

/// Golden grid value of `instance` at `points` per axis.
pub fn golden(instance: &Instance, points: usize) -> Result<Golden> {
    let spec = GridSpec::uniform(points);
    Ok(Golden::new(instance, &spec, &oracle_grid(instance, &spec)?))
}

/// Draws every fixture from its seed and computes its golden value:
/// `(name, instance TOML, golden TOML)`.
pub fn generate_fixtures() -> Result<Vec<(&'static str, String, String)>> {
    FIXTURE_SEEDS
        .iter()
        .map(|&(name, n, seed)| {
            let params = model::SystemParams {
                num_pairs: n,
                ..model::SystemParams::default()
            };
            let inst = model::realize(&params, seed)?.1;
            let gold = golden(&inst, FIXTURE_GRID)?;
            Ok((name, io::instance_to_toml(&inst)?, gold.to_toml()?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemParams;

    fn single(e: f64, g: f64, pc: f64) -> Instance {
        let params = SystemParams {
            circuit_power: pc,
            num_pairs: 1,
            ..SystemParams::default()
        };
        Instance::from_parts(params, vec![e], vec![g], vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_section_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        assert!(fx.abs() < 1e-12);
    }

    #[test]
    fn scan_and_bisection_agree() {
        let inst = single(1e-6, 1e-6, 1e-7);
        let a = oracle_n1(&inst, DEFAULT_T_CAP).unwrap();
        let b = oracle_n1_bisection(&inst, DEFAULT_T_CAP).unwrap();
        assert!((a.value - b.value).abs() <= 1e-8 * a.value);
        // Causality is tight by construction.
        assert!(((a.t - 1.0) * 1e-6 - 1e-7 - a.p).abs() < 1e-18);
    }

    #[test]
    fn instantaneous_harvest_pushes_tau1_to_one() {
        let mut last_t = f64::INFINITY;
        for e in [1e-6, 1e-4, 1e-2, 1.0] {
            let sol = oracle_n1(&single(e, 1e-6, 0.0), DEFAULT_T_CAP).unwrap();
            assert!(sol.t < last_t);
            last_t = sol.t;
        }
        assert!(last_t < 1.2, "t = {last_t}");
    }

    #[test]
    fn n1_infeasible_is_zero() {
        let sol = oracle_n1(&single(1e-12, 1e-6, 1.0), DEFAULT_T_CAP).unwrap();
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn n1_rejects_multi_user() {
        let params = SystemParams {
            num_pairs: 2,
            ..SystemParams::default()
        };
        let inst = Instance::from_parts(params, vec![1.0; 2], vec![1.0; 2], vec![vec![0.0; 2]; 2]).unwrap();
        assert!(matches!(oracle_n1(&inst, DEFAULT_T_CAP), Err(Error::OracleSize { .. })));
    }

    #[test]
    fn grid_agrees_with_n1_oracle() {
        let inst = single(1e-6, 1e-6, 1e-7);
        let exact = oracle_n1(&inst, DEFAULT_T_CAP).unwrap();
        let g = oracle_grid(&inst, &GridSpec::new(2000, 50)).unwrap();
        assert!(g.value <= exact.value + 1e-12);
        assert!(exact.value - g.value <= g.modulus, "{} vs {} (mod {})", g.value, exact.value, g.modulus);
    }

    #[test]
    fn infeasible_grid_is_zero() {
        let g = oracle_grid(&single(1e-12, 1e-6, 1.0), &GridSpec::uniform(50)).unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn grid_budget_is_enforced() {
        let params = SystemParams {
            num_pairs: 3,
            ..SystemParams::default()
        };
        let inst = Instance::from_parts(params, vec![1.0; 3], vec![1.0; 3], vec![vec![0.0; 3]; 3]).unwrap();
        let spec = GridSpec {
            budget: 1000,
            ..GridSpec::uniform(20)
        };
        assert!(matches!(oracle_grid(&inst, &spec), Err(Error::GridBudget { .. })));
    }

    #[test]
    fn refinement_never_decreases_value() {
        let params = SystemParams {
            num_pairs: 2,
            ..SystemParams::default()
        };
        for seed in 0..4 {
            let inst = crate::model::realize(&params, seed).unwrap().1;
            for scale in [GridScale::Linear, GridScale::Log] {
                let (coarse_p, fine_p) = match scale {
                    GridScale::Linear => (11, 21),
                    GridScale::Log => (12, 22),
                };
                let coarse = GridSpec {
                    scale,
                    ..GridSpec::new(20, coarse_p)
                };
                let fine = GridSpec {
                    scale,
                    ..GridSpec::new(40, fine_p)
                };
                let a = oracle_grid(&inst, &coarse).unwrap().value;
                let b = oracle_grid(&inst, &fine).unwrap().value;
                assert!(b >= a, "seed {seed} {scale:?}: {b} < {a}");
            }
        }
    }

    #[test]
    fn grid_silences_starved_users() {
        // User 1 harvests almost nothing; forcing it to transmit would need tau1 near 0.
        let params = SystemParams {
            num_pairs: 2,
            ..SystemParams::default()
        };
        let inst = Instance::from_parts(params, vec![1e-6, 1e-12], vec![1e-6, 1e-6], vec![vec![0.0, 1e-9], vec![1e-9, 0.0]]).unwrap();
        let alone = oracle_n1(&inst.restrict(&[0]), DEFAULT_T_CAP).unwrap();
        let grid = oracle_grid(&inst, &GridSpec::uniform(200)).unwrap();
        assert_eq!(grid.p[1], 0.0);
        assert!(grid.value <= alone.value + 1e-12);
        assert!(grid.value >= alone.value - grid.modulus);
    }

    #[test]
    fn committed_fixtures_regenerate_exactly() {
        for (name, text, gold) in generate_fixtures().unwrap() {
            let (_, c_text, c_gold) = COMMITTED.iter().find(|c| c.0 == name).unwrap();
            assert_eq!(&text, c_text, "{name} instance");
            assert_eq!(&gold, c_gold, "{name} golden");
            let committed = Golden::from_toml(c_gold).unwrap();
            let inst = fixture_instance(name).unwrap();
            assert_eq!(committed.instance_hash, io::instance_hash(&inst));
            assert!(committed.matches(&golden(&inst, FIXTURE_GRID).unwrap()));
        }
        assert!(fixture_instance("missing").is_err());
    }
}
