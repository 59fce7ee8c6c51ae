//! Monte-Carlo sweeps over one system parameter.
//!
//! Every `(sweep value, realization)` cell gets its own child seed. All
//! requested schemes run on the same draw, so scheme differences are paired.
//! Cells run in parallel; rows come back in cell order, so the CSV does not
//! depend on the thread count.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{oet_instance, tdma_solve};
use crate::error::{Error, Result};
use crate::io::instance_hash;
use crate::model::{self, Instance, SystemParams};
use crate::solver::{self, Allocation, SolverOptions, SolverReport};

pub const CSV_HEADER: [&str; 12] = [
    "scheme",
    "sweep_var",
    "sweep_value",
    "realization",
    "seed",
    "throughput_bps_hz",
    "tau0",
    "tau1",
    "outer_iters",
    "inner_iters",
    "wall_time_s",
    "termination",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    PsPower,
    CircuitPower,
    NumAntennas,
    NumPairs,
}

impl SweepVar {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVar::PsPower => "ps_power",
            SweepVar::CircuitPower => "circuit_power",
            SweepVar::NumAntennas => "num_antennas",
            SweepVar::NumPairs => "num_pairs",
        }
    }

    /// `base` with this variable set to `value`.
    pub fn apply(&self, base: &SystemParams, value: f64) -> Result<SystemParams> {
        let count = |name| {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::param(name, format!("sweep value {value} is not a positive integer")))
            }
        };
        let mut p = base.clone();
        match self {
            SweepVar::PsPower => p.ps_power = value,
            SweepVar::CircuitPower => p.circuit_power = value,
            SweepVar::NumAntennas => p.num_antennas = count("num_antennas")?,
            SweepVar::NumPairs => p.num_pairs = count("num_pairs")?,
        }
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    Tdma,
    Oet,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Proposed, Scheme::Tdma, Scheme::Oet];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Tdma => "tdma",
            Scheme::Oet => "oet",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sweep_var: SweepVar,
    pub values: Vec<f64>,
    pub realizations: usize,
    pub schemes: Vec<Scheme>,
    pub master_seed: u64,
    /// Fill the `wall_time_s` column. Off by default so output is reproducible byte for byte.
    pub record_wall_time: bool,
    pub params: SystemParams,
    pub solver: SolverOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sweep_var: SweepVar::PsPower,
            values: (1..=6).map(f64::from).collect(),
            realizations: 100,
            schemes: Scheme::ALL.to_vec(),
            master_seed: 0,
            record_wall_time: false,
            params: SystemParams::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.realizations < 1 {
            return Err(Error::param("realizations", "must be >= 1"));
        }
        if self.realizations > u32::MAX as usize || self.values.len() > u32::MAX as usize {
            return Err(Error::param("realizations", "at most 2^32 cells per axis"));
        }
        if self.values.is_empty() {
            return Err(Error::param("values", "sweep needs at least one value"));
        }
        if self.schemes.is_empty() {
            return Err(Error::param("schemes", "need at least one scheme"));
        }
        for &v in &self.values {
            self.sweep_var.apply(&self.params, v)?;
        }
        self.solver.validate()
    }
}

/// splitmix64 finalizer; a bijection on `u64`.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one sweep cell. Distinct `(value_index, realization)` pairs below
/// `2^32` map to distinct seeds for any master seed.
pub fn child_seed(master_seed: u64, value_index: usize, realization: usize) -> u64 {
    let cell = ((value_index as u64) << 32) | (realization as u64 & 0xffff_ffff);
    mix(mix(master_seed) ^ cell)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub scheme: Scheme,
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub realization: usize,
    pub seed: u64,
    pub throughput: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub wall_time: Option<f64>,
    /// Solver termination, `"error"` when the cell could not be evaluated.
    pub termination: String,
    /// Hash of the beamformed instance; equal across schemes of one cell.
    pub instance_hash: String,
    pub error: Option<String>,
}

impl RecordRow {
    fn failed(scheme: Scheme, cell: &Cell, err: &Error) -> Self {
        Self {
            scheme,
            sweep_var: cell.var,
            sweep_value: cell.value,
            realization: cell.realization,
            seed: cell.seed,
            throughput: 0.0,
            tau0: 0.0,
            tau1: 0.0,
            outer_iters: 0,
            inner_iters: 0,
            wall_time: None,
            termination: "error".into(),
            instance_hash: String::new(),
            error: Some(err.to_string()),
        }
    }

    pub fn is_infeasible(&self) -> bool {
        self.termination == solver::Termination::Infeasible.as_str()
    }
}

struct Cell {
    var: SweepVar,
    value: f64,
    realization: usize,
    seed: u64,
}

/// A row together with the solve behind it (absent for TDMA and failed cells).
#[derive(Debug, Clone)]
pub struct DetailedRow {
    pub row: RecordRow,
    pub solution: Option<Solution>,
}

/// The instance a scheme actually solved, with its allocation and report.
#[derive(Debug, Clone)]
pub struct Solution {
    pub instance: Instance,
    pub allocation: Allocation,
    pub report: SolverReport,
}

fn run_cell(cfg: &ExperimentConfig, params: &SystemParams, cell: &Cell) -> Vec<DetailedRow> {
    let failed = |s: Scheme, e: &Error| DetailedRow {
        row: RecordRow::failed(s, cell, e),
        solution: None,
    };
    let (channels, inst) = match model::realize(params, cell.seed) {
        Ok(x) => x,
        Err(e) => return cfg.schemes.iter().map(|&s| failed(s, &e)).collect(),
    };
    let hash = instance_hash(&inst);
    cfg.schemes
        .iter()
        .map(|&scheme| {
            let start = Instant::now();
            let outcome = match scheme {
                Scheme::Proposed => solver::solve(&inst, &cfg.solver).map(|(a, r)| {
                    let thr = model::sum_throughput(&a, &inst);
                    (thr, a.tau0, a.tau1, Some((inst.clone(), a, r)))
                }),
                Scheme::Tdma => {
                    let (a, thr) = tdma_solve(&inst);
                    Ok((thr, a.tau0, a.wit_time(), None))
                }
                Scheme::Oet => oet_instance(&channels, params).and_then(|oet| {
                    let (a, r) = solver::solve(&oet, &cfg.solver)?;
                    let thr = model::sum_throughput(&a, &oet);
                    Ok((thr, a.tau0, a.tau1, Some((oet, a, r))))
                }),
            };
            let elapsed = start.elapsed().as_secs_f64();
            match outcome {
                Ok((throughput, tau0, tau1, solved)) => {
                    let (outer_iters, inner_iters, term) = match &solved {
                        Some((_, _, r)) => (r.outer_iters, r.total_inner_iters, r.termination.as_str()),
                        None => (0, 0, solver::Termination::Converged.as_str()),
                    };
                    DetailedRow {
                        row: RecordRow {
                            scheme,
                            sweep_var: cell.var,
                            sweep_value: cell.value,
                            realization: cell.realization,
                            seed: cell.seed,
                            throughput,
                            tau0,
                            tau1,
                            outer_iters,
                            inner_iters,
                            wall_time: cfg.record_wall_time.then_some(elapsed),
                            termination: term.into(),
                            instance_hash: hash.clone(),
                            error: None,
                        },
                        solution: solved.map(|(instance, allocation, report)| Solution {
                            instance,
                            allocation,
                            report,
                        }),
                    }
                }
                Err(e) => {
                    let mut d = failed(scheme, &e);
                    d.row.instance_hash = hash.clone();
                    d
                }
            }
        })
        .collect()
}

/// Runs every scheme on every cell. Rows are ordered by sweep value, then
/// realization, then the configured scheme order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RecordRow>> {
    Ok(run_experiment_detailed(cfg)?.into_iter().map(|d| d.row).collect())
}

/// [`run_experiment`], keeping each solver's instance, allocation and report.
pub fn run_experiment_detailed(cfg: &ExperimentConfig) -> Result<Vec<DetailedRow>> {
    cfg.validate()?;
    let params: Vec<SystemParams> = cfg
        .values
        .iter()
        .map(|&v| cfg.sweep_var.apply(&cfg.params, v))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..cfg.values.len())
        .flat_map(|i| (0..cfg.realizations).map(move |r| (i, r)))
        .collect();
    let rows: Vec<Vec<DetailedRow>> = cells
        .par_iter()
        .map(|&(i, r)| {
            let cell = Cell {
                var: cfg.sweep_var,
                value: cfg.values[i],
                realization: r,
                seed: child_seed(cfg.master_seed, i, r),
            };
            run_cell(cfg, &params[i], &cell)
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_csv<W: Write>(writer: W, rows: &[RecordRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scheme.as_str().to_string(),
            r.sweep_var.as_str().to_string(),
            r.sweep_value.to_string(),
            r.realization.to_string(),
            r.seed.to_string(),
            r.throughput.to_string(),
            r.tau0.to_string(),
            r.tau1.to_string(),
            r.outer_iters.to_string(),
            r.inner_iters.to_string(),
            r.wall_time.map(|t| t.to_string()).unwrap_or_default(),
            r.termination.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation over `sqrt(n)`).
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub count: usize,
    pub throughput: Stats,
    pub tau1: Stats,
}

/// Per `(scheme, sweep value)` statistics, in order of first appearance.
pub fn summarize(rows: &[RecordRow]) -> Vec<SummaryRow> {
    let mut order = Vec::new();
    let mut groups: HashMap<(Scheme, u64), (Vec<f64>, Vec<f64>)> = HashMap::new();
    for r in rows {
        let key = (r.scheme, r.sweep_value.to_bits());
        let g = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (Vec::new(), Vec::new())
        });
        g.0.push(r.throughput);
        g.1.push(r.tau1);
    }
    order
        .into_iter()
        .map(|key| {
            let (thr, tau1) = &groups[&key];
            SummaryRow {
                scheme: key.0,
                sweep_value: f64::from_bits(key.1),
                count: thr.len(),
                throughput: Stats::of(thr),
                tau1: Stats::of(tau1),
            }
        })
        .collect()
}

/// Mean of `scheme` at `value`, if present.
pub fn mean_throughput(summary: &[SummaryRow], scheme: Scheme, value: f64) -> Option<f64> {
    summary
        .iter()
        .find(|s| s.scheme == scheme && s.sweep_value == value)
        .map(|s| s.throughput.mean)
}

pub fn write_summary_csv<W: Write>(writer: W, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scheme",
        "sweep_value",
        "count",
        "throughput_mean",
        "throughput_stderr",
        "throughput_min",
        "throughput_max",
        "tau1_mean",
        "tau1_stderr",
        "tau1_min",
        "tau1_max",
    ])?;
    for s in summary {
        let (t, u) = (&s.throughput, &s.tau1);
        let fields = [t.mean, t.stderr, t.min, t.max, u.mean, u.stderr, u.min, u.max];
        let mut rec = vec![s.scheme.to_string(), s.sweep_value.to_string(), s.count.to_string()];
        rec.extend(fields.iter().map(f64::to_string));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pair counts used by both table presets.
pub const TABLE_PAIRS: [usize; 3] = [3, 6, 9];

/// Sum throughput versus antenna count, one config per pair count.
pub fn table1_configs(realizations: usize, master_seed: u64) -> Vec<(usize, ExperimentConfig)> {
    TABLE_PAIRS
        .iter()
        .map(|&n| {
            let cfg = ExperimentConfig {
                sweep_var: SweepVar::NumAntennas,
                values: vec![1.0, 2.0, 3.0, 5.0, 10.0, 15.0],
                realizations,
                schemes: vec![Scheme::Proposed],
                master_seed,
                params: SystemParams {
                    num_pairs: n,
                    ..SystemParams::default()
                },
                ..ExperimentConfig::default()
            };
            (n, cfg)
        })
        .collect()
}

/// WIT time versus PS power, one config per pair count.
pub fn table2_configs(realizations: usize, master_seed: u64) -> Vec<(usize, ExperimentConfig)> {
    TABLE_PAIRS
        .iter()
        .map(|&n| {
            let cfg = ExperimentConfig {
                sweep_var: SweepVar::PsPower,
                values: (1..=6).map(f64::from).collect(),
                realizations,
                schemes: vec![Scheme::Proposed],
                master_seed,
                params: SystemParams {
                    num_pairs: n,
                    ..SystemParams::default()
                },
                ..ExperimentConfig::default()
            };
            (n, cfg)
        })
        .collect()
}

/// Which statistic a pivot table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Throughput,
    Tau1,
}

/// Rows keyed by pair count, one column per sweep value, cells the mean of `metric`
/// for the proposed scheme.
pub fn write_pivot_csv<W: Write>(writer: W, var: SweepVar, tables: &[(usize, Vec<SummaryRow>)], metric: Metric) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let values: Vec<f64> = tables
        .first()
        .map(|(_, s)| s.iter().filter(|r| r.scheme == Scheme::Proposed).map(|r| r.sweep_value).collect())
        .unwrap_or_default();
    let mut header = vec!["num_pairs".to_string()];
    header.extend(values.iter().map(|v| format!("{var}={v}")));
    w.write_record(&header)?;
    for (n, summary) in tables {
        let mut rec = vec![n.to_string()];
        for &v in &values {
            let cell = summary
                .iter()
                .find(|s| s.scheme == Scheme::Proposed && s.sweep_value == v)
                .map(|s| match metric {
                    Metric::Throughput => s.throughput.mean,
                    Metric::Tau1 => s.tau1.mean,
                });
            rec.push(cell.map(|x| format!("{x:.4}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A matplotlib script plotting mean throughput and mean `tau1` per scheme
/// from a summary CSV written by [`write_summary_csv`].
pub fn plot_script(summary_csv: &str, var: SweepVar) -> String {
    let log_x = if var == SweepVar::CircuitPower { "ax.set_xscale(\"log\")\n    " } else { "" };
    format!(
        r#"import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{summary_csv}"
series = defaultdict(list)
with open(path, newline="") as f:
    for row in csv.DictReader(f):
        series[row["scheme"]].append(
            (float(row["sweep_value"]), float(row["throughput_mean"]), float(row["tau1_mean"]))
        )

fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for scheme, pts in series.items():
    pts.sort()
    xs = [p[0] for p in pts]
    axes[0].plot(xs, [p[1] for p in pts], marker="o", label=scheme)
    axes[1].plot(xs, [p[2] for p in pts], marker="o", label=scheme)
for ax, label in zip(axes, ["sum throughput (bits/s/Hz)", "WIT time tau1"]):
    ax.set_xlabel("{var}")
    ax.set_ylabel(label)
    {log_x}ax.grid(True)
    ax.legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn small(realizations: usize) -> ExperimentConfig {
        ExperimentConfig {
            values: vec![1.0, 3.0],
            realizations,
            master_seed: 7,
            ..ExperimentConfig::default()
        }
    }

    fn csv_of(rows: &[RecordRow]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_csv(&mut buf, rows).unwrap();
        buf
    }

    #[test]
    fn defaults_echo_the_reference_setup() {
        let cfg = ExperimentConfig::default();
        let p = &cfg.params;
        assert_eq!(cfg.realizations, 100);
        assert_eq!((p.conversion_eff, p.circuit_power, p.ps_power), (0.5, 1e-7, 1.0));
        assert_eq!((p.num_antennas, p.area_side, p.bandwidth), (10, 50.0, 1e6));
        assert!((p.noise_power - model::noise_power_watts(-170.0, 1e6)).abs() < 1e-27);
    }

    #[test]
    fn csv_is_identical_across_runs_and_thread_counts() {
        let cfg = small(3);
        let a = csv_of(&run_experiment(&cfg).unwrap());
        let b = csv_of(&run_experiment(&cfg).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = csv_of(&pool.install(|| run_experiment(&cfg)).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
        let header = String::from_utf8(a).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, CSV_HEADER.join(","));
    }

    #[test]
    fn schemes_share_the_draw() {
        let rows = run_experiment(&small(2)).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 3);
        for cell in rows.chunks(3) {
            assert!(cell.iter().all(|r| r.instance_hash == cell[0].instance_hash && r.seed == cell[0].seed));
            assert!(cell.iter().all(|r| r.error.is_none()));
            for r in cell.iter().filter(|r| r.scheme != Scheme::Tdma) {
                assert_eq!(r.tau0 + r.tau1, 1.0);
            }
        }
    }

    #[test]
    fn child_seeds_do_not_collide() {
        for master in [0, 1, u64::MAX] {
            let seeds: HashSet<u64> = (0..50)
                .flat_map(|i| (0..200).map(move |r| child_seed(master, i, r)))
                .collect();
            assert_eq!(seeds.len(), 50 * 200);
        }
    }

    proptest! {
        #[test]
        fn child_seed_is_injective(m in any::<u64>(), a in (0usize..1 << 32, 0usize..1 << 32), b in (0usize..1 << 32, 0usize..1 << 32)) {
            prop_assume!(a != b);
            prop_assert_ne!(child_seed(m, a.0, a.1), child_seed(m, b.0, b.1));
        }
    }

    #[test]
    fn summary_of_one_row() {
        let rows = run_experiment(&ExperimentConfig {
            values: vec![2.0],
            realizations: 1,
            schemes: vec![Scheme::Tdma],
            ..ExperimentConfig::default()
        })
        .unwrap();
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].throughput.mean, rows[0].throughput);
        assert_eq!(s[0].throughput.stderr, 0.0);
        assert_eq!(s[0].tau1.min, s[0].tau1.max);
    }

    #[test]
    fn stats_match_hand_values() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!((s.min, s.max), (1.0, 4.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |cfg: ExperimentConfig| cfg.validate().is_err();
        assert!(bad(ExperimentConfig { realizations: 0, ..small(1) }));
        assert!(bad(ExperimentConfig { values: vec![], ..small(1) }));
        assert!(bad(ExperimentConfig {
            sweep_var: SweepVar::NumAntennas,
            values: vec![2.5],
            ..small(1)
        }));
        assert!(bad(ExperimentConfig { values: vec![-1.0], ..small(1) }));
    }

    #[test]
    fn wall_time_only_when_requested() {
        let cfg = ExperimentConfig {
            record_wall_time: true,
            ..small(1)
        };
        assert!(run_experiment(&cfg).unwrap().iter().all(|r| r.wall_time.is_some()));
        assert!(run_experiment(&small(1)).unwrap().iter().all(|r| r.wall_time.is_none()));
    }

    #[test]
    fn presets_cover_the_tables() {
        let t1 = table1_configs(100, 1);
        assert_eq!(t1.len(), 3);
        assert_eq!(t1.iter().map(|c| c.1.values.len()).sum::<usize>(), 18);
        let t2 = table2_configs(100, 1);
        assert!(t2.iter().all(|(n, c)| c.params.num_pairs == *n && c.sweep_var == SweepVar::PsPower));
    }

    #[test]
    fn plot_script_references_the_summary() {
        let s = plot_script("fig.csv", SweepVar::CircuitPower);
        assert!(s.contains("fig.csv") && s.contains("set_xscale"));
    }
}
