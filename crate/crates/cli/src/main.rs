use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use toml::{Table, Value};

use wpcn::harness::{self, ExperimentConfig, Metric, SummaryRow, SweepVar};
use wpcn::io::{self, Golden};
use wpcn::oracle::{self, FIXTURE_GRID};
use wpcn::{model, solver, Instance, Termination};

#[derive(Parser)]
#[command(name = "wpcn", version, about = "Harvest-time and power allocation for wireless powered D2D pairs")]
struct Cli {
    /// 0 = results only, 1 = echo the effective config, 2 = per-run details.
    #[arg(long, short, global = true, default_value_t = 0)]
    verbosity: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance, generated from a seed or read from a fixture.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Number of D2D pairs.
        #[arg(long)]
        n: Option<usize>,
        /// Fixture name or path to an instance TOML file.
        #[arg(long)]
        fixture: Option<String>,
    },
    /// Parameter sweep driven by the config file.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Sum throughput versus antenna count for 3, 6 and 9 pairs.
    Table1 {
        #[command(flatten)]
        common: Common,
    },
    /// WIT time versus PS power for 3, 6 and 9 pairs.
    Table2 {
        #[command(flatten)]
        common: Common,
    },
    /// Grid (and, for one pair, exact) reference values on a fixture.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fixture: String,
        /// Grid points per axis.
        #[arg(long, default_value_t = FIXTURE_GRID)]
        grid: usize,
    },
    /// Regenerate the committed fixture instances and golden values.
    Fixtures {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set params.ps_power=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Directory receiving every output file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Exit with status 3 if any run is infeasible.
    #[arg(long)]
    strict: bool,
}

enum Failure {
    Config(anyhow::Error),
    Infeasible(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let v = cli.verbosity;
    match cli.command {
        Command::Solve { common, n, fixture } => cmd_solve(&common, n, fixture.as_deref(), v),
        Command::Sweep { common } => cmd_sweep(&common, v),
        Command::Table1 { common } => cmd_table(&common, v, Preset::One),
        Command::Table2 { common } => cmd_table(&common, v, Preset::Two),
        Command::Oracle { common, fixture, grid } => cmd_oracle(&common, &fixture, grid),
        Command::Fixtures { common } => cmd_fixtures(&common),
    }
}

/// Sets `a.b.c = value` in `root`, creating intermediate tables.
fn set_dotted(root: &mut Table, key: &str, value: Value) -> anyhow::Result<()> {
    let mut parts = key.split('.').peekable();
    let mut table = root;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            bail!("empty segment in key `{key}`");
        }
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{part}` in `{key}` is not a table"))?;
    }
    unreachable!("split yields at least one segment")
}

/// A TOML literal, or a bare string when it does not parse as one.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Config file, then `--set` overrides, then dedicated flags.
fn load_config(common: &Common, base: ExperimentConfig) -> Result<ExperimentConfig, Failure> {
    let cfg_err = |e: anyhow::Error| Failure::Config(e);
    let Value::Table(mut table) = Value::try_from(&base).map_err(|e| cfg_err(e.into()))? else {
        unreachable!("a struct serializes to a table")
    };
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(cfg_err)?;
        let file: Table = toml::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(cfg_err)?;
        merge(&mut table, file);
    }
    for o in &common.overrides {
        let (k, raw) = o
            .split_once('=')
            .ok_or_else(|| cfg_err(anyhow!("override `{o}` is not KEY=VALUE")))?;
        set_dotted(&mut table, k.trim(), parse_value(raw.trim())).map_err(cfg_err)?;
    }
    let mut cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| cfg_err(anyhow!("{}", e.message())))?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(r) = common.realizations {
        cfg.realizations = r;
    }
    Ok(cfg)
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

fn echo(cfg: &ExperimentConfig, verbosity: u8) {
    if verbosity >= 1 {
        match toml::to_string(cfg) {
            Ok(s) => eprintln!("# effective config\n{s}"),
            Err(e) => eprintln!("# effective config unavailable: {e}"),
        }
    }
}

fn output_dir(common: &Common, default: &str) -> anyhow::Result<PathBuf> {
    let dir = common.output.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn resolve_fixture(name: &str) -> Result<Instance, Failure> {
    let path = Path::new(name);
    if path.is_file() {
        return io::read_instance(path)
            .with_context(|| format!("reading fixture {}", path.display()))
            .map_err(Failure::Config);
    }
    oracle::fixture_instance(name).map_err(|e| Failure::Config(e.into()))
}

fn cmd_solve(common: &Common, n: Option<usize>, fixture: Option<&str>, verbosity: u8) -> Outcome {
    let mut cfg = load_config(common, ExperimentConfig::default())?;
    if let Some(n) = n {
        cfg.params.num_pairs = n;
    }
    cfg.params.validate().map_err(|e| Failure::Config(e.into()))?;
    cfg.solver.validate().map_err(|e| Failure::Config(e.into()))?;
    echo(&cfg, verbosity);

    let instance = match fixture {
        Some(f) => resolve_fixture(f)?,
        None => model::realize(&cfg.params, cfg.master_seed).map_err(anyhow::Error::from)?.1,
    };
    let (alloc, report) = solver::solve(&instance, &cfg.solver).map_err(anyhow::Error::from)?;
    let text = io::report_to_toml(&alloc, &report).map_err(anyhow::Error::from)?;
    println!("throughput_bps_hz = {}", model::sum_throughput(&alloc, &instance));
    println!("tau0 + tau1 = {}", alloc.tau0 + alloc.tau1);
    let causal = alloc.check_causality(&instance, report.active_users.iter().copied());
    println!("causality = {}", if causal.is_ok() { "satisfied" } else { "violated" });
    if verbosity >= 2 {
        println!("{text}");
    } else {
        println!("{}", io::report_to_toml(&alloc, &trimmed(&report)).map_err(anyhow::Error::from)?);
    }

    if common.output.is_some() {
        let dir = output_dir(common, ".")?;
        write(&dir.join("instance.toml"), io::instance_to_toml(&instance).map_err(anyhow::Error::from)?)?;
        write(&dir.join("report.toml"), &text)?;
        let mut buf = Vec::new();
        io::write_trajectory_csv(&mut buf, &report).map_err(anyhow::Error::from)?;
        write(&dir.join("trajectory.csv"), buf)?;
    }
    if common.strict && report.termination == Termination::Infeasible {
        return Err(Failure::Infeasible("no pair can cover its circuit power".into()));
    }
    Ok(())
}

/// Report without the per-iteration inner diagnostics.
fn trimmed(report: &solver::SolverReport) -> solver::SolverReport {
    solver::SolverReport {
        inner: vec![],
        ..report.clone()
    }
}

fn sweep_outputs(dir: &Path, stem: &str, cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>, Failure> {
    let rows = harness::run_experiment(cfg).map_err(|e| Failure::Config(e.into()))?;
    let mut csv = Vec::new();
    harness::write_csv(&mut csv, &rows).map_err(anyhow::Error::from)?;
    write(&dir.join(format!("{stem}.csv")), csv)?;
    let summary = harness::summarize(&rows);
    let mut sum_csv = Vec::new();
    harness::write_summary_csv(&mut sum_csv, &summary).map_err(anyhow::Error::from)?;
    let summary_name = format!("{stem}_summary.csv");
    write(&dir.join(&summary_name), sum_csv)?;
    write(&dir.join(format!("{stem}_plot.py")), harness::plot_script(&summary_name, cfg.sweep_var))?;

    let errors: Vec<_> = rows.iter().filter_map(|r| r.error.as_deref()).collect();
    if let Some(first) = errors.first() {
        eprintln!("{} rows failed; first: {first}", errors.len());
    }
    let infeasible = rows.iter().filter(|r| r.is_infeasible()).count();
    if infeasible > 0 {
        eprintln!("{infeasible} rows infeasible");
    }
    Ok(summary)
}

fn strict_check(common: &Common, dir: &Path, stem: &str) -> Outcome {
    if !common.strict {
        return Ok(());
    }
    let text = fs::read_to_string(dir.join(format!("{stem}.csv"))).map_err(anyhow::Error::from)?;
    let bad = text.lines().skip(1).filter(|l| l.ends_with(",infeasible")).count();
    if bad > 0 {
        return Err(Failure::Infeasible(format!("{bad} rows in {stem}.csv")));
    }
    Ok(())
}

fn print_summary(var: SweepVar, summary: &[SummaryRow]) {
    println!("{:<9} {:>14} {:>12} {:>10} {:>8}", "scheme", var.as_str(), "throughput", "stderr", "tau1");
    for s in summary {
        println!(
            "{:<9} {:>14} {:>12.4} {:>10.4} {:>8.4}",
            s.scheme.as_str(),
            s.sweep_value,
            s.throughput.mean,
            s.throughput.stderr,
            s.tau1.mean
        );
    }
}

fn cmd_sweep(common: &Common, verbosity: u8) -> Outcome {
    let cfg = load_config(common, ExperimentConfig::default())?;
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    echo(&cfg, verbosity);
    let dir = output_dir(common, "out")?;
    let summary = sweep_outputs(&dir, "sweep", &cfg)?;
    print_summary(cfg.sweep_var, &summary);
    strict_check(common, &dir, "sweep")
}

#[derive(Clone, Copy)]
enum Preset {
    One,
    Two,
}

fn cmd_table(common: &Common, verbosity: u8, which: Preset) -> Outcome {
    // Only the seed, the realization count and the solver tolerances are
    // taken from the config; the sweep itself is fixed.
    let cfg = load_config(common, ExperimentConfig::default())?;
    cfg.solver.validate().map_err(|e| Failure::Config(e.into()))?;
    let (stem, var, presets, metric) = match which {
        Preset::One => (
            "table1",
            SweepVar::NumAntennas,
            harness::table1_configs(cfg.realizations, cfg.master_seed),
            Metric::Throughput,
        ),
        Preset::Two => (
            "table2",
            SweepVar::PsPower,
            harness::table2_configs(cfg.realizations, cfg.master_seed),
            Metric::Tau1,
        ),
    };
    let dir = output_dir(common, "out")?;
    let mut tables = Vec::new();
    for (n, mut preset) in presets {
        preset.solver = cfg.solver.clone();
        preset.validate().map_err(|e| Failure::Config(e.into()))?;
        echo(&preset, verbosity);
        let part = format!("{stem}_n{n}");
        let summary = sweep_outputs(&dir, &part, &preset)?;
        strict_check(common, &dir, &part)?;
        tables.push((n, summary));
    }
    let mut pivot = Vec::new();
    harness::write_pivot_csv(&mut pivot, var, &tables, metric).map_err(anyhow::Error::from)?;
    write(&dir.join(format!("{stem}.csv")), &pivot)?;
    print!("{}", String::from_utf8_lossy(&pivot));
    Ok(())
}

fn cmd_oracle(common: &Common, fixture: &str, grid: usize) -> Outcome {
    let instance = resolve_fixture(fixture)?;
    let g = oracle::golden(&instance, grid).map_err(|e| Failure::Config(e.into()))?;
    println!("instance_hash = {}", g.instance_hash);
    println!("grid = {grid}");
    println!("value = {}", g.value);
    println!("value_bits = {}", g.value_bits);
    println!("tau1 = {}", g.tau1);
    println!("p = {:?}", g.p);
    println!("modulus = {}", g.modulus);
    if instance.num_pairs() == 1 {
        let exact = oracle::oracle_n1(&instance, oracle::DEFAULT_T_CAP).map_err(anyhow::Error::from)?;
        println!("exact = {}", exact.value);
    }
    if let Some(committed) = oracle::committed_golden(fixture) {
        let committed = Golden::from_toml(committed).map_err(anyhow::Error::from)?;
        if committed.grid == g.grid && committed.instance_hash == g.instance_hash {
            if !committed.matches(&g) {
                return Err(Failure::Other(anyhow!(
                    "golden mismatch: committed {} computed {}",
                    committed.value_bits,
                    g.value_bits
                )));
            }
            println!("golden = match");
        }
    }
    if common.output.is_some() {
        let dir = output_dir(common, ".")?;
        write(&dir.join("oracle.toml"), g.to_toml().map_err(anyhow::Error::from)?)?;
    }
    Ok(())
}

fn cmd_fixtures(common: &Common) -> Outcome {
    let dir = output_dir(common, "fixtures")?;
    for (name, text, golden) in oracle::generate_fixtures().map_err(anyhow::Error::from)? {
        write(&dir.join(format!("{name}.toml")), text)?;
        write(&dir.join(format!("{name}.golden.toml")), golden)?;
        println!("wrote {name}");
    }
    Ok(())
}
