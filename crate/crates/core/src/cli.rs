//! Command-line front end.
//!
//! Every subcommand reads one JSON [`ExperimentConfig`], writes its artifacts
//! into an output directory together with a `manifest.json`, and exits with
//! 0 (success), 1 (configuration error), 2 (resource guard) or 3 (numerical
//! failure). A manifest can be passed back as `--config` to repeat a run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    check_condition, common_unflagged, estimate_te, fit_decay, linspace, optimize_schedule,
    scan_tau, TransitTime, CONDITION_TOL,
};
use crate::error::{Error, Result};
use crate::hamiltonian::{random_chain, ChainSpec, Model};
use crate::linalg::{CMatrix, CVector, C64};
use crate::protocol::{
    format_float, recovery_metrics, simulate_with_engine, AliceState, ChainEngine,
    ProtocolSchedule, TransferMap,
};
use crate::sector_basis::SiteLayout;

/// Decay fits are reported only for runs at least this long.
pub const MIN_FIT_STEPS: usize = 10;
const DEFAULT_GRID_POINTS: usize = 40;

#[derive(Debug, Parser)]
#[command(
    name = "memxfer",
    version,
    about = "Memory-assisted spin-chain state transfer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the protocol exactly and write the trajectory and transfer map.
    Simulate(CommonArgs),
    /// Check the factorization condition and scan ρ(T_n) over τ.
    Analyze(CommonArgs),
    /// Sweep disorder seeds and chain sizes.
    Sweep(CommonArgs),
    /// Greedily optimize the swap times.
    Optimize(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON); a manifest.json is accepted too.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps and grid scans.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the chain seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub chain: ChainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transit: Option<TransitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<OutputConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub model: Model,
    pub layout: SiteLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleConfig {
    Uniform { tau: f64, steps: usize },
    Taus(Vec<f64>),
    Optimize(OptimizeConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub steps: usize,
    /// Defaults to `[T_e / grid_points, T_e]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

/// Either a preset name (`all_up`, `plus_state`, `vacuum`) or a list of
/// `[pattern, [re, im]]` pairs. Patterns are bit strings written with
/// Alice's first site rightmost, e.g. `"01"` excites site 0 of two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputConfig {
    Preset(String),
    Amplitudes(Vec<(String, [f64; 2])>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauGrid {
    List(Vec<f64>),
    Linspace { linspace: (f64, f64, usize) },
}

impl TauGrid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            TauGrid::List(v) => v.clone(),
            TauGrid::Linspace {
                linspace: (lo, hi, n),
            } => linspace(*lo, *hi, *n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub tau_grid: TauGrid,
    /// Sectors for the condition check; defaults to `1 … N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sectors: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Sector written to `rho_vs_tau.csv`; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_sector: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    /// Defaults to the chain layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layouts: Option<Vec<SiteLayout>>,
    /// Step counts; defaults to the schedule's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<usize>>,
    /// Success probability defining `time_to_target`; defaults to 0.9.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

/// Grid for the transit-time estimate; defaults to `t_max = N / J̄`, `dt = 0.01 / J̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitConfig {
    pub t_max: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<String>>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    /// Parses a config, or the `config` field of a manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| config_err(format!("invalid JSON: {e}")))?;
        let value = match value.get("manifest_version") {
            Some(_) => value
                .get("config")
                .cloned()
                .ok_or_else(|| config_err("manifest has no config"))?,
            None => value,
        };
        serde_json::from_value(value).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn chain_spec(&self) -> Result<ChainSpec> {
        self.chain.spec_for(self.chain.layout, self.chain.seed)
    }

    pub fn alice_state(&self, n_a: usize) -> Result<AliceState> {
        match &self.input {
            None => AliceState::all_up(n_a),
            Some(input) => input.state(n_a),
        }
        .map_err(to_config)
    }

    pub fn transit(&self, spec: &ChainSpec) -> Result<TransitTime> {
        let (t_max, dt) = match &self.transit {
            Some(t) => (t.t_max, t.dt),
            None => {
                let mean = spec.couplings.iter().map(|j| j.abs()).sum::<f64>()
                    / spec.couplings.len() as f64;
                let unit = if mean > 0.0 { 1.0 / mean } else { 1.0 };
                (spec.sites() as f64 * unit, 0.01 * unit)
            }
        };
        estimate_te(spec, t_max, dt)
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Domain(m) | Error::Contract(m) => Error::Config(m),
        other => other,
    }
}

impl ChainConfig {
    pub fn spec_for(&self, layout: SiteLayout, seed: Option<u64>) -> Result<ChainSpec> {
        let mut spec = match (&self.couplings, &self.coupling_range) {
            (Some(c), None) => {
                if layout != self.layout {
                    return Err(config_err(
                        "explicit couplings fit only the configured layout",
                    ));
                }
                ChainSpec::new(layout, self.model, c.clone())
            }
            (None, Some([lo, hi])) => {
                random_chain(layout, self.model, (*lo, *hi), seed.unwrap_or(0))
            }
            _ => {
                return Err(config_err(
                    "chain needs exactly one of `couplings` or `coupling_range`",
                ))
            }
        }
        .map_err(to_config)?;
        if let Some(f) = &self.fields {
            spec = spec.with_fields(f.clone()).map_err(to_config)?;
        }
        Ok(spec)
    }
}

/// Parses a pattern like `"01"` (site 0 is the rightmost character).
fn parse_pattern(s: &str, n_a: usize) -> Result<u64> {
    if s.len() != n_a || !s.chars().all(|c| c == '0' || c == '1') {
        return Err(config_err(format!(
            "pattern {s:?} is not a bit string of length {n_a}"
        )));
    }
    Ok(u64::from_str_radix(s, 2).expect("validated bit string"))
}

pub fn format_pattern(x: u64, width: usize) -> String {
    format!("{x:0width$b}")
}

impl InputConfig {
    pub fn state(&self, n_a: usize) -> Result<AliceState> {
        match self {
            InputConfig::Preset(name) => match name.as_str() {
                "all_up" => AliceState::all_up(n_a),
                "plus_state" => AliceState::plus_state(n_a),
                "vacuum" => AliceState::basis(n_a, 0),
                other => Err(config_err(format!("unknown input preset {other:?}"))),
            },
            InputConfig::Amplitudes(pairs) => {
                let mut v = CVector::zeros(1 << n_a);
                for (p, [re, im]) in pairs {
                    v[parse_pattern(p, n_a)? as usize] += C64::new(*re, *im);
                }
                let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                let dev = (norm - 1.0).abs();
                if dev > 1e-3 || norm == 0.0 {
                    return Err(config_err(format!(
                        "input has squared norm {norm}; refusing to normalize"
                    )));
                }
                if dev > 1e-9 {
                    warn!("input squared norm {norm} differs from 1; normalizing");
                }
                v /= C64::new(norm.sqrt(), 0.0);
                AliceState::new(n_a, v)
            }
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Domain(_)
        | Error::Contract(_)
        | Error::Json(_)
        | Error::Io(_) => 1,
        Error::Resource(_) => 2,
        Error::Numerical { .. } | Error::Analysis(_) => 3,
    }
}

/// Parses arguments, runs the command, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command; returns the lines to print on standard output.
pub fn run(command: &Command) -> Result<Vec<String>> {
    let (args, kind) = match command {
        Command::Simulate(a) => (a, "simulate"),
        Command::Analyze(a) => (a, "analyze"),
        Command::Sweep(a) => (a, "sweep"),
        Command::Optimize(a) => (a, "optimize"),
    };
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.chain.seed = Some(seed);
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.outputs.as_ref().and_then(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| config_err(format!("cannot build worker pool: {e}")))?;
    let started = Instant::now();
    fs::create_dir_all(&out)?;
    let result = pool.install(|| match kind {
        "simulate" => cmd_simulate(&config, &out),
        "analyze" => cmd_analyze(&config, &out),
        "sweep" => cmd_sweep(&config, &out),
        _ => cmd_optimize(&config, &out),
    })?;
    write_manifest(
        &out,
        kind,
        &config,
        &result,
        started.elapsed().as_secs_f64(),
    )?;
    Ok(result.stdout)
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct CommandOutput {
    pub artifacts: Vec<String>,
    pub seeds: Vec<u64>,
    pub stdout: Vec<String>,
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: &ExperimentConfig,
    result: &CommandOutput,
    wall_clock: f64,
) -> Result<()> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut artifacts = result.artifacts.clone();
    artifacts.push("manifest.json".into());
    let manifest = json!({
        "manifest_version": 1,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "artifacts": artifacts,
        "seed_trail": result.seeds,
        "finished_unix": started,
        "wall_clock_seconds": wall_clock,
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn resolve_schedule(
    config: &ExperimentConfig,
    engine: &ChainEngine,
    input: &AliceState,
    steps_override: Option<usize>,
) -> Result<(ProtocolSchedule, Option<TransitTime>)> {
    let sched = config
        .schedule
        .as_ref()
        .ok_or_else(|| config_err("config has no schedule"))?;
    match sched {
        ScheduleConfig::Uniform { tau, steps } => Ok((
            ProtocolSchedule::uniform(*tau, steps_override.unwrap_or(*steps)).map_err(to_config)?,
            None,
        )),
        ScheduleConfig::Taus(t) => {
            let s = ProtocolSchedule::new(t.clone()).map_err(to_config)?;
            match steps_override {
                Some(n) if n != s.steps() => Err(config_err(
                    "explicit tau lists cannot be resized by a sweep",
                )),
                _ => Ok((s, None)),
            }
        }
        ScheduleConfig::Optimize(o) => {
            let transit = config.transit(engine.spec())?;
            let window = match o.window {
                Some([lo, hi]) => (lo, hi),
                None => (transit.t_e / o.grid_points.max(1) as f64, transit.t_e),
            };
            let steps = steps_override.unwrap_or(o.steps);
            let s = optimize_schedule(engine, input, steps, window, o.grid_points)
                .map_err(to_config)?;
            Ok((s, Some(transit)))
        }
    }
}

fn complex_json(z: C64) -> Value {
    json!([z.re, z.im])
}

fn matrix_json(m: &CMatrix) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| Value::Array(r.iter().map(|&z| complex_json(z)).collect()))
            .collect(),
    )
}

fn transfer_map_json(k: &TransferMap, n_a: usize) -> Value {
    let metrics = recovery_metrics(k);
    json!({
        "step": k.step,
        "n_b": k.n_b,
        "memory_sites": k.step * k.n_b,
        "truncation": "finite-step memory state, chain projected onto all-down",
        "rows": k.rows,
        "columns": (0..1u64 << n_a).map(|x| format_pattern(x, n_a)).collect::<Vec<_>>(),
        "matrix": matrix_json(&k.matrix),
        "column_norms_sqr": k.column_norms_sqr(),
        "singular_values": metrics.singular_values,
        "worst_case_fidelity_bound": metrics.worst_case_fidelity_bound,
        "decoder": matrix_json(&metrics.decoder),
    })
}

pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<CommandOutput> {
    let spec = config.chain_spec()?;
    let input = config.alice_state(spec.layout.n_a)?;
    let engine = ChainEngine::for_alice(&spec)?;
    let (schedule, _) = resolve_schedule(config, &engine, &input, None)?;
    let sim = simulate_with_engine(&engine, &schedule, &input)?;

    let mut csv = Vec::new();
    sim.record.write_csv(&mut csv)?;
    fs::write(out.join("trajectory.csv"), csv)?;
    let mut tm = transfer_map_json(&sim.transfer_map, spec.layout.n_a);
    tm["schedule"] = json!(schedule.taus());
    tm["couplings"] = json!(spec.couplings);
    fs::write(
        out.join("transfer_map.json"),
        serde_json::to_string_pretty(&tm)?,
    )?;

    let bound = recovery_metrics(&sim.transfer_map).worst_case_fidelity_bound;
    let success = sim
        .record
        .final_step()
        .map(|s| s.success_prob)
        .unwrap_or(1.0);
    Ok(CommandOutput {
        artifacts: vec!["trajectory.csv".into(), "transfer_map.json".into()],
        seeds: spec.rng_seed.into_iter().collect(),
        stdout: vec![
            format!("success_prob={}", format_float(success)),
            format!("fidelity_bound={}", format_float(bound)),
        ],
    })
}

pub fn cmd_analyze(config: &ExperimentConfig, out: &Path) -> Result<CommandOutput> {
    let spec = config.chain_spec()?;
    let analysis = config
        .analysis
        .as_ref()
        .ok_or_else(|| config_err("config has no analysis section"))?;
    let grid = analysis.tau_grid.points();
    if grid.is_empty() {
        return Err(config_err("tau grid is empty"));
    }
    let n = spec.sites();
    let tol = analysis.tol.unwrap_or(CONDITION_TOL);
    let sectors = analysis
        .sectors
        .clone()
        .unwrap_or_else(|| (1..=n).collect());
    let reports = sectors
        .iter()
        .map(|&s| check_condition(&spec, s, tol))
        .collect::<Result<Vec<_>>>()
        .map_err(to_config)?;

    let scan_sector = analysis.scan_sector.unwrap_or(1);
    let mut scanned: Vec<usize> = (1..=spec.layout.n_a).collect();
    if !scanned.contains(&scan_sector) {
        scanned.push(scan_sector);
    }
    let scans = scanned
        .iter()
        .map(|&s| scan_tau(&spec, s, &grid))
        .collect::<Result<Vec<_>>>()
        .map_err(to_config)?;
    let protocol_scans = &scans[..spec.layout.n_a];

    let curve = &scans[scanned.iter().position(|&s| s == scan_sector).unwrap()];
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["tau_or_step", "value", "flag"])
        .map_err(csv_err)?;
    for p in curve {
        w.write_record([
            format_float(p.tau),
            format_float(p.rho),
            u8::from(p.flagged).to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    fs::write(out.join("rho_vs_tau.csv"), bytes)?;

    let violated: Vec<usize> = reports.iter().filter(|r| r.violated).map(|r| r.n).collect();
    let report = json!({
        "couplings": spec.couplings,
        "tol": tol,
        "sectors": reports,
        "violated_sectors": violated,
        "scans": scanned.iter().zip(&scans).map(|(s, pts)| json!({"n": s, "points": pts})).collect::<Vec<_>>(),
        "common_unflagged_taus": common_unflagged(protocol_scans),
    });
    fs::write(
        out.join("condition.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(CommandOutput {
        artifacts: vec!["condition.json".into(), "rho_vs_tau.csv".into()],
        seeds: spec.rng_seed.into_iter().collect(),
        stdout: vec![format!(
            "violated_sectors={}",
            violated
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",")
        )],
    })
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub n: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub steps: usize,
    pub success_prob: f64,
    pub fitted_rate: Option<f64>,
    pub model_rate: f64,
    /// Elapsed protocol time when the success probability first reaches the target.
    pub time_to_target: Option<f64>,
}

fn sweep_run(
    config: &ExperimentConfig,
    layout: SiteLayout,
    seed: u64,
    steps: Option<usize>,
    target: f64,
) -> Result<SweepRow> {
    let spec = config.chain.spec_for(layout, Some(seed))?;
    let input = config.alice_state(layout.n_a)?;
    let engine = ChainEngine::for_alice(&spec)?;
    let (schedule, transit) = resolve_schedule(config, &engine, &input, steps)?;
    let sim = simulate_with_engine(&engine, &schedule, &input)?;
    let fitted_rate = if schedule.steps() >= MIN_FIT_STEPS {
        let t_e = match transit {
            Some(t) => t.t_e,
            None => config.transit(&spec)?.t_e,
        };
        match fit_decay(&sim.record, &layout, t_e) {
            Ok(m) => Some(m.fitted_rate),
            Err(e) => {
                warn!("seed {seed}: {e}");
                None
            }
        }
    } else {
        None
    };
    let mut elapsed = 0.0;
    let mut time_to_target = None;
    for s in &sim.record.steps {
        elapsed += s.tau;
        if s.success_prob >= target {
            time_to_target = Some(elapsed);
            break;
        }
    }
    Ok(SweepRow {
        seed,
        n: layout.total(),
        n_a: layout.n_a,
        n_b: layout.n_b,
        steps: schedule.steps(),
        success_prob: sim
            .record
            .final_step()
            .map(|s| s.success_prob)
            .unwrap_or(1.0),
        fitted_rate,
        model_rate: 1.0 - layout.n_b as f64 / layout.total() as f64,
        time_to_target,
    })
}

pub fn write_sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "seed",
        "N",
        "N_A",
        "N_B",
        "steps",
        "success_prob",
        "fitted_rate",
        "model_rate",
        "time_to_target",
    ])
    .map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(format_float).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.n.to_string(),
            r.n_a.to_string(),
            r.n_b.to_string(),
            r.steps.to_string(),
            format_float(r.success_prob),
            opt(r.fitted_rate),
            format_float(r.model_rate),
            opt(r.time_to_target),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> Result<CommandOutput> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| config_err("config has no sweep section"))?;
    if sweep.seeds.is_empty() {
        return Err(config_err("sweep needs at least one seed"));
    }
    let layouts = sweep
        .layouts
        .clone()
        .unwrap_or_else(|| vec![config.chain.layout]);
    let steps: Vec<Option<usize>> = match &sweep.steps {
        Some(s) => s.iter().map(|&n| Some(n)).collect(),
        None => vec![None],
    };
    let target = sweep.target.unwrap_or(0.9);
    let mut jobs = Vec::new();
    for &layout in &layouts {
        for &st in &steps {
            for &seed in &sweep.seeds {
                jobs.push((layout, st, seed));
            }
        }
    }
    // Rows come back in job order regardless of completion order.
    let rows = jobs
        .par_iter()
        .map(|&(layout, st, seed)| sweep_run(config, layout, seed, st, target))
        .collect::<Result<Vec<_>>>()?;
    fs::write(out.join("sweep.csv"), write_sweep_csv(&rows)?)?;
    Ok(CommandOutput {
        artifacts: vec!["sweep.csv".into()],
        seeds: sweep.seeds.clone(),
        stdout: vec![format!("runs={}", rows.len())],
    })
}

pub fn cmd_optimize(config: &ExperimentConfig, out: &Path) -> Result<CommandOutput> {
    let spec = config.chain_spec()?;
    let input = config.alice_state(spec.layout.n_a)?;
    let engine = ChainEngine::for_alice(&spec)?;
    let o = match &config.schedule {
        Some(ScheduleConfig::Optimize(o)) => o.clone(),
        _ => return Err(config_err("optimize needs an `optimize` schedule")),
    };
    let (schedule, transit) = resolve_schedule(config, &engine, &input, None)?;
    let sim = simulate_with_engine(&engine, &schedule, &input)?;
    let success = sim
        .record
        .final_step()
        .map(|s| s.success_prob)
        .unwrap_or(1.0);
    let doc = json!({
        "taus": schedule.taus(),
        "steps": schedule.steps(),
        "grid_points": o.grid_points,
        "window": o.window,
        "transit_time": transit.map(|t| t.t_e),
        "total_time": schedule.total_time(),
        "success_prob": success,
    });
    fs::write(
        out.join("schedule.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;
    Ok(CommandOutput {
        artifacts: vec!["schedule.json".into()],
        seeds: spec.rng_seed.into_iter().collect(),
        stdout: vec![
            format!("total_time={}", format_float(schedule.total_time())),
            format!("success_prob={}", format_float(success)),
        ],
    })
}
