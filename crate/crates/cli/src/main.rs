//! `apdsim`: sweeps, attack runs, configuration audits and calibration from the
//! command line.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 security finding, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use apdsim::attacks::{build_waveform, evaluate_attack, AttackReport, AttackScenario};
use apdsim::countermeasures::{audit_config, monitor, AuditLimits, AuditReport, MonitorConfig, MonitorVerdict};
use apdsim::experiments::{
    calibrate, run_sweep, write_sweep_csv, Anchor, CalibrationOptions, Scale, SweepSpec, SweepVariable,
};
use apdsim::sim::{simulate_trace, Record, SimConfig};
use apdsim::{ApdParams, ModelError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

const SEED_ENV: &str = "APDSIM_SEED";

#[derive(Parser, Debug)]
#[command(name = "apdsim", version, about = "Gated InGaAs APD blinding simulator")]
struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep CW power or bias resistance and write CSV.
    Sweep(SweepArgs),
    /// Run one attack scenario against a detector configuration.
    Attack(AttackArgs),
    /// Check a configuration against the zero-count-gap rules.
    Audit(AuditArgs),
    /// Fit model constants to measured anchors.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variable {
    Power,
    Rbias,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Log,
    Linear,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Parameter file (JSON) or built-in profile name (apd1, apd2).
    #[arg(long)]
    params: String,
    #[arg(long, value_enum)]
    variable: Variable,
    #[arg(long)]
    min: f64,
    #[arg(long)]
    max: f64,
    #[arg(long)]
    points: usize,
    #[arg(long, default_value_t = 1_000_000)]
    gates: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Grid spacing (default: log for power, linear for rbias).
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// CW power for the per-row columns of an rbias sweep (W).
    #[arg(long, default_value_t = 10e-6)]
    probe_power: f64,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long)]
    params: String,
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    monitor_margin: f64,
    /// Run without the photocurrent monitor.
    #[arg(long)]
    no_monitor: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Trace length (s); scenario default when absent.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    params: String,
    #[arg(long, default_value_t = AuditLimits::default().r_bias_max)]
    rbias_max: f64,
    #[arg(long, default_value_t = AuditLimits::default().discrimination_headroom)]
    headroom: f64,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    params: String,
    /// Anchor file: JSON list of anchors.
    #[arg(long)]
    anchors: PathBuf,
    /// Where to write the fitted parameter file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    arguments: Vec<String>,
    params_file: String,
    scenario_file: Option<PathBuf>,
    seed: u64,
    output_path: PathBuf,
    tool_version: String,
}

#[derive(Debug, Serialize)]
struct TraceSummary {
    gates: u64,
    clicks: u64,
    clicks_outside_window: u64,
    count_rate: f64,
    mean_photocurrent: f64,
    max_photocurrent: f64,
    temperature_peak: f64,
    exceeds_optical_rating: bool,
    exceeds_current_rating: bool,
}

#[derive(Debug, Serialize)]
struct AttackOutput {
    attack_success: bool,
    monitor_alarmed: bool,
    audit_passed: bool,
    report: AttackReport,
    monitor: Option<MonitorVerdict>,
    audit: AuditReport,
    trace: TraceSummary,
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    converged: bool,
    cost: f64,
    fitted: Vec<apdsim::experiments::FittedConstant>,
    residuals: Vec<apdsim::experiments::AnchorResidual>,
    responsivity_gain: Option<f64>,
}

/// Failure classes, mapped one-to-one onto exit codes.
enum Failure {
    Usage(anyhow::Error),
    Finding,
    Numeric(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn model_failure(e: ModelError) -> Failure {
    if e.is_numeric() {
        Failure::Numeric(e.into())
    } else {
        Failure::Usage(e.into())
    }
}

fn load_params(spec: &str) -> anyhow::Result<ApdParams> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(p) = ApdParams::profile(spec) {
            return Ok(p);
        }
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading parameter file {spec}"))?;
    ApdParams::from_json(&text).with_context(|| format!("parsing parameter file {spec}"))
}

fn resolve_seed(flag: u64) -> anyhow::Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_manifest(command: &str, params: &str, scenario: Option<&Path>, seed: u64, out: &Path) -> anyhow::Result<()> {
    let manifest = RunManifest {
        command: command.into(),
        arguments: std::env::args().skip(1).collect(),
        params_file: params.into(),
        scenario_file: scenario.map(Path::to_path_buf),
        seed,
        output_path: out.to_path_buf(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    let path = sidecar(out, ".manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let params = load_params(&args.params)?;
    let seed = resolve_seed(args.seed)?;
    if !(args.min < args.max) {
        return Err(anyhow!("--min ({}) must be less than --max ({})", args.min, args.max).into());
    }
    if args.points < 2 {
        return Err(anyhow!("--points must be at least 2").into());
    }
    if args.gates < 10_000 {
        return Err(anyhow!("--gates must be at least 10000").into());
    }
    let variable = match args.variable {
        Variable::Power => SweepVariable::Power,
        Variable::Rbias => SweepVariable::RBias,
    };
    let mut spec = SweepSpec::new(variable, (args.min, args.max), args.points, params);
    if let Some(scale) = args.scale {
        spec.scale = match scale {
            ScaleArg::Log => Scale::Log,
            ScaleArg::Linear => Scale::Linear,
        };
    }
    if spec.scale == Scale::Log && args.min <= 0.0 {
        return Err(anyhow!("--min must be positive for a log sweep").into());
    }
    spec.gates_per_point = args.gates;
    spec.seed = seed;
    spec.probe_power = args.probe_power;

    let rows = run_sweep(&spec).map_err(model_failure)?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, variable, &mut buf).map_err(|e| Failure::Usage(e.into()))?;
    fs::write(&args.out, buf).with_context(|| format!("writing {}", args.out.display()))?;
    write_manifest("sweep", &args.params, None, seed, &args.out)?;
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> Result<(), Failure> {
    let params = load_params(&args.params)?;
    let seed = resolve_seed(args.seed)?;
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario file {}", args.scenario.display()))?;
    let scenario: AttackScenario = serde_json::from_str(&text)
        .with_context(|| format!("parsing scenario file {}", args.scenario.display()))?;
    if !args.no_monitor && !(args.monitor_margin >= 1.0) {
        return Err(anyhow!("--monitor-margin must be at least 1").into());
    }
    let duration = args.duration.unwrap_or_else(|| scenario.default_duration(&params));
    let config = SimConfig { record: Record::All, ..SimConfig::default() };

    let waveform = build_waveform(&scenario, &params, duration, config.time_step).map_err(model_failure)?;
    let trace = simulate_trace(&params, &waveform, seed, &config).map_err(model_failure)?;
    let report = evaluate_attack(&scenario, &trace, &params).map_err(model_failure)?;
    let verdict = if args.no_monitor {
        None
    } else {
        let cfg = MonitorConfig { margin_factor: args.monitor_margin, ..MonitorConfig::default() };
        Some(monitor(&trace, &cfg, &params).map_err(model_failure)?)
    };
    let audit = audit_config(&params, &AuditLimits::default());
    let output = AttackOutput {
        attack_success: report.success,
        monitor_alarmed: verdict.map(|v| v.alarmed).unwrap_or(false),
        audit_passed: audit.passed,
        trace: TraceSummary {
            gates: trace.gates,
            clicks: trace.clicks,
            clicks_outside_window: trace.clicks_outside_window,
            count_rate: trace.count_rate,
            mean_photocurrent: trace.mean_photocurrent,
            max_photocurrent: trace.max_photocurrent,
            temperature_peak: trace.temperature_peak,
            exceeds_optical_rating: trace.exceeds_optical_rating,
            exceeds_current_rating: trace.exceeds_current_rating,
        },
        report,
        monitor: verdict,
        audit,
    };
    let json = serde_json::to_string_pretty(&output).map_err(|e| Failure::Usage(e.into()))? + "\n";
    fs::write(&args.out, json).with_context(|| format!("writing {}", args.out.display()))?;
    write_manifest("attack", &args.params, Some(&args.scenario), seed, &args.out)?;
    if output.attack_success && !output.monitor_alarmed {
        eprintln!("attack {} succeeded without an alarm", scenario.name());
        return Err(Failure::Finding);
    }
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<(), Failure> {
    let params = load_params(&args.params)?;
    let limits = AuditLimits { r_bias_max: args.rbias_max, discrimination_headroom: args.headroom };
    let report = audit_config(&params, &limits);
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::Usage(e.into()))?);
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Finding)
    }
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    let params = load_params(&args.params)?;
    let text = fs::read_to_string(&args.anchors)
        .with_context(|| format!("reading anchor file {}", args.anchors.display()))?;
    let anchors: Vec<Anchor> = serde_json::from_str(&text)
        .with_context(|| format!("parsing anchor file {}", args.anchors.display()))?;
    if anchors.is_empty() {
        return Err(anyhow!("anchor file {} lists no anchors", args.anchors.display()).into());
    }
    let result = calibrate(&params, &anchors, &CalibrationOptions::default()).map_err(model_failure)?;
    fs::write(&args.out, result.params.to_json() + "\n")
        .with_context(|| format!("writing {}", args.out.display()))?;
    let report = CalibrationReport {
        converged: result.converged,
        cost: result.cost,
        fitted: result.fitted,
        residuals: result.residuals,
        responsivity_gain: result.responsivity_gain,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Usage(e.into()))?;
    fs::write(sidecar(&args.out, ".report.json"), json.clone() + "\n")
        .with_context(|| format!("writing report next to {}", args.out.display()))?;
    write_manifest("calibrate", &args.params, None, 0, &args.out)?;
    println!("{json}");
    if report.converged {
        Ok(())
    } else {
        Err(Failure::Numeric(anyhow!("calibration did not reach the anchor tolerances")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(anyhow!("--threads must be at least 1").into());
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.into()))?;
    }
    match &cli.command {
        Command::Sweep(a) => cmd_sweep(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Finding) => ExitCode::from(2),
        Err(Failure::Numeric(e)) => {
            eprintln!("numeric failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
