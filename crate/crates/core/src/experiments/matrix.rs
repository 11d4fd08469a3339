use serde::{Deserialize, Serialize};

use crate::attacks::{build_waveform, evaluate_attack, AttackReport, AttackScenario};
use crate::countermeasures::{audit_config, monitor, AuditLimits, AuditReport, MonitorConfig, MonitorVerdict};
use crate::error::{ModelError, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::params::ApdParams;
use crate::sim::{simulate_cw, simulate_trace, Record, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixOptions {
    pub seed: u64,
    pub time_step: f64,
    pub audit_limits: AuditLimits,
    pub execution: Execution,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions {
            seed: 0,
            time_step: SimConfig::default().time_step,
            audit_limits: AuditLimits::default(),
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub config: usize,
    pub scenario: usize,
    pub attack_success: bool,
    pub monitor_alarmed: bool,
    pub audit_passed: bool,
    pub report: AttackReport,
    pub verdict: MonitorVerdict,
    pub audit: AuditReport,
}

/// Runs every scenario against every configuration. Cell `(c, s)` uses random
/// stream `c·|scenarios| + s`.
pub fn run_attack_matrix(
    configs: &[ApdParams],
    scenarios: &[AttackScenario],
    monitor_cfg: &MonitorConfig,
    options: &MatrixOptions,
) -> Result<Vec<MatrixCell>> {
    if configs.is_empty() || scenarios.is_empty() {
        return Err(ModelError::InvalidInput("attack matrix needs configs and scenarios".into()));
    }
    let n = configs.len() * scenarios.len();
    try_map_indexed(options.execution, n, |cell| {
        let (c, s) = (cell / scenarios.len(), cell % scenarios.len());
        let run = || -> Result<MatrixCell> {
            let params = &configs[c];
            let scenario = &scenarios[s];
            let waveform = build_waveform(scenario, params, scenario.default_duration(params), options.time_step)?;
            let sim = SimConfig {
                time_step: options.time_step,
                record: Record::All,
                stream: cell as u64,
                ..SimConfig::default()
            };
            let trace = simulate_trace(params, &waveform, options.seed, &sim)?;
            let report = evaluate_attack(scenario, &trace, params)?;
            let verdict = monitor(&trace, monitor_cfg, params)?;
            let audit = audit_config(params, &options.audit_limits);
            Ok(MatrixCell {
                config: c,
                scenario: s,
                attack_success: report.success,
                monitor_alarmed: verdict.alarmed,
                audit_passed: audit.passed,
                report,
                verdict,
                audit,
            })
        };
        run().map_err(|e| ModelError::MatrixCell { config: c, scenario: s, source: Box::new(e) })
    })
}

/// Charge per registered click measured from a simulated single-photon-regime
/// run: mean photocurrent divided by count rate.
pub fn calibrate_click_charge(params: &ApdParams, power: f64, gates: u64, seed: u64) -> Result<f64> {
    let cw = simulate_cw(params, power, gates, seed, 0)?;
    if cw.clicks == 0 {
        return Err(ModelError::InvalidInput(format!("no clicks at {power:e} W to calibrate against")));
    }
    Ok(cw.mean_photocurrent / cw.count_rate)
}
