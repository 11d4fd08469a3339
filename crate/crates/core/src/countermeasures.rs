//! Countermeasures: photocurrent monitoring, configuration audit and the
//! zero-count gap search.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::params::ApdParams;
use crate::physics::{click_probability, mean_photon_number, photon_energy, WAVELENGTH_1550};
use crate::sim::{simulate_cw, TraceResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Alarm when the windowed photocurrent exceeds this multiple of the
    /// photocurrent expected at the reference count rate.
    pub margin_factor: f64,
    /// Averaging window (s).
    pub window: f64,
    /// Reference count rate (Hz); the gate rate when absent.
    pub reference_count_rate: Option<f64>,
    /// Charge per registered click (C); `charge_per_avalanche` when absent.
    pub charge_per_click: Option<f64>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { margin_factor: 2.0, window: 1e-3, reference_count_rate: None, charge_per_click: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub alarmed: bool,
    /// Start of the first window over threshold (s).
    pub first_alarm_time: Option<f64>,
    /// Largest windowed photocurrent divided by the threshold.
    pub peak_ratio: f64,
    pub threshold: f64,
}

/// Photocurrent a detector registering `count_rate` single-photon clicks draws.
pub fn expected_photocurrent(count_rate: f64, charge_per_click: f64) -> f64 {
    count_rate * charge_per_click
}

/// Flags windows whose mean photocurrent is anomalously high for the count rate
/// a single-photon detector can reach.
pub fn monitor(trace: &TraceResult, config: &MonitorConfig, params: &ApdParams) -> Result<MonitorVerdict> {
    if !(config.margin_factor >= 1.0) {
        return Err(ModelError::InvalidInput(format!(
            "margin_factor must be at least 1, got {}",
            config.margin_factor
        )));
    }
    if !(config.window > 0.0) {
        return Err(ModelError::InvalidInput("monitor window must be positive".into()));
    }
    let rate = config.reference_count_rate.unwrap_or(params.gate_rate);
    let charge = config.charge_per_click.unwrap_or(params.charge_per_avalanche);
    let threshold = config.margin_factor * expected_photocurrent(rate, charge);

    let samples = &trace.photocurrent_samples;
    let n = ((config.window / trace.sample_interval).round() as usize).clamp(1, samples.len().max(1));
    let mut best = f64::NEG_INFINITY;
    let mut first = None;
    let mut sum: f64 = samples.iter().take(n).sum();
    for start in 0..=samples.len().saturating_sub(n) {
        if start > 0 {
            sum += samples[start + n - 1] - samples[start - 1];
        }
        let mean = sum / n as f64;
        if mean > best {
            best = mean;
        }
        if first.is_none() && mean >= threshold {
            first = Some(start as f64 * trace.sample_interval);
        }
    }
    let peak_ratio = if threshold > 0.0 { best.max(0.0) / threshold } else { f64::INFINITY };
    Ok(MonitorVerdict { alarmed: first.is_some(), first_alarm_time: first, peak_ratio, threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditLimits {
    pub r_bias_max: f64,
    pub discrimination_headroom: f64,
}

impl Default for AuditLimits {
    fn default() -> Self {
        AuditLimits { r_bias_max: 20e3, discrimination_headroom: 1.5 }
    }
}

pub const R_BIAS_MAX: &str = "R_BIAS_MAX";
pub const L_HEADROOM: &str = "L_HEADROOM";
pub const L_BELOW_CAPACITIVE: &str = "L_BELOW_CAPACITIVE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub message: String,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

/// Static check of the operating configuration against the settings known to
/// open a zero-count gap.
pub fn audit_config(params: &ApdParams, limits: &AuditLimits) -> AuditReport {
    let mut violations = Vec::new();
    if params.r_bias > limits.r_bias_max {
        violations.push(Violation {
            rule_id: R_BIAS_MAX.into(),
            message: format!(
                "bias resistor {:.0} Ohm exceeds {:.0} Ohm; the bias drop under bright light opens a zero-count gap",
                params.r_bias, limits.r_bias_max
            ),
            value: params.r_bias,
            limit: limits.r_bias_max,
        });
    }
    let headroom = limits.discrimination_headroom * params.capacitive_amplitude;
    if params.discrimination_level > headroom {
        violations.push(Violation {
            rule_id: L_HEADROOM.into(),
            message: format!(
                "discrimination level {:.1} mV is above {:.2} x the capacitive response ({:.1} mV)",
                params.discrimination_level * 1e3,
                limits.discrimination_headroom,
                headroom * 1e3
            ),
            value: params.discrimination_level,
            limit: headroom,
        });
    }
    if params.discrimination_level <= params.capacitive_amplitude {
        violations.push(Violation {
            rule_id: L_BELOW_CAPACITIVE.into(),
            message: format!(
                "discrimination level {:.1} mV does not reject the capacitive response ({:.1} mV)",
                params.discrimination_level * 1e3,
                params.capacitive_amplitude * 1e3
            ),
            value: params.discrimination_level,
            limit: params.capacitive_amplitude,
        });
    }
    AuditReport { passed: violations.is_empty(), violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    pub points_per_decade: usize,
    pub gates_per_point: u64,
    pub seed: u64,
    /// Relative width at which edge bisection stops.
    pub refine_tolerance: f64,
    pub execution: Execution,
}

impl Default for GapScan {
    fn default() -> Self {
        GapScan {
            points_per_decade: 25,
            gates_per_point: 1_000_000,
            seed: 0,
            refine_tolerance: 0.01,
            execution: Execution::Parallel,
        }
    }
}

/// Power interval with exactly zero registered counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroCountGap {
    /// Lowest blinding power I_B (W).
    pub onset: f64,
    /// Lowest higher power at which counting resumes, I_R (W); `None` when the
    /// detector stays blind up to the top of the scan.
    pub recovery: Option<f64>,
}

impl ZeroCountGap {
    /// I_R − I_B, measured to `power_max` when there is no recovery.
    pub fn width(&self, power_max: f64) -> f64 {
        self.recovery.unwrap_or(power_max) - self.onset
    }
}

/// Logarithmic power grid with `per_decade` points per decade, both ends included.
pub fn log_grid(min: f64, max: f64, per_decade: usize) -> Vec<f64> {
    let decades = (max / min).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    (0..=n).map(|i| min * 10f64.powf(decades * i as f64 / n as f64)).collect()
}

/// Clicks an unblinded detector must be expected to produce before an empty
/// point counts as blind rather than merely too dim to register.
pub const MIN_EXPECTED_CLICKS: f64 = 20.0;

fn detectable(params: &ApdParams, power: f64, gates: u64) -> bool {
    let mu = mean_photon_number(power, params.gate_width, photon_energy(WAVELENGTH_1550));
    gates as f64 * click_probability(params.p_dark, mu * params.eta_0) >= MIN_EXPECTED_CLICKS
}

/// Sweeps CW power over `[power_min, power_max]` and locates the zero-count gap.
pub fn find_zero_count_gap(
    params: &ApdParams,
    power_min: f64,
    power_max: f64,
    scan: &GapScan,
) -> Result<Option<ZeroCountGap>> {
    params.validate()?;
    if !(power_min > 0.0 && power_max > power_min) {
        return Err(ModelError::InvalidInput(format!("power range [{power_min}, {power_max}]")));
    }
    let grid = log_grid(power_min, power_max, scan.points_per_decade);
    let zero_at = |power: f64, stream: u64| -> Result<bool> {
        if !detectable(params, power, scan.gates_per_point) {
            return Ok(false);
        }
        Ok(simulate_cw(params, power, scan.gates_per_point, scan.seed, stream)?.clicks == 0)
    };
    let zero = try_map_indexed(scan.execution, grid.len(), |i| zero_at(grid[i], i as u64))?;

    let Some(first) = zero.iter().position(|&z| z) else {
        return Ok(None);
    };
    let end = zero[first..].iter().position(|&z| !z).map(|j| first + j);
    if let Some(end) = end {
        if let Some(again) = zero[end..].iter().position(|&z| z) {
            return Err(ModelError::NonMonotonicSweep(format!(
                "zero counts over [{:.3e}, {:.3e}] W, counts at {:.3e} W, zero again at {:.3e} W",
                grid[first],
                grid[end - 1],
                grid[end],
                grid[end + again]
            )));
        }
    }

    let mut stream = grid.len() as u64;
    // Bisects in log power until the bracket is within the refine tolerance.
    let mut refine = |mut counting: f64, mut blind: f64| -> Result<(f64, f64)> {
        while (counting / blind).ln().abs() > scan.refine_tolerance.ln_1p() {
            let mid = (counting * blind).sqrt();
            if zero_at(mid, stream)? {
                blind = mid;
            } else {
                counting = mid;
            }
            stream += 1;
        }
        Ok((counting, blind))
    };
    let onset = if first == 0 {
        grid[0]
    } else {
        let (_, blind) = refine(grid[first - 1], grid[first])?;
        blind
    };
    let recovery = match end {
        Some(end) => {
            let (counting, _) = refine(grid[end], grid[end - 1])?;
            Some(counting)
        }
        None => None,
    };
    Ok(Some(ZeroCountGap { onset, recovery }))
}
