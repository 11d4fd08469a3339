//! Bright-illumination attack waveforms and their success criteria.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::ApdParams;
use crate::sim::{ClickCause, GateOutcome, TraceResult};
use crate::waveform::{OpticalWaveform, Segment};

/// Clicks during the first this-many AC time constants after the light comes on
/// are switch-on transients of the readout and are not counted against a blind span.
pub const ONSET_SETTLE_AC_CONSTANTS: f64 = 10.0;
/// Thermal warm-up excluded from a frame-blinding evaluation, in thermal time constants.
pub const THERMAL_WARMUP_CONSTANTS: f64 = 3.0;

fn default_guard() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AttackScenario {
    /// Constant bright illumination.
    CwBlind { cw_power: f64 },
    /// Blinding floor plus short trigger pulses that force clicks at chosen times.
    FakedState { cw_power: f64, trigger_pulse_energy: f64, trigger_times: Vec<f64> },
    /// Heating light between QKD frames, darkness inside them. Frames are
    /// `(start, duration)` pairs.
    ThermalFrames { frame_schedule: Vec<(f64, f64)>, inter_frame_power: f64 },
    /// Light everywhere except a valley of `guard_interval` around each gate.
    SinkHole {
        inter_gate_power: f64,
        #[serde(default = "default_guard")]
        guard_interval: f64,
    },
    /// One short pulse per period, `after_gate_delay` after each gate closes.
    AfterGate { after_gate_delay: f64, pulse_energy: f64 },
}

impl AttackScenario {
    pub fn name(&self) -> &'static str {
        match self {
            AttackScenario::CwBlind { .. } => "CwBlind",
            AttackScenario::FakedState { .. } => "FakedState",
            AttackScenario::ThermalFrames { .. } => "ThermalFrames",
            AttackScenario::SinkHole { .. } => "SinkHole",
            AttackScenario::AfterGate { .. } => "AfterGate",
        }
    }

    /// The standard five-attack suite, scaled to the gate timing of `params`.
    pub fn suite(params: &ApdParams) -> Vec<AttackScenario> {
        vec![
            AttackScenario::CwBlind { cw_power: 10e-6 },
            Self::faked_state(params, 10e-6, 20e-15, 40),
            Self::thermal_frames(1.5e-3, 100e-6, 200e-6, 20),
            AttackScenario::SinkHole { inter_gate_power: 200e-6, guard_interval: default_guard() },
            AttackScenario::AfterGate { after_gate_delay: 10e-9, pulse_energy: 1e-12 },
        ]
    }

    /// Triggers at the centres of every 100th gate, starting after the readout has settled.
    pub fn faked_state(params: &ApdParams, cw_power: f64, energy: f64, triggers: usize) -> Self {
        let period = params.gate_period();
        let first = (ONSET_SETTLE_AC_CONSTANTS * params.ac_time_constant / period).ceil() as usize + 100;
        let trigger_times = (0..triggers)
            .map(|j| (first + 100 * j) as f64 * period + 0.5 * params.gate_width)
            .collect();
        AttackScenario::FakedState { cw_power, trigger_pulse_energy: energy, trigger_times }
    }

    /// `frames` frames of length `frame`, separated by heated gaps of length `gap`
    /// whose power makes the time average equal `average_power`.
    pub fn thermal_frames(average_power: f64, frame: f64, gap: f64, frames: usize) -> Self {
        let frame_schedule = (0..frames).map(|j| (gap + j as f64 * (frame + gap), frame)).collect();
        AttackScenario::ThermalFrames {
            frame_schedule,
            inter_frame_power: average_power * (frame + gap) / gap,
        }
    }

    /// Trace length used when none is given: long enough for the monitor window,
    /// for every trigger and for every frame.
    pub fn default_duration(&self, params: &ApdParams) -> f64 {
        let period = params.gate_period();
        let floor: f64 = 2e-3;
        match self {
            AttackScenario::FakedState { trigger_times, .. } => {
                let last = trigger_times.iter().copied().fold(0.0, f64::max);
                floor.max(((last / period).floor() + 10.0) * period)
            }
            AttackScenario::ThermalFrames { frame_schedule, .. } => {
                let end = frame_schedule.iter().map(|(s, d)| s + d).fold(0.0, f64::max);
                floor.max((end / period).ceil() * period)
            }
            _ => floor,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ModelError::InvalidInput(format!("{}: {what}", self.name())));
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            AttackScenario::CwBlind { cw_power } if !nonneg(*cw_power) => bad("cw_power"),
            AttackScenario::FakedState { cw_power, trigger_pulse_energy, trigger_times } => {
                if !nonneg(*cw_power) || !nonneg(*trigger_pulse_energy) {
                    return bad("power and energy must be non-negative");
                }
                if trigger_times.iter().any(|t| !nonneg(*t)) {
                    return bad("trigger times must be non-negative");
                }
                Ok(())
            }
            AttackScenario::ThermalFrames { frame_schedule, inter_frame_power } => {
                if !nonneg(*inter_frame_power) {
                    return bad("inter_frame_power");
                }
                let mut end = 0.0;
                for &(s, d) in frame_schedule {
                    if !(nonneg(s) && d > 0.0 && s >= end) {
                        return bad("frames must be sorted, disjoint and of positive length");
                    }
                    end = s + d;
                }
                Ok(())
            }
            AttackScenario::SinkHole { inter_gate_power, guard_interval } => {
                if !nonneg(*inter_gate_power) || !nonneg(*guard_interval) {
                    return bad("power and guard must be non-negative");
                }
                Ok(())
            }
            AttackScenario::AfterGate { after_gate_delay, pulse_energy } => {
                if !nonneg(*after_gate_delay) || !nonneg(*pulse_energy) {
                    return bad("delay and energy must be non-negative");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Renders a scenario as optical power versus time. Short pulses last `2·time_step`.
pub fn build_waveform(
    scenario: &AttackScenario,
    params: &ApdParams,
    total_duration: f64,
    time_step: f64,
) -> Result<OpticalWaveform> {
    scenario.validate()?;
    let period = params.gate_period();
    let width = params.gate_width;
    let pulse = 2.0 * time_step;
    let gates = (total_duration / period * (1.0 + 1e-12)).floor() as usize;
    match scenario {
        AttackScenario::CwBlind { cw_power } => OpticalWaveform::constant(*cw_power, total_duration),
        AttackScenario::FakedState { cw_power, trigger_pulse_energy, trigger_times } => {
            let mut layers = vec![Segment { start: 0.0, duration: total_duration, power: *cw_power }];
            layers.extend(trigger_times.iter().map(|&t| Segment {
                start: t - 0.5 * pulse,
                duration: pulse,
                power: trigger_pulse_energy / pulse,
            }));
            OpticalWaveform::from_layers(&layers, total_duration)
        }
        AttackScenario::ThermalFrames { frame_schedule, inter_frame_power } => {
            let mut segments = Vec::new();
            let mut t = 0.0;
            for &(start, duration) in frame_schedule {
                let start = start.min(total_duration);
                if start > t {
                    segments.push(Segment { start: t, duration: start - t, power: *inter_frame_power });
                }
                t = (start + duration).min(total_duration);
            }
            if total_duration > t {
                segments.push(Segment { start: t, duration: total_duration - t, power: *inter_frame_power });
            }
            segments.retain(|s| s.power > 0.0);
            OpticalWaveform::new(segments, total_duration)
        }
        AttackScenario::SinkHole { inter_gate_power, guard_interval } => {
            if width + 2.0 * guard_interval >= period {
                return Err(ModelError::InvalidInput("SinkHole valley covers the whole period".into()));
            }
            let mut segments = Vec::with_capacity(gates + 1);
            let mut t = 0.0;
            for k in 0..=gates {
                let valley_start = (k as f64 * period - guard_interval).min(total_duration);
                if valley_start > t {
                    segments.push(Segment { start: t, duration: valley_start - t, power: *inter_gate_power });
                }
                t = (k as f64 * period + width + guard_interval).min(total_duration);
            }
            if total_duration > t {
                segments.push(Segment { start: t, duration: total_duration - t, power: *inter_gate_power });
            }
            segments.retain(|s| s.power > 0.0);
            OpticalWaveform::new(segments, total_duration)
        }
        AttackScenario::AfterGate { after_gate_delay, pulse_energy } => {
            if width + after_gate_delay + pulse > period {
                return Err(ModelError::InvalidInput("AfterGate pulse runs into the next gate".into()));
            }
            let segments = (0..gates)
                .map(|k| Segment {
                    start: k as f64 * period + width + after_gate_delay,
                    duration: pulse,
                    power: pulse_energy / pulse,
                })
                .filter(|s| s.power > 0.0 && s.end() <= total_duration)
                .collect();
            OpticalWaveform::new(segments, total_duration)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub scenario: AttackScenario,
    /// Zero registered clicks during the spans the attack intends to blind.
    pub blinded: bool,
    /// Triggers that produced a registered click (FakedState), or pulses that
    /// produced an in-window linear-mode click (AfterGate).
    pub forced_clicks: Option<usize>,
    pub stray_clicks_outside_frames: usize,
    pub mean_photocurrent: f64,
    pub success: bool,
}

fn registered(o: &GateOutcome) -> bool {
    o.clicked && o.in_window
}

/// Judges a trace against the scenario's success criterion. The trace must have
/// been recorded with every gate outcome.
pub fn evaluate_attack(scenario: &AttackScenario, trace: &TraceResult, params: &ApdParams) -> Result<AttackReport> {
    let period = params.gate_period();
    if (trace.outcomes.iter().filter(|o| o.cause != Some(ClickCause::LinearMode)).count() as u64) != trace.gates {
        return Err(ModelError::InvalidInput("attack evaluation needs every gate outcome recorded".into()));
    }
    let settled = (ONSET_SETTLE_AC_CONSTANTS * params.ac_time_constant / period).ceil() as u64;
    let gate_start = |o: &GateOutcome| o.gate_index as f64 * period;

    let mut report = AttackReport {
        scenario: scenario.clone(),
        blinded: false,
        forced_clicks: None,
        stray_clicks_outside_frames: 0,
        mean_photocurrent: trace.mean_photocurrent,
        success: false,
    };
    match scenario {
        AttackScenario::CwBlind { .. } => {
            report.blinded = !trace.outcomes.iter().any(|o| o.gate_index >= settled && registered(o));
            report.success = report.blinded;
        }
        AttackScenario::FakedState { trigger_times, .. } => {
            let targeted: Vec<u64> = trigger_times.iter().map(|t| (t / period).floor() as u64).collect();
            let forced = targeted
                .iter()
                .filter(|&&k| trace.outcomes.iter().any(|o| o.gate_index == k && registered(o)))
                .count();
            let other = trace
                .outcomes
                .iter()
                .any(|o| o.gate_index >= settled && registered(o) && !targeted.contains(&o.gate_index));
            report.blinded = !other;
            report.forced_clicks = Some(forced);
            report.success = !other && forced == trigger_times.len();
        }
        AttackScenario::ThermalFrames { frame_schedule, .. } => {
            let warm = THERMAL_WARMUP_CONSTANTS * params.thermal_time_constant;
            let in_frame = |o: &GateOutcome| {
                let a = gate_start(o);
                let b = a + period;
                frame_schedule.iter().any(|&(s, d)| a >= s && b <= s + d)
            };
            let mut frame_gates = 0usize;
            let mut exposed = false;
            for o in &trace.outcomes {
                if in_frame(o) {
                    if gate_start(o) >= warm {
                        frame_gates += 1;
                        exposed |= registered(o) || o.photon_sensitive;
                    }
                } else if registered(o) && o.gate_index >= settled {
                    report.stray_clicks_outside_frames += 1;
                }
            }
            report.blinded = frame_gates > 0 && !exposed;
            report.success = report.blinded;
        }
        AttackScenario::SinkHole { .. } => {
            let exposed = trace
                .outcomes
                .iter()
                .any(|o| o.gate_index >= settled && (registered(o) || o.photon_sensitive));
            report.blinded = !exposed;
            report.success = report.blinded;
        }
        AttackScenario::AfterGate { .. } => {
            let pulses = trace.gates.saturating_sub(settled) as usize;
            let hits = trace
                .outcomes
                .iter()
                .filter(|o| {
                    o.gate_index >= settled && o.cause == Some(ClickCause::LinearMode) && registered(o)
                })
                .count();
            report.forced_clicks = Some(hits);
            report.blinded = false;
            report.success = pulses > 0 && hits == pulses;
        }
    }
    Ok(report)
}
