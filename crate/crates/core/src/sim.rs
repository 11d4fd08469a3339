//! Gate-level Monte Carlo: single gates, event-driven traces and the CW fast path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::ApdParams;
use crate::physics::{
    avalanche_amplitude, detection_efficiency, discriminate, effective_excess_bias,
    gated_photocurrents, linear_gain, mean_photon_number, photon_energy, solve_photocurrent,
    steady_state_temperature, WAVELENGTH_1550,
};
use crate::waveform::OpticalWaveform;

/// Absolute maximum CW optical input of the modelled device (W).
pub const MAX_OPTICAL_POWER: f64 = 3e-3;
/// Absolute maximum reverse current of the modelled device (A).
pub const MAX_REVERSE_CURRENT: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickCause {
    Avalanche,
    Dark,
    GainModulation,
    LinearMode,
    Capacitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub temperature: f64,
    /// DC photocurrent through the bias resistor (A).
    pub photocurrent: f64,
    pub ac_baseline: f64,
    pub time: f64,
}

impl DetectorState {
    pub fn ambient(params: &ApdParams) -> Self {
        DetectorState { temperature: params.ambient_temp, photocurrent: 0.0, ac_baseline: 0.0, time: 0.0 }
    }

    /// Thermal, bias-network and AC-coupling steady state under CW power.
    pub fn steady_state(params: &ApdParams, power: f64) -> Result<Self> {
        let op = cw_operating_point(params, power)?;
        Ok(DetectorState {
            temperature: op.temperature,
            photocurrent: op.photocurrent_off,
            ac_baseline: op.ac_baseline,
            time: 0.0,
        })
    }
}

/// Optical drive seen by one gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDrive {
    pub index: u64,
    pub start: f64,
    /// Mean optical power inside the gate (W); sets the photon number.
    pub mean_power: f64,
    /// Peak optical power inside the gate (W); sets the linear-mode response.
    pub peak_power: f64,
    /// Instantaneous photocurrent just before the gate opens (A).
    pub pre_gate_current: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub gate_index: u64,
    pub clicked: bool,
    pub click_time: Option<f64>,
    pub cause: Option<ClickCause>,
    /// Absolute peak on the sensing resistor (V).
    pub signal_peak: f64,
    pub effective_excess_bias: f64,
    pub ac_baseline: f64,
    /// Whether a single-photon avalanche in this gate would have been registered.
    pub photon_sensitive: bool,
    pub in_window: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    clicked: bool,
    signal_peak: f64,
    cause: ClickCause,
}

/// Everything about one gate that does not depend on the random draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateModel {
    index: u64,
    click_time: f64,
    p_photon: f64,
    p_any: f64,
    geiger: bool,
    excess_bias: f64,
    baseline: f64,
    photon_sensitive: bool,
    quiet: Branch,
    dark: Branch,
    photon: Branch,
}

impl GateModel {
    pub fn new(params: &ApdParams, state: &DetectorState, drive: &GateDrive, photon_energy: f64) -> Self {
        let vex = effective_excess_bias(params, state.photocurrent, state.temperature);
        let geiger = vex > 0.0;
        let eta = detection_efficiency(params, vex);
        let mu = mean_photon_number(drive.mean_power, params.gate_width, photon_energy);
        let p_photon = -(-mu * eta).exp_m1();
        let p_dark = if geiger { params.p_dark } else { 0.0 };
        let p_any = p_photon + p_dark * (1.0 - p_photon);

        let bias_on = params.v_dc - state.photocurrent * params.r_bias + params.gate_amplitude;
        let i_on = drive.peak_power * params.responsivity * linear_gain(params, bias_on, state.temperature);
        let level = params.r_sense * drive.pre_gate_current;
        let gm = params.r_sense * (i_on - drive.pre_gate_current).max(0.0);
        let cap = params.capacitive_amplitude;
        let aval = avalanche_amplitude(params, vex);

        let branch = |avalanche: Option<ClickCause>| {
            let (mut top, mut cause) = if gm >= cap {
                (gm, ClickCause::GainModulation)
            } else {
                (cap, ClickCause::Capacitive)
            };
            if let Some(kind) = avalanche {
                if aval >= top {
                    top = aval;
                    cause = kind;
                }
            }
            let signal_peak = level + top;
            Branch { clicked: discriminate(params, signal_peak, state.ac_baseline), signal_peak, cause }
        };
        let photon = branch(Some(ClickCause::Avalanche));
        GateModel {
            index: drive.index,
            click_time: drive.start + 0.5 * params.gate_width,
            p_photon,
            p_any,
            geiger,
            excess_bias: vex,
            baseline: state.ac_baseline,
            photon_sensitive: geiger && eta > 0.0 && photon.clicked,
            quiet: branch(None),
            dark: branch(Some(ClickCause::Dark)),
            photon,
        }
    }

    /// Probability that the gate registers a click.
    pub fn click_probability(&self) -> f64 {
        let mut p = 0.0;
        if self.photon.clicked {
            p += self.p_photon;
        }
        if self.dark.clicked {
            p += self.p_any - self.p_photon;
        }
        if self.quiet.clicked {
            p += 1.0 - self.p_any;
        }
        p
    }

    /// Probability that an avalanche fires, whether or not it registers.
    pub fn avalanche_probability(&self) -> f64 {
        if self.geiger {
            self.p_any
        } else {
            0.0
        }
    }

    /// Draws the gate. The flag reports whether an avalanche took place.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (GateOutcome, bool) {
        let u: f64 = rng.random();
        let (branch, avalanche) = if u < self.p_photon {
            (&self.photon, true)
        } else if u < self.p_any {
            (&self.dark, true)
        } else {
            (&self.quiet, false)
        };
        let outcome = GateOutcome {
            gate_index: self.index,
            clicked: branch.clicked,
            click_time: branch.clicked.then_some(self.click_time),
            cause: branch.clicked.then_some(branch.cause),
            signal_peak: branch.signal_peak,
            effective_excess_bias: self.excess_bias,
            ac_baseline: self.baseline,
            photon_sensitive: self.photon_sensitive,
            in_window: true,
        };
        (outcome, avalanche && self.geiger)
    }
}

/// Simulates one gate with the detector in `state`.
pub fn simulate_gate<R: Rng + ?Sized>(
    params: &ApdParams,
    state: &DetectorState,
    drive: &GateDrive,
    photon_energy: f64,
    rng: &mut R,
) -> GateOutcome {
    GateModel::new(params, state, drive, photon_energy).sample(rng).0
}

/// Per-trace random stream. Distinct `stream` values give independent sequences
/// under one seed.
pub fn trace_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    All,
    Clicks,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Ambient,
    /// Start settled under this CW power.
    SteadyState(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Time resolution (s). Sets the width of short optical pulses.
    pub time_step: f64,
    pub wavelength: f64,
    /// Maximum number of constant-power intervals a trace may process.
    pub max_events: u64,
    pub record: Record,
    pub initial: InitialState,
    pub stream: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            time_step: 50e-12,
            wavelength: WAVELENGTH_1550,
            max_events: 200_000_000,
            record: Record::All,
            initial: InitialState::Ambient,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseCounts {
    pub avalanche: u64,
    pub dark: u64,
    pub gain_modulation: u64,
    pub linear_mode: u64,
    pub capacitive: u64,
}

impl CauseCounts {
    fn add(&mut self, cause: ClickCause) {
        match cause {
            ClickCause::Avalanche => self.avalanche += 1,
            ClickCause::Dark => self.dark += 1,
            ClickCause::GainModulation => self.gain_modulation += 1,
            ClickCause::LinearMode => self.linear_mode += 1,
            ClickCause::Capacitive => self.capacitive += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub outcomes: Vec<GateOutcome>,
    pub gates: u64,
    /// Clicks inside the acceptance window.
    pub clicks: u64,
    pub clicks_outside_window: u64,
    pub causes: CauseCounts,
    pub avalanches: u64,
    /// Simulated span: whole gate periods only (s).
    pub duration: f64,
    pub count_rate: f64,
    pub mean_photocurrent: f64,
    /// Largest per-gate-period mean photocurrent.
    pub max_photocurrent: f64,
    pub temperature_peak: f64,
    /// Mean photocurrent of each gate period (A).
    pub photocurrent_samples: Vec<f64>,
    pub sample_interval: f64,
    /// Time average of the sensing voltage minus the AC baseline (V).
    pub baseline_subtracted_mean: f64,
    /// Largest magnitude of the sensing voltage minus the AC baseline (V).
    pub baseline_subtracted_peak: f64,
    pub exceeds_optical_rating: bool,
    pub exceeds_current_rating: bool,
}

/// Continuous state between gate decisions.
struct Evolver<'a> {
    params: &'a ApdParams,
    temperature: f64,
    baseline: f64,
    charge: f64,
    subtracted_integral: f64,
    subtracted_peak: f64,
    temperature_peak: f64,
    events: u64,
}

impl Evolver<'_> {
    /// Advances through `[a, b)` at constant power and gain. Returns the sensing
    /// voltage and its baseline-relative level at the start of the interval.
    fn advance(&mut self, a: f64, b: f64, power: f64, gain: f64) -> (f64, f64) {
        let p = self.params;
        let span = b - a;
        let current = power * p.responsivity * gain;
        let x = p.r_sense * current;
        let start_level = x - self.baseline;

        let decay = (-span / p.ac_time_constant).exp();
        self.subtracted_integral += start_level * p.ac_time_constant * (1.0 - decay);
        self.subtracted_peak = self.subtracted_peak.max(start_level.abs());
        self.baseline = x - start_level * decay;

        let t_ss = steady_state_temperature(p, power);
        self.temperature = t_ss + (self.temperature - t_ss) * (-span / p.thermal_time_constant).exp();
        self.temperature_peak = self.temperature_peak.max(self.temperature);

        self.charge += current * span;
        self.events += 1;
        (x, start_level)
    }
}

/// Event-driven simulation of a gated detector under an arbitrary waveform.
///
/// Gates open at multiples of the gate period. The bias-network current is
/// refreshed at each gate from the mean power of the preceding period; thermal
/// and AC-coupling states follow exact exponential updates between events.
/// Between gates the sensing voltage is discriminated in linear mode, at most
/// once per period on a rising edge.
pub fn simulate_trace(
    params: &ApdParams,
    waveform: &OpticalWaveform,
    seed: u64,
    config: &SimConfig,
) -> Result<TraceResult> {
    params.validate()?;
    let period = params.gate_period();
    let n_gates = (waveform.total_duration() / period * (1.0 + 1e-12)).floor() as u64;
    if n_gates == 0 {
        return Err(ModelError::InvalidInput("waveform is shorter than one gate period".into()));
    }
    let required = 3 * n_gates + 2 * waveform.segments().len() as u64;
    if required > config.max_events {
        return Err(ModelError::StepBudgetExceeded { required, budget: config.max_events });
    }
    let e_photon = photon_energy(config.wavelength);
    let duration = n_gates as f64 * period;
    let width = params.gate_width;
    let half_window = 0.5 * params.acceptance_window * (1.0 + 1e-9);
    let mut rng = trace_rng(seed, config.stream);

    let initial = match config.initial {
        InitialState::Ambient => DetectorState::ambient(params),
        InitialState::SteadyState(power) => DetectorState::steady_state(params, power)?,
    };
    let mut ev = Evolver {
        params,
        temperature: initial.temperature,
        baseline: initial.ac_baseline,
        charge: 0.0,
        subtracted_integral: 0.0,
        subtracted_peak: 0.0,
        temperature_peak: initial.temperature,
        events: 0,
    };
    let mut i_dc = initial.photocurrent;
    let mut solved_for: Option<(f64, f64)> = match config.initial {
        InitialState::SteadyState(power) => Some((power, initial.temperature)),
        InitialState::Ambient => None,
    };

    let mut outcomes = Vec::new();
    let mut samples = Vec::with_capacity(n_gates as usize);
    let mut causes = CauseCounts::default();
    let (mut clicks, mut outside, mut avalanches) = (0u64, 0u64, 0u64);
    let mut cursor = 0usize;
    let mut above = false;
    let mut bias_power = waveform.mean_power(0.0, period);
    let mut optical_over = false;

    for k in 0..n_gates {
        let t0 = k as f64 * period;
        let t_close = t0 + width;
        let t1 = t0 + period;

        // Bias network: refresh only when its drive has moved appreciably.
        let stale = match solved_for {
            None => true,
            Some((p, t)) => {
                (bias_power - p).abs() > 1e-12 * p.max(f64::MIN_POSITIVE)
                    || (ev.temperature - t).abs() > 1e-9
            }
        };
        if stale {
            i_dc = solve_photocurrent(params, bias_power, params.v_dc, ev.temperature, i_dc)?;
            solved_for = Some((bias_power, ev.temperature));
        }
        let b_off = params.v_dc - i_dc * params.r_bias;
        // Read the gate-off gain back from the solved current: when the drop pins
        // the bias at punch-through, M(b_off) itself is discontinuous.
        let gain_off = if bias_power > 0.0 {
            i_dc / (bias_power * params.responsivity)
        } else {
            linear_gain(params, b_off, ev.temperature)
        };

        let p_pre = waveform.power_at((t0 - 0.5 * config.time_step).max(0.0));
        let mut gate_energy = 0.0;
        let mut gate_peak: f64 = 0.0;
        waveform.for_each_piece(t0, t_close, &mut cursor, |a, b, p| {
            gate_energy += p * (b - a);
            gate_peak = gate_peak.max(p);
        });
        let drive = GateDrive {
            index: k,
            start: t0,
            mean_power: gate_energy / width,
            peak_power: gate_peak,
            pre_gate_current: p_pre * params.responsivity * gain_off,
        };
        let state = DetectorState {
            temperature: ev.temperature,
            photocurrent: i_dc,
            ac_baseline: ev.baseline,
            time: t0,
        };
        let model = GateModel::new(params, &state, &drive, e_photon);
        let (outcome, avalanche) = model.sample(&mut rng);
        let charge_before = ev.charge;
        if avalanche {
            avalanches += 1;
            ev.charge += params.charge_per_avalanche;
        }
        if outcome.clicked {
            clicks += 1;
            causes.add(outcome.cause.expect("clicked gates carry a cause"));
        }
        match config.record {
            Record::All => outcomes.push(outcome),
            Record::Clicks if outcome.clicked => outcomes.push(outcome),
            _ => {}
        }

        let mut period_energy = 0.0;
        let gain_on = linear_gain(params, b_off + params.gate_amplitude, ev.temperature);
        waveform.for_each_piece(t0, t_close, &mut cursor, |a, b, p| {
            period_energy += p * (b - a);
            ev.advance(a, b, p, gain_on);
        });
        let mut linear_fired = false;
        let mut linear: Option<GateOutcome> = None;
        waveform.for_each_piece(t_close, t1, &mut cursor, |a, b, p| {
            period_energy += p * (b - a);
            let (x, relative) = ev.advance(a, b, p, gain_off);
            let level = match params.coupling {
                crate::params::Coupling::Dc => x,
                crate::params::Coupling::Ac => relative,
            };
            let now_above = level >= params.discrimination_level;
            if now_above && !above && !linear_fired {
                linear_fired = true;
                let centre = t0 + 0.5 * width;
                let distance = (a - centre).abs().min((centre + period - a).abs());
                linear = Some(GateOutcome {
                    gate_index: k,
                    clicked: true,
                    click_time: Some(a),
                    cause: Some(ClickCause::LinearMode),
                    signal_peak: x,
                    effective_excess_bias: outcome.effective_excess_bias,
                    ac_baseline: x - relative,
                    photon_sensitive: false,
                    in_window: distance <= half_window,
                });
            }
            above = now_above;
        });
        if let Some(click) = linear {
            causes.add(ClickCause::LinearMode);
            if click.in_window {
                clicks += 1;
            } else {
                outside += 1;
            }
            if config.record != Record::None {
                outcomes.push(click);
            }
        }

        samples.push((ev.charge - charge_before) / period);
        bias_power = period_energy / period;
        optical_over |= bias_power > MAX_OPTICAL_POWER;
    }
    if ev.events > config.max_events {
        return Err(ModelError::StepBudgetExceeded { required: ev.events, budget: config.max_events });
    }

    let max_photocurrent = samples.iter().copied().fold(0.0, f64::max);
    let mean_photocurrent = (ev.charge / duration).min(max_photocurrent);
    Ok(TraceResult {
        outcomes,
        gates: n_gates,
        clicks,
        clicks_outside_window: outside,
        causes,
        avalanches,
        duration,
        count_rate: clicks as f64 / duration,
        mean_photocurrent,
        max_photocurrent,
        temperature_peak: ev.temperature_peak,
        photocurrent_samples: samples,
        sample_interval: period,
        baseline_subtracted_mean: ev.subtracted_integral / duration,
        baseline_subtracted_peak: ev.subtracted_peak,
        exceeds_optical_rating: optical_over,
        exceeds_current_rating: max_photocurrent > MAX_REVERSE_CURRENT,
    })
}

/// Steady operating point of a detector under CW illumination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwOperatingPoint {
    pub power: f64,
    pub temperature: f64,
    pub photocurrent_off: f64,
    pub photocurrent_on: f64,
    pub excess_bias: f64,
    /// AC baseline at the opening of each gate (V).
    pub ac_baseline: f64,
    pub gain_modulation: f64,
}

pub fn cw_operating_point(params: &ApdParams, power: f64) -> Result<CwOperatingPoint> {
    let temperature = steady_state_temperature(params, power);
    let (off, on) = gated_photocurrents(params, power, temperature)?;
    let period = params.gate_period();
    let x_off = params.r_sense * off;
    let x_on = params.r_sense * on;
    // Periodic solution of the high-pass baseline over one gate cycle.
    let a = (-params.gate_width / params.ac_time_constant).exp();
    let c = (-(period - params.gate_width) / params.ac_time_constant).exp();
    let ac_baseline = (x_off * (1.0 - c) + x_on * (1.0 - a) * c) / (1.0 - a * c);
    Ok(CwOperatingPoint {
        power,
        temperature,
        photocurrent_off: off,
        photocurrent_on: on,
        excess_bias: effective_excess_bias(params, off, temperature),
        ac_baseline,
        gain_modulation: params.r_sense * (on - off).max(0.0),
    })
}

fn cw_gate_model(params: &ApdParams, power: f64) -> Result<(CwOperatingPoint, GateModel)> {
    let op = cw_operating_point(params, power)?;
    let state = DetectorState {
        temperature: op.temperature,
        photocurrent: op.photocurrent_off,
        ac_baseline: op.ac_baseline,
        time: 0.0,
    };
    let drive = GateDrive {
        index: 0,
        start: 0.0,
        mean_power: power,
        peak_power: power,
        pre_gate_current: op.photocurrent_off,
    };
    Ok((op, GateModel::new(params, &state, &drive, photon_energy(WAVELENGTH_1550))))
}

/// Exact per-gate click probability at the settled CW operating point.
pub fn cw_click_probability(params: &ApdParams, power: f64) -> Result<f64> {
    Ok(cw_gate_model(params, power)?.1.click_probability())
}

/// Expected time-averaged current under CW light: the linear photocurrent over
/// the gate cycle plus the avalanche charge.
pub fn cw_mean_photocurrent(params: &ApdParams, power: f64) -> Result<f64> {
    let (op, model) = cw_gate_model(params, power)?;
    let duty = params.gate_width / params.gate_period();
    let linear = op.photocurrent_off * (1.0 - duty) + op.photocurrent_on * duty;
    Ok(linear + model.avalanche_probability() * params.charge_per_avalanche * params.gate_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwSummary {
    pub power: f64,
    pub gates: u64,
    pub clicks: u64,
    pub count_rate: f64,
    pub mean_photocurrent: f64,
    pub ac_amplitude: f64,
    pub excess_bias: f64,
    pub temperature: f64,
    pub click_probability: f64,
}

impl CwSummary {
    pub fn blinded(&self) -> bool {
        self.clicks == 0
    }
}

/// Monte Carlo over `gates` gates at the settled CW operating point.
pub fn simulate_cw(params: &ApdParams, power: f64, gates: u64, seed: u64, stream: u64) -> Result<CwSummary> {
    let (op, model) = cw_gate_model(params, power)?;
    let mut rng = trace_rng(seed, stream);
    let (mut clicks, mut avalanches) = (0u64, 0u64);
    for _ in 0..gates {
        let (outcome, avalanche) = model.sample(&mut rng);
        clicks += outcome.clicked as u64;
        avalanches += avalanche as u64;
    }
    let duration = gates as f64 * params.gate_period();
    let duty = params.gate_width / params.gate_period();
    let linear = op.photocurrent_off * (1.0 - duty) + op.photocurrent_on * duty;
    Ok(CwSummary {
        power,
        gates,
        clicks,
        count_rate: clicks as f64 / duration,
        mean_photocurrent: linear + avalanches as f64 * params.charge_per_avalanche / duration,
        ac_amplitude: op.gain_modulation,
        excess_bias: op.excess_bias,
        temperature: op.temperature,
        click_probability: model.click_probability(),
    })
}
