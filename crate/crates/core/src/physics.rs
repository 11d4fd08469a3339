//! Static device physics: breakdown drift, linear gain, bias feedback, detection
//! statistics and discrimination.

use crate::error::{ModelError, Result};
use crate::params::{ApdParams, Coupling};

const PLANCK: f64 = 6.626_070_15e-34;
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Telecom wavelength used throughout (m).
pub const WAVELENGTH_1550: f64 = 1550e-9;

pub fn photon_energy(wavelength: f64) -> f64 {
    PLANCK * SPEED_OF_LIGHT / wavelength
}

/// Mean photon number per gate for a given in-gate optical power.
pub fn mean_photon_number(power: f64, gate_width: f64, photon_energy: f64) -> f64 {
    power * gate_width / photon_energy
}

pub fn breakdown_voltage(params: &ApdParams, temperature: f64) -> f64 {
    params.v_breakdown_0 + params.temp_coeff_vb * (temperature - params.ambient_temp)
}

/// Temperature the optical heating settles at under constant power.
pub fn steady_state_temperature(params: &ApdParams, power: f64) -> f64 {
    params.ambient_temp + params.thermal_resistance * power
}

/// Linear-mode multiplication at `bias`: zero up to punch-through, Miller law
/// above it, clamped to `gain_clamp`.
pub fn linear_gain(params: &ApdParams, bias: f64, temperature: f64) -> f64 {
    if bias <= params.v_punch_through {
        return 0.0;
    }
    let vb = breakdown_voltage(params, temperature);
    if bias >= vb {
        return params.gain_clamp;
    }
    let ratio = (bias / vb).powf(params.miller_exponent);
    (1.0 / (1.0 - ratio)).min(params.gain_clamp)
}

const DAMPING: f64 = 0.5;
const REL_TOL: f64 = 1e-9;
const MAX_ITER: usize = 500;

/// Solves I = P·S·M(bias − I·R_bias) for the photocurrent through the bias network.
pub fn steady_state_photocurrent(
    params: &ApdParams,
    power: f64,
    applied_bias: f64,
    temperature: f64,
) -> Result<f64> {
    solve_photocurrent(params, power, applied_bias, temperature, 0.0)
}

/// [`steady_state_photocurrent`] with a warm-start guess.
pub(crate) fn solve_photocurrent(
    params: &ApdParams,
    power: f64,
    applied_bias: f64,
    temperature: f64,
    guess: f64,
) -> Result<f64> {
    if !(power.is_finite() && power >= 0.0 && applied_bias.is_finite() && temperature.is_finite()) {
        return Err(ModelError::InvalidInput(format!(
            "photocurrent solve at power {power}, bias {applied_bias}, temperature {temperature}"
        )));
    }
    let drive = power * params.responsivity;
    if params.r_bias == 0.0 || drive == 0.0 {
        return Ok(drive * linear_gain(params, applied_bias, temperature));
    }
    let rhs = |i: f64| drive * linear_gain(params, applied_bias - i * params.r_bias, temperature);

    let mut i = guess.max(0.0);
    for _ in 0..MAX_ITER {
        let next = (1.0 - DAMPING) * i + DAMPING * rhs(i);
        if (next - i).abs() <= REL_TOL * next.abs().max(f64::MIN_POSITIVE)
            && (rhs(next) - next).abs() <= 10.0 * REL_TOL * next.abs()
        {
            return Ok(next);
        }
        i = next;
    }

    // The residual rhs(I) − I is strictly decreasing, so bisection always brackets it.
    let mut lo = 0.0;
    let mut hi = drive * params.gain_clamp;
    if rhs(hi) - hi > 0.0 {
        return Err(ModelError::NonConvergence { power, bias: applied_bias });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rhs(mid) - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    if root.is_finite() {
        Ok(root)
    } else {
        Err(ModelError::NonConvergence { power, bias: applied_bias })
    }
}

/// Count rate of a gated detector, f0·[1 − (1 − P_d)·e^{−μη}].
pub fn count_rate_analytic(gate_rate: f64, p_dark: f64, mu: f64, eta: f64) -> f64 {
    gate_rate * click_probability(p_dark, mu * eta)
}

/// Per-gate click probability for mean detected photon number `mu_eta`.
pub fn click_probability(p_dark: f64, mu_eta: f64) -> f64 {
    let miss = (-mu_eta).exp();
    -(-mu_eta).exp_m1() + p_dark * miss
}

/// Excess bias during the gate after the drop across the bias resistor and the
/// thermal shift of breakdown.
pub fn effective_excess_bias(params: &ApdParams, photocurrent: f64, temperature: f64) -> f64 {
    params.v_dc + params.gate_amplitude
        - photocurrent * params.r_bias
        - breakdown_voltage(params, temperature)
}

pub fn detection_efficiency(params: &ApdParams, excess_bias: f64) -> f64 {
    let nominal = params.nominal_excess_bias();
    params.eta_0 * (excess_bias / nominal).clamp(0.0, 1.0)
}

pub fn avalanche_amplitude(params: &ApdParams, excess_bias: f64) -> f64 {
    params.avalanche_gain_constant * excess_bias.max(0.0)
}

/// Gate-off and gate-on photocurrents under CW illumination.
///
/// The bias-network drop is set by the gate-off current and is too slow to follow
/// the gate, so the gate-on current is evaluated at the gate-off bias plus the
/// gate amplitude.
pub fn gated_photocurrents(params: &ApdParams, power: f64, temperature: f64) -> Result<(f64, f64)> {
    let off = steady_state_photocurrent(params, power, params.v_dc, temperature)?;
    let bias_on = params.v_dc - off * params.r_bias + params.gate_amplitude;
    let on = power * params.responsivity * linear_gain(params, bias_on, temperature);
    Ok((off, on))
}

/// Gate-synchronous voltage swing on the sensing resistor from the gain step
/// between gate-off and gate-on bias.
pub fn gain_modulation_amplitude(params: &ApdParams, power: f64, temperature: f64) -> Result<f64> {
    let (off, on) = gated_photocurrents(params, power, temperature)?;
    Ok(params.r_sense * (on - off).max(0.0))
}

/// Closed threshold: a peak exactly at the discrimination level clicks.
pub fn discriminate(params: &ApdParams, signal_peak: f64, ac_baseline: f64) -> bool {
    let level = match params.coupling {
        Coupling::Dc => signal_peak,
        Coupling::Ac => signal_peak - ac_baseline,
    };
    level >= params.discrimination_level
}
