use crate::countermeasures::{find_zero_count_gap, GapScan, ZeroCountGap};
use crate::error::{ModelError, Result};
use crate::params::ApdParams;
use crate::physics::{gain_modulation_amplitude, steady_state_temperature};

/// Power range searched for a zero-count gap (W).
pub const GAP_SCAN_RANGE: (f64, f64) = (1e-15, 1e-2);

/// Zero-count gap for each bias resistor value, searched over [`GAP_SCAN_RANGE`].
pub fn run_rbias_scan(
    base: &ApdParams,
    r_values: &[f64],
    scan: &GapScan,
) -> Result<Vec<(f64, Option<ZeroCountGap>)>> {
    r_values
        .iter()
        .enumerate()
        .map(|(index, &r)| {
            if !(r >= 0.0) {
                return Err(ModelError::InvalidInput(format!("r_bias {r} must be non-negative")));
            }
            let params = ApdParams { r_bias: r, ..base.clone() };
            let gap = find_zero_count_gap(&params, GAP_SCAN_RANGE.0, GAP_SCAN_RANGE.1, scan)
                .map_err(|e| ModelError::SweepPoint { index, x: r, source: Box::new(e) })?;
            Ok((r, gap))
        })
        .collect()
}

/// Gain-modulation amplitude at each power, with the detector at its
/// optically heated steady-state temperature.
pub fn run_ac_amplitude_sweep(params: &ApdParams, powers: &[f64]) -> Result<Vec<(f64, f64)>> {
    if powers.iter().any(|&p| !(p > 0.0)) || powers.windows(2).any(|w| w[1] < w[0]) {
        return Err(ModelError::InvalidInput("powers must be positive and sorted".into()));
    }
    powers
        .iter()
        .map(|&p| {
            let t = steady_state_temperature(params, p);
            Ok((p, gain_modulation_amplitude(params, p, t)?))
        })
        .collect()
}
