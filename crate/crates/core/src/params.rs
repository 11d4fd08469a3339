//! Device and readout constants for one gated APD channel.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// How the readout electronics couple the sensing-resistor voltage to the
/// discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coupling {
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "AC")]
    Ac,
}

/// Constants of one detector channel, in SI units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApdParams {
    /// Breakdown voltage at `ambient_temp` (V).
    pub v_breakdown_0: f64,
    /// DC bias applied through the bias resistor (V).
    pub v_dc: f64,
    /// Gate pulse amplitude added on top of the DC bias (V).
    pub gate_amplitude: f64,
    /// Gate duration (s).
    pub gate_width: f64,
    /// Gate repetition frequency f0 (Hz).
    pub gate_rate: f64,
    /// Series bias resistor (Ohm).
    pub r_bias: f64,
    /// Sensing resistor (Ohm).
    pub r_sense: f64,
    /// Discrimination level L (V).
    pub discrimination_level: f64,
    /// Peak of the capacitive response at the gate edges (V).
    pub capacitive_amplitude: f64,
    /// Single-photon detection efficiency at the nominal excess bias.
    pub eta_0: f64,
    /// Dark-count probability per gate.
    pub p_dark: f64,
    /// Unity-gain photoresponse (A/W).
    pub responsivity: f64,
    /// Exponent of the Miller gain law.
    pub miller_exponent: f64,
    /// Bias at or below which the absorber is depleted-off and the gain is zero (V).
    pub v_punch_through: f64,
    /// Maximum linear-mode gain.
    pub gain_clamp: f64,
    /// Avalanche pulse amplitude per volt of excess bias (V/V).
    pub avalanche_gain_constant: f64,
    /// Charge delivered by one avalanche (C).
    pub charge_per_avalanche: f64,
    /// Breakdown-voltage temperature coefficient (V/K).
    pub temp_coeff_vb: f64,
    /// Optical-heating thermal resistance (K/W).
    pub thermal_resistance: f64,
    /// First-order thermal time constant (s).
    pub thermal_time_constant: f64,
    /// Heat-sink temperature (K).
    pub ambient_temp: f64,
    pub coupling: Coupling,
    /// Time constant of the AC-coupling high-pass (s).
    pub ac_time_constant: f64,
    /// Full width of the click acceptance window, centred on each gate (s).
    pub acceptance_window: f64,
}

impl ApdParams {
    /// The bias-resistor detector of the gap measurements, with a 100 kOhm
    /// bias resistor and the discriminator just above the capacitive response.
    pub fn apd1() -> Self {
        ApdParams {
            v_breakdown_0: 60.0,
            v_dc: 58.5,
            gate_amplitude: 4.0,
            gate_width: 3.5e-9,
            gate_rate: 2.0e6,
            r_bias: 100e3,
            r_sense: 116.0,
            discrimination_level: 0.040,
            capacitive_amplitude: 0.035,
            eta_0: 0.11,
            p_dark: 1e-5,
            responsivity: 0.99,
            miller_exponent: 2.36,
            v_punch_through: 54.75,
            gain_clamp: 77.0,
            avalanche_gain_constant: 0.0719,
            charge_per_avalanche: 1e-12,
            temp_coeff_vb: 0.1,
            thermal_resistance: 6e4,
            thermal_time_constant: 1e-3,
            ambient_temp: 243.15,
            coupling: Coupling::Ac,
            ac_time_constant: 1e-6,
            acceptance_window: 500e-9,
        }
    }

    /// The detector of the AC-amplitude measurements: same device constants,
    /// 5 kOhm bias resistor.
    pub fn apd2() -> Self {
        ApdParams { r_bias: 5e3, ..Self::apd1() }
    }

    /// Looks a built-in profile up by name.
    pub fn profile(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "apd1" => Some(Self::apd1()),
            "apd2" => Some(Self::apd2()),
            _ => None,
        }
    }

    pub fn gate_period(&self) -> f64 {
        1.0 / self.gate_rate
    }

    /// V_ex = v_dc + gate_amplitude - V_b at ambient temperature.
    pub fn nominal_excess_bias(&self) -> f64 {
        self.v_dc + self.gate_amplitude - self.v_breakdown_0
    }

    /// True when the discriminator rejects the capacitive response.
    pub fn discrimination_above_capacitive(&self) -> bool {
        self.discrimination_level > self.capacitive_amplitude
    }

    /// Checks every invariant except `discrimination_level > capacitive_amplitude`,
    /// which stays representable so the auditor can flag it.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("v_breakdown_0", self.v_breakdown_0),
            ("v_dc", self.v_dc),
            ("gate_amplitude", self.gate_amplitude),
            ("gate_width", self.gate_width),
            ("gate_rate", self.gate_rate),
            ("r_bias", self.r_bias),
            ("r_sense", self.r_sense),
            ("discrimination_level", self.discrimination_level),
            ("capacitive_amplitude", self.capacitive_amplitude),
            ("eta_0", self.eta_0),
            ("p_dark", self.p_dark),
            ("responsivity", self.responsivity),
            ("miller_exponent", self.miller_exponent),
            ("v_punch_through", self.v_punch_through),
            ("gain_clamp", self.gain_clamp),
            ("avalanche_gain_constant", self.avalanche_gain_constant),
            ("charge_per_avalanche", self.charge_per_avalanche),
            ("temp_coeff_vb", self.temp_coeff_vb),
            ("thermal_resistance", self.thermal_resistance),
            ("thermal_time_constant", self.thermal_time_constant),
            ("ambient_temp", self.ambient_temp),
            ("ac_time_constant", self.ac_time_constant),
            ("acceptance_window", self.acceptance_window),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(ModelError::invalid(field, "must be finite"));
            }
        }
        if self.v_dc >= self.v_breakdown_0 {
            return Err(ModelError::invalid("v_dc", "must be below v_breakdown_0"));
        }
        if self.gate_amplitude <= 0.0 {
            return Err(ModelError::invalid("gate_amplitude", "must be positive"));
        }
        if self.nominal_excess_bias() <= 0.0 {
            return Err(ModelError::invalid(
                "gate_amplitude",
                "v_dc + gate_amplitude must exceed v_breakdown_0",
            ));
        }
        if !(self.eta_0 > 0.0 && self.eta_0 <= 1.0) {
            return Err(ModelError::invalid("eta_0", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.p_dark) {
            return Err(ModelError::invalid("p_dark", "must lie in [0, 1)"));
        }
        if self.r_bias < 0.0 {
            return Err(ModelError::invalid("r_bias", "must be non-negative"));
        }
        if self.r_sense < 0.0 {
            return Err(ModelError::invalid("r_sense", "must be non-negative"));
        }
        if self.v_punch_through >= self.v_breakdown_0 {
            return Err(ModelError::invalid("v_punch_through", "must be below v_breakdown_0"));
        }
        if self.gate_rate <= 0.0 || self.gate_width <= 0.0 {
            return Err(ModelError::invalid("gate_width", "gate width and rate must be positive"));
        }
        if self.gate_width >= self.gate_period() {
            return Err(ModelError::invalid("gate_width", "must be shorter than the gate period"));
        }
        if self.acceptance_window <= 0.0 || self.acceptance_window > self.gate_period() {
            return Err(ModelError::invalid(
                "acceptance_window",
                "must lie in (0, gate period]",
            ));
        }
        if self.gain_clamp < 1.0 {
            return Err(ModelError::invalid("gain_clamp", "must be at least 1"));
        }
        if self.miller_exponent <= 0.0 {
            return Err(ModelError::invalid("miller_exponent", "must be positive"));
        }
        for (field, value) in [
            ("responsivity", self.responsivity),
            ("avalanche_gain_constant", self.avalanche_gain_constant),
            ("charge_per_avalanche", self.charge_per_avalanche),
            ("thermal_resistance", self.thermal_resistance),
            ("capacitive_amplitude", self.capacitive_amplitude),
            ("discrimination_level", self.discrimination_level),
        ] {
            if value < 0.0 {
                return Err(ModelError::invalid(field, "must be non-negative"));
            }
        }
        for (field, value) in [
            ("thermal_time_constant", self.thermal_time_constant),
            ("ac_time_constant", self.ac_time_constant),
            ("ambient_temp", self.ambient_temp),
        ] {
            if value <= 0.0 {
                return Err(ModelError::invalid(field, "must be positive"));
            }
        }
        Ok(())
    }

    /// Parses a parameter file. Unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let params: ApdParams = serde_json::from_str(text)
            .map_err(|e| ModelError::InvalidInput(format!("parameter file: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters always serialize")
    }
}

impl Default for ApdParams {
    fn default() -> Self {
        Self::apd1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        ApdParams::apd1().validate().unwrap();
        ApdParams::apd2().validate().unwrap();
        assert!((ApdParams::apd1().nominal_excess_bias() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let p = ApdParams::apd1();
        assert_eq!(ApdParams::from_json(&p.to_json()).unwrap(), p);
        assert!(p.to_json().contains("\"coupling\": \"AC\""));
    }

    #[test]
    fn unknown_field_rejected() {
        let mut value: serde_json::Value = serde_json::from_str(&ApdParams::apd1().to_json()).unwrap();
        value["bias_tee"] = serde_json::json!(1.0);
        assert!(ApdParams::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn low_threshold_is_representable() {
        let p = ApdParams { discrimination_level: 0.02, ..ApdParams::apd1() };
        p.validate().unwrap();
        assert!(!p.discrimination_above_capacitive());
    }

    #[test]
    fn rejects_bias_above_breakdown() {
        let p = ApdParams { v_dc: 61.0, ..ApdParams::apd1() };
        assert!(matches!(p.validate(), Err(ModelError::InvalidParameter { field: "v_dc", .. })));
    }
}
