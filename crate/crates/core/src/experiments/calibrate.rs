use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::countermeasures::log_grid;
use crate::error::{ModelError, Result};
use crate::params::ApdParams;
use crate::sim::{cw_click_probability, cw_mean_photocurrent};

/// A measured value the model must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Anchor {
    /// Lowest CW power with zero counts at this bias resistor.
    GapOnset { r_bias: f64, power: f64, tolerance: f64 },
    /// Power at which counting resumes above the gap.
    GapRecovery { r_bias: f64, power: f64, tolerance: f64 },
    /// Time-averaged photocurrent at a given CW power.
    Photocurrent { r_bias: f64, power: f64, current: f64, tolerance: f64 },
    DetectionEfficiency { value: f64, tolerance: f64 },
    /// Gap onset with a raised discrimination level, where heating is what blinds.
    ThermalGapOnset { r_bias: f64, discrimination_level: f64, power: f64, tolerance: f64 },
}

impl Anchor {
    pub fn tolerance(&self) -> f64 {
        match *self {
            Anchor::GapOnset { tolerance, .. }
            | Anchor::GapRecovery { tolerance, .. }
            | Anchor::Photocurrent { tolerance, .. }
            | Anchor::DetectionEfficiency { tolerance, .. }
            | Anchor::ThermalGapOnset { tolerance, .. } => tolerance,
        }
    }

    fn target(&self) -> f64 {
        match *self {
            Anchor::GapOnset { power, .. }
            | Anchor::GapRecovery { power, .. }
            | Anchor::ThermalGapOnset { power, .. } => power,
            Anchor::Photocurrent { current, .. } => current,
            Anchor::DetectionEfficiency { value, .. } => value,
        }
    }

    fn knob(&self) -> Knob {
        match self {
            Anchor::GapOnset { .. } => Knob::AvalancheGain,
            Anchor::GapRecovery { .. } => Knob::PunchThrough,
            Anchor::Photocurrent { .. } => Knob::Responsivity,
            Anchor::DetectionEfficiency { .. } => Knob::Efficiency,
            Anchor::ThermalGapOnset { .. } => Knob::ThermalResistance,
        }
    }

    /// Blind transitions at 100 kOhm, the photocurrent at the blind point and the
    /// nominal detection efficiency.
    pub fn apd1_set() -> Vec<Anchor> {
        vec![
            Anchor::GapOnset { r_bias: 100e3, power: 2.5e-6, tolerance: 0.2 },
            Anchor::GapRecovery { r_bias: 100e3, power: 26e-6, tolerance: 0.3 },
            Anchor::Photocurrent { r_bias: 100e3, power: 2.5e-6, current: 19e-6, tolerance: 0.1 },
            Anchor::DetectionEfficiency { value: 0.11, tolerance: 0.01 },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Knob {
    Responsivity,
    AvalancheGain,
    PunchThrough,
    Efficiency,
    ThermalResistance,
}

impl Knob {
    fn name(self) -> &'static str {
        match self {
            Knob::Responsivity => "responsivity",
            Knob::AvalancheGain => "avalanche_gain_constant",
            Knob::PunchThrough => "v_punch_through",
            Knob::Efficiency => "eta_0",
            Knob::ThermalResistance => "thermal_resistance",
        }
    }

    fn get(self, p: &ApdParams) -> f64 {
        match self {
            Knob::Responsivity => p.responsivity,
            Knob::AvalancheGain => p.avalanche_gain_constant,
            Knob::PunchThrough => p.v_punch_through,
            Knob::Efficiency => p.eta_0,
            Knob::ThermalResistance => p.thermal_resistance,
        }
    }

    fn set(self, p: &mut ApdParams, value: f64) {
        match self {
            Knob::Responsivity => p.responsivity = value,
            Knob::AvalancheGain => p.avalanche_gain_constant = value,
            Knob::PunchThrough => p.v_punch_through = value,
            Knob::Efficiency => p.eta_0 = value,
            Knob::ThermalResistance => p.thermal_resistance = value,
        }
    }

    /// Scale-type constants are searched in log space, voltages linearly.
    fn to_search(self, value: f64) -> f64 {
        match self {
            Knob::PunchThrough => value,
            _ => value.max(f64::MIN_POSITIVE).ln(),
        }
    }

    fn from_search(self, x: f64) -> f64 {
        match self {
            Knob::PunchThrough => x,
            _ => x.exp(),
        }
    }

    fn step(self) -> f64 {
        match self {
            Knob::PunchThrough => 0.25,
            _ => 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub max_iterations: u64,
    pub restarts: usize,
    /// Power range searched for gap edges (W).
    pub power_range: (f64, f64),
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { max_iterations: 400, restarts: 2, power_range: (1e-10, 1e-2) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedConstant {
    pub name: String,
    pub initial: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResidual {
    pub anchor: Anchor,
    /// Model prediction; `None` when the feature (e.g. a gap) is absent.
    pub model_value: Option<f64>,
    /// Relative error against the anchor.
    pub residual: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: ApdParams,
    pub fitted: Vec<FittedConstant>,
    pub residuals: Vec<AnchorResidual>,
    pub converged: bool,
    pub cost: f64,
    /// Photocurrent per watt at the first photocurrent anchor (A/W).
    pub responsivity_gain: Option<f64>,
}

/// Relative residual charged when the anchored feature does not exist.
const MISSING_FEATURE: f64 = 10.0;

/// Zero-count gap edges from the exact click probability, without sampling.
/// Returns the first blind interval as `(onset, recovery)`.
pub fn gap_edges_exact(params: &ApdParams, range: (f64, f64)) -> Result<Option<(f64, Option<f64>)>> {
    let blind = |p: f64| -> Result<bool> { Ok(cw_click_probability(params, p)? == 0.0) };
    let grid = log_grid(range.0, range.1, 40);
    let mut first = None;
    for (i, &p) in grid.iter().enumerate() {
        if blind(p)? {
            first = Some(i);
            break;
        }
    }
    let Some(first) = first else { return Ok(None) };
    let bisect = |mut counting: f64, mut dark: f64| -> Result<(f64, f64)> {
        while (counting / dark).ln().abs() > 1e-9 {
            let mid = (counting * dark).sqrt();
            if blind(mid)? {
                dark = mid;
            } else {
                counting = mid;
            }
        }
        Ok((counting, dark))
    };
    let onset = if first == 0 { grid[0] } else { bisect(grid[first - 1], grid[first])?.1 };
    let mut recovery = None;
    for i in first + 1..grid.len() {
        if !blind(grid[i])? {
            recovery = Some(bisect(grid[i], grid[i - 1])?.0);
            break;
        }
    }
    Ok(Some((onset, recovery)))
}

fn anchor_value(params: &ApdParams, anchor: &Anchor, range: (f64, f64)) -> Result<Option<f64>> {
    Ok(match *anchor {
        Anchor::GapOnset { r_bias, .. } => {
            let p = ApdParams { r_bias, ..params.clone() };
            gap_edges_exact(&p, range)?.map(|g| g.0)
        }
        Anchor::GapRecovery { r_bias, .. } => {
            let p = ApdParams { r_bias, ..params.clone() };
            gap_edges_exact(&p, range)?.and_then(|g| g.1)
        }
        Anchor::ThermalGapOnset { r_bias, discrimination_level, .. } => {
            let p = ApdParams { r_bias, discrimination_level, ..params.clone() };
            gap_edges_exact(&p, range)?.map(|g| g.0)
        }
        Anchor::Photocurrent { r_bias, power, .. } => {
            let p = ApdParams { r_bias, ..params.clone() };
            Some(cw_mean_photocurrent(&p, power)?)
        }
        Anchor::DetectionEfficiency { .. } => Some(params.eta_0),
    })
}

fn residuals(params: &ApdParams, anchors: &[Anchor], range: (f64, f64)) -> Result<Vec<AnchorResidual>> {
    anchors
        .iter()
        .map(|a| {
            let model_value = anchor_value(params, a, range)?;
            let residual = match model_value {
                Some(v) => v / a.target() - 1.0,
                None => MISSING_FEATURE,
            };
            Ok(AnchorResidual {
                anchor: a.clone(),
                model_value,
                residual,
                within_tolerance: residual.abs() <= a.tolerance(),
            })
        })
        .collect()
}

struct Problem<'a> {
    base: &'a ApdParams,
    knobs: &'a [Knob],
    anchors: &'a [Anchor],
    range: (f64, f64),
}

impl Problem<'_> {
    fn params_at(&self, x: &[f64]) -> ApdParams {
        let mut p = self.base.clone();
        for (knob, &xi) in self.knobs.iter().zip(x) {
            knob.set(&mut p, knob.from_search(xi));
        }
        p
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, ArgminError> {
        let p = self.params_at(x);
        if p.validate().is_err() {
            return Ok(1e6);
        }
        Ok(match residuals(&p, self.anchors, self.range) {
            Ok(r) => r.iter().map(|a| a.residual * a.residual).sum(),
            Err(_) => 1e6,
        })
    }
}

/// Fits the constants the anchors constrain, by Nelder-Mead on the sum of squared
/// relative residuals, starting from `base`.
///
/// Each anchor kind frees one constant: photocurrent fixes the responsivity, gap
/// onset the avalanche gain constant, gap recovery the punch-through voltage,
/// efficiency `eta_0`, and a thermal gap onset the thermal resistance. Constants
/// no anchor constrains keep their `base` values.
pub fn calibrate(base: &ApdParams, anchors: &[Anchor], options: &CalibrationOptions) -> Result<CalibrationResult> {
    if anchors.is_empty() {
        return Err(ModelError::InvalidInput("calibration needs at least one anchor".into()));
    }
    for a in anchors {
        if !(a.target() > 0.0 && a.tolerance() >= 0.0) {
            return Err(ModelError::InvalidInput(format!("anchor {a:?} needs a positive target")));
        }
    }
    base.validate()?;
    let mut knobs: Vec<Knob> = Vec::new();
    for a in anchors {
        if !knobs.contains(&a.knob()) {
            knobs.push(a.knob());
        }
    }
    let problem = Problem { base, knobs: &knobs, anchors, range: options.power_range };
    let mut x: Vec<f64> = knobs.iter().map(|k| k.to_search(k.get(base))).collect();
    let mut cost = problem.cost(&x).map_err(|e| ModelError::InvalidInput(e.to_string()))?;

    for _ in 0..options.restarts.max(1) {
        if cost == 0.0 {
            break;
        }
        let mut simplex = vec![x.clone()];
        for (i, k) in knobs.iter().enumerate() {
            let mut v = x.clone();
            v[i] += k.step();
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| ModelError::InvalidInput(e.to_string()))?;
        let problem = Problem { base, knobs: &knobs, anchors, range: options.power_range };
        let run = Executor::new(problem, solver)
            .configure(|s| s.max_iters(options.max_iterations))
            .run()
            .map_err(|e| ModelError::InvalidInput(format!("optimizer: {e}")))?;
        let state = run.state();
        if let Some(best) = state.get_best_param() {
            if state.get_best_cost() < cost {
                cost = state.get_best_cost();
                x = best.clone();
            }
        }
    }

    let params = problem.params_at(&x);
    let residuals = residuals(&params, anchors, options.power_range)?;
    let responsivity_gain = anchors.iter().zip(&residuals).find_map(|(a, r)| match a {
        Anchor::Photocurrent { power, .. } => r.model_value.map(|i| i / power),
        _ => None,
    });
    Ok(CalibrationResult {
        fitted: knobs
            .iter()
            .map(|k| FittedConstant { name: k.name().into(), initial: k.get(base), value: k.get(&params) })
            .collect(),
        converged: residuals.iter().all(|r| r.within_tolerance),
        cost,
        residuals,
        responsivity_gain,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_parse() {
        let a: Anchor =
            serde_json::from_str(r#"{"kind":"gap_onset","r_bias":1e5,"power":2.5e-6,"tolerance":0.2}"#).unwrap();
        assert_eq!(a, Anchor::apd1_set()[0]);
    }

    #[test]
    fn empty_anchor_set_rejected() {
        assert!(calibrate(&ApdParams::apd1(), &[], &CalibrationOptions::default()).is_err());
    }
}
