use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::countermeasures::{find_zero_count_gap, GapScan};
use crate::error::{ModelError, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::params::ApdParams;
use crate::sim::simulate_cw;

use super::scan::GAP_SCAN_RANGE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Power,
    RBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub range: (f64, f64),
    pub points: usize,
    pub scale: Scale,
    pub fixed_params: ApdParams,
    pub gates_per_point: u64,
    pub seed: u64,
    /// CW power at which the per-row columns of an r_bias sweep are evaluated (W).
    pub probe_power: f64,
    pub execution: Execution,
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, range: (f64, f64), points: usize, fixed_params: ApdParams) -> Self {
        SweepSpec {
            variable,
            range,
            points,
            scale: match variable {
                SweepVariable::Power => Scale::Log,
                SweepVariable::RBias => Scale::Linear,
            },
            fixed_params,
            gates_per_point: 1_000_000,
            seed: 0,
            probe_power: 10e-6,
            execution: Execution::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (min, max) = self.range;
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(ModelError::InvalidInput(format!("sweep range ({min}, {max}) needs min < max")));
        }
        if self.points < 2 {
            return Err(ModelError::InvalidInput("a sweep needs at least 2 points".into()));
        }
        if self.gates_per_point < 10_000 {
            return Err(ModelError::InvalidInput("gates_per_point must be at least 10^4".into()));
        }
        if self.scale == Scale::Log && min <= 0.0 {
            return Err(ModelError::InvalidInput("a log sweep needs a positive lower bound".into()));
        }
        if min < 0.0 {
            return Err(ModelError::InvalidInput("swept quantities are non-negative".into()));
        }
        self.fixed_params.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x_value: f64,
    pub count_rate: f64,
    pub mean_photocurrent: f64,
    pub ac_amplitude: f64,
    pub blinded: bool,
    pub i_b: Option<f64>,
    pub i_r: Option<f64>,
}

pub fn sweep_points(spec: &SweepSpec) -> Vec<f64> {
    let (min, max) = spec.range;
    let last = (spec.points - 1) as f64;
    (0..spec.points)
        .map(|i| {
            let f = i as f64 / last;
            match spec.scale {
                Scale::Linear => min + (max - min) * f,
                Scale::Log => min * (max / min).powf(f),
            }
        })
        .collect()
}

/// One row per point, in increasing `x_value`. Point `i` draws from random
/// stream `i`, so the output depends only on the spec.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let xs = sweep_points(spec);
    try_map_indexed(spec.execution, xs.len(), |i| {
        let x = xs[i];
        let row = || -> Result<SweepRow> {
            let (params, power) = match spec.variable {
                SweepVariable::Power => (spec.fixed_params.clone(), x),
                SweepVariable::RBias => (ApdParams { r_bias: x, ..spec.fixed_params.clone() }, spec.probe_power),
            };
            let cw = simulate_cw(&params, power, spec.gates_per_point, spec.seed, i as u64)?;
            let (i_b, i_r) = match spec.variable {
                SweepVariable::Power => (None, None),
                SweepVariable::RBias => {
                    let scan = GapScan {
                        gates_per_point: spec.gates_per_point,
                        seed: spec.seed.wrapping_add(i as u64 + 1),
                        execution: Execution::Sequential,
                        ..GapScan::default()
                    };
                    match find_zero_count_gap(&params, GAP_SCAN_RANGE.0, GAP_SCAN_RANGE.1, &scan)? {
                        Some(gap) => (Some(gap.onset), gap.recovery),
                        None => (None, None),
                    }
                }
            };
            Ok(SweepRow {
                x_value: x,
                count_rate: cw.count_rate,
                mean_photocurrent: cw.mean_photocurrent,
                ac_amplitude: cw.ac_amplitude,
                blinded: cw.blinded(),
                i_b,
                i_r,
            })
        };
        row().map_err(|e| ModelError::SweepPoint { index: i, x, source: Box::new(e) })
    })
}

/// Writes rows as CSV. Floats use the shortest representation that round-trips.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], variable: SweepVariable, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["x_value", "count_rate_hz", "photocurrent_a", "ac_amplitude_v", "blinded"];
    if variable == SweepVariable::RBias {
        header.extend(["i_b_w", "i_r_w"]);
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        let mut record = vec![
            format!("{:e}", r.x_value),
            format!("{:e}", r.count_rate),
            format!("{:e}", r.mean_photocurrent),
            format!("{:e}", r.ac_amplitude),
            r.blinded.to_string(),
        ];
        if variable == SweepVariable::RBias {
            record.push(opt(r.i_b));
            record.push(opt(r.i_r));
        }
        w.write_record(&record)?;
    }
    w.flush()
}
