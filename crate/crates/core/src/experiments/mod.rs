//! Figure-style sweeps, the attack/countermeasure matrix and anchor calibration.

mod calibrate;
mod matrix;
mod scan;
mod sweep;

pub use calibrate::{calibrate, gap_edges_exact, Anchor, AnchorResidual, CalibrationOptions, CalibrationResult, FittedConstant};
pub use matrix::{calibrate_click_charge, run_attack_matrix, MatrixCell, MatrixOptions};
pub use scan::{run_ac_amplitude_sweep, run_rbias_scan, GAP_SCAN_RANGE};
pub use sweep::{run_sweep, sweep_points, write_sweep_csv, Scale, SweepRow, SweepSpec, SweepVariable};
