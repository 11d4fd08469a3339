//! Simulator of a gated InGaAs avalanche photodiode under bright illumination.
//!
//! The model covers bias feedback through a series resistor, linear-mode gain
//! below breakdown, Geiger-mode detection statistics, click discrimination with
//! DC or AC coupling, optical heating, the five illumination attacks and the
//! countermeasures that defeat them.

pub mod attacks;
pub mod countermeasures;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod params;
pub mod physics;
pub mod sim;
pub mod waveform;

pub use error::{ModelError, Result};
pub use exec::Execution;
pub use params::{ApdParams, Coupling};
pub use sim::{simulate_cw, simulate_gate, simulate_trace, DetectorState, GateOutcome, SimConfig, TraceResult};
pub use waveform::{OpticalWaveform, Segment};
