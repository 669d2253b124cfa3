//! Software model of a 16-channel error-field feedback system for a
//! reversed-field-pinch device with a split ("double-C") conducting shell.
//!
//! Two boards are modeled. The sample module digitizes sixteen Rogowski
//! coils, decouples them through the measured mutual-inductance matrix, and
//! runs one discrete PID per channel. The coil control module receives the
//! result over a serial link and drives the power amplifiers through 16-bit
//! DACs. A lumped RL plant closes the loop.
//!
//! Modules, bottom up:
//!
//! - [`signal_model`]: amplifier, ADC, DAC and power amplifier transfer functions
//! - [`correction`]: mutual-inductance matrix and the correction stage
//! - [`pid`]: velocity-form PID, floating and fixed point
//! - [`link`]: frame codec and link latency/loss model
//! - [`plant`]: coupled RL eddy-current plant
//! - [`loop_runner`]: the closed-loop scheduler and latency measurement
//! - [`trace`]: per-step records and CSV persistence

pub mod correction;
pub mod error;
pub mod fixed;
pub mod link;
pub mod loop_runner;
pub mod pid;
pub mod plant;
pub mod signal_model;
pub mod trace;

pub use correction::{
    build_mutual_matrix, correct, correct_fixed, CorrectionParams, FixedCorrection, FixedCorrector,
    MatrixParams, MutualMatrix,
};
pub use error::{Error, Result};
pub use link::{decode_frame, encode_frame, Delivery, Frame, FrameDecoder, Link, LinkModel};
pub use loop_runner::{
    measure_pipeline_latency, run_both, run_closed_loop, run_step_response, Arithmetic, Datapath,
    LatencyReport, LoopConfig, PlantConfig,
};
pub use pid::{
    pid_reset, pid_step, pid_step_fixed, FixedPidGains, FixedPidState, PidGains, PidState,
};
pub use plant::{plant_step, sense, Disturbance, DisturbanceTable, PlantParams, PlantState};
pub use signal_model::{
    adc_dequantize, adc_quantize, amplify, dac_code_to_voltage, power_amp, AdcConfig,
    ChannelVector, DacConfig, Unit, CHANNELS,
};
pub use trace::{Trace, TraceRecord};
