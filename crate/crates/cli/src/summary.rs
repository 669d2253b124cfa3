//! Text summary of a trace.
//!
//! The error of a channel is its plant current (setpoint zero). Every number
//! here is a function of the trace CSV alone.

use std::fmt;

use efield_core::{Trace, CHANNELS};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSummary {
    /// Largest |current| over the run, amps.
    pub peak_error: f64,
    /// First step after which |current| stays below 1% of the peak.
    pub settling_step: u64,
    /// |current| at the final step, amps.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub channels: Vec<ChannelSummary>,
    pub frames_lost: u64,
    /// Steps on which any fixed-point stage saturated.
    pub overflow_steps: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("cannot summarize an empty trace")]
pub struct EmptyTrace;

/// Settling step of one error sequence: the first index after which every
/// |e| is below `fraction × peak`. Zero for an all-zero sequence.
pub fn settling_step(
    errors: impl DoubleEndedIterator<Item = f64> + ExactSizeIterator,
    fraction: f64,
) -> (f64, u64) {
    let values: Vec<f64> = errors.map(f64::abs).collect();
    let peak = values.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return (0.0, 0);
    }
    let threshold = fraction * peak;
    let settle = values
        .iter()
        .rposition(|v| *v >= threshold)
        .map_or(0, |k| k as u64 + 1);
    (peak, settle)
}

pub fn emit_summary(trace: &Trace) -> Result<Summary, EmptyTrace> {
    let last = trace.last().ok_or(EmptyTrace)?;
    let channels = (0..CHANNELS)
        .map(|ch| {
            let (peak_error, settling_step) =
                settling_step(trace.records.iter().map(|r| r.currents[ch]), 0.01);
            ChannelSummary {
                peak_error,
                settling_step,
                residual: last.currents[ch].abs(),
            }
        })
        .collect();
    Ok(Summary {
        steps: trace.len(),
        channels,
        frames_lost: last.frames_lost,
        overflow_steps: trace.records.iter().filter(|r| r.ovf != 0).count(),
    })
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(
            f,
            "{:>3}  {:>14}  {:>9}  {:>14}",
            "ch", "peak_err_A", "settle", "residual_A"
        )?;
        for (ch, c) in self.channels.iter().enumerate() {
            writeln!(
                f,
                "{ch:>3}  {:>14.6e}  {:>9}  {:>14.6e}",
                c.peak_error, c.settling_step, c.residual
            )?;
        }
        writeln!(f, "frames_lost: {}", self.frames_lost)?;
        write!(f, "overflow_steps: {}", self.overflow_steps)
    }
}
