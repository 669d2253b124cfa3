//! Synthetic plant: sixteen eddy-current channels in the copper shell near
//! the vertical gap, modeled as a coupled RL network
//!
//! ```text
//! L di/dt + R i = u_applied + d(t)
//! ```
//!
//! with `L` the mutual-inductance matrix. Integration is backward Euler.

use std::io::Read;
use std::path::Path;

use nalgebra::{Cholesky, SMatrix, SVector};

use crate::correction::MutualMatrix;
use crate::error::{Error, Result};
use crate::signal_model::{ChannelVector, Unit, CHANNELS};

type Mat = SMatrix<f64, CHANNELS, CHANNELS>;
type Vector = SVector<f64, CHANNELS>;

/// Per-channel disturbance voltage source.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Disturbance {
    #[default]
    None,
    /// `amplitude` for `t >= start`, zero before.
    Step {
        amplitude: [f64; CHANNELS],
        start: f64,
    },
    /// `slope * (t - start)` for `t >= start`, zero before.
    Ramp {
        slope: [f64; CHANNELS],
        start: f64,
    },
    /// `amplitude * sin(2π f t + phase)`.
    Sinusoid {
        amplitude: [f64; CHANNELS],
        frequency: f64,
        phase: f64,
    },
    Table(DisturbanceTable),
}

impl Disturbance {
    pub fn at(&self, t: f64) -> [f64; CHANNELS] {
        match self {
            Disturbance::None => [0.0; CHANNELS],
            Disturbance::Step { amplitude, start } => {
                if t >= *start {
                    *amplitude
                } else {
                    [0.0; CHANNELS]
                }
            }
            Disturbance::Ramp { slope, start } => {
                if t >= *start {
                    slope.map(|s| s * (t - start))
                } else {
                    [0.0; CHANNELS]
                }
            }
            Disturbance::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                let s = (std::f64::consts::TAU * frequency * t + phase).sin();
                amplitude.map(|a| a * s)
            }
            Disturbance::Table(table) => table.at(t),
        }
    }

    /// Zeroes every channel not selected by `mask`.
    pub fn masked(self, mask: &[bool; CHANNELS]) -> Self {
        let apply = |v: [f64; CHANNELS]| -> [f64; CHANNELS] {
            std::array::from_fn(|i| if mask[i] { v[i] } else { 0.0 })
        };
        match self {
            Disturbance::None => Disturbance::None,
            Disturbance::Step { amplitude, start } => Disturbance::Step {
                amplitude: apply(amplitude),
                start,
            },
            Disturbance::Ramp { slope, start } => Disturbance::Ramp {
                slope: apply(slope),
                start,
            },
            Disturbance::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => Disturbance::Sinusoid {
                amplitude: apply(amplitude),
                frequency,
                phase,
            },
            Disturbance::Table(t) => Disturbance::Table(DisturbanceTable {
                times: t.times,
                rows: t.rows.into_iter().map(apply).collect(),
            }),
        }
    }
}

/// File-driven disturbance, zero-order held between rows. Zero before the
/// first row; the last row holds forever.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisturbanceTable {
    times: Vec<f64>,
    rows: Vec<[f64; CHANNELS]>,
}

impl DisturbanceTable {
    pub fn new(times: Vec<f64>, rows: Vec<[f64; CHANNELS]>) -> Result<Self> {
        if times.len() != rows.len() {
            return Err(Error::domain("disturbance times and rows differ in length"));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("disturbance times must be nondecreasing"));
        }
        if times
            .iter()
            .chain(rows.iter().flatten())
            .any(|x| !x.is_finite())
        {
            return Err(Error::domain(
                "disturbance table contains non-finite values",
            ));
        }
        Ok(Self { times, rows })
    }

    /// Parses CSV with header `t,ch0,...,ch15`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((0..CHANNELS).map(|i| format!("ch{i}")))
            .collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::domain(format!(
                "disturbance header must be `{}`",
                expected.join(",")
            )));
        }
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |k: usize| -> Result<f64> {
                record[k].parse::<f64>().map_err(|e| {
                    Error::domain(format!("disturbance row {}: column {k}: {e}", line + 1))
                })
            };
            times.push(parse(0)?);
            let mut row = [0.0; CHANNELS];
            for (i, r) in row.iter_mut().enumerate() {
                *r = parse(i + 1)?;
            }
            rows.push(row);
        }
        Self::new(times, rows)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }

    pub fn at(&self, t: f64) -> [f64; CHANNELS] {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            [0.0; CHANNELS]
        } else {
            self.rows[idx - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    /// Ohms, per channel.
    pub resistance: [f64; CHANNELS],
    pub inductance: MutualMatrix,
    /// Rogowski transduction, volts per amp.
    pub sense_gain: f64,
    pub disturbance: Disturbance,
}

impl Default for PlantParams {
    /// `L/R` is 1 ms, one hundred samples at the default 10 µs period.
    fn default() -> Self {
        Self {
            resistance: [0.62; CHANNELS],
            inductance: MutualMatrix::default(),
            sense_gain: 0.01,
            disturbance: Disturbance::None,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if self.resistance.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::config("plant.resistance", "must be finite and > 0"));
        }
        if self.inductance.n() != CHANNELS {
            return Err(Error::config("plant.inductance", "matrix must be 16x16"));
        }
        if Cholesky::new(inductance_matrix(&self.inductance)).is_none() {
            return Err(Error::config(
                "plant.inductance",
                "mutual-inductance matrix is not positive definite",
            ));
        }
        if !self.sense_gain.is_finite() {
            return Err(Error::config("plant.sense_gain", "must be finite"));
        }
        Ok(())
    }

    /// Static solution `R i = u + d` for constant inputs.
    pub fn steady_state(&self, total_input: &[f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|i| total_input[i] / self.resistance[i])
    }
}

fn inductance_matrix(m: &MutualMatrix) -> Mat {
    Mat::from_fn(|i, j| m.get(i, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub currents: [f64; CHANNELS],
    pub time: f64,
}

/// Backward-Euler integrator with the system matrix factored once.
#[derive(Debug, Clone)]
pub struct PlantStepper {
    l_over_dt: Mat,
    factor: Cholesky<f64, nalgebra::Const<CHANNELS>>,
    dt: f64,
}

impl PlantStepper {
    pub fn new(params: &PlantParams, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config("dt", "must be finite and > 0"));
        }
        params.validate()?;
        let l_over_dt = inductance_matrix(&params.inductance) / dt;
        let system = l_over_dt + Mat::from_diagonal(&Vector::from(params.resistance));
        let factor = Cholesky::new(system)
            .ok_or_else(|| Error::Internal("backward-Euler system matrix is singular".into()))?;
        Ok(Self {
            l_over_dt,
            factor,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solves `(L/dt + R) i_{k+1} = (L/dt) i_k + u + d(t + dt)`.
    pub fn step(
        &self,
        state: &PlantState,
        applied: &ChannelVector,
        disturbance: &Disturbance,
    ) -> Result<PlantState> {
        let t_next = state.time + self.dt;
        let d = disturbance.at(t_next);
        let drive = Vector::from_fn(|i, _| applied[i] + d[i]);
        let rhs = self.l_over_dt * Vector::from(state.currents) + drive;
        let next = self.factor.solve(&rhs);
        let currents: [f64; CHANNELS] = next.into();
        if currents.iter().any(|x| !x.is_finite()) {
            return Err(Error::Internal("plant state became non-finite".into()));
        }
        Ok(PlantState {
            currents,
            time: t_next,
        })
    }
}

/// Single backward-Euler step. Factors the system matrix on every call; use
/// [`PlantStepper`] inside loops.
pub fn plant_step(
    state: &PlantState,
    applied: &ChannelVector,
    params: &PlantParams,
    dt: f64,
) -> Result<PlantState> {
    PlantStepper::new(params, dt)?.step(state, applied, &params.disturbance)
}

/// Rogowski output: `sense_gain × current` per channel.
pub fn sense(state: &PlantState, params: &PlantParams) -> ChannelVector {
    ChannelVector::new(state.currents.map(|i| i * params.sense_gain), Unit::Volts)
        .expect("plant state is finite")
}
