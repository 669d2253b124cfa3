//! Mutual-inductance correction.
//!
//! The sixteen Rogowski channels couple through a symmetric circulant matrix
//! with three distinct nonzero values: the self term, first circular
//! neighbours, and second circular neighbours. The corrected output is
//!
//! ```text
//! u_out = v * unit_scale * M * (u_in ⊙ beta_r + alpha0)
//! ```
//!
//! Both evaluation paths exploit the band structure and never touch the zero
//! entries: five products per output channel.

use crate::error::{Error, Result};
use crate::fixed::{self, Q2_30};
use crate::signal_model::{ChannelVector, Unit, CHANNELS};

/// Offsets of the nonzero bands relative to the diagonal.
const BAND_OFFSETS: [isize; 5] = [-2, -1, 0, 1, 2];

/// Measured coupling values in henries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixParams {
    pub diag: f64,
    pub off1: f64,
    pub off2: f64,
}

impl Default for MatrixParams {
    fn default() -> Self {
        Self {
            diag: 620e-6,
            off1: -7e-6,
            off2: -1.67e-6,
        }
    }
}

impl MatrixParams {
    /// Coefficient for circular distance 0, 1 or 2.
    pub fn band(&self, distance: usize) -> f64 {
        match distance {
            0 => self.diag,
            1 => self.off1,
            2 => self.off2,
            _ => 0.0,
        }
    }
}

/// Symmetric circulant pentadiagonal coupling matrix, entries in henries.
#[derive(Debug, Clone, PartialEq)]
pub struct MutualMatrix {
    n: usize,
    entries: Vec<f64>,
    params: MatrixParams,
}

/// Builds the `n × n` circulant matrix. `n` must be at least 5 so the five
/// bands are distinct.
pub fn build_mutual_matrix(diag: f64, off1: f64, off2: f64, n: usize) -> Result<MutualMatrix> {
    if n < 5 {
        return Err(Error::domain(format!(
            "a pentadiagonal circulant needs n >= 5, got {n}"
        )));
    }
    if ![diag, off1, off2].iter().all(|x| x.is_finite()) {
        return Err(Error::domain("matrix parameters must be finite"));
    }
    let params = MatrixParams { diag, off1, off2 };
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            entries[i * n + j] = params.band(circular_distance(i, j, n));
        }
    }
    Ok(MutualMatrix { n, entries, params })
}

fn circular_distance(i: usize, j: usize, n: usize) -> usize {
    let d = (i + n - j) % n;
    d.min(n - d)
}

impl Default for MutualMatrix {
    fn default() -> Self {
        let p = MatrixParams::default();
        build_mutual_matrix(p.diag, p.off1, p.off2, CHANNELS).expect("default matrix is valid")
    }
}

impl MutualMatrix {
    pub fn from_params(p: MatrixParams, n: usize) -> Result<Self> {
        build_mutual_matrix(p.diag, p.off1, p.off2, n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> MatrixParams {
        self.params
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Writes the matrix as headerless row-major CSV, entries in henries at
    /// full round-trip precision.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        for i in 0..self.n {
            w.write_record(self.row(i).iter().map(|x| format!("{x:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Calibration for the correction stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionParams {
    pub alpha0: [f64; CHANNELS],
    pub beta_r: [f64; CHANNELS],
    /// Reciprocal of the power amplifier gain.
    pub v: f64,
    /// Converts the henry-valued matrix product to the output voltage scale.
    pub unit_scale: f64,
}

impl CorrectionParams {
    /// Identity calibration (`beta_r = 1`, `alpha0 = 0`) with
    /// `unit_scale = 1 / diag`, so the self term has unity gain.
    pub fn for_matrix(m: &MutualMatrix, v: f64) -> Self {
        Self {
            alpha0: [0.0; CHANNELS],
            beta_r: [1.0; CHANNELS],
            v,
            unit_scale: 1.0 / m.params().diag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_r.iter().any(|b| *b == 0.0 || !b.is_finite()) {
            return Err(Error::config(
                "correction.beta_r",
                "entries must be finite and nonzero",
            ));
        }
        if self.alpha0.iter().any(|a| !a.is_finite()) {
            return Err(Error::config("correction.alpha0", "entries must be finite"));
        }
        if !self.v.is_finite() || self.v == 0.0 {
            return Err(Error::config("correction.v", "must be finite and nonzero"));
        }
        if !(self.unit_scale.is_finite() && self.unit_scale > 0.0) {
            return Err(Error::config(
                "correction.unit_scale",
                "must be finite and > 0",
            ));
        }
        Ok(())
    }
}

fn check_dims(m: &MutualMatrix) -> Result<()> {
    if m.n != CHANNELS {
        return Err(Error::domain(format!(
            "matrix is {0}x{0} but the channel vector has {CHANNELS} entries",
            m.n
        )));
    }
    Ok(())
}

fn wrap(i: usize, d: isize) -> usize {
    (i as isize + d).rem_euclid(CHANNELS as isize) as usize
}

/// Floating-point correction.
pub fn correct(
    u_in: &ChannelVector,
    m: &MutualMatrix,
    p: &CorrectionParams,
) -> Result<ChannelVector> {
    check_dims(m)?;
    let x: [f64; CHANNELS] = std::array::from_fn(|j| u_in[j] * p.beta_r[j] + p.alpha0[j]);
    let gain = p.v * p.unit_scale;
    let mp = m.params();
    let out = std::array::from_fn(|i| {
        let acc: f64 = BAND_OFFSETS
            .iter()
            .map(|&d| mp.band(d.unsigned_abs()) * x[wrap(i, d)])
            .sum();
        gain * acc
    });
    ChannelVector::new(out, Unit::Volts)
}

/// Output of the fixed-point correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedCorrection {
    pub codes: [i16; CHANNELS],
    /// Set if the accumulator or the output word saturated on any channel.
    pub overflow: bool,
}

/// Quantized correction coefficients.
///
/// Each input path `j` carries three signed Q2.30 coefficients
/// `v * unit_scale * band(d) * beta_r[j]`, one per band distance. The
/// `alpha0` contribution `v * unit_scale * M * alpha0` is a constant, stored
/// in output-code units with 30 fractional bits and used to seed the
/// accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedCorrector {
    path_coeffs: [[i32; 3]; CHANNELS],
    offset: [i64; CHANNELS],
}

impl FixedCorrector {
    /// `lsb` is the volts-per-code of both the input and output words.
    pub fn new(m: &MutualMatrix, p: &CorrectionParams, lsb: f64) -> Result<Self> {
        check_dims(m)?;
        p.validate()?;
        let gain = p.v * p.unit_scale;
        let mp = m.params();
        let mut path_coeffs = [[0i32; 3]; CHANNELS];
        for (j, coeffs) in path_coeffs.iter_mut().enumerate() {
            for (d, c) in coeffs.iter_mut().enumerate() {
                *c = Q2_30.quantize(gain * mp.band(d) * p.beta_r[j], "correction.coefficients")?;
            }
        }
        let mut offset = [0i64; CHANNELS];
        for (i, o) in offset.iter_mut().enumerate() {
            let volts: f64 = BAND_OFFSETS
                .iter()
                .map(|&d| mp.band(d.unsigned_abs()) * p.alpha0[wrap(i, d)])
                .sum::<f64>()
                * gain;
            let q = (volts / lsb * Q2_30.scale()).round_ties_even();
            if q.is_nan() || q.abs() > fixed::ACC_MAX as f64 {
                return Err(Error::config(
                    "correction.alpha0",
                    "offset does not fit the 48-bit accumulator",
                ));
            }
            *o = q as i64;
        }
        Ok(Self {
            path_coeffs,
            offset,
        })
    }

    /// Q2.30 coefficient applied to input path `j` at circular distance `band`.
    pub fn coefficient(&self, j: usize, band: usize) -> i32 {
        self.path_coeffs[j][band]
    }

    pub fn offset(&self, i: usize) -> i64 {
        self.offset[i]
    }
}

/// Fixed-point correction: 16-bit data times Q2.30 coefficients, summed in a
/// 48-bit accumulator, narrowed once with round-half-to-even.
pub fn correct_fixed(u_in: &[i16; CHANNELS], q: &FixedCorrector) -> FixedCorrection {
    let mut overflow = false;
    let codes = std::array::from_fn(|i| {
        let mut acc = q.offset[i];
        for &d in &BAND_OFFSETS {
            let j = wrap(i, d);
            let term = u_in[j] as i64 * q.path_coeffs[j][d.unsigned_abs()] as i64;
            acc = fixed::acc_add(acc, term, &mut overflow);
        }
        fixed::saturate_i16(
            fixed::shr_round_half_even(acc, Q2_30.frac_bits),
            &mut overflow,
        )
    });
    FixedCorrection { codes, overflow }
}
