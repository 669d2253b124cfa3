//! Per-channel discrete PID in incremental (velocity) form:
//!
//! ```text
//! u_k = u_{k-1} + Kp * [ (1 + dt/Ti + Td/dt) e_k + (-1 - 2 Td/dt) e_{k-1} + (Td/dt) e_{k-2} ]
//! ```
//!
//! The output is clamped to `[output_min, output_max]` and the clamped value is
//! what gets stored as `u_{k-1}`, which is the anti-windup scheme. Setting
//! `ti = f64::INFINITY` disables the integral term.

use crate::error::{Error, Result};
use crate::fixed::{self, Q16_16};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    /// Integral time `Kp / Ki`, seconds. `f64::INFINITY` disables the term.
    pub ti: f64,
    /// Derivative time `Kd / Kp`, seconds.
    pub td: f64,
    /// Sample period, seconds.
    pub dt: f64,
    pub output_min: f64,
    pub output_max: f64,
}

impl Default for PidGains {
    /// PI tuned on one channel of the default plant (`L/R` = 1 ms, 10 µs
    /// period, two samples of loop delay).
    fn default() -> Self {
        Self {
            kp: 8.0,
            ti: 2e-4,
            td: 0.0,
            dt: 1e-5,
            output_min: -5.0,
            output_max: 5.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "sample period must be finite and > 0"));
        }
        if !self.kp.is_finite() {
            return Err(Error::config("pid.kp", "must be finite"));
        }
        if self.ti.is_nan() || self.ti <= 0.0 {
            return Err(Error::config(
                "pid.ti",
                "must be > 0 (inf disables the integral)",
            ));
        }
        if !(self.td.is_finite() && self.td >= 0.0) {
            return Err(Error::config("pid.td", "must be finite and >= 0"));
        }
        if !(self.output_min.is_finite() && self.output_max.is_finite()) {
            return Err(Error::config(
                "pid.output_min",
                "output limits must be finite",
            ));
        }
        if self.output_min >= self.output_max {
            return Err(Error::config(
                "pid.output_max",
                "must be greater than pid.output_min",
            ));
        }
        Ok(())
    }

    /// The three composite coefficients `(c0, c1, c2)` multiplying
    /// `e_k`, `e_{k-1}`, `e_{k-2}`.
    pub fn coefficients(&self) -> [f64; 3] {
        let r = self.td / self.dt;
        [
            self.kp * (1.0 + self.dt / self.ti + r),
            self.kp * (-1.0 - 2.0 * r),
            self.kp * r,
        ]
    }
}

/// Error history and last output of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub e_k1: f64,
    pub e_k2: f64,
    pub u_k1: f64,
    pub step_count: u64,
}

pub fn pid_step(state: &PidState, e_k: f64, g: &PidGains) -> Result<(f64, PidState)> {
    if !e_k.is_finite() {
        return Err(Error::domain(format!(
            "pid error input {e_k} is not finite"
        )));
    }
    let r = g.td / g.dt;
    let increment =
        g.kp * ((1.0 + g.dt / g.ti + r) * e_k + (-1.0 - 2.0 * r) * state.e_k1 + r * state.e_k2);
    let u_k = (state.u_k1 + increment).clamp(g.output_min, g.output_max);
    Ok((
        u_k,
        PidState {
            e_k1: e_k,
            e_k2: state.e_k1,
            u_k1: u_k,
            step_count: state.step_count + 1,
        },
    ))
}

pub fn pid_reset(_state: &PidState) -> PidState {
    PidState::default()
}

/// Quantized gains for the fixed-point controller: the three composite
/// coefficients in Q16.16, plus output limits in Q.16 code units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPidGains {
    pub coeffs: [i32; 3],
    pub out_min: i64,
    pub out_max: i64,
}

impl FixedPidGains {
    /// Input errors and outputs are both words of `lsb` volts per code.
    /// Limits beyond the 16-bit word range are clamped to it.
    pub fn new(g: &PidGains, lsb: f64) -> Result<Self> {
        g.validate()?;
        let [c0, c1, c2] = g.coefficients();
        let coeffs = [
            Q16_16.quantize(c0, "pid.c0")?,
            Q16_16.quantize(c1, "pid.c1")?,
            Q16_16.quantize(c2, "pid.c2")?,
        ];
        let limit = |v: f64| {
            let code = (v / lsb).round().clamp(i16::MIN as f64, i16::MAX as f64) as i64;
            code << Q16_16.frac_bits
        };
        Ok(Self {
            coeffs,
            out_min: limit(g.output_min),
            out_max: limit(g.output_max),
        })
    }

    pub fn coefficients_f64(&self) -> [f64; 3] {
        self.coeffs.map(|c| Q16_16.to_f64(c as i64))
    }
}

/// Fixed-point controller state. The last output is kept at full Q.16
/// precision so rounding does not accumulate through the increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FixedPidState {
    pub e_k1: i16,
    pub e_k2: i16,
    pub u_k1: i64,
    pub step_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPidOutput {
    pub code: i16,
    /// Accumulator or output-word saturation.
    pub overflow: bool,
}

pub fn pid_step_fixed(
    state: &FixedPidState,
    e_k: i16,
    g: &FixedPidGains,
) -> (FixedPidOutput, FixedPidState) {
    let mut overflow = false;
    let [c0, c1, c2] = g.coeffs.map(i64::from);
    let mut acc = state.u_k1;
    acc = fixed::acc_add(acc, c0 * e_k as i64, &mut overflow);
    acc = fixed::acc_add(acc, c1 * state.e_k1 as i64, &mut overflow);
    acc = fixed::acc_add(acc, c2 * state.e_k2 as i64, &mut overflow);
    let u = acc.clamp(g.out_min, g.out_max);
    let code = fixed::saturate_i16(
        fixed::shr_round_half_even(u, Q16_16.frac_bits),
        &mut overflow,
    );
    (
        FixedPidOutput { code, overflow },
        FixedPidState {
            e_k1: e_k,
            e_k2: state.e_k1,
            u_k1: u,
            step_count: state.step_count + 1,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unclamped(kp: f64, ti: f64, td: f64, dt: f64) -> PidGains {
        PidGains {
            kp,
            ti,
            td,
            dt,
            output_min: -1e12,
            output_max: 1e12,
        }
    }

    /// Positional form with a backward-rectangle integral and a backward
    /// difference derivative; the velocity form is its first difference.
    fn positional(errors: &[f64], g: &PidGains) -> Vec<f64> {
        let mut sum = 0.0;
        let mut prev = 0.0;
        errors
            .iter()
            .map(|&e| {
                sum += e;
                let u = g.kp * e + g.kp / g.ti * g.dt * sum + g.kp * g.td * (e - prev) / g.dt;
                prev = e;
                u
            })
            .collect()
    }

    fn run(errors: &[f64], g: &PidGains) -> Vec<f64> {
        let mut s = PidState::default();
        errors
            .iter()
            .map(|&e| {
                let (u, next) = pid_step(&s, e, g).unwrap();
                s = next;
                u
            })
            .collect()
    }

    #[test]
    fn zero_errors_hold_output() {
        let s = PidState {
            u_k1: 1.25,
            ..PidState::default()
        };
        let (u, _) = pid_step(&s, 0.0, &PidGains::default()).unwrap();
        assert_eq!(u, 1.25);
    }

    #[test]
    fn pure_p_constant_error() {
        let g = unclamped(3.0, f64::INFINITY, 0.0, 1e-5);
        let us = run(&[0.7; 20], &g);
        assert_eq!(us[0], 3.0 * 0.7);
        assert!(us.iter().all(|u| *u == us[0]));
    }

    #[test]
    fn first_step_without_derivative() {
        let g = unclamped(2.5, 4e-4, 0.0, 1e-5);
        let e = 0.3;
        let (u, _) = pid_step(&PidState::default(), e, &g).unwrap();
        assert_eq!(u, g.kp * ((1.0 + g.dt / g.ti) * e));
    }

    #[test]
    fn velocity_matches_positional() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = unclamped(1.7, 3e-4, 2e-6, 1e-5);
        let errors: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = run(&errors, &g);
        let p = positional(&errors, &g);
        for (a, b) in v.iter().zip(&p) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn output_clamped_and_stored() {
        let g = PidGains {
            kp: 10.0,
            ti: f64::INFINITY,
            ..PidGains::default()
        };
        let (u, s) = pid_step(&PidState::default(), 2.0, &g).unwrap();
        assert_eq!(u, 5.0);
        assert_eq!(s.u_k1, 5.0);
        // Anti-windup: reversing the error moves off the rail immediately.
        let (u, _) = pid_step(&s, 1.9, &g).unwrap();
        assert_eq!(u, 5.0 + 10.0 * (1.9 - 2.0));
    }

    #[test]
    fn non_finite_error_rejected() {
        assert!(matches!(
            pid_step(&PidState::default(), f64::NAN, &PidGains::default()),
            Err(Error::InputDomain(_))
        ));
    }

    #[test]
    fn gain_validation() {
        let ok_negative = PidGains {
            kp: -1.0,
            ..PidGains::default()
        };
        assert!(ok_negative.validate().is_ok());
        let bad = PidGains {
            dt: 0.0,
            ..PidGains::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "dt"));
        let bad = PidGains {
            ti: 0.0,
            ..PidGains::default()
        };
        assert!(bad.validate().is_err());
        let bad = PidGains {
            td: -1.0,
            ..PidGains::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reset_examples() {
        let dirty = PidState {
            e_k1: 1.0,
            e_k2: -2.0,
            u_k1: 3.0,
            step_count: 9,
        };
        assert_eq!(pid_reset(&dirty), PidState::default());
        let g = unclamped(2.0, f64::INFINITY, 0.0, 1e-5);
        let (u, _) = pid_step(&pid_reset(&dirty), 1.0, &g).unwrap();
        assert_eq!(u, 2.0);
    }

    #[test]
    fn reset_then_replay_matches_fresh() {
        let g = PidGains::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let errors: Vec<f64> = (0..500).map(|_| rng.random_range(-0.2..0.2)).collect();
        let mut s = PidState::default();
        for &e in &errors[..123] {
            s = pid_step(&s, e, &g).unwrap().1;
        }
        s = pid_reset(&s);
        let replay: Vec<f64> = errors
            .iter()
            .map(|&e| {
                let (u, n) = pid_step(&s, e, &g).unwrap();
                s = n;
                u
            })
            .collect();
        assert_eq!(replay, run(&errors, &g));
    }

    #[test]
    fn fixed_zero_in_zero_out() {
        let g = FixedPidGains::new(&PidGains::default(), 10.0 / 32768.0).unwrap();
        let (out, _) = pid_step_fixed(&FixedPidState::default(), 0, &g);
        assert_eq!(out.code, 0);
        assert!(!out.overflow);
    }

    #[test]
    fn fixed_coefficients_round_trip() {
        let g = PidGains {
            td: 3e-5,
            ..PidGains::default()
        };
        let q = FixedPidGains::new(&g, 10.0 / 32768.0).unwrap();
        for (want, got) in g.coefficients().iter().zip(q.coefficients_f64()) {
            assert!((want - got).abs() <= Q16_16.lsb());
        }
    }

    #[test]
    fn fixed_coefficient_out_of_range() {
        let g = PidGains {
            kp: 10.0,
            td: 1.0,
            ..PidGains::default()
        };
        assert!(matches!(
            FixedPidGains::new(&g, 1e-3),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn fixed_limits_clamped_to_word() {
        let g = FixedPidGains::new(&PidGains::default(), 1.0 / 32768.0).unwrap();
        assert_eq!(g.out_max, (i16::MAX as i64) << 16);
        assert_eq!(g.out_min, (i16::MIN as i64) << 16);
    }

    #[test]
    fn fixed_tracks_float_within_eight_lsb() {
        let lsb = 10.0 / 32768.0;
        let g = PidGains::default();
        let q = FixedPidGains::new(&g, lsb).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut fs = PidState::default();
        let mut xs = FixedPidState::default();
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let code: i16 = rng.random_range(-2000..2000);
            let (u, n) = pid_step(&fs, code as f64 * lsb, &g).unwrap();
            fs = n;
            let (out, n) = pid_step_fixed(&xs, code, &q);
            xs = n;
            assert!(!out.overflow);
            worst = worst.max((out.code as f64 - u / lsb).abs());
        }
        assert!(worst <= 8.0, "worst deviation {worst} LSB");
    }

    proptest! {
        #[test]
        fn output_always_within_limits(
            errors in prop::collection::vec(-10.0f64..10.0, 1..200),
            kp in -20.0f64..20.0,
            td in 0.0f64..1e-4,
        ) {
            let g = PidGains { kp, td, ..PidGains::default() };
            for u in run(&errors, &g) {
                prop_assert!(u >= g.output_min && u <= g.output_max);
            }
        }

        #[test]
        fn pure_p_homogeneity(
            errors in prop::collection::vec(-1.0f64..1.0, 1..200),
            s in -4.0f64..4.0,
        ) {
            let g = unclamped(1.3, f64::INFINITY, 0.0, 1e-5);
            let base = run(&errors, &g);
            let scaled_errors: Vec<f64> = errors.iter().map(|e| e * s).collect();
            let scaled = run(&scaled_errors, &g);
            // Relative to the sequence magnitude; steps that return to zero
            // carry cancellation residue of a few ulps.
            let peak = scaled.iter().fold(1e-300f64, |m, b| m.max(b.abs()));
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a * s - b).abs() <= 1e-12 * peak);
            }
        }

        #[test]
        fn deterministic(e in -1.0f64..1.0, u in -4.0f64..4.0, e1 in -1.0f64..1.0) {
            let s = PidState { e_k1: e1, e_k2: 0.1, u_k1: u, step_count: 3 };
            let g = PidGains { td: 1e-5, ..PidGains::default() };
            let a = pid_step(&s, e, &g).unwrap();
            let b = pid_step(&s, e, &g).unwrap();
            prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
            prop_assert_eq!(a.1, b.1);
        }
    }
}
