//! Fixed-point primitives shared by the correction and PID datapaths.
//!
//! Data words are signed 16-bit converter codes. Coefficients are 32-bit
//! signed Q-format values. Accumulation happens in a 48-bit register held in
//! an `i64`; leaving that range saturates and raises the caller's sticky flag.

use crate::error::{Error, Result};

pub const ACC_BITS: u32 = 48;
pub const ACC_MAX: i64 = (1i64 << (ACC_BITS - 1)) - 1;
pub const ACC_MIN: i64 = -(1i64 << (ACC_BITS - 1));

/// A signed 32-bit Q-format with `FRAC` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QFormat {
    pub frac_bits: u32,
}

/// Q2.30: range [-2, 2), resolution 2^-30.
pub const Q2_30: QFormat = QFormat { frac_bits: 30 };
/// Q16.16: range [-32768, 32768), resolution 2^-16.
pub const Q16_16: QFormat = QFormat { frac_bits: 16 };

impl QFormat {
    pub fn scale(self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    pub fn lsb(self) -> f64 {
        1.0 / self.scale()
    }

    /// Nearest representable value, or a configuration error naming `key`
    /// when `x` falls outside the format's range.
    pub fn quantize(self, x: f64, key: &str) -> Result<i32> {
        if !x.is_finite() {
            return Err(Error::config(key, format!("coefficient {x} is not finite")));
        }
        let q = (x * self.scale()).round_ties_even();
        if q < i32::MIN as f64 || q > i32::MAX as f64 {
            return Err(Error::config(
                key,
                format!(
                    "coefficient {x} outside Q{}.{} range",
                    32 - self.frac_bits,
                    self.frac_bits
                ),
            ));
        }
        Ok(q as i32)
    }

    pub fn to_f64(self, q: i64) -> f64 {
        q as f64 / self.scale()
    }
}

/// Arithmetic right shift with round-half-to-even.
pub fn shr_round_half_even(x: i64, shift: u32) -> i64 {
    if shift == 0 {
        return x;
    }
    let q = x >> shift;
    let r = x - (q << shift);
    let half = 1i64 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Clamps into the 48-bit accumulator range.
pub fn saturate_acc(x: i64, overflow: &mut bool) -> i64 {
    if x > ACC_MAX {
        *overflow = true;
        ACC_MAX
    } else if x < ACC_MIN {
        *overflow = true;
        ACC_MIN
    } else {
        x
    }
}

/// Saturating accumulate into the 48-bit register.
pub fn acc_add(acc: i64, term: i64, overflow: &mut bool) -> i64 {
    saturate_acc(acc.saturating_add(term), overflow)
}

pub fn saturate_i16(x: i64, overflow: &mut bool) -> i16 {
    if x > i16::MAX as i64 {
        *overflow = true;
        i16::MAX
    } else if x < i16::MIN as i64 {
        *overflow = true;
        i16::MIN
    } else {
        x as i16
    }
}
