//! Analog and mixed-signal chain: Rogowski output amplification, the bipolar
//! 16-bit SAR ADC, the offset-binary 16-bit DAC, and the power amplifier.
//!
//! Everything here is a pure function of its arguments.

use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Number of Rogowski channels around the vertical gap.
pub const CHANNELS: usize = 16;

/// Converter word width. Both the ADC and DAC are 16-bit parts.
pub const CONVERTER_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Volts,
    Amps,
    Dimensionless,
}

/// One sample of all sixteen channels. Values are always finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelVector {
    values: [f64; CHANNELS],
    unit: Unit,
}

impl ChannelVector {
    pub fn new(values: [f64; CHANNELS], unit: Unit) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "channel {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values, unit })
    }

    pub fn from_slice(values: &[f64], unit: Unit) -> Result<Self> {
        let arr: [f64; CHANNELS] = values.try_into().map_err(|_| {
            Error::domain(format!(
                "expected {CHANNELS} channels, got {}",
                values.len()
            ))
        })?;
        Self::new(arr, unit)
    }

    pub const fn zeros(unit: Unit) -> Self {
        Self {
            values: [0.0; CHANNELS],
            unit,
        }
    }

    pub fn splat(value: f64, unit: Unit) -> Result<Self> {
        Self::new([value; CHANNELS], unit)
    }

    pub fn values(&self) -> &[f64; CHANNELS] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// Applies `f` to every channel, keeping the unit tag.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.values.map(f), self.unit)
    }

    /// Circular rotation: output channel `(i + k) % 16` holds input channel `i`.
    pub fn rotate(&self, k: usize) -> Self {
        let mut values = self.values;
        values.rotate_right(k % CHANNELS);
        Self {
            values,
            unit: self.unit,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for ChannelVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Front-end amplifier and ADC settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcConfig {
    /// Symmetric bipolar input range, ±`full_scale` volts.
    pub full_scale: f64,
    pub bits: u32,
    pub stage1_gain: f64,
    pub stage2_gain: f64,
    /// Standard deviation of additive Gaussian noise at the ADC input, volts.
    /// Zero disables noise.
    pub noise_std: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            full_scale: 10.0,
            bits: CONVERTER_BITS,
            stage1_gain: 10.0,
            stage2_gain: 10.0,
            noise_std: 0.0,
        }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.full_scale.is_finite() && self.full_scale > 0.0) {
            return Err(Error::config("adc.full_scale", "must be finite and > 0"));
        }
        if self.bits != CONVERTER_BITS {
            return Err(Error::config(
                "adc.bits",
                "only 16-bit converters are modeled",
            ));
        }
        if !(self.stage1_gain.is_finite() && self.stage1_gain > 0.0) {
            return Err(Error::config("adc.stage1_gain", "must be finite and > 0"));
        }
        if !(self.stage2_gain.is_finite() && self.stage2_gain > 0.0) {
            return Err(Error::config("adc.stage2_gain", "must be finite and > 0"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("adc.noise_std", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Volts per code.
    pub fn lsb(&self) -> f64 {
        self.full_scale / 32768.0
    }

    pub fn total_gain(&self) -> f64 {
        self.stage1_gain * self.stage2_gain
    }
}

/// DAC, output op-amp, and power amplifier settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacConfig {
    pub bits: u32,
    pub out_min: f64,
    pub out_max: f64,
    /// Reciprocal of the power amplifier gain.
    pub amp_gain_v: f64,
}

impl Default for DacConfig {
    fn default() -> Self {
        Self {
            bits: CONVERTER_BITS,
            out_min: -5.0,
            out_max: 5.0,
            amp_gain_v: 0.1,
        }
    }
}

impl DacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits != CONVERTER_BITS {
            return Err(Error::config(
                "dac.bits",
                "only 16-bit converters are modeled",
            ));
        }
        if !(self.out_min.is_finite() && self.out_max.is_finite()) {
            return Err(Error::config("dac.out_min", "output range must be finite"));
        }
        if self.out_min >= self.out_max {
            return Err(Error::config(
                "dac.out_max",
                "must be greater than dac.out_min",
            ));
        }
        if !self.amp_gain_v.is_finite() || self.amp_gain_v == 0.0 {
            return Err(Error::config(
                "dac.amp_gain_v",
                "must be finite and nonzero",
            ));
        }
        Ok(())
    }

    /// Volts per DAC code.
    pub fn lsb(&self) -> f64 {
        (self.out_max - self.out_min) / 65536.0
    }
}

/// Two-stage front-end amplifier. Multiplies every channel by the product of
/// the stage gains.
pub fn amplify(raw: &ChannelVector, cfg: &AdcConfig) -> Result<ChannelVector> {
    let gain = cfg.total_gain();
    raw.map(|v| v * gain)
}

/// Adds seeded Gaussian noise to every channel. No-op when `std_dev` is zero.
pub fn add_noise<R: Rng + ?Sized>(
    v: &ChannelVector,
    std_dev: f64,
    rng: &mut R,
) -> Result<ChannelVector> {
    if std_dev == 0.0 {
        return Ok(*v);
    }
    let normal =
        Normal::new(0.0, std_dev).map_err(|e| Error::config("adc.noise_std", e.to_string()))?;
    let mut values = *v.values();
    for x in values.iter_mut() {
        *x += normal.sample(rng);
    }
    ChannelVector::new(values, v.unit())
}

/// Mid-tread bipolar quantizer with rail saturation. Ties round away from
/// zero, so 0 V maps to code 0 exactly. NaN maps to mid-scale.
pub fn adc_quantize(v: f64, cfg: &AdcConfig) -> i16 {
    if v.is_nan() {
        return 0;
    }
    let code = (v / cfg.lsb()).round();
    code.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn adc_dequantize(code: i16, cfg: &AdcConfig) -> f64 {
    code as f64 * cfg.lsb()
}

pub fn adc_quantize_vector(v: &ChannelVector, cfg: &AdcConfig) -> [i16; CHANNELS] {
    v.values().map(|x| adc_quantize(x, cfg))
}

/// Offset-binary DAC transfer: code 0 is `out_min`, code 32768 is the
/// midpoint of the output range.
pub fn dac_code_to_voltage(code: u32, cfg: &DacConfig) -> Result<f64> {
    if code > u16::MAX as u32 {
        return Err(Error::domain(format!("dac code {code} exceeds 65535")));
    }
    Ok(cfg.out_min + code as f64 * cfg.lsb())
}

/// Nearest DAC code for a requested output voltage, saturating at the codes
/// 0 and 65535.
pub fn voltage_to_dac_code(v: f64, cfg: &DacConfig) -> u16 {
    if v.is_nan() {
        return 32768;
    }
    let code = ((v - cfg.out_min) / cfg.lsb()).round();
    code.clamp(0.0, u16::MAX as f64) as u16
}

/// Ideal power amplifier with gain `1 / amp_gain_v`.
pub fn power_amp(v: f64, cfg: &DacConfig) -> Result<f64> {
    if cfg.amp_gain_v == 0.0 {
        return Err(Error::config("dac.amp_gain_v", "must be nonzero"));
    }
    if !v.is_finite() {
        return Err(Error::domain(format!(
            "power amplifier input {v} is not finite"
        )));
    }
    Ok(v / cfg.amp_gain_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adc(full_scale: f64, g1: f64, g2: f64) -> AdcConfig {
        AdcConfig {
            full_scale,
            stage1_gain: g1,
            stage2_gain: g2,
            ..AdcConfig::default()
        }
    }

    #[test]
    fn amplify_examples() {
        let zero = ChannelVector::zeros(Unit::Volts);
        assert_eq!(amplify(&zero, &adc(10.0, 3.0, 7.0)).unwrap(), zero);

        let x = ChannelVector::splat(0.37, Unit::Volts).unwrap();
        assert_eq!(amplify(&x, &adc(10.0, 1.0, 1.0)).unwrap()[3], 0.37);

        let x = ChannelVector::splat(0.01, Unit::Volts).unwrap();
        let y = amplify(&x, &adc(10.0, 10.0, 5.0)).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);
        assert_eq!(y.unit(), Unit::Volts);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut v = [0.0; CHANNELS];
        v[4] = f64::NAN;
        assert!(matches!(
            ChannelVector::new(v, Unit::Volts),
            Err(Error::InputDomain(_))
        ));
        let big = ChannelVector::splat(f64::MAX, Unit::Volts).unwrap();
        assert!(amplify(&big, &adc(10.0, 10.0, 10.0)).is_err());
    }

    #[test]
    fn adc_examples() {
        let cfg = AdcConfig::default();
        assert_eq!(adc_quantize(0.0, &cfg), 0);
        assert_eq!(adc_quantize(10.0, &cfg), 32767);
        assert_eq!(adc_quantize(25.0, &cfg), 32767);
        assert_eq!(adc_quantize(-10.0, &cfg), -32768);
        assert_eq!(adc_quantize(-1e9, &cfg), -32768);
        assert_eq!(adc_quantize(5.0, &cfg), 16384);
        assert_eq!(adc_quantize(f64::NAN, &cfg), 0);
    }

    #[test]
    fn adc_rounds_half_away_from_zero() {
        let cfg = AdcConfig::default();
        let lsb = cfg.lsb();
        assert_eq!(adc_quantize(0.5 * lsb, &cfg), 1);
        assert_eq!(adc_quantize(-0.5 * lsb, &cfg), -1);
        assert_eq!(adc_quantize(0.49 * lsb, &cfg), 0);
    }

    #[test]
    fn dequantize_examples() {
        let cfg = AdcConfig::default();
        assert_eq!(adc_dequantize(0, &cfg), 0.0);
        assert!((adc_dequantize(32767, &cfg) - 32767.0 * 10.0 / 32768.0).abs() < 1e-15);
        assert!((adc_dequantize(32767, &cfg) - 9.999_694_824_218_75).abs() < 1e-15);
    }

    #[test]
    fn quantizer_round_trip_within_half_lsb() {
        let cfg = AdcConfig::default();
        let lsb = cfg.lsb();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let v: f64 = rng.random_range(-cfg.full_scale..cfg.full_scale - lsb);
            let err = (adc_dequantize(adc_quantize(v, &cfg), &cfg) - v).abs();
            assert!(err <= lsb / 2.0 + 1e-15, "v={v} err={err}");
        }
    }

    #[test]
    fn quantizer_monotone_on_sorted_samples() {
        let cfg = AdcConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-12.0..12.0)).collect();
        xs.sort_by(f64::total_cmp);
        let codes: Vec<i16> = xs.iter().map(|&v| adc_quantize(v, &cfg)).collect();
        assert!(codes.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn dac_examples() {
        let cfg = DacConfig::default();
        assert_eq!(dac_code_to_voltage(0, &cfg).unwrap(), -5.0);
        assert_eq!(dac_code_to_voltage(32768, &cfg).unwrap(), 0.0);
        let top = dac_code_to_voltage(65535, &cfg).unwrap();
        assert!((top - (-5.0 + 65535.0 * 10.0 / 65536.0)).abs() < 1e-15);
        assert!((top - 4.999_847_412_109_375).abs() < 1e-15);
        assert!(matches!(
            dac_code_to_voltage(65536, &cfg),
            Err(Error::InputDomain(_))
        ));
    }

    #[test]
    fn dac_map_is_affine() {
        let cfg = DacConfig::default();
        let step = cfg.lsb();
        for c in 0..65535u32 {
            let d =
                dac_code_to_voltage(c + 1, &cfg).unwrap() - dac_code_to_voltage(c, &cfg).unwrap();
            assert!((d - step).abs() < 1e-12);
        }
    }

    #[test]
    fn dac_inverse_hits_codes() {
        let cfg = DacConfig::default();
        for c in [0u16, 1, 32767, 32768, 40000, 65535] {
            let v = dac_code_to_voltage(c as u32, &cfg).unwrap();
            assert_eq!(voltage_to_dac_code(v, &cfg), c);
        }
        assert_eq!(voltage_to_dac_code(-7.0, &cfg), 0);
        assert_eq!(voltage_to_dac_code(7.0, &cfg), 65535);
    }

    #[test]
    fn power_amp_examples() {
        let unity = DacConfig {
            amp_gain_v: 1.0,
            ..DacConfig::default()
        };
        assert_eq!(power_amp(0.0, &DacConfig::default()).unwrap(), 0.0);
        assert_eq!(power_amp(2.5, &unity).unwrap(), 2.5);
        let fifty = DacConfig {
            amp_gain_v: 0.02,
            ..DacConfig::default()
        };
        assert!((power_amp(0.1, &fifty).unwrap() - 5.0).abs() < 1e-12);
        let broken = DacConfig {
            amp_gain_v: 0.0,
            ..DacConfig::default()
        };
        assert!(matches!(power_amp(1.0, &broken), Err(Error::Config { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(AdcConfig::default().validate().is_ok());
        assert!(DacConfig::default().validate().is_ok());
        let bad = AdcConfig {
            bits: 12,
            ..AdcConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "adc.bits"));
        let bad = DacConfig {
            out_min: 5.0,
            out_max: -5.0,
            ..DacConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ChannelVector::splat(1.25, Unit::Volts).unwrap();
        assert_eq!(add_noise(&x, 0.0, &mut rng).unwrap(), x);
        let noisy = add_noise(&x, 0.01, &mut rng).unwrap();
        assert_ne!(noisy, x);
    }

    proptest! {
        #[test]
        fn amplify_is_linear(
            x in prop::array::uniform16(-1.0f64..1.0),
            y in prop::array::uniform16(-1.0f64..1.0),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let cfg = adc(10.0, 12.5, 3.0);
            let combo: [f64; CHANNELS] = std::array::from_fn(|i| a * x[i] + b * y[i]);
            let lhs = amplify(&ChannelVector::new(combo, Unit::Volts).unwrap(), &cfg).unwrap();
            let ax = amplify(&ChannelVector::new(x, Unit::Volts).unwrap(), &cfg).unwrap();
            let by = amplify(&ChannelVector::new(y, Unit::Volts).unwrap(), &cfg).unwrap();
            for i in 0..CHANNELS {
                let rhs = a * ax[i] + b * by[i];
                let scale = lhs[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
