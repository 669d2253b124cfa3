//! Shared inputs for the criterion benchmarks in `benches/`.

use efield_core::{AdcConfig, CHANNELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random ADC code vectors spread over half the converter range.
pub fn code_vectors(n: usize, seed: u64) -> Vec<[i16; CHANNELS]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-16384..16384)))
        .collect()
}

/// The same vectors as volts at the ADC input.
pub fn volt_vectors(n: usize, seed: u64, adc: &AdcConfig) -> Vec<[f64; CHANNELS]> {
    code_vectors(n, seed)
        .into_iter()
        .map(|c| c.map(|x| x as f64 * adc.lsb()))
        .collect()
}
