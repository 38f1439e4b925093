//! Shared fixtures for the pipeline benchmarks: a deterministic probe
//! waveform and a bound debug-size model.

use aasist_core::model::{ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn probe_wave(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|i| (0.37 * i as f64).sin() * 0.5 + rng.random_range(-0.4..0.4))
        .collect()
}

pub fn debug_model() -> (ModelConfig, ModelParams) {
    let cfg = ModelConfig::debug();
    let params = ModelParams::init(&cfg, 11);
    (cfg, params)
}
