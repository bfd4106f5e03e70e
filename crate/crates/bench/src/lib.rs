//! Shared fixtures for the benchmarks.

use cpls_core::sde::generate_sample;
use cpls_core::{ExplanatorySpec, GridSpec, ModelId, PathSample, SdeModel, YType};

/// Benchmark-grid sample for model 2 with the polynomial Brownian explanatory process.
pub fn fixture_sample(n_paths: usize, seed: u64) -> PathSample {
    generate_sample(
        &SdeModel::preset(ModelId::Two),
        &ExplanatorySpec::preset(YType::A),
        &GridSpec::default(),
        n_paths,
        seed,
    )
    .expect("fixture simulates")
}
