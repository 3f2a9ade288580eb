//! Shared fixtures for the criterion benchmarks.

use neuromod_core::adapter::{AdapterConfig, AdapterState, Variant};
use neuromod_core::numerics::rng::{Rng, Stream};
use neuromod_core::tasks::base_map;

/// A ready-to-run adapter plus a batch of inputs at desk scale.
pub fn bench_fixture(variant: Variant, n_inputs: usize) -> (AdapterState, Vec<Vec<f64>>) {
    let config = AdapterConfig {
        d_in: 64,
        d_out: 64,
        r: 16,
        k: 4,
        alpha: 16.0,
        rho: 0.25,
        d_h: 16,
        variant,
    };
    let w0 = base_map(1, config.d_out, config.d_in);
    let mut rng = Rng::for_stream(7, Stream::WeightInit);
    let state = AdapterState::init(config, 1007, w0, &mut rng).expect("valid config");
    let mut data_rng = Rng::for_stream(7, Stream::Data);
    let inputs = (0..n_inputs)
        .map(|_| (0..64).map(|_| data_rng.next_gaussian()).collect())
        .collect();
    (state, inputs)
}
