//! Catalog fixtures shared by the likelihood benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sthawkes_core::{Catalog, Event, HawkesParams, KernelVariant, Location};

/// `n` events uniform over `(0, 100]` weeks and a unit square, with
/// log-uniform densities in `[1, 1000)`.
pub fn uniform_catalog(n: usize, seed: u64) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n)
        .map(|k| {
            let mut e = Event::new(
                k.to_string(),
                rng.random_range(0.0..100.0),
                Location::new(rng.random(), rng.random()),
            );
            e.density = 10f64.powf(rng.random_range(0.0..3.0));
            e
        })
        .collect();
    Catalog::from_unsorted(events).expect("generated events are valid")
}

/// Parameters whose kernels reach across the whole fixture, so no pair is
/// skipped and timings reflect the full quadratic cost.
pub fn dense_params(variant: KernelVariant) -> HawkesParams {
    HawkesParams::new(0.5, 25.0, 0.5, 0.1, 2.81, 1.0, variant).expect("valid constants")
}

/// Parameters with short triggering scales, where most pairs underflow and
/// are skipped.
pub fn sparse_params(variant: KernelVariant) -> HawkesParams {
    HawkesParams::new(0.5, 0.5, 0.5, 0.005, 0.05, 1.0, variant).expect("valid constants")
}
