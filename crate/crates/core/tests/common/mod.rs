#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sthawkes_core::{Catalog, Event, HawkesParams, KernelVariant, Location};

/// Times are multiples of 2^-10 so single and double precision see the same
/// ties.
pub const TIME_QUANTUM: f64 = 1.0 / 1024.0;

pub fn random_catalog(n: usize, seed: u64, with_density: bool) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(5.0..60.0);
    let width = rng.random_range(0.5..5.0);
    let events = (0..n)
        .map(|k| {
            let t = (rng.random::<f64>() * horizon / TIME_QUANTUM).floor() * TIME_QUANTUM;
            let loc = Location::new(rng.random::<f64>() * width, rng.random::<f64>() * width);
            let mut e = Event::new(k.to_string(), t, loc);
            if with_density {
                e.density = 10f64.powf(rng.random_range(0.0..3.5));
            }
            e
        })
        .collect();
    Catalog::from_unsorted(events).unwrap()
}

pub fn random_params(seed: u64, variant: KernelVariant) -> HawkesParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    HawkesParams::new(
        rng.random_range(0.01..2.0),
        rng.random_range(0.5..30.0),
        rng.random_range(0.05..1.2),
        rng.random_range(0.01..1.0),
        rng.random_range(0.2..5.0),
        rng.random_range(1.0..25.0),
        variant,
    )
    .unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}
