mod common;

use std::time::Instant;

use common::{random_catalog, random_params, rel};
use sthawkes_core::engine::{log_likelihood, LikelihoodEngine, Partition, Precision};
use sthawkes_core::model::event_contribution;
use sthawkes_core::sim::naive_log_likelihood;
use sthawkes_core::{Catalog, Event, HawkesParams, KernelVariant, Location};

#[test]
fn partitioned_matches_naive_on_random_catalogs() {
    for seed in 0..12u64 {
        let n = 10 + (seed as usize * 97) % 900;
        let variant = if seed % 2 == 0 {
            KernelVariant::Constant
        } else {
            KernelVariant::Varying
        };
        let c = random_catalog(n, seed, variant == KernelVariant::Varying);
        let p = random_params(seed, variant);
        let oracle = naive_log_likelihood(&c, &p).unwrap();
        let view = c.view().unwrap();
        for g in [1, 2, 4, 8] {
            let part = Partition::new(n, g).unwrap();
            let d = log_likelihood(&view, &p, &part, Precision::Double).unwrap();
            let s = log_likelihood(&view, &p, &part, Precision::Single).unwrap();
            assert!(rel(d, oracle) < 1e-10, "seed {seed} G={g}: {d} vs {oracle}");
            assert!(
                rel(s, oracle) < 1e-4,
                "seed {seed} G={g} single: {s} vs {oracle}"
            );
        }
    }
}

#[test]
fn per_event_contributions_match_naive_terms() {
    let c = random_catalog(120, 77, true);
    let p = random_params(77, KernelVariant::Varying);
    let total: f64 = (0..c.len())
        .map(|n| event_contribution(&p, &c, n).unwrap())
        .sum();
    assert!(rel(total, naive_log_likelihood(&c, &p).unwrap()) < 1e-10);
}

#[test]
fn worker_counts_agree_at_two_thousand_events() {
    let c = random_catalog(2000, 5, true);
    let view = c.view().unwrap();
    for variant in [KernelVariant::Constant, KernelVariant::Varying] {
        let p = random_params(5, variant);
        for (precision, tol) in [(Precision::Double, 1e-12), (Precision::Single, 1e-5)] {
            let base =
                log_likelihood(&view, &p, &Partition::new(2000, 1).unwrap(), precision).unwrap();
            for g in [2, 4, 8] {
                let v = log_likelihood(&view, &p, &Partition::new(2000, g).unwrap(), precision)
                    .unwrap();
                assert!(rel(v, base) < tol, "{variant:?} {precision} G={g}");
            }
        }
    }
}

#[test]
fn unit_density_varying_equals_constant_bitwise() {
    let c = random_catalog(700, 9, false);
    let view = c.view().unwrap();
    let part = Partition::new(700, 3).unwrap();
    for precision in [Precision::Double, Precision::Single] {
        let mut p = random_params(9, KernelVariant::Constant);
        let a = log_likelihood(&view, &p, &part, precision).unwrap();
        p.variant = KernelVariant::Varying;
        let b = log_likelihood(&view, &p, &part, precision).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn varying_kernel_cost_is_close_to_constant() {
    let c = random_catalog(3000, 13, true);
    let view = c.view().unwrap();
    let mut p = random_params(13, KernelVariant::Constant);
    // long lengthscales so neither variant can skip work
    p.sigma_t = 1e4;
    p.tau_t = 1e4;
    let engine = LikelihoodEngine::with_workers(&view, 1, Precision::Double).unwrap();
    let time = |p: &HawkesParams| {
        engine.log_likelihood(p);
        (0..5)
            .map(|_| {
                let s = Instant::now();
                std::hint::black_box(engine.log_likelihood(p));
                s.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let constant = time(&p);
    p.variant = KernelVariant::Varying;
    let varying = time(&p);
    assert!(
        varying <= 1.3 * constant,
        "varying {varying:.4}s vs constant {constant:.4}s"
    );
}

#[test]
fn extreme_catalogs_stay_finite_in_single_precision() {
    let coincident = Catalog::new(
        (0..500)
            .map(|k| Event::new(k.to_string(), 1.0, Location::new(0.5, 0.5)))
            .collect(),
    )
    .unwrap();
    let separated = Catalog::new(
        (0..500)
            .map(|k| {
                Event::new(
                    k.to_string(),
                    k as f64 * 1e-3,
                    Location::new(k as f64 * 50.0, 0.0),
                )
            })
            .collect(),
    )
    .unwrap();
    let spread = Catalog::new(
        (0..500)
            .map(|k| Event::new(k.to_string(), k as f64 * 1e4, Location::new(0.0, 0.0)))
            .collect(),
    )
    .unwrap();
    let p = HawkesParams::new(0.5, 1.0, 0.5, 0.01, 1.0, 1.0, KernelVariant::Constant).unwrap();
    for c in [coincident, separated, spread] {
        let view = c.view().unwrap();
        let part = Partition::new(c.len(), 2).unwrap();
        let s = log_likelihood(&view, &p, &part, Precision::Single).unwrap();
        let d = log_likelihood(&view, &p, &part, Precision::Double).unwrap();
        assert!(s.is_finite() && d.is_finite());
        assert!(rel(s, naive_log_likelihood(&c, &p).unwrap()) < 1e-4);
    }
}
