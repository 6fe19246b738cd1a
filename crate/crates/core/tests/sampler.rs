mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sthawkes_core::engine::{log_likelihood, Partition, Precision};
use sthawkes_core::geo::{Polygon, Region, RegionGeometry, RegionTable};
use sthawkes_core::mcmc::{resample_locations, run_cut_posterior, ChainConfig, LikelihoodStrategy};
use sthawkes_core::sim::{coarsen_catalog, simulate_catalog, SimConfig, Window};
use sthawkes_core::{Catalog, Error, Event, HawkesParams, KernelVariant, Location, Param};

fn unit_square(id: &str, x0: f64, density: f64) -> Region {
    let ring = vec![
        Location::new(x0, 0.0),
        Location::new(x0 + 1.0, 0.0),
        Location::new(x0 + 1.0, 1.0),
        Location::new(x0, 1.0),
    ];
    Region::new(
        id,
        RegionGeometry::Polygons(vec![Polygon::new(ring, vec![]).unwrap()]),
        density,
    )
    .unwrap()
}

fn tagged(region_ids: &[&str], times: &[f64]) -> Catalog {
    let events = region_ids
        .iter()
        .zip(times)
        .enumerate()
        .map(|(k, (r, &t))| Event {
            id: k.to_string(),
            t,
            location: None,
            region_id: Some(r.to_string()),
            density: 1.0,
        })
        .collect();
    Catalog::new(events).unwrap()
}

fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| (x - k as f64 / n).abs().max(((k + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn location_draws_are_uniform_in_their_region() {
    let regions = RegionTable::new([unit_square("sq", 0.0, 1.0)]).unwrap();
    let c = tagged(&["sq", "sq"], &[0.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut lon0, mut lat1) = (Vec::new(), Vec::new());
    for _ in 0..2000 {
        let x = resample_locations(&c, &regions, &mut rng).unwrap();
        lon0.push(x[0].lon);
        lat1.push(x[1].lat);
    }
    let crit = 1.63 / 2000f64.sqrt();
    assert!(ks_uniform(lon0) < crit);
    assert!(ks_uniform(lat1) < crit);
}

#[test]
fn point_regions_give_their_points() {
    let regions = RegionTable::new([
        Region::point("a", Location::new(1.0, 2.0), 5.0).unwrap(),
        Region::point("b", Location::new(3.0, 4.0), 5.0).unwrap(),
    ])
    .unwrap();
    let c = tagged(&["b", "a", "b"], &[0.0, 1.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = resample_locations(&c, &regions, &mut rng).unwrap();
    assert_eq!(
        x,
        vec![
            Location::new(3.0, 4.0),
            Location::new(1.0, 2.0),
            Location::new(3.0, 4.0)
        ]
    );
}

#[test]
fn sampling_errors_carry_the_event_index() {
    let flat = Polygon::new(
        vec![
            Location::new(0.0, 0.0),
            Location::new(1.0, 0.0),
            Location::new(2.0, 0.0),
        ],
        vec![],
    )
    .unwrap();
    let regions = RegionTable::new([
        unit_square("ok", 0.0, 1.0),
        Region::new("flat", RegionGeometry::Polygons(vec![flat]), 1.0).unwrap(),
    ])
    .unwrap();
    let c = tagged(&["ok", "ok", "flat"], &[0.0, 1.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let err = resample_locations(&c, &regions, &mut rng).unwrap_err();
    assert!(matches!(err, Error::AtEvent { index: 2, .. }), "{err}");
    let missing = tagged(&["ok", "nowhere"], &[0.0, 1.0]);
    assert!(matches!(
        resample_locations(&missing, &regions, &mut rng),
        Err(Error::AtEvent { index: 1, .. })
    ));
}

fn coarse_problem() -> (Catalog, Arc<RegionTable>, HawkesParams) {
    let sim = SimConfig {
        immigrant_rate: 2.0,
        horizon: 40.0,
        window: Window::new(0.0, 3.0, 0.0, 1.0),
        xi0: 0.4,
        sigma_x: 0.2,
        sigma_t: 1.0,
        variant: KernelVariant::Varying,
        max_expected_events: 1e4,
    };
    let regions = Arc::new(
        RegionTable::new([
            unit_square("r0", 0.0, 10.0),
            unit_square("r1", 1.0, 40.0),
            unit_square("r2", 2.0, 90.0),
        ])
        .unwrap(),
    );
    let located = simulate_catalog(&sim, 4).unwrap();
    // keep events that landed inside the three squares
    let inside: Vec<Event> = located
        .events()
        .filter(|e| regions.find_containing(e.location.unwrap()).is_some())
        .collect();
    let coarse = coarsen_catalog(&Catalog::new(inside).unwrap(), &regions).unwrap();
    let init = HawkesParams::new(0.6, 10.0, 0.4, 0.2, 1.0, 3.0, KernelVariant::Varying).unwrap();
    (coarse, regions, init)
}

#[test]
fn cached_loglik_matches_fresh_evaluation() {
    let (c, regions, init) = coarse_problem();
    for strategy in [LikelihoodStrategy::Factored, LikelihoodStrategy::Full] {
        let mut cfg = ChainConfig::new(30, 10, 8, init);
        cfg.strategy = strategy;
        cfg.refresh_period = 4;
        let out = run_cut_posterior(&cfg, &c, Some(regions.clone()), 0).unwrap();
        let last = out.draws.last().unwrap();
        let mut p = init;
        for q in Param::ALL {
            p.set(q, last[q.index()]);
        }
        let with_x = c.with_locations(out.final_locations.clone()).unwrap();
        let fresh = log_likelihood(
            &with_x.view().unwrap(),
            &p,
            &Partition::new(c.len(), 1).unwrap(),
            Precision::Double,
        )
        .unwrap();
        let cached = *out.loglik.last().unwrap();
        assert!(
            ((cached - fresh) / fresh).abs() < 1e-10,
            "{strategy:?}: {cached} vs {fresh}"
        );
    }
}

#[test]
fn location_draws_ignore_parameters() {
    let (c, regions, init) = coarse_problem();
    let cfg_a = ChainConfig::new(12, 2, 21, init);
    let mut other = init;
    other.xi0 = 0.9;
    other.sigma_x = 0.05;
    let cfg_b = ChainConfig::new(12, 2, 21, other);
    let a = run_cut_posterior(&cfg_a, &c, Some(regions.clone()), 3).unwrap();
    let b = run_cut_posterior(&cfg_b, &c, Some(regions), 3).unwrap();
    assert_eq!(a.final_locations, b.final_locations);
    assert_ne!(a.draws, b.draws);
}

#[test]
fn parameters_stay_positive() {
    let (c, regions, init) = coarse_problem();
    let mut cfg = ChainConfig::new(80, 40, 5, init);
    cfg.steps = [2.0; 5];
    let out = run_cut_posterior(&cfg, &c, Some(regions), 0).unwrap();
    assert!(out
        .draws
        .iter()
        .flatten()
        .all(|&v| v > 0.0 && v.is_finite()));
}

#[test]
fn event_count_matches_branching_mean() {
    let cfg = SimConfig {
        immigrant_rate: 10.0,
        horizon: 100.0,
        window: Window::new(0.0, 1.0, 0.0, 1.0),
        xi0: 0.5,
        sigma_x: 0.1,
        sigma_t: 0.01,
        variant: KernelVariant::Constant,
        max_expected_events: 1e5,
    };
    let counts: Vec<f64> = (0..200)
        .map(|s| simulate_catalog(&cfg, s).unwrap().len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / 200.0;
    let sd = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!(
        (mean - 2000.0).abs() < 3.0 * sd / 200f64.sqrt(),
        "mean {mean} sd {sd}"
    );
}

#[test]
fn point_regions_reproduce_the_fixed_location_chain() {
    let sim = SimConfig {
        immigrant_rate: 1.0,
        horizon: 60.0,
        window: Window::new(0.0, 2.0, 0.0, 2.0),
        xi0: 0.4,
        sigma_x: 0.1,
        sigma_t: 1.0,
        variant: KernelVariant::Constant,
        max_expected_events: 1e4,
    };
    let located = simulate_catalog(&sim, 6).unwrap();
    let regions = RegionTable::new(
        located
            .ids()
            .iter()
            .zip(located.locations().unwrap())
            .map(|(id, &x)| Region::point(id.clone(), x, 1.0).unwrap()),
    )
    .unwrap();
    let coarse = Catalog::new(
        located
            .events()
            .map(|mut e| {
                e.region_id = Some(e.id.clone());
                e.location = None;
                e
            })
            .collect(),
    )
    .unwrap();
    let init = sim.params(0.5, 10.0).unwrap();
    let cfg = ChainConfig::new(60, 20, 13, init);
    let cut = run_cut_posterior(&cfg, &coarse, Some(Arc::new(regions)), 1).unwrap();
    let fixed = run_cut_posterior(&cfg, &located, None, 1).unwrap();
    assert_eq!(cut.draws, fixed.draws);
    assert_eq!(cut.loglik, fixed.loglik);
}
