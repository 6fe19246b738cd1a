//! Synthetic catalogs from the generative (branching) form of the model, a
//! direct double-loop likelihood used as a reference, and coarsening of
//! located catalogs to region tags.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::RegionTable;
use crate::model::{
    integral_term, pair_rate, Catalog, Event, HawkesParams, KernelVariant, Location, CLIP_FLOOR,
};

/// Largest catalog the naive reference likelihood will accept.
pub const NAIVE_EVENT_LIMIT: usize = 20_000;

/// Rectangular spatial window in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Window {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Self {
        Self {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        }
    }

    pub fn area(&self) -> f64 {
        (self.lon_max - self.lon_min) * (self.lat_max - self.lat_min)
    }
}

fn default_cap() -> f64 {
    1e6
}

/// Parameters of the branching simulator. Immigrants arrive at a constant
/// rate, uniformly over the window; every event spawns `Poisson(xi0)`
/// children after `Exp(mean sigma_t)` delays with Gaussian displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Immigrant rate (events per unit time over the whole window).
    pub immigrant_rate: f64,
    /// Observation horizon; events after it are discarded.
    pub horizon: f64,
    pub window: Window,
    pub xi0: f64,
    pub sigma_x: f64,
    pub sigma_t: f64,
    #[serde(default)]
    pub variant: KernelVariant,
    /// Largest expected event count `rate * horizon / (1 - xi0)` allowed.
    #[serde(default = "default_cap")]
    pub max_expected_events: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad =
            |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.immigrant_rate.is_finite() && self.immigrant_rate > 0.0) {
            return bad(
                "immigrant_rate",
                format!("must be positive, got {}", self.immigrant_rate),
            );
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon", format!("must be positive, got {}", self.horizon));
        }
        if !(self.xi0 >= 0.0 && self.xi0 < 1.0) {
            return bad(
                "xi0",
                format!("must lie in [0, 1) for a finite cascade, got {}", self.xi0),
            );
        }
        if !(self.sigma_x >= 0.0 && self.sigma_x.is_finite()) {
            return bad(
                "sigma_x",
                format!("must be non-negative, got {}", self.sigma_x),
            );
        }
        if !(self.sigma_t > 0.0 && self.sigma_t.is_finite()) {
            return bad("sigma_t", format!("must be positive, got {}", self.sigma_t));
        }
        let w = &self.window;
        if !(w.lon_max > w.lon_min && w.lat_max > w.lat_min) {
            return Err(Error::Simulation(
                "window must have positive width and height".into(),
            ));
        }
        let expected = self.expected_events();
        if expected > self.max_expected_events {
            return Err(Error::Simulation(format!(
                "expected {expected:.0} events exceeds the cap of {}",
                self.max_expected_events
            )));
        }
        Ok(())
    }

    /// Expected total event count ignoring horizon truncation.
    pub fn expected_events(&self) -> f64 {
        self.immigrant_rate * self.horizon / (1.0 - self.xi0)
    }

    /// Model parameters sharing this simulator's triggering settings and
    /// window area, with the background supplied by the caller.
    pub fn params(&self, mu0: f64, tau_t: f64) -> Result<HawkesParams> {
        HawkesParams::new(
            mu0,
            tau_t,
            self.xi0,
            self.sigma_x,
            self.sigma_t,
            self.window.area(),
            self.variant,
        )
    }
}

/// A simulated event with its parent (None for immigrants).
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub location: Location,
    pub density: f64,
    pub parent: Option<usize>,
}

/// Full branching history in generation order, including children that fell
/// beyond the horizon (flagged by `t > horizon`).
pub fn simulate_cascade<R, D>(config: &SimConfig, density: D, rng: &mut R) -> Result<Vec<SimEvent>>
where
    R: Rng + ?Sized,
    D: Fn(Location) -> f64,
{
    config.validate()?;
    let w = config.window;
    let n_imm = Poisson::new(config.immigrant_rate * config.horizon)
        .map_err(|e| Error::Simulation(e.to_string()))?
        .sample(rng) as usize;
    let mut events = Vec::with_capacity(n_imm * 2);
    for _ in 0..n_imm {
        // (0, T]
        let t = config.horizon * (1.0 - rng.random::<f64>());
        let loc = Location::new(
            w.lon_min + rng.random::<f64>() * (w.lon_max - w.lon_min),
            w.lat_min + rng.random::<f64>() * (w.lat_max - w.lat_min),
        );
        events.push(SimEvent {
            t,
            location: loc,
            density: density(loc),
            parent: None,
        });
    }
    let offspring = if config.xi0 > 0.0 {
        Some(Poisson::new(config.xi0).map_err(|e| Error::Simulation(e.to_string()))?)
    } else {
        None
    };
    let delay = Exp::new(1.0 / config.sigma_t).map_err(|e| Error::Simulation(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let runaway = (20.0 * config.expected_events()).max(1000.0) as usize;

    let mut k = 0;
    while k < events.len() {
        let parent = events[k].clone();
        k += 1;
        // children of events past the horizon can only land past it too
        if parent.t > config.horizon {
            continue;
        }
        let kids = offspring.as_ref().map_or(0, |p| p.sample(rng) as usize);
        let scale = match config.variant {
            KernelVariant::Constant => config.sigma_x,
            KernelVariant::Varying => config.sigma_x / parent.density.sqrt(),
        };
        for _ in 0..kids {
            let t = parent.t + delay.sample(rng);
            let loc = if scale > 0.0 {
                Location::new(
                    parent.location.lon + scale * std_normal.sample(rng),
                    parent.location.lat + scale * std_normal.sample(rng),
                )
            } else {
                parent.location
            };
            events.push(SimEvent {
                t,
                location: loc,
                density: density(loc),
                parent: Some(k - 1),
            });
        }
        if events.len() > runaway {
            return Err(Error::Simulation(format!(
                "cascade grew past {runaway} events; check xi0"
            )));
        }
    }
    Ok(events)
}

fn to_catalog(events: Vec<SimEvent>, horizon: f64) -> Result<Catalog> {
    let mut kept: Vec<SimEvent> = events.into_iter().filter(|e| e.t <= horizon).collect();
    if kept.is_empty() {
        return Err(Error::Simulation("simulation produced no events".into()));
    }
    kept.sort_by(|a, b| a.t.total_cmp(&b.t));
    let events = kept
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            let mut ev = Event::new(k.to_string(), e.t, e.location);
            ev.density = e.density;
            ev
        })
        .collect();
    Catalog::new(events)
}

/// Time-sorted catalog with unit density everywhere.
pub fn simulate_catalog(config: &SimConfig, seed: u64) -> Result<Catalog> {
    simulate_catalog_with(config, |_| 1.0, seed)
}

/// Time-sorted catalog with a location-dependent density field.
pub fn simulate_catalog_with<D: Fn(Location) -> f64>(
    config: &SimConfig,
    density: D,
    seed: u64,
) -> Result<Catalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = simulate_cascade(config, density, &mut rng)?;
    to_catalog(events, config.horizon)
}

/// Density lookup from a region table; points outside every region get
/// `fallback`.
pub fn region_density(regions: &RegionTable, fallback: f64) -> impl Fn(Location) -> f64 + '_ {
    move |loc| {
        regions
            .find_containing(loc)
            .map_or(fallback, |r| r.density())
    }
}

/// Moves every time uniformly within its bin of `width` (e.g. a day-level
/// jitter for weekly-recorded times), then re-sorts.
pub fn jitter_times<R: Rng + ?Sized>(
    catalog: &Catalog,
    width: f64,
    rng: &mut R,
) -> Result<Catalog> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "width",
            reason: format!("must be positive, got {width}"),
        });
    }
    let events = catalog
        .events()
        .map(|mut e| {
            e.t = (e.t / width).floor() * width + width * rng.random::<f64>();
            e
        })
        .collect();
    Catalog::from_unsorted(events)
}

/// Uniform random located catalog (times in `[0, horizon)`, locations in the
/// window), for benchmarks and tests.
pub fn uniform_catalog(n: usize, horizon: f64, window: Window, seed: u64) -> Result<Catalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n)
        .map(|k| {
            let t = horizon * rng.random::<f64>();
            let loc = Location::new(
                window.lon_min + rng.random::<f64>() * (window.lon_max - window.lon_min),
                window.lat_min + rng.random::<f64>() * (window.lat_max - window.lat_min),
            );
            Event::new(k.to_string(), t, loc)
        })
        .collect();
    Catalog::from_unsorted(events)
}

/// Straightforward `O(N^2)` double-precision log-likelihood, written directly
/// from the pairwise rate and integral term with no lanes, cutoffs or
/// reordering. Refuses catalogs above [`NAIVE_EVENT_LIMIT`].
pub fn naive_log_likelihood(catalog: &Catalog, params: &HawkesParams) -> Result<f64> {
    let n = catalog.len();
    if n > NAIVE_EVENT_LIMIT {
        return Err(Error::OracleGuard {
            n,
            limit: NAIVE_EVENT_LIMIT,
        });
    }
    params.validate()?;
    let locs = catalog.locations()?;
    let times = catalog.times();
    let dens = catalog.densities();
    let t_last = catalog.last_time();
    let mut total = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += pair_rate(params, (times[j], locs[j], dens[j]), (times[i], locs[i]));
        }
        total += s.max(CLIP_FLOOR).ln() - integral_term(params, times[i], t_last);
    }
    Ok(total)
}

/// Drops exact locations, tagging each event with the first region that
/// covers it (boundaries inclusive) and that region's density.
pub fn coarsen_catalog(catalog: &Catalog, regions: &RegionTable) -> Result<Catalog> {
    if regions.is_empty() {
        return Err(Error::EmptyRegionTable);
    }
    let locs = catalog.locations()?;
    let mut events = Vec::with_capacity(catalog.len());
    for (k, (mut e, loc)) in catalog.events().zip(locs).enumerate() {
        let region = regions
            .find_containing(*loc)
            .ok_or(Error::OutsideRegions { index: k })?;
        e.location = None;
        e.region_id = Some(region.id().to_string());
        e.density = region.density();
        events.push(e);
    }
    Catalog::new(events)
}
