//! Cut-posterior sampling of the model parameters.
//!
//! Each iteration optionally redraws every event location uniformly within
//! its region (a draw that ignores the parameters and the event times), then
//! updates the five parameters one at a time with log-scale Gaussian
//! random-walk Metropolis-Hastings steps targeting the posterior given the
//! current locations.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{factored_log_likelihood, LikelihoodEngine, Partition, Precision};
use crate::error::{Error, Result};
use crate::geo::{sample_point_in_region, RegionTable};
use crate::model::{Catalog, HawkesParams, Location, Param};

/// Prior on one positive parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// Improper uniform density on `(0, inf)`.
    Flat,
    /// `log(theta) ~ Normal(mu, sigma)`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
}

impl Default for Prior {
    fn default() -> Self {
        Prior::LogNormal {
            mu: 0.0,
            sigma: 10.0,
        }
    }
}

impl Prior {
    /// Log density in `theta` up to an additive constant.
    pub fn log_density(&self, theta: f64) -> f64 {
        if theta.is_nan() || theta <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            Prior::Flat => 0.0,
            Prior::LogNormal { mu, sigma } => {
                let z = (theta.ln() - mu) / sigma;
                -theta.ln() - 0.5 * z * z
            }
            Prior::Gamma { shape, rate } => (shape - 1.0) * theta.ln() - rate * theta,
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        let ok = match *self {
            Prior::Flat => true,
            Prior::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            Prior::Gamma { shape, rate } => {
                shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name,
                reason: format!("invalid prior {self:?}"),
            })
        }
    }
}

/// One prior per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub mu0: Prior,
    pub tau_t: Prior,
    pub xi0: Prior,
    pub sigma_x: Prior,
    pub sigma_t: Prior,
}

impl Priors {
    pub fn uniform(prior: Prior) -> Self {
        Self {
            mu0: prior,
            tau_t: prior,
            xi0: prior,
            sigma_x: prior,
            sigma_t: prior,
        }
    }

    pub fn get(&self, p: Param) -> &Prior {
        match p {
            Param::Mu0 => &self.mu0,
            Param::TauT => &self.tau_t,
            Param::Xi0 => &self.xi0,
            Param::SigmaX => &self.sigma_x,
            Param::SigmaT => &self.sigma_t,
        }
    }
}

/// How proposals are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodStrategy {
    /// Keep per-event background and triggering kernel sums; weight updates
    /// cost `O(N)` and lengthscale updates rebuild only the affected sums.
    #[default]
    Factored,
    /// Full partitioned evaluation for every proposal.
    Full,
}

/// Burn-in step-size adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Adaptation {
    pub enabled: bool,
    pub target: f64,
    /// Log-scale change applied per window.
    pub delta: f64,
    /// Iterations per adaptation window.
    pub window: usize,
}

impl Default for Adaptation {
    fn default() -> Self {
        Self {
            enabled: true,
            target: 0.44,
            delta: 0.1,
            window: 50,
        }
    }
}

/// Multiplies each step by `exp(delta)` when its windowed acceptance rate is
/// above target and by `exp(-delta)` when below. No-op outside burn-in.
pub fn adapt_steps(
    accepted: &[usize; 5],
    window: usize,
    steps: &mut [f64; 5],
    adaptation: &Adaptation,
    in_burn_in: bool,
) {
    if !in_burn_in || !adaptation.enabled || window == 0 {
        return;
    }
    for (step, &acc) in steps.iter_mut().zip(accepted) {
        let rate = acc as f64 / window as f64;
        if rate > adaptation.target {
            *step *= adaptation.delta.exp();
        } else if rate < adaptation.target {
            *step *= (-adaptation.delta).exp();
        }
    }
}

fn default_thin() -> usize {
    1
}

fn default_refresh() -> usize {
    1
}

fn default_workers() -> usize {
    1
}

fn default_steps() -> [f64; 5] {
    [0.1; 5]
}

/// Settings for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub seed: u64,
    pub initial: HawkesParams,
    /// Initial proposal standard deviations on the log scale, in parameter
    /// order `mu0, tau_t, xi0, sigma_x, sigma_t`.
    #[serde(default = "default_steps")]
    pub steps: [f64; 5],
    /// Iterations between location redraws.
    #[serde(default = "default_refresh")]
    pub refresh_period: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub adaptation: Adaptation,
    #[serde(default)]
    pub strategy: LikelihoodStrategy,
}

impl ChainConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64, initial: HawkesParams) -> Self {
        Self {
            iterations,
            burn_in,
            thin: 1,
            seed,
            initial,
            steps: default_steps(),
            refresh_period: 1,
            precision: Precision::Double,
            workers: 1,
            priors: Priors::default(),
            adaptation: Adaptation::default(),
            strategy: LikelihoodStrategy::Factored,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.burn_in >= self.iterations {
            return cfg(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            return cfg("thin must be at least 1".into());
        }
        if self.refresh_period == 0 {
            return cfg("refresh_period must be at least 1".into());
        }
        if self.workers == 0 {
            return cfg("workers must be at least 1".into());
        }
        if self.steps.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return cfg(format!(
                "proposal steps must be non-negative, got {:?}",
                self.steps
            ));
        }
        for p in Param::ALL {
            self.priors.get(p).validate(p.name())?;
        }
        self.initial.validate()
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Draws and bookkeeping from one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain: usize,
    pub seed: u64,
    /// Iteration number (0-based, burn-in included) of each retained draw.
    pub iterations: Vec<usize>,
    /// Retained draws in parameter order.
    pub draws: Vec<[f64; 5]>,
    pub loglik: Vec<f64>,
    /// Post-burn-in acceptance rate per parameter.
    pub acceptance_rates: [f64; 5],
    pub final_steps: [f64; 5],
    /// Locations in effect at the end of the run.
    pub final_locations: Vec<Location>,
    pub elapsed_seconds: f64,
}

impl ChainOutput {
    /// Retained draws of one parameter.
    pub fn column(&self, p: Param) -> Vec<f64> {
        self.draws.iter().map(|d| d[p.index()]).collect()
    }
}

/// A log-likelihood the sweep can query one parameter change at a time.
pub trait SweepTarget {
    /// Log-likelihood at `params`, which differs from the last accepted state
    /// only in `changed`. The proposal stays pending until [`accept`] is
    /// called; a further `propose` discards it.
    ///
    /// [`accept`]: SweepTarget::accept
    fn propose(&mut self, params: &HawkesParams, changed: Param) -> f64;

    /// Commits the pending proposal.
    fn accept(&mut self);

    /// Log-likelihood of the accepted state.
    fn current(&mut self, params: &HawkesParams) -> f64;

    /// Redraws latent locations. Returns whether any location changed.
    fn refresh_locations(&mut self, _rng: &mut ChaCha8Rng, _params: &HawkesParams) -> Result<bool> {
        Ok(false)
    }

    fn locations(&self) -> Vec<Location> {
        Vec::new()
    }
}

/// Per-event region lookup for uniform location draws.
#[derive(Debug, Clone)]
pub struct LocationSampler {
    regions: Arc<RegionTable>,
    event_region: Vec<usize>,
}

impl LocationSampler {
    pub fn new(catalog: &Catalog, regions: Arc<RegionTable>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::EmptyRegionTable);
        }
        let event_region = catalog
            .region_ids()
            .iter()
            .enumerate()
            .map(|(n, id)| {
                let id = id.as_deref().ok_or_else(|| {
                    Error::at_event(n, Error::InvalidCatalog("event has no region id".into()))
                })?;
                regions.index_of(id).ok_or_else(|| {
                    Error::at_event(
                        n,
                        Error::Region {
                            region: id.to_string(),
                            reason: "not in the region table".into(),
                        },
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            regions,
            event_region,
        })
    }

    fn region(&self, n: usize) -> &crate::geo::Region {
        self.regions
            .get_index(self.event_region[n])
            .expect("index validated on construction")
    }

    /// Placeholder locations (region anchors) used before the first draw.
    pub fn anchors(&self) -> Vec<Location> {
        (0..self.event_region.len())
            .map(|n| self.region(n).anchor())
            .collect()
    }

    /// One independent uniform draw per event.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Location>> {
        (0..self.event_region.len())
            .map(|n| sample_point_in_region(self.region(n), rng).map_err(|e| Error::at_event(n, e)))
            .collect()
    }
}

/// Draws every event location uniformly within its region.
pub fn resample_locations<R: Rng + ?Sized>(
    catalog: &Catalog,
    regions: &RegionTable,
    rng: &mut R,
) -> Result<Vec<Location>> {
    LocationSampler::new(catalog, Arc::new(regions.clone()))?.draw(rng)
}

enum Pending {
    None,
    Background(Vec<f64>),
    Triggering(Vec<f64>),
}

/// The model log-likelihood over a catalog, with optional location redraws.
pub struct HawkesTarget {
    engine: LikelihoodEngine,
    strategy: LikelihoodStrategy,
    times: Vec<f64>,
    background: Vec<f64>,
    triggering: Vec<f64>,
    pending: Pending,
    sampler: Option<LocationSampler>,
    locations: Vec<Location>,
}

impl HawkesTarget {
    /// Target over `catalog`. With `regions`, locations are redrawn from each
    /// event's region (the catalog's own locations, if any, are ignored);
    /// without, the catalog must be located and locations stay fixed.
    pub fn new(
        catalog: &Catalog,
        regions: Option<Arc<RegionTable>>,
        params: &HawkesParams,
        workers: usize,
        precision: Precision,
        strategy: LikelihoodStrategy,
    ) -> Result<Self> {
        let sampler = regions
            .map(|r| LocationSampler::new(catalog, r))
            .transpose()?;
        let locations = match &sampler {
            Some(s) => s.anchors(),
            None => catalog.locations()?.to_vec(),
        };
        let view = catalog.view_with(&locations)?;
        let partition = Partition::clamped(catalog.len(), workers)?;
        let engine = LikelihoodEngine::new(&view, partition, precision)?;
        let (background, triggering) = match strategy {
            LikelihoodStrategy::Factored => (
                engine.background_sums(params.tau_t),
                engine.triggering_sums(params.sigma_x, params.sigma_t, params.variant),
            ),
            LikelihoodStrategy::Full => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            engine,
            strategy,
            times: catalog.times().to_vec(),
            background,
            triggering,
            pending: Pending::None,
            sampler,
            locations,
        })
    }
}

impl SweepTarget for HawkesTarget {
    fn propose(&mut self, params: &HawkesParams, changed: Param) -> f64 {
        if self.strategy == LikelihoodStrategy::Full {
            return self.engine.log_likelihood(params);
        }
        let (bg, trig) = match changed {
            Param::Mu0 | Param::Xi0 => {
                self.pending = Pending::None;
                (&self.background, &self.triggering)
            }
            Param::TauT => {
                self.pending = Pending::Background(self.engine.background_sums(params.tau_t));
                match &self.pending {
                    Pending::Background(b) => (b, &self.triggering),
                    _ => unreachable!(),
                }
            }
            Param::SigmaX | Param::SigmaT => {
                self.pending = Pending::Triggering(self.engine.triggering_sums(
                    params.sigma_x,
                    params.sigma_t,
                    params.variant,
                ));
                match &self.pending {
                    Pending::Triggering(k) => (&self.background, k),
                    _ => unreachable!(),
                }
            }
        };
        factored_log_likelihood(params, &self.times, bg, trig)
    }

    fn accept(&mut self) {
        match std::mem::replace(&mut self.pending, Pending::None) {
            Pending::None => {}
            Pending::Background(b) => self.background = b,
            Pending::Triggering(k) => self.triggering = k,
        }
    }

    fn current(&mut self, params: &HawkesParams) -> f64 {
        match self.strategy {
            LikelihoodStrategy::Full => self.engine.log_likelihood(params),
            LikelihoodStrategy::Factored => {
                factored_log_likelihood(params, &self.times, &self.background, &self.triggering)
            }
        }
    }

    fn refresh_locations(&mut self, rng: &mut ChaCha8Rng, params: &HawkesParams) -> Result<bool> {
        let Some(sampler) = &self.sampler else {
            return Ok(false);
        };
        let fresh = sampler.draw(rng)?;
        // point regions redraw the same coordinates; skip the rebuild
        let same = fresh.len() == self.locations.len()
            && fresh.iter().zip(&self.locations).all(|(a, b)| {
                a.lon.to_bits() == b.lon.to_bits() && a.lat.to_bits() == b.lat.to_bits()
            });
        if same {
            return Ok(false);
        }
        self.locations = fresh;
        self.engine.set_locations(&self.locations);
        self.pending = Pending::None;
        if self.strategy == LikelihoodStrategy::Factored {
            self.triggering =
                self.engine
                    .triggering_sums(params.sigma_x, params.sigma_t, params.variant);
        }
        Ok(true)
    }

    fn locations(&self) -> Vec<Location> {
        self.locations.clone()
    }
}

/// Random streams for one chain: parameters and locations use separate
/// streams of the same seed, so location draws never depend on parameters.
pub fn chain_rngs(seed: u64, chain: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut params = ChaCha8Rng::seed_from_u64(seed);
    params.set_stream(2 * chain as u64);
    let mut locations = ChaCha8Rng::seed_from_u64(seed);
    locations.set_stream(2 * chain as u64 + 1);
    (params, locations)
}

/// Current parameters, cached log-likelihood and acceptance counters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: HawkesParams,
    pub loglik: f64,
    pub accepted: [usize; 5],
    pub proposed: [usize; 5],
}

/// One pass of univariate updates in the order `mu0, tau_t, xi0, sigma_x,
/// sigma_t`.
pub fn mh_sweep<T: SweepTarget + ?Sized>(
    state: &mut ChainState,
    target: &mut T,
    steps: &[f64; 5],
    priors: &Priors,
    rng: &mut ChaCha8Rng,
) {
    for p in Param::ALL {
        let k = p.index();
        let eps: f64 = rng.sample(StandardNormal);
        let log_u = rng.random::<f64>().ln();
        state.proposed[k] += 1;
        if steps[k] == 0.0 {
            state.accepted[k] += 1;
            continue;
        }
        let current = state.params.get(p);
        let proposed = current * (steps[k] * eps).exp();
        if !(proposed > 0.0 && proposed.is_finite()) {
            continue;
        }
        let mut candidate = state.params;
        candidate.set(p, proposed);
        let ll = target.propose(&candidate, p);
        if !ll.is_finite() {
            continue;
        }
        let prior = priors.get(p);
        let log_ratio = ll - state.loglik + prior.log_density(proposed)
            - prior.log_density(current)
            + proposed.ln()
            - current.ln();
        if log_u < log_ratio {
            target.accept();
            state.params = candidate;
            state.loglik = ll;
            state.accepted[k] += 1;
        }
    }
}

/// Runs one chain against an arbitrary target.
pub fn run_chain<T: SweepTarget + ?Sized>(
    target: &mut T,
    config: &ChainConfig,
    chain: usize,
) -> Result<ChainOutput> {
    config.validate()?;
    let start = Instant::now();
    let (mut rng, mut loc_rng) = chain_rngs(config.seed, chain);
    let mut state = ChainState {
        params: config.initial,
        loglik: f64::NAN,
        accepted: [0; 5],
        proposed: [0; 5],
    };
    let mut steps = config.steps;
    let mut window_accepted = [0usize; 5];
    let mut window_len = 0usize;
    let mut post_accepted = [0usize; 5];
    let mut post_proposed = [0usize; 5];

    let capacity = config.retained();
    let mut out = ChainOutput {
        chain,
        seed: config.seed,
        iterations: Vec::with_capacity(capacity),
        draws: Vec::with_capacity(capacity),
        loglik: Vec::with_capacity(capacity),
        acceptance_rates: [0.0; 5],
        final_steps: steps,
        final_locations: Vec::new(),
        elapsed_seconds: 0.0,
    };

    for it in 0..config.iterations {
        if it % config.refresh_period == 0 {
            let changed = target.refresh_locations(&mut loc_rng, &state.params)?;
            if changed || it == 0 {
                state.loglik = target.current(&state.params);
            }
        }
        if it == 0 && !state.loglik.is_finite() {
            return Err(Error::Config(format!(
                "initial log-likelihood is not finite ({})",
                state.loglik
            )));
        }
        let before = state.accepted;
        mh_sweep(&mut state, target, &steps, &config.priors, &mut rng);
        let in_burn_in = it < config.burn_in;
        for k in 0..5 {
            let acc = state.accepted[k] - before[k];
            if in_burn_in {
                window_accepted[k] += acc;
            } else {
                post_accepted[k] += acc;
                post_proposed[k] += 1;
            }
        }
        if in_burn_in {
            window_len += 1;
            if window_len == config.adaptation.window {
                adapt_steps(
                    &window_accepted,
                    window_len,
                    &mut steps,
                    &config.adaptation,
                    true,
                );
                window_accepted = [0; 5];
                window_len = 0;
            }
        } else if (it - config.burn_in) % config.thin == 0 {
            out.iterations.push(it);
            out.draws.push(state.params.to_array());
            out.loglik.push(state.loglik);
        }
    }

    for k in 0..5 {
        out.acceptance_rates[k] = post_accepted[k] as f64 / post_proposed[k].max(1) as f64;
    }
    out.final_steps = steps;
    out.final_locations = target.locations();
    out.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Runs chain `chain` of the cut-posterior sampler. With `regions`, event
/// locations are redrawn from their regions; without, the catalog's own
/// locations are used throughout.
pub fn run_cut_posterior(
    config: &ChainConfig,
    catalog: &Catalog,
    regions: Option<Arc<RegionTable>>,
    chain: usize,
) -> Result<ChainOutput> {
    config.validate()?;
    let mut target = HawkesTarget::new(
        catalog,
        regions,
        &config.initial,
        config.workers,
        config.precision,
        config.strategy,
    )?;
    run_chain(&mut target, config, chain)
}

/// Runs chains `0..chains` one after another.
pub fn run_chains(
    config: &ChainConfig,
    catalog: &Catalog,
    regions: Option<Arc<RegionTable>>,
    chains: usize,
) -> Result<Vec<ChainOutput>> {
    (0..chains)
        .map(|c| run_cut_posterior(config, catalog, regions.clone(), c))
        .collect()
}

/// Starting values derived from a catalog: equal background and triggering
/// weights, a background lengthscale of a tenth of the observation span, a
/// one-unit triggering time scale and a spatial scale of a tenth of the
/// domain width.
pub fn default_initial(
    catalog: &Catalog,
    area: f64,
    variant: crate::model::KernelVariant,
) -> Result<HawkesParams> {
    let span = (catalog.last_time() - catalog.times()[0]).max(1e-3);
    HawkesParams::new(0.5, span / 10.0, 0.5, 0.1 * area.sqrt(), 1.0, area, variant)
}

/// Starting point for chain `chain`: `initial` with each parameter scaled by
/// `exp(U(-half_width, half_width))`. Uses its own stream, disjoint from the
/// ones [`chain_rngs`] hands out.
pub fn jittered_initial(
    initial: &HawkesParams,
    half_width: f64,
    seed: u64,
    chain: usize,
) -> Result<HawkesParams> {
    if !(half_width >= 0.0 && half_width.is_finite()) {
        return Err(Error::Config(format!(
            "jitter half-width must be non-negative, got {half_width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - chain as u64);
    let mut p = *initial;
    if half_width > 0.0 {
        for q in Param::ALL {
            p.set(
                q,
                p.get(q) * rng.random_range(-half_width..half_width).exp(),
            );
        }
    }
    p.validate()?;
    Ok(p)
}
