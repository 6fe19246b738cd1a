//! The JSON run configuration. Every key is optional; command-line flags
//! override whatever the file sets. Relative paths resolve against the
//! working directory.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sthawkes_core::geo::{DensityScaling, GeoJsonKeys, MileConvention};
use sthawkes_core::mcmc::{Adaptation, ChainConfig, LikelihoodStrategy, Priors};
use sthawkes_core::sim::{SimConfig, Window};
use sthawkes_core::{HawkesParams, KernelVariant, Param, Precision};

/// A problem with the configuration or flags. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub precision: Precision,
    pub variant: KernelVariant,
    pub out: PathBuf,
    pub events: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub densities: Option<PathBuf>,
    pub region_keys: GeoJsonKeys,
    /// Domain area in square degrees; by default the padded bounding box of
    /// the event locations (or of the regions when locations are pending).
    pub area: Option<f64>,
    pub params: ParamValues,
    pub simulate: SimSection,
    pub fit: FitSection,
    pub bench: BenchSection,
    pub lengthscales: LengthscaleSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            precision: Precision::Double,
            variant: KernelVariant::Constant,
            out: PathBuf::from("out"),
            events: None,
            regions: None,
            densities: None,
            region_keys: GeoJsonKeys::default(),
            area: None,
            params: ParamValues::default(),
            simulate: SimSection::default(),
            fit: FitSection::default(),
            bench: BenchSection::default(),
            lengthscales: LengthscaleSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }

    /// The configuration a chain process runs with; also what the config
    /// hash covers, so spawned and in-process fits hash alike.
    pub fn without_spawn(&self) -> Self {
        let mut c = self.clone();
        c.fit.spawn = false;
        c
    }

    pub fn events_path(&self) -> anyhow::Result<&Path> {
        self.events
            .as_deref()
            .ok_or_else(|| config_error("no events file given (--events or \"events\")"))
    }
}

/// Explicit parameter values, e.g. for `loglik` or a fit's starting point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamValues {
    pub mu0: Option<f64>,
    pub tau_t: Option<f64>,
    pub xi0: Option<f64>,
    pub sigma_x: Option<f64>,
    pub sigma_t: Option<f64>,
}

impl ParamValues {
    pub fn get(&self, p: Param) -> Option<f64> {
        match p {
            Param::Mu0 => self.mu0,
            Param::TauT => self.tau_t,
            Param::Xi0 => self.xi0,
            Param::SigmaX => self.sigma_x,
            Param::SigmaT => self.sigma_t,
        }
    }

    /// Sets `p` when `value` is given; leaves it alone otherwise.
    pub fn set(&mut self, p: Param, value: Option<f64>) {
        let Some(v) = value else { return };
        let slot = match p {
            Param::Mu0 => &mut self.mu0,
            Param::TauT => &mut self.tau_t,
            Param::Xi0 => &mut self.xi0,
            Param::SigmaX => &mut self.sigma_x,
            Param::SigmaT => &mut self.sigma_t,
        };
        *slot = Some(v);
    }

    /// Fills the five parameters, requiring all of them.
    pub fn complete(&self, area: f64, variant: KernelVariant) -> anyhow::Result<HawkesParams> {
        let mut vals = [0.0; 5];
        for p in Param::ALL {
            vals[p.index()] = self
                .get(p)
                .ok_or_else(|| config_error(format!("parameter {} is not set", p.name())))?;
        }
        build(vals, area, variant)
    }

    /// Overlays the set parameters onto `base`.
    pub fn overlay(&self, base: &HawkesParams) -> anyhow::Result<HawkesParams> {
        let mut vals = base.to_array();
        for p in Param::ALL {
            if let Some(v) = self.get(p) {
                vals[p.index()] = v;
            }
        }
        build(vals, base.area, base.variant)
    }
}

fn build(v: [f64; 5], area: f64, variant: KernelVariant) -> anyhow::Result<HawkesParams> {
    HawkesParams::new(v[0], v[1], v[2], v[3], v[4], area, variant)
        .map_err(|e| config_error(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub immigrant_rate: f64,
    pub horizon: f64,
    pub window: Window,
    pub xi0: f64,
    pub sigma_x: f64,
    pub sigma_t: f64,
    pub max_expected_events: f64,
    /// Half-width of a uniform jitter applied to event times (weeks).
    pub time_jitter: Option<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            immigrant_rate: 25.0,
            horizon: 100.0,
            window: Window::new(0.0, 10.0, 0.0, 10.0),
            xi0: 0.5,
            sigma_x: 0.1,
            sigma_t: 2.0,
            max_expected_events: 1e6,
            time_jitter: None,
        }
    }
}

impl SimSection {
    pub fn to_config(&self, variant: KernelVariant) -> SimConfig {
        SimConfig {
            immigrant_rate: self.immigrant_rate,
            horizon: self.horizon,
            window: self.window,
            xi0: self.xi0,
            sigma_x: self.sigma_x,
            sigma_t: self.sigma_t,
            variant,
            max_expected_events: self.max_expected_events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub chains: usize,
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub steps: [f64; 5],
    pub refresh_period: usize,
    pub priors: Priors,
    pub adaptation: Adaptation,
    pub strategy: LikelihoodStrategy,
    /// Starting values; unset parameters come from the catalog.
    pub initial: ParamValues,
    /// Half-width of the per-chain log-scale jitter of the starting values.
    pub initial_jitter: f64,
    /// Run each chain in its own child process.
    pub spawn: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let base = ChainConfig::new(5000, 1000, 0, placeholder_params());
        Self {
            chains: 4,
            iterations: base.iterations,
            burn_in: base.burn_in,
            thin: base.thin,
            steps: base.steps,
            refresh_period: base.refresh_period,
            priors: base.priors,
            adaptation: base.adaptation,
            strategy: base.strategy,
            initial: ParamValues::default(),
            initial_jitter: 0.3,
            spawn: false,
        }
    }
}

fn placeholder_params() -> HawkesParams {
    HawkesParams::new(1.0, 1.0, 0.5, 1.0, 1.0, 1.0, KernelVariant::Constant)
        .expect("valid constants")
}

impl FitSection {
    pub fn chain_config(
        &self,
        run: &RunConfig,
        initial: HawkesParams,
    ) -> anyhow::Result<ChainConfig> {
        let cfg = ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: run.seed,
            initial,
            steps: self.steps,
            refresh_period: self.refresh_period,
            precision: run.precision,
            workers: run.workers,
            priors: self.priors,
            adaptation: self.adaptation,
            strategy: self.strategy,
        };
        cfg.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks the settings that do not depend on the data.
    pub fn validate(&self, run: &RunConfig) -> anyhow::Result<()> {
        if self.chains == 0 {
            return Err(config_error("fit needs at least one chain"));
        }
        self.chain_config(run, placeholder_params()).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    pub workers: Vec<usize>,
    pub repeats: usize,
    pub horizon: f64,
    pub params: ParamValues,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            sizes: vec![2_000, 4_000, 8_000],
            workers: vec![1],
            repeats: 3,
            horizon: 100.0,
            // long lengthscales so that no pair is skipped
            params: ParamValues {
                mu0: Some(0.5),
                tau_t: Some(25.0),
                xi0: Some(0.5),
                sigma_x: Some(0.1),
                sigma_t: Some(2.81),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthscaleSection {
    pub counties: Option<PathBuf>,
    pub scaling: DensityScaling,
    pub convention: MileConvention,
}

impl Default for LengthscaleSection {
    fn default() -> Self {
        Self {
            counties: None,
            scaling: DensityScaling::Sqrt,
            convention: MileConvention::Averaged,
        }
    }
}
