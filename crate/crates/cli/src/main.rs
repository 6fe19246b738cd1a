mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sthawkes_core::geo::{DensityScaling, MileConvention};
use sthawkes_core::{KernelVariant, Param, Precision};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "sthawkes",
    version,
    about = "Spatiotemporal Hawkes process likelihood and inference"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

/// Flags shared by every command. Each overrides the matching config key.
#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Likelihood worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_parser = parse_via::<Precision>)]
    precision: Option<Precision>,
    #[arg(long, global = true, value_parser = parse_via::<KernelVariant>)]
    variant: Option<KernelVariant>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Events CSV (`event_id,t_weeks,lon,lat,region_id`).
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    /// Regions GeoJSON.
    #[arg(long, global = true)]
    regions: Option<PathBuf>,
    /// `region_id,density` CSV for regions without a density property.
    #[arg(long, global = true)]
    densities: Option<PathBuf>,
    /// Domain area in square degrees.
    #[arg(long, global = true)]
    area: Option<f64>,
}

#[derive(Args)]
struct ParamFlags {
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    tau_t: Option<f64>,
    #[arg(long)]
    xi0: Option<f64>,
    #[arg(long)]
    sigma_x: Option<f64>,
    #[arg(long)]
    sigma_t: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a catalog from the branching process.
    Simulate,
    /// Evaluate the log-likelihood of a catalog.
    Loglik {
        #[command(flatten)]
        params: ParamFlags,
        /// Also evaluate the direct double loop.
        #[arg(long)]
        naive: bool,
    },
    /// Time likelihood evaluations on synthetic catalogs.
    Bench {
        /// Catalog sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Worker counts to time, comma separated.
        #[arg(long = "worker-counts", value_delimiter = ',')]
        worker_counts: Vec<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Run MCMC chains and summarize them.
    Fit {
        #[arg(long)]
        chains: Option<usize>,
        /// Total iterations per chain, burn-in included.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        /// Run each chain in its own process.
        #[arg(long)]
        spawn: bool,
        /// Run only this chain (used by spawned processes).
        #[arg(long, hide = true)]
        chain: Option<usize>,
    },
    /// Summarize chain CSVs: quantiles, R-hat, ESS.
    Diagnose {
        /// Directory holding chain_<k>.csv; defaults to --out.
        #[arg(long)]
        chains: Option<PathBuf>,
    },
    /// Report effective spatial lengthscales in miles per county.
    Lengthscales {
        /// `name,lat,density` CSV.
        #[arg(long)]
        counties: Option<PathBuf>,
        /// Directory holding chain_<k>.csv; defaults to --out.
        #[arg(long)]
        chains: Option<PathBuf>,
        #[arg(long, value_parser = parse_via::<DensityScaling>)]
        scaling: Option<DensityScaling>,
        #[arg(long, value_parser = parse_via::<MileConvention>)]
        convention: Option<MileConvention>,
    },
}

fn parse_via<T: std::str::FromStr<Err = sthawkes_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: sthawkes_core::Error| e.to_string())
}

fn apply_common(cfg: &mut RunConfig, c: Common) {
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    if let Some(v) = c.precision {
        cfg.precision = v;
    }
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    if let Some(v) = c.out {
        cfg.out = v;
    }
    cfg.events = c.events.or(cfg.events.take());
    cfg.regions = c.regions.or(cfg.regions.take());
    cfg.densities = c.densities.or(cfg.densities.take());
    cfg.area = c.area.or(cfg.area);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_common(&mut cfg, cli.common);
    if cfg.workers == 0 {
        return Err(config::config_error("--workers must be at least 1"));
    }
    match cli.command {
        Cmd::Simulate => commands::simulate(&cfg),
        Cmd::Loglik { params, naive } => {
            for (p, v) in Param::ALL.into_iter().zip([
                params.mu0,
                params.tau_t,
                params.xi0,
                params.sigma_x,
                params.sigma_t,
            ]) {
                cfg.params.set(p, v);
            }
            commands::loglik(&cfg, naive)
        }
        Cmd::Bench {
            sizes,
            worker_counts,
            repeats,
        } => {
            if !sizes.is_empty() {
                cfg.bench.sizes = sizes;
            }
            if !worker_counts.is_empty() {
                cfg.bench.workers = worker_counts;
            }
            if let Some(r) = repeats {
                cfg.bench.repeats = r;
            }
            commands::bench(&cfg)
        }
        Cmd::Fit {
            chains,
            iterations,
            burn_in,
            thin,
            spawn,
            chain,
        } => {
            let f = &mut cfg.fit;
            f.chains = chains.unwrap_or(f.chains);
            f.iterations = iterations.unwrap_or(f.iterations);
            f.burn_in = burn_in.unwrap_or(f.burn_in);
            f.thin = thin.unwrap_or(f.thin);
            f.spawn |= spawn;
            commands::fit(&cfg, chain)
        }
        Cmd::Diagnose { chains } => commands::diagnose(&cfg, chains.as_deref()),
        Cmd::Lengthscales {
            counties,
            chains,
            scaling,
            convention,
        } => {
            let l = &mut cfg.lengthscales;
            l.counties = counties.or(l.counties.take());
            l.scaling = scaling.unwrap_or(l.scaling);
            l.convention = convention.unwrap_or(l.convention);
            commands::lengthscales(&cfg, chains.as_deref())
        }
    }
}

/// Status 2 for configuration problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| {
        e.is::<ConfigError>()
            || matches!(
                e.downcast_ref::<sthawkes_core::Error>(),
                Some(sthawkes_core::Error::Config(_))
            )
    });
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
