use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sthawkes_core::diagnostics::{
    contagion_fraction, lengthscale_table, quantile_sorted, summarize, Summary,
};
use sthawkes_core::engine::{
    scaling_exponent, time_evaluation, write_bench_csv, write_bench_table,
};
use sthawkes_core::geo::{domain_area, load_densities_csv};
use sthawkes_core::io::{
    config_hash, load_counties, load_events, read_chain_csv, write_chain_csv, write_events,
    write_json, ChainDraws, ChainSidecar,
};
use sthawkes_core::mcmc::{default_initial, jittered_initial, run_cut_posterior};
use sthawkes_core::sim::{
    coarsen_catalog, jitter_times, naive_log_likelihood, region_density, simulate_catalog,
    simulate_catalog_with, uniform_catalog, SimConfig, Window,
};
use sthawkes_core::{log_likelihood, Catalog, KernelVariant, Param, Partition, RegionTable};

use crate::config::{config_error, RunConfig};

fn ensure_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn load_regions(cfg: &RunConfig) -> anyhow::Result<Option<RegionTable>> {
    let Some(path) = &cfg.regions else {
        return Ok(None);
    };
    let densities = cfg
        .densities
        .as_deref()
        .map(load_densities_csv)
        .transpose()?;
    let table = RegionTable::from_geojson(path, &cfg.region_keys, densities.as_ref())?;
    Ok(Some(table))
}

fn load_catalog(cfg: &RunConfig, regions: Option<&RegionTable>) -> anyhow::Result<Catalog> {
    let path = cfg.events_path()?;
    let catalog = load_events(path, regions)?;
    if catalog.is_empty() {
        bail!("{} contains no events", path.display());
    }
    Ok(catalog)
}

fn area_for(
    cfg: &RunConfig,
    catalog: &Catalog,
    regions: Option<&RegionTable>,
) -> anyhow::Result<f64> {
    if catalog.locations_pending() && cfg.area.is_none() {
        let bb = regions.and_then(RegionTable::bounding_box).ok_or_else(|| {
            config_error("locations are pending and no regions or area were given")
        })?;
        return Ok(bb.padded_area());
    }
    Ok(domain_area(catalog, cfg.area)?)
}

#[derive(Serialize)]
struct SimulationRecord<'a> {
    seed: u64,
    events: usize,
    coarsened: bool,
    simulation: &'a SimConfig,
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let sim = cfg.simulate.to_config(cfg.variant);
    sim.validate().map_err(|e| config_error(e.to_string()))?;
    let regions = load_regions(cfg)?;
    let mut catalog = match &regions {
        Some(r) => simulate_catalog_with(&sim, region_density(r, 1.0), cfg.seed)?,
        None => simulate_catalog(&sim, cfg.seed)?,
    };
    if let Some(width) = cfg.simulate.time_jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        catalog = jitter_times(&catalog, width, &mut rng)?;
    }
    ensure_out(&cfg.out)?;
    let coarse = match &regions {
        Some(r) => {
            write_events(&cfg.out.join("events_exact.csv"), &catalog)?;
            Some(coarsen_catalog(&catalog, r)?)
        }
        None => None,
    };
    let written = coarse.as_ref().unwrap_or(&catalog);
    write_events(&cfg.out.join("events.csv"), written)?;
    write_json(
        &cfg.out.join("truth.json"),
        &SimulationRecord {
            seed: cfg.seed,
            events: written.len(),
            coarsened: coarse.is_some(),
            simulation: &sim,
        },
    )?;
    println!(
        "wrote {} events to {}",
        written.len(),
        cfg.out.join("events.csv").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct LoglikReport {
    events: usize,
    workers: usize,
    precision: String,
    variant: KernelVariant,
    area: f64,
    loglik: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    naive_loglik: Option<f64>,
}

pub fn loglik(cfg: &RunConfig, naive: bool) -> anyhow::Result<()> {
    let regions = load_regions(cfg)?;
    let catalog = load_catalog(cfg, regions.as_ref())?;
    if catalog.locations_pending() {
        bail!("events have no coordinates; coarse catalogs can only be fitted");
    }
    let area = area_for(cfg, &catalog, regions.as_ref())?;
    let params = cfg.params.complete(area, cfg.variant)?;
    let partition = Partition::clamped(catalog.len(), cfg.workers)?;
    let value = log_likelihood(&catalog.view()?, &params, &partition, cfg.precision)?;
    let report = LoglikReport {
        events: catalog.len(),
        workers: partition.workers(),
        precision: cfg.precision.to_string(),
        variant: cfg.variant,
        area,
        loglik: value,
        naive_loglik: naive
            .then(|| naive_log_likelihood(&catalog, &params))
            .transpose()?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> anyhow::Result<()> {
    let b = &cfg.bench;
    if b.sizes.is_empty() || b.workers.is_empty() {
        return Err(config_error(
            "bench needs at least one size and one worker count",
        ));
    }
    let window = Window::new(0.0, 1.0, 0.0, 1.0);
    let params = b.params.complete(window.area(), cfg.variant)?;
    let mut rows = Vec::new();
    for &n in &b.sizes {
        let catalog = uniform_catalog(n, b.horizon, window, cfg.seed)?;
        let view = catalog.view()?;
        for &g in &b.workers {
            let row = time_evaluation(&view, &params, g, cfg.precision, b.repeats)
                .map_err(|e| config_error(e.to_string()))?;
            eprintln!("N={n} G={g}: {:.4}s", row.seconds_median);
            rows.push(row);
        }
    }
    ensure_out(&cfg.out)?;
    write_bench_csv(&cfg.out.join("bench.csv"), &rows)?;
    let stdout = std::io::stdout();
    write_bench_table(stdout.lock(), &rows)?;
    for &g in &b.workers {
        let same: Vec<_> = rows.iter().filter(|r| r.workers == g).cloned().collect();
        if let Some(slope) = scaling_exponent(&same) {
            println!("G={g}: log-log slope {slope:.3}");
        }
    }
    Ok(())
}

fn chain_csv(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.csv"))
}

/// Runs one chain in this process and writes its CSV and sidecar.
fn run_one_chain(
    cfg: &RunConfig,
    catalog: &Catalog,
    regions: Option<Arc<RegionTable>>,
    area: f64,
    chain: usize,
    hash: &str,
) -> anyhow::Result<()> {
    let base = default_initial(catalog, area, cfg.variant)?;
    let start = cfg.fit.initial.overlay(&base)?;
    let start = jittered_initial(&start, cfg.fit.initial_jitter, cfg.seed, chain)?;
    let chain_cfg = cfg.fit.chain_config(cfg, start)?;
    let out = run_cut_posterior(&chain_cfg, catalog, regions, chain)?;
    write_chain_csv(&chain_csv(&cfg.out, chain), &ChainDraws::from(&out))?;
    write_json(
        &cfg.out.join(format!("chain_{chain}.json")),
        &ChainSidecar::new(&out, hash.to_string()),
    )?;
    eprintln!(
        "chain {chain}: {} draws in {:.1}s",
        out.draws.len(),
        out.elapsed_seconds
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig, only_chain: Option<usize>) -> anyhow::Result<()> {
    cfg.fit.validate(cfg)?;
    if let Some(k) = only_chain {
        if k >= cfg.fit.chains {
            return Err(config_error(format!(
                "chain {k} is out of range for {} chains",
                cfg.fit.chains
            )));
        }
    }
    let regions = load_regions(cfg)?;
    let catalog = load_catalog(cfg, regions.as_ref())?;
    if catalog.locations_pending() && regions.is_none() {
        return Err(config_error(
            "events have no coordinates; give a regions file to fit them",
        ));
    }
    let area = area_for(cfg, &catalog, regions.as_ref())?;
    ensure_out(&cfg.out)?;
    let hash = config_hash(&cfg.without_spawn())?;
    let regions = regions.map(Arc::new);

    let chains: Vec<usize> = match only_chain {
        Some(k) => vec![k],
        None => (0..cfg.fit.chains).collect(),
    };
    if cfg.fit.spawn && only_chain.is_none() {
        spawn_chains(cfg, &chains)?;
    } else {
        for &k in &chains {
            run_one_chain(cfg, &catalog, regions.clone(), area, k, &hash)
                .map_err(|e| e.context(format!("chain {k} failed")))?;
        }
    }
    if only_chain.is_none() {
        let report = SummaryFile {
            config_hash: hash,
            ..diagnose_dir(&cfg.out, cfg.fit.chains)?
        };
        write_json(&cfg.out.join("summary.json"), &report)?;
        print_summary(&report);
    }
    Ok(())
}

fn spawn_chains(cfg: &RunConfig, chains: &[usize]) -> anyhow::Result<()> {
    let resolved = cfg.out.join("config.json");
    write_json(&resolved, &cfg.without_spawn())?;
    let exe = std::env::current_exe().context("cannot locate own executable")?;
    let children: Vec<(usize, Child)> = chains
        .iter()
        .map(|&k| {
            Command::new(&exe)
                .arg("fit")
                .arg("--config")
                .arg(&resolved)
                .arg("--chain")
                .arg(k.to_string())
                .spawn()
                .map(|c| (k, c))
                .with_context(|| format!("chain {k}: cannot start process"))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut failed = Vec::new();
    for (k, mut child) in children {
        let status = child
            .wait()
            .with_context(|| format!("chain {k}: lost child process"))?;
        if !status.success() {
            failed.push(format!("chain {k} ({status})"));
        }
    }
    if !failed.is_empty() {
        bail!("chain processes failed: {}", failed.join(", "));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Interval {
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryFile {
    #[serde(skip_serializing_if = "String::is_empty")]
    pub config_hash: String,
    pub chains: usize,
    pub draws_per_chain: Vec<usize>,
    pub parameters: BTreeMap<String, Summary>,
    pub contagion_fraction: Interval,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
    pub min_ess_tail: f64,
}

fn read_chains(dir: &Path, chains: usize) -> anyhow::Result<Vec<ChainDraws>> {
    (0..chains)
        .map(|k| {
            let path = chain_csv(dir, k);
            read_chain_csv(&path)
                .with_context(|| format!("chain {k}: cannot read {}", path.display()))
        })
        .collect()
}

/// Number of consecutive `chain_<k>.csv` files in `dir`.
fn count_chains(dir: &Path) -> usize {
    (0..).take_while(|&k| chain_csv(dir, k).is_file()).count()
}

fn summarize_draws(chains: &[ChainDraws]) -> anyhow::Result<SummaryFile> {
    if chains.is_empty() {
        bail!("no chains to summarize");
    }
    let mut parameters = BTreeMap::new();
    for p in Param::ALL {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(p)).collect();
        let s = summarize(&cols).with_context(|| format!("summarizing {}", p.name()))?;
        parameters.insert(p.name().to_string(), s);
    }
    let mu0: Vec<f64> = chains.iter().flat_map(|c| c.column(Param::Mu0)).collect();
    let xi0: Vec<f64> = chains.iter().flat_map(|c| c.column(Param::Xi0)).collect();
    let mut frac = contagion_fraction(&mu0, &xi0);
    frac.sort_by(f64::total_cmp);
    let fold = |f: fn(&Summary) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        parameters.values().map(f).fold(init, pick)
    };
    Ok(SummaryFile {
        config_hash: String::new(),
        chains: chains.len(),
        draws_per_chain: chains.iter().map(|c| c.draws.len()).collect(),
        contagion_fraction: Interval {
            median: quantile_sorted(&frac, 0.5),
            q025: quantile_sorted(&frac, 0.025),
            q975: quantile_sorted(&frac, 0.975),
        },
        max_rhat: fold(|s| s.rhat, f64::NEG_INFINITY, f64::max),
        min_ess_bulk: fold(|s| s.ess_bulk, f64::INFINITY, f64::min),
        min_ess_tail: fold(|s| s.ess_tail, f64::INFINITY, f64::min),
        parameters,
    })
}

fn diagnose_dir(dir: &Path, chains: usize) -> anyhow::Result<SummaryFile> {
    summarize_draws(&read_chains(dir, chains)?)
}

fn print_summary(s: &SummaryFile) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<8} {:>12} {:>12} {:>12} {:>12} {:>8} {:>9} {:>9}",
        "param", "median", "q2.5", "q97.5", "mean", "rhat", "ess_bulk", "ess_tail"
    );
    for p in Param::ALL {
        let r = &s.parameters[p.name()];
        let _ = writeln!(
            out,
            "{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>8.4} {:>9.1} {:>9.1}",
            p.name(),
            r.median,
            r.q025,
            r.q975,
            r.mean,
            r.rhat,
            r.ess_bulk,
            r.ess_tail
        );
    }
    let c = &s.contagion_fraction;
    let _ = writeln!(
        out,
        "contagion fraction {:.4} ({:.4}, {:.4}); max rhat {:.4}; min bulk ESS {:.1}; min tail ESS {:.1}",
        c.median, c.q025, c.q975, s.max_rhat, s.min_ess_bulk, s.min_ess_tail
    );
}

pub fn diagnose(cfg: &RunConfig, chains_dir: Option<&Path>) -> anyhow::Result<()> {
    let dir = chains_dir.unwrap_or(&cfg.out);
    let n = count_chains(dir);
    if n == 0 {
        bail!("no chain_0.csv in {}", dir.display());
    }
    let report = diagnose_dir(dir, n)?;
    ensure_out(&cfg.out)?;
    write_json(&cfg.out.join("summary.json"), &report)?;
    print_summary(&report);
    Ok(())
}

pub fn lengthscales(cfg: &RunConfig, chains_dir: Option<&Path>) -> anyhow::Result<()> {
    let dir = chains_dir.unwrap_or(&cfg.out);
    let counties_path = cfg.lengthscales.counties.as_deref().ok_or_else(|| {
        config_error("no county file given (--counties or lengthscales.counties)")
    })?;
    let n = count_chains(dir);
    if n == 0 {
        return Err(anyhow!(
            "no fitted chains (chain_0.csv) in {}",
            dir.display()
        ));
    }
    let sigma_x: Vec<f64> = read_chains(dir, n)?
        .iter()
        .flat_map(|c| c.column(Param::SigmaX))
        .collect();
    let counties = load_counties(counties_path)?;
    let rows = lengthscale_table(
        &sigma_x,
        cfg.variant,
        &counties,
        cfg.lengthscales.scaling,
        cfg.lengthscales.convention,
    )?;
    ensure_out(&cfg.out)?;
    write_json(&cfg.out.join("lengthscales.json"), &rows)?;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{:<32} {:>8} {:>12} {:>10} {:>10} {:>10}",
        "county", "lat", "density", "median_mi", "q2.5_mi", "q97.5_mi"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{:<32} {:>8.2} {:>12.2} {:>10.3} {:>10.3} {:>10.3}",
            r.name, r.lat, r.density, r.median_miles, r.lower_miles, r.upper_miles
        )?;
    }
    Ok(())
}
