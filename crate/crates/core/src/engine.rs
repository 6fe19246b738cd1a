//! Partitioned, multi-threaded evaluation of the total log-likelihood.
//!
//! Events are split into `G` contiguous index ranges, one per worker. Each
//! worker sums its contributions in ascending event order (in `f64`), and the
//! per-worker sums are reduced in ascending worker order on the calling
//! thread, so the result depends only on the partition and never on
//! scheduling.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    background_kernel_sum, contribution, integral_term, triggering_kernel_sum, EventView,
    HawkesParams, KernelParams, KernelVariant, Location, PreparedEvents, Real, CLIP_FLOOR,
};

/// Contiguous assignment of event indices to workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    ranges: Vec<Range<usize>>,
}

impl Partition {
    /// Splits `0..n` into `workers` ranges whose sizes differ by at most one;
    /// the lowest-numbered workers take the remainder.
    pub fn new(n: usize, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidPartition(
                "worker count must be at least 1".into(),
            ));
        }
        if workers > n {
            return Err(Error::InvalidPartition(format!(
                "{workers} workers for {n} events leaves a worker empty"
            )));
        }
        let (base, extra) = (n / workers, n % workers);
        let mut start = 0;
        let ranges = (0..workers)
            .map(|g| {
                let len = base + usize::from(g < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Ok(Self { ranges })
    }

    /// Largest valid partition not exceeding `workers`.
    pub fn clamped(n: usize, workers: usize) -> Result<Self> {
        Self::new(n, workers.min(n).max(1))
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn workers(&self) -> usize {
        self.ranges.len()
    }

    /// Number of events covered.
    pub fn events(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// Runs `f` once per range, each on its own scoped thread, and returns the
    /// results in worker order. A single range runs on the calling thread.
    pub fn map<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(Range<usize>) -> R + Sync,
    {
        if self.ranges.len() == 1 {
            return vec![f(self.ranges[0].clone())];
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = self
                .ranges
                .iter()
                .map(|r| {
                    let r = r.clone();
                    let f = &f;
                    s.spawn(move || f(r))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("likelihood worker panicked"))
                .collect()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Self::Single),
            "double" | "f64" => Ok(Self::Double),
            other => Err(Error::Config(format!("unknown precision '{other}'"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Double => "double",
        })
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Single(PreparedEvents<f32>),
    Double(PreparedEvents<f64>),
}

/// Event data converted once to the working precision, plus a partition.
#[derive(Debug, Clone)]
pub struct LikelihoodEngine {
    data: Prepared,
    partition: Partition,
}

fn slice_sum<T: Real>(ev: &PreparedEvents<T>, kp: &KernelParams<T>, r: Range<usize>) -> f64 {
    r.map(|i| contribution(ev, kp, i).to_f64()).sum()
}

impl LikelihoodEngine {
    pub fn new(view: &EventView<'_>, partition: Partition, precision: Precision) -> Result<Self> {
        if partition.events() != view.len() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} events but the catalog has {}",
                partition.events(),
                view.len()
            )));
        }
        let data = match precision {
            Precision::Single => Prepared::Single(PreparedEvents::new(view)),
            Precision::Double => Prepared::Double(PreparedEvents::new(view)),
        };
        Ok(Self { data, partition })
    }

    /// Engine with `workers` threads (clamped to the event count).
    pub fn with_workers(
        view: &EventView<'_>,
        workers: usize,
        precision: Precision,
    ) -> Result<Self> {
        Self::new(view, Partition::clamped(view.len(), workers)?, precision)
    }

    pub fn precision(&self) -> Precision {
        match self.data {
            Prepared::Single(_) => Precision::Single,
            Prepared::Double(_) => Precision::Double,
        }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.partition.events()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces event locations (e.g. after resampling from regions).
    pub fn set_locations(&mut self, locations: &[Location]) {
        match &mut self.data {
            Prepared::Single(ev) => ev.set_locations(locations),
            Prepared::Double(ev) => ev.set_locations(locations),
        }
    }

    pub fn log_likelihood(&self, params: &HawkesParams) -> f64 {
        let parts = match &self.data {
            Prepared::Single(ev) => {
                let kp = KernelParams::<f32>::new(params);
                self.partition.map(|r| slice_sum(ev, &kp, r))
            }
            Prepared::Double(ev) => {
                let kp = KernelParams::<f64>::new(params);
                self.partition.map(|r| slice_sum(ev, &kp, r))
            }
        };
        parts.into_iter().sum()
    }

    /// Every `l_n`, in event order.
    pub fn contributions(&self, params: &HawkesParams) -> Vec<f64> {
        fn run<T: Real>(p: &Partition, ev: &PreparedEvents<T>, params: &HawkesParams) -> Vec<f64> {
            let kp = KernelParams::<T>::new(params);
            p.map(|r| {
                r.map(|i| contribution(ev, &kp, i).to_f64())
                    .collect::<Vec<_>>()
            })
            .concat()
        }
        match &self.data {
            Prepared::Single(ev) => run(&self.partition, ev, params),
            Prepared::Double(ev) => run(&self.partition, ev, params),
        }
    }

    /// Unweighted background kernel sums for every event.
    pub fn background_sums(&self, tau_t: f64) -> Vec<f64> {
        self.component_sums(|ev, i| ev.background(tau_t, i))
    }

    /// Unweighted triggering kernel sums for every event.
    pub fn triggering_sums(&self, sigma_x: f64, sigma_t: f64, variant: KernelVariant) -> Vec<f64> {
        self.component_sums(|ev, i| ev.triggering(sigma_x, sigma_t, variant, i))
    }

    fn component_sums<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&dyn ComponentSource, usize) -> f64 + Sync,
    {
        let ev: &(dyn ComponentSource + Sync) = match &self.data {
            Prepared::Single(ev) => ev,
            Prepared::Double(ev) => ev,
        };
        self.partition
            .map(|r| r.map(|i| f(ev, i)).collect::<Vec<_>>())
            .concat()
    }

    /// Total log-likelihood assembled from precomputed kernel sums:
    /// `sum_n log(max(mu0/A * B_n + xi0 * K_n, 1e-40)) - Lambda_n`.
    pub fn factored_log_likelihood(
        &self,
        params: &HawkesParams,
        background: &[f64],
        triggering: &[f64],
    ) -> f64 {
        let times = match &self.data {
            Prepared::Single(ev) => ev.times_f64(),
            Prepared::Double(ev) => ev.times_f64(),
        };
        factored_log_likelihood(params, times, background, triggering)
    }
}

/// See [`LikelihoodEngine::factored_log_likelihood`].
pub fn factored_log_likelihood(
    params: &HawkesParams,
    times: &[f64],
    background: &[f64],
    triggering: &[f64],
) -> f64 {
    assert_eq!(times.len(), background.len());
    assert_eq!(times.len(), triggering.len());
    let t_last = *times.last().expect("nonempty");
    let bg_w = params.mu0 / params.area;
    let mut total = 0.0;
    for n in 0..times.len() {
        let s = bg_w * background[n] + params.xi0 * triggering[n];
        total += s.max(CLIP_FLOOR).ln() - integral_term(params, times[n], t_last);
    }
    total
}

trait ComponentSource {
    fn background(&self, tau_t: f64, i: usize) -> f64;
    fn triggering(&self, sigma_x: f64, sigma_t: f64, variant: KernelVariant, i: usize) -> f64;
}

impl<T: Real> ComponentSource for PreparedEvents<T> {
    fn background(&self, tau_t: f64, i: usize) -> f64 {
        background_kernel_sum(self, tau_t, i).to_f64()
    }

    fn triggering(&self, sigma_x: f64, sigma_t: f64, variant: KernelVariant, i: usize) -> f64 {
        triggering_kernel_sum(self, sigma_x, sigma_t, variant, i).to_f64()
    }
}

/// Total log-likelihood of a located catalog view.
pub fn log_likelihood(
    view: &EventView<'_>,
    params: &HawkesParams,
    partition: &Partition,
    precision: Precision,
) -> Result<f64> {
    params.validate()?;
    let engine = LikelihoodEngine::new(view, partition.clone(), precision)?;
    Ok(engine.log_likelihood(params))
}

/// One row of a timing table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "G")]
    pub workers: usize,
    pub precision: Precision,
    pub variant: KernelVariant,
    pub seconds_median: f64,
    pub seconds_min: f64,
}

/// Times `repeats` full evaluations after one discarded warm-up.
pub fn time_evaluation(
    view: &EventView<'_>,
    params: &HawkesParams,
    workers: usize,
    precision: Precision,
    repeats: usize,
) -> Result<BenchRow> {
    if repeats == 0 {
        return Err(Error::Config("benchmark needs at least one repeat".into()));
    }
    let engine = LikelihoodEngine::new(view, Partition::new(view.len(), workers)?, precision)?;
    std::hint::black_box(engine.log_likelihood(params));
    let mut secs: Vec<f64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(engine.log_likelihood(std::hint::black_box(params)));
            start.elapsed().as_secs_f64()
        })
        .collect();
    secs.sort_by(f64::total_cmp);
    let mid = secs.len() / 2;
    let median = if secs.len() % 2 == 1 {
        secs[mid]
    } else {
        0.5 * (secs[mid - 1] + secs[mid])
    };
    Ok(BenchRow {
        n: view.len(),
        workers,
        precision,
        variant: params.variant,
        seconds_median: median,
        seconds_min: secs[0],
    })
}

/// Least-squares slope of `log(seconds_median)` against `log(N)`.
pub fn scaling_exponent(rows: &[BenchRow]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.seconds_median.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Prints a bench table as CSV to any writer.
pub fn write_bench_table<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Catalog, Event};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_catalog(n: usize, seed: u64) -> Catalog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = (0..n)
            .map(|k| {
                Event::new(
                    k.to_string(),
                    rng.random::<f64>() * 50.0,
                    Location::new(rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0),
                )
            })
            .collect();
        Catalog::from_unsorted(events).unwrap()
    }

    fn params() -> HawkesParams {
        HawkesParams::new(5.0, 10.0, 0.5, 0.1, 2.0, 4.0, KernelVariant::Constant).unwrap()
    }

    #[test]
    fn partition_shapes() {
        let p = Partition::new(10, 3).unwrap();
        assert_eq!(p.ranges(), &[0..4, 4..7, 7..10]);
        assert_eq!(Partition::new(5, 5).unwrap().ranges().len(), 5);
        assert!(Partition::new(5, 0).is_err());
        assert!(Partition::new(3, 4).is_err());
        assert_eq!(Partition::clamped(3, 8).unwrap().workers(), 3);
    }

    #[test]
    fn map_returns_in_worker_order() {
        let p = Partition::new(20, 4).unwrap();
        let starts = p.map(|r| r.start);
        assert_eq!(starts, vec![0, 5, 10, 15]);
    }

    #[test]
    fn worker_count_barely_changes_total() {
        let c = random_catalog(400, 1);
        let view = c.view().unwrap();
        let reference = log_likelihood(
            &view,
            &params(),
            &Partition::new(400, 1).unwrap(),
            Precision::Double,
        )
        .unwrap();
        for g in [2, 3, 4, 8] {
            let v = log_likelihood(
                &view,
                &params(),
                &Partition::new(400, g).unwrap(),
                Precision::Double,
            )
            .unwrap();
            assert!(((v - reference) / reference).abs() < 1e-12, "G={g}");
        }
    }

    #[test]
    fn repeated_evaluation_is_bitwise_stable() {
        let c = random_catalog(300, 2);
        let e = LikelihoodEngine::with_workers(&c.view().unwrap(), 4, Precision::Single).unwrap();
        let a = e.log_likelihood(&params());
        for _ in 0..5 {
            assert_eq!(e.log_likelihood(&params()).to_bits(), a.to_bits());
        }
    }

    #[test]
    fn single_event_hits_floor() {
        let c = Catalog::new(vec![Event::new("a", 0.0, Location::new(0.0, 0.0))]).unwrap();
        let p = params();
        let ll = log_likelihood(
            &c.view().unwrap(),
            &p,
            &Partition::new(1, 1).unwrap(),
            Precision::Double,
        )
        .unwrap();
        assert!((ll - (-92.10340371976183)).abs() < 1e-12);
    }

    #[test]
    fn contributions_sum_to_total() {
        let c = random_catalog(200, 3);
        let e = LikelihoodEngine::with_workers(&c.view().unwrap(), 3, Precision::Double).unwrap();
        let total: f64 = e.contributions(&params()).iter().sum();
        assert!((total - e.log_likelihood(&params())).abs() < 1e-9);
    }

    #[test]
    fn factored_matches_direct() {
        let c = random_catalog(250, 4);
        for variant in [KernelVariant::Constant, KernelVariant::Varying] {
            let dens: Vec<f64> = (0..250).map(|k| 1.0 + (k % 7) as f64).collect();
            let c = c.with_densities(dens).unwrap();
            let e =
                LikelihoodEngine::with_workers(&c.view().unwrap(), 2, Precision::Double).unwrap();
            let mut p = params();
            p.variant = variant;
            let b = e.background_sums(p.tau_t);
            let k = e.triggering_sums(p.sigma_x, p.sigma_t, variant);
            let f = e.factored_log_likelihood(&p, &b, &k);
            let d = e.log_likelihood(&p);
            assert!(((f - d) / d).abs() < 1e-12, "{variant:?}: {f} vs {d}");
        }
    }

    #[test]
    fn partition_mismatch_rejected() {
        let c = random_catalog(10, 5);
        let err = LikelihoodEngine::new(
            &c.view().unwrap(),
            Partition::new(9, 3).unwrap(),
            Precision::Double,
        );
        assert!(err.is_err());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let rows: Vec<BenchRow> = [100usize, 200, 400]
            .iter()
            .map(|&n| BenchRow {
                n,
                workers: 1,
                precision: Precision::Double,
                variant: KernelVariant::Constant,
                seconds_median: 3e-9 * (n as f64).powi(2),
                seconds_min: 0.0,
            })
            .collect();
        assert!((scaling_exponent(&rows).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bench_table_header() {
        let c = random_catalog(50, 6);
        let row = time_evaluation(&c.view().unwrap(), &params(), 2, Precision::Single, 3).unwrap();
        let mut buf = Vec::new();
        write_bench_table(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "N,G,precision,variant,seconds_median,seconds_min\n50,2,single,constant,"
        ));
    }
}
