//! Convergence diagnostics for multi-chain MCMC output: rank-normalized
//! split R-hat, bulk and tail effective sample size, and posterior summaries.
//!
//! Chains are given as equal-length slices of draws for one scalar quantity.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geo::{
    effective_lengthscale_degrees, lengthscale_to_miles, DensityScaling, MileConvention,
};
use crate::model::KernelVariant;

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Equal-tailed credible interval at `level` (e.g. 0.95).
pub fn credible_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    (quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var_unbiased(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Biased autocovariance `c_k = (1/n) sum_i (x_i - m)(x_{i+k} - m)` for
/// `k = 0..n`, computed with a zero-padded FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let m = mean(x);
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / (len as f64 * n as f64);
    buf[..n].iter().map(|c| c.re * scale).collect()
}

fn check_chains<C: AsRef<[f64]>>(chains: &[C], min_draws: usize) -> Result<usize> {
    let first = chains
        .first()
        .ok_or_else(|| Error::Diagnostics("no chains".into()))?
        .as_ref()
        .len();
    if chains.iter().any(|c| c.as_ref().len() != first) {
        return Err(Error::Diagnostics("chains have different lengths".into()));
    }
    if first < min_draws {
        return Err(Error::Diagnostics(format!(
            "need at least {min_draws} draws per chain, got {first}"
        )));
    }
    if chains
        .iter()
        .any(|c| c.as_ref().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Diagnostics("non-finite draw".into()));
    }
    Ok(first)
}

/// Splits every chain into its first and last `floor(n/2)` draws (dropping
/// the middle draw when `n` is odd).
pub fn split_chains<C: AsRef<[f64]>>(chains: &[C]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = c.as_ref();
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Replaces every draw by the normal score of its pooled rank (average ranks
/// for ties, offset `(r - 3/8) / (S + 1/4)`).
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize)> = chains
        .iter()
        .flatten()
        .copied()
        .enumerate()
        .map(|(k, v)| (v, k))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len();
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i + 1;
        while j < s && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            ranks[item.1] = avg;
        }
        i = j;
    }
    let normal = Normal::standard();
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25)))
        .collect();
    let n = chains.first().map_or(0, Vec::len);
    z.chunks(n.max(1)).map(<[f64]>::to_vec).collect()
}

/// Classic potential scale reduction of already-prepared chains.
/// Infinite when every chain is constant but the chains disagree.
pub fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let between = n * var_unbiased(&means);
    let within = mean(&chains.iter().map(|c| var_unbiased(c)).collect::<Vec<_>>());
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    ((between / within + n - 1.0) / n).sqrt()
}

/// Effective sample size of already-prepared chains using Geyer's initial
/// positive and initial monotone sequence estimators. Zero for constant input.
pub fn basic_ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let mean_acov = |k: usize| acov.iter().map(|a| a[k]).sum::<f64>() / m as f64;
    let nf = n as f64;
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
        var_plus += var_unbiased(&means);
    }
    if var_plus <= 0.0 {
        return 0.0;
    }
    let rho = |k: usize| 1.0 - (mean_var - mean_acov(k)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[0] = even;
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 3 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    // index of the last kept autocorrelation; -1 when none beyond lag 0 kept
    let max_t = t as isize - 2;
    let next = (max_t + 1) as usize;
    if even > 0.0 {
        rho_hat[next] = even;
    }
    let mut t = 1;
    while (t as isize) <= max_t - 2 {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = 0.5 * (rho_hat[t - 1] + rho_hat[t]);
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..next].iter().sum::<f64>() + rho_hat[next];
    total / tau.max(1.0 / total.log10())
}

fn all_equal<C: AsRef<[f64]>>(chains: &[C]) -> bool {
    let first = chains[0].as_ref()[0];
    chains
        .iter()
        .all(|c| c.as_ref().iter().all(|&v| v == first))
}

/// R-hat of the rank-normalized split chains, without the folded component.
pub fn rhat_bulk<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    check_chains(chains, 4)?;
    if all_equal(chains) {
        return Ok(1.0);
    }
    Ok(basic_rhat(&rank_normalize(&split_chains(chains))))
}

/// Rank-normalized split R-hat: the larger of the values for the draws and
/// for their absolute deviations from the pooled median. Exactly 1 for
/// constant input.
pub fn rhat<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    check_chains(chains, 4)?;
    if all_equal(chains) {
        return Ok(1.0);
    }
    let split = split_chains(chains);
    let bulk = basic_rhat(&rank_normalize(&split));
    let pooled: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.as_ref().iter().copied())
        .collect();
    let med = quantile(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    Ok(bulk.max(tail))
}

/// Bulk ESS: ESS of the rank-normalized split chains. Zero for constant input.
pub fn ess_bulk<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    check_chains(chains, 4)?;
    if all_equal(chains) {
        return Ok(0.0);
    }
    Ok(basic_ess(&rank_normalize(&split_chains(chains))))
}

/// Tail ESS: the smaller ESS of the indicators `x <= q05` and `x <= q95`.
pub fn ess_tail<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    check_chains(chains, 4)?;
    if all_equal(chains) {
        return Ok(0.0);
    }
    let pooled: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.as_ref().iter().copied())
        .collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let ess_at = |p: f64| {
        let q = quantile_sorted(&sorted, p);
        let ind: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| {
                c.as_ref()
                    .iter()
                    .map(|&v| f64::from(u8::from(v <= q)))
                    .collect()
            })
            .collect();
        basic_ess(&split_chains(&ind))
    };
    Ok(ess_at(0.05).min(ess_at(0.95)))
}

/// ESS for the mean: ESS of the raw split chains.
pub fn ess_mean<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    check_chains(chains, 4)?;
    if all_equal(chains) {
        return Ok(0.0);
    }
    Ok(basic_ess(&split_chains(chains)))
}

/// Share of events attributed to self-excitation, `xi0 / (xi0 + mu0)`, for
/// each paired draw.
pub fn contagion_fraction(mu0: &[f64], xi0: &[f64]) -> Vec<f64> {
    assert_eq!(mu0.len(), xi0.len(), "draws must be paired");
    mu0.iter().zip(xi0).map(|(m, x)| x / (x + m)).collect()
}

/// A place at which to report the effective triggering lengthscale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct County {
    pub name: String,
    pub lat: f64,
    pub density: f64,
}

/// Posterior median and 95% interval of a county's lengthscale in miles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleRow {
    pub name: String,
    pub lat: f64,
    pub density: f64,
    pub median_miles: f64,
    pub lower_miles: f64,
    pub upper_miles: f64,
}

/// Converts spatial lengthscale draws (degrees) into per-county miles.
pub fn lengthscale_table(
    sigma_x_draws: &[f64],
    variant: KernelVariant,
    counties: &[County],
    scaling: DensityScaling,
    convention: MileConvention,
) -> Result<Vec<LengthscaleRow>> {
    if sigma_x_draws.is_empty() && !counties.is_empty() {
        return Err(Error::Diagnostics("no lengthscale draws".into()));
    }
    counties
        .iter()
        .map(|c| {
            let mut miles = sigma_x_draws
                .iter()
                .map(|&s| {
                    let deg = effective_lengthscale_degrees(s, variant, c.density, scaling);
                    lengthscale_to_miles(deg, c.lat, convention)
                })
                .collect::<Result<Vec<_>>>()?;
            miles.sort_by(f64::total_cmp);
            Ok(LengthscaleRow {
                name: c.name.clone(),
                lat: c.lat,
                density: c.density,
                median_miles: quantile_sorted(&miles, 0.5),
                lower_miles: quantile_sorted(&miles, 0.025),
                upper_miles: quantile_sorted(&miles, 0.975),
            })
        })
        .collect()
}

/// Posterior summary of one scalar quantity across chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    /// Monte Carlo standard error of the mean.
    pub mcse_mean: f64,
    pub q025: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    /// Every draw identical; R-hat and ESS carry conventional values.
    pub degenerate: bool,
}

pub fn summarize<C: AsRef<[f64]>>(chains: &[C]) -> Result<Summary> {
    check_chains(chains, 4)?;
    let mut pooled: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.as_ref().iter().copied())
        .collect();
    let m = mean(&pooled);
    let sd = var_unbiased(&pooled).sqrt();
    pooled.sort_by(f64::total_cmp);
    let ess_m = ess_mean(chains)?;
    Ok(Summary {
        mean: m,
        sd,
        mcse_mean: if ess_m > 0.0 { sd / ess_m.sqrt() } else { 0.0 },
        q025: quantile_sorted(&pooled, 0.025),
        q05: quantile_sorted(&pooled, 0.05),
        median: quantile_sorted(&pooled, 0.5),
        q95: quantile_sorted(&pooled, 0.95),
        q975: quantile_sorted(&pooled, 0.975),
        rhat: rhat(chains)?,
        ess_bulk: ess_bulk(chains)?,
        ess_tail: ess_tail(chains)?,
        degenerate: all_equal(chains),
    })
}
