//! Per-event log-likelihood contribution.
//!
//! For target event `i` the rates `lambda_ij` are accumulated into 256
//! interleaved lanes (lane `j mod 256`, ascending `j`), the largest lane sum is
//! factored out, the normalized lanes are summed with a pairwise tree and the
//! log is reassembled as `log(max) + log(normalized sum)`. The inner sum is
//! floored at `1e-40` before the log in both precisions.
//!
//! `exp(-x)` is evaluated branch-free and returns exactly zero for `x` above
//! `Real::EXP_ZERO_ABOVE`. Terms outside the time windows from binary searches
//! over the sorted event times all have such exponents, so skipping them
//! leaves every bit of the result unchanged.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::ops::Range;

use num_traits::Float;

use super::exp::{exp_neg_f32, exp_neg_f64};
use super::rates::integral_term;
use super::{Catalog, EventView, HawkesParams, KernelVariant, Location};
use crate::error::Result;

/// Number of interleaved partial sums per event.
pub const LANES: usize = 256;

/// Floor applied to the inner rate sum before taking its log.
pub const CLIP_FLOOR: f64 = 1e-40;

/// Floating-point type the likelihood kernel can run in.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    /// `exp(-x)` is exactly zero for every `x` above this value.
    const EXP_ZERO_ABOVE: f64;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// `exp(-self)` for `self >= 0`, exactly zero above `EXP_ZERO_ABOVE`.
    fn exp_neg(self) -> Self;
}

impl Real for f32 {
    const EXP_ZERO_ABOVE: f64 = 110.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn exp_neg(self) -> Self {
        exp_neg_f32(self, Self::EXP_ZERO_ABOVE as f32)
    }
}

impl Real for f64 {
    const EXP_ZERO_ABOVE: f64 = 750.0;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn exp_neg(self) -> Self {
        exp_neg_f64(self, Self::EXP_ZERO_ABOVE)
    }
}

/// Event columns converted to the working precision.
#[derive(Debug, Clone)]
pub struct PreparedEvents<T> {
    times: Vec<T>,
    lon: Vec<T>,
    lat: Vec<T>,
    densities: Vec<T>,
    // [tie_lo[i], tie_hi[i]) holds every event whose time equals times[i]
    tie_lo: Vec<usize>,
    tie_hi: Vec<usize>,
    times_f64: Vec<f64>,
}

impl<T: Real> PreparedEvents<T> {
    pub fn new(view: &EventView<'_>) -> Self {
        let times: Vec<T> = view.times.iter().map(|&t| T::from_f64(t)).collect();
        let n = times.len();
        let mut tie_lo = vec![0; n];
        let mut tie_hi = vec![0; n];
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && times[end] == times[start] {
                end += 1;
            }
            for k in start..end {
                tie_lo[k] = start;
                tie_hi[k] = end;
            }
            start = end;
        }
        let mut out = Self {
            times,
            lon: Vec::new(),
            lat: Vec::new(),
            densities: view.densities.iter().map(|&d| T::from_f64(d)).collect(),
            tie_lo,
            tie_hi,
            times_f64: view.times.to_vec(),
        };
        out.set_locations(view.locations);
        out
    }

    pub fn set_locations(&mut self, locations: &[Location]) {
        assert_eq!(locations.len(), self.times.len(), "location count mismatch");
        self.lon = locations.iter().map(|l| T::from_f64(l.lon)).collect();
        self.lat = locations.iter().map(|l| T::from_f64(l.lat)).collect();
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times_f64(&self) -> &[f64] {
        &self.times_f64
    }

    pub fn last_time(&self) -> f64 {
        *self.times_f64.last().expect("nonempty")
    }

    /// First index `j` with `times[i] - times[j] <= reach`.
    fn first_within(&self, i: usize, reach: T) -> usize {
        let ti = self.times[i];
        self.times[..i].partition_point(|&t| ti - t > reach)
    }

    /// One past the last index `j` with `times[j] - times[i] <= reach`.
    fn last_within(&self, i: usize, reach: T) -> usize {
        let ti = self.times[i];
        i + self.times[i..].partition_point(|&t| t - ti <= reach)
    }
}

/// Parameter-derived constants in the working precision.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams<T> {
    /// `mu0 / (A tau_t sqrt(2 pi))`
    bg_coef: T,
    tau_prec: T,
    /// `xi0 / (2 pi sigma_x^2 sigma_t)`
    trig_coef: T,
    omega: T,
    /// `1 / (2 sigma_x^2)`
    half_sx_prec2: T,
    /// Largest `|dt|` with a nonzero background term.
    bg_reach: T,
    /// Largest `dt` with a nonzero triggering term.
    trig_reach: T,
    variant: KernelVariant,
    params: HawkesParams,
}

impl<T: Real> KernelParams<T> {
    pub fn new(p: &HawkesParams) -> Self {
        let cut = T::EXP_ZERO_ABOVE;
        Self {
            bg_coef: T::from_f64(p.mu0 / p.area / p.tau_t / (2.0 * PI).sqrt()),
            tau_prec: T::from_f64(1.0 / p.tau_t),
            trig_coef: T::from_f64(p.xi0 / (2.0 * PI * p.sigma_x * p.sigma_x * p.sigma_t)),
            omega: T::from_f64(1.0 / p.sigma_t),
            half_sx_prec2: T::from_f64(0.5 / (p.sigma_x * p.sigma_x)),
            bg_reach: reach::<T>((2.0 * cut).sqrt() * p.tau_t),
            trig_reach: reach::<T>(cut * p.sigma_t),
            variant: p.variant,
            params: *p,
        }
    }
}

// Windows are widened by a relative margin so rounding in the working
// precision can never drop a nonzero term.
fn reach<T: Real>(v: f64) -> T {
    let v = v * 1.01;
    if v.is_finite() {
        T::from_f64(v).min(T::max_value())
    } else {
        T::max_value()
    }
}

#[inline(always)]
fn background<T: Real>(kp: &KernelParams<T>, dt: T) -> T {
    let z = dt * kp.tau_prec;
    kp.bg_coef * (T::from_f64(0.5) * z * z).exp_neg()
}

#[inline(always)]
fn triggering<T: Real>(kp: &KernelParams<T>, dt: T, d2: T, w: T) -> T {
    kp.trig_coef * w * (kp.omega * dt + d2 * kp.half_sx_prec2 * w).exp_neg()
}

// Splits `range` into runs that do not wrap around the lane array, yielding
// (first lane, first index, length).
fn lane_runs(range: Range<usize>) -> impl Iterator<Item = (usize, usize, usize)> {
    let mut j = range.start;
    std::iter::from_fn(move || {
        if j >= range.end {
            return None;
        }
        let lane = j % LANES;
        let len = (LANES - lane).min(range.end - j);
        let run = (lane, j, len);
        j += len;
        Some(run)
    })
}

#[inline(always)]
fn add_background<T: Real>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    ti: T,
    range: Range<usize>,
    lanes: &mut [T; LANES],
) {
    for (lane, j, len) in lane_runs(range) {
        let out = &mut lanes[lane..lane + len];
        for (acc, &tj) in out.iter_mut().zip(&ev.times[j..j + len]) {
            *acc = *acc + background(kp, ti - tj);
        }
    }
}

#[inline(always)]
fn add_triggering<T: Real, const VARYING: bool>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    i: usize,
    range: Range<usize>,
    lanes: &mut [T; LANES],
) {
    let ti = ev.times[i];
    let (xi, yi) = (ev.lon[i], ev.lat[i]);
    for (lane, j, len) in lane_runs(range) {
        let out = &mut lanes[lane..lane + len];
        let sources = ev.times[j..j + len]
            .iter()
            .zip(&ev.lon[j..j + len])
            .zip(&ev.lat[j..j + len])
            .zip(&ev.densities[j..j + len]);
        for (acc, (((&tj, &xj), &yj), &dj)) in out.iter_mut().zip(sources) {
            let (dx, dy) = (xi - xj, yi - yj);
            let w = if VARYING { dj } else { T::one() };
            *acc = *acc + triggering(kp, ti - tj, dx * dx + dy * dy, w);
        }
    }
}

#[inline(always)]
fn add_background_sources<T: Real>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    i: usize,
    lanes: &mut [T; LANES],
) {
    let ti = ev.times[i];
    let bg_lo = ev.first_within(i, kp.bg_reach);
    let bg_hi = ev.last_within(i, kp.bg_reach).max(ev.tie_hi[i]);
    add_background(ev, kp, ti, bg_lo..ev.tie_lo[i], lanes);
    add_background(ev, kp, ti, ev.tie_hi[i]..bg_hi, lanes);
}

#[inline(always)]
fn add_triggering_sources<T: Real>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    i: usize,
    lanes: &mut [T; LANES],
) {
    let range = ev.first_within(i, kp.trig_reach)..ev.tie_lo[i];
    match kp.variant {
        KernelVariant::Constant => add_triggering::<T, false>(ev, kp, i, range, lanes),
        KernelVariant::Varying => add_triggering::<T, true>(ev, kp, i, range, lanes),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sources {
    All,
    Background,
    Triggering,
}

#[inline(always)]
fn fill_lanes_portable<T: Real>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    i: usize,
    sources: Sources,
    lanes: &mut [T; LANES],
) {
    if sources != Sources::Triggering {
        add_background_sources(ev, kp, i, lanes);
    }
    if sources != Sources::Background {
        add_triggering_sources(ev, kp, i, lanes);
    }
}

// The same loops compiled for wider vector units. Only the vector width
// changes: no operation is fused or reordered, so the bits are identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn fill_lanes_avx512<T: Real>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    i: usize,
    sources: Sources,
    lanes: &mut [T; LANES],
) {
    fill_lanes_portable(ev, kp, i, sources, lanes)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_lanes_avx2<T: Real>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    i: usize,
    sources: Sources,
    lanes: &mut [T; LANES],
) {
    fill_lanes_portable(ev, kp, i, sources, lanes)
}

fn fill_lanes<T: Real>(
    ev: &PreparedEvents<T>,
    kp: &KernelParams<T>,
    i: usize,
    sources: Sources,
    lanes: &mut [T; LANES],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at run time
            return unsafe { fill_lanes_avx512(ev, kp, i, sources, lanes) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at run time
            return unsafe { fill_lanes_avx2(ev, kp, i, sources, lanes) };
        }
    }
    fill_lanes_portable(ev, kp, i, sources, lanes)
}

fn tree_sum<T: Real>(lanes: &mut [T; LANES]) -> T {
    let mut stride = 1;
    while stride < LANES {
        let mut lid = 0;
        while lid < LANES {
            lanes[lid] = lanes[lid] + lanes[lid + stride];
            lid += 2 * stride;
        }
        stride <<= 1;
    }
    lanes[0]
}

/// `log(max(sum_j lambda_ij, 1e-40))` for target `i`, via the lane reduction.
pub fn log_rate_sum<T: Real>(ev: &PreparedEvents<T>, kp: &KernelParams<T>, i: usize) -> T {
    let mut lanes = [T::zero(); LANES];
    fill_lanes(ev, kp, i, Sources::All, &mut lanes);
    let clip = T::from_f64(CLIP_FLOOR);
    let largest = lanes.iter().copied().fold(T::zero(), T::max);
    let maximum = largest.max(clip);
    for v in lanes.iter_mut() {
        *v = *v / maximum;
    }
    (maximum.ln() + tree_sum(&mut lanes).ln()).max(clip.ln())
}

/// `l_i` in the working precision.
pub fn contribution<T: Real>(ev: &PreparedEvents<T>, kp: &KernelParams<T>, i: usize) -> T {
    let lambda_i = integral_term(&kp.params, ev.times_f64[i], ev.last_time());
    log_rate_sum(ev, kp, i) - T::from_f64(lambda_i)
}

/// Unweighted background kernel sum `sum_{t_j != t_i} phi((t_i - t_j)/tau) / tau`
/// for target `i`. Multiply by `mu0 / A` to get the background rate.
pub fn background_kernel_sum<T: Real>(ev: &PreparedEvents<T>, tau_t: f64, i: usize) -> T {
    let p = HawkesParams {
        mu0: 1.0,
        tau_t,
        xi0: 1.0,
        sigma_x: 1.0,
        sigma_t: 1.0,
        area: 1.0,
        variant: KernelVariant::Constant,
    };
    let mut lanes = [T::zero(); LANES];
    fill_lanes(ev, &KernelParams::new(&p), i, Sources::Background, &mut lanes);
    tree_sum(&mut lanes)
}

/// Unweighted triggering sum for target `i`; multiply by `xi0` for the rate.
pub fn triggering_kernel_sum<T: Real>(
    ev: &PreparedEvents<T>,
    sigma_x: f64,
    sigma_t: f64,
    variant: KernelVariant,
    i: usize,
) -> T {
    let p = HawkesParams {
        mu0: 1.0,
        tau_t: 1.0,
        xi0: 1.0,
        sigma_x,
        sigma_t,
        area: 1.0,
        variant,
    };
    let mut lanes = [T::zero(); LANES];
    fill_lanes(ev, &KernelParams::new(&p), i, Sources::Triggering, &mut lanes);
    tree_sum(&mut lanes)
}

/// Double-precision `l_n` for one event of a located catalog.
pub fn event_contribution(params: &HawkesParams, catalog: &Catalog, n: usize) -> Result<f64> {
    let view = catalog.view()?;
    assert!(n < view.len(), "event index {n} out of range");
    let ev = PreparedEvents::<f64>::new(&view);
    Ok(contribution(&ev, &KernelParams::new(params), n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pair_rate, Event};

    fn catalog(points: &[(f64, f64, f64)]) -> Catalog {
        let events = points
            .iter()
            .enumerate()
            .map(|(k, &(t, x, y))| Event::new(k.to_string(), t, Location::new(x, y)))
            .collect();
        Catalog::new(events).unwrap()
    }

    fn unit() -> HawkesParams {
        HawkesParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, KernelVariant::Constant).unwrap()
    }

    #[test]
    fn exp_cutoffs_underflow_to_zero() {
        assert_eq!((-f64::EXP_ZERO_ABOVE).exp(), 0.0);
        assert_eq!((-(f32::EXP_ZERO_ABOVE as f32)).exp(), 0.0);
        assert_eq!(f64::EXP_ZERO_ABOVE.exp_neg(), 0.0);
        assert_eq!((f32::EXP_ZERO_ABOVE as f32).exp_neg(), 0.0);
    }

    #[test]
    fn single_event_hits_clip_floor() {
        let c = catalog(&[(0.0, 0.0, 0.0)]);
        let l = event_contribution(&unit(), &c, 0).unwrap();
        assert!((l - (-92.103_403_719_761_83)).abs() < 1e-12, "{l}");
        let ev = PreparedEvents::<f32>::new(&c.view().unwrap());
        let l32 = contribution(&ev, &KernelParams::new(&unit()), 0);
        assert!(l32.is_finite() && (l32 as f64 + 92.1034).abs() < 1e-3);
    }

    #[test]
    fn two_events_match_direct_sum() {
        let c = catalog(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let p = unit();
        let l = event_contribution(&p, &c, 1).unwrap();
        let s = pair_rate(
            &p,
            (0.0, Location::new(0.0, 0.0), 1.0),
            (1.0, Location::new(0.0, 0.0)),
        );
        let expected = s.ln() - integral_term(&p, 1.0, 1.0);
        assert!(((l - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn far_apart_events_hit_floor_exactly() {
        let c = catalog(&[(0.0, 0.0, 0.0), (1e6, 50.0, 50.0), (2e6, -50.0, 0.0)]);
        let p = unit();
        for n in 0..3 {
            let l = event_contribution(&p, &c, n).unwrap();
            let expected = CLIP_FLOOR.ln() - integral_term(&p, c.times()[n], 2e6);
            assert_eq!(l, expected);
        }
    }

    #[test]
    fn ties_contribute_nothing() {
        let c = catalog(&[(1.0, 0.0, 0.0), (1.0, 0.0, 0.0), (1.0, 0.5, 0.5)]);
        let l = event_contribution(&unit(), &c, 2).unwrap();
        assert_eq!(l + integral_term(&unit(), 1.0, 1.0), CLIP_FLOOR.ln());
    }

    #[test]
    fn component_sums_rebuild_rate() {
        let c = catalog(&[
            (0.0, 0.0, 0.0),
            (0.5, 0.1, -0.2),
            (0.5, 0.3, 0.1),
            (1.5, -0.4, 0.2),
            (3.0, 0.0, 0.7),
        ]);
        let p = HawkesParams::new(0.7, 1.3, 0.4, 0.6, 0.9, 2.0, KernelVariant::Constant).unwrap();
        let ev = PreparedEvents::<f64>::new(&c.view().unwrap());
        let kp = KernelParams::new(&p);
        for i in 0..c.len() {
            let b = background_kernel_sum(&ev, p.tau_t, i);
            let k = triggering_kernel_sum(&ev, p.sigma_x, p.sigma_t, p.variant, i);
            let s: f64 = p.mu0 / p.area * b + p.xi0 * k;
            let direct = log_rate_sum(&ev, &kp, i);
            assert!((s.max(CLIP_FLOOR).ln() - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn vector_paths_match_portable_bits() {
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut points: Vec<(f64, f64, f64)> =
            (0..700).map(|_| (next() * 50.0, next(), next())).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let c = catalog(&points);
        for variant in [KernelVariant::Constant, KernelVariant::Varying] {
            let p = HawkesParams::new(0.7, 0.8, 0.4, 0.05, 0.9, 1.0, variant).unwrap();
            let ev = PreparedEvents::<f64>::new(&c.view().unwrap());
            let ev32 = PreparedEvents::<f32>::new(&c.view().unwrap());
            for i in (0..c.len()).step_by(7) {
                let (mut a, mut b) = ([0.0; LANES], [0.0; LANES]);
                fill_lanes(&ev, &KernelParams::new(&p), i, Sources::All, &mut a);
                fill_lanes_portable(&ev, &KernelParams::new(&p), i, Sources::All, &mut b);
                assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
                let (mut a, mut b) = ([0.0f32; LANES], [0.0f32; LANES]);
                fill_lanes(&ev32, &KernelParams::new(&p), i, Sources::All, &mut a);
                fill_lanes_portable(&ev32, &KernelParams::new(&p), i, Sources::All, &mut b);
                assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}
