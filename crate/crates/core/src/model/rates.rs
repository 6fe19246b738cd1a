use std::f64::consts::PI;

use super::math::{gaussian_cdf, gaussian_pdf};
use super::{HawkesParams, KernelVariant, Location};

/// Rate contributed by `source` at `target`: the background kernel term
/// (skipped for equal times) plus the triggering term (only when the source
/// strictly precedes the target).
///
/// `source_density` only matters for [`KernelVariant::Varying`].
pub fn pair_rate(
    params: &HawkesParams,
    (source_t, source_loc, source_density): (f64, Location, f64),
    (target_t, target_loc): (f64, Location),
) -> f64 {
    let dt = target_t - source_t;
    let mut rate = 0.0;
    if dt != 0.0 {
        rate += params.mu0 / params.area * gaussian_pdf(dt / params.tau_t) / params.tau_t;
    }
    if dt > 0.0 {
        let scale = match params.variant {
            KernelVariant::Constant => params.sigma_x,
            KernelVariant::Varying => params.sigma_x / source_density.sqrt(),
        };
        let d2 = target_loc.distance_sq(&source_loc);
        let spatial = (-0.5 * d2 / (scale * scale)).exp() / (2.0 * PI * scale * scale);
        rate += params.xi0 / params.sigma_t * (-dt / params.sigma_t).exp() * spatial;
    }
    rate
}

/// Compensator share of an event at `t_n` over `(0, t_last]`.
///
/// Panics if `t_n > t_last`.
pub fn integral_term(params: &HawkesParams, t_n: f64, t_last: f64) -> f64 {
    assert!(
        t_n <= t_last,
        "integral_term: t_n ({t_n}) > t_last ({t_last})"
    );
    let background = params.mu0
        * (gaussian_cdf((t_last - t_n) / params.tau_t) - gaussian_cdf(-t_n / params.tau_t));
    let triggering = -params.xi0 * ((-(t_last - t_n) / params.sigma_t).exp() - 1.0);
    background + triggering
}
