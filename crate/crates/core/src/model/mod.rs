//! Model types and the per-event likelihood math.
//!
//! The rate of event `n` is a sum over every other event `n'` of a temporal
//! background kernel (spatially uniform over a domain of area `A`) and, for
//! strictly earlier events, an exponential-in-time, Gaussian-in-space
//! triggering kernel. The compensator splits into per-event integral terms, so
//! the log-likelihood is a sum of independent contributions `l_n`.

mod contribution;
mod exp;
mod math;
mod rates;

pub use contribution::{
    background_kernel_sum, contribution, event_contribution, log_rate_sum, triggering_kernel_sum,
    KernelParams, PreparedEvents, Real, CLIP_FLOOR, LANES,
};
pub use math::{gaussian_cdf, gaussian_pdf, log_sum_exp};
pub use rates::{integral_term, pair_rate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar location in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lon: f64,
    pub lat: f64,
}

impl Location {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn is_finite(&self) -> bool {
        self.lon.is_finite() && self.lat.is_finite()
    }

    pub fn distance_sq(&self, other: &Location) -> f64 {
        let dx = self.lon - other.lon;
        let dy = self.lat - other.lat;
        dx * dx + dy * dy
    }
}

/// A single observed case.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub id: String,
    /// Time in weeks.
    pub t: f64,
    /// Exact location, or `None` when only the region is known.
    pub location: Option<Location>,
    pub region_id: Option<String>,
    /// Persons per square mile.
    pub density: f64,
}

impl Event {
    pub fn new(id: impl Into<String>, t: f64, location: Location) -> Self {
        Self {
            id: id.into(),
            t,
            location: Some(location),
            region_id: None,
            density: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::InvalidCatalog(format!(
                "event {}: time {} must be finite and nonnegative",
                self.id, self.t
            )));
        }
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(Error::InvalidCatalog(format!(
                "event {}: density {} must be positive",
                self.id, self.density
            )));
        }
        if let Some(loc) = self.location {
            if !loc.is_finite() {
                return Err(Error::InvalidCatalog(format!(
                    "event {}: non-finite location",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Time-ordered, immutable set of events stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    ids: Vec<String>,
    times: Vec<f64>,
    locations: Option<Vec<Location>>,
    region_ids: Vec<Option<String>>,
    densities: Vec<f64>,
}

impl Catalog {
    /// Builds a catalog from events already sorted by time.
    pub fn new(events: Vec<Event>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::InvalidCatalog(
                "a catalog needs at least one event".into(),
            ));
        }
        for e in &events {
            e.validate()?;
        }
        if let Some(k) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::InvalidCatalog(format!(
                "events are not sorted by time (position {} has t={} after t={})",
                k + 1,
                events[k + 1].t,
                events[k].t
            )));
        }
        let located = events.iter().filter(|e| e.location.is_some()).count();
        if located != 0 && located != events.len() {
            return Err(Error::InvalidCatalog(
                "either every event or no event must carry a location".into(),
            ));
        }
        let n = events.len();
        let mut ids = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        let mut locations = Vec::with_capacity(if located > 0 { n } else { 0 });
        let mut region_ids = Vec::with_capacity(n);
        let mut densities = Vec::with_capacity(n);
        for e in events {
            ids.push(e.id);
            times.push(e.t);
            if let Some(loc) = e.location {
                locations.push(loc);
            }
            region_ids.push(e.region_id);
            densities.push(e.density);
        }
        Ok(Self {
            ids,
            times,
            locations: (located > 0).then_some(locations),
            region_ids,
            densities,
        })
    }

    /// Sorts by time (stable, so ties keep input order) and builds the catalog.
    pub fn from_unsorted(mut events: Vec<Event>) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| e.t.is_nan()) {
            return Err(Error::InvalidCatalog(format!(
                "event {}: time is NaN",
                e.id
            )));
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self::new(events)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("catalog is nonempty")
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn region_ids(&self) -> &[Option<String>] {
        &self.region_ids
    }

    /// True when exact coordinates are unknown and must be sampled.
    pub fn locations_pending(&self) -> bool {
        self.locations.is_none()
    }

    pub fn locations(&self) -> Result<&[Location]> {
        self.locations.as_deref().ok_or(Error::LocationsPending)
    }

    pub fn event(&self, n: usize) -> Event {
        Event {
            id: self.ids[n].clone(),
            t: self.times[n],
            location: self.locations.as_ref().map(|l| l[n]),
            region_id: self.region_ids[n].clone(),
            density: self.densities[n],
        }
    }

    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        (0..self.len()).map(|n| self.event(n))
    }

    pub fn view(&self) -> Result<EventView<'_>> {
        Ok(EventView {
            times: &self.times,
            locations: self.locations()?,
            densities: &self.densities,
        })
    }

    /// View using externally supplied locations (e.g. sampled latent ones).
    pub fn view_with<'a>(&'a self, locations: &'a [Location]) -> Result<EventView<'a>> {
        if locations.len() != self.len() {
            return Err(Error::InvalidCatalog(format!(
                "{} locations supplied for {} events",
                locations.len(),
                self.len()
            )));
        }
        Ok(EventView {
            times: &self.times,
            locations,
            densities: &self.densities,
        })
    }

    /// Same events with new locations (all events become located).
    pub fn with_locations(&self, locations: Vec<Location>) -> Result<Self> {
        if locations.len() != self.len() {
            return Err(Error::InvalidCatalog("location count mismatch".into()));
        }
        if locations.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidCatalog("non-finite location".into()));
        }
        Ok(Self {
            locations: Some(locations),
            ..self.clone()
        })
    }

    /// Same events with densities replaced.
    pub fn with_densities(&self, densities: Vec<f64>) -> Result<Self> {
        if densities.len() != self.len() {
            return Err(Error::InvalidCatalog("density count mismatch".into()));
        }
        if densities.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidCatalog("densities must be positive".into()));
        }
        Ok(Self {
            densities,
            ..self.clone()
        })
    }
}

/// Borrowed column view consumed by the likelihood code.
#[derive(Debug, Clone, Copy)]
pub struct EventView<'a> {
    pub times: &'a [f64],
    pub locations: &'a [Location],
    pub densities: &'a [f64],
}

impl EventView<'_> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Triggering-kernel spatial scale rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelVariant {
    /// Spatial scale `sigma_x` everywhere.
    #[default]
    Constant,
    /// Spatial scale `sigma_x / sqrt(D)` using the source event's density.
    Varying,
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "varying" => Ok(Self::Varying),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// The five model parameters plus the domain area and kernel variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    /// Background weight.
    pub mu0: f64,
    /// Background temporal lengthscale (weeks).
    pub tau_t: f64,
    /// Self-excitatory weight.
    pub xi0: f64,
    /// Triggering spatial lengthscale (degrees).
    pub sigma_x: f64,
    /// Triggering temporal lengthscale (weeks).
    pub sigma_t: f64,
    /// Spatial domain area in square degrees.
    pub area: f64,
    #[serde(default)]
    pub variant: KernelVariant,
}

impl HawkesParams {
    pub fn new(
        mu0: f64,
        tau_t: f64,
        xi0: f64,
        sigma_x: f64,
        sigma_t: f64,
        area: f64,
        variant: KernelVariant,
    ) -> Result<Self> {
        let p = Self {
            mu0,
            tau_t,
            xi0,
            sigma_x,
            sigma_t,
            area,
            variant,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("mu0", self.mu0),
            ("tau_t", self.tau_t),
            ("xi0", self.xi0),
            ("sigma_x", self.sigma_x),
            ("sigma_t", self.sigma_t),
            ("area", self.area),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and strictly positive, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn sigma_x_prec(&self) -> f64 {
        1.0 / self.sigma_x
    }

    pub fn tau_t_prec(&self) -> f64 {
        1.0 / self.tau_t
    }

    pub fn omega(&self) -> f64 {
        1.0 / self.sigma_t
    }

    pub fn theta(&self) -> f64 {
        self.xi0
    }

    /// `1 / A`, the squared background spatial precision.
    pub fn tau_x_prec_sq(&self) -> f64 {
        1.0 / self.area
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Mu0 => self.mu0,
            Param::TauT => self.tau_t,
            Param::Xi0 => self.xi0,
            Param::SigmaX => self.sigma_x,
            Param::SigmaT => self.sigma_t,
        }
    }

    pub fn set(&mut self, p: Param, value: f64) {
        match p {
            Param::Mu0 => self.mu0 = value,
            Param::TauT => self.tau_t = value,
            Param::Xi0 => self.xi0 = value,
            Param::SigmaX => self.sigma_x = value,
            Param::SigmaT => self.sigma_t = value,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        Param::ALL.map(|p| self.get(p))
    }
}

/// Index into the sampled parameter vector, in update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Mu0,
    TauT,
    Xi0,
    SigmaX,
    SigmaT,
}

impl Param {
    pub const ALL: [Param; 5] = [
        Param::Mu0,
        Param::TauT,
        Param::Xi0,
        Param::SigmaX,
        Param::SigmaT,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Mu0 => "mu0",
            Param::TauT => "tau_t",
            Param::Xi0 => "xi0",
            Param::SigmaX => "sigma_x",
            Param::SigmaT => "sigma_t",
        }
    }

    /// Parameters that only scale the rate and leave the kernel sums alone.
    pub fn is_weight(self) -> bool {
        matches!(self, Param::Mu0 | Param::Xi0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64) -> Event {
        Event::new(format!("{t}"), t, Location::new(0.0, 0.0))
    }

    #[test]
    fn catalog_rejects_unsorted_and_empty() {
        assert!(Catalog::new(vec![]).is_err());
        assert!(Catalog::new(vec![ev(2.0), ev(1.0)]).is_err());
        let c = Catalog::from_unsorted(vec![ev(2.0), ev(1.0), ev(1.5)]).unwrap();
        assert_eq!(c.times(), &[1.0, 1.5, 2.0]);
    }

    #[test]
    fn catalog_rejects_bad_events() {
        assert!(Catalog::new(vec![ev(-1.0)]).is_err());
        let mut e = ev(1.0);
        e.density = 0.0;
        assert!(Catalog::new(vec![e]).is_err());
        let mut e = ev(1.0);
        e.location = Some(Location::new(f64::NAN, 0.0));
        assert!(Catalog::new(vec![e]).is_err());
        let mut pending = ev(2.0);
        pending.location = None;
        assert!(Catalog::new(vec![ev(1.0), pending]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(HawkesParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, KernelVariant::Constant).is_ok());
        assert!(HawkesParams::new(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, KernelVariant::Constant).is_err());
        assert!(
            HawkesParams::new(1.0, 1.0, 1.0, 1.0, 1.0, f64::NAN, KernelVariant::Constant).is_err()
        );
    }

    #[test]
    fn precision_accessors() {
        let p = HawkesParams::new(0.5, 4.0, 0.7, 0.25, 2.0, 10.0, KernelVariant::Constant).unwrap();
        assert_eq!(p.sigma_x_prec(), 4.0);
        assert_eq!(p.tau_t_prec(), 0.25);
        assert_eq!(p.omega(), 0.5);
        assert_eq!(p.theta(), 0.7);
        assert_eq!(p.tau_x_prec_sq(), 0.1);
    }
}
