//! Spatiotemporal Hawkes process likelihood, simulation and Bayesian
//! inference for event catalogs with exact or region-level locations.

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod geo;
pub mod io;
pub mod mcmc;
pub mod model;
pub mod sim;

pub use engine::{log_likelihood, LikelihoodEngine, Partition, Precision};
pub use error::{Error, Result};
pub use geo::{Region, RegionGeometry, RegionTable};
pub use model::{Catalog, Event, EventView, HawkesParams, KernelVariant, Location, Param};
