//! File formats: event catalogs, chain draws and their JSON sidecars.
//!
//! Events CSV: header `event_id,t_weeks,lon,lat,region_id`. `lon`/`lat` may
//! be empty (or the columns absent) when `region_id` is given, which yields a
//! catalog whose locations are pending. Rows are numbered as in a text
//! editor, header being row 1.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::County;
use crate::error::{Error, Result};
use crate::geo::RegionTable;
use crate::mcmc::ChainOutput;
use crate::model::{Catalog, Event, Location, Param};

pub const EVENTS_HEADER: [&str; 5] = ["event_id", "t_weeks", "lon", "lat", "region_id"];

pub const CHAIN_HEADER: [&str; 7] = [
    "iteration",
    "mu0",
    "tau_t",
    "xi0",
    "sigma_x",
    "sigma_t",
    "loglik",
];

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Reads an events CSV. With `regions`, every non-empty `region_id` must
/// resolve and the event takes that region's density; otherwise density is 1.
pub fn load_events(path: &Path, regions: Option<&RegionTable>) -> Result<Catalog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let id_col =
        column(&headers, "event_id").ok_or_else(|| fmt("missing column event_id".into()))?;
    let t_col = column(&headers, "t_weeks").ok_or_else(|| fmt("missing column t_weeks".into()))?;
    let lon_col = column(&headers, "lon");
    let lat_col = column(&headers, "lat");
    if lon_col.is_some() != lat_col.is_some() {
        return Err(fmt("columns lon and lat must appear together".into()));
    }
    let region_col = column(&headers, "region_id");
    if lon_col.is_none() && region_col.is_none() {
        return Err(fmt(
            "need lon/lat columns, a region_id column, or both".into()
        ));
    }

    let mut events = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec?;
        let bad = |reason: String| Error::Row {
            path: path.to_path_buf(),
            row,
            reason,
        };
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).map(str::trim).unwrap_or("");
        let parse = |name: &str, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| bad(format!("{name} '{s}' is not a number")))
        };

        let id = field(Some(id_col));
        if id.is_empty() {
            return Err(bad("empty event_id".into()));
        }
        let t = parse("t_weeks", field(Some(t_col)))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(bad(format!("time {t} must be finite and nonnegative")));
        }
        let (lon, lat) = (field(lon_col), field(lat_col));
        let location = match (lon.is_empty(), lat.is_empty()) {
            (true, true) => None,
            (false, false) => {
                let loc = Location::new(parse("lon", lon)?, parse("lat", lat)?);
                if !loc.is_finite() {
                    return Err(bad("non-finite location".into()));
                }
                Some(loc)
            }
            _ => return Err(bad("lon and lat must both be given or both be empty".into())),
        };
        let region_id = Some(field(region_col))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        if location.is_none() && region_id.is_none() {
            return Err(bad("event has neither a location nor a region_id".into()));
        }
        let density = match (regions, &region_id) {
            (Some(table), Some(rid)) => table
                .get(rid)
                .ok_or_else(|| bad(format!("region '{rid}' is not in the region table")))?
                .density(),
            _ => 1.0,
        };
        events.push(Event {
            id: id.to_string(),
            t,
            location,
            region_id,
            density,
        });
    }
    if events.is_empty() {
        return Err(fmt("no events".into()));
    }
    Catalog::from_unsorted(events).map_err(|e| fmt(e.to_string()))
}

/// Writes an events CSV. Floats use the shortest representation that reads
/// back to the same value.
pub fn write_events(path: &Path, catalog: &Catalog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVENTS_HEADER)?;
    let locs = catalog.locations().ok();
    for n in 0..catalog.len() {
        let (lon, lat) = match locs {
            Some(l) => (l[n].lon.to_string(), l[n].lat.to_string()),
            None => (String::new(), String::new()),
        };
        let region = catalog.region_ids()[n].clone().unwrap_or_default();
        w.write_record([
            catalog.ids()[n].as_str(),
            &catalog.times()[n].to_string(),
            &lon,
            &lat,
            &region,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Draws read back from a chain CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainDraws {
    pub iterations: Vec<usize>,
    pub draws: Vec<[f64; 5]>,
    pub loglik: Vec<f64>,
}

impl ChainDraws {
    pub fn column(&self, p: Param) -> Vec<f64> {
        self.draws.iter().map(|d| d[p.index()]).collect()
    }
}

impl From<&ChainOutput> for ChainDraws {
    fn from(o: &ChainOutput) -> Self {
        Self {
            iterations: o.iterations.clone(),
            draws: o.draws.clone(),
            loglik: o.loglik.clone(),
        }
    }
}

pub fn write_chain_csv(path: &Path, draws: &ChainDraws) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CHAIN_HEADER)?;
    for ((it, d), ll) in draws.iterations.iter().zip(&draws.draws).zip(&draws.loglik) {
        let mut rec = Vec::with_capacity(7);
        rec.push(it.to_string());
        rec.extend(d.iter().map(f64::to_string));
        rec.push(ll.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_chain_csv(path: &Path) -> Result<ChainDraws> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = CHAIN_HEADER
        .iter()
        .map(|name| {
            column(&headers, name).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("missing column {name}"),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = ChainDraws::default();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(cols[c]).unwrap_or("").trim();
            s.parse::<f64>().map_err(|_| Error::Row {
                path: path.to_path_buf(),
                row,
                reason: format!("{} '{s}' is not a number", CHAIN_HEADER[c]),
            })
        };
        let it = rec.get(cols[0]).unwrap_or("").trim();
        out.iterations.push(it.parse().map_err(|_| Error::Row {
            path: path.to_path_buf(),
            row,
            reason: format!("iteration '{it}' is not an integer"),
        })?);
        out.draws
            .push([num(1)?, num(2)?, num(3)?, num(4)?, num(5)?]);
        out.loglik.push(num(6)?);
    }
    Ok(out)
}

/// Reads a `name,lat,density` CSV with a header row.
pub fn load_counties(path: &Path) -> Result<Vec<County>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize::<County>().enumerate() {
        let c = rec.map_err(|e| Error::Row {
            path: path.to_path_buf(),
            row: k + 2,
            reason: e.to_string(),
        })?;
        if !(c.density > 0.0 && c.density.is_finite()) {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row: k + 2,
                reason: format!("density {} must be positive", c.density),
            });
        }
        out.push(c);
    }
    Ok(out)
}

/// Metadata written next to each chain CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSidecar {
    pub chain: usize,
    pub seed: u64,
    pub config_hash: String,
    pub retained_draws: usize,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub final_steps: BTreeMap<String, f64>,
    pub elapsed_seconds: f64,
}

impl ChainSidecar {
    pub fn new(output: &ChainOutput, config_hash: String) -> Self {
        let by_name = |v: &[f64; 5]| {
            Param::ALL
                .iter()
                .map(|p| (p.name().to_string(), v[p.index()]))
                .collect()
        };
        Self {
            chain: output.chain,
            seed: output.seed,
            config_hash,
            retained_draws: output.draws.len(),
            acceptance_rates: by_name(&output.acceptance_rates),
            final_steps: by_name(&output.final_steps),
            elapsed_seconds: output.elapsed_seconds,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
