//! Region geometry, polygon-uniform sampling, degree/mile conversion and
//! domain-area computation.
//!
//! Coordinates are (lon, lat) degrees treated as planar; no geodesic
//! corrections are applied anywhere.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Catalog, KernelVariant, Location};

/// Miles per degree of latitude.
pub const MILES_PER_DEGREE: f64 = 69.17;

/// Rejection-sampling attempts allowed per draw.
pub const DEFAULT_ATTEMPT_BUDGET: usize = 10_000;

/// Padding (degrees per side) applied to a zero-width bounding box side.
pub const BOX_PADDING: f64 = 1e-6;

/// A simple polygon with optional holes. Rings are stored open (the closing
/// vertex is dropped on construction).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Vec<Location>,
    holes: Vec<Vec<Location>>,
}

fn open_ring(mut ring: Vec<Location>) -> Result<Vec<Location>, String> {
    if ring.iter().any(|p| !p.is_finite()) {
        return Err("ring has a non-finite vertex".into());
    }
    if ring.len() >= 2 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err("ring needs at least three distinct vertices".into());
    }
    Ok(ring)
}

fn signed_ring_area(ring: &[Location]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for k in 0..n {
        let a = ring[k];
        let b = ring[(k + 1) % n];
        s += a.lon * b.lat - b.lon * a.lat;
    }
    0.5 * s
}

// (area-weighted) centroid moments of a ring: (signed area, sum for Cx, sum for Cy)
fn ring_moments(ring: &[Location]) -> (f64, f64, f64) {
    let n = ring.len();
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let p = ring[k];
        let q = ring[(k + 1) % n];
        let cross = p.lon * q.lat - q.lon * p.lat;
        a2 += cross;
        cx += (p.lon + q.lon) * cross;
        cy += (p.lat + q.lat) * cross;
    }
    (0.5 * a2, cx / 6.0, cy / 6.0)
}

fn ring_crossings(ring: &[Location], p: Location) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if p.lon < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_segment(a: Location, b: Location, p: Location) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    cross == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn ring_touches(ring: &[Location], p: Location) -> bool {
    let n = ring.len();
    (0..n).any(|k| on_segment(ring[k], ring[(k + 1) % n], p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    fn of(points: impl IntoIterator<Item = Location>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BoundingBox {
            lon_min: first.lon,
            lon_max: first.lon,
            lat_min: first.lat,
            lat_max: first.lat,
        };
        for p in it {
            b.lon_min = b.lon_min.min(p.lon);
            b.lon_max = b.lon_max.max(p.lon);
            b.lat_min = b.lat_min.min(p.lat);
            b.lat_max = b.lat_max.max(p.lat);
        }
        Some(b)
    }

    fn union(self, o: Self) -> Self {
        BoundingBox {
            lon_min: self.lon_min.min(o.lon_min),
            lon_max: self.lon_max.max(o.lon_max),
            lat_min: self.lat_min.min(o.lat_min),
            lat_max: self.lat_max.max(o.lat_max),
        }
    }

    /// Area with zero-width sides padded by [`BOX_PADDING`] on each end.
    pub fn padded_area(&self) -> f64 {
        let pad = |w: f64| if w > 0.0 { w } else { 2.0 * BOX_PADDING };
        pad(self.lon_max - self.lon_min) * pad(self.lat_max - self.lat_min)
    }
}

impl Polygon {
    pub fn new(exterior: Vec<Location>, holes: Vec<Vec<Location>>) -> Result<Self, String> {
        let exterior = open_ring(exterior)?;
        let holes = holes
            .into_iter()
            .map(open_ring)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { exterior, holes })
    }

    pub fn exterior(&self) -> &[Location] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Location>] {
        &self.holes
    }

    pub fn area(&self) -> f64 {
        let outer = signed_ring_area(&self.exterior).abs();
        let holes: f64 = self.holes.iter().map(|h| signed_ring_area(h).abs()).sum();
        (outer - holes).max(0.0)
    }

    /// Strict even-odd containment over all rings.
    pub fn contains(&self, p: Location) -> bool {
        let mut inside = ring_crossings(&self.exterior, p);
        for h in &self.holes {
            if ring_crossings(h, p) {
                inside = !inside;
            }
        }
        inside
    }

    pub fn on_boundary(&self, p: Location) -> bool {
        ring_touches(&self.exterior, p) || self.holes.iter().any(|h| ring_touches(h, p))
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::of(self.exterior.iter().copied()).expect("ring is nonempty")
    }

    /// True when no two non-adjacent edges of any ring intersect. Quadratic in
    /// the vertex count, so not run on load.
    pub fn is_simple(&self) -> bool {
        std::iter::once(&self.exterior)
            .chain(self.holes.iter())
            .all(|r| ring_is_simple(r))
    }

    fn centroid_moments(&self) -> (f64, f64) {
        let (a, _, cy) = ring_moments(&self.exterior);
        let (mut area, mut my) = (a.abs(), cy * a.signum());
        for h in &self.holes {
            let (ha, _, hcy) = ring_moments(h);
            area -= ha.abs();
            my -= hcy * ha.signum();
        }
        (area, my)
    }
}

fn segments_intersect(p1: Location, p2: Location, q1: Location, q2: Location) -> bool {
    let orient = |a: Location, b: Location, c: Location| {
        let v = (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon);
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    let (o1, o2) = (orient(p1, p2, q1), orient(p1, p2, q2));
    let (o3, o4) = (orient(q1, q2, p1), orient(q1, q2, p2));
    if o1 != o2 && o3 != o4 {
        return true;
    }
    (o1 == 0 && on_segment(p1, p2, q1))
        || (o2 == 0 && on_segment(p1, p2, q2))
        || (o3 == 0 && on_segment(q1, q2, p1))
        || (o4 == 0 && on_segment(q1, q2, p2))
}

fn ring_is_simple(ring: &[Location]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, ring[j], ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionGeometry {
    /// Exactly known location; sampling returns it unchanged.
    Point(Location),
    /// One or more polygons; parts are chosen proportionally to area.
    Polygons(Vec<Polygon>),
}

/// A coarse region (e.g. a county).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    id: String,
    geometry: RegionGeometry,
    density: f64,
    representative_lat: f64,
    cumulative_area: Vec<f64>,
}

impl Region {
    pub fn new(id: impl Into<String>, geometry: RegionGeometry, density: f64) -> Result<Self> {
        let id = id.into();
        if !(density.is_finite() && density > 0.0) {
            return Err(Error::Region {
                region: id,
                reason: format!("density must be positive, got {density}"),
            });
        }
        let (cumulative_area, representative_lat) = match &geometry {
            RegionGeometry::Point(p) => {
                if !p.is_finite() {
                    return Err(Error::Region {
                        region: id,
                        reason: "non-finite point".into(),
                    });
                }
                (Vec::new(), p.lat)
            }
            RegionGeometry::Polygons(parts) => {
                if parts.is_empty() {
                    return Err(Error::Region {
                        region: id,
                        reason: "no polygons".into(),
                    });
                }
                let mut acc = 0.0;
                let cumulative: Vec<f64> = parts
                    .iter()
                    .map(|p| {
                        acc += p.area();
                        acc
                    })
                    .collect();
                let (mut area, mut my) = (0.0, 0.0);
                for p in parts {
                    let (a, m) = p.centroid_moments();
                    area += a;
                    my += m;
                }
                let lat = if area > 0.0 {
                    my / area
                } else {
                    parts[0].exterior[0].lat
                };
                (cumulative, lat)
            }
        };
        Ok(Self {
            id,
            geometry,
            density,
            representative_lat,
            cumulative_area,
        })
    }

    pub fn point(id: impl Into<String>, location: Location, density: f64) -> Result<Self> {
        Self::new(id, RegionGeometry::Point(location), density)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn geometry(&self) -> &RegionGeometry {
        &self.geometry
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    /// Centroid latitude (the point itself for point regions).
    pub fn representative_lat(&self) -> f64 {
        self.representative_lat
    }

    pub fn area(&self) -> f64 {
        self.cumulative_area.last().copied().unwrap_or(0.0)
    }

    /// A fixed location inside or on the region, used before the first draw.
    pub fn anchor(&self) -> Location {
        match &self.geometry {
            RegionGeometry::Point(p) => *p,
            RegionGeometry::Polygons(parts) => parts[0].exterior[0],
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self.geometry, RegionGeometry::Point(_))
    }

    /// Containment with boundary points counted as inside.
    pub fn covers(&self, p: Location) -> bool {
        match &self.geometry {
            RegionGeometry::Point(q) => *q == p,
            RegionGeometry::Polygons(parts) => parts
                .iter()
                .any(|poly| poly.on_boundary(p) || poly.contains(p)),
        }
    }

    pub fn bounding_box(&self) -> BoundingBox {
        match &self.geometry {
            RegionGeometry::Point(p) => BoundingBox::of([*p]).expect("one point"),
            RegionGeometry::Polygons(parts) => parts
                .iter()
                .map(Polygon::bounding_box)
                .reduce(BoundingBox::union)
                .expect("nonempty"),
        }
    }
}

/// Outcome of one draw, including how many bounding-box proposals it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub location: Location,
    pub part: usize,
    pub attempts: usize,
}

/// Uniform draw over the region's area.
pub fn sample_point_in_region<R: Rng + ?Sized>(region: &Region, rng: &mut R) -> Result<Location> {
    sample_with_budget(region, rng, DEFAULT_ATTEMPT_BUDGET).map(|d| d.location)
}

/// Uniform draw with an explicit attempt budget, reporting proposal counts.
pub fn sample_with_budget<R: Rng + ?Sized>(
    region: &Region,
    rng: &mut R,
    budget: usize,
) -> Result<Draw> {
    let parts = match &region.geometry {
        RegionGeometry::Point(p) => {
            return Ok(Draw {
                location: *p,
                part: 0,
                attempts: 0,
            })
        }
        RegionGeometry::Polygons(parts) => parts,
    };
    let total = region.area();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Region {
            region: region.id.clone(),
            reason: "zero-area region cannot be sampled".into(),
        });
    }
    let u = rng.random::<f64>() * total;
    let part = region
        .cumulative_area
        .partition_point(|&c| c <= u)
        .min(parts.len() - 1);
    let poly = &parts[part];
    let bb = poly.bounding_box();
    for attempt in 1..=budget {
        let p = Location::new(
            bb.lon_min + rng.random::<f64>() * (bb.lon_max - bb.lon_min),
            bb.lat_min + rng.random::<f64>() * (bb.lat_max - bb.lat_min),
        );
        if poly.contains(p) {
            return Ok(Draw {
                location: p,
                part,
                attempts: attempt,
            });
        }
    }
    Err(Error::Region {
        region: region.id.clone(),
        reason: format!("rejection sampling failed after {budget} attempts"),
    })
}

/// Regions keyed by id, kept in load order (which is also the tie-break order
/// for boundary points).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionTable {
    regions: IndexMap<String, Region>,
}

impl RegionTable {
    pub fn new(regions: impl IntoIterator<Item = Region>) -> Result<Self> {
        let mut map = IndexMap::new();
        for r in regions {
            if map.contains_key(&r.id) {
                return Err(Error::Region {
                    region: r.id,
                    reason: "duplicate region id".into(),
                });
            }
            map.insert(r.id.clone(), r);
        }
        Ok(Self { regions: map })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Region> {
        self.regions.get(id)
    }

    /// Position of `id` in table order.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.regions.get_index_of(id)
    }

    pub fn get_index(&self, index: usize) -> Option<&Region> {
        self.regions.get_index(index).map(|(_, r)| r)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    /// First region (in table order) covering `p`, boundary inclusive.
    pub fn find_containing(&self, p: Location) -> Option<&Region> {
        self.regions.values().find(|r| r.covers(p))
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        self.regions
            .values()
            .map(Region::bounding_box)
            .reduce(BoundingBox::union)
    }

    /// Replace densities from an id → density map; unknown ids are ignored.
    pub fn apply_densities(&mut self, densities: &HashMap<String, f64>) -> Result<()> {
        for (id, r) in self.regions.iter_mut() {
            if let Some(&d) = densities.get(id) {
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::Region {
                        region: id.clone(),
                        reason: format!("density must be positive, got {d}"),
                    });
                }
                r.density = d;
            }
        }
        Ok(())
    }

    /// Reads a GeoJSON FeatureCollection of Point/Polygon/MultiPolygon
    /// features. Densities come from `keys.density` in the properties, or from
    /// `densities` when the property is absent.
    pub fn from_geojson(
        path: &Path,
        keys: &GeoJsonKeys,
        densities: Option<&HashMap<String, f64>>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_geojson_str(&text, keys, densities).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn from_geojson_str(
        text: &str,
        keys: &GeoJsonKeys,
        densities: Option<&HashMap<String, f64>>,
    ) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            path: "<geojson>".into(),
            reason,
        };
        let root: Value = serde_json::from_str(text)?;
        if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(fmt("top-level object must be a FeatureCollection".into()));
        }
        let features = root
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| fmt("missing features array".into()))?;
        let mut regions = Vec::with_capacity(features.len());
        for (k, f) in features.iter().enumerate() {
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let id = match props.get(&keys.id) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => {
                    return Err(fmt(format!(
                        "feature {k}: missing id property '{}'",
                        keys.id
                    )))
                }
            };
            let density = match props.get(&keys.density) {
                Some(Value::Number(n)) => n.as_f64(),
                Some(Value::String(s)) => s.trim().parse::<f64>().ok(),
                _ => None,
            }
            .or_else(|| densities.and_then(|m| m.get(&id).copied()))
            .ok_or_else(|| fmt(format!("region {id}: no density available")))?;
            let geometry = f
                .get("geometry")
                .ok_or_else(|| fmt(format!("region {id}: missing geometry")))
                .and_then(|g| parse_geometry(g).map_err(|r| fmt(format!("region {id}: {r}"))))?;
            regions.push(Region::new(id, geometry, density)?);
        }
        Self::new(regions)
    }
}

/// Property names used when reading region GeoJSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoJsonKeys {
    pub id: String,
    pub density: String,
}

impl Default for GeoJsonKeys {
    fn default() -> Self {
        Self {
            id: "region_id".into(),
            density: "density".into(),
        }
    }
}

fn parse_position(v: &Value) -> Result<Location, String> {
    let arr = v.as_array().ok_or("position must be an array")?;
    match (
        arr.first().and_then(Value::as_f64),
        arr.get(1).and_then(Value::as_f64),
    ) {
        (Some(lon), Some(lat)) => Ok(Location::new(lon, lat)),
        _ => Err("position needs numeric lon and lat".into()),
    }
}

fn parse_rings(v: &Value) -> Result<Polygon, String> {
    let rings = v.as_array().ok_or("polygon must be an array of rings")?;
    let mut parsed = rings.iter().map(|r| {
        r.as_array()
            .ok_or_else(|| "ring must be an array".to_string())?
            .iter()
            .map(parse_position)
            .collect::<Result<Vec<_>, _>>()
    });
    let exterior = parsed.next().ok_or("polygon has no rings")??;
    let holes = parsed.collect::<Result<Vec<_>, _>>()?;
    Polygon::new(exterior, holes)
}

fn parse_geometry(g: &Value) -> Result<RegionGeometry, String> {
    let coords = g.get("coordinates").ok_or("geometry has no coordinates")?;
    match g.get("type").and_then(Value::as_str) {
        Some("Point") => Ok(RegionGeometry::Point(parse_position(coords)?)),
        Some("Polygon") => Ok(RegionGeometry::Polygons(vec![parse_rings(coords)?])),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or_else(|| "MultiPolygon coordinates must be an array".to_string())?
            .iter()
            .map(parse_rings)
            .collect::<Result<Vec<_>, _>>()
            .map(RegionGeometry::Polygons),
        other => Err(format!("unsupported geometry type {other:?}")),
    }
}

/// Reads a two-column `region_id,density` CSV with a header row.
pub fn load_densities_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let bad = |reason: String| Error::Row {
            path: path.to_path_buf(),
            row,
            reason,
        };
        if rec.len() < 2 {
            return Err(bad("expected region_id,density".into()));
        }
        let d: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("density '{}' is not a number", &rec[1])))?;
        if !(d.is_finite() && d > 0.0) {
            return Err(bad(format!("density {d} must be positive")));
        }
        out.insert(rec[0].trim().to_string(), d);
    }
    Ok(out)
}

/// `(miles per degree latitude, miles per degree longitude)` at `latitude`.
pub fn degree_mile_factors(latitude: f64) -> Result<(f64, f64)> {
    if latitude.is_nan() || latitude.abs() >= 90.0 {
        return Err(Error::PolarLatitude(latitude));
    }
    Ok((
        MILES_PER_DEGREE,
        (latitude * std::f64::consts::PI / 180.0).cos() * MILES_PER_DEGREE,
    ))
}

/// How density rescales the spatial lengthscale when reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityScaling {
    /// `sigma_x / sqrt(D)`, as used by the likelihood.
    Sqrt,
    /// `sigma_x / D`.
    Linear,
}

/// Which degree-to-mile factor to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MileConvention {
    Latitudinal,
    Longitudinal,
    Averaged,
}

impl std::str::FromStr for MileConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latitudinal" => Ok(Self::Latitudinal),
            "longitudinal" => Ok(Self::Longitudinal),
            "averaged" => Ok(Self::Averaged),
            other => Err(Error::Config(format!("unknown mile convention '{other}'"))),
        }
    }
}

impl std::str::FromStr for DensityScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Self::Sqrt),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown density scaling '{other}'"))),
        }
    }
}

/// Effective triggering lengthscale in degrees for a region of `density`.
pub fn effective_lengthscale_degrees(
    sigma_x: f64,
    variant: KernelVariant,
    density: f64,
    scaling: DensityScaling,
) -> f64 {
    match (variant, scaling) {
        (KernelVariant::Constant, _) => sigma_x,
        (KernelVariant::Varying, DensityScaling::Sqrt) => sigma_x / density.sqrt(),
        (KernelVariant::Varying, DensityScaling::Linear) => sigma_x / density,
    }
}

pub fn lengthscale_to_miles(
    degrees: f64,
    latitude: f64,
    convention: MileConvention,
) -> Result<f64> {
    let (lat_f, lon_f) = degree_mile_factors(latitude)?;
    let factor = match convention {
        MileConvention::Latitudinal => lat_f,
        MileConvention::Longitudinal => lon_f,
        MileConvention::Averaged => 0.5 * (lat_f + lon_f),
    };
    Ok(degrees * factor)
}

/// Domain area `A` in square degrees: the override if given, otherwise the
/// padded bounding box of the catalog locations.
pub fn domain_area(catalog: &Catalog, area_override: Option<f64>) -> Result<f64> {
    if let Some(a) = area_override {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter {
                name: "area",
                reason: format!("override must be positive, got {a}"),
            });
        }
        return Ok(a);
    }
    let bb = BoundingBox::of(catalog.locations()?.iter().copied()).expect("catalog is nonempty");
    Ok(bb.padded_area())
}
