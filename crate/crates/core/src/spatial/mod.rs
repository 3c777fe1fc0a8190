//! Base-station sites, Voronoi coverage areas and per-site aggregates.

mod geojson;
pub mod geometry;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;

pub use self::geojson::{
    coverage_geojson, export_choropleth, parse_choropleth, read_boundary, ChoroplethFeature,
};
use self::geometry::{buffered_hull, clip_half_plane, contains_convex, convex_hull, normalize_convex_ring, Point, Projection};
use crate::device_catalog::Enrichment;
use crate::error::{Error, Result};
use crate::ingest::{CellLocation, DeviceObservation, NormalizedTables};
use crate::types::{CellId, SiteId, Tac};

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: SiteId,
    pub lon: f64,
    pub lat: f64,
    pub cells: Vec<CellId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteMap {
    pub sites: Vec<Site>,
    /// Site of every cell, indexed by [`CellId`].
    pub cell_site: Vec<SiteId>,
}

impl SiteMap {
    pub fn site_of(&self, cell: CellId) -> SiteId {
        self.cell_site[cell.index()]
    }
}

fn micro_degrees(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

/// Groups cells whose coordinates agree after rounding to 1e-6 degrees.
/// Sites are numbered in (lon, lat) order. `cells` must cover every cell id
/// once.
pub fn merge_cells(cells: &[CellLocation]) -> SiteMap {
    let mut groups: BTreeMap<(i64, i64), Vec<CellId>> = BTreeMap::new();
    for c in cells {
        groups.entry((micro_degrees(c.lon), micro_degrees(c.lat))).or_default().push(c.cell);
    }
    let n_cells = cells.iter().map(|c| c.cell.index() + 1).max().unwrap_or(0);
    let mut cell_site = vec![SiteId(u32::MAX); n_cells];
    let sites = groups
        .into_iter()
        .enumerate()
        .map(|(i, ((lon, lat), mut members))| {
            members.sort();
            let id = SiteId(i as u32);
            for c in &members {
                cell_site[c.index()] = id;
            }
            Site { id, lon: lon as f64 / 1e6, lat: lat as f64 / 1e6, cells: members }
        })
        .collect();
    SiteMap { sites, cell_site }
}

pub fn write_sites<W: Write>(map: &SiteMap, tables: &NormalizedTables, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["site_id", "lon", "lat", "n_cells", "cells"])?;
    for s in &map.sites {
        let cells: Vec<&str> = s.cells.iter().map(|&c| tables.cell_name(c)).collect();
        out.write_record([
            &s.id.0.to_string(),
            &format!("{:.6}", s.lon),
            &format!("{:.6}", s.lat),
            &s.cells.len().to_string(),
            &cells.join(";"),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSource {
    Boundary,
    Site(SiteId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePolygon {
    pub site: SiteId,
    /// Counter-clockwise convex rings, one per boundary part reached.
    pub rings: Vec<Vec<Point>>,
    /// Whether part of the outline comes from the boundary.
    pub clipped: bool,
    pub neighbors: BTreeSet<SiteId>,
}

impl CoveragePolygon {
    pub fn area(&self) -> f64 {
        self.rings.iter().map(|r| geometry::area(r)).sum()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.rings.iter().any(|r| contains_convex(r, p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiOptions {
    /// Accept fewer than three or collinear sites.
    pub allow_bisector: bool,
    /// Growth of the site hull when no boundary is given.
    pub buffer_km: f64,
}

impl Default for VoronoiOptions {
    fn default() -> Self {
        VoronoiOptions { allow_bisector: false, buffer_km: 1.0 }
    }
}

fn check_sites(sites: &[Point], allow_bisector: bool) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::DegenerateSites("no sites".into()));
    }
    let mut sorted = sites.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateSites("coincident sites".into()));
    }
    if !allow_bisector {
        if sites.len() < 3 {
            return Err(Error::DegenerateSites(format!("{} sites, at least 3 needed", sites.len())));
        }
        if convex_hull(sites).len() < 3 {
            return Err(Error::DegenerateSites("all sites are collinear".into()));
        }
    }
    Ok(())
}

/// Voronoi cells of planar `sites` clipped to a boundary made of convex,
/// interior-disjoint, counter-clockwise parts.
pub fn voronoi(sites: &[Point], boundary: &[Vec<Point>], opts: &VoronoiOptions) -> Result<Vec<CoveragePolygon>> {
    check_sites(sites, opts.allow_bisector)?;
    let cells = (0..sites.len())
        .map(|i| {
            let s = sites[i];
            let mut order: Vec<usize> = (0..sites.len()).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| (sites[a] - s).norm2().total_cmp(&(sites[b] - s).norm2()).then(a.cmp(&b)));
            let mut poly = CoveragePolygon {
                site: SiteId(i as u32),
                rings: Vec::new(),
                clipped: false,
                neighbors: BTreeSet::new(),
            };
            for part in boundary {
                let mut ring = part.clone();
                let mut labels = vec![EdgeSource::Boundary; ring.len()];
                for &j in &order {
                    let reach = ring.iter().map(|v| (*v - s).norm2()).fold(0.0, f64::max);
                    let d2 = (sites[j] - s).norm2();
                    // A site farther than twice the cell's reach cannot cut it.
                    if d2 > 4.0 * reach {
                        break;
                    }
                    let normal = sites[j] - s;
                    let offset = normal.dot((sites[j] + s) * 0.5);
                    (ring, labels) = clip_half_plane(&ring, &labels, normal, offset, EdgeSource::Site(SiteId(j as u32)));
                    if ring.is_empty() {
                        break;
                    }
                }
                if ring.is_empty() {
                    continue;
                }
                for l in &labels {
                    match l {
                        EdgeSource::Boundary => poly.clipped = true,
                        EdgeSource::Site(j) => {
                            poly.neighbors.insert(*j);
                        }
                    }
                }
                poly.rings.push(ring);
            }
            poly
        })
        .collect();
    Ok(cells)
}

/// Equal-area projection centred on the mean site position.
pub fn site_projection(map: &SiteMap) -> Projection {
    let n = map.sites.len().max(1) as f64;
    Projection::new(
        map.sites.iter().map(|s| s.lon).sum::<f64>() / n,
        map.sites.iter().map(|s| s.lat).sum::<f64>() / n,
    )
}

/// Projected site positions, indexed by [`SiteId`].
pub fn site_positions(map: &SiteMap, projection: &Projection) -> Vec<Point> {
    map.sites.iter().map(|s| projection.forward(s.lon, s.lat)).collect()
}

/// Coverage areas in a local equal-area projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Tessellation {
    pub projection: Projection,
    pub boundary: Vec<Vec<Point>>,
    pub sites: Vec<Point>,
    pub polygons: Vec<CoveragePolygon>,
}

impl Tessellation {
    pub fn boundary_area(&self) -> f64 {
        self.boundary.iter().map(|r| geometry::area(r)).sum()
    }

    /// Site whose coverage contains `p`; the lowest id wins on shared borders.
    pub fn locate(&self, p: Point) -> Option<SiteId> {
        self.polygons.iter().find(|c| c.contains(p)).map(|c| c.site)
    }

    pub fn to_lon_lat(&self, ring: &[Point]) -> Vec<(f64, f64)> {
        ring.iter().map(|&p| self.projection.inverse(p)).collect()
    }
}

/// Area-weighted centroid of the lon/lat rings, or the vertex mean when the
/// rings have no area.
fn lon_lat_centroid(rings: &[Vec<(f64, f64)>]) -> (f64, f64) {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for ring in rings {
        let n = ring.len();
        for i in 0..n {
            let (p, q) = (ring[i], ring[(i + 1) % n]);
            let w = p.0 * q.1 - q.0 * p.1;
            a += w;
            cx += (p.0 + q.0) * w;
            cy += (p.1 + q.1) * w;
        }
    }
    if a.abs() > 1e-15 {
        return (cx / (3.0 * a), cy / (3.0 * a));
    }
    let all: Vec<&(f64, f64)> = rings.iter().flatten().collect();
    let n = all.len().max(1) as f64;
    (all.iter().map(|p| p.0).sum::<f64>() / n, all.iter().map(|p| p.1).sum::<f64>() / n)
}

/// Tessellates the sites of `map`. Without a boundary the convex hull of the
/// sites grown by `opts.buffer_km` is used.
pub fn tessellate(map: &SiteMap, boundary: Option<&[Vec<(f64, f64)>]>, opts: &VoronoiOptions) -> Result<Tessellation> {
    let site_ll: Vec<(f64, f64)> = map.sites.iter().map(|s| (s.lon, s.lat)).collect();
    if site_ll.is_empty() {
        return Err(Error::DegenerateSites("no sites".into()));
    }
    let projection = match boundary {
        Some(rings) => {
            let (lon, lat) = lon_lat_centroid(rings);
            Projection::new(lon, lat)
        }
        None => site_projection(map),
    };
    let sites: Vec<Point> = site_ll.iter().map(|&(lon, lat)| projection.forward(lon, lat)).collect();
    let boundary = match boundary {
        Some(rings) => rings
            .iter()
            .map(|r| normalize_convex_ring(r.iter().map(|&(lon, lat)| projection.forward(lon, lat)).collect()))
            .collect::<Result<Vec<_>>>()?,
        None => vec![buffered_hull(&sites, opts.buffer_km, 64)],
    };
    let polygons = voronoi(&sites, &boundary, opts)?;
    Ok(Tessellation { projection, boundary, sites, polygons })
}

/// Device in use by a SIM at `ts`: among the devices whose observed span
/// covers `ts`, the one with the most records; otherwise the SIM's most used
/// device.
pub fn device_at(devices: &[DeviceObservation], ts: i64) -> Option<Tac> {
    let best = |it: &mut dyn Iterator<Item = &DeviceObservation>| {
        it.max_by(|a, b| a.event_count.cmp(&b.event_count).then(b.tac.cmp(&a.tac))).map(|d| d.tac)
    };
    best(&mut devices.iter().filter(|d| d.first_seen <= ts && ts <= d.last_seen))
        .or_else(|| best(&mut devices.iter()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SitePrice {
    pub records: u64,
    pub priced_records: u64,
    pub price_sum: f64,
}

impl SitePrice {
    /// Absent when no record of the site has a known phone price.
    pub fn mean(&self) -> Option<f64> {
        (self.priced_records > 0).then(|| self.price_sum / self.priced_records as f64)
    }

    pub fn coverage(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.priced_records as f64 / self.records as f64
        }
    }
}

/// SIMs per parallel work unit. Fixed so float sums do not depend on the
/// thread count.
const SIM_BLOCK: usize = 2048;

/// Record-weighted mean phone price per site, indexed by [`SiteId`].
pub fn site_mean_phone_price(tables: &NormalizedTables, enrichment: &Enrichment, map: &SiteMap) -> Vec<SitePrice> {
    let sim_ranges = tables.sim_ranges();
    let dev_ranges = tables.device_ranges();
    let n_sites = map.sites.len();
    let blocks: Vec<Vec<SitePrice>> = (0..sim_ranges.len())
        .collect::<Vec<_>>()
        .par_chunks(SIM_BLOCK)
        .map(|sims| {
            let mut acc = vec![SitePrice::default(); n_sites];
            for &sim in sims {
                let devices = &tables.devices[dev_ranges[sim].clone()];
                for e in &tables.events[sim_ranges[sim].clone()] {
                    let site = &mut acc[map.site_of(e.cell).index()];
                    site.records += 1;
                    let price = device_at(devices, e.timestamp)
                        .and_then(|t| enrichment.get(&t))
                        .and_then(|t| t.phone_price());
                    if let Some(p) = price {
                        site.priced_records += 1;
                        site.price_sum += p;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![SitePrice::default(); n_sites];
    for block in blocks {
        for (t, b) in total.iter_mut().zip(block) {
            t.records += b.records;
            t.priced_records += b.priced_records;
            t.price_sum += b.price_sum;
        }
    }
    total
}

/// Record count per site, indexed by [`SiteId`].
pub fn site_record_counts(tables: &NormalizedTables, map: &SiteMap) -> Vec<u64> {
    let mut counts = vec![0u64; map.sites.len()];
    for e in &tables.events {
        counts[map.site_of(e.cell).index()] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device_catalog::TacEnrichment;
    use crate::ingest::{normalize, WideCdrRow};
    use crate::types::{CustomerType, PaymentType};

    fn cell(i: u32, lon: f64, lat: f64) -> CellLocation {
        CellLocation { cell: CellId(i), lon, lat }
    }

    #[test]
    fn merge_examples() {
        let map = merge_cells(&[cell(0, 19.0, 47.5), cell(1, 19.0, 47.5)]);
        assert_eq!(map.sites.len(), 1);
        assert_eq!(map.sites[0].cells, vec![CellId(0), CellId(1)]);
        let map = merge_cells(&[cell(0, 19.0, 47.5), cell(1, 19.1, 47.5), cell(2, 19.0, 47.6)]);
        assert_eq!(map.sites.len(), 3);
        let map = merge_cells(&[cell(0, 19.0000001, 47.5), cell(1, 19.0, 47.5000004)]);
        assert_eq!(map.sites.len(), 1);
    }

    fn unit_square() -> Vec<Vec<Point>> {
        vec![vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)]]
    }

    #[test]
    fn two_sites_need_bisector_option() {
        let sites = [Point::new(0.25, 0.5), Point::new(0.75, 0.5)];
        assert!(matches!(voronoi(&sites, &unit_square(), &VoronoiOptions::default()), Err(Error::DegenerateSites(_))));
        let opts = VoronoiOptions { allow_bisector: true, ..Default::default() };
        let cells = voronoi(&sites, &unit_square(), &opts).unwrap();
        for c in &cells {
            assert!((c.area() - 0.5).abs() < 1e-12);
        }
        assert!(cells[0].contains(Point::new(0.49, 0.9)));
        assert!(!cells[0].contains(Point::new(0.51, 0.9)));
    }

    #[test]
    fn collinear_sites_are_degenerate() {
        let sites = [Point::new(0.1, 0.1), Point::new(0.5, 0.5), Point::new(0.9, 0.9)];
        assert!(voronoi(&sites, &unit_square(), &VoronoiOptions::default()).is_err());
    }

    #[test]
    fn square_corners_give_quadrants() {
        let sites = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        let cells = voronoi(&sites, &unit_square(), &VoronoiOptions::default()).unwrap();
        for c in &cells {
            assert!((c.area() - 0.25).abs() < 1e-12);
            assert!(c.clipped);
            assert_eq!(c.neighbors.len(), 2);
        }
    }

    #[test]
    fn default_boundary_tiles() {
        let map = merge_cells(&[cell(0, 19.0, 47.5), cell(1, 19.1, 47.5), cell(2, 19.05, 47.55), cell(3, 19.05, 47.51)]);
        let tess = tessellate(&map, None, &VoronoiOptions::default()).unwrap();
        let total: f64 = tess.polygons.iter().map(|c| c.area()).sum();
        assert!((total - tess.boundary_area()).abs() < 1e-9 * total);
        for (i, s) in tess.sites.iter().enumerate() {
            assert_eq!(tess.locate(*s), Some(SiteId(i as u32)));
        }
    }

    fn row(sim: &str, ts: i64, cell: &str, lon: f64, tac: &str) -> WideCdrRow {
        WideCdrRow {
            sim_id: sim.into(),
            timestamp: ts,
            cell_id: cell.into(),
            site_lon: lon,
            site_lat: 47.5,
            age: None,
            sex: None,
            customer_type: CustomerType::Consumer,
            payment_type: PaymentType::Prepaid,
            tac: tac.parse().unwrap(),
        }
    }

    fn priced(tac: &str, price: f64) -> (Tac, TacEnrichment) {
        let tac: Tac = tac.parse().unwrap();
        let mut e = TacEnrichment::unmatched(tac, false);
        e.matched = true;
        e.price_eur = Some(price);
        (tac, e)
    }

    #[test]
    fn site_price_is_record_weighted() {
        let tables = normalize(vec![
            row("a", 1, "X", 19.0, "11111111"),
            row("a", 2, "X", 19.0, "11111111"),
            row("b", 1, "X", 19.0, "44444444"),
            row("c", 1, "Y", 19.1, "99999999"),
        ]);
        let enrichment: Enrichment = [priced("11111111", 100.0), priced("44444444", 400.0)].into_iter().collect();
        let map = merge_cells(&tables.cell_locations);
        let prices = site_mean_phone_price(&tables, &enrichment, &map);
        let x = map.site_of(tables.cell_id("X").unwrap()).index();
        let y = map.site_of(tables.cell_id("Y").unwrap()).index();
        assert_eq!(prices[x].mean(), Some(200.0));
        assert_eq!(prices[y].mean(), None);
        assert_eq!(prices[y].records, 1);
        let counts = site_record_counts(&tables, &map);
        assert_eq!(counts.iter().sum::<u64>(), tables.events.len() as u64);
    }

    #[test]
    fn device_switch_follows_time() {
        let tables = normalize(vec![
            row("a", 10, "X", 19.0, "11111111"),
            row("a", 20, "X", 19.0, "11111111"),
            row("a", 30, "X", 19.0, "44444444"),
        ]);
        assert_eq!(device_at(&tables.devices, 15), Some("11111111".parse().unwrap()));
        assert_eq!(device_at(&tables.devices, 30), Some("44444444".parse().unwrap()));
        let enrichment: Enrichment = [priced("11111111", 100.0), priced("44444444", 400.0)].into_iter().collect();
        let map = merge_cells(&tables.cell_locations);
        assert_eq!(site_mean_phone_price(&tables, &enrichment, &map)[0].mean(), Some(200.0));
    }
}
