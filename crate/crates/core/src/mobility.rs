//! Radius of gyration and normalized location entropy per subscriber.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, DayType};
use crate::error::{Error, Result};
use crate::ingest::NormalizedTables;
use crate::spatial::geometry::Point;
use crate::spatial::SiteMap;
use crate::types::{SimId, SiteId};

/// Visit counts over distinct locations with planar positions in km.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitVector {
    visits: Vec<(Point, u64)>,
    total: u64,
}

impl VisitVector {
    /// Every count must be at least one and at least one location given.
    pub fn new(visits: Vec<(Point, u64)>) -> Result<Self> {
        if visits.is_empty() || visits.iter().any(|&(_, n)| n == 0) {
            return Err(Error::Data("visit vector needs positive counts over at least one location".into()));
        }
        let total = visits.iter().map(|&(_, n)| n).sum();
        Ok(VisitVector { visits, total })
    }

    pub fn visits(&self) -> &[(Point, u64)] {
        &self.visits
    }

    /// Total number of activities N.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn locations(&self) -> usize {
        self.visits.len()
    }
}

pub fn center_of_mass(v: &VisitVector) -> Point {
    let origin = v.visits[0].0;
    let n = v.total as f64;
    let (sx, sy) = v.visits.iter().fold((0.0, 0.0), |(sx, sy), &(p, c)| {
        let d = p - origin;
        (sx + c as f64 * d.x, sy + c as f64 * d.y)
    });
    origin + Point::new(sx / n, sy / n)
}

/// RMS distance of the visits from their center of mass, in the units of
/// the positions.
pub fn radius_of_gyration(v: &VisitVector) -> f64 {
    if v.visits.len() == 1 {
        return 0.0;
    }
    let origin = v.visits[0].0;
    let n = v.total as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(p, c) in &v.visits {
        let d = p - origin;
        sx += c as f64 * d.x;
        sy += c as f64 * d.y;
    }
    let cm = Point::new(sx / n, sy / n);
    let ss: f64 = v.visits.iter().map(|&(p, c)| c as f64 * (p - origin - cm).norm2()).sum();
    (ss / n).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyNorm {
    /// Divide by the log of the number of activities.
    #[default]
    Activities,
    /// Divide by the log of the number of distinct locations.
    Locations,
}

/// Shannon entropy of the visit distribution (natural log), normalized into
/// [0, 1]. Zero when the normalizer is log 1.
pub fn entropy(v: &VisitVector, norm: EntropyNorm) -> f64 {
    let n = v.total as f64;
    let denom = match norm {
        EntropyNorm::Activities => n.ln(),
        EntropyNorm::Locations => (v.visits.len() as f64).ln(),
    };
    if denom == 0.0 || v.visits.len() == 1 {
        return 0.0;
    }
    // -sum p ln p with p = c / N, rearranged so unit counts contribute nothing.
    let weighted: f64 = v.visits.iter().map(|&(_, c)| c as f64 * (c as f64).ln()).sum();
    let h = n.ln() - weighted / n;
    (h / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityPeriod {
    Workday,
    Weekend,
    All,
}

impl MobilityPeriod {
    pub const ALL: [MobilityPeriod; 3] = [MobilityPeriod::Workday, MobilityPeriod::Weekend, MobilityPeriod::All];

    pub fn as_str(self) -> &'static str {
        match self {
            MobilityPeriod::Workday => "workday",
            MobilityPeriod::Weekend => "weekend",
            MobilityPeriod::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MobilityPeriod::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl From<DayType> for MobilityPeriod {
    fn from(d: DayType) -> Self {
        match d {
            DayType::Workday => MobilityPeriod::Workday,
            DayType::Weekend => MobilityPeriod::Weekend,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityRecord {
    pub sim: SimId,
    pub period: MobilityPeriod,
    pub r_g_km: f64,
    pub entropy: f64,
    pub n_events: u64,
    pub n_locations: u32,
}

/// Workday, weekend and whole-period metrics for each SIM in `sims`
/// (ascending). A day type without events yields no record. `positions` are
/// projected site coordinates indexed by [`SiteId`].
pub fn compute_mobility(
    tables: &NormalizedTables,
    map: &SiteMap,
    positions: &[Point],
    calendar: &Calendar,
    sims: &[SimId],
    norm: EntropyNorm,
) -> Vec<MobilityRecord> {
    let ranges = tables.sim_ranges();
    sims.par_iter()
        .map(|&sim| {
            let mut counts: [BTreeMap<SiteId, u64>; 2] = Default::default();
            for e in &tables.events[ranges[sim.index()].clone()] {
                let slot = match calendar.day_type(calendar.local_date(e.timestamp)) {
                    DayType::Workday => 0,
                    DayType::Weekend => 1,
                };
                *counts[slot].entry(map.site_of(e.cell)).or_insert(0) += 1;
            }
            let mut all = counts[0].clone();
            for (&s, &n) in &counts[1] {
                *all.entry(s).or_insert(0) += n;
            }
            let mut out = Vec::with_capacity(3);
            for (period, c) in MobilityPeriod::ALL.into_iter().zip([&counts[0], &counts[1], &all]) {
                if c.is_empty() {
                    continue;
                }
                let v = VisitVector::new(c.iter().map(|(s, &n)| (positions[s.index()], n)).collect())
                    .expect("non-empty counts");
                out.push(MobilityRecord {
                    sim,
                    period,
                    r_g_km: radius_of_gyration(&v),
                    entropy: entropy(&v, norm),
                    n_events: v.total(),
                    n_locations: v.locations() as u32,
                });
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub fn write_mobility<W: Write>(records: &[MobilityRecord], sims: &[String], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sim_id", "day_type", "r_g_km", "entropy", "n_events", "n_locations"])?;
    for r in records {
        out.write_record([
            sims[r.sim.index()].as_str(),
            r.period.as_str(),
            &r.r_g_km.to_string(),
            &r.entropy.to_string(),
            &r.n_events.to_string(),
            &r.n_locations.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mobility<R: Read>(r: R, tables: &NormalizedTables) -> Result<Vec<MobilityRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let bad = |what: &str, v: &str| Error::Data(format!("mobility: bad {what} {v:?}"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(MobilityRecord {
            sim: tables.sim_id(&rec[0]).ok_or_else(|| bad("sim_id", &rec[0]))?,
            period: MobilityPeriod::parse(&rec[1]).ok_or_else(|| bad("day_type", &rec[1]))?,
            r_g_km: rec[2].parse().map_err(|_| bad("r_g_km", &rec[2]))?,
            entropy: rec[3].parse().map_err(|_| bad("entropy", &rec[3]))?,
            n_events: rec[4].parse().map_err(|_| bad("n_events", &rec[4]))?,
            n_locations: rec[5].parse().map_err(|_| bad("n_locations", &rec[5]))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::parse_instant;
    use crate::ingest::{normalize, WideCdrRow};
    use crate::spatial::{merge_cells, site_positions, site_projection};
    use crate::types::{CustomerType, PaymentType};

    fn vv(v: &[((f64, f64), u64)]) -> VisitVector {
        VisitVector::new(v.iter().map(|&((x, y), n)| (Point::new(x, y), n)).collect()).unwrap()
    }

    #[test]
    fn center_examples() {
        assert_eq!(center_of_mass(&vv(&[((3.0, 4.0), 1)])), Point::new(3.0, 4.0));
        assert_eq!(center_of_mass(&vv(&[((0.0, 0.0), 1), ((2.0, 0.0), 1)])), Point::new(1.0, 0.0));
        assert_eq!(center_of_mass(&vv(&[((0.0, 0.0), 3), ((4.0, 0.0), 1)])), Point::new(1.0, 0.0));
    }

    #[test]
    fn gyration_examples() {
        assert_eq!(radius_of_gyration(&vv(&[((0.1, 0.7), 3)])), 0.0);
        assert_eq!(radius_of_gyration(&vv(&[((0.0, 0.0), 1), ((1.0, 0.0), 1)])), 0.5);
        // Two points d apart with weights a, b: d * sqrt(ab) / (a + b).
        let r = radius_of_gyration(&vv(&[((0.0, 0.0), 3), ((4.0, 0.0), 1)]));
        assert!((r - 4.0 * 3f64.sqrt() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        for n in [2usize, 10, 100] {
            let v = vv(&(0..n).map(|i| ((i as f64, 0.0), 1)).collect::<Vec<_>>());
            assert_eq!(entropy(&v, EntropyNorm::Activities), 1.0);
        }
        assert_eq!(entropy(&vv(&[((0.0, 0.0), 7)]), EntropyNorm::Activities), 0.0);
        assert_eq!(entropy(&vv(&[((0.0, 0.0), 1)]), EntropyNorm::Activities), 0.0);
        let e = entropy(&vv(&[((0.0, 0.0), 3), ((1.0, 0.0), 1)]), EntropyNorm::Activities);
        assert!((e - 0.4056).abs() < 5e-4, "{e}");
        let by_locations = entropy(&vv(&[((0.0, 0.0), 2), ((1.0, 0.0), 2)]), EntropyNorm::Locations);
        assert!((by_locations - 1.0).abs() < 1e-15);
    }

    fn row(sim: &str, at: &str, cell: &str, lon: f64, cal: &Calendar) -> WideCdrRow {
        WideCdrRow {
            sim_id: sim.into(),
            timestamp: parse_instant(at, cal).unwrap(),
            cell_id: cell.into(),
            site_lon: lon,
            site_lat: 47.5,
            age: None,
            sex: None,
            customer_type: CustomerType::Consumer,
            payment_type: PaymentType::Prepaid,
            tac: "12345678".parse().unwrap(),
        }
    }

    #[test]
    fn day_type_split() {
        let cal = Calendar::hungary_june_2016();
        // 2016-06-01 is a Wednesday, 2016-06-04 a Saturday.
        let tables = normalize(vec![
            row("weekday", "2016-06-01T08:00", "H", 19.0, &cal),
            row("weekday", "2016-06-01T12:00", "W", 19.1, &cal),
            row("both", "2016-06-01T08:00", "H", 19.0, &cal),
            row("both", "2016-06-04T08:00", "H", 19.0, &cal),
        ]);
        let map = merge_cells(&tables.cell_locations);
        let pos = site_positions(&map, &site_projection(&map));
        let sims: Vec<SimId> = (0..tables.sims.len() as u32).map(SimId).collect();
        let recs = compute_mobility(&tables, &map, &pos, &cal, &sims, EntropyNorm::Activities);
        let of = |name: &str| -> Vec<MobilityPeriod> {
            let id = tables.sim_id(name).unwrap();
            recs.iter().filter(|r| r.sim == id).map(|r| r.period).collect()
        };
        assert_eq!(of("weekday"), vec![MobilityPeriod::Workday, MobilityPeriod::All]);
        assert_eq!(of("both"), MobilityPeriod::ALL.to_vec());
        let commuter = recs.iter().find(|r| r.sim == tables.sim_id("weekday").unwrap()).unwrap();
        let d = pos[0].dist(pos[1]);
        assert!((commuter.r_g_km - d / 2.0).abs() < 1e-12);
        assert_eq!(commuter.entropy, 1.0);

        let mut buf = Vec::new();
        write_mobility(&recs, &tables.sims, &mut buf).unwrap();
        assert_eq!(read_mobility(&buf[..], &tables).unwrap(), recs);
    }
}
