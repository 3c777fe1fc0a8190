use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use super::{CdrEvent, NormalizedTables};
use crate::calendar::Calendar;
use crate::types::SimId;

/// SIMs whose record count falls in `(lower, upper]`; the top band has no
/// upper bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityBand {
    pub lower: Option<u64>,
    pub upper: Option<u64>,
    pub sims: u64,
    pub sim_share: f64,
    pub records: u64,
    pub activity_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityStats {
    /// Record count per SIM, indexed by [`SimId`].
    pub per_sim_counts: Vec<u64>,
    pub bands: Vec<ActivityBand>,
    /// Number of SIMs per count of distinct active days.
    pub active_day_histogram: BTreeMap<u32, u64>,
    pub transient_sims: u64,
}

/// Distinct local calendar days with activity, ascending. `events` must be
/// sorted by timestamp.
pub fn active_days(events: &[CdrEvent], calendar: &Calendar) -> Vec<NaiveDate> {
    let mut days: Vec<NaiveDate> = Vec::new();
    for e in events {
        let d = calendar.local_date(e.timestamp);
        if days.last() != Some(&d) {
            days.push(d);
        }
    }
    days
}

fn per_sim_days(tables: &NormalizedTables, calendar: &Calendar) -> Vec<Vec<NaiveDate>> {
    tables
        .sim_ranges()
        .into_par_iter()
        .map(|r| active_days(&tables.events[r], calendar))
        .collect()
}

/// Band edges must be strictly increasing.
pub fn activity_stats(tables: &NormalizedTables, calendar: &Calendar, band_edges: &[u64]) -> ActivityStats {
    debug_assert!(band_edges.windows(2).all(|w| w[0] < w[1]));
    let per_sim_counts: Vec<u64> = tables.sim_ranges().iter().map(|r| r.len() as u64).collect();
    let total_sims = per_sim_counts.len() as f64;
    let total_records: u64 = per_sim_counts.iter().sum();

    let mut bands: Vec<ActivityBand> = (0..=band_edges.len())
        .map(|i| ActivityBand {
            lower: i.checked_sub(1).map(|j| band_edges[j]),
            upper: band_edges.get(i).copied(),
            sims: 0,
            sim_share: 0.0,
            records: 0,
            activity_share: 0.0,
        })
        .collect();
    for &count in &per_sim_counts {
        let band = band_edges.partition_point(|&edge| edge < count);
        bands[band].sims += 1;
        bands[band].records += count;
    }
    for band in &mut bands {
        if total_sims > 0.0 {
            band.sim_share = band.sims as f64 / total_sims;
        }
        if total_records > 0 {
            band.activity_share = band.records as f64 / total_records as f64;
        }
    }

    let days = per_sim_days(tables, calendar);
    let mut active_day_histogram = BTreeMap::new();
    for d in &days {
        *active_day_histogram.entry(d.len() as u32).or_insert(0) += 1;
    }
    let transient_sims = days.iter().filter(|d| is_transient(d, 2, 7)).count() as u64;

    ActivityStats { per_sim_counts, bands, active_day_histogram, transient_sims }
}

fn is_transient(days: &[NaiveDate], min_days: usize, max_span_days: i64) -> bool {
    days.len() >= min_days && (days[days.len() - 1] - days[0]).num_days() <= max_span_days
}

/// SIMs active on at least `min_days` distinct days whose first and last
/// active days are at most `max_span_days` apart: probable visitors.
pub fn flag_transients(
    tables: &NormalizedTables,
    calendar: &Calendar,
    min_days: usize,
    max_span_days: i64,
) -> BTreeSet<SimId> {
    per_sim_days(tables, calendar)
        .iter()
        .enumerate()
        .filter(|(_, d)| is_transient(d, min_days.max(1), max_span_days))
        .map(|(i, _)| SimId(i as u32))
        .collect()
}
