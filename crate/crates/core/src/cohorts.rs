//! Analysis populations: activity filtering, dominant devices, non-phone
//! exclusion, peak responders and cohort comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, DayType};
use crate::device_catalog::Enrichment;
use crate::error::{Error, Result};
use crate::ingest::{CdrEvent, DeviceObservation, NormalizedTables};
use crate::types::{SimId, Tac};

pub const TAG_UNKNOWN_DEVICE: &str = "unknown_device";
pub const TAG_NO_DOMINANT_DEVICE: &str = "no_dominant_device";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub min_active_days: u32,
    pub min_workday_mean: f64,
    pub min_weekend_mean: f64,
    pub max_daily_activity: u64,
    /// A device is dominant when it owns strictly more than this share of a
    /// SIM's records.
    pub dominant_device_share: f64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_active_days: 20,
            min_workday_mean: 40.0,
            min_weekend_mean: 20.0,
            max_daily_activity: 1000,
            dominant_device_share: 0.5,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_workday_mean >= 0.0 && self.min_weekend_mean >= 0.0) {
            return Err(Error::Config("filter means must be non-negative".into()));
        }
        if !(self.dominant_device_share > 0.0 && self.dominant_device_share <= 1.0) {
            return Err(Error::Config("dominant_device_share must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A named SIM set with per-member tags and a note on how it was built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub name: String,
    pub members: BTreeMap<SimId, BTreeSet<String>>,
    pub provenance: String,
}

impl Cohort {
    pub fn new(name: impl Into<String>, provenance: impl Into<String>) -> Self {
        Cohort { name: name.into(), members: BTreeMap::new(), provenance: provenance.into() }
    }

    pub fn insert(&mut self, sim: SimId) {
        self.members.entry(sim).or_default();
    }

    pub fn insert_tagged(&mut self, sim: SimId, tag: &str) {
        self.members.entry(sim).or_default().insert(tag.to_string());
    }

    pub fn contains(&self, sim: SimId) -> bool {
        self.members.contains_key(&sim)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sims(&self) -> BTreeSet<SimId> {
        self.members.keys().copied().collect()
    }

    pub fn has_tag(&self, sim: SimId, tag: &str) -> bool {
        self.members.get(&sim).is_some_and(|t| t.contains(tag))
    }
}

/// `cohort_<name>.csv`: sim_id, tags (`;`-separated). The provenance goes in
/// a leading `#` comment line.
pub fn write_cohort<W: Write>(cohort: &Cohort, sims: &[String], mut w: W) -> Result<()> {
    writeln!(w, "# {}", cohort.provenance.replace('\n', " "))?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sim_id", "tags"])?;
    for (sim, tags) in &cohort.members {
        let tags: Vec<&str> = tags.iter().map(String::as_str).collect();
        out.write_record([sims[sim.index()].as_str(), &tags.join(";")])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cohort<R: Read>(name: &str, r: R, tables: &NormalizedTables) -> Result<Cohort> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    let (provenance, body) = match text.strip_prefix("# ") {
        Some(rest) => rest.split_once('\n').map(|(p, b)| (p.to_string(), b)).unwrap_or((rest.to_string(), "")),
        None => (String::new(), text.as_str()),
    };
    let mut cohort = Cohort::new(name, provenance);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    for rec in rdr.records() {
        let rec = rec?;
        let sim = tables
            .sim_id(&rec[0])
            .ok_or_else(|| Error::Data(format!("cohort {name}: unknown SIM {:?}", &rec[0])))?;
        cohort.insert(sim);
        for tag in rec[1].split(';').filter(|t| !t.is_empty()) {
            cohort.insert_tagged(sim, tag);
        }
    }
    Ok(cohort)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfile {
    pub devices: Vec<(Tac, u64)>,
    pub dominant: Option<Tac>,
}

/// `observations` are the device rows of a single SIM.
pub fn device_profile(observations: &[DeviceObservation], dominant_share: f64) -> DeviceProfile {
    let total: u64 = observations.iter().map(|d| d.event_count).sum();
    let devices: Vec<(Tac, u64)> = observations.iter().map(|d| (d.tac, d.event_count)).collect();
    let dominant = devices
        .iter()
        .find(|(_, n)| total > 0 && *n as f64 > dominant_share * total as f64)
        .map(|(t, _)| *t);
    DeviceProfile { devices, dominant }
}

/// Dominant device of every SIM, indexed by [`SimId`].
pub fn dominant_devices(tables: &NormalizedTables, dominant_share: f64) -> Vec<Option<Tac>> {
    tables
        .device_ranges()
        .into_iter()
        .map(|r| device_profile(&tables.devices[r], dominant_share).dominant)
        .collect()
}

/// Phone price of each SIM's dominant device, indexed by [`SimId`].
pub fn dominant_prices(dominant: &[Option<Tac>], enrichment: &Enrichment) -> Vec<Option<f64>> {
    dominant
        .iter()
        .map(|t| t.and_then(|t| enrichment.get(&t)).and_then(|e| e.phone_price()))
        .collect()
}

/// Partition of the SIM universe by device kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonePopulation {
    /// Retained SIMs; unresolved devices carry a tag.
    pub phones: Cohort,
    /// SIMs operating in non-phone devices.
    pub non_phone: BTreeSet<SimId>,
    /// Unresolved SIMs dropped because `exclude_unknown` was set.
    pub unknown_excluded: BTreeSet<SimId>,
}

pub fn phone_population(
    tables: &NormalizedTables,
    enrichment: &Enrichment,
    dominant_share: f64,
    exclude_unknown: bool,
) -> PhonePopulation {
    let mut phones = Cohort::new(
        "phone",
        format!(
            "dominant device (share > {dominant_share}) not flagged non-phone; unknown devices {}",
            if exclude_unknown { "excluded" } else { "kept and tagged" }
        ),
    );
    let mut non_phone = BTreeSet::new();
    let mut unknown_excluded = BTreeSet::new();
    let is_non_phone = |tac: &Tac| enrichment.get(tac).is_some_and(|e| e.non_phone);
    for (i, range) in tables.device_ranges().into_iter().enumerate() {
        let sim = SimId(i as u32);
        let obs = &tables.devices[range];
        let profile = device_profile(obs, dominant_share);
        let tag = match profile.dominant {
            Some(tac) if is_non_phone(&tac) => {
                non_phone.insert(sim);
                continue;
            }
            Some(tac) if enrichment.get(&tac).is_some_and(|e| e.matched) => None,
            Some(_) => Some(TAG_UNKNOWN_DEVICE),
            None if !obs.is_empty() && obs.iter().all(|d| is_non_phone(&d.tac)) => {
                non_phone.insert(sim);
                continue;
            }
            None => Some(TAG_NO_DOMINANT_DEVICE),
        };
        match tag {
            None => phones.insert(sim),
            Some(t) if exclude_unknown => {
                let _ = t;
                unknown_excluded.insert(sim);
            }
            Some(t) => phones.insert_tagged(sim, t),
        }
    }
    PhonePopulation { phones, non_phone, unknown_excluded }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyActivity {
    pub active_days: u32,
    pub workday_mean: f64,
    pub weekend_mean: f64,
    pub max_daily: u64,
}

/// Means are taken over active days of each day type.
pub fn daily_activity(events: &[CdrEvent], calendar: &Calendar) -> DailyActivity {
    let mut per_day: BTreeMap<chrono::NaiveDate, u64> = BTreeMap::new();
    for e in events {
        *per_day.entry(calendar.local_date(e.timestamp)).or_insert(0) += 1;
    }
    let (mut wd, mut wd_n, mut we, mut we_n) = (0u64, 0u64, 0u64, 0u64);
    for (&day, &n) in &per_day {
        match calendar.day_type(day) {
            DayType::Workday => {
                wd += n;
                wd_n += 1;
            }
            DayType::Weekend => {
                we += n;
                we_n += 1;
            }
        }
    }
    let mean = |sum: u64, n: u64| if n == 0 { 0.0 } else { sum as f64 / n as f64 };
    DailyActivity {
        active_days: per_day.len() as u32,
        workday_mean: mean(wd, wd_n),
        weekend_mean: mean(we, we_n),
        max_daily: per_day.values().copied().max().unwrap_or(0),
    }
}

pub fn passes_filter(activity: &DailyActivity, policy: &FilterPolicy) -> bool {
    activity.active_days >= policy.min_active_days
        && activity.workday_mean >= policy.min_workday_mean
        && activity.weekend_mean >= policy.min_weekend_mean
        && activity.max_daily <= policy.max_daily_activity
}

pub fn apply_activity_filter(tables: &NormalizedTables, policy: &FilterPolicy, calendar: &Calendar) -> Cohort {
    let keep: Vec<bool> = tables
        .sim_ranges()
        .into_par_iter()
        .map(|r| !r.is_empty() && passes_filter(&daily_activity(&tables.events[r], calendar), policy))
        .collect();
    let mut cohort = Cohort::new(
        "active",
        format!(
            "active days >= {}, workday mean >= {}, weekend mean >= {}, daily max <= {}",
            policy.min_active_days, policy.min_workday_mean, policy.min_weekend_mean, policy.max_daily_activity
        ),
    );
    for (i, k) in keep.into_iter().enumerate() {
        if k {
            cohort.insert(SimId(i as u32));
        }
    }
    cohort
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseWindow {
    /// Unix seconds, UTC.
    pub start: i64,
    pub minutes: u32,
}

impl ResponseWindow {
    pub fn end(&self) -> i64 {
        self.start + i64::from(self.minutes) * 60
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseWindows {
    windows: Vec<ResponseWindow>,
    k_required: usize,
}

impl ResponseWindows {
    pub fn new(mut windows: Vec<ResponseWindow>, k_required: usize) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::EmptyWindows);
        }
        windows.sort_by_key(|w| w.start);
        if windows.iter().any(|w| w.minutes == 0) {
            return Err(Error::Config("response windows must last at least a minute".into()));
        }
        if windows.windows(2).any(|p| p[0].end() > p[1].start) {
            return Err(Error::Config("response windows overlap".into()));
        }
        if k_required == 0 || k_required > windows.len() {
            return Err(Error::Config(format!("k_required must be in 1..={}", windows.len())));
        }
        Ok(ResponseWindows { windows, k_required })
    }

    pub fn windows(&self) -> &[ResponseWindow] {
        &self.windows
    }

    pub fn k_required(&self) -> usize {
        self.k_required
    }

    pub fn with_k(&self, k_required: usize) -> Result<Self> {
        ResponseWindows::new(self.windows.clone(), k_required)
    }

    /// Number of windows holding at least one of the timestamp-sorted events.
    pub fn windows_hit(&self, events: &[CdrEvent]) -> usize {
        self.windows
            .iter()
            .filter(|w| {
                let i = events.partition_point(|e| e.timestamp < w.start);
                events.get(i).is_some_and(|e| w.contains(e.timestamp))
            })
            .count()
    }
}

/// Members of `population` active in at least `k_required` windows.
pub fn select_peak_responders(tables: &NormalizedTables, windows: &ResponseWindows, population: &Cohort) -> Cohort {
    let ranges = tables.sim_ranges();
    let members: Vec<SimId> = population
        .members
        .keys()
        .copied()
        .collect::<Vec<_>>()
        .into_par_iter()
        .filter(|sim| windows.windows_hit(&tables.events[ranges[sim.index()].clone()]) >= windows.k_required)
        .collect();
    let mut cohort = Cohort::new(
        "fans",
        format!(
            "members of {} with activity in >= {} of {} windows",
            population.name,
            windows.k_required,
            windows.windows.len()
        ),
    );
    for sim in members {
        cohort.insert(sim);
    }
    cohort
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortAttribute {
    PhonePrice,
    PhoneAge,
    Gyration,
    Entropy,
    SubscriberAge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Summary {
        count: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandComparison {
    pub band: String,
    pub cohort: Option<Summary>,
    pub complement: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortComparison {
    pub attribute: CohortAttribute,
    pub overall: BandComparison,
    pub bands: Vec<BandComparison>,
    pub absent_cohort: usize,
    pub absent_complement: usize,
}

/// Age band label for `age` given ascending edges: `<e0`, `e0-e1`, ..., `>=en`.
pub fn age_band_label(age: Option<u8>, edges: &[u8]) -> String {
    let Some(age) = age else {
        return "unknown".into();
    };
    match edges.iter().position(|&e| age < e) {
        Some(0) => format!("<{}", edges[0]),
        Some(i) => format!("{}-{}", edges[i - 1], edges[i] - 1),
        None => format!(">={}", edges[edges.len() - 1]),
    }
}

/// Compares an attribute between a cohort and its complement, per age band.
/// `values` and `ages` are indexed by [`SimId`].
pub fn cohort_compare(
    cohort: &BTreeSet<SimId>,
    complement: &BTreeSet<SimId>,
    attribute: CohortAttribute,
    values: &[Option<f64>],
    ages: &[Option<u8>],
    age_edges: &[u8],
) -> Result<CohortComparison> {
    if cohort.is_empty() {
        return Err(Error::EmptyCohort("cohort".into()));
    }
    if complement.is_empty() {
        return Err(Error::EmptyCohort("complement".into()));
    }
    let mut by_band: BTreeMap<(usize, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_c, mut all_k) = (Vec::new(), Vec::new());
    let (mut absent_c, mut absent_k) = (0, 0);
    for (set, side) in [(cohort, 0), (complement, 1)] {
        for &sim in set {
            let Some(v) = values.get(sim.index()).copied().flatten() else {
                if side == 0 {
                    absent_c += 1;
                } else {
                    absent_k += 1;
                }
                continue;
            };
            let age = ages.get(sim.index()).copied().flatten();
            let order = age.map_or(usize::MAX, |a| age_edges.iter().filter(|&&e| e <= a).count());
            let entry = by_band.entry((order, age_band_label(age, age_edges))).or_default();
            if side == 0 {
                entry.0.push(v);
                all_c.push(v);
            } else {
                entry.1.push(v);
                all_k.push(v);
            }
        }
    }
    Ok(CohortComparison {
        attribute,
        overall: BandComparison { band: "all".into(), cohort: summarize(&all_c), complement: summarize(&all_k) },
        bands: by_band
            .into_iter()
            .map(|((_, band), (c, k))| BandComparison { band, cohort: summarize(&c), complement: summarize(&k) })
            .collect(),
        absent_cohort: absent_c,
        absent_complement: absent_k,
    })
}

/// Population estimate from an operator's observed count and market share.
pub fn scale_by_market_share(observed: u64, share: f64) -> Result<u64> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(Error::InvalidShare(share));
    }
    Ok((observed as f64 / share).round() as u64)
}
