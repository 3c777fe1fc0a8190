//! Deterministic synthetic city: sites, subscribers with homes, workplaces
//! and devices, diurnal calling activity and planted events with their
//! ground truth.
//!
//! Everything is drawn from one ChaCha8 stream seeded by
//! [`ScenarioConfig::seed`], in a fixed order, so a configuration always
//! produces the same bytes.

mod catalog;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, Timelike};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, CalendarFile, DayType};
use crate::device_catalog::{write_blocklist, write_spec_catalog, write_tac_catalog, SpecCatalogRow, TacCatalogRow};
use crate::error::{Error, Result};
use crate::event_detection::{check_bin_width, reference_profile, SeriesCube};
use crate::spatial::geometry::{Point, Projection};
use crate::types::{CustomerType, PaymentType, Sex, Tac};

pub const CDR_FILE: &str = "synthetic_cdr.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const TAC_CATALOG_FILE: &str = "tac_catalog.csv";
pub const SPEC_CATALOG_FILE: &str = "spec_catalog.csv";
pub const BLOCKLIST_FILE: &str = "tac_blocklist.txt";
pub const CALENDAR_FILE: &str = "calendar.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub calendar: CalendarFile,
    pub n_sites: usize,
    pub n_subscribers: usize,
    pub city: CityConfig,
    pub activity: ActivityConfig,
    pub movement: MovementConfig,
    pub devices: DeviceMix,
    pub demographics: Demographics,
    pub plants: Vec<Plant>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            calendar: Calendar::hungary_june_2016().to_file(),
            n_sites: 120,
            n_subscribers: 2000,
            city: CityConfig::default(),
            activity: ActivityConfig::default(),
            movement: MovementConfig::default(),
            devices: DeviceMix::default(),
            demographics: Demographics::default(),
            plants: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityConfig {
    pub center_lon: f64,
    pub center_lat: f64,
    pub radius_km: f64,
    pub max_cells_per_site: u32,
    /// Homes inside this disc draw pricier phones.
    pub rich_district: Option<RichDistrict>,
}

impl Default for CityConfig {
    fn default() -> Self {
        CityConfig { center_lon: 19.05, center_lat: 47.5, radius_km: 12.0, max_cells_per_site: 3, rich_district: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RichDistrict {
    /// East and north offset of the centre from the city centre.
    pub offset_km: [f64; 2],
    pub radius_km: f64,
    /// Replaces [`DeviceMix::price_scale_eur`] for residents.
    pub price_scale_eur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivityConfig {
    pub events_per_day: f64,
    /// Log-normal sigma of the per-subscriber rate multiplier (mean 1).
    pub dispersion: f64,
    pub weekend_factor: f64,
    pub diurnal: DiurnalCurve,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        ActivityConfig { events_per_day: 6.0, dispersion: 0.5, weekend_factor: 0.8, diurnal: DiurnalCurve::default() }
    }
}

/// Relative intensity over the local day: a constant base plus a morning and
/// an evening Gaussian bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiurnalCurve {
    pub base: f64,
    pub morning: Bump,
    pub evening: Bump,
}

impl Default for DiurnalCurve {
    fn default() -> Self {
        DiurnalCurve {
            base: 0.1,
            morning: Bump { hour: 9.5, width_hours: 2.0, weight: 1.0 },
            evening: Bump { hour: 18.0, width_hours: 3.0, weight: 1.2 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub hour: f64,
    pub width_hours: f64,
    pub weight: f64,
}

impl DiurnalCurve {
    pub fn intensity(&self, hour: f64) -> f64 {
        let g = |b: &Bump| b.weight * (-0.5 * ((hour - b.hour) / b.width_hours).powi(2)).exp();
        self.base + g(&self.morning) + g(&self.evening)
    }

    /// Cumulative weights of the 1440 minutes of a day.
    fn minute_cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        (0..1440)
            .map(|m| {
                acc += self.intensity((f64::from(m) + 0.5) / 60.0);
                acc
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MovementConfig {
    pub commute_km: f64,
    /// Log-normal sigma of the individual commute length.
    pub commute_spread: f64,
    /// Relative commute increase per 100 EUR of phone price.
    pub price_gain: f64,
    /// Local hours `[from, to)` spent at work on workdays.
    pub work_hours: [u32; 2],
    pub work_share: f64,
    pub home_share: f64,
    pub favourites: usize,
    pub favourite_radius_km: f64,
    /// Share of roaming events at a uniformly drawn site.
    pub explore_share: f64,
}

impl Default for MovementConfig {
    fn default() -> Self {
        MovementConfig {
            commute_km: 3.0,
            commute_spread: 0.4,
            price_gain: 0.3,
            work_hours: [8, 17],
            work_share: 0.7,
            home_share: 0.75,
            favourites: 2,
            favourite_radius_km: 1.5,
            explore_share: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceMix {
    pub non_phone_fraction: f64,
    /// Phones whose TAC is absent from every catalog.
    pub unknown_tac_fraction: f64,
    /// Subscribers switching to a second phone mid-period.
    pub second_device_fraction: f64,
    /// Model weights fall as `exp(-price / price_scale_eur)`.
    pub price_scale_eur: f64,
}

impl Default for DeviceMix {
    fn default() -> Self {
        DeviceMix { non_phone_fraction: 0.03, unknown_tac_fraction: 0.02, second_device_fraction: 0.05, price_scale_eur: 250.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Demographics {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: u8,
    pub age_max: u8,
    pub missing_age_fraction: f64,
    pub female_fraction: f64,
    pub missing_sex_fraction: f64,
    pub business_fraction: f64,
    pub prepaid_fraction: f64,
}

impl Default for Demographics {
    fn default() -> Self {
        Demographics {
            age_mean: 42.0,
            age_sd: 15.0,
            age_min: 16,
            age_max: 90,
            missing_age_fraction: 0.05,
            female_fraction: 0.5,
            missing_sex_fraction: 0.02,
            business_fraction: 0.1,
            prepaid_fraction: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteSelector {
    /// Each subscriber's home site (peak plants only).
    Home,
    All,
    Indices(Vec<usize>),
    Nearest { offset_km: [f64; 2], count: usize },
    Within { offset_km: [f64; 2], radius_km: f64 },
}

fn five() -> u32 {
    5
}

fn two() -> usize {
    2
}

fn ten() -> f64 {
    10.0
}

fn home() -> SiteSelector {
    SiteSelector::Home
}

fn all() -> SiteSelector {
    SiteSelector::All
}

/// Planted anomaly. Times are local wall-clock times on `day`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Plant {
    /// Sampled phone subscribers add one event in each of at least
    /// `min_windows` randomly chosen windows.
    Peak {
        day: NaiveDate,
        times: Vec<NaiveTime>,
        #[serde(default = "five")]
        window_minutes: u32,
        #[serde(default)]
        cohort_fraction: f64,
        /// Exact responder count; overrides `cohort_fraction`.
        #[serde(default)]
        cohort_size: Option<usize>,
        #[serde(default = "two")]
        min_windows: usize,
        #[serde(default = "home")]
        sites: SiteSelector,
    },
    /// Background events in the window are kept with probability `amplitude`.
    Suppression {
        day: NaiveDate,
        start: NaiveTime,
        minutes: u32,
        #[serde(default = "all")]
        sites: SiteSelector,
        amplitude: f64,
    },
    /// Site activity in the window is scaled up to `amplitude` times.
    Festival { day: NaiveDate, start: NaiveTime, minutes: u32, sites: SiteSelector, amplitude: f64 },
    /// Raises one bin to at least `sigma_multiple` reference deviations
    /// above the reference mean.
    Spike {
        day: NaiveDate,
        time: NaiveTime,
        sites: SiteSelector,
        #[serde(default = "five")]
        bin_minutes: u32,
        #[serde(default = "ten")]
        sigma_multiple: f64,
    },
}

impl Plant {
    pub fn kind(&self) -> &'static str {
        match self {
            Plant::Peak { .. } => "peak",
            Plant::Suppression { .. } => "suppression",
            Plant::Festival { .. } => "festival",
            Plant::Spike { .. } => "spike",
        }
    }

    pub fn day(&self) -> NaiveDate {
        match self {
            Plant::Peak { day, .. }
            | Plant::Suppression { day, .. }
            | Plant::Festival { day, .. }
            | Plant::Spike { day, .. } => *day,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub rows: u64,
    pub sites: Vec<SiteTruth>,
    pub subscribers: Vec<SubscriberTruth>,
    pub plants: Vec<PlantTruth>,
}

impl GroundTruth {
    /// Union of all peak responders.
    pub fn responders(&self) -> BTreeSet<&str> {
        self.plants.iter().flat_map(|p| p.responders.iter().map(String::as_str)).collect()
    }

    pub fn site_of_cell(&self, cell: &str) -> Option<usize> {
        self.sites.iter().find(|s| s.cells.iter().any(|c| c == cell)).map(|s| s.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub index: usize,
    pub lon: f64,
    pub lat: f64,
    pub cells: Vec<String>,
    pub rich: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Phone,
    Unknown,
    NonPhone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscriberTruth {
    pub sim: String,
    pub home_site: usize,
    pub work_site: usize,
    pub favourite_sites: Vec<usize>,
    /// Drawn home-to-work distance before snapping to sites.
    pub commute_km: f64,
    pub device: DeviceKind,
    pub tac: Tac,
    pub price_eur: Option<f64>,
    pub second_tac: Option<Tac>,
    pub switch_day: Option<NaiveDate>,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTruth {
    pub start_local: String,
    /// Unix seconds.
    pub start: i64,
    pub minutes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTruth {
    pub site: usize,
    pub bin: usize,
    pub bin_minutes: u32,
    pub mu: f64,
    pub sigma: f64,
    pub before: u32,
    pub after: u32,
    pub expected_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTruth {
    pub kind: String,
    pub day: NaiveDate,
    /// Resolved site indices; empty for home-site peaks.
    pub sites: Vec<usize>,
    pub windows: Vec<WindowTruth>,
    pub responders: Vec<String>,
    pub added_events: u64,
    pub removed_events: u64,
    pub spikes: Vec<SpikeTruth>,
}

/// Everything written next to the CDR file.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: GroundTruth,
    pub tac_catalog: Vec<TacCatalogRow>,
    pub spec_catalog: Vec<SpecCatalogRow>,
    pub blocklist: BTreeSet<Tac>,
    pub calendar: Calendar,
}

fn infeasible(msg: String) -> Error {
    Error::InfeasibleScenario(msg)
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(infeasible(format!("{name} = {v} is not in [0, 1]")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(infeasible(format!("{name} = {v} must be positive")))
    }
}

fn minute_of(t: NaiveTime) -> u32 {
    t.hour() * 60 + t.minute()
}

fn check_window(what: &str, start: NaiveTime, minutes: u32) -> Result<()> {
    if minutes == 0 || minute_of(start) + minutes > 1440 {
        return Err(infeasible(format!("{what} window {start} + {minutes} min is empty or crosses midnight")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<Calendar> {
        let calendar = Calendar::from_file(&self.calendar)?;
        if self.n_sites < 3 {
            return Err(infeasible(format!("need at least 3 sites, got {}", self.n_sites)));
        }
        if self.n_subscribers == 0 {
            return Err(infeasible("no subscribers".into()));
        }
        let c = &self.city;
        check_positive("city.radius_km", c.radius_km)?;
        if !(c.center_lon.abs() <= 180.0 && c.center_lat.abs() < 85.0) {
            return Err(infeasible("city centre out of range".into()));
        }
        if c.max_cells_per_site == 0 || c.max_cells_per_site > 9 {
            return Err(infeasible("max_cells_per_site must be in 1..=9".into()));
        }
        if let Some(r) = &c.rich_district {
            check_positive("rich_district.radius_km", r.radius_km)?;
            check_positive("rich_district.price_scale_eur", r.price_scale_eur)?;
        }
        let a = &self.activity;
        check_positive("activity.events_per_day", a.events_per_day)?;
        if !(a.dispersion >= 0.0 && a.weekend_factor >= 0.0 && a.dispersion.is_finite() && a.weekend_factor.is_finite()) {
            return Err(infeasible("dispersion and weekend_factor must be non-negative".into()));
        }
        let d = &a.diurnal;
        for b in [d.morning, d.evening] {
            check_positive("diurnal width", b.width_hours)?;
            if !(b.weight >= 0.0) {
                return Err(infeasible("diurnal weights must be non-negative".into()));
            }
        }
        if !(d.base >= 0.0) || d.minute_cdf()[1439] <= 0.0 {
            return Err(infeasible("diurnal curve has no mass".into()));
        }
        let m = &self.movement;
        if !(m.commute_km >= 0.0 && m.commute_spread >= 0.0 && m.price_gain >= 0.0 && m.favourite_radius_km >= 0.0) {
            return Err(infeasible("movement parameters must be non-negative".into()));
        }
        if m.work_hours[0] >= m.work_hours[1] || m.work_hours[1] > 24 {
            return Err(infeasible(format!("bad work hours {:?}", m.work_hours)));
        }
        check_fraction("movement.work_share", m.work_share)?;
        check_fraction("movement.home_share", m.home_share)?;
        check_fraction("movement.explore_share", m.explore_share)?;
        let v = &self.devices;
        check_fraction("devices.non_phone_fraction", v.non_phone_fraction)?;
        check_fraction("devices.unknown_tac_fraction", v.unknown_tac_fraction)?;
        check_fraction("devices.second_device_fraction", v.second_device_fraction)?;
        check_fraction("non_phone + unknown_tac fractions", v.non_phone_fraction + v.unknown_tac_fraction)?;
        check_positive("devices.price_scale_eur", v.price_scale_eur)?;
        let g = &self.demographics;
        if g.age_min > g.age_max || g.age_max > 120 || !(g.age_sd >= 0.0) || !g.age_mean.is_finite() {
            return Err(infeasible("bad age distribution".into()));
        }
        check_fraction("demographics.missing_age_fraction", g.missing_age_fraction)?;
        check_fraction("demographics.female_fraction", g.female_fraction)?;
        check_fraction("demographics.missing_sex_fraction", g.missing_sex_fraction)?;
        check_fraction("demographics.business_fraction", g.business_fraction)?;
        check_fraction("demographics.prepaid_fraction", g.prepaid_fraction)?;
        for (i, p) in self.plants.iter().enumerate() {
            if !calendar.contains(p.day()) {
                return Err(infeasible(format!("plant {i}: day {} outside the calendar", p.day())));
            }
            self.validate_plant(i, p, &calendar)?;
        }
        Ok(calendar)
    }

    fn validate_selector(&self, i: usize, s: &SiteSelector, home_ok: bool) -> Result<()> {
        match s {
            SiteSelector::Home if !home_ok => Err(infeasible(format!("plant {i}: home sites only apply to peaks"))),
            SiteSelector::Indices(v) if v.is_empty() || v.iter().any(|&x| x >= self.n_sites) => {
                Err(infeasible(format!("plant {i}: site indices must be non-empty and below {}", self.n_sites)))
            }
            SiteSelector::Nearest { count, .. } if *count == 0 || *count > self.n_sites => {
                Err(infeasible(format!("plant {i}: nearest count {count} out of range")))
            }
            SiteSelector::Within { radius_km, .. } if !(*radius_km > 0.0) => {
                Err(infeasible(format!("plant {i}: radius must be positive")))
            }
            _ => Ok(()),
        }
    }

    fn validate_plant(&self, i: usize, p: &Plant, calendar: &Calendar) -> Result<()> {
        match p {
            Plant::Peak { times, window_minutes, cohort_fraction, cohort_size, min_windows, sites, .. } => {
                if times.is_empty() {
                    return Err(infeasible(format!("plant {i}: no peak times")));
                }
                check_fraction(&format!("plant {i}: cohort_fraction"), *cohort_fraction)?;
                if *cohort_size == Some(0) && *cohort_fraction > 0.0 {
                    return Err(infeasible(format!("plant {i}: cohort_size 0 with positive fraction")));
                }
                if *min_windows == 0 || *min_windows > times.len() {
                    return Err(infeasible(format!("plant {i}: min_windows {min_windows} not in 1..={}", times.len())));
                }
                let mut sorted = times.clone();
                sorted.sort();
                for t in &sorted {
                    check_window(&format!("plant {i}"), *t, *window_minutes)?;
                }
                if sorted.windows(2).any(|w| minute_of(w[1]) < minute_of(w[0]) + window_minutes) {
                    return Err(infeasible(format!("plant {i}: peak windows overlap")));
                }
                self.validate_selector(i, sites, true)
            }
            Plant::Suppression { start, minutes, sites, amplitude, .. } => {
                check_window(&format!("plant {i}"), *start, *minutes)?;
                check_fraction(&format!("plant {i}: amplitude"), *amplitude)?;
                self.validate_selector(i, sites, false)
            }
            Plant::Festival { start, minutes, sites, amplitude, .. } => {
                check_window(&format!("plant {i}"), *start, *minutes)?;
                if !(amplitude.is_finite() && *amplitude >= 1.0) {
                    return Err(infeasible(format!("plant {i}: festival amplitude {amplitude} below 1")));
                }
                self.validate_selector(i, sites, false)
            }
            Plant::Spike { day, sites, bin_minutes, sigma_multiple, .. } => {
                check_bin_width(*bin_minutes).map_err(|e| infeasible(format!("plant {i}: {e}")))?;
                check_positive(&format!("plant {i}: sigma_multiple"), *sigma_multiple)?;
                let kind = calendar.day_type(*day);
                let reference = calendar.days().filter(|d| d != day && calendar.day_type(*d) == kind).count();
                if reference < 2 {
                    return Err(infeasible(format!("plant {i}: only {reference} reference day(s) for a spike")));
                }
                self.validate_selector(i, sites, false)
            }
        }
    }
}

struct City {
    positions: Vec<Point>,
    lon_lat: Vec<(f64, f64)>,
    cells: Vec<Vec<String>>,
    rich: Vec<bool>,
}

impl City {
    fn nearest(&self, p: Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.positions.iter().enumerate() {
            let d = (*q - p).norm2();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn resolve(&self, s: &SiteSelector) -> Vec<usize> {
        let at = |o: &[f64; 2]| Point { x: o[0], y: o[1] };
        match s {
            SiteSelector::Home => Vec::new(),
            SiteSelector::All => (0..self.positions.len()).collect(),
            SiteSelector::Indices(v) => v.iter().copied().collect::<BTreeSet<_>>().into_iter().collect(),
            SiteSelector::Nearest { offset_km, count } => {
                let c = at(offset_km);
                let mut order: Vec<usize> = (0..self.positions.len()).collect();
                order.sort_by(|&a, &b| (self.positions[a] - c).norm2().total_cmp(&(self.positions[b] - c).norm2()).then(a.cmp(&b)));
                let mut v = order[..*count].to_vec();
                v.sort_unstable();
                v
            }
            SiteSelector::Within { offset_km, radius_km } => {
                let c = at(offset_km);
                let inside: Vec<usize> =
                    (0..self.positions.len()).filter(|&i| (self.positions[i] - c).norm2() <= radius_km * radius_km).collect();
                if inside.is_empty() {
                    vec![self.nearest(c)]
                } else {
                    inside
                }
            }
        }
    }
}

fn micro(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

fn disc_point(rng: &mut ChaCha8Rng, radius: f64) -> Point {
    let r = radius * rng.gen::<f64>().sqrt();
    let a = rng.gen::<f64>() * std::f64::consts::TAU;
    Point { x: r * a.cos(), y: r * a.sin() }
}

fn build_city(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> City {
    let projection = Projection::new(cfg.city.center_lon, cfg.city.center_lat);
    let mut seen = BTreeSet::new();
    let mut keyed = Vec::with_capacity(cfg.n_sites);
    while keyed.len() < cfg.n_sites {
        let (lon, lat) = projection.inverse(disc_point(rng, cfg.city.radius_km));
        let key = (micro(lon), micro(lat));
        if seen.insert(key) {
            keyed.push(key);
        }
    }
    keyed.sort_unstable();
    let lon_lat: Vec<(f64, f64)> = keyed.iter().map(|&(x, y)| (x as f64 / 1e6, y as f64 / 1e6)).collect();
    let positions: Vec<Point> = lon_lat.iter().map(|&(lon, lat)| projection.forward(lon, lat)).collect();
    let cells = (0..cfg.n_sites)
        .map(|i| {
            let n = rng.gen_range(1..=cfg.city.max_cells_per_site);
            (1..=n).map(|k| format!("C{i:04}-{k}")).collect()
        })
        .collect();
    let rich = positions
        .iter()
        .map(|p| match &cfg.city.rich_district {
            Some(r) => (*p - Point { x: r.offset_km[0], y: r.offset_km[1] }).norm2() <= r.radius_km * r.radius_km,
            None => false,
        })
        .collect();
    City { positions, lon_lat, cells, rich }
}

struct Subscriber {
    name: String,
    /// `age,sex,customer,payment,` ready to write.
    attrs: String,
    home: usize,
    work: usize,
    favourites: Vec<usize>,
    rate: f64,
    kind: DeviceKind,
    tac: Tac,
    price: Option<f64>,
    second: Option<(Tac, usize)>,
    commute_km: f64,
    events: u64,
}

impl Subscriber {
    fn tac_on(&self, day: usize) -> Tac {
        match self.second {
            Some((t, from)) if day >= from => t,
            _ => self.tac,
        }
    }
}

fn draw_subscribers(cfg: &ScenarioConfig, city: &City, toy: &catalog::ToyCatalog, n_days: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Subscriber>> {
    let g = &cfg.demographics;
    let age_dist = Normal::new(g.age_mean, g.age_sd.max(1e-9)).map_err(|e| infeasible(e.to_string()))?;
    let spread = |s: f64| Normal::new(-0.5 * s * s, s.max(1e-12)).map_err(|e| infeasible(e.to_string()));
    let rate_dist = spread(cfg.activity.dispersion)?;
    let commute_dist = spread(cfg.movement.commute_spread)?;
    let weights = |scale: f64| {
        WeightedIndex::new(toy.phones.iter().map(|(_, p)| (-p / scale).exp())).map_err(|e| infeasible(e.to_string()))
    };
    let normal_pick = weights(cfg.devices.price_scale_eur)?;
    let rich_pick = match &cfg.city.rich_district {
        Some(r) => Some(weights(r.price_scale_eur)?),
        None => None,
    };
    let radius = cfg.city.radius_km;
    let mut subs = Vec::with_capacity(cfg.n_subscribers);
    for idx in 0..cfg.n_subscribers {
        let age = if rng.gen::<f64>() < g.missing_age_fraction {
            None
        } else {
            Some(age_dist.sample(rng).round().clamp(f64::from(g.age_min), f64::from(g.age_max)) as u8)
        };
        let sex = if rng.gen::<f64>() < g.missing_sex_fraction {
            None
        } else if rng.gen::<f64>() < g.female_fraction {
            Some(Sex::Female)
        } else {
            Some(Sex::Male)
        };
        let customer = if rng.gen::<f64>() < g.business_fraction { CustomerType::Business } else { CustomerType::Consumer };
        let payment = if rng.gen::<f64>() < g.prepaid_fraction { PaymentType::Prepaid } else { PaymentType::Postpaid };
        let attrs = format!(
            "{},{},{},{},",
            age.map(|a| a.to_string()).unwrap_or_default(),
            sex.map(Sex::as_str).unwrap_or(""),
            customer.as_str(),
            payment.as_str()
        );

        let home_pt = loop {
            let p = Point { x: rng.sample::<f64, _>(rand_distr::StandardNormal), y: rng.sample::<f64, _>(rand_distr::StandardNormal) }
                * (radius / 2.0);
            if p.norm2() <= radius * radius {
                break p;
            }
        };
        let home = city.nearest(home_pt);

        let u = rng.gen::<f64>();
        let (kind, tac, model) = if u < cfg.devices.non_phone_fraction {
            (DeviceKind::NonPhone, *toy.non_phone_tacs.choose(rng).unwrap(), None)
        } else if u < cfg.devices.non_phone_fraction + cfg.devices.unknown_tac_fraction {
            (DeviceKind::Unknown, *toy.unknown_tacs.choose(rng).unwrap(), None)
        } else {
            let pick = match &rich_pick {
                Some(r) if city.rich[home] => r,
                _ => &normal_pick,
            };
            let m = pick.sample(rng);
            (DeviceKind::Phone, *toy.phones[m].0.choose(rng).unwrap(), Some(m))
        };
        let price = model.map(|m| toy.phones[m].1);

        let (work, favourites, commute_km) = if kind == DeviceKind::NonPhone {
            (home, Vec::new(), 0.0)
        } else {
            let gain = 1.0 + cfg.movement.price_gain * price.unwrap_or(0.0) / 100.0;
            let d = cfg.movement.commute_km * gain * commute_dist.sample(rng).exp();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            let mut w = home_pt + Point { x: a.cos(), y: a.sin() } * d;
            let n = w.norm2().sqrt();
            if n > radius {
                w = w * (radius / n);
            }
            let favs = (0..cfg.movement.favourites)
                .map(|_| {
                    let p = home_pt + Point { x: rng.sample::<f64, _>(rand_distr::StandardNormal), y: rng.sample::<f64, _>(rand_distr::StandardNormal) }
                        * cfg.movement.favourite_radius_km;
                    city.nearest(p)
                })
                .collect();
            (city.nearest(w), favs, d)
        };
        let rate = cfg.activity.events_per_day * rate_dist.sample(rng).exp();
        let second = if kind == DeviceKind::Phone && n_days > 1 && rng.gen::<f64>() < cfg.devices.second_device_fraction {
            let m = normal_pick.sample(rng);
            let t = *toy.phones[m].0.choose(rng).unwrap();
            let from = rng.gen_range(1..n_days);
            (t != tac).then_some((t, from))
        } else {
            None
        };
        subs.push(Subscriber {
            name: format!("S{idx:07}"),
            attrs,
            home,
            work,
            favourites,
            rate,
            kind,
            tac,
            price,
            second,
            commute_km,
            events: 0,
        });
    }
    Ok(subs)
}

/// One emitted record before formatting.
#[derive(Debug, Clone, Copy)]
struct Ev {
    ts: i64,
    site: u32,
    day: u16,
    minute: u32,
    cell: u8,
}

struct Clock {
    days: Vec<NaiveDate>,
    midnights: Vec<i64>,
    regular: Vec<bool>,
}

impl Clock {
    fn new(calendar: &Calendar) -> Self {
        let days: Vec<NaiveDate> = calendar.days().collect();
        let midnights: Vec<i64> = days.iter().map(|&d| calendar.local_midnight_utc(d)).collect();
        let regular = days
            .iter()
            .zip(&midnights)
            .map(|(&d, &m)| calendar.local_midnight_utc(d + Duration::days(1)) - m == 86_400)
            .collect();
        Clock { days, midnights, regular }
    }

    fn utc(&self, calendar: &Calendar, day: usize, second_of_day: u32) -> i64 {
        if self.regular[day] {
            self.midnights[day] + i64::from(second_of_day)
        } else {
            calendar.to_utc(self.days[day].and_time(NaiveTime::MIN) + Duration::seconds(i64::from(second_of_day)))
        }
    }
}

/// Streaming writer of wide rows with a cached UTC date prefix.
struct RowWriter<W: Write> {
    out: W,
    line: Vec<u8>,
    date_day: i64,
    date: [u8; 11],
    rows: u64,
}

impl<W: Write> RowWriter<W> {
    fn new(mut out: W) -> Result<Self> {
        out.write_all(b"sim_id,timestamp,cell_id,site_lon,site_lat,age,sex,customer_type,payment_type,tac\n")?;
        Ok(RowWriter { out, line: Vec::with_capacity(128), date_day: i64::MIN, date: [0; 11], rows: 0 })
    }

    fn push2(&mut self, v: u32) {
        self.line.push(b'0' + (v / 10) as u8);
        self.line.push(b'0' + (v % 10) as u8);
    }

    fn write(&mut self, sim: &str, ts: i64, cell: &str, attrs: &str, tac: Tac) -> Result<()> {
        let day = ts.div_euclid(86_400);
        if day != self.date_day {
            let d = NaiveDate::from_num_days_from_ce_opt((day + 719_163) as i32).expect("date in range");
            let text = format!("{:04}-{:02}-{:02}T", d.year(), d.month(), d.day());
            self.date.copy_from_slice(text.as_bytes());
            self.date_day = day;
        }
        let sod = ts.rem_euclid(86_400) as u32;
        self.line.clear();
        self.line.extend_from_slice(sim.as_bytes());
        self.line.push(b',');
        self.line.extend_from_slice(&self.date);
        self.push2(sod / 3600);
        self.line.push(b':');
        self.push2(sod / 60 % 60);
        self.line.push(b':');
        self.push2(sod % 60);
        self.line.extend_from_slice(b"Z,");
        self.line.extend_from_slice(cell.as_bytes());
        self.line.push(b',');
        self.line.extend_from_slice(attrs.as_bytes());
        write!(self.line, "{tac}\n")?;
        self.out.write_all(&self.line)?;
        self.rows += 1;
        Ok(())
    }
}

/// Minute-resolution counts for the sites that festival and spike plants
/// read back.
struct Tracked {
    n_days: usize,
    minutes: HashMap<usize, Vec<u32>>,
}

impl Tracked {
    fn record(&mut self, site: usize, day: usize, minute: u32) {
        if let Some(v) = self.minutes.get_mut(&site) {
            v[day * 1440 + minute as usize] += 1;
        }
    }

    fn window(&self, site: usize, day: usize, start: u32, minutes: u32) -> u64 {
        let v = &self.minutes[&site];
        let o = day * 1440 + start as usize;
        v[o..o + minutes as usize].iter().map(|&c| u64::from(c)).sum()
    }

    fn binned(&self, site: usize, bin_minutes: u32) -> Vec<Vec<u32>> {
        let v = &self.minutes[&site];
        (0..self.n_days)
            .map(|d| v[d * 1440..(d + 1) * 1440].chunks(bin_minutes as usize).map(|c| c.iter().sum()).collect())
            .collect()
    }
}

/// Writes the wide CDR to `cdr` and returns the ground truth and catalogs.
pub fn generate<W: Write>(config: &ScenarioConfig, cdr: W) -> Result<Scenario> {
    let calendar = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clock = Clock::new(&calendar);
    let n_days = clock.days.len();
    let day_index = |d: NaiveDate| clock.days.iter().position(|&x| x == d).expect("validated day");
    let toy = catalog::toy_catalog();
    let city = build_city(config, &mut rng);
    let mut subs = draw_subscribers(config, &city, &toy, n_days, &mut rng)?;
    let resolved: Vec<Vec<usize>> = config
        .plants
        .iter()
        .map(|p| match p {
            Plant::Peak { sites, .. } | Plant::Suppression { sites, .. } | Plant::Festival { sites, .. } | Plant::Spike { sites, .. } => {
                city.resolve(sites)
            }
        })
        .collect();

    // Responders and their extra events.
    let eligible: Vec<usize> = (0..subs.len()).filter(|&i| subs[i].kind == DeviceKind::Phone).collect();
    let mut extras: BTreeMap<usize, Vec<Ev>> = BTreeMap::new();
    let mut truths: Vec<PlantTruth> = Vec::new();
    for (p, sites) in config.plants.iter().zip(&resolved) {
        let mut truth = PlantTruth {
            kind: p.kind().to_string(),
            day: p.day(),
            sites: sites.clone(),
            windows: Vec::new(),
            responders: Vec::new(),
            added_events: 0,
            removed_events: 0,
            spikes: Vec::new(),
        };
        match p {
            Plant::Peak { day, times, window_minutes, cohort_fraction, cohort_size, min_windows, .. } => {
                let mut starts: Vec<u32> = times.iter().map(|&t| minute_of(t)).collect();
                starts.sort_unstable();
                let chosen: Vec<usize> = match cohort_size {
                    Some(n) => {
                        if *n > eligible.len() {
                            return Err(infeasible(format!("cohort_size {n} exceeds {} phone subscribers", eligible.len())));
                        }
                        let mut v: Vec<usize> = sample(&mut rng, eligible.len(), *n).into_iter().map(|i| eligible[i]).collect();
                        v.sort_unstable();
                        v
                    }
                    None => eligible.iter().copied().filter(|_| rng.gen::<f64>() < *cohort_fraction).collect(),
                };
                let d = day_index(*day);
                for &s in &chosen {
                    let k = rng.gen_range(*min_windows..=starts.len());
                    let mut picks: Vec<usize> = sample(&mut rng, starts.len(), k).into_vec();
                    picks.sort_unstable();
                    for w in picks {
                        let second = starts[w] * 60 + rng.gen_range(0..window_minutes * 60);
                        let site = if sites.is_empty() { subs[s].home } else { *sites.choose(&mut rng).unwrap() };
                        let cell = rng.gen_range(0..city.cells[site].len()) as u8;
                        extras.entry(s).or_default().push(Ev {
                            ts: clock.utc(&calendar, d, second),
                            site: site as u32,
                            day: d as u16,
                            minute: second / 60,
                            cell,
                        });
                    }
                    truth.added_events += k as u64;
                    truth.responders.push(subs[s].name.clone());
                }
                for &st in &starts {
                    let start = clock.utc(&calendar, d, st * 60);
                    truth.windows.push(WindowTruth {
                        start_local: calendar.local(start).format("%Y-%m-%dT%H:%M:%S%:z").to_string(),
                        start,
                        minutes: *window_minutes,
                    });
                }
            }
            Plant::Suppression { day, start, minutes, .. } | Plant::Festival { day, start, minutes, .. } => {
                let d = day_index(*day);
                let s = clock.utc(&calendar, d, minute_of(*start) * 60);
                truth.windows.push(WindowTruth {
                    start_local: calendar.local(s).format("%Y-%m-%dT%H:%M:%S%:z").to_string(),
                    start: s,
                    minutes: *minutes,
                });
            }
            Plant::Spike { .. } => {}
        }
        truths.push(truth);
    }

    let mut tracked = Tracked { n_days, minutes: HashMap::new() };
    for (p, sites) in config.plants.iter().zip(&resolved) {
        if matches!(p, Plant::Festival { .. } | Plant::Spike { .. }) {
            for &s in sites {
                tracked.minutes.entry(s).or_insert_with(|| vec![0; n_days * 1440]);
            }
        }
    }
    let suppressions: Vec<(usize, usize, u32, u32, BTreeSet<usize>, f64)> = config
        .plants
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            Plant::Suppression { day, start, minutes, amplitude, .. } => Some((
                i,
                day_index(*day),
                minute_of(*start),
                minute_of(*start) + minutes,
                resolved[i].iter().copied().collect(),
                *amplitude,
            )),
            _ => None,
        })
        .collect();

    let cdf = config.activity.diurnal.minute_cdf();
    let total = cdf[1439];
    let weekend: Vec<bool> = clock.days.iter().map(|&d| calendar.day_type(d) == DayType::Weekend).collect();
    let cell_text: Vec<Vec<String>> = (0..config.n_sites)
        .map(|s| {
            let (lon, lat) = city.lon_lat[s];
            city.cells[s].iter().map(|c| format!("{c},{lon:.6},{lat:.6}")).collect()
        })
        .collect();
    let mv = &config.movement;
    let mut writer = RowWriter::new(BufWriter::with_capacity(1 << 20, cdr))?;
    let mut buf: Vec<Ev> = Vec::new();
    for (i, sub) in subs.iter_mut().enumerate() {
        buf.clear();
        for d in 0..n_days {
            let lambda = sub.rate * if weekend[d] { config.activity.weekend_factor } else { 1.0 };
            if lambda <= 0.0 {
                continue;
            }
            let n = Poisson::new(lambda).map_err(|e| infeasible(e.to_string()))?.sample(&mut rng) as u64;
            for _ in 0..n {
                let x = rng.gen::<f64>() * total;
                let minute = cdf.partition_point(|&c| c <= x).min(1439) as u32;
                let second = minute * 60 + rng.gen_range(0..60);
                let hour = minute / 60;
                let site = if sub.kind == DeviceKind::NonPhone {
                    sub.home
                } else if !weekend[d] && hour >= mv.work_hours[0] && hour < mv.work_hours[1] && rng.gen::<f64>() < mv.work_share {
                    sub.work
                } else if rng.gen::<f64>() < mv.home_share {
                    sub.home
                } else if sub.favourites.is_empty() || rng.gen::<f64>() < mv.explore_share {
                    rng.gen_range(0..config.n_sites)
                } else {
                    *sub.favourites.choose(&mut rng).unwrap()
                };
                let cell = rng.gen_range(0..city.cells[site].len()) as u8;
                let mut keep = true;
                for (pi, sd, from, to, sites, amp) in &suppressions {
                    if *sd == d && minute >= *from && minute < *to && sites.contains(&site) {
                        keep = rng.gen::<f64>() < *amp;
                        if !keep {
                            truths[*pi].removed_events += 1;
                        }
                        break;
                    }
                }
                if keep {
                    buf.push(Ev { ts: clock.utc(&calendar, d, second), site: site as u32, day: d as u16, minute, cell });
                    tracked.record(site, d, minute);
                }
            }
        }
        if let Some(extra) = extras.get(&i) {
            for e in extra {
                tracked.record(e.site as usize, usize::from(e.day), e.minute);
            }
            buf.extend_from_slice(extra);
        }
        buf.sort_by_key(|e| e.ts);
        for e in &buf {
            writer.write(&sub.name, e.ts, &cell_text[e.site as usize][e.cell as usize], &sub.attrs, sub.tac_on(usize::from(e.day)))?;
        }
        sub.events = buf.len() as u64;
    }

    // Surges drawn on top of the background.
    let donors: Vec<usize> = (0..subs.len()).filter(|&i| subs[i].kind != DeviceKind::NonPhone).collect();
    if donors.is_empty() && config.plants.iter().any(|p| matches!(p, Plant::Festival { .. } | Plant::Spike { .. })) {
        return Err(infeasible("festival and spike plants need phone subscribers".into()));
    }
    for (pi, p) in config.plants.iter().enumerate() {
        let mut added: Vec<(usize, usize, u32)> = Vec::new();
        match p {
            Plant::Festival { day, start, minutes, amplitude, .. } => {
                let d = day_index(*day);
                for &s in &resolved[pi] {
                    let base = tracked.window(s, d, minute_of(*start), *minutes);
                    let extra = ((amplitude - 1.0) * base as f64).round() as u64;
                    for _ in 0..extra {
                        let second = minute_of(*start) * 60 + rng.gen_range(0..minutes * 60);
                        added.push((s, d, second));
                    }
                }
            }
            Plant::Spike { day, time, bin_minutes, sigma_multiple, .. } => {
                let d = day_index(*day);
                let bin = (minute_of(*time) / bin_minutes) as usize;
                for &s in &resolved[pi] {
                    let series = tracked.binned(s, *bin_minutes);
                    let profile = reference_profile(
                        clock.days.iter().copied().zip(series.iter().map(Vec::as_slice)),
                        &calendar,
                        calendar.day_type(*day),
                        Some(*day),
                    )?;
                    let (mu, sigma) = (profile.mu[bin], profile.sigma[bin]);
                    let before = series[d][bin];
                    let target = if sigma > 0.0 { (mu + sigma_multiple * sigma).ceil() } else { (mu + sigma_multiple).ceil() };
                    let after = (target as u32).max(before);
                    for _ in before..after {
                        let second = bin as u32 * bin_minutes * 60 + rng.gen_range(0..bin_minutes * 60);
                        added.push((s, d, second));
                    }
                    let expected_z = if sigma > 0.0 { (f64::from(after) - mu) / sigma } else { f64::INFINITY };
                    truths[pi].spikes.push(SpikeTruth { site: s, bin, bin_minutes: *bin_minutes, mu, sigma, before, after, expected_z });
                }
            }
            _ => continue,
        }
        for (s, d, second) in added {
            let who = donors[rng.gen_range(0..donors.len())];
            let cell = rng.gen_range(0..city.cells[s].len());
            let ts = clock.utc(&calendar, d, second);
            let sub = &mut subs[who];
            writer.write(&sub.name, ts, &cell_text[s][cell], &sub.attrs, sub.tac_on(d))?;
            sub.events += 1;
            tracked.record(s, d, second / 60);
            truths[pi].added_events += 1;
        }
    }
    writer.out.flush()?;

    let truth = GroundTruth {
        seed: config.seed,
        rows: writer.rows,
        sites: (0..config.n_sites)
            .map(|i| SiteTruth {
                index: i,
                lon: city.lon_lat[i].0,
                lat: city.lon_lat[i].1,
                cells: city.cells[i].clone(),
                rich: city.rich[i],
            })
            .collect(),
        subscribers: subs
            .iter()
            .map(|s| SubscriberTruth {
                sim: s.name.clone(),
                home_site: s.home,
                work_site: s.work,
                favourite_sites: s.favourites.clone(),
                commute_km: s.commute_km,
                device: s.kind,
                tac: s.tac,
                price_eur: s.price,
                second_tac: s.second.map(|x| x.0),
                switch_day: s.second.map(|x| clock.days[x.1]),
                events: s.events,
            })
            .collect(),
        plants: truths,
    };
    Ok(Scenario { truth, tac_catalog: toy.tac_rows, spec_catalog: toy.spec_rows, blocklist: toy.blocklist, calendar })
}

/// Writes the CDR, ground truth, both catalogs, the blocklist and the
/// calendar into `dir`.
pub fn write_scenario(config: &ScenarioConfig, dir: &Path) -> Result<Scenario> {
    let scenario = generate(config, File::create(dir.join(CDR_FILE))?)?;
    let mut truth = BufWriter::new(File::create(dir.join(TRUTH_FILE))?);
    serde_json::to_writer_pretty(&mut truth, &scenario.truth)?;
    truth.flush()?;
    write_tac_catalog(&scenario.tac_catalog, File::create(dir.join(TAC_CATALOG_FILE))?)?;
    write_spec_catalog(&scenario.spec_catalog, File::create(dir.join(SPEC_CATALOG_FILE))?)?;
    write_blocklist(&scenario.blocklist, BufWriter::new(File::create(dir.join(BLOCKLIST_FILE))?))?;
    let mut cal = BufWriter::new(File::create(dir.join(CALENDAR_FILE))?);
    serde_json::to_writer_pretty(&mut cal, &scenario.calendar.to_file())?;
    cal.flush()?;
    Ok(scenario)
}

/// Independent Gaussian counts per site and bin over the whole calendar,
/// rounded and floored at zero.
pub fn noise_cube(seed: u64, calendar: &Calendar, n_sites: usize, bin_width: u32, mean: f64, sd: f64) -> Result<SeriesCube> {
    check_bin_width(bin_width)?;
    let normal = Normal::new(mean, sd).map_err(|e| infeasible(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days: Vec<NaiveDate> = calendar.days().collect();
    let n = n_sites * days.len() * (1440 / bin_width) as usize;
    let counts = (0..n).map(|_| normal.sample(&mut rng).round().max(0.0) as u32).collect();
    SeriesCube::from_counts(bin_width, days, n_sites, counts)
}
