//! Per-site activity series, reference profiles, z-scores, activity levels
//! and peak windows.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, DayType};
use crate::error::{Error, Result};
use crate::ingest::CdrEvent;
use crate::spatial::SiteMap;
use crate::types::SiteId;

/// Ascending breaks with one label per class; a value falls in class `i`
/// where `i` is the number of breaks `<= value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdSpec", into = "ThresholdSpec")]
pub struct LevelThresholds {
    breaks: Vec<f64>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdSpec {
    breaks: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl TryFrom<ThresholdSpec> for LevelThresholds {
    type Error = Error;
    fn try_from(s: ThresholdSpec) -> Result<Self> {
        LevelThresholds::new(s.breaks, s.labels)
    }
}

impl From<LevelThresholds> for ThresholdSpec {
    fn from(t: LevelThresholds) -> Self {
        ThresholdSpec { breaks: t.breaks, labels: Some(t.labels) }
    }
}

impl LevelThresholds {
    /// Without labels, three breaks get `low`, `average`, `high`,
    /// `very_high`; other lengths get `class_<i>`.
    pub fn new(breaks: Vec<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("class breaks must be finite and strictly increasing".into()));
        }
        let labels = match labels {
            Some(l) => l,
            None if breaks.len() == 3 => ["low", "average", "high", "very_high"].map(String::from).to_vec(),
            None => (0..=breaks.len()).map(|i| format!("class_{i}")).collect(),
        };
        if labels.len() != breaks.len() + 1 {
            return Err(Error::Config(format!("{} breaks need {} labels", breaks.len(), breaks.len() + 1)));
        }
        Ok(LevelThresholds { breaks, labels })
    }

    pub fn downtown() -> Self {
        LevelThresholds::new(vec![-2.0, 2.0, 8.0], None).unwrap()
    }

    pub fn heroes() -> Self {
        LevelThresholds::new(vec![-1.0, 1.0, 2.5], None).unwrap()
    }

    /// Named scheme: `downtown` or `heroes`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "downtown" => Some(Self::downtown()),
            "heroes" => Some(Self::heroes()),
            _ => None,
        }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_index(&self, v: f64) -> usize {
        self.breaks.partition_point(|&b| b <= v)
    }

    pub fn classify(&self, v: f64) -> &str {
        &self.labels[self.class_index(v)]
    }
}

pub fn check_bin_width(minutes: u32) -> Result<()> {
    if minutes == 0 || 1440 % minutes != 0 {
        return Err(Error::BinWidth(minutes));
    }
    Ok(())
}

/// Event counts per site, calendar day and local clock bin. Bins are
/// closed-open and anchored at local midnight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesCube {
    bin_width: u32,
    days: Vec<NaiveDate>,
    n_sites: usize,
    counts: Vec<u32>,
    /// Events falling outside the calendar.
    pub dropped: u64,
}

impl SeriesCube {
    /// Wraps site-major counts: `counts[(site * days + day) * bins + bin]`.
    pub fn from_counts(bin_width: u32, days: Vec<NaiveDate>, n_sites: usize, counts: Vec<u32>) -> Result<Self> {
        check_bin_width(bin_width)?;
        let expected = n_sites * days.len() * (1440 / bin_width) as usize;
        if counts.len() != expected {
            return Err(Error::Data(format!("series cube needs {expected} counts, got {}", counts.len())));
        }
        Ok(SeriesCube { bin_width, days, n_sites, counts, dropped: 0 })
    }

    pub fn bin_width(&self) -> u32 {
        self.bin_width
    }

    pub fn bins_per_day(&self) -> usize {
        (1440 / self.bin_width) as usize
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn day_position(&self, day: NaiveDate) -> Option<usize> {
        self.days.iter().position(|&d| d == day)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn offset(&self, site: SiteId, day: usize) -> usize {
        (site.index() * self.days.len() + day) * self.bins_per_day()
    }

    pub fn series(&self, site: SiteId, day: usize) -> &[u32] {
        let o = self.offset(site, day);
        &self.counts[o..o + self.bins_per_day()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Bin-wise sum over `sites` for every day.
    pub fn aggregate(&self, sites: &[SiteId]) -> Vec<Vec<u32>> {
        (0..self.days.len())
            .map(|d| {
                let mut sum = vec![0u32; self.bins_per_day()];
                for &s in sites {
                    for (a, &c) in sum.iter_mut().zip(self.series(s, d)) {
                        *a += c;
                    }
                }
                sum
            })
            .collect()
    }

    /// Local start of a bin as a UTC instant.
    pub fn bin_start(&self, calendar: &Calendar, day: usize, bin: usize) -> i64 {
        let minutes = i64::from(bin as u32 * self.bin_width);
        calendar.to_utc(self.days[day].and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(minutes))
    }

    pub fn bin_of(&self, minute_of_day: u32) -> usize {
        (minute_of_day / self.bin_width) as usize
    }
}

/// Builds the series of every site for every calendar day.
pub fn bin_series(events: &[CdrEvent], map: &SiteMap, calendar: &Calendar, bin_width: u32) -> Result<SeriesCube> {
    check_bin_width(bin_width)?;
    let days: Vec<NaiveDate> = calendar.days().collect();
    let bins = (1440 / bin_width) as usize;
    let n_sites = map.sites.len();
    let size = n_sites * days.len() * bins;
    let slot = |e: &CdrEvent| -> Option<usize> {
        let (day, minute) = calendar.local_day_minute(e.timestamp);
        let d = calendar.day_index(day)?;
        let site = map.site_of(e.cell).index();
        Some((site * days.len() + d) * bins + (minute / bin_width) as usize)
    };
    let (counts, dropped) = events
        .par_chunks(1 << 16)
        .fold(
            || (vec![0u32; size], 0u64),
            |(mut counts, mut dropped), chunk| {
                for e in chunk {
                    match slot(e) {
                        Some(i) => counts[i] += 1,
                        None => dropped += 1,
                    }
                }
                (counts, dropped)
            },
        )
        .reduce(
            || (vec![0u32; size], 0u64),
            |(mut a, da), (b, db)| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                (a, da + db)
            },
        );
    Ok(SeriesCube { bin_width, days, n_sites, counts, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceProfile {
    pub day_type: DayType,
    pub mu: Vec<f64>,
    /// Population standard deviation.
    pub sigma: Vec<f64>,
    pub days: Vec<NaiveDate>,
}

/// Per-bin mean and population deviation over the days of `day_type`,
/// leaving out `exclude`.
pub fn reference_profile<'a>(
    series: impl IntoIterator<Item = (NaiveDate, &'a [u32])>,
    calendar: &Calendar,
    day_type: DayType,
    exclude: Option<NaiveDate>,
) -> Result<ReferenceProfile> {
    let chosen: Vec<(NaiveDate, &[u32])> = series
        .into_iter()
        .filter(|&(d, _)| Some(d) != exclude && calendar.day_type(d) == day_type)
        .collect();
    if chosen.len() < 2 {
        return Err(Error::InsufficientReference(chosen.len()));
    }
    let bins = chosen[0].1.len();
    let n = chosen.len() as f64;
    let mut mu = vec![0.0; bins];
    for (_, s) in &chosen {
        for (m, &c) in mu.iter_mut().zip(s.iter()) {
            *m += f64::from(c);
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut sigma = vec![0.0; bins];
    for (_, s) in &chosen {
        for ((v, &c), &m) in sigma.iter_mut().zip(s.iter()).zip(&mu) {
            *v += (f64::from(c) - m).powi(2);
        }
    }
    for v in &mut sigma {
        *v = (*v / n).sqrt();
    }
    Ok(ReferenceProfile { day_type, mu, sigma, days: chosen.into_iter().map(|(d, _)| d).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZValue {
    pub z: f64,
    /// The reference deviation was zero: z is 0 at the mean and infinite
    /// elsewhere.
    pub sigma_zero: bool,
}

pub fn zscore_value(x: f64, mu: f64, sigma: f64) -> ZValue {
    if sigma > 0.0 {
        return ZValue { z: (x - mu) / sigma, sigma_zero: false };
    }
    let z = if x == mu {
        0.0
    } else if x > mu {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    ZValue { z, sigma_zero: true }
}

pub fn zscore(target: &[u32], profile: &ReferenceProfile) -> Vec<ZValue> {
    target
        .iter()
        .zip(profile.mu.iter().zip(&profile.sigma))
        .map(|(&x, (&m, &s))| zscore_value(f64::from(x), m, s))
        .collect()
}

/// Label of the mean z over `bins`.
pub fn classify_interval<'t>(z: &[ZValue], bins: std::ops::Range<usize>, thresholds: &'t LevelThresholds) -> &'t str {
    let slice = &z[bins];
    let mean = slice.iter().map(|v| v.z).sum::<f64>() / slice.len() as f64;
    thresholds.classify(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub start_bin: usize,
    /// Exclusive.
    pub end_bin: usize,
    pub max_z: f64,
}

/// Maximal runs of bins with `z >= min_z`, joining runs separated by at
/// most `max_gap_bins` quieter bins.
pub fn detect_peaks(z: &[ZValue], min_z: f64, max_gap_bins: usize) -> Vec<Peak> {
    let mut peaks: Vec<Peak> = Vec::new();
    for (i, v) in z.iter().enumerate() {
        if v.z < min_z {
            continue;
        }
        match peaks.last_mut() {
            Some(p) if i - p.end_bin <= max_gap_bins => {
                p.end_bin = i + 1;
                p.max_z = p.max_z.max(v.z);
            }
            _ => peaks.push(Peak { start_bin: i, end_bin: i + 1, max_z: v.z }),
        }
    }
    peaks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteDay {
    pub site: SiteId,
    pub counts: Vec<u32>,
    pub profile: ReferenceProfile,
    pub z: Vec<ZValue>,
}

/// Z-scores of every site on `day` against the other days of
/// `reference_type` (the day's own type when `None`).
pub fn analyze_day(
    cube: &SeriesCube,
    calendar: &Calendar,
    day: NaiveDate,
    reference_type: Option<DayType>,
) -> Result<Vec<SiteDay>> {
    let d = cube.day_position(day).ok_or_else(|| Error::Config(format!("day {day} is outside the calendar")))?;
    let day_type = reference_type.unwrap_or_else(|| calendar.day_type(day));
    (0..cube.n_sites)
        .into_par_iter()
        .map(|s| {
            let site = SiteId(s as u32);
            let profile = reference_profile(
                cube.days.iter().enumerate().map(|(i, &dd)| (dd, cube.series(site, i))),
                calendar,
                day_type,
                Some(day),
            )?;
            let counts = cube.series(site, d).to_vec();
            let z = zscore(&counts, &profile);
            Ok(SiteDay { site, counts, profile, z })
        })
        .collect()
}

/// `site_z.csv`: one row per site and bin, bin start in local time.
pub fn write_site_z<W: Write>(
    rows: &[SiteDay],
    cube: &SeriesCube,
    calendar: &Calendar,
    day: NaiveDate,
    thresholds: &LevelThresholds,
    w: W,
) -> Result<()> {
    let d = cube.day_position(day).ok_or_else(|| Error::Config(format!("day {day} is outside the calendar")))?;
    let starts: Vec<String> = (0..cube.bins_per_day())
        .map(|b| calendar.local(cube.bin_start(calendar, d, b)).format("%Y-%m-%dT%H:%M:%S%:z").to_string())
        .collect();
    let mut out = csv::WriterBuilder::new().buffer_capacity(1 << 16).from_writer(w);
    out.write_record(["site_id", "bin_start", "count", "mu", "sigma", "z", "label", "sigma_zero"])?;
    for r in rows {
        for (b, start) in starts.iter().enumerate() {
            let z = r.z[b];
            out.write_record([
                r.site.0.to_string().as_str(),
                start,
                &r.counts[b].to_string(),
                &r.profile.mu[b].to_string(),
                &r.profile.sigma[b].to_string(),
                &z.z.to_string(),
                thresholds.classify(z.z),
                if z.sigma_zero { "true" } else { "false" },
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
