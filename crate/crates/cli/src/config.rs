//! Run configuration: JSON on disk, validated before any stage runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cdrscope_core::calendar::CalendarFile;
use cdrscope_core::cohorts::{CohortAttribute, FilterPolicy};
use cdrscope_core::device_catalog::{PriceHook, VendorAliases, YearMonth};
use cdrscope_core::event_detection::{check_bin_width, LevelThresholds};
use cdrscope_core::ingest::Schema;
use cdrscope_core::mobility::EntropyNorm;
use cdrscope_core::ses_pca::BandConfig;
use cdrscope_core::{Calendar, DayType};
use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    /// Overridden by `--output-dir`.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Path to a calendar file or an inline calendar. June 2016 in Budapest
    /// when absent.
    pub calendar: Option<CalendarSource>,
    pub ingest: IngestSettings,
    pub enrich: EnrichSettings,
    pub filter: FilterSettings,
    pub spatial: SpatialSettings,
    pub mobility: MobilitySettings,
    pub events: EventSettings,
    pub pca: PcaSettings,
    pub market_share: MarketShare,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Wide CDR file or a directory of them.
    pub cdr: Option<PathBuf>,
    pub tac_catalog: Option<PathBuf>,
    pub spec_catalog: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
    /// GeoJSON polygon(s) clipping the coverage areas.
    pub boundary: Option<PathBuf>,
    /// Scenario for `synth`.
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CalendarSource {
    Path(PathBuf),
    Inline(CalendarFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub schema: Schema,
    /// Reject records outside the calendar.
    pub restrict_to_period: bool,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings { schema: Schema::default(), restrict_to_period: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichSettings {
    pub cutoff: u8,
    /// Vendor renames; the built-in RIM and Nokia renames when absent.
    pub aliases: Option<BTreeMap<String, String>>,
    pub reference: YearMonth,
    pub price: PriceHook,
}

impl Default for EnrichSettings {
    fn default() -> Self {
        EnrichSettings { cutoff: 90, aliases: None, reference: YearMonth { year: 2016, month: 6 }, price: PriceHook::Release }
    }
}

impl EnrichSettings {
    pub fn vendor_aliases(&self) -> VendorAliases {
        match &self.aliases {
            Some(map) => VendorAliases::new(map.iter().map(|(a, b)| (a.as_str(), b.as_str()))),
            None => VendorAliases::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub policy: FilterPolicy,
    /// Drop SIMs whose dominant device is not in the catalog.
    pub exclude_unknown: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings { policy: FilterPolicy::default(), exclude_unknown: true }
    }
}

/// A named scheme (`downtown`, `heroes`) or explicit breaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Named(String),
    Explicit(LevelThresholds),
}

impl Thresholds {
    pub fn resolve(&self) -> Result<LevelThresholds, CliError> {
        match self {
            Thresholds::Named(n) => LevelThresholds::named(n).ok_or_else(|| CliError::Usage(format!("unknown threshold scheme {n:?}"))),
            Thresholds::Explicit(t) => Ok(t.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSettings {
    pub allow_bisector: bool,
    pub buffer_km: f64,
    /// Classes of the site mean phone price map.
    pub price_classes: LevelThresholds,
}

impl Default for SpatialSettings {
    fn default() -> Self {
        SpatialSettings {
            allow_bisector: false,
            buffer_km: 1.0,
            price_classes: LevelThresholds::new(
                vec![150.0, 250.0, 350.0],
                Some(["budget", "lower_mid", "upper_mid", "premium"].map(String::from).to_vec()),
            )
            .expect("static classes"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySettings {
    pub entropy_norm: EntropyNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    /// Longitude and latitude.
    pub center: [f64; 2],
    pub radius_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    /// Local `YYYY-MM-DDTHH:MM` or an RFC 3339 instant.
    pub start: String,
    pub minutes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventSettings {
    /// Day under study; required by `events` and `study`.
    pub day: Option<NaiveDate>,
    pub bin_minutes: u32,
    /// Reference day type; the studied day's own type when absent.
    pub reference: Option<DayType>,
    pub thresholds: Thresholds,
    /// Interval mapped in the choropleth; the span of the detected peaks,
    /// or the whole day, when absent.
    pub interval: Option<Interval>,
    /// Sites whose summed activity is searched for peaks; all when absent.
    pub peak_region: Option<Region>,
    pub peak_min_z: f64,
    pub peak_max_gap_bins: usize,
    /// Response windows; the detected peaks when empty.
    pub windows: Vec<WindowSpec>,
    pub k_required: usize,
    pub compare: Vec<CohortAttribute>,
    pub age_edges: Vec<u8>,
}

impl Default for EventSettings {
    fn default() -> Self {
        EventSettings {
            day: None,
            bin_minutes: 15,
            reference: None,
            thresholds: Thresholds::Named("downtown".into()),
            interval: None,
            peak_region: None,
            peak_min_z: 2.0,
            peak_max_gap_bins: 0,
            windows: Vec::new(),
            k_required: 2,
            compare: vec![CohortAttribute::PhonePrice, CohortAttribute::PhoneAge, CohortAttribute::Gyration],
            age_edges: vec![30, 40, 50, 60],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSettings {
    pub bands: BandConfig,
    pub components: usize,
}

impl Default for PcaSettings {
    fn default() -> Self {
        PcaSettings { bands: BandConfig::default(), components: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarketShare(pub f64);

impl Default for MarketShare {
    fn default() -> Self {
        MarketShare(0.253)
    }
}

/// Parses JSON text, reporting the path of the offending field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Usage(format!("{what}: {} at {path}", e.into_inner()))
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))?;
    parse_json(&text, &format!("{what} {}", path.display()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = read_json(path, "config")?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Resolves relative input paths against the config file's directory.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.cdr, &mut i.tac_catalog, &mut i.spec_catalog, &mut i.blocklist, &mut i.boundary, &mut i.scenario] {
            fix(p);
        }
        fix(&mut self.output_dir);
        if let Some(CalendarSource::Path(p)) = &mut self.calendar {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn calendar(&self) -> Result<Calendar, CliError> {
        let file = match &self.calendar {
            None => return Ok(Calendar::hungary_june_2016()),
            Some(CalendarSource::Inline(f)) => f.clone(),
            Some(CalendarSource::Path(p)) => read_json(p, "calendar")?,
        };
        Ok(Calendar::from_file(&file)?)
    }

    /// Checks settings that do not depend on the subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(CalendarSource::Path(p)) = &self.calendar {
            require_file(p, "calendar")?;
        }
        self.calendar()?;
        self.ingest.schema.delimiter_byte()?;
        self.filter.policy.validate()?;
        self.pca.bands.validate()?;
        if self.pca.components == 0 || self.pca.components > self.pca.bands.columns() {
            return Err(CliError::Usage(format!("pca.components must be in 1..={}", self.pca.bands.columns())));
        }
        if !(self.spatial.buffer_km >= 0.0 && self.spatial.buffer_km.is_finite()) {
            return Err(CliError::Usage("spatial.buffer_km must be non-negative".into()));
        }
        check_bin_width(self.events.bin_minutes)?;
        self.events.thresholds.resolve()?;
        if self.events.k_required == 0 {
            return Err(CliError::Usage("events.k_required must be at least 1".into()));
        }
        if !self.events.windows.is_empty() && self.events.k_required > self.events.windows.len() {
            return Err(CliError::Usage(format!("events.k_required = {} exceeds {} windows", self.events.k_required, self.events.windows.len())));
        }
        if self.events.age_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Usage("events.age_edges must increase".into()));
        }
        if let Some(r) = &self.events.peak_region {
            if !(r.radius_km > 0.0) {
                return Err(CliError::Usage("events.peak_region.radius_km must be positive".into()));
            }
        }
        if let Some(i) = &self.events.interval {
            if i.end <= i.start {
                return Err(CliError::Usage("events.interval must end after it starts".into()));
            }
        }
        if !(self.market_share.0 > 0.0 && self.market_share.0 <= 1.0) {
            return Err(CliError::Usage(format!("market_share {} not in (0, 1]", self.market_share.0)));
        }
        Ok(())
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn require_input<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    let p = path.as_deref().ok_or_else(|| CliError::Usage(format!("inputs.{what} is not set")))?;
    require_file(p, what)?;
    Ok(p)
}
