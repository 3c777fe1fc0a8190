use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cdrscope_core::calendar::format_utc;
use cdrscope_core::calendar::parse_instant;
use cdrscope_core::cohorts::{
    apply_activity_filter, cohort_compare, dominant_devices, dominant_prices, phone_population, read_cohort,
    scale_by_market_share, select_peak_responders, write_cohort, Cohort, CohortAttribute, ResponseWindow,
    ResponseWindows,
};
use cdrscope_core::device_catalog::{
    fuse_catalogs, read_blocklist, read_enrichment, read_spec_catalog, read_tac_catalog, relative_age_months,
    write_enrichment, Enrichment, FuseOptions,
};
use cdrscope_core::event_detection::{
    analyze_day, bin_series, classify_interval, detect_peaks, reference_profile, write_site_z, zscore, Peak,
};
use cdrscope_core::ingest::{
    ingest_path, read_tables, write_cells, write_devices, write_events, write_rejects, write_subscribers,
    IngestOptions, NormalizedTables,
};
use cdrscope_core::mobility::{compute_mobility, read_mobility, write_mobility, MobilityPeriod, MobilityRecord};
use cdrscope_core::ses_pca::{assemble_bin_table, pareto, weighted_pca, write_bin_table, write_pareto, write_projection, SimAttributes};
use cdrscope_core::spatial::geometry::Projection;
use cdrscope_core::spatial::{
    coverage_geojson, export_choropleth, merge_cells, read_boundary, site_mean_phone_price, site_positions,
    site_projection, tessellate, write_sites, SiteMap, Tessellation, VoronoiOptions,
};
use cdrscope_core::synthgen::{self, ScenarioConfig};
use cdrscope_core::{Calendar, Error, PaymentType, SimId, SiteId};
use serde_json::{json, Value};

use crate::config::{read_json, require_file, require_input, RunConfig};
use crate::log::Logger;
use crate::output::Staging;
use crate::CliError;

pub const EVENTS_FILE: &str = "events.csv";
pub const SUBSCRIBERS_FILE: &str = "subscribers.csv";
pub const DEVICES_FILE: &str = "devices.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const ENRICHMENT_FILE: &str = "tac_enrichment.csv";
pub const PHONE_COHORT_FILE: &str = "cohort_phone.csv";
pub const ANALYSIS_COHORT_FILE: &str = "cohort_analysis.csv";
pub const MOBILITY_FILE: &str = "mobility.csv";

const TABLE_FILES: [&str; 4] = [EVENTS_FILE, SUBSCRIBERS_FILE, DEVICES_FILE, CELLS_FILE];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Enrich,
    Filter,
    Spatial,
    Mobility,
    Events,
    Pca,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Enrich, Stage::Filter, Stage::Spatial, Stage::Mobility, Stage::Events, Stage::Pca];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Enrich => "enrich",
            Stage::Filter => "filter",
            Stage::Spatial => "spatial",
            Stage::Mobility => "mobility",
            Stage::Events => "events",
            Stage::Pca => "pca",
        }
    }

    /// Artifacts of earlier stages read when the stage runs on its own.
    fn artifacts(self, cfg: &RunConfig) -> Vec<&'static str> {
        let mut files = match self {
            Stage::Ingest => vec![],
            Stage::Enrich | Stage::Spatial => TABLE_FILES.to_vec(),
            Stage::Filter => [&TABLE_FILES[..], &[ENRICHMENT_FILE]].concat(),
            Stage::Mobility => [&TABLE_FILES[..], &[ANALYSIS_COHORT_FILE]].concat(),
            Stage::Events => [&TABLE_FILES[..], &[ENRICHMENT_FILE, PHONE_COHORT_FILE]].concat(),
            Stage::Pca => [&TABLE_FILES[..], &[ENRICHMENT_FILE, MOBILITY_FILE]].concat(),
        };
        if self == Stage::Spatial {
            files.push(ENRICHMENT_FILE);
        }
        if self == Stage::Events && needs_mobility(cfg) {
            files.push(MOBILITY_FILE);
        }
        files
    }

    /// Checks inputs named in the configuration before any work starts.
    fn check_inputs(self, cfg: &RunConfig) -> Result<(), CliError> {
        let i = &cfg.inputs;
        match self {
            Stage::Ingest => {
                require_input(&i.cdr, "cdr")?;
            }
            Stage::Enrich => {
                require_input(&i.tac_catalog, "tac_catalog")?;
                require_input(&i.spec_catalog, "spec_catalog")?;
                if let Some(p) = &i.blocklist {
                    require_file(p, "blocklist")?;
                }
            }
            Stage::Spatial | Stage::Events => {
                if let Some(p) = &i.boundary {
                    require_file(p, "boundary")?;
                }
                if self == Stage::Events && cfg.events.day.is_none() {
                    return Err(CliError::Usage("events.day is not set".into()));
                }
            }
            Stage::Filter | Stage::Mobility | Stage::Pca => {}
        }
        Ok(())
    }
}

fn needs_mobility(cfg: &RunConfig) -> bool {
    cfg.events.compare.iter().any(|a| matches!(a, CohortAttribute::Gyration | CohortAttribute::Entropy))
}

/// Validates a run of `stages` before anything is written. Artifacts of
/// stages that are part of the run are not required on disk.
pub fn preflight(stages: &[Stage], cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.validate().map_err(|e| match e {
        CliError::Core(e) => CliError::Usage(format!("invalid configuration: {e}")),
        e => e,
    })?;
    for &stage in stages {
        stage.check_inputs(cfg)?;
    }
    if stages.len() == 1 {
        for name in stages[0].artifacts(cfg) {
            let path = out.join(name);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "{} not found; run the stage that produces it first",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Default)]
struct State {
    tables: Option<NormalizedTables>,
    enrichment: Option<Enrichment>,
    phones: Option<Cohort>,
    analysis: Option<Cohort>,
    map: Option<SiteMap>,
    tess: Option<Tessellation>,
    mobility: Option<Vec<MobilityRecord>>,
}

pub struct Run<'a> {
    cfg: &'a RunConfig,
    cal: Calendar,
    out: PathBuf,
    log: &'a Logger,
    pub staging: Staging,
    state: State,
}

fn file_in(dir: &Path, name: &str) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::with_capacity(1 << 20, File::open(dir.join(name))?))
}

fn ms(t: Instant) -> Value {
    json!(t.elapsed().as_millis() as u64)
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a RunConfig, out: &Path, log: &'a Logger, staging: Staging) -> Result<Self, CliError> {
        Ok(Run { cfg, cal: cfg.calendar()?, out: out.to_path_buf(), log, staging, state: State::default() })
    }

    pub fn run(&mut self, stage: Stage) -> Result<(), CliError> {
        let t = Instant::now();
        self.log.emit(stage.name(), "start", &[]);
        let fields = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Enrich => self.enrich()?,
            Stage::Filter => self.filter()?,
            Stage::Spatial => self.spatial()?,
            Stage::Mobility => self.mobility()?,
            Stage::Events => self.events()?,
            Stage::Pca => self.pca()?,
        };
        let mut all = vec![("duration_ms", ms(t))];
        all.extend(fields);
        self.log.emit(stage.name(), "done", &all);
        Ok(())
    }

    fn load_tables(&mut self) -> Result<(), CliError> {
        if self.state.tables.is_some() {
            return Ok(());
        }
        let t = Instant::now();
        for name in TABLE_FILES {
            self.staging.note_input(name, &self.out.join(name));
        }
        let tables = read_tables(
            file_in(&self.out, EVENTS_FILE)?,
            file_in(&self.out, SUBSCRIBERS_FILE)?,
            file_in(&self.out, DEVICES_FILE)?,
            file_in(&self.out, CELLS_FILE)?,
        )?;
        self.log.emit("load", "tables", &[("duration_ms", ms(t)), ("events", json!(tables.events.len()))]);
        self.state.tables = Some(tables);
        Ok(())
    }

    fn load_enrichment(&mut self) -> Result<(), CliError> {
        if self.state.enrichment.is_none() {
            self.staging.note_input(ENRICHMENT_FILE, &self.out.join(ENRICHMENT_FILE));
            self.state.enrichment = Some(read_enrichment(file_in(&self.out, ENRICHMENT_FILE)?)?);
        }
        Ok(())
    }

    fn load_cohort(&mut self, name: &str, file: &str) -> Result<Cohort, CliError> {
        self.load_tables()?;
        self.staging.note_input(file, &self.out.join(file));
        Ok(read_cohort(name, file_in(&self.out, file)?, self.state.tables.as_ref().expect("tables loaded"))?)
    }

    fn load_mobility(&mut self) -> Result<(), CliError> {
        self.load_tables()?;
        if self.state.mobility.is_none() {
            self.staging.note_input(MOBILITY_FILE, &self.out.join(MOBILITY_FILE));
            self.state.mobility = Some(read_mobility(file_in(&self.out, MOBILITY_FILE)?, self.state.tables.as_ref().expect("tables loaded"))?);
        }
        Ok(())
    }

    fn load_map(&mut self) -> Result<(), CliError> {
        self.load_tables()?;
        if self.state.map.is_none() {
            self.state.map = Some(merge_cells(&self.state.tables.as_ref().expect("tables loaded").cell_locations));
        }
        Ok(())
    }

    fn load_tessellation(&mut self) -> Result<(), CliError> {
        self.load_map()?;
        if self.state.tess.is_some() {
            return Ok(());
        }
        let boundary = match &self.cfg.inputs.boundary {
            Some(p) => {
                self.staging.note_input("boundary", p);
                let doc: Value = read_json(p, "boundary")?;
                Some(read_boundary(&doc)?)
            }
            None => None,
        };
        let opts = VoronoiOptions { allow_bisector: self.cfg.spatial.allow_bisector, buffer_km: self.cfg.spatial.buffer_km };
        let tess = tessellate(self.state.map.as_ref().expect("site map built"), boundary.as_deref(), &opts)?;
        self.state.tess = Some(tess);
        Ok(())
    }

    fn ingest(&mut self) -> Result<Vec<(&'static str, Value)>, CliError> {
        let cdr = self.cfg.inputs.cdr.clone().expect("checked in preflight");
        self.staging.note_input("cdr", &cdr);
        let opts = IngestOptions {
            schema: self.cfg.ingest.schema.clone(),
            period: self.cfg.ingest.restrict_to_period.then(|| self.cal.period_bounds()),
            ..IngestOptions::default()
        };
        let t = Instant::now();
        let outcome = ingest_path(&cdr, &opts)?;
        self.log.emit(
            "ingest",
            "parsed",
            &[("duration_ms", ms(t)), ("lines", json!(outcome.report.lines)), ("rejected", json!(outcome.report.rejected))],
        );
        let tables = &outcome.tables;
        self.staging.write_with(EVENTS_FILE, |w| write_events(tables, w))?;
        self.staging.write_with(SUBSCRIBERS_FILE, |w| write_subscribers(tables, w))?;
        self.staging.write_with(DEVICES_FILE, |w| write_devices(tables, w))?;
        self.staging.write_with(CELLS_FILE, |w| write_cells(tables, w))?;
        self.staging.write_with("rejects.csv", |w| write_rejects(&outcome.rejects, w))?;
        let report = json!({
            "report": outcome.report,
            "sims": tables.sims.len(),
            "cells": tables.cells.len(),
            "events": tables.events.len(),
            "device_observations": tables.devices.len(),
        });
        self.staging.write_json("ingest_report.json", &report)?;
        let fields = vec![
            ("accepted", json!(outcome.report.accepted)),
            ("rejected", json!(outcome.report.rejected)),
            ("sims", json!(tables.sims.len())),
        ];
        self.state.tables = Some(outcome.tables);
        Ok(fields)
    }

    fn enrich(&mut self) -> Result<Vec<(&'static str, Value)>, CliError> {
        self.load_tables()?;
        let inputs = &self.cfg.inputs;
        let tac_path = inputs.tac_catalog.clone().expect("checked in preflight");
        let spec_path = inputs.spec_catalog.clone().expect("checked in preflight");
        self.staging.note_input("tac_catalog", &tac_path);
        self.staging.note_input("spec_catalog", &spec_path);
        let tac_rows = read_tac_catalog(BufReader::new(File::open(&tac_path)?))?;
        let spec_rows = read_spec_catalog(BufReader::new(File::open(&spec_path)?))?;
        let blocklist = match inputs.blocklist.clone() {
            Some(p) => {
                self.staging.note_input("blocklist", &p);
                read_blocklist(BufReader::new(File::open(&p)?))?
            }
            None => BTreeSet::new(),
        };
        let e = &self.cfg.enrich;
        let opts = FuseOptions {
            cutoff: e.cutoff,
            aliases: e.vendor_aliases(),
            blocklist,
            reference: e.reference,
            price: e.price,
        };
        let enrichment = fuse_catalogs(&tac_rows, &spec_rows, &opts)?;
        self.staging.write_with(ENRICHMENT_FILE, |w| write_enrichment(&enrichment, e.reference, w))?;

        let matched = enrichment.values().filter(|r| r.matched).count();
        let non_phone = enrichment.values().filter(|r| r.non_phone).count();
        let tables = self.state.tables.as_ref().expect("tables loaded");
        let mut observed: BTreeMap<_, u64> = BTreeMap::new();
        for d in &tables.devices {
            *observed.entry(d.tac).or_insert(0) += d.event_count;
        }
        let (mut tacs_matched, mut tacs_non_phone, mut tacs_unknown) = (0, 0, 0);
        let (mut rec_total, mut rec_matched) = (0u64, 0u64);
        for (tac, &n) in &observed {
            rec_total += n;
            match enrichment.get(tac) {
                Some(r) if r.non_phone => tacs_non_phone += 1,
                Some(r) if r.matched => {
                    tacs_matched += 1;
                    rec_matched += n;
                }
                _ => tacs_unknown += 1,
            }
        }
        let report = json!({
            "catalog_tacs": enrichment.len(),
            "catalog_matched": matched,
            "catalog_non_phone": non_phone,
            "observed_tacs": observed.len(),
            "observed_matched": tacs_matched,
            "observed_non_phone": tacs_non_phone,
            "observed_unknown": tacs_unknown,
            "matched_record_share": if rec_total == 0 { 0.0 } else { rec_matched as f64 / rec_total as f64 },
        });
        self.staging.write_json("enrich_report.json", &report)?;
        self.state.enrichment = Some(enrichment);
        Ok(vec![("catalog_matched", json!(matched)), ("observed_unknown", json!(tacs_unknown))])
    }

    fn filter(&mut self) -> Result<Vec<(&'static str, Value)>, CliError> {
        self.load_tables()?;
        self.load_enrichment()?;
        let f = &self.cfg.filter;
        let tables = self.state.tables.as_ref().expect("tables loaded");
        let pop = phone_population(tables, self.state.enrichment.as_ref().expect("enrichment loaded"), f.policy.dominant_device_share, f.exclude_unknown);
        let active = apply_activity_filter(tables, &f.policy, &self.cal);
        let mut analysis = Cohort::new("analysis", format!("{}; {}", pop.phones.provenance, active.provenance));
        for (&sim, tags) in &pop.phones.members {
            if active.contains(sim) {
                analysis.insert(sim);
                for t in tags {
                    analysis.insert_tagged(sim, t);
                }
            }
        }
        let report = json!({
            "sims": tables.sims.len(),
            "phone": pop.phones.len(),
            "non_phone": pop.non_phone.len(),
            "unknown_excluded": pop.unknown_excluded.len(),
            "active": active.len(),
            "analysis": analysis.len(),
        });
        let sims = &tables.sims;
        self.staging.write_with(PHONE_COHORT_FILE, |w| write_cohort(&pop.phones, sims, w))?;
        self.staging.write_with("cohort_active.csv", |w| write_cohort(&active, sims, w))?;
        self.staging.write_with(ANALYSIS_COHORT_FILE, |w| write_cohort(&analysis, sims, w))?;
        self.staging.write_json("filter_report.json", &report)?;
        let fields = vec![("phone", json!(pop.phones.len())), ("analysis", json!(analysis.len()))];
        self.state.phones = Some(pop.phones);
        self.state.analysis = Some(analysis);
        Ok(fields)
    }

    fn spatial(&mut self) -> Result<Vec<(&'static str, Value)>, CliError> {
        self.load_tessellation()?;
        self.load_enrichment()?;
        let tables = self.state.tables.as_ref().expect("tables loaded");
        let map = self.state.map.as_ref().expect("site map built");
        let tess = self.state.tess.as_ref().expect("tessellation built");
        let prices = site_mean_phone_price(tables, self.state.enrichment.as_ref().expect("enrichment loaded"), map);
        let mut values = BTreeMap::new();
        let mut rows = Vec::with_capacity(map.sites.len());
        for (site, p) in map.sites.iter().zip(&prices) {
            if let Some(m) = p.mean() {
                values.insert(site.id, m);
            }
            rows.push([
                site.id.0.to_string(),
                format!("{:.6}", site.lon),
                format!("{:.6}", site.lat),
                p.records.to_string(),
                p.priced_records.to_string(),
                p.coverage().to_string(),
                p.mean().map(|m| m.to_string()).unwrap_or_default(),
            ]);
        }
        let coverage = coverage_geojson(tess);
        let choropleth = export_choropleth(tess, &values, &self.cfg.spatial.price_classes)?;
        let clipped = tess.polygons.iter().filter(|p| p.clipped).count();
        let n_sites = map.sites.len();
        let (map, tables) = (self.state.map.as_ref().unwrap(), self.state.tables.as_ref().unwrap());
        let mut w = self.staging.create("sites.csv")?;
        write_sites(map, tables, &mut w)?;
        w.flush()?;
        self.staging.write_with("site_prices.csv", |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["site_id", "lon", "lat", "records", "priced_records", "price_coverage", "mean_price_eur"])?;
            for r in &rows {
                out.write_record(r)?;
            }
            out.flush()?;
            Ok(())
        })?;
        self.staging.write_with("coverage.geojson", |w| Ok(serde_json::to_writer(w, &coverage)?))?;
        self.staging.write_with("price_choropleth.geojson", |w| Ok(serde_json::to_writer(w, &choropleth)?))?;
        Ok(vec![("sites", json!(n_sites)), ("clipped", json!(clipped)), ("priced_sites", json!(values.len()))])
    }

    fn mobility(&mut self) -> Result<Vec<(&'static str, Value)>, CliError> {
        self.load_map()?;
        if self.state.analysis.is_none() {
            self.state.analysis = Some(self.load_cohort("analysis", ANALYSIS_COHORT_FILE)?);
        }
        let map = self.state.map.as_ref().expect("site map built");
        let positions = site_positions(map, &site_projection(map));
        let sims: Vec<SimId> = self.state.analysis.as_ref().unwrap().members.keys().copied().collect();
        let records = compute_mobility(self.state.tables.as_ref().expect("tables loaded"), map, &positions, &self.cal, &sims, self.cfg.mobility.entropy_norm);
        let mut summary = serde_json::Map::new();
        for period in MobilityPeriod::ALL {
            let sel: Vec<&MobilityRecord> = records.iter().filter(|r| r.period == period).collect();
            let n = sel.len().max(1) as f64;
            summary.insert(
                period.as_str().into(),
                json!({
                    "records": sel.len(),
                    "mean_r_g_km": sel.iter().map(|r| r.r_g_km).sum::<f64>() / n,
                    "mean_entropy": sel.iter().map(|r| r.entropy).sum::<f64>() / n,
                }),
            );
        }
        let sims_names = &self.state.tables.as_ref().expect("tables loaded").sims;
        self.staging.write_with(MOBILITY_FILE, |w| write_mobility(&records, sims_names, w))?;
        self.staging.write_json("mobility_report.json", &json!({"sims": sims.len(), "periods": summary}))?;
        let n = records.len();
        self.state.mobility = Some(records);
        Ok(vec![("sims", json!(sims.len())), ("records", json!(n))])
    }

    fn events(&mut self) -> Result<Vec<(&'static str, Value)>, CliError> {
        let ev = &self.cfg.events;
        let day = ev.day.expect("checked in preflight");
        if !self.cal.contains(day) {
            return Err(CliError::Usage(format!("events.day {day} is outside the calendar")));
        }
        self.load_tessellation()?;
        self.load_enrichment()?;
        if self.state.phones.is_none() {
            self.state.phones = Some(self.load_cohort("phone", PHONE_COHORT_FILE)?);
        }
        if needs_mobility(self.cfg) {
            self.load_mobility()?;
        }
        let thresholds = ev.thresholds.resolve()?;
        let cal = &self.cal;
        let tables = self.state.tables.as_ref().expect("tables loaded");
        let map = self.state.map.as_ref().expect("site map built");

        let t = Instant::now();
        let cube = bin_series(&tables.events, map, cal, ev.bin_minutes)?;
        let site_days = analyze_day(&cube, cal, day, ev.reference)?;
        self.log.emit("events", "site_z", &[("duration_ms", ms(t)), ("sites", json!(site_days.len()))]);
        let d = cube.day_position(day).expect("day in calendar");
        let bins = cube.bins_per_day();
        let local = |ts: i64| cal.local(ts).format("%Y-%m-%dT%H:%M:%S%:z").to_string();

        let region: Vec<SiteId> = match &ev.peak_region {
            Some(r) => {
                let proj = Projection::new(r.center[0], r.center[1]);
                map.sites.iter().filter(|s| proj.forward(s.lon, s.lat).norm2().sqrt() <= r.radius_km).map(|s| s.id).collect()
            }
            None => map.sites.iter().map(|s| s.id).collect(),
        };
        if region.is_empty() {
            return Err(Error::Data("events.peak_region holds no site".into()).into());
        }
        let series = cube.aggregate(&region);
        let day_type = ev.reference.unwrap_or_else(|| cal.day_type(day));
        let profile = reference_profile(
            cube.days().iter().copied().zip(series.iter().map(Vec::as_slice)),
            cal,
            day_type,
            Some(day),
        )?;
        let z = zscore(&series[d], &profile);
        let peaks = detect_peaks(&z, ev.peak_min_z, ev.peak_max_gap_bins);
        let peak_json: Vec<Value> = peaks
            .iter()
            .map(|p| {
                json!({
                    "start": local(cube.bin_start(cal, d, p.start_bin)),
                    "end": local(cube.bin_start(cal, d, p.end_bin - 1) + i64::from(ev.bin_minutes) * 60),
                    "start_bin": p.start_bin,
                    "end_bin": p.end_bin,
                    "max_z": p.max_z,
                    "label": classify_interval(&z, p.start_bin..p.end_bin, &thresholds),
                })
            })
            .collect();
        let series_json: Vec<Value> = (0..bins)
            .map(|b| {
                json!({
                    "bin_start": local(cube.bin_start(cal, d, b)),
                    "count": series[d][b],
                    "mu": profile.mu[b],
                    "sigma": profile.sigma[b],
                    "z": z[b].z,
                    "sigma_zero": z[b].sigma_zero,
                })
            })
            .collect();
        let peaks_doc = json!({
            "day": day,
            "bin_minutes": ev.bin_minutes,
            "reference_day_type": day_type,
            "reference_days": profile.days.len(),
            "region_sites": region.len(),
            "dropped_events": cube.dropped,
            "peaks": peak_json,
            "series": series_json,
        });

        let interval = match &ev.interval {
            Some(i) => {
                let start = cube.bin_of(i.start.hour_minute());
                let end = (i.end.hour_minute() as usize).div_ceil(ev.bin_minutes as usize).min(bins);
                start..end.max(start + 1)
            }
            None => match (peaks.first(), peaks.last()) {
                (Some(a), Some(b)) => a.start_bin..b.end_bin,
                _ => 0..bins,
            },
        };
        let mut values = BTreeMap::new();
        let mut undefined = 0;
        for sd in &site_days {
            let slice = &sd.z[interval.clone()];
            let mean = slice.iter().map(|v| v.z).sum::<f64>() / slice.len() as f64;
            if mean.is_finite() {
                values.insert(sd.site, mean);
            } else {
                undefined += 1;
            }
        }
        let tess = self.state.tess.as_ref().expect("tessellation built");
        let mut choropleth = export_choropleth(tess, &values, &thresholds)?;
        choropleth["properties"] = json!({
            "day": day,
            "interval_start": local(cube.bin_start(cal, d, interval.start)),
            "interval_end": local(cube.bin_start(cal, d, interval.end - 1) + i64::from(ev.bin_minutes) * 60),
            "sites_without_reference_variation": undefined,
        });

        let (windows, k, source) = self.response_windows(&peaks, &cube, d)?;
        let phones = self.state.phones.as_ref().expect("phone cohort loaded");
        let responders = match &windows {
            Some(w) => select_peak_responders(tables, &w.with_k(k)?, phones),
            None => Cohort::new("fans", "no response windows"),
        };
        let comparison = self.compare(&responders, phones)?;
        let window_json: Vec<Value> = windows
            .iter()
            .flat_map(|w| w.windows())
            .map(|w| json!({"start": local(w.start), "start_utc": format_utc(w.start), "minutes": w.minutes}))
            .collect();
        let share = self.cfg.market_share.0;
        let comparison_doc = json!({
            "population": phones.name,
            "population_size": phones.len(),
            "responders": responders.len(),
            "windows": window_json,
            "window_source": source,
            "k_required": k,
            "market_share": share,
            "estimated_responders": scale_by_market_share(responders.len() as u64, share)?,
            "comparisons": comparison.0,
            "skipped": comparison.1,
        });

        let sims = &tables.sims;
        self.staging.write_with("site_z.csv", |w| write_site_z(&site_days, &cube, cal, day, &thresholds, w))?;
        self.staging.write_json("peaks.json", &peaks_doc)?;
        self.staging.write_with("event_choropleth.geojson", |w| Ok(serde_json::to_writer(w, &choropleth)?))?;
        self.staging.write_with("cohort_responders.csv", |w| write_cohort(&responders, sims, w))?;
        self.staging.write_json("cohort_comparison.json", &comparison_doc)?;
        Ok(vec![("peaks", json!(peaks.len())), ("responders", json!(responders.len()))])
    }

    fn response_windows(
        &self,
        peaks: &[Peak],
        cube: &cdrscope_core::event_detection::SeriesCube,
        d: usize,
    ) -> Result<(Option<ResponseWindows>, usize, &'static str), CliError> {
        let ev = &self.cfg.events;
        let (list, source) = if ev.windows.is_empty() {
            let list: Vec<ResponseWindow> = peaks
                .iter()
                .map(|p| ResponseWindow {
                    start: cube.bin_start(&self.cal, d, p.start_bin),
                    minutes: (p.end_bin - p.start_bin) as u32 * ev.bin_minutes,
                })
                .collect();
            (list, "detected_peaks")
        } else {
            let list = ev
                .windows
                .iter()
                .map(|w| Ok(ResponseWindow { start: parse_instant(&w.start, &self.cal)?, minutes: w.minutes }))
                .collect::<Result<Vec<_>, Error>>()?;
            (list, "config")
        };
        if list.is_empty() {
            self.log.emit("events", "no_windows", &[]);
            return Ok((None, 0, source));
        }
        let k = ev.k_required.min(list.len());
        if k < ev.k_required {
            self.log.emit("events", "k_reduced", &[("k", json!(k)), ("windows", json!(list.len()))]);
        }
        Ok((Some(ResponseWindows::new(list, k)?), k, source))
    }

    fn compare(&self, responders: &Cohort, population: &Cohort) -> Result<(Vec<Value>, Vec<Value>), CliError> {
        let ev = &self.cfg.events;
        let tables = self.state.tables.as_ref().expect("tables loaded");
        let enrichment = self.state.enrichment.as_ref().expect("enrichment loaded");
        let n = tables.sims.len();
        let mut ages = vec![None; n];
        for s in &tables.subscribers {
            ages[s.sim.index()] = s.age;
        }
        let dominant = dominant_devices(tables, self.cfg.filter.policy.dominant_device_share);
        let cohort = responders.sims();
        let complement: BTreeSet<SimId> = population.sims().difference(&cohort).copied().collect();
        let mut done = Vec::new();
        let mut skipped = Vec::new();
        for &attr in &ev.compare {
            let values: Vec<Option<f64>> = match attr {
                CohortAttribute::PhonePrice => dominant_prices(&dominant, enrichment),
                CohortAttribute::PhoneAge => dominant
                    .iter()
                    .map(|t| {
                        let release = t.and_then(|t| enrichment.get(&t)).filter(|e| e.matched).and_then(|e| e.release)?;
                        relative_age_months(release, self.cfg.enrich.reference).ok().map(f64::from)
                    })
                    .collect(),
                CohortAttribute::Gyration | CohortAttribute::Entropy => {
                    let mut v = vec![None; n];
                    for r in self.state.mobility.as_deref().unwrap_or_default() {
                        if r.period == MobilityPeriod::All {
                            v[r.sim.index()] = Some(if attr == CohortAttribute::Gyration { r.r_g_km } else { r.entropy });
                        }
                    }
                    v
                }
                CohortAttribute::SubscriberAge => ages.iter().map(|a| a.map(f64::from)).collect(),
            };
            match cohort_compare(&cohort, &complement, attr, &values, &ages, &ev.age_edges) {
                Ok(c) => done.push(serde_json::to_value(c).map_err(Error::from)?),
                Err(Error::EmptyCohort(which)) => skipped.push(json!({"attribute": attr, "empty": which})),
                Err(e) => return Err(e.into()),
            }
        }
        Ok((done, skipped))
    }

    fn pca(&mut self) -> Result<Vec<(&'static str, Value)>, CliError> {
        self.load_tables()?;
        self.load_enrichment()?;
        self.load_mobility()?;
        let tables = self.state.tables.as_ref().expect("tables loaded");
        let n = tables.sims.len();
        let mut ages = vec![None; n];
        let mut payments = vec![PaymentType::Postpaid; n];
        for s in &tables.subscribers {
            ages[s.sim.index()] = s.age;
            payments[s.sim.index()] = s.payment_type;
        }
        let prices = dominant_prices(&dominant_devices(tables, self.cfg.filter.policy.dominant_device_share), self.state.enrichment.as_ref().expect("enrichment loaded"));
        let attrs = SimAttributes { ages: &ages, payments: &payments, prices: &prices };
        let records = self.state.mobility.as_deref().expect("mobility loaded");
        let table = assemble_bin_table(records, &attrs, &self.cfg.pca.bands)?;
        let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| r.values.clone()).collect();
        let weights: Vec<f64> = table.rows.iter().map(|r| r.weight).collect();
        let result = weighted_pca(&rows, &weights, self.cfg.pca.components)?;
        let par = pareto(&result);
        let summary = json!({
            "rows": table.rows.len(),
            "columns": self.cfg.pca.bands.columns(),
            "total_weight": weights.iter().sum::<f64>(),
            "counts": table.counts,
            "eigenvalues": result.eigenvalues,
            "variance_fractions": result.variance_fractions,
            "components": result.components,
            "mean": result.mean,
        });
        self.staging.write_with("bin_table.csv", |w| write_bin_table(&table, w))?;
        self.staging.write_with("pca_projection.csv", |w| write_projection(&table, &result, w))?;
        self.staging.write_with("pca_pareto.csv", |w| write_pareto(&par, w))?;
        self.staging.write_json("pca_summary.json", &summary)?;
        Ok(vec![
            ("rows", json!(table.rows.len())),
            ("pc1_fraction", json!(result.variance_fractions.first().copied().unwrap_or(0.0))),
        ])
    }
}

trait HourMinute {
    fn hour_minute(&self) -> u32;
}

impl HourMinute for chrono::NaiveTime {
    fn hour_minute(&self) -> u32 {
        use chrono::Timelike;
        self.hour() * 60 + self.minute()
    }
}

/// Generates a scenario into the staging directory.
pub fn synth(cfg: &RunConfig, seed: Option<u64>, staging: &mut Staging, log: &Logger) -> Result<Value, CliError> {
    let mut scenario: ScenarioConfig = match &cfg.inputs.scenario {
        Some(p) => {
            require_file(p, "scenario")?;
            staging.note_input("scenario", p);
            read_json(p, "scenario")?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    scenario.validate()?;
    let t = Instant::now();
    log.emit("synth", "start", &[("seed", json!(scenario.seed))]);
    let generated = synthgen::write_scenario(&scenario, staging.dir())?;
    for name in [
        synthgen::CDR_FILE,
        synthgen::TRUTH_FILE,
        synthgen::TAC_CATALOG_FILE,
        synthgen::SPEC_CATALOG_FILE,
        synthgen::BLOCKLIST_FILE,
        synthgen::CALENDAR_FILE,
    ] {
        staging.register(name);
    }
    log.emit(
        "synth",
        "done",
        &[("duration_ms", ms(t)), ("rows", json!(generated.truth.rows)), ("subscribers", json!(generated.truth.subscribers.len()))],
    );
    Ok(serde_json::to_value(&scenario).map_err(Error::from)?)
}

impl Run<'_> {
    pub fn into_staging(self) -> Staging {
        self.staging
    }
}
