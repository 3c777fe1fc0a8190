use cdrscope_core::cohorts::{dominant_devices, dominant_prices, phone_population};
use cdrscope_core::device_catalog::{fuse_catalogs, FuseOptions};
use cdrscope_core::event_detection::{analyze_day, bin_series, classify_interval, LevelThresholds};
use cdrscope_core::ingest::{ingest_reader, IngestOptions, NormalizedTables};
use cdrscope_core::mobility::{compute_mobility, EntropyNorm, MobilityPeriod};
use cdrscope_core::ses_pca::{assemble_bin_table, weighted_pca, BandConfig, SimAttributes};
use cdrscope_core::spatial::{merge_cells, site_mean_phone_price, site_positions, tessellate, VoronoiOptions};
use cdrscope_core::synthgen::{generate, Plant, RichDistrict, Scenario, ScenarioConfig, SiteSelector};
use cdrscope_core::SimId;
use chrono::{NaiveDate, NaiveTime};

fn scenario(cfg: &ScenarioConfig) -> (Scenario, NormalizedTables) {
    let mut bytes = Vec::new();
    let s = generate(cfg, &mut bytes).unwrap();
    let opts = IngestOptions { period: Some(s.calendar.period_bounds()), ..IngestOptions::default() };
    let out = ingest_reader(bytes.as_slice(), &opts).unwrap();
    assert_eq!(out.report.rejected, 0);
    (s, out.tables)
}

fn city() -> ScenarioConfig {
    let mut cfg = ScenarioConfig { n_sites: 60, n_subscribers: 1500, ..ScenarioConfig::default() };
    cfg.city.rich_district = Some(RichDistrict { offset_km: [-4.0, 3.0], radius_km: 3.0, price_scale_eur: 5000.0 });
    cfg.movement.price_gain = 1.0;
    cfg
}

#[test]
fn rich_district_sites_show_dearer_phones() {
    let (s, tables) = scenario(&city());
    let enrichment = fuse_catalogs(&s.tac_catalog, &s.spec_catalog, &FuseOptions::default()).unwrap();
    let map = merge_cells(&tables.cell_locations);
    let prices = site_mean_phone_price(&tables, &enrichment, &map);
    let (mut rich, mut rest) = (Vec::new(), Vec::new());
    for (site, p) in map.sites.iter().zip(&prices) {
        let truth = s.truth.sites.iter().find(|t| (t.lon, t.lat) == (site.lon, site.lat)).unwrap();
        if let Some(m) = p.mean() {
            if truth.rich { rich.push(m) } else { rest.push(m) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!rich.is_empty() && !rest.is_empty());
    assert!(mean(&rich) > mean(&rest) + 50.0, "rich {} rest {}", mean(&rich), mean(&rest));
}

#[test]
fn planted_price_mobility_survives_the_pipeline() {
    let (s, tables) = scenario(&city());
    let enrichment = fuse_catalogs(&s.tac_catalog, &s.spec_catalog, &FuseOptions::default()).unwrap();
    let population = phone_population(&tables, &enrichment, 0.5, true);
    let map = merge_cells(&tables.cell_locations);
    let tess = tessellate(&map, None, &VoronoiOptions::default()).unwrap();
    let positions = site_positions(&map, &tess.projection);
    let sims: Vec<SimId> = population.phones.sims().into_iter().collect();
    let records = compute_mobility(&tables, &map, &positions, &s.calendar, &sims, EntropyNorm::Activities);
    assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.entropy) && r.r_g_km >= 0.0));

    let prices = dominant_prices(&dominant_devices(&tables, 0.5), &enrichment);
    let workday = |lo: f64, hi: f64| {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.period == MobilityPeriod::Workday && prices[r.sim.index()].is_some_and(|p| (lo..hi).contains(&p)))
            .map(|r| r.r_g_km)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(workday(500.0, 1e9) > 1.3 * workday(0.0, 200.0));

    let ages: Vec<Option<u8>> = tables.subscribers.iter().map(|s| s.age).collect();
    let payments: Vec<_> = tables.subscribers.iter().map(|s| s.payment_type).collect();
    let attrs = SimAttributes { ages: &ages, payments: &payments, prices: &prices };
    let table = assemble_bin_table(&records, &attrs, &BandConfig::default()).unwrap();
    let g = BandConfig::default().gyration.bins;
    for row in &table.rows {
        let sum: f64 = row.values[..g].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    let mean_bin = |band: usize| {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.key.price_band == band).collect();
        let w: f64 = rows.iter().map(|r| r.weight).sum();
        rows.iter().map(|r| r.weight * (0..g).map(|b| b as f64 * r.values[b]).sum::<f64>()).sum::<f64>() / w
    };
    assert!(mean_bin(6) > mean_bin(0) + 1.0, "{} vs {}", mean_bin(6), mean_bin(0));
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| r.values.clone()).collect();
    let weights: Vec<f64> = table.rows.iter().map(|r| r.weight).collect();
    let pca = weighted_pca(&rows, &weights, 2).unwrap();
    assert!(pca.variance_fractions[0] > 0.0 && pca.variance_fractions[0] <= 1.0);
}

#[test]
fn festival_sites_light_up() {
    let day = NaiveDate::from_ymd_opt(2016, 6, 11).unwrap();
    let mut cfg = ScenarioConfig { n_sites: 30, n_subscribers: 1200, ..ScenarioConfig::default() };
    cfg.plants.push(Plant::Festival {
        day,
        start: NaiveTime::from_hms_opt(20, 0, 0).unwrap(),
        minutes: 120,
        sites: SiteSelector::Nearest { offset_km: [0.0, 0.0], count: 3 },
        amplitude: 8.0,
    });
    let (s, tables) = scenario(&cfg);
    let planted: Vec<(f64, f64)> = s.truth.plants[0].sites.iter().map(|&i| (s.truth.sites[i].lon, s.truth.sites[i].lat)).collect();
    let map = merge_cells(&tables.cell_locations);
    let cube = bin_series(&tables.events, &map, &s.calendar, 15).unwrap();
    let rows = analyze_day(&cube, &s.calendar, day, None).unwrap();
    let thresholds = LevelThresholds::downtown();
    let window = 80..88;
    for r in &rows {
        let site = &map.sites[r.site.index()];
        let label = classify_interval(&r.z, window.clone(), &thresholds);
        if planted.contains(&(site.lon, site.lat)) {
            assert_eq!(label, "very_high", "site {:?}", r.site);
        } else {
            assert_ne!(label, "very_high", "site {:?}", r.site);
        }
    }
}
