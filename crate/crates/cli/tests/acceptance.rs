//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cdrscope_core::calendar::CalendarFile;
use cdrscope_core::cohorts::{phone_population, select_peak_responders, scale_by_market_share, ResponseWindow, ResponseWindows};
use cdrscope_core::device_catalog::{fuse_catalogs, spec_key, FuseOptions, SpecCatalogRow, TacCatalogRow, VendorAliases};
use cdrscope_core::event_detection::{analyze_day, bin_series, LevelThresholds};
use cdrscope_core::ingest::{ingest_reader, IngestOptions};
use cdrscope_core::mobility::{entropy, radius_of_gyration, EntropyNorm, VisitVector};
use cdrscope_core::ses_pca::weighted_pca;
use cdrscope_core::spatial::geometry::Point;
use cdrscope_core::spatial::{merge_cells, voronoi, VoronoiOptions};
use cdrscope_core::synthgen::{self, ActivityConfig, DeviceMix, Plant, ScenarioConfig, SiteSelector};
use cdrscope_core::{Calendar, Tac};
use chrono::{NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_cdrscope");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn hm(h: u32, m: u32) -> NaiveTime {
    NaiveTime::from_hms_opt(h, m, 0).unwrap()
}

fn budapest(start: NaiveDate, end: NaiveDate) -> Calendar {
    let file = CalendarFile { timezone: "Europe/Budapest".into(), start, end, holidays: vec![], workdays: vec![] };
    Calendar::from_file(&file).unwrap()
}

fn gyration_oracle() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let (mut singles, mut nonzero_single) = (0, 0);
    for _ in 0..1000 {
        let locations = rng.gen_range(1..=20);
        let mut visits: Vec<((f64, f64), u64)> = (0..locations)
            .map(|_| ((rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)), 1))
            .collect();
        let budget = rng.gen_range(locations..=50);
        for _ in locations..budget {
            let i = rng.gen_range(0..locations);
            visits[i].1 += 1;
        }
        let v = VisitVector::new(visits.iter().map(|&((x, y), n)| (Point::new(x, y), n)).collect()).unwrap();
        let got = radius_of_gyration(&v);
        if locations == 1 {
            singles += 1;
            nonzero_single += usize::from(got != 0.0);
            continue;
        }
        let want = common::gyration_direct(&visits);
        worst = worst.max((got - want).abs() / want);
    }
    let elapsed = t.elapsed();
    let single = radius_of_gyration(&VisitVector::new(vec![(Point::new(3.5, -2.25), 17)]).unwrap());
    outcome(
        worst <= TOL && single == 0.0 && nonzero_single == 0 && elapsed < Duration::from_secs(1),
        format!(
            "max relative error {worst:.2e} (tol {TOL:e}); {singles} random single-location vectors, {nonzero_single} nonzero; fixed single location {single}; {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn entropy_normalization() -> Outcome {
    let spread = |n: usize| {
        let v = VisitVector::new((0..n).map(|i| (Point::new(i as f64, 0.0), 1)).collect()).unwrap();
        entropy(&v, EntropyNorm::Activities)
    };
    let worst = [2, 10, 100].into_iter().map(|n| (spread(n) - 1.0).abs()).fold(0.0, f64::max);
    let single = entropy(&VisitVector::new(vec![(Point::new(0.0, 0.0), 9)]).unwrap(), EntropyNorm::Activities);
    let pair = VisitVector::new(vec![(Point::new(0.0, 0.0), 3), (Point::new(1.0, 0.0), 1)]).unwrap();
    let hand = entropy(&pair, EntropyNorm::Activities);
    outcome(
        worst <= 1e-9 && single == 0.0 && (hand - 0.4056).abs() <= 5e-4 && (hand - common::entropy_direct(&[3, 1])).abs() < 1e-12,
        format!("max |H - 1| {worst:.1e} over N = 2, 10, 100; single location {single}; {{3,1}} -> {hand:.6}"),
    )
}

fn zscore_detection() -> Outcome {
    let t = Instant::now();
    let day = date(2016, 6, 18);
    let cfg = ScenarioConfig {
        seed: 3,
        n_sites: 20,
        n_subscribers: 4000,
        plants: vec![Plant::Spike { day, time: hm(12, 0), sites: SiteSelector::Indices(vec![7]), bin_minutes: 5, sigma_multiple: 10.0 }],
        ..ScenarioConfig::default()
    };
    let mut cdr = Vec::new();
    let scenario = synthgen::generate(&cfg, &mut cdr).unwrap();
    let cal = scenario.calendar.clone();
    let tables = ingest_reader(cdr.as_slice(), &IngestOptions::default()).unwrap().tables;
    let map = merge_cells(&tables.cell_locations);
    let cube = bin_series(&tables.events, &map, &cal, 5).unwrap();
    let rows = analyze_day(&cube, &cal, day, None).unwrap();
    let spike = &scenario.truth.plants[0].spikes[0];
    let st = &scenario.truth.sites[spike.site];
    let site = map.sites.iter().find(|s| (s.lon - st.lon).abs() < 1e-9 && (s.lat - st.lat).abs() < 1e-9).unwrap().id;
    let zv = rows[site.index()].z[spike.bin];
    let z = zv.z;
    let label = LevelThresholds::downtown().classify(z).to_string();

    let year = budapest(date(2015, 1, 1), date(2015, 12, 31));
    let noise = synthgen::noise_cube(5, &year, 6, 60, 200.0, 20.0).unwrap();
    let (mut loud, mut total) = (0usize, 0usize);
    for &d in noise.days().iter().step_by(3) {
        for r in analyze_day(&noise, &year, d, None).unwrap() {
            total += r.z.len();
            loud += r.z.iter().filter(|v| v.z.abs() > 2.0).count();
        }
    }
    let share = loud as f64 / total as f64;
    let month = budapest(date(2016, 6, 1), date(2016, 6, 30));
    let short = synthgen::noise_cube(5, &month, 6, 60, 200.0, 20.0).unwrap();
    let (mut s_loud, mut s_total) = (0usize, 0usize);
    for &d in short.days() {
        for r in analyze_day(&short, &month, d, None).unwrap() {
            s_total += r.z.len();
            s_loud += r.z.iter().filter(|v| v.z.abs() > 2.0).count();
        }
    }
    let elapsed = t.elapsed();
    outcome(
        label == "very_high" && !zv.sigma_zero && (share - 0.0455).abs() <= 0.015 && total >= 10_000 && elapsed < Duration::from_secs(30),
        format!(
            "spike z {z:.1} (reference sigma {:.2}) -> {label}; noise |z|>2 in {:.2}% of {total} bins (365-day reference; {:.2}% with a 30-day one); {:.1} s",
            rows[site.index()].profile.sigma[spike.bin],
            100.0 * share,
            100.0 * s_loud as f64 / s_total as f64,
            elapsed.as_secs_f64()
        ),
    )
}

fn fan_recovery() -> Outcome {
    let day = date(2016, 6, 18);
    let times = [hm(18, 18), hm(19, 2), hm(19, 18)];
    let cfg = ScenarioConfig {
        seed: 4,
        n_sites: 60,
        n_subscribers: 10_000,
        activity: ActivityConfig { events_per_day: 3.0, ..ActivityConfig::default() },
        devices: DeviceMix { non_phone_fraction: 0.0, unknown_tac_fraction: 0.0, ..DeviceMix::default() },
        plants: vec![Plant::Peak {
            day,
            times: times.to_vec(),
            window_minutes: 5,
            cohort_fraction: 0.0,
            cohort_size: Some(1000),
            min_windows: 2,
            sites: SiteSelector::Home,
        }],
        ..ScenarioConfig::default()
    };
    let mut cdr = Vec::new();
    let scenario = synthgen::generate(&cfg, &mut cdr).unwrap();
    let cal = &scenario.calendar;
    let tables = ingest_reader(cdr.as_slice(), &IngestOptions::default()).unwrap().tables;
    let enrichment = fuse_catalogs(&scenario.tac_catalog, &scenario.spec_catalog, &FuseOptions::default()).unwrap();
    let phones = phone_population(&tables, &enrichment, 0.5, false).phones;
    let windows: Vec<ResponseWindow> = times
        .iter()
        .map(|t| ResponseWindow { start: cal.to_utc(day.and_time(*t)), minutes: 5 })
        .collect();
    let select = |k: usize| -> BTreeSet<String> {
        let w = ResponseWindows::new(windows.clone(), k).unwrap();
        select_peak_responders(&tables, &w, &phones).members.keys().map(|s| tables.sim_name(*s).to_string()).collect()
    };
    let (k1, k2, k3) = (select(1), select(2), select(3));
    let truth: BTreeSet<String> = scenario.truth.responders().into_iter().map(str::to_string).collect();
    let hits = k2.intersection(&truth).count();
    let recall = hits as f64 / truth.len() as f64;
    let precision = hits as f64 / k2.len().max(1) as f64;
    let monotone = k2.is_subset(&k1) && k3.is_subset(&k2);
    outcome(
        phones.len() == 10_000 && truth.len() == 1000 && recall >= 0.99 && precision >= 0.95 && monotone,
        format!(
            "{} phones, {} planted; k=2 selects {} (recall {recall:.4}, precision {precision:.4}); |k1|={} >= |k2| >= |k3|={} nested: {monotone}",
            phones.len(),
            truth.len(),
            k2.len(),
            k1.len(),
            k3.len()
        ),
    )
}

fn voronoi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let side = 10.0;
    let sites: Vec<(f64, f64)> = (0..100).map(|_| (rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect();
    let points: Vec<Point> = sites.iter().map(|&(x, y)| Point::new(x, y)).collect();
    let boundary = vec![vec![Point::new(0.0, 0.0), Point::new(side, 0.0), Point::new(side, side), Point::new(0.0, side)]];
    let cells = voronoi(&points, &boundary, &VoronoiOptions::default()).unwrap();
    let (mut agree, mut counted) = (0usize, 0usize);
    for _ in 0..10_000 {
        let p = (rng.gen_range(0.0..side), rng.gen_range(0.0..side));
        if common::nearest_margin(&sites, p) < 1e-9 {
            continue;
        }
        counted += 1;
        let want = common::nearest(&sites, p);
        let owner = cells.iter().find(|c| c.contains(Point::new(p.0, p.1))).map(|c| c.site.index());
        if owner == Some(want) {
            agree += 1;
        }
    }
    let share = agree as f64 / counted as f64;
    let area: f64 = cells.iter().map(|c| c.area()).sum();
    let rel = (area - side * side).abs() / (side * side);
    outcome(
        share >= 0.999 && rel <= 1e-6,
        format!("{agree}/{counted} probes agree ({:.3}%); area sum relative error {rel:.1e}", 100.0 * share),
    )
}

/// TAC-side (vendor, family, model code) against spec-side (brand, model).
const PAIRS: [(&str, &str, &str, &str, &str); 50] = [
    ("SAMSUNG", "Galaxy S7", "SM-G930F", "Samsung", "Galaxy S7"),
    ("samsung", "GALAXY S6", "SM-G920F", "Samsung", "Galaxy S6"),
    ("Samsung", "galaxy  j1", "SM-J100H", "Samsung", "Galaxy J1"),
    ("SAMSUNG", "Galaxy A5", "SM-A500F", "Samsung", "Galaxy A5"),
    ("Samsung", "Galaxy Note 4", "SM-N910F", "Samsung", "Galaxy Note 4"),
    ("samsung", "Galaxy Core Prime", "SM-G360F", "Samsung", "Galaxy Core Prime"),
    ("Apple", "IPHONE 6S", "A1688", "Apple", "iPhone 6s"),
    ("APPLE", "iPhone 6", "A1586", "Apple", "iPhone 6"),
    ("apple", "iPhone 5s", "A1457", "Apple", "iPhone 5s"),
    ("Apple", "iPhone SE", "A1723", "Apple", "iPhone SE"),
    ("HUAWEI", "P8 Lite", "ALE-L21", "Huawei", "P8 Lite"),
    ("Huawei", "Y6", "SCL-L01", "Huawei", "Y6"),
    ("huawei", "Mate 8", "NXT-L29", "Huawei", "Mate 8"),
    ("LG ELECTRONICS", "G4", "H815", "LG Electronics", "G4"),
    ("LG Electronics", "Nexus 5", "D821", "LG Electronics", "Nexus 5"),
    ("Sony", "XPERIA Z3", "D6603", "Sony", "Xperia Z3"),
    ("SONY", "Xperia M4 Aqua", "E2303", "Sony", "Xperia M4 Aqua"),
    ("sony", "Xperia Z5 Compact", "E5823", "Sony", "Xperia Z5 Compact"),
    ("Alcatel", "OneTouch Pixi 3", "4013D", "Alcatel", "OneTouch Pixi 3"),
    ("ALCATEL", "OneTouch Idol 3", "6045Y", "Alcatel", "OneTouch Idol 3"),
    ("Motorola", "Moto G", "XT1068", "Motorola", "Moto G"),
    ("MOTOROLA", "Moto X Play", "XT1562", "Motorola", "Moto X Play"),
    ("HTC", "One M9", "0PJA10", "HTC", "One M9"),
    ("htc", "Desire 620", "D620h", "HTC", "Desire 620"),
    ("Lenovo", "A6000", "A6000", "Lenovo", "A6000"),
    ("Nokia", "Lumia 640", "RM-1077", "Microsoft", "Lumia 640"),
    ("NOKIA", "Lumia 530", "RM-1017", "Microsoft", "Lumia 530"),
    ("Nokia", "Lumia 930", "RM-1045", "Microsoft", "Lumia 930"),
    ("nokia", "105", "RM-908", "Microsoft", "105"),
    ("Nokia", "Lumia 1520", "RM-937", "Microsoft", "Lumia 1520"),
    ("RIM", "BlackBerry Q10", "SQN100-1", "BlackBerry", "BlackBerry Q10"),
    ("Research In Motion", "BlackBerry Curve 9320", "REX41GW", "BlackBerry", "BlackBerry Curve 9320"),
    ("RIM", "BlackBerry Z10", "STL100-2", "BlackBerry", "BlackBerry Z10"),
    ("research in motion", "BlackBerry Bold 9900", "RDE71UW", "BlackBerry", "BlackBerry Bold 9900"),
    ("RIM", "BlackBerry Passport", "SQW100-1", "BlackBerry", "BlackBerry Passport"),
    ("Samsung", "Galaxy S5 Neo", "SM-G903F", "Samsung", "Galaxy S5-Neo"),
    ("Samsung", "Galaxy Grand Prime", "SM-G530FZ", "Samsung", "Galaxy Grand Prime+"),
    ("Sony", "Xperia E4g", "E2003", "Sony", "Xperia E4 g"),
    ("Huawei", "Ascend P7", "P7-L10", "Huawei", "Ascend P7 "),
    ("Motorola", "Moto E 2nd Gen", "XT1524", "Motorola", "Moto E 2nd gen."),
    ("Microsoft", "Lumia 640 XL", "RM-1062", "Microsoft", "Lumia 640XL"),
    ("Alcatel", "OneTouch Pop C7", "7041D", "Alcatel", "One Touch Pop C7"),
    ("LG Electronics", "Optimus L7 II", "P710", "LG Electronics", "Optimus L7II"),
    ("HTC", "Desire 816G", "D816g", "HTC", "Desire 816 G"),
    ("Lenovo", "Vibe K5 Plus", "A6020a46", "Lenovo", "Vibe K5+"),
    ("Apple", "iPhone 6 Plus", "A1524", "Apple", "iPhone 6+"),
    ("Samsung", "Galaxy Xcover 3", "SM-G388F", "Samsung", "Galaxy XCover3 VE"),
    ("Doro", "PhoneEasy 612", "DFB-0090", "Doro", "Phone Easy 612"),
    ("ZTE", "Blade L3", "L3", "ZTE", "Blade L3 Plus"),
    ("Huawei", "Honor 7", "PLK-L01", "Huawei", "Honor7"),
];

/// Close relatives of fixture models that must never be picked instead.
const DISTRACTORS: [(&str, &str); 10] = [
    ("Samsung", "Galaxy S7 edge"),
    ("Samsung", "Galaxy S6 edge+"),
    ("Apple", "iPhone 6s Plus"),
    ("Huawei", "P8"),
    ("Sony", "Xperia Z3+"),
    ("Microsoft", "Lumia 640 LTE Dual SIM"),
    ("BlackBerry", "BlackBerry Q5"),
    ("Motorola", "Moto G 3rd gen"),
    ("Alcatel", "OneTouch Pixi 4"),
    ("HTC", "One M8"),
];

fn catalog_fusion() -> Outcome {
    let tac_rows: Vec<TacCatalogRow> = PAIRS
        .iter()
        .enumerate()
        .map(|(i, p)| TacCatalogRow {
            tac: Tac::from_u32(35_000_000 + i as u32).unwrap(),
            vendor: Some(p.0.into()),
            family: Some(p.1.into()),
            model: Some(p.2.into()),
            non_phone_hint: None,
        })
        .collect();
    let spec = |brand: &str, model: &str, i: usize| SpecCatalogRow {
        brand: brand.into(),
        model: model.into(),
        price_eur: Some(100.0 + i as f64),
        release: None,
        os: None,
    };
    let mut spec_rows: Vec<SpecCatalogRow> = PAIRS.iter().enumerate().map(|(i, p)| spec(p.3, p.4, i)).collect();
    spec_rows.extend(DISTRACTORS.iter().enumerate().map(|(i, d)| spec(d.0, d.1, 500 + i)));
    let opts = FuseOptions::default();
    let aliases = VendorAliases::default();
    let fused = fuse_catalogs(&tac_rows, &spec_rows, &opts).unwrap();

    let (mut exact, mut exact_at_100, mut correct, mut below) = (0, 0, 0, 0);
    for i in 0..PAIRS.len() {
        let e = &fused[&tac_rows[i].tac];
        let key = spec_key(&spec_rows[i], &aliases);
        let ids: Vec<String> = cdrscope_core::device_catalog::build_identifiers(&tac_rows[i], &aliases).into_iter().map(|(_, k)| k).collect();
        if ids.contains(&key) {
            exact += 1;
            if e.match_score == 100 && e.matched_key.as_deref() == Some(key.as_str()) {
                exact_at_100 += 1;
            }
        }
        if e.matched_key.as_deref() == Some(key.as_str()) {
            correct += 1;
        }
        if e.matched && e.match_score < opts.cutoff {
            below += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut invariant = true;
    for _ in 0..20 {
        let (mut t, mut s) = (tac_rows.clone(), spec_rows.clone());
        t.shuffle(&mut rng);
        s.shuffle(&mut rng);
        invariant &= fuse_catalogs(&t, &s, &opts).unwrap() == fused;
    }
    let rate = correct as f64 / PAIRS.len() as f64;
    outcome(
        exact_at_100 == exact && rate >= 0.9 && below == 0 && invariant,
        format!(
            "{exact_at_100}/{exact} normalized-equal pairs at 100; {correct}/{} correct ({:.0}%); {below} below cutoff; permutation invariant: {invariant}",
            PAIRS.len(),
            100.0 * rate
        ),
    )
}

fn pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 60;
    let (mut worst_vec, mut worst_frac, mut worst_sum): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let rows_n = rng.gen_range(80..200);
        let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let scales = [5.0, 2.5, 1.0];
        let rows: Vec<Vec<f64>> = (0..rows_n)
            .map(|_| {
                let c: Vec<f64> = scales.iter().map(|s| s * rng.gen_range(-1.0..1.0)).collect();
                (0..d)
                    .map(|j| (0..3).map(|k| c[k] * basis[k][j]).sum::<f64>() + 0.05 * rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let weights: Vec<f64> = (0..rows_n).map(|_| rng.gen_range(1.0..50.0)).collect();
        let got = weighted_pca(&rows, &weights, 2).unwrap();
        let (values, vectors) = common::jacobi_eigen(&common::covariance(&rows, &weights));
        let trace: f64 = values.iter().map(|v| v.max(0.0)).sum();
        for k in 0..2 {
            let sign = if got.components[k].iter().zip(&vectors[k]).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            let diff = got.components[k].iter().zip(&vectors[k]).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max);
            worst_vec = worst_vec.max(diff);
            worst_frac = worst_frac.max((got.variance_fractions[k] - values[k] / trace).abs());
        }
        worst_sum = worst_sum.max((got.variance_fractions.iter().sum::<f64>() - 1.0).abs());
    }
    let dir: Vec<f64> = (0..d).map(|j| (j as f64 * 0.37).sin()).collect();
    let rows: Vec<Vec<f64>> = (0..12).map(|i| dir.iter().map(|v| 0.5 + v * (i as f64 - 4.0)).collect()).collect();
    let collinear = weighted_pca(&rows, &vec![1.0; 12], 1).unwrap().variance_fractions[0];
    outcome(
        worst_vec <= 1e-6 && worst_frac <= 1e-6 && worst_sum <= 1e-9 && (collinear - 1.0).abs() <= 1e-12,
        format!(
            "component error {worst_vec:.1e}, fraction error {worst_frac:.1e}, |sum - 1| {worst_sum:.1e}; collinear PC1 fraction {collinear}"
        ),
    )
}

fn market_share() -> Outcome {
    let estimate = scale_by_market_share(4246, 0.253).unwrap();
    outcome(estimate == 16_783, format!("4246 / 0.253 -> {estimate}"))
}

fn children_max_rss_kib() -> i64 {
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    unsafe { libc::getrusage(libc::RUSAGE_CHILDREN, &mut usage) };
    usage.ru_maxrss
}

fn synth_rows(dir: &Path, subscribers: usize) -> (std::path::PathBuf, u64) {
    fs::create_dir_all(dir).unwrap();
    let cfg = ScenarioConfig { seed: 9, n_sites: 300, n_subscribers: subscribers, ..ScenarioConfig::default() };
    let scenario = synthgen::write_scenario(&cfg, dir).unwrap();
    (dir.join(synthgen::CDR_FILE), scenario.truth.rows)
}

fn timed_ingest(cdr: &Path, out: &Path) -> Result<Duration, String> {
    let t = Instant::now();
    let o = Command::new(BIN)
        .args(["ingest", "--input", cdr.to_str().unwrap(), "--output-dir", out.to_str().unwrap(), "--log-format", "json"])
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    Ok(t.elapsed())
}

fn throughput(scratch: &Path) -> Outcome {
    let (small, small_rows) = synth_rows(&scratch.join("small"), 5_900);
    let (large, large_rows) = synth_rows(&scratch.join("large"), 59_000);
    let mut small_time = Duration::MAX;
    for _ in 0..3 {
        match timed_ingest(&small, &scratch.join("out_small")) {
            Ok(t) => small_time = small_time.min(t),
            Err(e) => return outcome(false, format!("ingest failed: {e}")),
        }
        let _ = fs::remove_dir_all(scratch.join("out_small"));
    }
    let large_time = match timed_ingest(&large, &scratch.join("out_large")) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("ingest failed: {e}")),
    };
    let rss_mib = children_max_rss_kib() as f64 / 1024.0;
    let _ = fs::remove_dir_all(scratch.join("large"));
    let _ = fs::remove_dir_all(scratch.join("out_large"));
    let per_row_small = small_time.as_secs_f64() / small_rows as f64;
    let per_row_large = large_time.as_secs_f64() / large_rows as f64;
    let ratio = per_row_large / per_row_small;
    outcome(
        large_rows >= 10_000_000 && large_time < Duration::from_secs(60) && rss_mib < 2048.0 && (ratio - 1.0).abs() <= 0.2,
        format!(
            "{large_rows} rows in {:.1} s, peak RSS {rss_mib:.0} MiB; {small_rows} rows in {:.2} s (best of 3); per-row time ratio {ratio:.2}; {} hardware threads",
            large_time.as_secs_f64(),
            small_time.as_secs_f64(),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn determinism(scratch: &Path) -> Outcome {
    let data = scratch.join("study_data");
    fs::create_dir_all(&data).unwrap();
    let scen = ScenarioConfig {
        seed: 10,
        n_sites: 80,
        n_subscribers: 5000,
        plants: vec![
            Plant::Peak {
                day: date(2016, 6, 18),
                times: vec![hm(18, 18), hm(19, 2), hm(19, 18)],
                window_minutes: 5,
                cohort_fraction: 0.1,
                cohort_size: None,
                min_windows: 2,
                sites: SiteSelector::Home,
            },
            Plant::Festival {
                day: date(2016, 6, 18),
                start: hm(20, 0),
                minutes: 60,
                sites: SiteSelector::Nearest { offset_km: [0.0, 0.0], count: 3 },
                amplitude: 5.0,
            },
        ],
        ..ScenarioConfig::default()
    };
    synthgen::write_scenario(&scen, &data).unwrap();
    let p = |n: &str| data.join(n).to_string_lossy().into_owned();
    let config = serde_json::json!({
        "inputs": {"cdr": p(synthgen::CDR_FILE), "tac_catalog": p(synthgen::TAC_CATALOG_FILE),
                   "spec_catalog": p(synthgen::SPEC_CATALOG_FILE), "blocklist": p(synthgen::BLOCKLIST_FILE)},
        "calendar": p(synthgen::CALENDAR_FILE),
        "filter": {"policy": {"min_active_days": 15, "min_workday_mean": 2.0, "min_weekend_mean": 1.0}, "exclude_unknown": false},
        "events": {"day": "2016-06-18", "peak_min_z": 4.0, "k_required": 2,
                   "compare": ["phone_price", "phone_age", "gyration", "entropy", "subscriber_age"]}
    });
    let config_path = scratch.join("study.json");
    fs::write(&config_path, config.to_string()).unwrap();
    let mut runs = Vec::new();
    for (label, threads) in [("t1", "1"), ("t4", "4"), ("t8", "8"), ("t1_again", "1")] {
        let out = scratch.join(label);
        let o = Command::new(BIN)
            .args(["study", "--config", config_path.to_str().unwrap(), "--output-dir", out.to_str().unwrap(), "--threads", threads])
            .output()
            .unwrap();
        if !o.status.success() {
            return outcome(false, format!("study --threads {threads} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        runs.push(files);
    }
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    let bytes: usize = runs[0].iter().map(|f| f.1.len()).sum();
    outcome(
        identical && runs[0].len() > 20,
        format!("{} artifacts ({bytes} bytes) byte-identical across --threads 1, 4, 8 and a rerun: {identical}", runs[0].len()),
    )
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gyration oracle", Box::new(gyration_oracle)),
        ("entropy normalization", Box::new(entropy_normalization)),
        ("z-score detection", Box::new(zscore_detection)),
        ("fan cohort recovery", Box::new(fan_recovery)),
        ("voronoi oracle", Box::new(voronoi_oracle)),
        ("catalog fusion", Box::new(catalog_fusion)),
        ("pca oracle", Box::new(pca_oracle)),
        ("market share scaling", Box::new(market_share)),
        ("ingest throughput", Box::new(|| throughput(scratch.path()))),
        ("study determinism", Box::new(|| determinism(scratch.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {}: {} ({})", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
