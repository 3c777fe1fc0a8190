//! TAC resolution: fuses a TAC catalog (vendor / family / model plus
//! non-phone annotations) with a phone specification catalog (brand + model,
//! release price and date) by fuzzy matching composite identifiers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Tac;

#[derive(Debug, Clone, PartialEq)]
pub struct TacCatalogRow {
    pub tac: Tac,
    pub vendor: Option<String>,
    pub family: Option<String>,
    pub model: Option<String>,
    pub non_phone_hint: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecCatalogRow {
    pub brand: String,
    pub model: String,
    pub price_eur: Option<f64>,
    pub release: Option<YearMonth>,
    pub os: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Data(format!("month {month} out of range")));
        }
        Ok(YearMonth { year, month })
    }

    fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s.split_once('-').ok_or_else(|| Error::Data(format!("bad year-month {s:?}")))?;
        let year = y.parse().map_err(|_| Error::Data(format!("bad year in {s:?}")))?;
        let month = m.parse().map_err(|_| Error::Data(format!("bad month in {s:?}")))?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which concatenation of catalog fields produced a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composite {
    VendorFamily,
    VendorModel,
    VendorFamilyModel,
}

impl Composite {
    pub fn as_str(self) -> &'static str {
        match self {
            Composite::VendorFamily => "vendor_family",
            Composite::VendorModel => "vendor_model",
            Composite::VendorFamilyModel => "vendor_family_model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TacEnrichment {
    pub tac: Tac,
    pub matched: bool,
    pub price_eur: Option<f64>,
    pub release: Option<YearMonth>,
    pub non_phone: bool,
    pub match_score: u8,
    pub matched_identifier: Option<Composite>,
    /// Normalized spec catalog key of the matched row.
    pub matched_key: Option<String>,
    pub os: Option<String>,
}

impl TacEnrichment {
    pub fn unmatched(tac: Tac, non_phone: bool) -> Self {
        TacEnrichment {
            tac,
            matched: false,
            price_eur: None,
            release: None,
            non_phone,
            match_score: 0,
            matched_identifier: None,
            matched_key: None,
            os: None,
        }
    }

    /// Price usable for socioeconomic analysis: matched phones only.
    pub fn phone_price(&self) -> Option<f64> {
        if self.non_phone {
            None
        } else {
            self.price_eur
        }
    }
}

pub type Enrichment = BTreeMap<Tac, TacEnrichment>;

pub fn extract_tac(imei: &str) -> Result<Tac> {
    if imei.len() < 8 || !imei.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::BadImei(imei.to_string()));
    }
    Ok(Tac::parse_bytes(&imei.as_bytes()[..8]).expect("eight digits"))
}

/// Case-folds and collapses runs of whitespace.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Drops repeated tokens, keeping first occurrences.
pub fn dedup_tokens(s: &str) -> String {
    let mut seen = BTreeSet::new();
    s.split(' ').filter(|t| !t.is_empty() && seen.insert(*t)).collect::<Vec<_>>().join(" ")
}

/// Vendor renames, keyed and valued by normalized names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorAliases(BTreeMap<String, String>);

impl Default for VendorAliases {
    fn default() -> Self {
        VendorAliases::new([
            ("RIM", "BlackBerry"),
            ("Research In Motion", "BlackBerry"),
            ("Nokia", "Microsoft"),
        ])
    }
}

impl VendorAliases {
    pub fn new<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        VendorAliases(pairs.into_iter().map(|(from, to)| (normalize_text(from), normalize_text(to))).collect())
    }

    pub fn empty() -> Self {
        VendorAliases(BTreeMap::new())
    }

    pub fn apply(&self, normalized: &str) -> String {
        let mut name = normalized.to_string();
        // Follow chains, bounded against cycles.
        for _ in 0..=self.0.len() {
            match self.0.get(&name) {
                Some(next) if *next != name => name = next.clone(),
                _ => break,
            }
        }
        name
    }
}

pub fn normalize_vendor(name: &str, aliases: &VendorAliases) -> String {
    aliases.apply(&normalize_text(name))
}

/// Up to three composite keys: vendor + family, vendor + model and
/// vendor + family + model. Absent parts are skipped, repeated tokens inside
/// a key are dropped and keys equal to an earlier one are removed.
pub fn build_identifiers(row: &TacCatalogRow, aliases: &VendorAliases) -> Vec<(Composite, String)> {
    let vendor = row.vendor.as_deref().map(|v| normalize_vendor(v, aliases)).filter(|v| !v.is_empty());
    let part = |p: &Option<String>| p.as_deref().map(normalize_text).filter(|p| !p.is_empty());
    let (family, model) = (part(&row.family), part(&row.model));
    let Some(vendor) = vendor else {
        return Vec::new();
    };
    let join = |parts: &[&Option<String>]| -> String {
        let mut s = vendor.clone();
        for p in parts.iter().filter_map(|p| p.as_deref()) {
            s.push(' ');
            s.push_str(p);
        }
        dedup_tokens(&s)
    };
    let candidates = [
        (Composite::VendorFamily, join(&[&family])),
        (Composite::VendorModel, join(&[&model])),
        (Composite::VendorFamilyModel, join(&[&family, &model])),
    ];
    let mut out: Vec<(Composite, String)> = Vec::new();
    for (kind, key) in candidates {
        if !out.iter().any(|(_, k)| *k == key) {
            out.push((kind, key));
        }
    }
    out
}

/// Normalized identifier of a spec catalog row: brand + model.
pub fn spec_key(row: &SpecCatalogRow, aliases: &VendorAliases) -> String {
    dedup_tokens(&format!("{} {}", normalize_vendor(&row.brand, aliases), normalize_text(&row.model)))
}

/// Edit distance over Unicode scalar values, two-row dynamic programme.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ratio_from(distance: usize, longest: usize) -> u8 {
    if distance == 0 {
        return 100;
    }
    let r = (100.0 * (1.0 - distance as f64 / longest as f64)).round() as u8;
    // Only identical strings score 100.
    r.min(99)
}

/// Similarity in 0..=100 from the edit distance of the normalized strings.
pub fn levenshtein_ratio(a: &str, b: &str) -> u8 {
    let a: Vec<char> = normalize_text(a).chars().collect();
    let b: Vec<char> = normalize_text(b).chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 100;
    }
    ratio_from(levenshtein_chars(&a, &b), longest)
}

/// Whole-month age of a phone at `reference`.
pub fn relative_age_months(release: YearMonth, reference: YearMonth) -> Result<u32> {
    let diff = reference.ordinal() - release.ordinal();
    if diff < 0 {
        return Err(Error::FutureRelease { release: release.to_string(), reference: reference.to_string() });
    }
    Ok(diff as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceHook {
    /// Release price, no depreciation.
    Release,
    /// Release price reduced by `annual_rate` per year of phone age.
    Depreciated { annual_rate: f64 },
}

#[derive(Debug, Clone)]
pub struct FuseOptions {
    pub cutoff: u8,
    pub aliases: VendorAliases,
    pub blocklist: BTreeSet<Tac>,
    pub reference: YearMonth,
    pub price: PriceHook,
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions {
            cutoff: 90,
            aliases: VendorAliases::default(),
            blocklist: BTreeSet::new(),
            reference: YearMonth { year: 2016, month: 6 },
            price: PriceHook::Release,
        }
    }
}

#[derive(Debug)]
struct IndexedSpec<'a> {
    key: Vec<char>,
    key_text: String,
    row: &'a SpecCatalogRow,
}

/// Matches every TAC catalog row against the spec catalog.
///
/// Each composite identifier is compared to the spec keys of the same
/// normalized vendor (all keys when the vendor is absent from the spec
/// catalog). The best candidate at or above `cutoff` wins; ties prefer the
/// higher score, then the longer composite, then the smaller spec key.
/// Spec rows sharing a normalized key are reduced to one deterministic
/// representative. Blocklisted TACs missing from the catalog are emitted as
/// unmatched non-phone entries.
pub fn fuse_catalogs(tac_catalog: &[TacCatalogRow], spec_catalog: &[SpecCatalogRow], opts: &FuseOptions) -> Result<Enrichment> {
    let mut seen = BTreeSet::new();
    for row in tac_catalog {
        if !seen.insert(row.tac) {
            return Err(Error::DuplicateTac(row.tac.to_string()));
        }
    }

    let mut specs: Vec<IndexedSpec> = spec_catalog
        .iter()
        .map(|row| {
            let key_text = spec_key(row, &opts.aliases);
            IndexedSpec { key: key_text.chars().collect(), key_text, row }
        })
        .collect();
    specs.sort_by(|a, b| {
        a.key_text.cmp(&b.key_text).then_with(|| spec_order(a.row).partial_cmp(&spec_order(b.row)).unwrap())
    });
    specs.dedup_by(|later, earlier| later.key_text == earlier.key_text);

    let mut by_vendor: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, s) in specs.iter().enumerate() {
        by_vendor.entry(normalize_vendor(&s.row.brand, &opts.aliases)).or_default().push(i);
    }
    let all: Vec<usize> = (0..specs.len()).collect();

    let fused: Vec<TacEnrichment> = tac_catalog
        .par_iter()
        .map(|row| {
            let non_phone = row.non_phone_hint == Some(true) || opts.blocklist.contains(&row.tac);
            let ids = build_identifiers(row, &opts.aliases);
            let vendor = row.vendor.as_deref().map(|v| normalize_vendor(v, &opts.aliases)).unwrap_or_default();
            let pool = by_vendor.get(&vendor).unwrap_or(&all);
            let mut best: Option<(u8, usize, usize, Composite)> = None;
            for (kind, key) in &ids {
                let key: Vec<char> = key.chars().collect();
                for &si in pool {
                    let spec = &specs[si];
                    let longest = key.len().max(spec.key.len());
                    let bound = ratio_from(key.len().abs_diff(spec.key.len()), longest);
                    if bound < opts.cutoff {
                        continue;
                    }
                    let score = ratio_from(levenshtein_chars(&key, &spec.key), longest);
                    if score < opts.cutoff {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bs, blen, bsi, _)) => {
                            (score, key.len(), std::cmp::Reverse(&spec.key_text))
                                > (bs, blen, std::cmp::Reverse(&specs[bsi].key_text))
                        }
                    };
                    if better {
                        best = Some((score, key.len(), si, *kind));
                    }
                }
            }
            match best {
                None => TacEnrichment::unmatched(row.tac, non_phone),
                Some((score, _, si, kind)) => {
                    let spec = specs[si].row;
                    TacEnrichment {
                        tac: row.tac,
                        matched: true,
                        price_eur: spec.price_eur.map(|p| adjusted_price(p, spec.release, opts)),
                        release: spec.release,
                        non_phone,
                        match_score: score,
                        matched_identifier: Some(kind),
                        matched_key: Some(specs[si].key_text.clone()),
                        os: spec.os.clone(),
                    }
                }
            }
        })
        .collect();

    let mut out: Enrichment = fused.into_iter().map(|e| (e.tac, e)).collect();
    for &tac in &opts.blocklist {
        out.entry(tac).or_insert_with(|| TacEnrichment::unmatched(tac, true));
    }
    Ok(out)
}

fn spec_order(row: &SpecCatalogRow) -> (f64, i64, String, String, String) {
    (
        row.price_eur.unwrap_or(f64::INFINITY),
        row.release.map_or(i64::MAX, YearMonth::ordinal),
        row.os.clone().unwrap_or_default(),
        row.brand.clone(),
        row.model.clone(),
    )
}

fn adjusted_price(price: f64, release: Option<YearMonth>, opts: &FuseOptions) -> f64 {
    match (opts.price, release) {
        (PriceHook::Release, _) | (PriceHook::Depreciated { .. }, None) => price,
        (PriceHook::Depreciated { annual_rate }, Some(r)) => {
            let months = relative_age_months(r, opts.reference).unwrap_or(0);
            price * (1.0 - annual_rate).max(0.0).powf(f64::from(months) / 12.0)
        }
    }
}

fn opt_text(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

fn parse_bool(s: &str) -> Result<Option<bool>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "1" | "true" | "yes" | "y" => Ok(Some(true)),
        "0" | "false" | "no" | "n" => Ok(Some(false)),
        other => Err(Error::Data(format!("bad boolean {other:?}"))),
    }
}

fn header_index(header: &csv::StringRecord, names: &[&str], file: &str) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| Error::Data(format!("{file}: missing column {n:?}")))
        })
        .collect()
}

/// Columns: tac, vendor, family, model, non_phone_hint.
pub fn read_tac_catalog<R: Read>(r: R) -> Result<Vec<TacCatalogRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let ix = header_index(rdr.headers()?, &["tac", "vendor", "family", "model", "non_phone_hint"], "tac_catalog")?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(TacCatalogRow {
            tac: rec[ix[0]].trim().parse().map_err(Error::Data)?,
            vendor: opt_text(&rec[ix[1]]),
            family: opt_text(&rec[ix[2]]),
            model: opt_text(&rec[ix[3]]),
            non_phone_hint: parse_bool(&rec[ix[4]])?,
        });
    }
    Ok(rows)
}

/// Columns: brand, model, price_eur, release_year, release_month, os.
pub fn read_spec_catalog<R: Read>(r: R) -> Result<Vec<SpecCatalogRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let ix = header_index(
        rdr.headers()?,
        &["brand", "model", "price_eur", "release_year", "release_month", "os"],
        "spec_catalog",
    )?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let price_eur = match rec[ix[2]].trim() {
            "" => None,
            p => Some(
                p.parse::<f64>()
                    .ok()
                    .filter(|p| p.is_finite() && *p > 0.0)
                    .ok_or_else(|| Error::Data(format!("spec_catalog: bad price {p:?}")))?,
            ),
        };
        let release = match (rec[ix[3]].trim(), rec[ix[4]].trim()) {
            ("", _) | (_, "") => None,
            (y, m) => Some(YearMonth::new(
                y.parse().map_err(|_| Error::Data(format!("spec_catalog: bad year {y:?}")))?,
                m.parse().map_err(|_| Error::Data(format!("spec_catalog: bad month {m:?}")))?,
            )?),
        };
        rows.push(SpecCatalogRow {
            brand: rec[ix[0]].trim().to_string(),
            model: rec[ix[1]].trim().to_string(),
            price_eur,
            release,
            os: opt_text(&rec[ix[5]]),
        });
    }
    Ok(rows)
}

/// One TAC per line; `#` starts a comment.
pub fn read_blocklist<R: BufRead>(r: R) -> Result<BTreeSet<Tac>> {
    let mut out = BTreeSet::new();
    for line in r.lines() {
        let line = line?;
        let entry = line.split('#').next().unwrap_or("").trim();
        if !entry.is_empty() {
            out.insert(entry.parse().map_err(Error::Data)?);
        }
    }
    Ok(out)
}

pub fn write_tac_catalog<W: Write>(rows: &[TacCatalogRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tac", "vendor", "family", "model", "non_phone_hint"])?;
    for r in rows {
        let hint = r.non_phone_hint.map(|h| h.to_string()).unwrap_or_default();
        out.write_record([
            r.tac.to_string().as_str(),
            r.vendor.as_deref().unwrap_or(""),
            r.family.as_deref().unwrap_or(""),
            r.model.as_deref().unwrap_or(""),
            hint.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_spec_catalog<W: Write>(rows: &[SpecCatalogRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["brand", "model", "price_eur", "release_year", "release_month", "os"])?;
    for r in rows {
        let price = r.price_eur.map(|p| p.to_string()).unwrap_or_default();
        let (year, month) = r.release.map(|m| (m.year.to_string(), m.month.to_string())).unwrap_or_default();
        out.write_record([
            r.brand.as_str(),
            r.model.as_str(),
            price.as_str(),
            year.as_str(),
            month.as_str(),
            r.os.as_deref().unwrap_or(""),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_blocklist<W: Write>(tacs: &BTreeSet<Tac>, mut w: W) -> Result<()> {
    for t in tacs {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

const ENRICHMENT_HEADER: [&str; 10] = [
    "tac",
    "matched",
    "price_eur",
    "release",
    "relative_age_months",
    "non_phone",
    "match_score",
    "matched_identifier",
    "matched_key",
    "os",
];

pub fn write_enrichment<W: Write>(enrichment: &Enrichment, reference: YearMonth, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ENRICHMENT_HEADER)?;
    for e in enrichment.values() {
        let age = e.release.and_then(|r| relative_age_months(r, reference).ok());
        out.write_record([
            e.tac.to_string(),
            e.matched.to_string(),
            e.price_eur.map(|p| p.to_string()).unwrap_or_default(),
            e.release.map(|r| r.to_string()).unwrap_or_default(),
            age.map(|a| a.to_string()).unwrap_or_default(),
            e.non_phone.to_string(),
            e.match_score.to_string(),
            e.matched_identifier.map(|c| c.as_str().to_string()).unwrap_or_default(),
            e.matched_key.clone().unwrap_or_default(),
            e.os.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_enrichment<R: Read>(r: R) -> Result<Enrichment> {
    let mut rdr = csv::Reader::from_reader(r);
    let ix = header_index(rdr.headers()?, &ENRICHMENT_HEADER, "tac_enrichment")?;
    let mut out = Enrichment::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec[ix[i]].trim();
        let tac: Tac = field(0).parse().map_err(Error::Data)?;
        let identifier = match field(7) {
            "" => None,
            "vendor_family" => Some(Composite::VendorFamily),
            "vendor_model" => Some(Composite::VendorModel),
            "vendor_family_model" => Some(Composite::VendorFamilyModel),
            other => return Err(Error::Data(format!("tac_enrichment: bad identifier {other:?}"))),
        };
        out.insert(
            tac,
            TacEnrichment {
                tac,
                matched: parse_bool(field(1))?.unwrap_or(false),
                price_eur: opt_text(field(2))
                    .map(|p| p.parse().map_err(|_| Error::Data(format!("tac_enrichment: bad price {p:?}"))))
                    .transpose()?,
                release: opt_text(field(3)).map(|r| r.parse()).transpose()?,
                non_phone: parse_bool(field(5))?.unwrap_or(false),
                match_score: field(6).parse().map_err(|_| Error::Data("tac_enrichment: bad score".into()))?,
                matched_identifier: identifier,
                matched_key: opt_text(field(8)),
                os: opt_text(field(9)),
            },
        );
    }
    Ok(out)
}
