//! Mobility histograms grouped by age, phone price, payment and day type,
//! and their subscriber-weighted principal components.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::calendar::DayType;
use crate::error::{Error, Result};
use crate::mobility::{MobilityPeriod, MobilityRecord};
use crate::types::PaymentType;

/// Equal-width bins over `(min, max]`. With `overflow` the last bin takes
/// everything above `max`; values at or below `min` land in the first bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
    pub overflow: bool,
}

impl BinSpec {
    pub const GYRATION: BinSpec = BinSpec { min: 0.5, max: 20.0, bins: 40, overflow: true };
    pub const ENTROPY: BinSpec = BinSpec { min: 0.0, max: 1.0, bins: 20, overflow: false };

    pub fn validate(&self) -> Result<()> {
        let interior = self.bins.saturating_sub(usize::from(self.overflow));
        if !(self.min < self.max) || interior == 0 {
            return Err(Error::Config(format!("invalid bin spec {self:?}")));
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        (self.max - self.min) / (self.bins - usize::from(self.overflow)) as f64
    }

    /// Bin index and whether the value lay outside `[min, max]`.
    pub fn index(&self, v: f64) -> (usize, bool) {
        let interior = self.bins - usize::from(self.overflow);
        if v > self.max {
            return (self.bins - 1, true);
        }
        let i = ((v - self.min) / self.width()).ceil() as i64 - 1;
        (i.clamp(0, interior as i64 - 1) as usize, v < self.min)
    }
}

/// Half-open bands `[start + k step, start + (k+1) step)` up to `end`;
/// values outside clamp to the end bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bands {
    pub start: f64,
    pub step: f64,
    pub end: f64,
}

impl Bands {
    pub const AGE: Bands = Bands { start: 20.0, step: 5.0, end: 80.0 };
    pub const PRICE: Bands = Bands { start: 0.0, step: 100.0, end: 700.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.end > self.start) {
            return Err(Error::Config(format!("invalid bands {self:?}")));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        ((self.end - self.start) / self.step).ceil() as usize
    }

    pub fn lower(&self, band: usize) -> f64 {
        self.start + band as f64 * self.step
    }

    /// Band index and whether the value was clamped.
    pub fn index(&self, v: f64) -> (usize, bool) {
        let i = ((v - self.start) / self.step).floor();
        let top = self.count() as f64 - 1.0;
        (i.clamp(0.0, top) as usize, i < 0.0 || i > top)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each metric block of a row sums to one.
    #[default]
    RowBlock,
    /// Each column sums to one over the table.
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub age: Bands,
    pub price: Bands,
    pub gyration: BinSpec,
    pub entropy: BinSpec,
    pub normalization: Normalization,
}

impl Default for BandConfig {
    fn default() -> Self {
        BandConfig {
            age: Bands::AGE,
            price: Bands::PRICE,
            gyration: BinSpec::GYRATION,
            entropy: BinSpec::ENTROPY,
            normalization: Normalization::RowBlock,
        }
    }
}

impl BandConfig {
    pub fn validate(&self) -> Result<()> {
        self.age.validate()?;
        self.price.validate()?;
        self.gyration.validate()?;
        self.entropy.validate()
    }

    pub fn columns(&self) -> usize {
        self.gyration.bins + self.entropy.bins
    }
}

/// Ordered with workday groups first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub day_type: DayType,
    pub payment: PaymentType,
    pub age_band: usize,
    pub price_band: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub key: GroupKey,
    /// Gyration block followed by the entropy block.
    pub values: Vec<f64>,
    /// Number of subscribers in the group.
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BinTableCounts {
    pub missing_age: u64,
    pub missing_price: u64,
    pub clamped_age: u64,
    pub clamped_price: u64,
    pub clamped_gyration: u64,
    pub clamped_entropy: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinTable {
    pub config: BandConfig,
    pub rows: Vec<BinRow>,
    pub counts: BinTableCounts,
}

/// Per-SIM attributes, indexed by SimId.
pub struct SimAttributes<'a> {
    pub ages: &'a [Option<u8>],
    pub payments: &'a [PaymentType],
    pub prices: &'a [Option<f64>],
}

/// Histogram rows of workday and weekend mobility per group. Whole-period
/// records are ignored; SIMs without age or price are left out and counted
/// once per record.
pub fn assemble_bin_table(records: &[MobilityRecord], attrs: &SimAttributes, config: &BandConfig) -> Result<BinTable> {
    config.validate()?;
    let g = config.gyration.bins;
    let mut counts = BinTableCounts::default();
    let mut groups: BTreeMap<GroupKey, (Vec<u64>, u64)> = BTreeMap::new();
    for r in records {
        let day_type = match r.period {
            MobilityPeriod::Workday => DayType::Workday,
            MobilityPeriod::Weekend => DayType::Weekend,
            MobilityPeriod::All => continue,
        };
        let i = r.sim.index();
        let Some(age) = attrs.ages[i] else {
            counts.missing_age += 1;
            continue;
        };
        let Some(price) = attrs.prices[i] else {
            counts.missing_price += 1;
            continue;
        };
        let (age_band, ca) = config.age.index(f64::from(age));
        let (price_band, cp) = config.price.index(price);
        let (gb, cg) = config.gyration.index(r.r_g_km);
        let (eb, ce) = config.entropy.index(r.entropy);
        counts.clamped_age += u64::from(ca);
        counts.clamped_price += u64::from(cp);
        counts.clamped_gyration += u64::from(cg);
        counts.clamped_entropy += u64::from(ce);
        let key = GroupKey { day_type, payment: attrs.payments[i], age_band, price_band };
        let (hist, n) = groups.entry(key).or_insert_with(|| (vec![0; config.columns()], 0));
        hist[gb] += 1;
        hist[g + eb] += 1;
        *n += 1;
    }
    if groups.is_empty() {
        return Err(Error::EmptyTable("no subscriber has mobility, age and price".into()));
    }
    let mut rows: Vec<BinRow> = groups
        .into_iter()
        .map(|(key, (hist, n))| BinRow { key, values: hist.into_iter().map(|c| c as f64).collect(), weight: n as f64 })
        .collect();
    match config.normalization {
        Normalization::RowBlock => {
            for row in &mut rows {
                let (gyr, ent) = row.values.split_at_mut(g);
                for block in [gyr, ent] {
                    let sum: f64 = block.iter().sum();
                    if sum > 0.0 {
                        block.iter_mut().for_each(|v| *v /= sum);
                    }
                }
            }
        }
        Normalization::Column => {
            for c in 0..config.columns() {
                let sum: f64 = rows.iter().map(|r| r.values[c]).sum();
                if sum > 0.0 {
                    rows.iter_mut().for_each(|r| r.values[c] /= sum);
                }
            }
        }
    }
    Ok(BinTable { config: config.clone(), rows, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit vectors, strongest first.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues of the weighted covariance, descending, negatives
    /// from rounding set to zero.
    pub eigenvalues: Vec<f64>,
    pub variance_fractions: Vec<f64>,
    /// Coordinates of every input row on the kept components.
    pub projections: Vec<Vec<f64>>,
}

/// Weighted covariance `sum w (x - m)(x - m)^T / sum w` and the weighted mean.
pub fn weighted_covariance(rows: &[Vec<f64>], weights: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let d = rows.first().map_or(0, Vec::len);
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (row, &w) in rows.iter().zip(weights) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += w * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = DMatrix::zeros(d, d);
    for (row, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            let wi = w * c[i];
            for j in i..d {
                cov[(i, j)] += wi * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / total;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
pub fn orient(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn weighted_pca(rows: &[Vec<f64>], weights: &[f64], n_components: usize) -> Result<PcaResult> {
    if rows.len() != weights.len() {
        return Err(Error::Data("one weight per row required".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Data("weights must be finite and non-negative".into()));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive < 2 {
        return Err(Error::DegenerateRank(format!("{positive} rows with positive weight")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Data("rows differ in length".into()));
    }
    if n_components == 0 || n_components > d {
        return Err(Error::Config(format!("n_components must be in 1..={d}")));
    }
    let (mean, cov) = weighted_covariance(rows, weights);
    if cov.trace() <= 0.0 {
        return Err(Error::DegenerateRank("rows have zero variance".into()));
    }
    let eig = SymmetricEigen::try_new(cov, 1e-12, 0)
        .ok_or_else(|| Error::DegenerateRank("eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let sum: f64 = eigenvalues.iter().sum();
    let variance_fractions = eigenvalues.iter().map(|l| l / sum).collect();
    let components: Vec<Vec<f64>> = order[..n_components]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            orient(&mut v);
            v
        })
        .collect();
    let projections = rows
        .iter()
        .map(|r| components.iter().map(|c| c.iter().zip(r.iter().zip(&mean)).map(|(c, (x, m))| c * (x - m)).sum()).collect())
        .collect();
    Ok(PcaResult { mean, components, eigenvalues, variance_fractions, projections })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParetoRow {
    pub component: usize,
    pub fraction: f64,
    pub cumulative: f64,
}

pub fn pareto(result: &PcaResult) -> Vec<ParetoRow> {
    let mut cumulative = 0.0;
    result
        .variance_fractions
        .iter()
        .enumerate()
        .map(|(i, &fraction)| {
            cumulative += fraction;
            ParetoRow { component: i + 1, fraction, cumulative }
        })
        .collect()
}

fn key_fields(key: &GroupKey, config: &BandConfig) -> [String; 4] {
    [
        key.day_type.as_str().to_string(),
        key.payment.as_str().to_string(),
        config.age.lower(key.age_band).to_string(),
        config.price.lower(key.price_band).to_string(),
    ]
}

const KEY_HEADER: [&str; 4] = ["day_type", "payment_type", "age_from", "price_from"];

pub fn write_bin_table<W: Write>(table: &BinTable, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = KEY_HEADER.iter().map(|s| s.to_string()).collect();
    header.push("weight".into());
    header.extend((0..table.config.gyration.bins).map(|i| format!("g{i:02}")));
    header.extend((0..table.config.entropy.bins).map(|i| format!("e{i:02}")));
    out.write_record(&header)?;
    for row in &table.rows {
        let mut rec: Vec<String> = key_fields(&row.key, &table.config).to_vec();
        rec.push(row.weight.to_string());
        rec.extend(row.values.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_projection<W: Write>(table: &BinTable, result: &PcaResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = KEY_HEADER.iter().map(|s| s.to_string()).collect();
    header.push("weight".into());
    header.extend((1..=result.components.len()).map(|i| format!("pc{i}")));
    out.write_record(&header)?;
    for (row, proj) in table.rows.iter().zip(&result.projections) {
        let mut rec: Vec<String> = key_fields(&row.key, &table.config).to_vec();
        rec.push(row.weight.to_string());
        rec.extend(proj.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_pareto<W: Write>(rows: &[ParetoRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["component", "variance_fraction", "cumulative"])?;
    for r in rows {
        out.write_record([r.component.to_string(), r.fraction.to_string(), r.cumulative.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
