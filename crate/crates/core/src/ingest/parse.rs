use std::borrow::Cow;
use std::fmt;
use std::str;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CustomerType, PaymentType, Sex, Tac};

/// Header names for each column role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub sim_id: String,
    pub timestamp: String,
    pub cell_id: String,
    pub site_lon: String,
    pub site_lat: String,
    pub age: String,
    pub sex: String,
    pub customer_type: String,
    pub payment_type: String,
    pub tac: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            sim_id: "sim_id".into(),
            timestamp: "timestamp".into(),
            cell_id: "cell_id".into(),
            site_lon: "site_lon".into(),
            site_lat: "site_lat".into(),
            age: "age".into(),
            sex: "sex".into(),
            customer_type: "customer_type".into(),
            payment_type: "payment_type".into(),
            tac: "tac".into(),
        }
    }
}

impl ColumnMap {
    fn names(&self) -> [&str; ROLES] {
        [
            &self.sim_id,
            &self.timestamp,
            &self.cell_id,
            &self.site_lon,
            &self.site_lat,
            &self.age,
            &self.sex,
            &self.customer_type,
            &self.payment_type,
            &self.tac,
        ]
    }
}

const ROLES: usize = 10;
const SIM: usize = 0;
const TS: usize = 1;
const CELL: usize = 2;
const LON: usize = 3;
const LAT: usize = 4;
const AGE: usize = 5;
const SEX: usize = 6;
const CUSTOMER: usize = 7;
const PAYMENT: usize = 8;
const TAC: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub delimiter: char,
    pub columns: ColumnMap,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { delimiter: ',', columns: ColumnMap::default() }
    }
}

/// A [`Schema`] bound to the column positions of a concrete header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSchema {
    delimiter: u8,
    index: [usize; ROLES],
    width: usize,
}

impl Schema {
    pub fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(|b| b.is_ascii() && !matches!(b, b'"' | b'\n' | b'\r'))
            .ok_or_else(|| Error::Config(format!("unsupported delimiter {:?}", self.delimiter)))
    }

    pub fn resolve(&self, header: &str) -> Result<ResolvedSchema> {
        let delimiter = self.delimiter_byte()?;
        let header = header.trim_start_matches('\u{feff}').trim_end_matches(['\r', '\n']);
        let mut fields = Vec::new();
        split_fields(header.as_bytes(), delimiter, &mut fields)
            .ok_or_else(|| Error::Data("unterminated quote in header".into()))?;
        let names: Vec<&str> = fields
            .iter()
            .map(|f| str::from_utf8(f).map(str::trim))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Data("header is not UTF-8".into()))?;
        let mut index = [0; ROLES];
        for (role, wanted) in self.columns.names().into_iter().enumerate() {
            index[role] = names
                .iter()
                .position(|n| *n == wanted)
                .ok_or_else(|| Error::Data(format!("header lacks column {wanted:?}")))?;
        }
        Ok(ResolvedSchema { delimiter, index, width: names.len() })
    }

    /// Columns in their default order, without a header.
    pub fn positional(&self) -> Result<ResolvedSchema> {
        let mut index = [0; ROLES];
        for (i, slot) in index.iter_mut().enumerate() {
            *slot = i;
        }
        Ok(ResolvedSchema { delimiter: self.delimiter_byte()?, index, width: ROLES })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyLine,
    BadEncoding,
    BadFieldCount,
    EmptySimId,
    BadTimestamp,
    OutOfPeriod,
    EmptyCellId,
    BadCoordinate,
    BadAge,
    BadSex,
    BadCustomerType,
    BadPaymentType,
    BadTac,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::EmptyLine => "empty_line",
            RejectReason::BadEncoding => "bad_encoding",
            RejectReason::BadFieldCount => "bad_field_count",
            RejectReason::EmptySimId => "empty_sim_id",
            RejectReason::BadTimestamp => "bad_timestamp",
            RejectReason::OutOfPeriod => "out_of_period",
            RejectReason::EmptyCellId => "empty_cell_id",
            RejectReason::BadCoordinate => "bad_coordinate",
            RejectReason::BadAge => "bad_age",
            RejectReason::BadSex => "bad_sex",
            RejectReason::BadCustomerType => "bad_customer_type",
            RejectReason::BadPaymentType => "bad_payment_type",
            RejectReason::BadTac => "bad_tac",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        use RejectReason::*;
        [
            EmptyLine,
            BadEncoding,
            BadFieldCount,
            EmptySimId,
            BadTimestamp,
            OutOfPeriod,
            EmptyCellId,
            BadCoordinate,
            BadAge,
            BadSex,
            BadCustomerType,
            BadPaymentType,
            BadTac,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One accepted wide-format record.
#[derive(Debug, Clone, PartialEq)]
pub struct WideCdrRow {
    pub sim_id: String,
    /// Unix seconds, UTC.
    pub timestamp: i64,
    pub cell_id: String,
    pub site_lon: f64,
    pub site_lat: f64,
    pub age: Option<u8>,
    pub sex: Option<Sex>,
    pub customer_type: CustomerType,
    pub payment_type: PaymentType,
    pub tac: Tac,
}

/// Borrowing form of [`WideCdrRow`] used on the bulk path.
#[derive(Debug, Clone)]
pub(crate) struct RowRef<'a> {
    pub sim_id: Cow<'a, str>,
    pub timestamp: i64,
    pub cell_id: Cow<'a, str>,
    pub site_lon: f64,
    pub site_lat: f64,
    pub age: Option<u8>,
    pub sex: Option<Sex>,
    pub customer_type: CustomerType,
    pub payment_type: PaymentType,
    pub tac: Tac,
}

impl RowRef<'_> {
    pub fn into_owned(self) -> WideCdrRow {
        WideCdrRow {
            sim_id: self.sim_id.into_owned(),
            timestamp: self.timestamp,
            cell_id: self.cell_id.into_owned(),
            site_lon: self.site_lon,
            site_lat: self.site_lat,
            age: self.age,
            sex: self.sex,
            customer_type: self.customer_type,
            payment_type: self.payment_type,
            tac: self.tac,
        }
    }
}

impl<'a> From<&'a WideCdrRow> for RowRef<'a> {
    fn from(row: &'a WideCdrRow) -> Self {
        RowRef {
            sim_id: Cow::Borrowed(&row.sim_id),
            timestamp: row.timestamp,
            cell_id: Cow::Borrowed(&row.cell_id),
            site_lon: row.site_lon,
            site_lat: row.site_lat,
            age: row.age,
            sex: row.sex,
            customer_type: row.customer_type,
            payment_type: row.payment_type,
            tac: row.tac,
        }
    }
}

/// Parses one delimited record. `period` is the accepted half-open range of
/// Unix seconds, when configured.
pub fn parse_wide_row(
    line: &str,
    schema: &ResolvedSchema,
    period: Option<(i64, i64)>,
) -> std::result::Result<WideCdrRow, RejectReason> {
    let mut fields = Vec::with_capacity(schema.width);
    parse_line(line.as_bytes(), schema, period, &mut fields).map(RowRef::into_owned)
}

pub(crate) fn parse_line<'a>(
    line: &'a [u8],
    schema: &ResolvedSchema,
    period: Option<(i64, i64)>,
    fields: &mut Vec<Cow<'a, [u8]>>,
) -> std::result::Result<RowRef<'a>, RejectReason> {
    if line.iter().all(u8::is_ascii_whitespace) {
        return Err(RejectReason::EmptyLine);
    }
    fields.clear();
    split_fields(line, schema.delimiter, fields).ok_or(RejectReason::BadFieldCount)?;
    if fields.len() != schema.width {
        return Err(RejectReason::BadFieldCount);
    }
    let ix = &schema.index;
    let text = |i: usize| -> std::result::Result<Cow<'a, str>, RejectReason> {
        match &fields[ix[i]] {
            Cow::Borrowed(b) => str::from_utf8(b)
                .map(|s| Cow::Borrowed(s.trim()))
                .map_err(|_| RejectReason::BadEncoding),
            Cow::Owned(v) => String::from_utf8(v.clone())
                .map(|s| Cow::Owned(s.trim().to_string()))
                .map_err(|_| RejectReason::BadEncoding),
        }
    };

    let sim_id = text(SIM)?;
    if sim_id.is_empty() {
        return Err(RejectReason::EmptySimId);
    }
    let timestamp = parse_timestamp(&text(TS)?).ok_or(RejectReason::BadTimestamp)?;
    if let Some((lo, hi)) = period {
        if timestamp < lo || timestamp >= hi {
            return Err(RejectReason::OutOfPeriod);
        }
    }
    let cell_id = text(CELL)?;
    if cell_id.is_empty() {
        return Err(RejectReason::EmptyCellId);
    }
    let site_lon = parse_coord(&text(LON)?, 180.0).ok_or(RejectReason::BadCoordinate)?;
    let site_lat = parse_coord(&text(LAT)?, 90.0).ok_or(RejectReason::BadCoordinate)?;
    let age = match text(AGE)?.as_ref() {
        "" => None,
        a => Some(a.parse::<u8>().ok().filter(|&a| a <= 120).ok_or(RejectReason::BadAge)?),
    };
    let sex = match text(SEX)?.as_ref() {
        "" => None,
        s => Some(Sex::parse(s).ok_or(RejectReason::BadSex)?),
    };
    let customer_type = CustomerType::parse(&text(CUSTOMER)?).ok_or(RejectReason::BadCustomerType)?;
    let payment_type = PaymentType::parse(&text(PAYMENT)?).ok_or(RejectReason::BadPaymentType)?;
    let tac = Tac::parse_bytes(text(TAC)?.as_bytes()).ok_or(RejectReason::BadTac)?;

    Ok(RowRef {
        sim_id,
        timestamp,
        cell_id,
        site_lon,
        site_lat,
        age,
        sex,
        customer_type,
        payment_type,
        tac,
    })
}

fn parse_coord(s: &str, limit: f64) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite() && v.abs() <= limit)
}

/// Accepts `YYYY-MM-DDTHH:MM:SSZ` (fast path), any RFC 3339 instant, and
/// zone-less `YYYY-MM-DD[T ]HH:MM:SS`, which is read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let b = s.as_bytes();
    if b.len() == 20 && b[19] == b'Z' && b[4] == b'-' && b[7] == b'-' && (b[10] == b'T' || b[10] == b' ') && b[13] == b':' && b[16] == b':' {
        let num = |r: std::ops::Range<usize>| -> Option<u32> {
            b[r].iter().try_fold(0u32, |acc, &c| c.is_ascii_digit().then(|| acc * 10 + u32::from(c - b'0')))
        };
        let date = NaiveDate::from_ymd_opt(num(0..4)? as i32, num(5..7)?, num(8..10)?)?;
        let dt = date.and_hms_opt(num(11..13)?, num(14..16)?, num(17..19)?)?;
        return Some(dt.and_utc().timestamp());
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .into_iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Splits a record on `delim`, honouring double-quoted fields with `""`
/// escapes. Returns `None` on an unterminated quote.
pub(crate) fn split_fields<'a>(line: &'a [u8], delim: u8, out: &mut Vec<Cow<'a, [u8]>>) -> Option<()> {
    let mut i = 0;
    loop {
        if line.get(i) == Some(&b'"') {
            let mut value = Vec::new();
            let mut j = i + 1;
            loop {
                match line.get(j) {
                    None => return None,
                    Some(b'"') if line.get(j + 1) == Some(&b'"') => {
                        value.push(b'"');
                        j += 2;
                    }
                    Some(b'"') => break,
                    Some(&c) => {
                        value.push(c);
                        j += 1;
                    }
                }
            }
            out.push(Cow::Owned(value));
            j += 1;
            match line.get(j) {
                None => return Some(()),
                Some(&c) if c == delim => i = j + 1,
                Some(_) => return None,
            }
        } else {
            match line[i..].iter().position(|&c| c == delim) {
                Some(p) => {
                    out.push(Cow::Borrowed(&line[i..i + p]));
                    i += p + 1;
                }
                None => {
                    out.push(Cow::Borrowed(&line[i..]));
                    return Some(());
                }
            }
        }
    }
}
