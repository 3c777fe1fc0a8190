//! Observation period, local time zone and the workday / weekend-holiday split.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, LocalResult, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Workday,
    Weekend,
}

impl DayType {
    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Workday => "workday",
            DayType::Weekend => "weekend",
        }
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DayType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "workday" => Ok(DayType::Workday),
            "weekend" => Ok(DayType::Weekend),
            other => Err(Error::Data(format!("unknown day type {other:?}"))),
        }
    }
}

/// On-disk calendar description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalendarFile {
    pub timezone: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Weekdays treated as weekend/holiday.
    #[serde(default)]
    pub holidays: Vec<NaiveDate>,
    /// Saturdays or Sundays that are working days (transferred workdays).
    #[serde(default)]
    pub workdays: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calendar {
    tz: Tz,
    start: NaiveDate,
    end: NaiveDate,
    holidays: BTreeSet<NaiveDate>,
    workdays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn new(tz: Tz, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("calendar end {end} precedes start {start}")));
        }
        Ok(Calendar { tz, start, end, holidays: BTreeSet::new(), workdays: BTreeSet::new() })
    }

    pub fn with_holidays(mut self, holidays: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.holidays.extend(holidays);
        self
    }

    pub fn with_workdays(mut self, workdays: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.workdays.extend(workdays);
        self
    }

    /// June 2016 in Budapest. The month has no public holidays and no
    /// transferred working days.
    pub fn hungary_june_2016() -> Self {
        Calendar::new(
            chrono_tz::Europe::Budapest,
            NaiveDate::from_ymd_opt(2016, 6, 1).unwrap(),
            NaiveDate::from_ymd_opt(2016, 6, 30).unwrap(),
        )
        .unwrap()
    }

    pub fn from_file(file: &CalendarFile) -> Result<Self> {
        let tz: Tz = file
            .timezone
            .parse()
            .map_err(|_| Error::Config(format!("unknown time zone {:?}", file.timezone)))?;
        Ok(Calendar::new(tz, file.start, file.end)?
            .with_holidays(file.holidays.iter().copied())
            .with_workdays(file.workdays.iter().copied()))
    }

    pub fn to_file(&self) -> CalendarFile {
        CalendarFile {
            timezone: self.tz.name().to_string(),
            start: self.start,
            end: self.end,
            holidays: self.holidays.iter().copied().collect(),
            workdays: self.workdays.iter().copied().collect(),
        }
    }

    pub fn timezone(&self) -> Tz {
        self.tz
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn len_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take(self.len_days())
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        day >= self.start && day <= self.end
    }

    pub fn day_index(&self, day: NaiveDate) -> Option<usize> {
        self.contains(day).then(|| (day - self.start).num_days() as usize)
    }

    pub fn day_type(&self, day: NaiveDate) -> DayType {
        if self.workdays.contains(&day) {
            return DayType::Workday;
        }
        if self.holidays.contains(&day) {
            return DayType::Weekend;
        }
        match day.weekday() {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Workday,
        }
    }

    pub fn local(&self, ts: i64) -> DateTime<Tz> {
        Utc.timestamp_opt(ts, 0).unwrap().with_timezone(&self.tz)
    }

    pub fn local_date(&self, ts: i64) -> NaiveDate {
        self.local(ts).date_naive()
    }

    /// Local date and wall-clock minute of the day.
    pub fn local_day_minute(&self, ts: i64) -> (NaiveDate, u32) {
        let local = self.local(ts);
        (local.date_naive(), local.hour() * 60 + local.minute())
    }

    /// UTC instant of a local wall-clock time. Ambiguous times resolve to the
    /// earlier instant; times inside a spring-forward gap shift forward.
    pub fn to_utc(&self, local: NaiveDateTime) -> i64 {
        match self.tz.from_local_datetime(&local) {
            LocalResult::Single(t) => t.timestamp(),
            LocalResult::Ambiguous(a, _) => a.timestamp(),
            LocalResult::None => self.to_utc(local + Duration::hours(1)),
        }
    }

    pub fn local_midnight_utc(&self, day: NaiveDate) -> i64 {
        self.to_utc(day.and_time(NaiveTime::MIN))
    }

    /// Half-open UTC range `[start midnight, day after end midnight)`.
    pub fn period_bounds(&self) -> (i64, i64) {
        (
            self.local_midnight_utc(self.start),
            self.local_midnight_utc(self.end + Duration::days(1)),
        )
    }
}

/// Parses `YYYY-MM-DDTHH:MM[:SS]` local time, or an RFC 3339 instant with an
/// explicit offset.
pub fn parse_instant(text: &str, calendar: &Calendar) -> Result<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(calendar.to_utc(naive));
        }
    }
    Err(Error::Config(format!("cannot parse time {text:?}")))
}

pub fn format_utc(ts: i64) -> String {
    Utc.timestamp_opt(ts, 0).unwrap().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}
