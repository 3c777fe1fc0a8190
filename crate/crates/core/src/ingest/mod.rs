//! Wide-format CDR ingestion.
//!
//! Input rows carry subscriber, subscription and device attributes next to
//! every event. Normalization splits them into an event table
//! (SIM, timestamp, cell), one subscriber row per SIM, one device observation
//! per (SIM, TAC) and one location per cell. Chunks are parsed in parallel
//! into partial tables whose merge is associative and commutative; names are
//! only assigned dense ids after the merge, by sorted order, so the output is
//! independent of chunk boundaries and worker count.

mod io;
mod parse;
mod stats;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Read;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rustc_hash::FxHashMap as HashMap;
use serde::Serialize;

pub use self::io::{read_tables, write_cells, write_devices, write_events, write_rejects, write_subscribers, TableSet};
pub use self::parse::{parse_timestamp, parse_wide_row, ColumnMap, RejectReason, ResolvedSchema, Schema, WideCdrRow};
pub use self::stats::{activity_stats, active_days, flag_transients, ActivityBand, ActivityStats};

use self::parse::{parse_line, RowRef};
use crate::error::{Error, Result};
use crate::types::{CellId, CustomerType, PaymentType, Sex, SimId, Tac};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CdrEvent {
    pub sim: SimId,
    /// Unix seconds, UTC.
    pub timestamp: i64,
    pub cell: CellId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriberRecord {
    pub sim: SimId,
    pub age: Option<u8>,
    pub sex: Option<Sex>,
    pub customer_type: CustomerType,
    pub payment_type: PaymentType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceObservation {
    pub sim: SimId,
    pub tac: Tac,
    pub first_seen: i64,
    pub last_seen: i64,
    pub event_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellLocation {
    pub cell: CellId,
    pub lon: f64,
    pub lat: f64,
}

/// The normalized tables. `sims` and `cells` are sorted; [`SimId`] and
/// [`CellId`] index into them. Events are sorted by (SIM, timestamp, cell).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalizedTables {
    pub sims: Vec<String>,
    pub cells: Vec<String>,
    pub events: Vec<CdrEvent>,
    pub subscribers: Vec<SubscriberRecord>,
    pub devices: Vec<DeviceObservation>,
    pub cell_locations: Vec<CellLocation>,
}

impl NormalizedTables {
    pub fn sim_name(&self, sim: SimId) -> &str {
        &self.sims[sim.index()]
    }

    pub fn cell_name(&self, cell: CellId) -> &str {
        &self.cells[cell.index()]
    }

    pub fn sim_id(&self, name: &str) -> Option<SimId> {
        self.sims.binary_search_by(|s| s.as_str().cmp(name)).ok().map(|i| SimId(i as u32))
    }

    pub fn cell_id(&self, name: &str) -> Option<CellId> {
        self.cells.binary_search_by(|s| s.as_str().cmp(name)).ok().map(|i| CellId(i as u32))
    }

    /// Event index range of every SIM, indexed by [`SimId`].
    pub fn sim_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges = vec![0..0; self.sims.len()];
        let mut start = 0;
        for chunk in self.events.chunk_by(|a, b| a.sim == b.sim) {
            let sim = chunk[0].sim.index();
            ranges[sim] = start..start + chunk.len();
            start += chunk.len();
        }
        ranges
    }

    /// Device observation range of every SIM, indexed by [`SimId`].
    pub fn device_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges = vec![0..0; self.sims.len()];
        let mut start = 0;
        for chunk in self.devices.chunk_by(|a, b| a.sim == b.sim) {
            ranges[chunk[0].sim.index()] = start..start + chunk.len();
            start += chunk.len();
        }
        ranges
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line_no: u64,
    pub reason: RejectReason,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub lines: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejects_by_reason: BTreeMap<String, u64>,
    /// (SIM, attribute) pairs seen with more than one distinct value.
    pub subscriber_conflicts: u64,
    /// Cells seen with more than one coordinate pair.
    pub cell_conflicts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub tables: NormalizedTables,
    pub rejects: Vec<Reject>,
    pub report: IngestReport,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub schema: Schema,
    /// Accepted half-open range of Unix seconds.
    pub period: Option<(i64, i64)>,
    pub chunk_bytes: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { schema: Schema::default(), period: None, chunk_bytes: 4 << 20 }
    }
}

/// Normalizes already-parsed rows. Row order only matters for resolving
/// subscriber attribute conflicts between rows with equal timestamps.
pub fn normalize<I>(rows: I) -> NormalizedTables
where
    I: IntoIterator<Item = WideCdrRow>,
{
    let mut acc = Partial::default();
    for (i, row) in rows.into_iter().enumerate() {
        acc.push_row(&RowRef::from(&row), i as u64 + 1);
    }
    acc.finish().tables
}

/// Ingests one delimited file with a header line.
pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<IngestOutcome> {
    let mut acc = Partial::default();
    ingest_into(&mut acc, reader, opts, 0)?;
    Ok(acc.finish())
}

/// Ingests a file, or every regular non-hidden file of a directory in name
/// order. Line numbers continue across files.
pub fn ingest_path(path: &Path, opts: &IngestOptions) -> Result<IngestOutcome> {
    let files = input_files(path)?;
    let mut acc = Partial::default();
    let mut offset = 0;
    for file in files {
        offset += ingest_into(&mut acc, File::open(&file)?, opts, offset)?;
    }
    Ok(acc.finish())
}

pub fn input_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type()?.is_file() && !hidden {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Returns the number of lines consumed, header included.
fn ingest_into<R: Read>(acc: &mut Partial, reader: R, opts: &IngestOptions, line_offset: u64) -> Result<u64> {
    let mut source = ChunkSource::new(reader, opts.chunk_bytes.max(1 << 10));
    let Some(mut first) = source.next_chunk()? else {
        return Ok(0);
    };
    let header_end = first.iter().position(|&b| b == b'\n').unwrap_or(first.len());
    let header = std::str::from_utf8(&first[..header_end]).map_err(|_| Error::Data("header is not UTF-8".into()))?;
    let schema = opts.schema.resolve(header)?;
    first.drain(..(header_end + 1).min(first.len()));

    let batch_len = (rayon::current_num_threads() * 2).max(2);
    let mut next_line = line_offset + 2;
    let mut pending = Some(first);
    loop {
        let mut batch = Vec::with_capacity(batch_len);
        while batch.len() < batch_len {
            let chunk = match pending.take() {
                Some(c) => c,
                None => match source.next_chunk()? {
                    Some(c) => c,
                    None => break,
                },
            };
            let lines = count_lines(&chunk);
            batch.push((next_line, chunk));
            next_line += lines;
        }
        if batch.is_empty() {
            break;
        }
        let partials: Vec<Partial> = batch
            .par_iter()
            .map(|(base, chunk)| parse_chunk(chunk, *base, &schema, opts.period))
            .collect();
        for p in partials {
            acc.absorb(p);
        }
    }
    Ok(next_line - line_offset - 1)
}

fn count_lines(chunk: &[u8]) -> u64 {
    let newlines = chunk.iter().filter(|&&b| b == b'\n').count() as u64;
    newlines + u64::from(!chunk.is_empty() && chunk.last() != Some(&b'\n'))
}

fn parse_chunk(chunk: &[u8], base_line: u64, schema: &ResolvedSchema, period: Option<(i64, i64)>) -> Partial {
    let mut part = Partial::default();
    let mut fields = Vec::new();
    let body = chunk.strip_suffix(b"\n").unwrap_or(chunk);
    if chunk.is_empty() {
        return part;
    }
    for (i, line) in body.split(|&b| b == b'\n').enumerate() {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let line_no = base_line + i as u64;
        part.lines += 1;
        match parse_line(line, schema, period, &mut fields) {
            Ok(row) => part.push_row(&row, line_no),
            Err(reason) => part.rejects.push(Reject {
                line_no,
                reason,
                raw: String::from_utf8_lossy(line).into_owned(),
            }),
        }
    }
    part
}

/// Reads roughly `target`-sized buffers that always end on a line boundary.
struct ChunkSource<R> {
    inner: R,
    carry: Vec<u8>,
    eof: bool,
    target: usize,
}

impl<R: Read> ChunkSource<R> {
    fn new(inner: R, target: usize) -> Self {
        ChunkSource { inner, carry: Vec::new(), eof: false, target }
    }

    fn next_chunk(&mut self) -> std::io::Result<Option<Vec<u8>>> {
        let mut buf = std::mem::take(&mut self.carry);
        let mut scanned = 0;
        loop {
            if !self.eof && buf.len() < self.target {
                let old = buf.len();
                buf.resize(self.target.max(old + (64 << 10)), 0);
                let mut filled = old;
                while filled < buf.len() {
                    match self.inner.read(&mut buf[filled..]) {
                        Ok(0) => {
                            self.eof = true;
                            break;
                        }
                        Ok(n) => filled += n,
                        Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                        Err(e) => return Err(e),
                    }
                }
                buf.truncate(filled);
            }
            if self.eof {
                return Ok((!buf.is_empty()).then_some(buf));
            }
            if let Some(pos) = buf[scanned..].iter().rposition(|&b| b == b'\n') {
                let cut = scanned + pos + 1;
                self.carry = buf[cut..].to_vec();
                buf.truncate(cut);
                return Ok(Some(buf));
            }
            // A single line longer than the target: keep reading.
            scanned = buf.len();
            self.target = buf.len() * 2;
        }
    }
}

#[derive(Debug, Default)]
struct Interner {
    map: HashMap<Box<str>, u32>,
    names: Vec<Box<str>>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.map.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        let boxed: Box<str> = name.into();
        self.names.push(boxed.clone());
        self.map.insert(boxed, id);
        id
    }

    /// Sorted names and the rank of each old id.
    fn into_sorted(self) -> (Vec<String>, Vec<u32>) {
        let mut order: Vec<u32> = (0..self.names.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| self.names[a as usize].cmp(&self.names[b as usize]));
        let mut rank = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            rank[old as usize] = new as u32;
        }
        let mut names: Vec<Option<Box<str>>> = self.names.into_iter().map(Some).collect();
        let sorted = order.iter().map(|&old| names[old as usize].take().unwrap().into_string()).collect();
        (sorted, rank)
    }
}

/// First value by (timestamp, line) plus the distinct values observed.
#[derive(Debug, Clone)]
struct Pick<T> {
    first: Option<((i64, u64), T)>,
    distinct: Vec<T>,
}

impl<T> Default for Pick<T> {
    fn default() -> Self {
        Pick { first: None, distinct: Vec::new() }
    }
}

impl<T: Copy + PartialEq> Pick<T> {
    fn observe(&mut self, stamp: (i64, u64), value: Option<T>) {
        let Some(v) = value else { return };
        if self.first.as_ref().map_or(true, |(s, _)| stamp < *s) {
            self.first = Some((stamp, v));
        }
        if !self.distinct.contains(&v) {
            self.distinct.push(v);
        }
    }

    fn merge(&mut self, other: Pick<T>) {
        if let Some((stamp, v)) = other.first {
            if self.first.as_ref().map_or(true, |(s, _)| stamp < *s) {
                self.first = Some((stamp, v));
            }
        }
        for v in other.distinct {
            if !self.distinct.contains(&v) {
                self.distinct.push(v);
            }
        }
    }

    fn value(&self) -> Option<T> {
        self.first.as_ref().map(|(_, v)| *v)
    }

    fn conflicted(&self) -> bool {
        self.distinct.len() > 1
    }
}

#[derive(Debug, Clone, Default)]
struct SubscriberAcc {
    age: Pick<u8>,
    sex: Pick<Sex>,
    customer: Pick<CustomerType>,
    payment: Pick<PaymentType>,
}

impl SubscriberAcc {
    fn merge(&mut self, other: SubscriberAcc) {
        self.age.merge(other.age);
        self.sex.merge(other.sex);
        self.customer.merge(other.customer);
        self.payment.merge(other.payment);
    }

    fn conflicts(&self) -> u64 {
        [self.age.conflicted(), self.sex.conflicted(), self.customer.conflicted(), self.payment.conflicted()]
            .into_iter()
            .filter(|&c| c)
            .count() as u64
    }
}

#[derive(Debug, Clone, Copy)]
struct DeviceAcc {
    first: i64,
    last: i64,
    count: u64,
}

impl DeviceAcc {
    fn merge(&mut self, other: DeviceAcc) {
        self.first = self.first.min(other.first);
        self.last = self.last.max(other.last);
        self.count += other.count;
    }
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    timestamp: i64,
    sim: u32,
    cell: u32,
}

#[derive(Debug, Default)]
struct Partial {
    sims: Interner,
    cells: Interner,
    events: Vec<RawEvent>,
    subscribers: Vec<SubscriberAcc>,
    cell_positions: Vec<Pick<(f64, f64)>>,
    devices: HashMap<(u32, Tac), DeviceAcc>,
    rejects: Vec<Reject>,
    lines: u64,
}

impl Partial {
    fn push_row(&mut self, row: &RowRef<'_>, line_no: u64) {
        let sim = self.sims.intern(&row.sim_id);
        let cell = self.cells.intern(&row.cell_id);
        if sim as usize == self.subscribers.len() {
            self.subscribers.push(SubscriberAcc::default());
        }
        if cell as usize == self.cell_positions.len() {
            self.cell_positions.push(Pick::default());
        }
        let stamp = (row.timestamp, line_no);
        let sub = &mut self.subscribers[sim as usize];
        sub.age.observe(stamp, row.age);
        sub.sex.observe(stamp, row.sex);
        sub.customer.observe(stamp, Some(row.customer_type));
        sub.payment.observe(stamp, Some(row.payment_type));
        self.cell_positions[cell as usize].observe(stamp, Some((row.site_lon, row.site_lat)));
        let dev = DeviceAcc { first: row.timestamp, last: row.timestamp, count: 1 };
        self.devices.entry((sim, row.tac)).and_modify(|d| d.merge(dev)).or_insert(dev);
        self.events.push(RawEvent { timestamp: row.timestamp, sim, cell });
    }

    fn absorb(&mut self, other: Partial) {
        if self.sims.names.is_empty() && self.cells.names.is_empty() {
            let rejects = std::mem::take(&mut self.rejects);
            let lines = self.lines;
            *self = other;
            self.rejects.splice(0..0, rejects);
            self.lines += lines;
            return;
        }
        let sim_map: Vec<u32> = other.sims.names.iter().map(|n| self.sims.intern(n)).collect();
        let cell_map: Vec<u32> = other.cells.names.iter().map(|n| self.cells.intern(n)).collect();
        self.subscribers.resize_with(self.sims.names.len(), SubscriberAcc::default);
        self.cell_positions.resize_with(self.cells.names.len(), Pick::default);
        for (old, sub) in other.subscribers.into_iter().enumerate() {
            self.subscribers[sim_map[old] as usize].merge(sub);
        }
        for (old, pos) in other.cell_positions.into_iter().enumerate() {
            self.cell_positions[cell_map[old] as usize].merge(pos);
        }
        for ((sim, tac), dev) in other.devices {
            self.devices
                .entry((sim_map[sim as usize], tac))
                .and_modify(|d| d.merge(dev))
                .or_insert(dev);
        }
        self.events.extend(other.events.into_iter().map(|e| RawEvent {
            timestamp: e.timestamp,
            sim: sim_map[e.sim as usize],
            cell: cell_map[e.cell as usize],
        }));
        self.rejects.extend(other.rejects);
        self.lines += other.lines;
    }

    fn finish(self) -> IngestOutcome {
        let Partial { sims, cells, events, subscribers, cell_positions, devices, mut rejects, lines } = self;
        let (sim_names, sim_rank) = sims.into_sorted();
        let (cell_names, cell_rank) = cells.into_sorted();

        let mut events: Vec<CdrEvent> = events
            .into_par_iter()
            .map(|e| CdrEvent {
                sim: SimId(sim_rank[e.sim as usize]),
                timestamp: e.timestamp,
                cell: CellId(cell_rank[e.cell as usize]),
            })
            .collect();
        events.par_sort_unstable();

        let mut subscriber_conflicts = 0;
        let mut subs: Vec<Option<SubscriberRecord>> = vec![None; sim_names.len()];
        for (old, acc) in subscribers.into_iter().enumerate() {
            subscriber_conflicts += acc.conflicts();
            let sim = SimId(sim_rank[old]);
            subs[sim.index()] = Some(SubscriberRecord {
                sim,
                age: acc.age.value(),
                sex: acc.sex.value(),
                customer_type: acc.customer.value().expect("customer type is required"),
                payment_type: acc.payment.value().expect("payment type is required"),
            });
        }
        let subscribers = subs.into_iter().flatten().collect();

        let mut cell_conflicts = 0;
        let mut cell_locations: Vec<CellLocation> = cell_positions
            .into_iter()
            .enumerate()
            .map(|(old, pick)| {
                cell_conflicts += u64::from(pick.conflicted());
                let (lon, lat) = pick.value().expect("every cell has a position");
                CellLocation { cell: CellId(cell_rank[old]), lon, lat }
            })
            .collect();
        cell_locations.sort_by_key(|c| c.cell);

        let mut devices: Vec<DeviceObservation> = devices
            .into_iter()
            .map(|((sim, tac), d)| DeviceObservation {
                sim: SimId(sim_rank[sim as usize]),
                tac,
                first_seen: d.first,
                last_seen: d.last,
                event_count: d.count,
            })
            .collect();
        devices.sort_unstable_by_key(|d| (d.sim, d.tac));

        rejects.sort_by_key(|r| r.line_no);
        let mut rejects_by_reason = BTreeMap::new();
        for r in &rejects {
            *rejects_by_reason.entry(r.reason.as_str().to_string()).or_insert(0) += 1;
        }

        let report = IngestReport {
            lines,
            accepted: events.len() as u64,
            rejected: rejects.len() as u64,
            rejects_by_reason,
            subscriber_conflicts,
            cell_conflicts,
        };
        IngestOutcome {
            tables: NormalizedTables {
                sims: sim_names,
                cells: cell_names,
                events,
                subscribers,
                devices,
                cell_locations,
            },
            rejects,
            report,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "sim_id,timestamp,cell_id,site_lon,site_lat,age,sex,customer_type,payment_type,tac\n";

    fn row(sim: &str, ts: &str, tac: &str, age: &str) -> String {
        format!("{sim},{ts},C1,19.05,47.5,{age},M,consumer,prepaid,{tac}\n")
    }

    fn ingest(text: &str, chunk_bytes: usize) -> IngestOutcome {
        let opts = IngestOptions { chunk_bytes, ..IngestOptions::default() };
        ingest_reader(text.as_bytes(), &opts).unwrap()
    }

    #[test]
    fn one_sim_one_tac_gives_one_device_row() {
        let mut text = HEADER.to_string();
        for s in ["2016-06-01T10:00:00Z", "2016-06-01T11:00:00Z", "2016-06-02T09:00:00Z"] {
            text += &row("S1", s, "35333610", "34");
        }
        let out = ingest(&text, 1 << 20);
        assert_eq!(out.tables.devices.len(), 1);
        assert_eq!(out.tables.devices[0].event_count, 3);
        assert_eq!(out.tables.devices[0].first_seen, parse_timestamp("2016-06-01T10:00:00Z").unwrap());
        assert_eq!(out.tables.devices[0].last_seen, parse_timestamp("2016-06-02T09:00:00Z").unwrap());
    }

    #[test]
    fn two_tacs_give_two_device_rows() {
        let text = format!(
            "{HEADER}{}{}",
            row("S1", "2016-06-01T10:00:00Z", "35333610", ""),
            row("S1", "2016-06-01T11:00:00Z", "01234567", "")
        );
        let out = ingest(&text, 1 << 20);
        assert_eq!(out.tables.devices.len(), 2);
        assert_eq!(out.tables.subscribers.len(), 1);
    }

    #[test]
    fn empty_stream_gives_empty_tables() {
        assert_eq!(normalize(Vec::new()), NormalizedTables::default());
        let out = ingest(HEADER, 1 << 20);
        assert_eq!(out.tables, NormalizedTables::default());
        assert_eq!(ingest("", 1 << 20).report.lines, 0);
    }

    #[test]
    fn first_present_value_wins_and_conflicts_are_counted() {
        let text = format!(
            "{HEADER}{}{}{}",
            row("S1", "2016-06-03T10:00:00Z", "35333610", "50"),
            row("S1", "2016-06-01T10:00:00Z", "35333610", ""),
            row("S1", "2016-06-02T10:00:00Z", "35333610", "34"),
        );
        let out = ingest(&text, 1 << 20);
        assert_eq!(out.tables.subscribers[0].age, Some(34));
        assert_eq!(out.report.subscriber_conflicts, 1);
    }

    #[test]
    fn rejects_keep_line_numbers_and_conserve_rows() {
        let text = format!(
            "{HEADER}{}garbage\n\n{}",
            row("S1", "2016-06-01T10:00:00Z", "35333610", ""),
            row("S2", "2016-06-01T10:00:00Z", "ABC", "")
        );
        let out = ingest(&text, 1 << 20);
        assert_eq!(out.report.accepted, 1);
        assert_eq!(out.report.rejected, 3);
        assert_eq!(out.report.lines, 4);
        let lines: Vec<_> = out.rejects.iter().map(|r| (r.line_no, r.reason)).collect();
        assert_eq!(
            lines,
            vec![(3, RejectReason::BadFieldCount), (4, RejectReason::EmptyLine), (5, RejectReason::BadTac)]
        );
    }

    #[test]
    fn chunking_does_not_change_the_result() {
        let mut text = HEADER.to_string();
        for i in 0..200 {
            let ts = format!("2016-06-{:02}T{:02}:{:02}:00Z", 1 + i % 28, i % 24, i % 60);
            text += &row(&format!("S{}", i % 17), &ts, if i % 5 == 0 { "11111111" } else { "22222222" }, "");
            if i % 37 == 0 {
                text += "bad,row\n";
            }
        }
        let whole = ingest(&text, 1 << 20);
        for size in [1024, 1500, 4096] {
            assert_eq!(ingest(&text, size), whole, "chunk size {size}");
        }
    }

    #[test]
    fn crlf_and_missing_final_newline() {
        let text = format!("{}{}", HEADER.replace('\n', "\r\n"), row("S1", "2016-06-01T10:00:00Z", "35333610", "").trim_end());
        let out = ingest(&text, 1 << 20);
        assert_eq!(out.report.accepted, 1);
        assert_eq!(out.report.lines, 1);
    }
}
