//! Delimited files for the normalized tables.

use std::io::{Read, Write};

use super::{DeviceAcc, NormalizedTables, Partial, RawEvent, Reject, SubscriberAcc};
use crate::calendar::format_utc;
use crate::error::{Error, Result};
use crate::ingest::parse_timestamp;
use crate::types::{CustomerType, PaymentType, Sex, Tac};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().buffer_capacity(1 << 16).from_writer(w)
}

pub fn write_events<W: Write>(tables: &NormalizedTables, w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["sim_id", "timestamp", "cell_id"])?;
    for e in &tables.events {
        out.write_record([tables.sim_name(e.sim), &format_utc(e.timestamp), tables.cell_name(e.cell)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_subscribers<W: Write>(tables: &NormalizedTables, w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["sim_id", "age", "sex", "customer_type", "payment_type"])?;
    for s in &tables.subscribers {
        out.write_record([
            tables.sim_name(s.sim),
            &s.age.map(|a| a.to_string()).unwrap_or_default(),
            s.sex.map_or("", Sex::as_str),
            s.customer_type.as_str(),
            s.payment_type.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_devices<W: Write>(tables: &NormalizedTables, w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["sim_id", "tac", "first_seen", "last_seen", "event_count"])?;
    for d in &tables.devices {
        out.write_record([
            tables.sim_name(d.sim),
            &d.tac.to_string(),
            &format_utc(d.first_seen),
            &format_utc(d.last_seen),
            &d.event_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_cells<W: Write>(tables: &NormalizedTables, w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["cell_id", "lon", "lat"])?;
    for c in &tables.cell_locations {
        out.write_record([tables.cell_name(c.cell), &c.lon.to_string(), &c.lat.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rejects<W: Write>(rejects: &[Reject], w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["line_no", "reason", "raw"])?;
    for r in rejects {
        out.write_record([&r.line_no.to_string(), r.reason.as_str(), &r.raw])?;
    }
    out.flush()?;
    Ok(())
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().buffer_capacity(1 << 16).from_reader(r)
}

fn expect_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str], file: &str) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Data(format!("{file}: expected header {expected:?}, found {header:?}")));
    }
    Ok(())
}

fn ts(text: &str, file: &str) -> Result<i64> {
    parse_timestamp(text).ok_or_else(|| Error::Data(format!("{file}: bad timestamp {text:?}")))
}

/// Accumulates previously written tables back into [`NormalizedTables`].
#[derive(Default)]
pub struct TableSet {
    acc: Partial,
}

impl TableSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read_events<R: Read>(&mut self, r: R) -> Result<()> {
        let mut rdr = reader(r);
        expect_header(&mut rdr, &["sim_id", "timestamp", "cell_id"], "events")?;
        let mut rec = csv::StringRecord::new();
        while rdr.read_record(&mut rec)? {
            let sim = self.acc.sims.intern(&rec[0]);
            let cell = self.acc.cells.intern(&rec[2]);
            self.acc.events.push(RawEvent { timestamp: ts(&rec[1], "events")?, sim, cell });
        }
        Ok(())
    }

    pub fn read_subscribers<R: Read>(&mut self, r: R) -> Result<()> {
        let mut rdr = reader(r);
        expect_header(&mut rdr, &["sim_id", "age", "sex", "customer_type", "payment_type"], "subscribers")?;
        let bad = |what: &str, v: &str| Error::Data(format!("subscribers: bad {what} {v:?}"));
        for rec in rdr.records() {
            let rec = rec?;
            let sim = self.acc.sims.intern(&rec[0]) as usize;
            if self.acc.subscribers.len() <= sim {
                self.acc.subscribers.resize_with(sim + 1, SubscriberAcc::default);
            }
            let age = match &rec[1] {
                "" => None,
                a => Some(a.parse::<u8>().map_err(|_| bad("age", a))?),
            };
            let sex = match &rec[2] {
                "" => None,
                s => Some(Sex::parse(s).ok_or_else(|| bad("sex", s))?),
            };
            let customer = CustomerType::parse(&rec[3]).ok_or_else(|| bad("customer_type", &rec[3]))?;
            let payment = PaymentType::parse(&rec[4]).ok_or_else(|| bad("payment_type", &rec[4]))?;
            let sub = &mut self.acc.subscribers[sim];
            sub.age.observe((0, 0), age);
            sub.sex.observe((0, 0), sex);
            sub.customer.observe((0, 0), Some(customer));
            sub.payment.observe((0, 0), Some(payment));
        }
        Ok(())
    }

    pub fn read_devices<R: Read>(&mut self, r: R) -> Result<()> {
        let mut rdr = reader(r);
        expect_header(&mut rdr, &["sim_id", "tac", "first_seen", "last_seen", "event_count"], "devices")?;
        for rec in rdr.records() {
            let rec = rec?;
            let sim = self.acc.sims.intern(&rec[0]);
            let tac: Tac = rec[1].parse().map_err(Error::Data)?;
            let dev = DeviceAcc {
                first: ts(&rec[2], "devices")?,
                last: ts(&rec[3], "devices")?,
                count: rec[4].parse().map_err(|_| Error::Data(format!("devices: bad count {:?}", &rec[4])))?,
            };
            self.acc.devices.entry((sim, tac)).and_modify(|d| d.merge(dev)).or_insert(dev);
        }
        Ok(())
    }

    pub fn read_cells<R: Read>(&mut self, r: R) -> Result<()> {
        let mut rdr = reader(r);
        expect_header(&mut rdr, &["cell_id", "lon", "lat"], "cells")?;
        for rec in rdr.records() {
            let rec = rec?;
            let cell = self.acc.cells.intern(&rec[0]) as usize;
            if self.acc.cell_positions.len() <= cell {
                self.acc.cell_positions.resize_with(cell + 1, Default::default);
            }
            let coord = |i: usize| {
                rec[i].parse::<f64>().map_err(|_| Error::Data(format!("cells: bad coordinate {:?}", &rec[i])))
            };
            self.acc.cell_positions[cell].observe((0, 0), Some((coord(1)?, coord(2)?)));
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<NormalizedTables> {
        if self.acc.subscribers.len() != self.acc.sims.names.len()
            || self.acc.subscribers.iter().any(|s| s.customer.value().is_none())
        {
            return Err(Error::Data("subscribers table does not cover every SIM".into()));
        }
        if self.acc.cell_positions.len() != self.acc.cells.names.len()
            || self.acc.cell_positions.iter().any(|c| c.value().is_none())
        {
            return Err(Error::Data("cells table does not cover every cell".into()));
        }
        self.acc.lines = self.acc.events.len() as u64;
        Ok(self.acc.finish().tables)
    }
}

pub fn read_tables<R1: Read, R2: Read, R3: Read, R4: Read>(
    events: R1,
    subscribers: R2,
    devices: R3,
    cells: R4,
) -> Result<NormalizedTables> {
    let mut set = TableSet::new();
    set.read_events(events)?;
    set.read_subscribers(subscribers)?;
    set.read_devices(devices)?;
    set.read_cells(cells)?;
    set.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_reader, IngestOptions};

    #[test]
    fn tables_round_trip_through_files() {
        let text = "sim_id,timestamp,cell_id,site_lon,site_lat,age,sex,customer_type,payment_type,tac\n\
            S2,2016-06-01T10:00:00Z,C2,19.1,47.4,,,business,postpaid,11111111\n\
            S1,2016-06-01T11:00:00Z,\"C,1\",19.05,47.5,34,F,consumer,prepaid,22222222\n\
            S1,2016-06-02T11:00:00Z,C2,19.1,47.4,34,F,consumer,prepaid,33333333\n";
        let tables = ingest_reader(text.as_bytes(), &IngestOptions::default()).unwrap().tables;
        let mut files: [Vec<u8>; 4] = Default::default();
        write_events(&tables, &mut files[0]).unwrap();
        write_subscribers(&tables, &mut files[1]).unwrap();
        write_devices(&tables, &mut files[2]).unwrap();
        write_cells(&tables, &mut files[3]).unwrap();
        let back = read_tables(&files[0][..], &files[1][..], &files[2][..], &files[3][..]).unwrap();
        assert_eq!(back, tables);
    }

    #[test]
    fn header_mismatch_is_reported() {
        let err = read_tables(&b"a,b\n"[..], &b""[..], &b""[..], &b""[..]).unwrap_err();
        assert!(err.to_string().contains("events"));
    }
}
