//! Parsing and canonicalization of the two trace formats.
//!
//! `samples.csv`: `timestamp_ns,thread_id,addr,op,level,latency_cycles,tlb`
//! with `addr` in hex, `op` one of `L`/`S`, `level` one of
//! `L1 L2 L3 LFB DRAM NVM NA` and `tlb` one of `HIT MISS NA`.
//!
//! `allocs.csv`: `timestamp_ns,kind,base,length,callstack_id` with `kind`
//! one of `MMAP`/`MUNMAP` and `base` in hex.
//!
//! Both files must be sorted by timestamp; a header line is optional.

use std::io::{self, BufRead, Write};

use crate::trace::{AllocKind, AllocationEvent, Level, MemorySample, Op, PageSize, TlbOutcome};
use crate::{Error, Result};

pub const SAMPLES_HEADER: &str = "timestamp_ns,thread_id,addr,op,level,latency_cycles,tlb";
pub const ALLOCS_HEADER: &str = "timestamp_ns,kind,base,length,callstack_id";

fn parse_hex(s: &str) -> Option<u64> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(digits, 16).ok()
}

fn parse_uint(s: &str) -> Option<u64> {
    if let Some(h) = s.strip_prefix("0x") {
        return u64::from_str_radix(h, 16).ok();
    }
    s.parse().ok()
}

fn is_header(line: &str) -> bool {
    line.starts_with("timestamp")
}

/// Parses one sample line (no trailing newline).
pub fn parse_sample_line(line: &str) -> std::result::Result<MemorySample, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 7 {
        return Err(format!("expected 7 fields, found {}", fields.len()));
    }
    let timestamp = fields[0]
        .parse()
        .map_err(|_| format!("invalid timestamp {:?}", fields[0]))?;
    let thread_id = fields[1]
        .parse()
        .map_err(|_| format!("invalid thread id {:?}", fields[1]))?;
    let addr =
        parse_hex(fields[2]).ok_or_else(|| format!("invalid hex address {:?}", fields[2]))?;
    let op = match fields[3] {
        "L" => Op::Load,
        "S" => Op::Store,
        other => return Err(format!("invalid op {other:?}")),
    };
    let level: Level = fields[4].parse()?;
    let latency: u32 = fields[5]
        .parse()
        .map_err(|_| format!("invalid latency {:?}", fields[5]))?;
    let tlb: TlbOutcome = fields[6].parse()?;
    if level.is_external() && latency == 0 {
        return Err(format!("{} sample with zero latency", level.token()));
    }
    Ok(MemorySample {
        timestamp,
        thread_id,
        addr,
        op,
        level,
        latency,
        tlb,
    })
}

/// Streaming reader over `samples.csv`, validating order as it goes.
pub struct SampleReader<R> {
    lines: io::Lines<R>,
    source_name: String,
    line_no: usize,
    last_ts: Option<u64>,
}

impl<R: BufRead> SampleReader<R> {
    pub fn new(reader: R, source_name: &str) -> Self {
        SampleReader {
            lines: reader.lines(),
            source_name: source_name.to_owned(),
            line_no: 0,
            last_ts: None,
        }
    }
}

impl<R: BufRead> Iterator for SampleReader<R> {
    type Item = Result<MemorySample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || (self.line_no == 1 && is_header(line)) {
                continue;
            }
            let sample = match parse_sample_line(line) {
                Ok(s) => s,
                Err(msg) => return Some(Err(Error::parse(&self.source_name, self.line_no, msg))),
            };
            if let Some(prev) = self.last_ts {
                if sample.timestamp < prev {
                    return Some(Err(Error::parse(
                        &self.source_name,
                        self.line_no,
                        format!("timestamp regression: {} after {prev}", sample.timestamp),
                    )));
                }
            }
            self.last_ts = Some(sample.timestamp);
            return Some(Ok(sample));
        }
    }
}

/// Reads a whole `samples.csv` stream.
pub fn parse_samples<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<MemorySample>> {
    SampleReader::new(reader, source_name).collect()
}

/// Parses `allocs.csv`, aligning bases down and ends up to page boundaries.
///
/// A canonical event covers every page the original byte range touched.
pub fn parse_allocs<R: BufRead>(
    reader: R,
    source_name: &str,
    page_size: PageSize,
) -> Result<Vec<AllocationEvent>> {
    let mut out = Vec::new();
    let mut last_ts: Option<u64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (line_no == 1 && is_header(line)) {
            continue;
        }
        let err = |m: String| Error::parse(source_name, line_no, m);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let timestamp: u64 = fields[0]
            .parse()
            .map_err(|_| err(format!("invalid timestamp {:?}", fields[0])))?;
        let kind = match fields[1] {
            "MMAP" => AllocKind::Mmap,
            "MUNMAP" => AllocKind::Munmap,
            other => return Err(err(format!("invalid kind {other:?}"))),
        };
        let base =
            parse_hex(fields[2]).ok_or_else(|| err(format!("invalid hex base {:?}", fields[2])))?;
        let length =
            parse_uint(fields[3]).ok_or_else(|| err(format!("invalid length {:?}", fields[3])))?;
        let callstack_id = parse_uint(fields[4])
            .ok_or_else(|| err(format!("invalid callstack id {:?}", fields[4])))?;
        if length == 0 {
            if kind == AllocKind::Mmap {
                return Err(err("zero-length MMAP".into()));
            }
            // zero-length munmap is a no-op
            continue;
        }
        if let Some(prev) = last_ts {
            if timestamp < prev {
                return Err(err(format!(
                    "timestamp regression: {timestamp} after {prev}"
                )));
            }
        }
        last_ts = Some(timestamp);
        let start = page_size.align_down(base);
        let end = page_size.align_up(base.saturating_add(length));
        out.push(AllocationEvent {
            timestamp,
            kind,
            base: start,
            length: end - start,
            callstack_id,
        });
    }
    Ok(out)
}

pub fn format_sample(s: &MemorySample) -> String {
    format!(
        "{},{},{:#x},{},{},{},{}",
        s.timestamp,
        s.thread_id,
        s.addr,
        match s.op {
            Op::Load => "L",
            Op::Store => "S",
        },
        s.level.token(),
        s.latency,
        s.tlb.token()
    )
}

pub fn format_alloc(e: &AllocationEvent) -> String {
    format!(
        "{},{},{:#x},{},{}",
        e.timestamp,
        match e.kind {
            AllocKind::Mmap => "MMAP",
            AllocKind::Munmap => "MUNMAP",
        },
        e.base,
        e.length,
        e.callstack_id
    )
}

/// Writes samples in canonical form, with header.
pub fn write_samples<W: Write>(mut w: W, samples: &[MemorySample]) -> io::Result<()> {
    writeln!(w, "{SAMPLES_HEADER}")?;
    for s in samples {
        writeln!(w, "{}", format_sample(s))?;
    }
    Ok(())
}

pub fn write_allocs<W: Write>(mut w: W, events: &[AllocationEvent]) -> io::Result<()> {
    writeln!(w, "{ALLOCS_HEADER}")?;
    for e in events {
        writeln!(w, "{}", format_alloc(e))?;
    }
    Ok(())
}
