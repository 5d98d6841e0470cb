//! Event CSV and packed little-endian binary formats.
//!
//! CSV: UTF-8, optional `t_us,x,y,p` header, one `t,x,y,p` row per line.
//! RAW_BIN: 13-byte records `(u64 t_us, u16 x, u16 y, i8 p)`, no header.

use super::{Event, EventStream, SensorSize};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t_us,x,y,p";
pub const RAW_RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    RawBin,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Reject decreasing timestamps instead of sorting them.
    pub strict: bool,
}

/// Parses an event file into a sorted, bounds-checked stream.
///
/// Row numbers in errors are 1-based line numbers for CSV and 0-based record
/// indices for RAW_BIN. A header-only CSV yields an empty stream; a source
/// without any content is rejected.
pub fn parse_event_stream(
    source: &[u8],
    format: EventFormat,
    sensor: SensorSize,
    options: ParseOptions,
) -> Result<EventStream> {
    let rows = match format {
        EventFormat::Csv => parse_csv_rows(source)?,
        EventFormat::RawBin => parse_raw_rows(source)?,
    };

    let mut events = Vec::with_capacity(rows.len());
    let mut previous: Option<u64> = None;
    for (row, raw) in rows {
        if !sensor.contains(raw.x, raw.y) {
            return Err(Error::OutOfBounds {
                row,
                x: raw.x,
                y: raw.y,
                width: sensor.width,
                height: sensor.height,
            });
        }
        if let Some(prev) = previous {
            if options.strict && raw.t < prev {
                return Err(Error::NonMonotonicTime {
                    row,
                    t: raw.t,
                    previous: prev,
                });
            }
        }
        previous = Some(raw.t);
        events.push(Event::new(raw.t, raw.x as u16, raw.y as u16, raw.p));
    }

    // Stable sort keeps input order among equal timestamps.
    events.sort_by_key(|e| e.t);
    let window = match (events.first(), events.last()) {
        (Some(first), Some(last)) => (first.t, last.t),
        _ => (0, 0),
    };
    EventStream::new(events, sensor, window)
}

struct RawRow {
    t: u64,
    x: i64,
    y: i64,
    p: i8,
}

fn malformed(row: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        row,
        reason: reason.into(),
    }
}

fn parse_csv_rows(source: &[u8]) -> Result<Vec<(usize, RawRow)>> {
    let text = std::str::from_utf8(source).map_err(|e| malformed(0, format!("not UTF-8: {e}")))?;
    if text.trim().is_empty() {
        return Err(malformed(0, "empty input"));
    }
    let mut rows = Vec::new();
    let mut seen_content = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !seen_content {
            seen_content = true;
            if line.replace(' ', "") == CSV_HEADER {
                continue;
            }
        }
        rows.push((line_no, parse_csv_line(line, line_no)?));
    }
    Ok(rows)
}

fn parse_csv_line(line: &str, row: usize) -> Result<RawRow> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(malformed(row, format!("expected 4 fields, got {}", fields.len())));
    }
    let t = fields[0]
        .parse::<u64>()
        .map_err(|_| malformed(row, format!("bad timestamp {:?}", fields[0])))?;
    let x = fields[1]
        .parse::<i64>()
        .map_err(|_| malformed(row, format!("bad x {:?}", fields[1])))?;
    let y = fields[2]
        .parse::<i64>()
        .map_err(|_| malformed(row, format!("bad y {:?}", fields[2])))?;
    let p = match fields[3] {
        "1" | "+1" => 1,
        "-1" => -1,
        other => return Err(malformed(row, format!("bad polarity {other:?}"))),
    };
    Ok(RawRow { t, x, y, p })
}

fn parse_raw_rows(source: &[u8]) -> Result<Vec<(usize, RawRow)>> {
    if source.is_empty() {
        return Err(malformed(0, "empty input"));
    }
    if !source.len().is_multiple_of(RAW_RECORD_LEN) {
        return Err(malformed(
            source.len() / RAW_RECORD_LEN,
            format!("truncated record ({} trailing bytes)", source.len() % RAW_RECORD_LEN),
        ));
    }
    source
        .chunks_exact(RAW_RECORD_LEN)
        .enumerate()
        .map(|(row, rec)| {
            let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            let x = u16::from_le_bytes(rec[8..10].try_into().unwrap()) as i64;
            let y = u16::from_le_bytes(rec[10..12].try_into().unwrap()) as i64;
            let p = rec[12] as i8;
            if p != 1 && p != -1 {
                return Err(malformed(row, format!("bad polarity {p}")));
            }
            Ok((row, RawRow { t, x, y, p }))
        })
        .collect()
}

/// Normalized CSV: header line, `\n` line endings, polarity as `1`/`-1`.
pub fn write_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 * (stream.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
    }
    out
}

pub fn write_raw_bin(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_RECORD_LEN * stream.len());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
    }
    out
}
