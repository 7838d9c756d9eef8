//! Capture parsing and per-client trace extraction.
//!
//! Captures are CSV files with the header `timestamp,size,src_mac,dst_mac`,
//! timestamps in decimal seconds (microsecond precision) and MAC addresses in
//! lowercase colon-separated hex. A canonical client trace uses the same CSV
//! body preceded by `#key=value` metadata lines.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{ArchFamily, ArchLabel};

pub const CSV_HEADER: [&str; 4] = ["timestamp", "size", "src_mac", "dst_mac"];

const MICROS_PER_SECOND: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("missing or malformed header, expected `timestamp,size,src_mac,dst_mac`")]
    MissingHeader,
    #[error("line {line}: non-numeric value in field `{field}`")]
    NonNumericField { line: u64, field: &'static str },
    #[error("line {line}: negative timestamp")]
    NegativeTimestamp { line: u64 },
    #[error("line {line}: zero packet size")]
    ZeroSize { line: u64 },
    #[error("line {line}: invalid station address `{value}`")]
    InvalidStation { line: u64, value: String },
    #[error("line {line}: wrong number of fields")]
    WrongFieldCount { line: u64 },
    #[error("station {0} does not appear in the capture")]
    UnknownStation(StationId),
    #[error("trace metadata: {0}")]
    Metadata(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl IngestError {
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::MissingHeader => "missing_header",
            IngestError::NonNumericField { .. } => "non_numeric_field",
            IngestError::NegativeTimestamp { .. } => "negative_timestamp",
            IngestError::ZeroSize { .. } => "zero_size",
            IngestError::InvalidStation { .. } => "invalid_station",
            IngestError::WrongFieldCount { .. } => "wrong_field_count",
            IngestError::UnknownStation(_) => "unknown_station",
            IngestError::Metadata(_) => "metadata",
            IngestError::Csv(_) => "csv",
        }
    }
}

/// 6-byte 802.11 station address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StationId(pub [u8; 6]);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for StationId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for byte in out.iter_mut() {
            let part = parts.next().ok_or(())?;
            if part.len() != 2 {
                return Err(());
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| ())?;
        }
        if parts.next().is_some() {
            return Err(());
        }
        Ok(StationId(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Client to access point.
    Uplink,
    /// Access point to client.
    Downlink,
}

/// One observed frame. Timestamps are integer microseconds since the start
/// of the capture, which keeps CSV round trips exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub timestamp_us: u64,
    pub size_bytes: u32,
    pub direction: Direction,
    pub station_id: StationId,
}

impl PacketRecord {
    pub fn timestamp_s(&self) -> f64 {
        self.timestamp_us as f64 / MICROS_PER_SECOND
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRow {
    pub timestamp_us: u64,
    pub size_bytes: u32,
    pub src: StationId,
    pub dst: StationId,
    /// 1-based line number in the source file.
    pub line: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawCapture {
    pub rows: Vec<RawRow>,
}

/// Time-ordered traffic between one client station and the access point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientTrace {
    pub client_id: StationId,
    pub ap_id: StationId,
    pub packets: Vec<PacketRecord>,
    pub label: Option<ArchLabel>,
    /// Free-form provenance (aggregation mode, client profile, trace id, ...).
    pub meta: BTreeMap<String, String>,
}

impl ClientTrace {
    /// Identifier used in reports: the `trace_id` metadata key when present,
    /// otherwise the client station.
    pub fn trace_id(&self) -> String {
        self.meta
            .get("trace_id")
            .cloned()
            .unwrap_or_else(|| self.client_id.to_string())
    }

    pub fn uplink_count(&self) -> usize {
        self.packets
            .iter()
            .filter(|p| p.direction == Direction::Uplink)
            .count()
    }

    pub fn downlink_count(&self) -> usize {
        self.packets.len() - self.uplink_count()
    }

    pub fn span_us(&self) -> u64 {
        match (self.packets.first(), self.packets.last()) {
            (Some(a), Some(b)) => b.timestamp_us - a.timestamp_us,
            _ => 0,
        }
    }
}

pub(crate) fn seconds_to_micros(s: f64) -> u64 {
    (s * MICROS_PER_SECOND).round() as u64
}

pub(crate) fn format_micros(us: u64) -> String {
    format!("{}.{:06}", us / 1_000_000, us % 1_000_000)
}

/// Parses a capture CSV. Rows keep input order; timestamps are rebased so the
/// earliest row sits at zero.
pub fn parse_capture_csv<R: Read>(source: R) -> Result<RawCapture, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers().map_err(|_| IngestError::MissingHeader)?;
    if headers.len() != CSV_HEADER.len() || headers.iter().zip(CSV_HEADER).any(|(h, e)| h != e) {
        return Err(IngestError::MissingHeader);
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(IngestError::WrongFieldCount { line });
        }
        let ts: f64 = record[0].parse().map_err(|_| IngestError::NonNumericField {
            line,
            field: "timestamp",
        })?;
        if !ts.is_finite() {
            return Err(IngestError::NonNumericField {
                line,
                field: "timestamp",
            });
        }
        if ts < 0.0 {
            return Err(IngestError::NegativeTimestamp { line });
        }
        let size: i64 = record[1].parse().map_err(|_| IngestError::NonNumericField {
            line,
            field: "size",
        })?;
        if size <= 0 {
            return Err(IngestError::ZeroSize { line });
        }
        let size = u32::try_from(size).map_err(|_| IngestError::NonNumericField {
            line,
            field: "size",
        })?;
        let station = |s: &str| {
            s.parse::<StationId>()
                .map_err(|_| IngestError::InvalidStation {
                    line,
                    value: s.to_string(),
                })
        };
        rows.push(RawRow {
            timestamp_us: seconds_to_micros(ts),
            size_bytes: size,
            src: station(&record[2])?,
            dst: station(&record[3])?,
            line,
        });
    }

    if let Some(origin) = rows.iter().map(|r| r.timestamp_us).min() {
        for r in &mut rows {
            r.timestamp_us -= origin;
        }
    }
    Ok(RawCapture { rows })
}

/// Keeps the rows exchanged between `client_station` and `ap_station`,
/// tags their direction and rebases time to the client's first frame.
pub fn extract_client_trace(
    raw: &RawCapture,
    ap_station: StationId,
    client_station: StationId,
) -> Result<ClientTrace, IngestError> {
    let seen = |s: StationId| raw.rows.iter().any(|r| r.src == s || r.dst == s);
    if !seen(client_station) {
        return Err(IngestError::UnknownStation(client_station));
    }
    if !seen(ap_station) {
        return Err(IngestError::UnknownStation(ap_station));
    }

    let mut packets: Vec<PacketRecord> = raw
        .rows
        .iter()
        .filter_map(|r| {
            let direction = if r.src == client_station && r.dst == ap_station {
                Direction::Uplink
            } else if r.src == ap_station && r.dst == client_station {
                Direction::Downlink
            } else {
                return None;
            };
            Some(PacketRecord {
                timestamp_us: r.timestamp_us,
                size_bytes: r.size_bytes,
                direction,
                station_id: client_station,
            })
        })
        .collect();
    // stable: equal timestamps keep input order
    packets.sort_by_key(|p| p.timestamp_us);
    if let Some(origin) = packets.first().map(|p| p.timestamp_us) {
        for p in &mut packets {
            p.timestamp_us -= origin;
        }
    }

    Ok(ClientTrace {
        client_id: client_station,
        ap_id: ap_station,
        packets,
        label: None,
        meta: BTreeMap::new(),
    })
}

/// Gaps between consecutive packets, in seconds.
pub fn inter_arrival_times(trace: &ClientTrace) -> Vec<f64> {
    inter_arrivals(&trace.packets)
}

pub(crate) fn inter_arrivals(packets: &[PacketRecord]) -> Vec<f64> {
    packets
        .windows(2)
        .map(|w| (w[1].timestamp_us - w[0].timestamp_us) as f64 / MICROS_PER_SECOND)
        .collect()
}

/// Writes raw capture rows as CSV.
pub fn write_capture_csv<W: Write>(capture: &RawCapture, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for r in &capture.rows {
        writeln!(
            out,
            "{},{},{},{}",
            format_micros(r.timestamp_us),
            r.size_bytes,
            r.src,
            r.dst
        )?;
    }
    Ok(())
}

/// Writes a canonical trace file: `#key=value` metadata, then the CSV body.
pub fn write_trace<W: Write>(trace: &ClientTrace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "#client_id={}", trace.client_id)?;
    writeln!(out, "#ap_id={}", trace.ap_id)?;
    if let Some(label) = &trace.label {
        writeln!(out, "#family={}", label.family)?;
        writeln!(out, "#model={}", label.model_name)?;
        writeln!(out, "#dataset={}", label.dataset_name)?;
    }
    for (k, v) in &trace.meta {
        writeln!(out, "#{k}={v}")?;
    }
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for p in &trace.packets {
        let (src, dst) = match p.direction {
            Direction::Uplink => (trace.client_id, trace.ap_id),
            Direction::Downlink => (trace.ap_id, trace.client_id),
        };
        writeln!(
            out,
            "{},{},{},{}",
            format_micros(p.timestamp_us),
            p.size_bytes,
            src,
            dst
        )?;
    }
    Ok(())
}

/// Serialises a trace into an in-memory canonical file.
pub fn trace_to_string(trace: &ClientTrace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("trace files are ASCII")
}

/// Reads a canonical trace file written by [`write_trace`].
pub fn read_trace(text: &str) -> Result<ClientTrace, IngestError> {
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else {
            break;
        };
        let (k, v) = rest
            .split_once('=')
            .ok_or_else(|| IngestError::Metadata(format!("expected key=value, got `{line}`")))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    let station = |key: &str, meta: &mut BTreeMap<String, String>| {
        let v = meta
            .remove(key)
            .ok_or_else(|| IngestError::Metadata(format!("missing `{key}`")))?;
        v.parse::<StationId>()
            .map_err(|_| IngestError::Metadata(format!("bad station `{v}` for `{key}`")))
    };
    let client = station("client_id", &mut meta)?;
    let ap = station("ap_id", &mut meta)?;

    let label = match meta.remove("family") {
        Some(f) => {
            let family: ArchFamily = f
                .parse()
                .map_err(|_| IngestError::Metadata(format!("unknown family `{f}`")))?;
            let model = meta.remove("model").unwrap_or_default();
            let dataset = meta.remove("dataset").unwrap_or_default();
            Some(
                ArchLabel::new(family, model, dataset)
                    .map_err(|e| IngestError::Metadata(e.to_string()))?,
            )
        }
        None => None,
    };

    let raw = parse_capture_csv(text.as_bytes())?;
    let mut trace = if raw.rows.is_empty() {
        ClientTrace {
            client_id: client,
            ap_id: ap,
            packets: Vec::new(),
            label: None,
            meta: BTreeMap::new(),
        }
    } else {
        extract_client_trace(&raw, ap, client)?
    };
    trace.label = label;
    trace.meta = meta;
    Ok(trace)
}
