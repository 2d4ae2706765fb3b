//! Packet-trace ingestion: typed records, stream metadata, and the
//! whitespace-separated text format used by the public capture datasets.
//!
//! Trace files carry one packet per line. Columns are positional and named
//! Y1..Y8 by the dataset manifests; packet traces need at least Y1 (epoch
//! timestamp, seconds) and Y3 (UDP payload length, bytes). Y2 (inter-packet
//! delta, seconds) is recomputed from timestamps when absent.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest payload a UDP datagram can carry over IPv4.
pub const MAX_UDP_PAYLOAD: u32 = 65_507;

/// Tolerance when cross-checking a file's delta column against timestamps.
pub const DELTA_TOLERANCE: f64 = 1e-5;

/// Rounds a time in seconds to the microsecond grid used by trace files.
///
/// The text format stores six decimals, so values quantized with this
/// function survive a write/parse round trip bit-exactly.
pub fn quantize_us(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

/// One captured (or generated) packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Capture timestamp, seconds since the Unix epoch.
    pub t_epoch: f64,
    /// Seconds since the previous packet of the same stream; 0 for the first.
    pub delta: f64,
    /// UDP payload length in bytes, 1..=65507.
    pub payload_len: u32,
}

/// Game titles covered by the capture campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Game {
    /// Fast-paced racing title.
    TR,
    /// Third-person action title.
    TH,
    /// Slow-paced puzzle title.
    SP,
}

/// Transport protocol of a stream, as labeled in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Rtp,
    Rtcp,
    Dtls,
    Stun,
    /// All protocols of one direction merged into a single file.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downlink,
    Uplink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VideoCodec {
    #[serde(rename = "VP9")]
    Vp9,
    #[serde(rename = "H264")]
    H264,
}

/// Encoded video resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "720p")]
    R720p,
    #[serde(rename = "1080p")]
    R1080p,
    #[serde(rename = "4K")]
    R4k,
}

impl Resolution {
    /// Vertical pixel count, the value reported in session statistics.
    pub fn height_px(self) -> u32 {
        match self {
            Resolution::R720p => 720,
            Resolution::R1080p => 1080,
            Resolution::R4k => 2160,
        }
    }

    /// Next step up, if any.
    pub fn step_up(self) -> Option<Resolution> {
        match self {
            Resolution::R720p => Some(Resolution::R1080p),
            Resolution::R1080p => Some(Resolution::R4k),
            Resolution::R4k => None,
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::R720p => write!(f, "720p"),
            Resolution::R1080p => write!(f, "1080p"),
            Resolution::R4k => write!(f, "4K"),
        }
    }
}

/// Capture session identifier within the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[allow(missing_docs)]
pub enum DatasetId {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
    D8,
}

/// Identity of one traced stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamMeta {
    pub game: Game,
    pub protocol: Protocol,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec: Option<VideoCodec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    pub dataset: DatasetId,
}

impl fmt::Display for StreamMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}/{:?}/{:?}", self.dataset, self.game, self.protocol, self.direction)
    }
}

/// Positional column labels used by dataset manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[allow(missing_docs)]
pub enum Column {
    /// Epoch timestamp, seconds.
    Y1,
    /// Inter-packet delta, seconds.
    Y2,
    /// UDP payload length, bytes.
    Y3,
    /// Video height, pixels.
    Y4,
    /// Decoded frames per second.
    Y5,
    /// Round-trip time, seconds.
    Y6,
    /// Packets lost per second.
    Y7,
    /// Jitter-buffer delay, seconds.
    Y8,
}

impl FromStr for Column {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Y1" => Column::Y1,
            "Y2" => Column::Y2,
            "Y3" => Column::Y3,
            "Y4" => Column::Y4,
            "Y5" => Column::Y5,
            "Y6" => Column::Y6,
            "Y7" => Column::Y7,
            "Y8" => Column::Y8,
            other => return Err(format!("unknown column label {other:?}")),
        })
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("schema {0:?} lacks {1:?}, required for packet traces")]
    UnsupportedSchema(Vec<Column>, Column),
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: column {column:?}: cannot parse {text:?}")]
    BadNumber { line: usize, column: Column, text: String },
    #[error("line {line}: payload length {value} outside 1..={MAX_UDP_PAYLOAD}")]
    PayloadOutOfRange { line: usize, value: u64 },
    #[error("line {line}: negative inter-packet delta {delta}")]
    NegativeDelta { line: usize, delta: f64 },
    #[error("line {line}: timestamp decreases ({prev} -> {t})")]
    NonMonotonicTime { line: usize, prev: f64, t: f64 },
    #[error("line {line}: delta {delta} disagrees with timestamp difference {diff} by more than {DELTA_TOLERANCE}")]
    DeltaMismatch { line: usize, delta: f64, diff: f64 },
    #[error("trace has no records")]
    Empty,
}

/// A validated packet trace plus its stream identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    meta: StreamMeta,
    records: Vec<PacketRecord>,
}

impl Trace {
    /// Wraps pre-built records, enforcing every record/ordering invariant.
    pub fn new(meta: StreamMeta, records: Vec<PacketRecord>) -> Result<Self, TraceError> {
        if records.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            if r.payload_len < 1 || r.payload_len > MAX_UDP_PAYLOAD {
                return Err(TraceError::PayloadOutOfRange { line, value: r.payload_len as u64 });
            }
            if r.delta < 0.0 {
                return Err(TraceError::NegativeDelta { line, delta: r.delta });
            }
            if i > 0 {
                let prev = records[i - 1].t_epoch;
                if r.t_epoch < prev {
                    return Err(TraceError::NonMonotonicTime { line, prev, t: r.t_epoch });
                }
                let diff = r.t_epoch - prev;
                if (r.delta - diff).abs() > DELTA_TOLERANCE {
                    return Err(TraceError::DeltaMismatch { line, delta: r.delta, diff });
                }
            }
        }
        Ok(Self { meta, records })
    }

    /// Parses a whitespace-separated trace from `reader`.
    pub fn from_reader<R: BufRead>(
        meta: StreamMeta,
        reader: R,
        schema: &[Column],
    ) -> Result<Self, TraceError> {
        let records = parse_trace_file(reader, schema)?;
        Self::new(meta, records)
    }

    /// Convenience wrapper over [`Trace::from_reader`] for a file path.
    pub fn from_path<P: AsRef<Path>>(
        meta: StreamMeta,
        path: P,
        schema: &[Column],
    ) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(meta, io::BufReader::new(file), schema)
    }

    pub fn meta(&self) -> &StreamMeta {
        &self.meta
    }

    pub fn records(&self) -> &[PacketRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Span between first and last packet, seconds.
    pub fn duration(&self) -> f64 {
        self.records.last().unwrap().t_epoch - self.records[0].t_epoch
    }

    /// Writes the trace in the 3-column dataset text format (Y1 Y2 Y3,
    /// six-decimal timestamps). Quantized traces round-trip bit-exactly.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(w, "{:.6} {:.6} {}", r.t_epoch, r.delta, r.payload_len)?;
        }
        Ok(())
    }
}

/// Parses packet records from a trace file. `schema` lists the column
/// meaning by position; Y1 and Y3 are required, Y2 is optional (deltas are
/// derived from timestamps when it is missing), other columns are validated
/// as numeric and skipped. Blank lines are ignored. Errors carry 1-based
/// file line numbers.
pub fn parse_trace_file<R: BufRead>(
    reader: R,
    schema: &[Column],
) -> Result<Vec<PacketRecord>, TraceError> {
    let pos = |c: Column| schema.iter().position(|&s| s == c);
    let t_idx = pos(Column::Y1)
        .ok_or_else(|| TraceError::UnsupportedSchema(schema.to_vec(), Column::Y1))?;
    let len_idx = pos(Column::Y3)
        .ok_or_else(|| TraceError::UnsupportedSchema(schema.to_vec(), Column::Y3))?;
    let delta_idx = pos(Column::Y2);

    let mut records = Vec::new();
    let mut prev_t: Option<f64> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != schema.len() {
            return Err(TraceError::FieldCount {
                line: lineno,
                expected: schema.len(),
                found: fields.len(),
            });
        }
        // Verify every column is numeric, even ones we do not keep.
        for (&col, &text) in schema.iter().zip(&fields) {
            if text.parse::<f64>().is_err() {
                return Err(TraceError::BadNumber { line: lineno, column: col, text: text.into() });
            }
        }
        let t_epoch: f64 = fields[t_idx].parse().unwrap();
        let payload_len: u64 = fields[len_idx].parse().map_err(|_| TraceError::BadNumber {
            line: lineno,
            column: Column::Y3,
            text: fields[len_idx].into(),
        })?;
        if payload_len < 1 || payload_len > MAX_UDP_PAYLOAD as u64 {
            return Err(TraceError::PayloadOutOfRange { line: lineno, value: payload_len });
        }
        let delta = match delta_idx {
            Some(i) => {
                let d: f64 = fields[i].parse().unwrap();
                if d < 0.0 {
                    return Err(TraceError::NegativeDelta { line: lineno, delta: d });
                }
                d
            }
            // Derived deltas are quantized so a rewrite of this trace still
            // round-trips exactly.
            None => match prev_t {
                Some(p) => quantize_us(t_epoch - p),
                None => 0.0,
            },
        };
        if let Some(p) = prev_t {
            if t_epoch < p {
                return Err(TraceError::NonMonotonicTime { line: lineno, prev: p, t: t_epoch });
            }
            if delta_idx.is_some() {
                let diff = t_epoch - p;
                if (delta - diff).abs() > DELTA_TOLERANCE {
                    return Err(TraceError::DeltaMismatch { line: lineno, delta, diff });
                }
            }
        }
        prev_t = Some(t_epoch);
        records.push(PacketRecord { t_epoch, delta, payload_len: payload_len as u32 });
    }
    Ok(records)
}
