//! Descriptive statistics over packet traces: per-stream summaries, packet
//! size ECDFs, windowed load series, and per-state load segmentation.

use serde::Serialize;
use thiserror::Error;

use crate::trace::Trace;

/// Default seconds trimmed from each end of a state segment before computing
/// its load statistics, so ramp-in/ramp-out around a state change does not
/// pollute the steady part.
pub const DEFAULT_SEGMENT_TRIM_S: f64 = 10.0;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("need at least {needed} records, trace has {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("trace spans zero time, rates are undefined")]
    ZeroDuration,
    #[error("window length must be positive and finite, got {0}")]
    BadWindow(f64),
    #[error("no samples")]
    EmptySamples,
    #[error("sample {0} is not finite")]
    BadSample(f64),
    #[error("state schedule: {0}")]
    BadSchedule(String),
    #[error("trim must be non-negative and finite, got {0}")]
    BadTrim(f64),
    #[error("state {state:?} spans {len_s} s, too short for 2 x {trim_s} s trim")]
    SegmentTooShort { state: String, len_s: f64, trim_s: f64 },
    #[error("state {state:?}: no complete window inside its trimmed interior")]
    EmptySegment { state: String },
}

/// Whole-trace summary of one stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficStats {
    pub packet_count: usize,
    /// First-to-last packet span, seconds.
    pub duration_s: f64,
    pub mean_payload_bytes: f64,
    /// Sample standard deviation (n-1 denominator) of payload sizes.
    pub stdev_payload_bytes: f64,
    pub min_payload_bytes: u32,
    pub max_payload_bytes: u32,
    /// Mean inter-packet time, milliseconds. The first record's delta is a
    /// placeholder zero and is excluded.
    pub mean_ipt_ms: f64,
    /// Total payload bits divided by the trace span, Mbit/s.
    pub load_mbps: f64,
    /// Up to three most frequent payload sizes as (bytes, share of packets),
    /// most frequent first; ties broken toward the smaller size.
    pub top_sizes: Vec<(u32, f64)>,
}

/// Computes [`TrafficStats`] for a trace. Needs at least two records and a
/// non-zero span, otherwise rate and spacing are undefined.
pub fn summary_stats(trace: &Trace) -> Result<TrafficStats, AnalyzerError> {
    let recs = trace.records();
    if recs.len() < 2 {
        return Err(AnalyzerError::TooFewRecords { needed: 2, got: recs.len() });
    }
    let duration_s = trace.duration();
    if duration_s <= 0.0 {
        return Err(AnalyzerError::ZeroDuration);
    }

    let n = recs.len() as f64;
    let total_bytes: u64 = recs.iter().map(|r| r.payload_len as u64).sum();
    let mean_payload_bytes = total_bytes as f64 / n;
    let var = recs
        .iter()
        .map(|r| (r.payload_len as f64 - mean_payload_bytes).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let mean_ipt_s = recs[1..].iter().map(|r| r.delta).sum::<f64>() / (n - 1.0);

    let mut counts = std::collections::BTreeMap::new();
    for r in recs {
        *counts.entry(r.payload_len).or_insert(0usize) += 1;
    }
    // BTreeMap order makes the sort stable toward smaller sizes on ties.
    let mut by_freq: Vec<(u32, usize)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top_sizes = by_freq.iter().take(3).map(|&(s, c)| (s, c as f64 / n)).collect();

    Ok(TrafficStats {
        packet_count: recs.len(),
        duration_s,
        mean_payload_bytes,
        stdev_payload_bytes: var.sqrt(),
        min_payload_bytes: recs.iter().map(|r| r.payload_len).min().unwrap(),
        max_payload_bytes: recs.iter().map(|r| r.payload_len).max().unwrap(),
        mean_ipt_ms: mean_ipt_s * 1e3,
        load_mbps: total_bytes as f64 * 8.0 / duration_s / 1e6,
        top_sizes,
    })
}

/// Empirical CDF over a set of samples.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self, AnalyzerError> {
        if samples.is_empty() {
            return Err(AnalyzerError::EmptySamples);
        }
        if let Some(&bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(AnalyzerError::BadSample(bad));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples strictly below `x`.
    pub fn fraction_below(&self, x: f64) -> f64 {
        let k = self.sorted.partition_point(|&v| v < x);
        k as f64 / self.sorted.len() as f64
    }

    /// Fraction of samples less than or equal to `x` (the CDF value).
    pub fn fraction_at_or_below(&self, x: f64) -> f64 {
        let k = self.sorted.partition_point(|&v| v <= x);
        k as f64 / self.sorted.len() as f64
    }

    /// Nearest-rank quantile for `q` in (0, 1].
    pub fn quantile(&self, q: f64) -> f64 {
        assert!(q > 0.0 && q <= 1.0, "quantile level {q} outside (0, 1]");
        let rank = (q * self.sorted.len() as f64).ceil() as usize;
        self.sorted[rank.clamp(1, self.sorted.len()) - 1]
    }
}

/// Load per fixed window over a trace's span.
///
/// Windows are contiguous and non-overlapping, starting at the first packet's
/// timestamp; there are `floor(span / window) + 1` of them so the last packet
/// always falls inside a window. Each value is the payload bits of the
/// packets in the window divided by the window length, in Mbit/s; the final
/// window is normalized by the span it actually covers (or by the nominal
/// length when that span is zero, e.g. a single-packet trace).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadSeries {
    /// Timestamp of the first window's start (= first packet), epoch seconds.
    pub start_epoch: f64,
    /// Nominal window length, seconds.
    pub window_s: f64,
    /// Load per window, Mbit/s.
    pub values: Vec<f64>,
}

impl LoadSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Start of window `i` relative to the trace start, seconds.
    pub fn window_offset_s(&self, i: usize) -> f64 {
        i as f64 * self.window_s
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn load_timeseries(trace: &Trace, window_s: f64) -> Result<LoadSeries, AnalyzerError> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(AnalyzerError::BadWindow(window_s));
    }
    let recs = trace.records();
    if recs.is_empty() {
        return Err(AnalyzerError::TooFewRecords { needed: 1, got: 0 });
    }
    let t0 = recs[0].t_epoch;
    let span = trace.duration();
    // The epsilon keeps a span that is an exact multiple of the window from
    // losing its boundary packet to float noise.
    let count = (span / window_s + 1e-9).floor() as usize + 1;

    let mut bits = vec![0.0f64; count];
    for r in recs {
        let idx = (((r.t_epoch - t0) / window_s) as usize).min(count - 1);
        bits[idx] += r.payload_len as f64 * 8.0;
    }
    let mut values = Vec::with_capacity(count);
    for (i, b) in bits.iter().enumerate() {
        let len_s = if i + 1 == count {
            let tail = span - (count - 1) as f64 * window_s;
            if tail > 1e-9 {
                tail
            } else {
                window_s
            }
        } else {
            window_s
        };
        values.push(b / len_s / 1e6);
    }
    Ok(LoadSeries { start_epoch: t0, window_s, values })
}

/// One labeled interval of a session, `[start_s, end_s)` relative to the
/// series start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatePeriod {
    pub state: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Ordered, non-overlapping state labels over a session.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSchedule {
    periods: Vec<StatePeriod>,
}

impl StateSchedule {
    pub fn new(periods: Vec<StatePeriod>) -> Result<Self, AnalyzerError> {
        if periods.is_empty() {
            return Err(AnalyzerError::BadSchedule("no periods".into()));
        }
        for p in &periods {
            if !(p.start_s.is_finite() && p.end_s.is_finite()) || p.end_s <= p.start_s {
                return Err(AnalyzerError::BadSchedule(format!(
                    "state {:?}: bad interval [{}, {})",
                    p.state, p.start_s, p.end_s
                )));
            }
        }
        for w in periods.windows(2) {
            if w[1].start_s < w[0].end_s - 1e-9 {
                return Err(AnalyzerError::BadSchedule(format!(
                    "state {:?} starting at {} overlaps previous period ending at {}",
                    w[1].state, w[1].start_s, w[0].end_s
                )));
            }
        }
        Ok(Self { periods })
    }

    pub fn periods(&self) -> &[StatePeriod] {
        &self.periods
    }
}

/// Load statistics of one schedule period's trimmed interior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSegment {
    pub state: String,
    pub start_s: f64,
    pub end_s: f64,
    /// Complete windows inside the trimmed interior.
    pub window_count: usize,
    pub mean_load_mbps: f64,
    /// Sample standard deviation; 0 when only one window qualifies.
    pub stdev_load_mbps: f64,
}

/// Per-state mean/deviation of a load series. For each period, `trim_s`
/// seconds are cut from both ends and only windows entirely inside the
/// remaining interior count.
pub fn segment_stats(
    series: &LoadSeries,
    schedule: &StateSchedule,
    trim_s: f64,
) -> Result<Vec<StateSegment>, AnalyzerError> {
    if !(trim_s.is_finite() && trim_s >= 0.0) {
        return Err(AnalyzerError::BadTrim(trim_s));
    }
    let mut out = Vec::with_capacity(schedule.periods().len());
    for p in schedule.periods() {
        let len_s = p.end_s - p.start_s;
        if len_s <= 2.0 * trim_s {
            return Err(AnalyzerError::SegmentTooShort {
                state: p.state.clone(),
                len_s,
                trim_s,
            });
        }
        let lo = p.start_s + trim_s;
        let hi = p.end_s - trim_s;
        let mut vals = Vec::new();
        for (i, &v) in series.values.iter().enumerate() {
            let w_start = series.window_offset_s(i);
            let w_end = w_start + series.window_s;
            if w_start >= lo - 1e-9 && w_end <= hi + 1e-9 {
                vals.push(v);
            }
        }
        if vals.is_empty() {
            return Err(AnalyzerError::EmptySegment { state: p.state.clone() });
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let stdev = if vals.len() < 2 {
            0.0
        } else {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        out.push(StateSegment {
            state: p.state.clone(),
            start_s: p.start_s,
            end_s: p.end_s,
            window_count: vals.len(),
            mean_load_mbps: mean,
            stdev_load_mbps: stdev,
        });
    }
    Ok(out)
}
