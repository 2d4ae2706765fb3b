//! Fitting generator parameters from a measured downlink media trace.
//!
//! The fit recovers the frame cadence (phase-folding scan plus a
//! window-doubling linear regression), splits packets into frames and
//! gap-separated groups, and emits empirical distributions for groups per
//! frame, packets per group, and payload size. An audio stream, when
//! assumed present, is separated out first by its size band and cadence.
//! Keepalive/input sidecars cannot be inferred from a media trace and are
//! filled with the shipped defaults.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dist::DiscreteDist;
use crate::generator::{
    GeneratorError, GeneratorParams, JitteredStreamParams, PeriodicStreamParams,
    RandomStreamParams,
};
use crate::trace::{Direction, Trace};

/// Tunables of the fitting pipeline.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Candidate frame-period range, milliseconds.
    pub period_lo_ms: f64,
    pub period_hi_ms: f64,
    /// Scan resolution over that range.
    pub grid_step_ms: f64,
    /// Floor on the phase-concentration score (circular resultant, 0..1)
    /// for a period to count as detected. The effective threshold is this
    /// floor or the noise-significance level 5/sqrt(n), whichever is
    /// larger, so random traffic cannot clear it by chance.
    pub min_concentration: f64,
    /// A silence of at least this long starts a new packet group. Must
    /// sit clear of both the intra-group spacing (0.1 ms scale) and the
    /// shortest real inter-group gap: dense groups can eat all but
    /// ~1 ms of a 2 ms group spacing, and timestamps are quantized to
    /// the microsecond, so a threshold at 1 ms would fuse whole frames.
    pub group_gap_ms: f64,
    /// Payload band that audio packets fall into.
    pub audio_size_lo: u32,
    pub audio_size_hi: u32,
    /// Cadence band a size class must keep to be treated as audio.
    pub audio_ipt_lo_ms: f64,
    pub audio_ipt_hi_ms: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            period_lo_ms: 10.0,
            period_hi_ms: 40.0,
            grid_step_ms: 0.05,
            min_concentration: 0.1,
            group_gap_ms: 0.5,
            audio_size_lo: 300,
            audio_size_hi: 420,
            audio_ipt_lo_ms: 18.0,
            audio_ipt_hi_ms: 23.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("trace spans {span_s:.2} s, need at least {need_s} s")]
    TooShort { span_s: f64, need_s: f64 },
    #[error("fit expects a downlink media trace, got an uplink trace")]
    WrongDirection,
    #[error("too few media packets to fit ({got})")]
    TooFewPackets { got: usize },
    #[error(
        "no repeating frame period in [{lo_ms}, {hi_ms}] ms: best concentration {best:.3} below {threshold}"
    )]
    NoPeriod { lo_ms: f64, hi_ms: f64, best: f64, threshold: f64 },
    #[error("fitted structure is not generatable")]
    Invalid(#[from] GeneratorError),
}

const MIN_SPAN_S: f64 = 10.0;
const MIN_PACKETS: usize = 100;

/// Fits [`GeneratorParams`] to a downlink media trace with default settings.
/// With `audio_assumed`, packets matching the audio band/cadence are fitted
/// as the audio stream instead of polluting the video distributions.
pub fn fit_generator_params(
    trace: &Trace,
    audio_assumed: bool,
) -> Result<GeneratorParams, FitError> {
    fit_with_config(trace, audio_assumed, &FitConfig::default())
}

pub fn fit_with_config(
    trace: &Trace,
    audio_assumed: bool,
    cfg: &FitConfig,
) -> Result<GeneratorParams, FitError> {
    if trace.meta().direction != Direction::Downlink {
        return Err(FitError::WrongDirection);
    }
    let span = trace.duration();
    if span < MIN_SPAN_S {
        return Err(FitError::TooShort { span_s: span, need_s: MIN_SPAN_S });
    }

    let t0 = trace.records()[0].t_epoch;
    let all: Vec<(f64, u32)> =
        trace.records().iter().map(|r| (r.t_epoch - t0, r.payload_len)).collect();

    let (audio, video) = if audio_assumed {
        separate_audio(&all, span, cfg)
    } else {
        (None, all)
    };
    if video.len() < MIN_PACKETS {
        return Err(FitError::TooFewPackets { got: video.len() });
    }

    let period_s = detect_period(&video, span, cfg)?;
    let frames = split_frames(&video, period_s);
    let structure = measure_structure(&frames, cfg);

    let audio_params = match audio {
        Some((size, period_ms)) => PeriodicStreamParams { period_ms, size_bytes: size },
        None => PeriodicStreamParams { period_ms: 20.0, size_bytes: 360 },
    };
    let group_rate = structure.group_count.mean() / period_s;

    let params = GeneratorParams {
        frame_rate: 1.0 / period_s,
        group_count_dist: structure.group_count,
        group_size_dist: structure.group_size,
        group_spacing_ms: structure.spacing_ms,
        intra_group_spacing_ms: structure.intra_ms,
        video_size_dist: structure.sizes,
        audio: audio_params,
        // Sidecars are invisible in a media trace; shipped defaults apply.
        stun: JitteredStreamParams { period_ms: 265.0, jitter_frac: 0.1, size_bytes: 81 },
        dtls: RandomStreamParams {
            mean_ipt_ms: 7.1,
            sizes: DiscreteDist::new(vec![110, 134], vec![0.45, 0.55]).expect("static dist"),
        },
        rtcp_uplink: RandomStreamParams {
            mean_ipt_ms: if group_rate > 0.0 { 1e3 / group_rate } else { 1e3 },
            sizes: DiscreteDist::point(66),
        },
        seed: 0,
    };
    params.validate()?;
    Ok(params)
}

/// Splits off the audio stream: size classes inside the audio band whose
/// own-cadence (mean inter-packet time of that exact size) sits in the
/// audio cadence band. Returns the fitted (size, period) and the remaining
/// video packets.
#[allow(clippy::type_complexity)]
fn separate_audio(
    packets: &[(f64, u32)],
    span_s: f64,
    cfg: &FitConfig,
) -> (Option<(u32, f64)>, Vec<(f64, u32)>) {
    let mut in_band: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &(t, size) in packets {
        if size >= cfg.audio_size_lo && size <= cfg.audio_size_hi {
            in_band.entry(size).or_default().push(t);
        }
    }
    let mut audio_sizes: Vec<(u32, usize, f64)> = Vec::new();
    for (&size, times) in &in_band {
        if times.len() < 2 {
            continue;
        }
        let mean_ipt_ms =
            (times.last().unwrap() - times[0]) / (times.len() - 1) as f64 * 1e3;
        // A genuine audio stream fills the whole span at its cadence.
        let expected = span_s * 1e3 / mean_ipt_ms;
        let coverage = times.len() as f64 / expected;
        if mean_ipt_ms >= cfg.audio_ipt_lo_ms
            && mean_ipt_ms <= cfg.audio_ipt_hi_ms
            && (0.5..=1.5).contains(&coverage)
        {
            audio_sizes.push((size, times.len(), mean_ipt_ms));
        }
    }
    if audio_sizes.is_empty() {
        return (None, packets.to_vec());
    }
    let &(main_size, _, period_ms) =
        audio_sizes.iter().max_by_key(|&&(_, count, _)| count).unwrap();
    let matched: Vec<u32> = audio_sizes.iter().map(|&(s, _, _)| s).collect();
    let video = packets
        .iter()
        .copied()
        .filter(|&(_, size)| !matched.contains(&size))
        .collect();
    (Some((main_size, period_ms)), video)
}

/// Finds the dominant repetition period: scan a period grid scoring each
/// candidate by the circular resultant of packet phases (concentrated
/// phases mean the fold lines bursts up), then refine the winner by
/// regressing burst-start times on burst index over doubling windows.
fn detect_period(video: &[(f64, u32)], span_s: f64, cfg: &FitConfig) -> Result<f64, FitError> {
    // Scoring window: the first second, or the first 200 packets if sparse.
    let mut window: Vec<f64> =
        video.iter().take_while(|&&(t, _)| t <= 1.0).map(|&(t, _)| t).collect();
    if window.len() < 200 {
        window = video.iter().take(200).map(|&(t, _)| t).collect();
    }

    let mut best = (0.0f64, cfg.period_lo_ms);
    let mut p_ms = cfg.period_lo_ms;
    while p_ms <= cfg.period_hi_ms {
        let p = p_ms / 1e3;
        let (mut re, mut im) = (0.0, 0.0);
        for &t in &window {
            let phase = t / p * std::f64::consts::TAU;
            re += phase.cos();
            im += phase.sin();
        }
        let r = (re * re + im * im).sqrt() / window.len() as f64;
        if r > best.0 {
            best = (r, p_ms);
        }
        p_ms += cfg.grid_step_ms;
    }
    // n random phases give a resultant of order 1/sqrt(n); five times that
    // is far outside chance even maximized over the whole period grid.
    let significance = 5.0 / (window.len() as f64).sqrt();
    let threshold = cfg.min_concentration.max(significance);
    if best.0 < threshold {
        return Err(FitError::NoPeriod {
            lo_ms: cfg.period_lo_ms,
            hi_ms: cfg.period_hi_ms,
            best: best.0,
            threshold,
        });
    }

    // Window-doubling refinement: each pass fixes enough of the residual
    // drift that doubling the window keeps frame indices unambiguous.
    let mut period = best.1 / 1e3;
    let mut w = 1.0f64;
    loop {
        let upto = video.partition_point(|&(t, _)| t <= w);
        let starts = burst_starts(&video[..upto], period);
        if starts.len() >= 2 {
            period = regress_slope(&starts).max(cfg.period_lo_ms / 1e3);
        }
        if w >= span_s {
            break;
        }
        w = (w * 2.0).min(span_s);
    }
    Ok(period)
}

/// First packet time of each frame, indexed by frame number, using a frame
/// boundary placed in the widest silent stretch of the phase circle (so a
/// capture that starts mid-burst does not split bursts across frames).
fn burst_starts(video: &[(f64, u32)], period: f64) -> Vec<(f64, f64)> {
    let boundary = frame_boundary_phase(video, period);
    let mut firsts: BTreeMap<i64, f64> = BTreeMap::new();
    for &(t, _) in video {
        let k = ((t - boundary) / period).floor() as i64;
        firsts.entry(k).or_insert(t);
    }
    firsts.into_iter().map(|(k, t)| (k as f64, t)).collect()
}

/// Phase (seconds, in [0, period)) of the middle of the largest circular
/// gap between packet phases.
fn frame_boundary_phase(video: &[(f64, u32)], period: f64) -> f64 {
    let mut phases: Vec<f64> =
        video.iter().take(4096).map(|&(t, _)| t.rem_euclid(period)).collect();
    phases.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_gap = period - phases.last().unwrap() + phases[0];
    let mut boundary = (phases.last().unwrap() + best_gap / 2.0).rem_euclid(period);
    for w in phases.windows(2) {
        let gap = w[1] - w[0];
        if gap > best_gap {
            best_gap = gap;
            boundary = w[0] + gap / 2.0;
        }
    }
    boundary
}

/// Least-squares slope of t over frame index.
fn regress_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|&(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in points {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

/// Packets of each frame, in time order; first and last frames are dropped
/// as potentially truncated by the capture window.
fn split_frames(video: &[(f64, u32)], period: f64) -> Vec<Vec<(f64, u32)>> {
    let boundary = frame_boundary_phase(video, period);
    let mut frames: BTreeMap<i64, Vec<(f64, u32)>> = BTreeMap::new();
    for &(t, size) in video {
        let k = ((t - boundary) / period).floor() as i64;
        frames.entry(k).or_default().push((t, size));
    }
    let mut out: Vec<Vec<(f64, u32)>> = frames.into_values().collect();
    if out.len() > 2 {
        out.pop();
        out.remove(0);
    }
    out
}

struct FrameStructure {
    group_count: DiscreteDist,
    group_size: DiscreteDist,
    sizes: DiscreteDist,
    spacing_ms: f64,
    intra_ms: f64,
}

fn measure_structure(frames: &[Vec<(f64, u32)>], cfg: &FitConfig) -> FrameStructure {
    let gap_s = cfg.group_gap_ms / 1e3;
    let mut group_counts: Vec<u32> = Vec::with_capacity(frames.len());
    let mut group_sizes: Vec<u32> = Vec::new();
    let mut sizes: Vec<u32> = Vec::new();
    let mut spacings: Vec<f64> = Vec::new();
    let mut intras: Vec<f64> = Vec::new();

    for frame in frames {
        let mut groups = 0u32;
        let mut in_group = 0u32;
        let mut group_start = 0.0;
        let mut prev: Option<f64> = None;
        for &(t, size) in frame {
            sizes.push(size);
            let starts_group = match prev {
                None => true,
                Some(p) => t - p >= gap_s,
            };
            if starts_group {
                if in_group > 0 {
                    group_sizes.push(in_group);
                }
                if groups > 0 {
                    spacings.push(t - group_start);
                }
                groups += 1;
                in_group = 1;
                group_start = t;
            } else {
                intras.push(t - prev.unwrap());
                in_group += 1;
            }
            prev = Some(t);
        }
        if in_group > 0 {
            group_sizes.push(in_group);
        }
        group_counts.push(groups);
    }

    FrameStructure {
        group_count: DiscreteDist::from_samples(&group_counts).expect("frames exist"),
        group_size: DiscreteDist::from_samples(&group_sizes).expect("groups exist"),
        sizes: DiscreteDist::from_samples(&sizes).expect("packets exist"),
        spacing_ms: median(&mut spacings).map_or(2.0, |s| s * 1e3),
        intra_ms: median(&mut intras).map_or(0.1, |s| s * 1e3),
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(values[values.len() / 2])
}
