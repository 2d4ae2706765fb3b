//! Parametric session traffic generator.
//!
//! Emits the packet schedule of one cloud-gaming session: video frame bursts
//! (groups of packets inside each frame period), a fixed-cadence audio
//! stream, jittered keepalive probes both ways, a memoryless uplink input
//! stream, and one uplink feedback packet per received video group.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DiscreteDist;
use crate::trace::{quantize_us, Direction, PacketRecord, StreamMeta, Trace, MAX_UDP_PAYLOAD};

/// Which logical stream a scheduled packet belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Video,
    Audio,
    Stun,
    Dtls,
    Rtcp,
}

/// One packet of the synthetic schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledPacket {
    /// Seconds from session start.
    pub t: f64,
    /// Payload bytes.
    pub size: u32,
    pub kind: StreamKind,
    pub direction: Direction,
}

/// Fixed-cadence stream (audio).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicStreamParams {
    pub period_ms: f64,
    pub size_bytes: u32,
}

/// Periodic stream with uniform jitter on each interval (keepalives).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitteredStreamParams {
    pub period_ms: f64,
    /// Each interval is `period * (1 + U[-jitter_frac, +jitter_frac])`.
    #[serde(default = "default_jitter_frac")]
    pub jitter_frac: f64,
    pub size_bytes: u32,
}

fn default_jitter_frac() -> f64 {
    0.10
}

/// Memoryless stream: exponential inter-packet times, sizes from a
/// distribution (input channel, feedback sizing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomStreamParams {
    pub mean_ipt_ms: f64,
    pub sizes: DiscreteDist,
}

/// Full parametric model of one session's traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Video frames per second.
    pub frame_rate: f64,
    /// Groups of packets per frame.
    pub group_count_dist: DiscreteDist,
    /// Packets per group.
    pub group_size_dist: DiscreteDist,
    /// Start-to-start spacing of consecutive groups in one frame.
    pub group_spacing_ms: f64,
    /// Spacing between packets inside one group.
    #[serde(default = "default_intra_spacing_ms")]
    pub intra_group_spacing_ms: f64,
    /// Video payload sizes, bytes.
    pub video_size_dist: DiscreteDist,
    pub audio: PeriodicStreamParams,
    pub stun: JitteredStreamParams,
    /// Uplink input stream.
    pub dtls: RandomStreamParams,
    /// Uplink feedback sizing; one packet is emitted per video group, so
    /// `mean_ipt_ms` is documentation of the expected cadence, not a driver.
    pub rtcp_uplink: RandomStreamParams,
    pub seed: u64,
}

fn default_intra_spacing_ms() -> f64 {
    0.1
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("frame rate must be positive and finite, got {0}")]
    BadFrameRate(f64),
    #[error("{name} must be positive and finite, got {value}")]
    BadParam { name: &'static str, value: f64 },
    #[error("groups span {span_ms} ms, must fit inside the {period_ms} ms frame period")]
    GroupsOverflowFrame { span_ms: f64, period_ms: f64 },
    #[error("a group of {max_packets} packets spans {span_ms} ms, overlapping the next group at {spacing_ms} ms")]
    GroupOverlapsNext { max_packets: u32, span_ms: f64, spacing_ms: f64 },
    #[error("{stream} payload size {size} outside 1..={max}", max = MAX_UDP_PAYLOAD)]
    SizeOutOfRange { stream: &'static str, size: u32 },
    #[error("jitter fraction {0} outside [0, 1)")]
    BadJitter(f64),
    #[error("duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("target video rate {target_mbps} Mbit/s is at or below the {floor_mbps} Mbit/s floor")]
    TargetRateTooLow { target_mbps: f64, floor_mbps: f64 },
    #[error("target video rate {target_mbps} Mbit/s unreachable by rescaling: closest achievable {achieved_mbps} Mbit/s")]
    TargetRateUnreachable { target_mbps: f64, achieved_mbps: f64 },
    #[error("no packets scheduled for the requested stream selection")]
    EmptySelection,
}

/// Minimum video rate `scale_to_rate` will aim for; below this the fixed
/// audio/keepalive floor dominates the session and scaling is meaningless.
pub const MIN_VIDEO_TARGET_MBPS: f64 = 0.5;

fn check_size(stream: &'static str, size: u32) -> Result<(), GeneratorError> {
    if size < 1 || size > MAX_UDP_PAYLOAD {
        return Err(GeneratorError::SizeOutOfRange { stream, size });
    }
    Ok(())
}

fn check_positive(name: &'static str, value: f64) -> Result<(), GeneratorError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(GeneratorError::BadParam { name, value });
    }
    Ok(())
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(GeneratorError::BadFrameRate(self.frame_rate));
        }
        check_positive("group_spacing_ms", self.group_spacing_ms)?;
        if !(self.intra_group_spacing_ms.is_finite() && self.intra_group_spacing_ms >= 0.0) {
            return Err(GeneratorError::BadParam {
                name: "intra_group_spacing_ms",
                value: self.intra_group_spacing_ms,
            });
        }
        let period_ms = 1000.0 / self.frame_rate;
        let span_ms = self.group_spacing_ms * (self.group_count_dist.max_value().max(1) - 1) as f64;
        if span_ms >= period_ms {
            return Err(GeneratorError::GroupsOverflowFrame { span_ms, period_ms });
        }
        let max_packets = self.group_size_dist.max_value();
        let group_span_ms = self.intra_group_spacing_ms * max_packets.saturating_sub(1) as f64;
        if group_span_ms >= self.group_spacing_ms {
            return Err(GeneratorError::GroupOverlapsNext {
                max_packets,
                span_ms: group_span_ms,
                spacing_ms: self.group_spacing_ms,
            });
        }
        for &s in self.video_size_dist.values() {
            check_size("video", s)?;
        }
        for &s in self.dtls.sizes.values() {
            check_size("dtls", s)?;
        }
        for &s in self.rtcp_uplink.sizes.values() {
            check_size("rtcp", s)?;
        }
        check_size("audio", self.audio.size_bytes)?;
        check_size("stun", self.stun.size_bytes)?;
        check_positive("audio.period_ms", self.audio.period_ms)?;
        check_positive("stun.period_ms", self.stun.period_ms)?;
        if !(self.stun.jitter_frac.is_finite()
            && (0.0..1.0).contains(&self.stun.jitter_frac))
        {
            return Err(GeneratorError::BadJitter(self.stun.jitter_frac));
        }
        check_positive("dtls.mean_ipt_ms", self.dtls.mean_ipt_ms)?;
        check_positive("rtcp_uplink.mean_ipt_ms", self.rtcp_uplink.mean_ipt_ms)?;
        Ok(())
    }

    /// Analytic expected video rate: fps x E[groups] x E[packets] x E[size] x 8.
    pub fn expected_video_rate_mbps(&self) -> f64 {
        self.frame_rate
            * self.group_count_dist.mean()
            * self.group_size_dist.mean()
            * self.video_size_dist.mean()
            * 8.0
            / 1e6
    }

    /// Expected audio rate from its fixed cadence.
    pub fn audio_rate_mbps(&self) -> f64 {
        self.audio.size_bytes as f64 * 8.0 / (self.audio.period_ms / 1e3) / 1e6
    }

    /// Expected downlink media rate (video + audio), the quantity a
    /// whole-trace load measurement of the media stream converges to.
    pub fn expected_media_rate_mbps(&self) -> f64 {
        self.expected_video_rate_mbps() + self.audio_rate_mbps()
    }

    /// Largest packets-per-group value that still leaves a detectable gap
    /// (>= 1 ms) between consecutive groups, which period fitting relies on.
    fn max_fit_safe_group_size(&self) -> u32 {
        if self.intra_group_spacing_ms <= 0.0 {
            return u32::MAX;
        }
        (((self.group_spacing_ms - 1.0) / self.intra_group_spacing_ms).floor() as i64 + 1)
            .max(1) as u32
    }

    /// Rescales the expected video rate to `target_mbps`, leaving audio and
    /// sidecar streams untouched. The scale factor is split between the
    /// packets-per-group distribution (bulk) and the payload-size
    /// distribution (remainder), mirroring how lower encoder rates shrink
    /// both packet counts and packet sizes.
    pub fn scale_to_rate(&self, target_mbps: f64) -> Result<GeneratorParams, GeneratorError> {
        self.validate()?;
        if !(target_mbps.is_finite() && target_mbps > MIN_VIDEO_TARGET_MBPS) {
            return Err(GeneratorError::TargetRateTooLow {
                target_mbps,
                floor_mbps: MIN_VIDEO_TARGET_MBPS,
            });
        }
        let current = self.expected_video_rate_mbps();
        let f = target_mbps / current;

        let group_hi = self.max_fit_safe_group_size();
        let scaled_groups = self.group_size_dist.scale_mean(f.powf(0.75), 1, group_hi);
        let k_factor = scaled_groups.mean() / self.group_size_dist.mean();
        let size_factor = f / k_factor;
        let scaled_sizes = self.video_size_dist.scale_mean(size_factor, 1, MAX_UDP_PAYLOAD);

        let mut out = self.clone();
        out.group_size_dist = scaled_groups;
        out.video_size_dist = scaled_sizes;
        let achieved = out.expected_video_rate_mbps();
        if (achieved / target_mbps - 1.0).abs() > 0.02 {
            return Err(GeneratorError::TargetRateUnreachable {
                target_mbps,
                achieved_mbps: achieved,
            });
        }
        Ok(out)
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const VIDEO_STREAM: u64 = 1;
const STUN_DL_STREAM: u64 = 2;
const STUN_UL_STREAM: u64 = 3;
const DTLS_STREAM: u64 = 4;
const RTCP_STREAM: u64 = 5;

/// Draws one video frame burst starting at `frame_start` seconds: G groups
/// `group_spacing` apart, each with K packets `intra_group_spacing` apart,
/// sizes drawn per packet.
pub fn generate_frame(
    params: &GeneratorParams,
    rng: &mut ChaCha8Rng,
    frame_start: f64,
) -> Vec<ScheduledPacket> {
    let groups = params.group_count_dist.sample(rng);
    let spacing_s = params.group_spacing_ms / 1e3;
    let intra_s = params.intra_group_spacing_ms / 1e3;
    let mut out = Vec::new();
    for g in 0..groups {
        let group_start = frame_start + g as f64 * spacing_s;
        let count = params.group_size_dist.sample(rng);
        for k in 0..count {
            out.push(ScheduledPacket {
                t: group_start + k as f64 * intra_s,
                size: params.video_size_dist.sample(rng),
                kind: StreamKind::Video,
                direction: Direction::Downlink,
            });
        }
    }
    out
}

/// Complete packet schedule of one session, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    packets: Vec<ScheduledPacket>,
}

impl Session {
    /// Generates `duration_s` seconds of traffic. Deterministic for a given
    /// (params, seed): each stream draws from its own RNG substream, so
    /// streams do not perturb each other.
    pub fn generate(params: &GeneratorParams, duration_s: f64) -> Result<Session, GeneratorError> {
        params.validate()?;
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(GeneratorError::BadDuration(duration_s));
        }

        let mut packets: Vec<ScheduledPacket> = Vec::new();

        // Video: frame bursts exactly 1/frame_rate apart.
        let mut video_rng = substream(params.seed, VIDEO_STREAM);
        let mut frame = 0u64;
        loop {
            let t = frame as f64 / params.frame_rate;
            if t >= duration_s {
                break;
            }
            packets.extend(generate_frame(params, &mut video_rng, t));
            frame += 1;
        }
        let video_end = packets.len();

        // Feedback: one uplink packet per video group, at the group start.
        // Groups are re-read off the schedule (a gap above the intra-group
        // spacing starts a new group) so feedback stays aligned with
        // whatever the frame draws produced.
        let gap_threshold = params.intra_group_spacing_ms / 1e3 * 1.5 + 1e-9;
        let mut rtcp_rng = substream(params.seed, RTCP_STREAM);
        let mut feedback = Vec::new();
        let mut prev_t: Option<f64> = None;
        for p in &packets[..video_end] {
            let is_group_start = prev_t.map_or(true, |pt| p.t - pt > gap_threshold);
            if is_group_start {
                feedback.push(ScheduledPacket {
                    t: p.t,
                    size: params.rtcp_uplink.sizes.sample(&mut rtcp_rng),
                    kind: StreamKind::Rtcp,
                    direction: Direction::Uplink,
                });
            }
            prev_t = Some(p.t);
        }
        packets.extend(feedback);

        // Audio: fixed cadence, no jitter at the source.
        let audio_period_s = params.audio.period_ms / 1e3;
        let mut k = 0u64;
        loop {
            let t = k as f64 * audio_period_s;
            if t >= duration_s {
                break;
            }
            packets.push(ScheduledPacket {
                t,
                size: params.audio.size_bytes,
                kind: StreamKind::Audio,
                direction: Direction::Downlink,
            });
            k += 1;
        }

        // Keepalives both ways, each with its own jitter sequence.
        for (dir, stream) in [
            (Direction::Downlink, STUN_DL_STREAM),
            (Direction::Uplink, STUN_UL_STREAM),
        ] {
            let mut rng = substream(params.seed, stream);
            let period_s = params.stun.period_ms / 1e3;
            let mut t = 0.0;
            while t < duration_s {
                packets.push(ScheduledPacket {
                    t,
                    size: params.stun.size_bytes,
                    kind: StreamKind::Stun,
                    direction: dir,
                });
                let jitter = 1.0 + params.stun.jitter_frac * (rng.gen::<f64>() * 2.0 - 1.0);
                t += period_s * jitter;
            }
        }

        // Input: memoryless uplink stream.
        let mut dtls_rng = substream(params.seed, DTLS_STREAM);
        let mean_s = params.dtls.mean_ipt_ms / 1e3;
        let mut t = exp_draw(&mut dtls_rng, mean_s);
        while t < duration_s {
            packets.push(ScheduledPacket {
                t,
                size: params.dtls.sizes.sample(&mut dtls_rng),
                kind: StreamKind::Dtls,
                direction: Direction::Uplink,
            });
            t += exp_draw(&mut dtls_rng, mean_s);
        }

        packets.sort_by(|a, b| {
            a.t.partial_cmp(&b.t)
                .unwrap()
                .then((a.kind as u8).cmp(&(b.kind as u8)))
                .then((a.direction as u8).cmp(&(b.direction as u8)))
        });
        Ok(Session { packets })
    }

    pub fn packets(&self) -> &[ScheduledPacket] {
        &self.packets
    }

    pub fn iter_stream(
        &self,
        kind: StreamKind,
        direction: Direction,
    ) -> impl Iterator<Item = &ScheduledPacket> {
        self.packets.iter().filter(move |p| p.kind == kind && p.direction == direction)
    }

    /// Exports selected streams of one direction as a microsecond-quantized
    /// trace starting at epoch 0.
    pub fn to_trace(
        &self,
        kinds: &[StreamKind],
        direction: Direction,
        meta: StreamMeta,
    ) -> Result<Trace, GeneratorError> {
        let mut records = Vec::new();
        let mut prev: Option<f64> = None;
        for p in &self.packets {
            if p.direction != direction || !kinds.contains(&p.kind) {
                continue;
            }
            let t_epoch = quantize_us(p.t);
            let delta = prev.map_or(0.0, |q| quantize_us(t_epoch - q));
            records.push(PacketRecord { t_epoch, delta, payload_len: p.size });
            prev = Some(t_epoch);
        }
        if records.is_empty() {
            return Err(GeneratorError::EmptySelection);
        }
        Ok(Trace::new(meta, records).expect("generated schedule satisfies trace invariants"))
    }

    /// The downlink media trace (video + audio), the stream the dataset's
    /// RTP downlink files correspond to.
    pub fn downlink_media_trace(&self, meta: StreamMeta) -> Result<Trace, GeneratorError> {
        self.to_trace(&[StreamKind::Video, StreamKind::Audio], Direction::Downlink, meta)
    }
}

/// Generates a session and returns its downlink media (video + audio) trace.
pub fn generate_session(
    params: &GeneratorParams,
    duration_s: f64,
    meta: StreamMeta,
) -> Result<Trace, GeneratorError> {
    Session::generate(params, duration_s)?.downlink_media_trace(meta)
}

/// Inverse-CDF exponential draw with the given mean.
pub(crate) fn exp_draw<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let u: f64 = rng.gen();
    -mean * (1.0 - u).ln()
}
