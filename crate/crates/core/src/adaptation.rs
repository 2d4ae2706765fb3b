//! Server-side resolution and encoder-bitrate policy: pick a starting
//! configuration from measured capacity (or refuse the session), drop to
//! the lowest resolution on sustained loss, then probe back up with
//! exponential backoff until a configuration holds loss-free long enough
//! to be called steady.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Resolution, VideoCodec};

/// Policy constants. Timer values reproduce observed transient-length
/// orderings rather than exact figures; all are overridable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationConfig {
    /// Encoder sits at this fraction of the available rate.
    pub headroom: f64,
    /// At or below this measured capacity the session is refused, bit/s.
    pub refuse_at_or_below_bps: f64,
    /// Capacity ceilings for picking the starting resolution, bit/s.
    pub start_720p_below_bps: f64,
    pub start_1080p_below_bps: f64,
    /// A report counts as lossy above this loss fraction.
    pub loss_threshold: f64,
    /// Lossy reports in a row before dropping to the lowest resolution.
    pub consecutive_lossy_to_drop: u32,
    /// Loss-free seconds before the first upward probe.
    pub initial_hold_s: f64,
    /// Loss within this window after a probe reverts it.
    pub probe_window_s: f64,
    /// Failed probes double the hold up to this cap.
    pub max_hold_s: f64,
    /// Loss-free seconds after which the session is steady.
    pub steady_after_s: f64,
    /// Steady upswitch: target must exceed the next band minimum by this
    /// factor...
    pub upswitch_margin: f64,
    /// ...for this many consecutive seconds.
    pub upswitch_consecutive_s: u32,
    /// Steady tracking raises the encoder by at most this fraction per
    /// call. Slow climbs let delay-based backoff cut the target before the
    /// bottleneck queue overflows; cuts stay immediate.
    pub max_step_up_frac: f64,
    /// Absolute floor on the climb step, bit/s. Keeps the climb-cut cycle
    /// short at low rates so one backoff always lands inside the upswitch
    /// confirmation window.
    pub min_step_up_bps: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            headroom: 0.85,
            refuse_at_or_below_bps: 10e6,
            start_720p_below_bps: 17.5e6,
            start_1080p_below_bps: 30e6,
            loss_threshold: 0.02,
            consecutive_lossy_to_drop: 2,
            initial_hold_s: 10.0,
            probe_window_s: 15.0,
            max_hold_s: 60.0,
            steady_after_s: 60.0,
            upswitch_margin: 1.2,
            upswitch_consecutive_s: 5,
            max_step_up_frac: 0.10,
            min_step_up_bps: 1.5e6,
        }
    }
}

/// Encoder bitrate band for a resolution, bit/s.
pub fn bitrate_band(resolution: Resolution) -> (f64, f64) {
    match resolution {
        Resolution::R720p => (4e6, 14e6),
        Resolution::R1080p => (10e6, 30e6),
        Resolution::R4k => (25e6, 45e6),
    }
}

/// Link capacity a resolution is meant for, bit/s; an upward probe tries
/// at least `headroom x` this so an undersized link shows loss instead of
/// silently carrying a thin stream at the higher resolution.
pub fn recommended_capacity(resolution: Resolution) -> f64 {
    match resolution {
        Resolution::R720p => 10e6,
        Resolution::R1080p => 28e6,
        Resolution::R4k => 35e6,
    }
}

fn rank(resolution: Resolution) -> u8 {
    match resolution {
        Resolution::R720p => 0,
        Resolution::R1080p => 1,
        Resolution::R4k => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub resolution: Resolution,
    pub encoder_bitrate_bps: f64,
    pub codec: VideoCodec,
}

#[derive(Debug, Error)]
pub enum AdaptationError {
    #[error("encoder bitrate {bitrate_bps} outside the {resolution} band [{lo}, {hi}] bit/s")]
    OutOfBand { resolution: Resolution, bitrate_bps: f64, lo: f64, hi: f64 },
    #[error("measured capacity must be positive and finite, got {0}")]
    BadCapacity(f64),
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), AdaptationError> {
        let (lo, hi) = bitrate_band(self.resolution);
        if !self.encoder_bitrate_bps.is_finite()
            || self.encoder_bitrate_bps < lo
            || self.encoder_bitrate_bps > hi
        {
            return Err(AdaptationError::OutOfBand {
                resolution: self.resolution,
                bitrate_bps: self.encoder_bitrate_bps,
                lo,
                hi,
            });
        }
        Ok(())
    }
}

/// Startup outcome: a refusal is a result, not an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartupDecision {
    Accepted(EncoderConfig),
    SessionRefused,
}

/// Picks the starting configuration for a measured capacity, clamped to
/// `max_resolution`.
pub fn initial_config(
    measured_capacity_bps: f64,
    max_resolution: Resolution,
    codec: VideoCodec,
    config: &AdaptationConfig,
) -> Result<StartupDecision, AdaptationError> {
    if !(measured_capacity_bps.is_finite() && measured_capacity_bps > 0.0) {
        return Err(AdaptationError::BadCapacity(measured_capacity_bps));
    }
    if measured_capacity_bps <= config.refuse_at_or_below_bps {
        return Ok(StartupDecision::SessionRefused);
    }
    let by_capacity = if measured_capacity_bps <= config.start_720p_below_bps {
        Resolution::R720p
    } else if measured_capacity_bps <= config.start_1080p_below_bps {
        Resolution::R1080p
    } else {
        Resolution::R4k
    };
    let resolution =
        if rank(by_capacity) > rank(max_resolution) { max_resolution } else { by_capacity };
    let (lo, hi) = bitrate_band(resolution);
    let encoder_bitrate_bps = (config.headroom * measured_capacity_bps).clamp(lo, hi);
    Ok(StartupDecision::Accepted(EncoderConfig { resolution, encoder_bitrate_bps, codec }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Starting,
    Steady,
    Transient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChangeReason {
    Startup,
    LossDownswitch,
    ProbeUp,
    ProbeRevert,
    SteadyUpswitch,
    BitrateTracking,
}

/// One entry of the change log.
#[derive(Debug, Clone, Copy)]
pub struct ChangeRecord {
    pub t: f64,
    pub old: EncoderConfig,
    pub new: EncoderConfig,
    pub reason: ChangeReason,
}

/// The adaptation state machine. Drive it with one `on_report` per
/// feedback second; in the steady phase additionally call
/// `on_capacity_increase` with the current target rate.
#[derive(Debug, Clone)]
pub struct AdaptationEngine {
    config: AdaptationConfig,
    max_resolution: Resolution,
    phase: Phase,
    current: EncoderConfig,
    phase_entered_at: f64,
    loss_free_since: f64,
    consecutive_lossy: u32,
    hold_s: f64,
    /// Set while an upward probe runs: (probe start, fallback config).
    probe: Option<(f64, EncoderConfig)>,
    /// A probe survived its window this transient: stop probing and let
    /// the loss-free streak run out into steady. Observed sessions make a
    /// single upward switch per recovery, not a ladder.
    probe_succeeded: bool,
    upswitch_streak: u32,
    resolution_change_count: u32,
    changes: Vec<ChangeRecord>,
}

impl AdaptationEngine {
    /// Starts a session from an accepted startup configuration at `t0`.
    pub fn new(
        initial: EncoderConfig,
        max_resolution: Resolution,
        t0: f64,
        config: AdaptationConfig,
    ) -> Result<Self, AdaptationError> {
        initial.validate()?;
        let hold = config.initial_hold_s;
        Ok(AdaptationEngine {
            config,
            max_resolution,
            phase: Phase::Starting,
            current: initial,
            phase_entered_at: t0,
            loss_free_since: t0,
            consecutive_lossy: 0,
            hold_s: hold,
            probe: None,
            probe_succeeded: false,
            upswitch_streak: 0,
            resolution_change_count: 0,
            changes: Vec::new(),
        })
    }

    pub fn current(&self) -> EncoderConfig {
        self.current
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn hold_s(&self) -> f64 {
        self.hold_s
    }

    pub fn resolution_change_count(&self) -> u32 {
        self.resolution_change_count
    }

    pub fn changes(&self) -> &[ChangeRecord] {
        &self.changes
    }

    pub fn time_in_phase(&self, t: f64) -> f64 {
        t - self.phase_entered_at
    }

    fn apply(&mut self, t: f64, new: EncoderConfig, reason: ChangeReason) {
        if new == self.current {
            return;
        }
        if new.resolution != self.current.resolution {
            self.resolution_change_count += 1;
        }
        self.changes.push(ChangeRecord { t, old: self.current, new, reason });
        self.current = new;
    }

    fn enter_phase(&mut self, phase: Phase, t: f64) {
        self.phase = phase;
        self.phase_entered_at = t;
    }

    /// The bitrate an upward probe to `resolution` tries: the headroom
    /// share of the current target, but at least the headroom share of
    /// the capacity that resolution is meant for, inside its band.
    fn probe_bitrate(&self, resolution: Resolution, target_rate_bps: f64) -> f64 {
        let (lo, hi) = bitrate_band(resolution);
        let tracked = self.config.headroom * target_rate_bps;
        let floor = self.config.headroom * recommended_capacity(resolution);
        tracked.max(floor).clamp(lo, hi)
    }

    fn lowest_config(&self) -> EncoderConfig {
        let (lo, _) = bitrate_band(Resolution::R720p);
        EncoderConfig {
            resolution: Resolution::R720p,
            encoder_bitrate_bps: lo,
            codec: self.current.codec,
        }
    }

    /// Feeds one per-second loss report. `target_rate_bps` is the rate
    /// controller's current transmission target. Returns the
    /// configuration in force afterwards.
    pub fn on_report(&mut self, loss_fraction: f64, target_rate_bps: f64, t: f64) -> EncoderConfig {
        let lossy = loss_fraction > self.config.loss_threshold;
        if lossy {
            self.consecutive_lossy += 1;
            self.loss_free_since = t;
        } else {
            self.consecutive_lossy = 0;
        }
        let streak = t - self.loss_free_since;

        match self.phase {
            Phase::Starting | Phase::Steady => {
                if self.consecutive_lossy >= self.config.consecutive_lossy_to_drop {
                    let low = self.lowest_config();
                    self.apply(t, low, ChangeReason::LossDownswitch);
                    self.enter_phase(Phase::Transient, t);
                    self.hold_s = self.config.initial_hold_s;
                    self.probe = None;
                    self.probe_succeeded = false;
                } else if self.phase == Phase::Starting && !lossy
                    && streak >= self.config.steady_after_s
                {
                    self.enter_phase(Phase::Steady, t);
                }
            }
            Phase::Transient => {
                if let Some((probe_start, fallback)) = self.probe {
                    if lossy && t - probe_start <= self.config.probe_window_s {
                        self.apply(t, fallback, ChangeReason::ProbeRevert);
                        self.hold_s = (self.hold_s * 2.0).min(self.config.max_hold_s);
                        self.probe = None;
                    } else if t - probe_start > self.config.probe_window_s {
                        // Survived the window; the probe config stands.
                        self.probe = None;
                        self.probe_succeeded = true;
                    }
                }
                if lossy
                    && self.probe.is_none()
                    && self.consecutive_lossy >= self.config.consecutive_lossy_to_drop
                {
                    // Loss at a supposedly viable configuration: back to
                    // the floor, keeping the backoff already accumulated.
                    self.apply(t, self.lowest_config(), ChangeReason::LossDownswitch);
                    self.probe_succeeded = false;
                } else if !lossy {
                    // Steady wins over a due probe on the same report.
                    if streak >= self.config.steady_after_s {
                        self.enter_phase(Phase::Steady, t);
                        self.probe = None;
                    } else if self.probe.is_none()
                        && !self.probe_succeeded
                        && streak >= self.hold_s
                        && rank(self.current.resolution) < rank(self.max_resolution)
                    {
                        if let Some(next) = self.current.resolution.step_up() {
                            let probe_cfg = EncoderConfig {
                                resolution: next,
                                encoder_bitrate_bps: self.probe_bitrate(next, target_rate_bps),
                                codec: self.current.codec,
                            };
                            self.probe = Some((t, self.current));
                            self.apply(t, probe_cfg, ChangeReason::ProbeUp);
                        }
                    }
                }
            }
        }
        self.current
    }

    /// Steady-phase rate tracking and resolution upswitch. Call once per
    /// second with the current target rate; ignored outside steady.
    pub fn on_capacity_increase(&mut self, target_rate_bps: f64, t: f64) -> EncoderConfig {
        // A pending lossy report freezes rate moves: cutting the encoder
        // here would mask a persistent overload from the two-consecutive
        // confirmation rule, and raising it mid-loss is plainly wrong.
        if self.phase != Phase::Steady || self.consecutive_lossy > 0 {
            return self.current;
        }
        let next_up = self.current.resolution.step_up().filter(|&r| {
            rank(r) <= rank(self.max_resolution)
        });
        if let Some(next) = next_up {
            let (next_lo, _) = bitrate_band(next);
            if target_rate_bps > self.config.upswitch_margin * next_lo {
                self.upswitch_streak += 1;
            } else {
                self.upswitch_streak = 0;
            }
            if self.upswitch_streak >= self.config.upswitch_consecutive_s {
                let (lo, hi) = bitrate_band(next);
                let new = EncoderConfig {
                    resolution: next,
                    encoder_bitrate_bps: (self.config.headroom * target_rate_bps).clamp(lo, hi),
                    codec: self.current.codec,
                };
                self.apply(t, new, ChangeReason::SteadyUpswitch);
                self.upswitch_streak = 0;
                return self.current;
            }
        }
        // Track the rate at the current resolution: down immediately, up
        // at a bounded pace.
        let (lo, hi) = bitrate_band(self.current.resolution);
        let step = (self.current.encoder_bitrate_bps * self.config.max_step_up_frac)
            .max(self.config.min_step_up_bps);
        let ceiling = self.current.encoder_bitrate_bps + step;
        let tracked = EncoderConfig {
            resolution: self.current.resolution,
            encoder_bitrate_bps: (self.config.headroom * target_rate_bps)
                .min(ceiling)
                .clamp(lo, hi),
            codec: self.current.codec,
        };
        self.apply(t, tracked, ChangeReason::BitrateTracking);
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> AdaptationConfig {
        AdaptationConfig::default()
    }

    fn accepted(capacity: f64, max: Resolution) -> EncoderConfig {
        match initial_config(capacity, max, VideoCodec::Vp9, &cfg()).unwrap() {
            StartupDecision::Accepted(c) => c,
            StartupDecision::SessionRefused => panic!("refused at {capacity}"),
        }
    }

    #[test]
    fn startup_policy_matches_capacity_bands() {
        for refuse in [5e6, 10e6, 1e6] {
            assert_eq!(
                initial_config(refuse, Resolution::R4k, VideoCodec::Vp9, &cfg()).unwrap(),
                StartupDecision::SessionRefused,
                "capacity {refuse}"
            );
        }

        let c = accepted(15e6, Resolution::R4k);
        assert_eq!(c.resolution, Resolution::R720p);
        assert_eq!(c.encoder_bitrate_bps, 0.85 * 15e6);

        let c = accepted(17.5e6, Resolution::R4k);
        assert_eq!(c.resolution, Resolution::R720p);
        assert_eq!(c.encoder_bitrate_bps, 14e6, "clamped to the 720p band max");

        let c = accepted(20e6, Resolution::R4k);
        assert_eq!(c.resolution, Resolution::R1080p);
        assert_eq!(c.encoder_bitrate_bps, 17e6, "sustains 1080p under a 20 Mbit/s limit");

        let c = accepted(30e6, Resolution::R4k);
        assert_eq!(c.resolution, Resolution::R1080p);

        let c = accepted(45e6, Resolution::R4k);
        assert_eq!(c.resolution, Resolution::R4k);
        assert_eq!(c.encoder_bitrate_bps, 0.85 * 45e6);

        // max_resolution clamps the pick.
        let c = accepted(45e6, Resolution::R1080p);
        assert_eq!(c.resolution, Resolution::R1080p);
        assert_eq!(c.encoder_bitrate_bps, 30e6);
        let c = accepted(45e6, Resolution::R720p);
        assert_eq!(c.resolution, Resolution::R720p);
        assert_eq!(c.encoder_bitrate_bps, 14e6);

        assert!(initial_config(f64::NAN, Resolution::R4k, VideoCodec::Vp9, &cfg()).is_err());
    }

    fn steady_engine(capacity: f64, max: Resolution) -> (AdaptationEngine, f64) {
        let mut e = AdaptationEngine::new(accepted(capacity, max), max, 0.0, cfg()).unwrap();
        let mut t = 0.0;
        for _ in 0..=60 {
            t += 1.0;
            e.on_report(0.0, capacity * 0.9, t);
        }
        assert_eq!(e.phase(), Phase::Steady);
        (e, t)
    }

    #[test]
    fn zero_loss_from_steady_never_changes_config() {
        let (mut e, mut t) = steady_engine(20e6, Resolution::R4k);
        let before = e.current();
        for _ in 0..100 {
            t += 1.0;
            e.on_report(0.0, 18e6, t);
        }
        assert_eq!(e.current(), before);
        assert!(e.changes().is_empty());
    }

    #[test]
    fn two_consecutive_lossy_reports_drop_to_the_floor() {
        let (mut e, mut t) = steady_engine(30e6, Resolution::R4k);
        t += 1.0;
        e.on_report(0.05, 20e6, t);
        assert_eq!(e.phase(), Phase::Steady, "one lossy report is not enough");
        // A clean report in between resets the count.
        t += 1.0;
        e.on_report(0.0, 20e6, t);
        t += 1.0;
        e.on_report(0.05, 20e6, t);
        assert_eq!(e.phase(), Phase::Steady);

        t += 1.0;
        e.on_report(0.05, 20e6, t);
        assert_eq!(e.phase(), Phase::Transient);
        assert_eq!(e.current().resolution, Resolution::R720p);
        assert_eq!(e.current().encoder_bitrate_bps, 4e6);
        assert_eq!(e.resolution_change_count(), 1);
        assert_eq!(e.changes().last().unwrap().reason, ChangeReason::LossDownswitch);
    }

    #[test]
    fn probe_rises_after_the_hold_and_reverts_on_loss() {
        let (mut e, mut t) = steady_engine(30e6, Resolution::R1080p);
        for _ in 0..2 {
            t += 1.0;
            e.on_report(0.05, 20e6, t);
        }
        let drop_t = t;
        assert_eq!(e.current().resolution, Resolution::R720p);

        // Loss-free reports until the 10 s hold elapses, then the probe.
        let mut probed_at = None;
        for _ in 0..12 {
            t += 1.0;
            e.on_report(0.0, 14e6, t);
            if e.current().resolution == Resolution::R1080p && probed_at.is_none() {
                probed_at = Some(t);
            }
        }
        let probed_at = probed_at.expect("probe fired");
        assert!((probed_at - drop_t - 11.0).abs() <= 1.0, "hold of ~10 s, got {}", probed_at - drop_t);
        // Probe bitrate floors at 85% of the capacity 1080p is meant for,
        // not at 85% of the (much lower) current target.
        assert_eq!(e.current().encoder_bitrate_bps, 0.85 * 28e6);
        assert_eq!(e.changes().last().unwrap().reason, ChangeReason::ProbeUp);

        // Loss inside the probe window reverts and doubles the hold.
        t += 2.0;
        e.on_report(0.2, 14e6, t);
        assert_eq!(e.current().resolution, Resolution::R720p);
        assert_eq!(e.current().encoder_bitrate_bps, 4e6);
        assert_eq!(e.changes().last().unwrap().reason, ChangeReason::ProbeRevert);
        assert_eq!(e.hold_s(), 20.0);
        assert_eq!(e.phase(), Phase::Transient);
    }

    #[test]
    fn surviving_probe_stands_and_streak_reaches_steady() {
        let (mut e, mut t) = steady_engine(30e6, Resolution::R1080p);
        for _ in 0..2 {
            t += 1.0;
            e.on_report(0.05, 25e6, t);
        }
        let loss_end = t;
        // 60 loss-free seconds: probe at ~10 s survives; steady at 60 s.
        let mut went_steady_at = None;
        for _ in 0..70 {
            t += 1.0;
            e.on_report(0.0, 25e6, t);
            if e.phase() == Phase::Steady && went_steady_at.is_none() {
                went_steady_at = Some(t);
            }
        }
        assert_eq!(e.current().resolution, Resolution::R1080p);
        let steady_t = went_steady_at.expect("reached steady");
        assert!(
            (steady_t - loss_end - 60.0).abs() <= 1.0,
            "steady after ~60 loss-free seconds, got {}",
            steady_t - loss_end
        );
        // The successful probe did not reset the loss-free streak.
        assert_eq!(e.resolution_change_count(), 2, "down then up");
    }

    #[test]
    fn a_surviving_probe_ends_probing_for_the_transient() {
        // Room above 1080p exists (max 4K), but after the successful
        // 720p -> 1080p probe the engine must coast into steady without
        // trying 4K.
        let (mut e, mut t) = steady_engine(30e6, Resolution::R4k);
        for _ in 0..2 {
            t += 1.0;
            e.on_report(0.2, 25e6, t);
        }
        assert_eq!(e.current().resolution, Resolution::R720p);
        for _ in 0..70 {
            t += 1.0;
            e.on_report(0.0, 25e6, t);
            assert_ne!(e.current().resolution, Resolution::R4k, "no second probe");
        }
        assert_eq!(e.phase(), Phase::Steady);
        assert_eq!(e.current().resolution, Resolution::R1080p);
        assert_eq!(e.resolution_change_count(), 2, "down then up, nothing else");
    }

    #[test]
    fn failed_probes_double_the_hold_up_to_the_cap_then_steady_wins() {
        let (mut e, mut t) = steady_engine(30e6, Resolution::R1080p);
        for _ in 0..2 {
            t += 1.0;
            e.on_report(0.05, 12e6, t);
        }
        // Fail every probe: lossy exactly when probing, clean otherwise.
        let mut holds = vec![e.hold_s()];
        let mut steady_at = None;
        for _ in 0..400 {
            t += 1.0;
            let loss = if e.current().resolution != Resolution::R720p { 0.3 } else { 0.0 };
            e.on_report(loss, 12e6, t);
            if holds.last() != Some(&e.hold_s()) {
                holds.push(e.hold_s());
            }
            if e.phase() == Phase::Steady {
                steady_at = Some(t);
                break;
            }
        }
        assert_eq!(holds, vec![10.0, 20.0, 40.0, 60.0]);
        assert!(steady_at.is_some(), "a capped hold still reaches steady");
        assert_eq!(e.current().resolution, Resolution::R720p);
        assert_eq!(e.phase(), Phase::Steady);
    }

    #[test]
    fn steady_upswitch_needs_five_consecutive_seconds_above_the_margin() {
        let (mut e, mut t) = steady_engine(15e6, Resolution::R4k);
        assert_eq!(e.current().resolution, Resolution::R720p);

        // 4 high samples, an interruption, then 5 high samples.
        for _ in 0..4 {
            t += 1.0;
            e.on_capacity_increase(21e6, t);
        }
        assert_eq!(e.current().resolution, Resolution::R720p);
        t += 1.0;
        e.on_capacity_increase(11e6, t);
        for _ in 0..4 {
            t += 1.0;
            e.on_capacity_increase(21e6, t);
            assert_eq!(e.current().resolution, Resolution::R720p);
        }
        t += 1.0;
        e.on_capacity_increase(21e6, t);
        assert_eq!(e.current().resolution, Resolution::R1080p);
        assert_eq!(e.current().encoder_bitrate_bps, 0.85 * 21e6);
        assert_eq!(e.changes().last().unwrap().reason, ChangeReason::SteadyUpswitch);
    }

    #[test]
    fn steady_tracking_clamps_to_the_band() {
        let (mut e, mut t) = steady_engine(25e6, Resolution::R1080p);
        assert_eq!(e.current().resolution, Resolution::R1080p);

        t += 1.0;
        e.on_capacity_increase(24e6, t);
        assert_eq!(e.current().encoder_bitrate_bps, 0.85 * 24e6, "cuts apply at once");

        // Climbing is rate-limited to 10% per call, then clamps at the
        // band max.
        t += 1.0;
        e.on_capacity_increase(50e6, t);
        assert_eq!(e.current().encoder_bitrate_bps, 0.85 * 24e6 * 1.10);
        for _ in 0..5 {
            t += 1.0;
            e.on_capacity_increase(50e6, t);
        }
        assert_eq!(e.current().encoder_bitrate_bps, 30e6, "band max");

        t += 1.0;
        e.on_capacity_increase(5e6, t);
        assert_eq!(e.current().encoder_bitrate_bps, 10e6, "band min");
        assert_eq!(e.current().resolution, Resolution::R1080p, "tracking never switches");
    }

    #[test]
    fn a_pending_lossy_report_freezes_rate_tracking() {
        let (mut e, mut t) = steady_engine(30e6, Resolution::R1080p);
        let before = e.current();
        t += 1.0;
        e.on_report(0.3, 12e6, t);
        assert_eq!(e.phase(), Phase::Steady, "one lossy report is not confirmation");
        e.on_capacity_increase(12e6, t);
        assert_eq!(e.current(), before, "no cut while the overload awaits confirmation");

        // A clean report unfreezes tracking.
        t += 1.0;
        e.on_report(0.0, 12e6, t);
        e.on_capacity_increase(12e6, t);
        assert_eq!(e.current().encoder_bitrate_bps, 0.85 * 12e6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Refusal happens exactly at or below the threshold.
        #[test]
        fn refusal_boundary(capacity in 1e5f64..60e6) {
            let d = initial_config(capacity, Resolution::R4k, VideoCodec::Vp9, &cfg()).unwrap();
            if capacity <= 10e6 {
                prop_assert_eq!(d, StartupDecision::SessionRefused);
            } else {
                prop_assert!(matches!(d, StartupDecision::Accepted(_)));
                if let StartupDecision::Accepted(c) = d {
                    prop_assert!(c.validate().is_ok());
                }
            }
        }

        /// Any start on a constant link above 12 Mbit/s converges to
        /// steady within 300 reported seconds. Loss appears whenever the
        /// encoder rate exceeds the true capacity.
        #[test]
        fn converges_to_steady_within_300_s(
            true_capacity in 12.1e6f64..50e6,
            measured in 10.1e6f64..50e6,
            max_res in prop::sample::select(vec![
                Resolution::R720p,
                Resolution::R1080p,
                Resolution::R4k,
            ]),
        ) {
            let start = match initial_config(measured, max_res, VideoCodec::Vp9, &cfg()).unwrap() {
                StartupDecision::Accepted(c) => c,
                StartupDecision::SessionRefused => unreachable!("measured > 10e6"),
            };
            let mut e = AdaptationEngine::new(start, max_res, 0.0, cfg()).unwrap();
            let mut steady = false;
            for s in 1..=300u32 {
                let t = s as f64;
                let loss =
                    if e.current().encoder_bitrate_bps > true_capacity { 0.2 } else { 0.0 };
                let target = 0.9 * true_capacity;
                e.on_report(loss, target, t);
                if e.phase() == Phase::Steady {
                    steady = true;
                    break;
                }
            }
            prop_assert!(steady, "no steady phase within 300 s");
            prop_assert!(e.current().encoder_bitrate_bps <= true_capacity.max(4e6));
        }
    }
}
