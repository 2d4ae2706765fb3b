//! Dual-rate congestion controller: a receiver-side delay-based rate `Ar`
//! driven by per-frame queuing-gradient signals, and a sender-side
//! loss-based rate `As`. The sender transmits at `min(Ar, As)`; the
//! receiver notifies the sender on a significant change or at least once
//! per second.

use thiserror::Error;

/// Controller constants. The multiplicative steps, thresholds, and bounds
/// are fixed defaults of the design; every one can be overridden.
#[derive(Debug, Clone)]
pub struct RateControlConfig {
    /// EWMA weight of the newest queuing-gradient sample.
    pub gradient_alpha: f64,
    /// Smoothed gradient above +this (seconds) signals overuse, below
    /// -this underuse.
    pub overuse_threshold_s: f64,
    /// Multiplicative increase of Ar per normal/underuse sample.
    pub ar_increase: f64,
    /// Ar never exceeds this multiple of the measured receive rate.
    pub ar_receive_cap: f64,
    /// On overuse Ar falls to this fraction of the receive rate.
    pub ar_overuse_beta: f64,
    /// Receive-rate measurement window, seconds.
    pub receive_window_s: f64,
    /// Loss fraction below which As increases...
    pub loss_low: f64,
    /// ...and above which As decreases.
    pub loss_high: f64,
    /// Multiplicative increase of As per low-loss report.
    pub as_increase: f64,
    /// Bounds on As, bit/s.
    pub as_min: f64,
    pub as_max: f64,
    /// Notify on a relative rate change above this, or after
    /// `notify_interval_s` regardless.
    pub notify_delta: f64,
    pub notify_interval_s: f64,
}

impl Default for RateControlConfig {
    fn default() -> Self {
        RateControlConfig {
            gradient_alpha: 0.1,
            overuse_threshold_s: 1e-3,
            ar_increase: 1.05,
            ar_receive_cap: 1.5,
            ar_overuse_beta: 0.85,
            receive_window_s: 0.5,
            loss_low: 0.02,
            loss_high: 0.1,
            as_increase: 1.05,
            as_min: 1e6,
            as_max: 45e6,
            notify_delta: 0.03,
            notify_interval_s: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum RateControlError {
    #[error("loss fraction must be within [0, 1], got {0}")]
    BadLossFraction(f64),
    #[error("{name} must be positive and finite, got {value}")]
    BadRate { name: &'static str, value: f64 },
}

/// Network state inferred from the delay gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OveruseSignal {
    Underuse,
    Normal,
    Overuse,
}

/// Transmit/receive timings of one video frame: how long the sender spent
/// emitting it and how long its packets took to arrive.
#[derive(Debug, Clone, Copy)]
pub struct FrameTimingSample {
    pub send_duration_s: f64,
    pub recv_duration_s: f64,
}

/// Receiver-side delay-based estimator holding Ar.
#[derive(Debug, Clone)]
pub struct DelayEstimator {
    config: RateControlConfig,
    ar_bps: f64,
    smoothed_gradient_s: f64,
    signal: OveruseSignal,
    /// (arrival time, bytes) of received packets inside the trailing window.
    window: std::collections::VecDeque<(f64, u32)>,
    window_bytes: u64,
}

impl DelayEstimator {
    /// `initial_ar_bps` is normally the encoder bitrate chosen at startup.
    pub fn new(initial_ar_bps: f64, config: RateControlConfig) -> Result<Self, RateControlError> {
        if !(initial_ar_bps.is_finite() && initial_ar_bps > 0.0) {
            return Err(RateControlError::BadRate { name: "initial Ar", value: initial_ar_bps });
        }
        Ok(DelayEstimator {
            config,
            ar_bps: initial_ar_bps,
            smoothed_gradient_s: 0.0,
            signal: OveruseSignal::Normal,
            window: std::collections::VecDeque::new(),
            window_bytes: 0,
        })
    }

    pub fn ar_bps(&self) -> f64 {
        self.ar_bps
    }

    pub fn signal(&self) -> OveruseSignal {
        self.signal
    }

    /// Records bytes arriving at the receiver at time `t`, and expires
    /// samples that left the trailing window.
    pub fn record_received(&mut self, bytes: u32, t: f64) {
        self.window.push_back((t, bytes));
        self.window_bytes += bytes as u64;
        let cutoff = t - self.config.receive_window_s;
        while let Some(&(t0, b0)) = self.window.front() {
            if t0 >= cutoff {
                break;
            }
            self.window.pop_front();
            self.window_bytes -= b0 as u64;
        }
    }

    /// Receive rate over the trailing window ending at the newest sample,
    /// or `None` before any packet arrived.
    pub fn receive_rate_bps(&self) -> Option<f64> {
        if self.window.is_empty() {
            return None;
        }
        Some(self.window_bytes as f64 * 8.0 / self.config.receive_window_s)
    }

    /// Feeds one frame timing sample: smooths the queuing gradient
    /// (receive duration minus send duration), classifies the signal, and
    /// moves Ar. Returns the new Ar.
    ///
    /// Overuse pulls Ar to `beta ×` the measured receive rate; otherwise Ar
    /// grows multiplicatively, capped at `cap ×` the receive rate. Without
    /// any receive-rate measurement Ar is left unchanged.
    pub fn update_delay_estimate(&mut self, sample: FrameTimingSample) -> f64 {
        debug_assert!(sample.send_duration_s >= 0.0 && sample.recv_duration_s >= 0.0);
        let gradient = sample.recv_duration_s - sample.send_duration_s;
        let a = self.config.gradient_alpha;
        self.smoothed_gradient_s = (1.0 - a) * self.smoothed_gradient_s + a * gradient;

        self.signal = if self.smoothed_gradient_s > self.config.overuse_threshold_s {
            OveruseSignal::Overuse
        } else if self.smoothed_gradient_s < -self.config.overuse_threshold_s {
            OveruseSignal::Underuse
        } else {
            OveruseSignal::Normal
        };

        if let Some(rate) = self.receive_rate_bps() {
            self.ar_bps = match self.signal {
                OveruseSignal::Overuse => self.config.ar_overuse_beta * rate,
                OveruseSignal::Normal | OveruseSignal::Underuse => {
                    (self.config.ar_increase * self.ar_bps)
                        .min(self.config.ar_receive_cap * rate)
                }
            };
        }
        self.ar_bps
    }
}

/// Sender-side loss-based estimator holding As.
#[derive(Debug, Clone)]
pub struct LossController {
    config: RateControlConfig,
    as_bps: f64,
}

impl LossController {
    /// As starts at its upper bound.
    pub fn new(config: RateControlConfig) -> Self {
        LossController { as_bps: config.as_max, config }
    }

    pub fn with_rate(as_bps: f64, config: RateControlConfig) -> Result<Self, RateControlError> {
        if !(as_bps.is_finite() && as_bps > 0.0) {
            return Err(RateControlError::BadRate { name: "initial As", value: as_bps });
        }
        Ok(LossController { as_bps: as_bps.clamp(config.as_min, config.as_max), config })
    }

    pub fn as_bps(&self) -> f64 {
        self.as_bps
    }

    /// Applies one loss report: low loss grows As multiplicatively, high
    /// loss shrinks it by half the loss fraction, in between holds. The
    /// result is clamped to the configured bounds. Returns the new As.
    pub fn update_loss_rate(&mut self, loss_fraction: f64) -> Result<f64, RateControlError> {
        if !(0.0..=1.0).contains(&loss_fraction) || loss_fraction.is_nan() {
            return Err(RateControlError::BadLossFraction(loss_fraction));
        }
        if loss_fraction < self.config.loss_low {
            self.as_bps *= self.config.as_increase;
        } else if loss_fraction > self.config.loss_high {
            self.as_bps *= 1.0 - 0.5 * loss_fraction;
        }
        self.as_bps = self.as_bps.clamp(self.config.as_min, self.config.as_max);
        Ok(self.as_bps)
    }
}

/// The transmission rate: the lower of the delay-based and loss-based
/// estimates.
pub fn target_rate(ar_bps: f64, as_bps: f64) -> f64 {
    ar_bps.min(as_bps)
}

/// Whether the receiver should notify the sender: either enough time has
/// passed since the last notification, or the rate moved by more than the
/// relative threshold (3% by default).
pub fn should_notify(prev_ar_bps: f64, new_ar_bps: f64, elapsed_s: f64) -> bool {
    should_notify_with(prev_ar_bps, new_ar_bps, elapsed_s, &RateControlConfig::default())
}

pub fn should_notify_with(
    prev_ar_bps: f64,
    new_ar_bps: f64,
    elapsed_s: f64,
    config: &RateControlConfig,
) -> bool {
    debug_assert!(prev_ar_bps > 0.0);
    elapsed_s >= config.notify_interval_s
        || (new_ar_bps - prev_ar_bps).abs() / prev_ar_bps > config.notify_delta
}

/// Receiver-to-sender notification payload.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackMsg {
    pub ar_bps: f64,
    /// Fraction of media packets lost since the previous notification.
    pub loss_fraction: f64,
    pub timestamp_s: f64,
}

impl FeedbackMsg {
    pub fn new(ar_bps: f64, loss_fraction: f64, timestamp_s: f64) -> Result<Self, RateControlError> {
        if !(0.0..=1.0).contains(&loss_fraction) || loss_fraction.is_nan() {
            return Err(RateControlError::BadLossFraction(loss_fraction));
        }
        Ok(FeedbackMsg { ar_bps, loss_fraction, timestamp_s })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn estimator(ar: f64) -> DelayEstimator {
        DelayEstimator::new(ar, RateControlConfig::default()).unwrap()
    }

    /// Fills the receive window so the measured rate is `rate_bps`.
    fn feed_rate(e: &mut DelayEstimator, rate_bps: f64, until: f64) {
        let step = 0.01;
        let bytes = (rate_bps * step / 8.0) as u32;
        let mut t = until - 0.5;
        while t <= until {
            e.record_received(bytes, t);
            t += step;
        }
    }

    #[test]
    fn zero_gradient_grows_ar_up_to_receive_cap() {
        let mut e = estimator(10e6);
        feed_rate(&mut e, 12e6, 1.0);
        let sample = FrameTimingSample { send_duration_s: 0.010, recv_duration_s: 0.010 };
        let mut prev = e.ar_bps();
        for _ in 0..40 {
            let ar = e.update_delay_estimate(sample);
            assert_eq!(e.signal(), OveruseSignal::Normal);
            assert!(ar >= prev);
            prev = ar;
        }
        let rate = e.receive_rate_bps().unwrap();
        assert!((e.ar_bps() - 1.5 * rate).abs() < 1e-6, "Ar should pin at 1.5x receive rate");
    }

    #[test]
    fn persistent_positive_gradient_signals_overuse_and_cuts_ar() {
        let mut e = estimator(20e6);
        feed_rate(&mut e, 15e6, 1.0);
        // Receive duration persistently 3 ms above send duration: the
        // smoothed gradient 3(1 - 0.9^n) ms crosses the 1 ms threshold at
        // the fourth sample.
        let sample = FrameTimingSample { send_duration_s: 0.010, recv_duration_s: 0.013 };
        for i in 1..=20 {
            e.update_delay_estimate(sample);
            if i <= 3 {
                assert_eq!(e.signal(), OveruseSignal::Normal, "sample {i}");
            } else {
                assert_eq!(e.signal(), OveruseSignal::Overuse, "sample {i}");
            }
        }
        let rate = e.receive_rate_bps().unwrap();
        assert_eq!(e.ar_bps(), 0.85 * rate);
    }

    #[test]
    fn negative_gradient_signals_underuse_and_still_grows() {
        let mut e = estimator(10e6);
        feed_rate(&mut e, 20e6, 1.0);
        let sample = FrameTimingSample { send_duration_s: 0.013, recv_duration_s: 0.010 };
        for _ in 0..30 {
            e.update_delay_estimate(sample);
        }
        assert_eq!(e.signal(), OveruseSignal::Underuse);
        assert!(e.ar_bps() > 10e6);
    }

    #[test]
    fn ar_holds_without_receive_measurements() {
        let mut e = estimator(10e6);
        let sample = FrameTimingSample { send_duration_s: 0.01, recv_duration_s: 0.02 };
        e.update_delay_estimate(sample);
        assert_eq!(e.ar_bps(), 10e6);
        assert_eq!(e.receive_rate_bps(), None);
    }

    #[test]
    fn loss_band_behavior_is_exact() {
        let config = RateControlConfig::default();

        // Mid-band loss holds As exactly.
        let mut c = LossController::with_rate(10e6, config.clone()).unwrap();
        assert_eq!(c.update_loss_rate(0.05).unwrap(), 10e6);

        // Zero loss multiplies by exactly 1.05.
        let mut c = LossController::with_rate(10e6, config.clone()).unwrap();
        assert_eq!(c.update_loss_rate(0.0).unwrap(), 10e6 * 1.05);

        // Loss 0.2 maps 10 Mbit/s to exactly 9.0 Mbit/s.
        let mut c = LossController::with_rate(10e6, config.clone()).unwrap();
        assert_eq!(c.update_loss_rate(0.2).unwrap(), 9.0e6);

        // Band edges belong to the hold region.
        let mut c = LossController::with_rate(10e6, config.clone()).unwrap();
        assert_eq!(c.update_loss_rate(0.02).unwrap(), 10e6);
        assert_eq!(c.update_loss_rate(0.1).unwrap(), 10e6);

        // Growth clamps at the upper bound.
        let mut c = LossController::with_rate(44.9e6, config.clone()).unwrap();
        assert_eq!(c.update_loss_rate(0.0).unwrap(), 45e6);

        // Collapse clamps at the lower bound.
        let mut c = LossController::with_rate(1.1e6, config).unwrap();
        for _ in 0..20 {
            c.update_loss_rate(1.0).unwrap();
        }
        assert_eq!(c.as_bps(), 1e6);
    }

    #[test]
    fn loss_fraction_out_of_range_is_an_error() {
        let mut c = LossController::new(RateControlConfig::default());
        assert!(matches!(
            c.update_loss_rate(-0.01),
            Err(RateControlError::BadLossFraction(_))
        ));
        assert!(matches!(c.update_loss_rate(1.5), Err(RateControlError::BadLossFraction(_))));
        assert!(matches!(
            c.update_loss_rate(f64::NAN),
            Err(RateControlError::BadLossFraction(_))
        ));
        assert!(FeedbackMsg::new(1e6, 1.2, 0.0).is_err());
    }

    #[test]
    fn target_rate_is_the_exact_minimum() {
        assert_eq!(target_rate(28e6, 30e6), 28e6);
        assert_eq!(target_rate(30e6, 28e6), 28e6);
        assert_eq!(target_rate(17e6, 17e6), 17e6);
    }

    #[test]
    fn notification_rule_matches_thresholds() {
        assert!(!should_notify(10e6, 10.2e6, 0.2));
        assert!(should_notify(10e6, 10.4e6, 0.2));
        assert!(should_notify(10e6, 10e6, 1.0));
        assert!(should_notify(10e6, 9.6e6, 0.2));
    }

    /// Minimal closed loop: each frame is sent as a burst spanning 77% of
    /// the frame period (the group-of-groups shape of the traffic model)
    /// into a fluid bottleneck of capacity C with a finite tail-drop
    /// queue. Returns (average target, average Ar) after a 60 s warmup;
    /// the long-run average target must settle into [0.6 C, 1.0 C].
    fn closed_loop_average(capacity_mbps: f64) -> (f64, f64) {
        let c_bps = capacity_mbps * 1e6;
        let config = RateControlConfig::default();
        // Ar starts where a startup policy with 15% headroom would put the
        // encoder; As starts at its upper bound.
        let mut delay = DelayEstimator::new(0.85 * c_bps, config.clone()).unwrap();
        let mut loss = LossController::new(config);
        let mut target = target_rate(delay.ar_bps(), loss.as_bps());

        let period = 1.0 / 60.0;
        let send_duration = 0.77 * period;
        let queue_cap = 64_000.0;
        let mut backlog = 0.0f64;
        let mut sent = 0.0f64;
        let mut dropped = 0.0f64;
        let mut target_sum = 0.0f64;
        let mut ar_sum = 0.0f64;
        let mut samples = 0u32;

        let total_s = 120.0;
        let warmup_s = 60.0;
        let frames = (total_s / period) as u32;
        for i in 0..frames {
            let t_end = (i + 1) as f64 * period;
            let frame_bytes = target * period / 8.0;
            sent += frame_bytes;
            let admitted = (queue_cap - backlog).min(frame_bytes).max(0.0);
            dropped += frame_bytes - admitted;

            // First byte reaches the receiver once the prior backlog
            // drains; the last byte once backlog + frame are served, but
            // never before the sender finishes the burst.
            let head_delay = backlog * 8.0 / c_bps;
            let tail = (send_duration).max((backlog + admitted) * 8.0 / c_bps);
            let recv_duration = tail - head_delay;

            let served = (c_bps * period / 8.0).min(backlog + admitted);
            backlog = backlog + admitted - served;
            delay.record_received(served as u32, t_end);
            delay.update_delay_estimate(FrameTimingSample {
                send_duration_s: send_duration,
                recv_duration_s: recv_duration,
            });

            // One loss report per second.
            if i % 60 == 59 {
                let p = if sent > 0.0 { (dropped / sent).clamp(0.0, 1.0) } else { 0.0 };
                loss.update_loss_rate(p).unwrap();
                sent = 0.0;
                dropped = 0.0;
            }
            target = target_rate(delay.ar_bps(), loss.as_bps());
            if t_end > warmup_s {
                target_sum += target;
                ar_sum += delay.ar_bps();
                samples += 1;
            }
        }
        (target_sum / samples as f64, ar_sum / samples as f64)
    }

    #[test]
    fn closed_loop_settles_below_capacity_at_20_mbps() {
        let (avg_target, avg_ar) = closed_loop_average(20.0);
        assert!(
            avg_target >= 0.6 * 20e6 && avg_target <= 20e6,
            "average target {avg_target}"
        );
        assert!((15e6..=20e6).contains(&avg_ar), "steady Ar {avg_ar}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn closed_loop_band_holds_for_any_capacity(c in 10.0f64..50.0) {
            let (avg, _) = closed_loop_average(c);
            prop_assert!(avg >= 0.6 * c * 1e6 && avg <= c * 1e6,
                "capacity {c} Mbit/s, average target {avg}");
        }

        #[test]
        fn loss_update_is_monotone(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let mut a = LossController::with_rate(10e6, RateControlConfig::default()).unwrap();
            let mut b = LossController::with_rate(10e6, RateControlConfig::default()).unwrap();
            let ra = a.update_loss_rate(lo).unwrap();
            let rb = b.update_loss_rate(hi).unwrap();
            prop_assert!(ra >= rb, "p {lo} -> {ra}, p {hi} -> {rb}");
        }

        #[test]
        fn target_never_exceeds_either_input(ar in 1e5f64..1e8, as_ in 1e5f64..1e8) {
            let t = target_rate(ar, as_);
            prop_assert!(t <= ar && t <= as_);
        }
    }
}
