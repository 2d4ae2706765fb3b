//! Bottleneck link emulation: a token-bucket rate limiter with a bounded
//! FIFO queue and fixed one-way delay, plus a piecewise-constant capacity
//! schedule for sudden rate changes, and an RTT probe that measures the
//! queuing both directions the way a keepalive request/response pair does.
//!
//! The bucket is a fluid model: credit accrues at the configured rate only
//! while the queue is empty (capped at `burst` bytes), and a backlog
//! drains continuously at the configured rate. Departure times are exact,
//! including across schedule boundaries.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("capacity schedule is empty")]
    EmptySchedule,
    #[error("schedule times must be strictly increasing: point {index} at {t} s")]
    NonIncreasingSchedule { index: usize, t: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    BadValue { name: &'static str, value: f64 },
    #[error("no capacity defined at {t} s (schedule starts at {start} s)")]
    BeforeSchedule { t: f64, start: f64 },
}

/// Bottleneck parameters: when each capacity takes effect, the propagation
/// delay added after a packet departs the queue, and the shaper's queue
/// and burst-credit sizes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkConfig {
    /// (time s, rate bit/s), piecewise constant from each point on.
    pub capacity_schedule: Vec<(f64, f64)>,
    #[serde(default = "default_one_way_delay_ms")]
    pub one_way_delay_ms: f64,
    #[serde(default = "default_queue_cap_bytes")]
    pub queue_cap_bytes: u32,
    #[serde(default = "default_burst_bytes")]
    pub burst_bytes: u32,
}

fn default_one_way_delay_ms() -> f64 {
    5.0
}

fn default_queue_cap_bytes() -> u32 {
    64_000
}

fn default_burst_bytes() -> u32 {
    10_000
}

impl LinkConfig {
    pub fn constant(rate_bps: f64) -> Self {
        LinkConfig {
            capacity_schedule: vec![(0.0, rate_bps)],
            one_way_delay_ms: default_one_way_delay_ms(),
            queue_cap_bytes: default_queue_cap_bytes(),
            burst_bytes: default_burst_bytes(),
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if self.capacity_schedule.is_empty() {
            return Err(LinkError::EmptySchedule);
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, &(t, rate)) in self.capacity_schedule.iter().enumerate() {
            if !t.is_finite() || t <= prev {
                return Err(LinkError::NonIncreasingSchedule { index: i, t });
            }
            prev = t;
            if !(rate.is_finite() && rate > 0.0) {
                return Err(LinkError::BadValue { name: "capacity", value: rate });
            }
        }
        if !(self.one_way_delay_ms.is_finite() && self.one_way_delay_ms >= 0.0) {
            return Err(LinkError::BadValue {
                name: "one-way delay",
                value: self.one_way_delay_ms,
            });
        }
        if self.queue_cap_bytes == 0 {
            return Err(LinkError::BadValue { name: "queue capacity", value: 0.0 });
        }
        if self.burst_bytes == 0 {
            return Err(LinkError::BadValue { name: "burst", value: 0.0 });
        }
        Ok(())
    }

    /// The capacity in force at time `t`.
    pub fn current_rate(&self, t: f64) -> Result<f64, LinkError> {
        let first = self.capacity_schedule.first().ok_or(LinkError::EmptySchedule)?;
        if t < first.0 {
            return Err(LinkError::BeforeSchedule { t, start: first.0 });
        }
        let mut rate = first.1;
        for &(start, r) in &self.capacity_schedule {
            if start <= t {
                rate = r;
            } else {
                break;
            }
        }
        Ok(rate)
    }
}

/// Shaper outcome for one packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdmitOutcome {
    Delivered {
        /// When the packet leaves the queue.
        departure_s: f64,
        /// Departure plus the one-way propagation delay.
        arrival_s: f64,
    },
    Dropped,
}

impl AdmitOutcome {
    pub fn arrival(&self) -> Option<f64> {
        match *self {
            AdmitOutcome::Delivered { arrival_s, .. } => Some(arrival_s),
            AdmitOutcome::Dropped => None,
        }
    }
}

/// Token-bucket shaper at a fixed rate. The rate is swapped by the owning
/// [`Link`] exactly at schedule boundaries; departure times across a
/// boundary are computed by the link, which knows the upcoming schedule.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate_bps: f64,
    burst_bytes: f64,
    queue_cap_bytes: f64,
    tokens: f64,
    backlog_bytes: f64,
    last_update_s: f64,
}

impl TokenBucket {
    /// Starts full of credit at `t0`.
    pub fn new(rate_bps: f64, burst_bytes: u32, queue_cap_bytes: u32, t0: f64) -> Self {
        TokenBucket {
            rate_bps,
            burst_bytes: burst_bytes as f64,
            queue_cap_bytes: queue_cap_bytes as f64,
            tokens: burst_bytes as f64,
            backlog_bytes: 0.0,
            last_update_s: t0,
        }
    }

    pub fn rate_bps(&self) -> f64 {
        self.rate_bps
    }

    pub fn backlog_bytes(&self) -> f64 {
        self.backlog_bytes
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    /// Changes the service rate from time `t` on; service before `t` is
    /// settled at the old rate first.
    pub fn set_rate(&mut self, rate_bps: f64, t: f64) {
        self.advance(t);
        self.rate_bps = rate_bps;
    }

    /// Settles service up to time `t`: drains backlog at the rate, then
    /// accrues idle credit capped at the burst size.
    pub fn advance(&mut self, t: f64) {
        if t <= self.last_update_s {
            return;
        }
        let capacity = self.tokens + self.rate_bps * (t - self.last_update_s) / 8.0;
        let drained = capacity.min(self.backlog_bytes);
        self.backlog_bytes -= drained;
        self.tokens = if self.backlog_bytes > 0.0 {
            0.0
        } else {
            (capacity - drained).min(self.burst_bytes)
        };
        self.last_update_s = t;
    }

    /// Service the queue still owes before a newly arriving packet of
    /// `size` would finish departing, in bytes beyond available credit.
    fn service_needed(&self, size: u32) -> f64 {
        (self.backlog_bytes + size as f64 - self.tokens).max(0.0)
    }

    /// Accepts or drops a packet arriving at `t`, assuming the current
    /// rate stays in force; the departure honors FIFO order.
    pub fn admit(&mut self, size: u32, t: f64) -> AdmitOutcome {
        self.advance(t);
        let t = t.max(self.last_update_s);
        if self.backlog_bytes + size as f64 > self.queue_cap_bytes {
            return AdmitOutcome::Dropped;
        }
        let departure_s = t + self.service_needed(size) * 8.0 / self.rate_bps;
        self.backlog_bytes += size as f64;
        AdmitOutcome::Delivered { departure_s, arrival_s: departure_s }
    }
}

/// A symmetric bottleneck: one shaped queue per direction sharing the
/// capacity schedule, plus the propagation delay.
#[derive(Debug, Clone)]
pub struct Link {
    config: LinkConfig,
    downlink: TokenBucket,
    uplink: TokenBucket,
    schedule_idx: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum LinkDirection {
    Downlink,
    Uplink,
}

impl Link {
    pub fn new(config: LinkConfig) -> Result<Self, LinkError> {
        config.validate()?;
        let (t0, rate) = config.capacity_schedule[0];
        Ok(Link {
            downlink: TokenBucket::new(rate, config.burst_bytes, config.queue_cap_bytes, t0),
            uplink: TokenBucket::new(rate, config.burst_bytes, config.queue_cap_bytes, t0),
            config,
            schedule_idx: 0,
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn one_way_delay_s(&self) -> f64 {
        self.config.one_way_delay_ms / 1e3
    }

    pub fn queue_depth_bytes(&self, dir: LinkDirection) -> f64 {
        match dir {
            LinkDirection::Downlink => self.downlink.backlog_bytes(),
            LinkDirection::Uplink => self.uplink.backlog_bytes(),
        }
    }

    /// Applies schedule boundaries at or before `t` and settles both
    /// queues up to `t`.
    pub fn sync(&mut self, t: f64) {
        while self.schedule_idx + 1 < self.config.capacity_schedule.len() {
            let (boundary, rate) = self.config.capacity_schedule[self.schedule_idx + 1];
            if boundary > t {
                break;
            }
            self.downlink.set_rate(rate, boundary);
            self.uplink.set_rate(rate, boundary);
            self.schedule_idx += 1;
        }
        self.downlink.advance(t);
        self.uplink.advance(t);
    }

    pub fn admit(&mut self, dir: LinkDirection, size: u32, t: f64) -> AdmitOutcome {
        self.sync(t);
        let owd = self.one_way_delay_s();
        let schedule = &self.config.capacity_schedule;
        let idx = self.schedule_idx;
        let bucket = match dir {
            LinkDirection::Downlink => &mut self.downlink,
            LinkDirection::Uplink => &mut self.uplink,
        };
        let t = t.max(bucket.last_update_s);
        if bucket.backlog_bytes + size as f64 > bucket.queue_cap_bytes {
            return AdmitOutcome::Dropped;
        }

        // Walk the remaining schedule so a departure that crosses a rate
        // change is timed under the rate actually in force.
        let mut needed = bucket.service_needed(size);
        let mut cursor = t;
        let mut rate = bucket.rate_bps;
        let mut next = idx + 1;
        let departure_s = loop {
            let segment_end = schedule.get(next).map(|&(b, _)| b);
            match segment_end {
                Some(end) if end > cursor => {
                    let capacity = rate * (end - cursor) / 8.0;
                    if capacity >= needed {
                        break cursor + needed * 8.0 / rate;
                    }
                    needed -= capacity;
                    cursor = end;
                    rate = schedule[next].1;
                    next += 1;
                }
                Some(_) => {
                    rate = schedule[next].1;
                    next += 1;
                }
                None => break cursor + needed * 8.0 / rate,
            }
        };
        bucket.backlog_bytes += size as f64;
        AdmitOutcome::Delivered { departure_s, arrival_s: departure_s + owd }
    }

    /// Sends an 81-byte keepalive up and its 81-byte response back down,
    /// both through the shaped queues, and returns the round-trip time.
    /// A dropped probe yields no sample.
    pub fn rtt_probe(&mut self, t: f64) -> Option<f64> {
        const PROBE_BYTES: u32 = 81;
        let up_arrival = self.admit(LinkDirection::Uplink, PROBE_BYTES, t).arrival()?;
        let down_arrival = self.admit(LinkDirection::Downlink, PROBE_BYTES, up_arrival).arrival()?;
        Some(down_arrival - t)
    }
}
