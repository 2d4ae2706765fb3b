//! Traffic toolkit for cloud-gaming sessions: trace ingestion and analysis,
//! parametric traffic generation, delay/loss-driven rate control, bottleneck
//! link emulation, session adaptation policy, and an event-driven simulator
//! tying them together.

pub mod adaptation;
pub mod analyzer;
pub mod compare;
pub mod dist;
pub mod fit;
pub mod gcc;
pub mod generator;
pub mod link;
pub mod manifest;
pub mod presets;
pub mod sim;
pub mod trace;

pub use adaptation::{
    bitrate_band, initial_config, recommended_capacity, AdaptationConfig, AdaptationEngine,
    ChangeReason, ChangeRecord, EncoderConfig, Phase, StartupDecision,
};
pub use compare::{compare, ComparisonReport, MetricSet, StatsTable, TargetSet, Tolerance};
pub use analyzer::{Ecdf, LoadSeries, StatePeriod, StateSchedule, StateSegment, TrafficStats};
pub use dist::DiscreteDist;
pub use fit::{fit_generator_params, FitConfig};
pub use gcc::{
    should_notify, target_rate, DelayEstimator, FeedbackMsg, FrameTimingSample, LossController,
    OveruseSignal, RateControlConfig,
};
pub use generator::{GeneratorParams, ScheduledPacket, Session, StreamKind};
pub use link::{AdmitOutcome, Link, LinkConfig, LinkDirection, TokenBucket};
pub use manifest::{DatasetManifest, DatasetTraces, ManifestEntry};
pub use presets::Preset;
pub use sim::{Scenario, SecondRecord, SimReport, SimTotals};
pub use trace::{
    Column, DatasetId, Direction, Game, PacketRecord, Protocol, Resolution, StreamMeta, Trace,
    VideoCodec,
};
