//! Shipped generator presets: one parameter file per (game, resolution,
//! codec) combination, stored as TOML data files and embedded into the
//! library so callers need no filesystem access.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GeneratorError, GeneratorParams};
use crate::trace::{DatasetId, Direction, Game, Protocol, Resolution, StreamMeta, VideoCodec};

/// A named parameter set plus the stream identity it models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub game: Game,
    pub codec: VideoCodec,
    pub resolution: Resolution,
    /// Expected downlink media (video + audio) load this preset was tuned
    /// to; the analytic expectation of `params` matches it.
    pub nominal_media_mbps: f64,
    pub params: GeneratorParams,
}

#[derive(Debug, Error)]
pub enum PresetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("preset syntax")]
    Toml(#[from] toml::de::Error),
    #[error("invalid parameters")]
    Params(#[from] GeneratorError),
    #[error("no built-in preset named {0:?}")]
    UnknownName(String),
}

impl Preset {
    pub fn from_toml(text: &str) -> Result<Self, PresetError> {
        let preset: Preset = toml::from_str(text)?;
        preset.params.validate()?;
        Ok(preset)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, PresetError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Stream identity for traces exported from sessions of this preset.
    pub fn stream_meta(
        &self,
        protocol: Protocol,
        direction: Direction,
        dataset: DatasetId,
    ) -> StreamMeta {
        StreamMeta {
            game: self.game,
            protocol,
            direction,
            codec: Some(self.codec),
            resolution: Some(self.resolution),
            dataset,
        }
    }
}

macro_rules! builtin_presets {
    ($(($name:literal, $file:literal)),+ $(,)?) => {
        /// Names of all built-in presets, `<game>_<resolution>_<codec>`.
        pub const BUILTIN_NAMES: &[&str] = &[$($name),+];

        fn builtin_text(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../presets/", $file))),)+
                _ => None,
            }
        }
    };
}

builtin_presets![
    ("tr_720p_vp9", "tr_720p_vp9.toml"),
    ("tr_1080p_vp9", "tr_1080p_vp9.toml"),
    ("tr_4k_vp9", "tr_4k_vp9.toml"),
    ("th_720p_vp9", "th_720p_vp9.toml"),
    ("th_1080p_vp9", "th_1080p_vp9.toml"),
    ("th_4k_vp9", "th_4k_vp9.toml"),
    ("sp_720p_vp9", "sp_720p_vp9.toml"),
    ("sp_1080p_vp9", "sp_1080p_vp9.toml"),
    ("sp_4k_vp9", "sp_4k_vp9.toml"),
    ("tr_720p_h264", "tr_720p_h264.toml"),
    ("tr_1080p_h264", "tr_1080p_h264.toml"),
    ("tr_4k_h264", "tr_4k_h264.toml"),
    ("th_720p_h264", "th_720p_h264.toml"),
    ("th_1080p_h264", "th_1080p_h264.toml"),
    ("th_4k_h264", "th_4k_h264.toml"),
    ("sp_720p_h264", "sp_720p_h264.toml"),
    ("sp_1080p_h264", "sp_1080p_h264.toml"),
    ("sp_4k_h264", "sp_4k_h264.toml"),
];

/// Name of the built-in preset for a (game, resolution, codec) triple.
pub fn builtin_name(game: Game, resolution: Resolution, codec: VideoCodec) -> String {
    let g = match game {
        Game::TR => "tr",
        Game::TH => "th",
        Game::SP => "sp",
    };
    let r = match resolution {
        Resolution::R720p => "720p",
        Resolution::R1080p => "1080p",
        Resolution::R4k => "4k",
    };
    let c = match codec {
        VideoCodec::Vp9 => "vp9",
        VideoCodec::H264 => "h264",
    };
    format!("{g}_{r}_{c}")
}

/// Loads the built-in preset for a (game, resolution, codec) triple.
pub fn builtin_for(
    game: Game,
    resolution: Resolution,
    codec: VideoCodec,
) -> Result<Preset, PresetError> {
    builtin(&builtin_name(game, resolution, codec))
}

/// Loads a built-in preset by name (e.g. `"tr_1080p_vp9"`).
pub fn builtin(name: &str) -> Result<Preset, PresetError> {
    let text = builtin_text(name).ok_or_else(|| PresetError::UnknownName(name.into()))?;
    Preset::from_toml(text).map_err(|e| match e {
        // A broken embedded file is a build defect, not user input.
        PresetError::Toml(err) => panic!("embedded preset {name} is malformed: {err}"),
        other => other,
    })
}

/// All built-in presets, in `BUILTIN_NAMES` order.
pub fn all_builtin() -> Vec<(&'static str, Preset)> {
    BUILTIN_NAMES
        .iter()
        .map(|&n| (n, builtin(n).expect("embedded presets validate")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses_and_validates() {
        let all = all_builtin();
        assert_eq!(all.len(), 18);
        for (name, p) in &all {
            assert!(p.params.validate().is_ok(), "{name} invalid");
        }
    }

    #[test]
    fn analytic_rate_matches_nominal_label() {
        for (name, p) in all_builtin() {
            let analytic = p.params.expected_media_rate_mbps();
            assert!(
                (analytic - p.nominal_media_mbps).abs() < 1e-3,
                "{name}: analytic {analytic} vs nominal {}",
                p.nominal_media_mbps
            );
        }
    }

    #[test]
    fn flagship_racing_preset_matches_observed_shape() {
        let p = builtin("tr_1080p_vp9").unwrap();
        // Dominant 6-group frames of mostly full-size packets.
        assert_eq!(p.params.group_count_dist.mode(), 6);
        let g = &p.params.group_count_dist;
        let w6 = g
            .values()
            .iter()
            .zip(g.weights())
            .find(|(&v, _)| v == 6)
            .map(|(_, &w)| w)
            .unwrap();
        assert!(w6 >= 0.8);
        assert!(p.params.video_size_dist.mass_at_or_above(1194) >= 0.85);
        assert!((p.nominal_media_mbps - 25.60).abs() < 1e-9);
    }

    #[test]
    fn puzzle_presets_keep_single_group_frames() {
        for name in ["sp_720p_vp9", "sp_1080p_vp9", "sp_4k_vp9"] {
            let p = builtin(name).unwrap();
            assert_eq!(p.params.group_count_dist.mode(), 1, "{name}");
            assert!(p.params.group_size_dist.mode() <= 2, "{name}");
        }
    }

    #[test]
    fn group_gaps_stay_detectable_for_fitting() {
        // Splitting groups needs >= 1 ms of silence between them.
        for (name, p) in all_builtin() {
            let intra = p.params.intra_group_spacing_ms;
            let span = intra * (p.params.group_size_dist.max_value() - 1) as f64;
            assert!(
                p.params.group_spacing_ms - span >= 1.0,
                "{name}: inter-group gap {} ms",
                p.params.group_spacing_ms - span
            );
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(builtin("nope"), Err(PresetError::UnknownName(_))));
    }

    #[test]
    fn triple_lookup_covers_every_combination() {
        for game in [Game::TR, Game::TH, Game::SP] {
            for res in [Resolution::R720p, Resolution::R1080p, Resolution::R4k] {
                for codec in [VideoCodec::Vp9, VideoCodec::H264] {
                    let p = builtin_for(game, res, codec).unwrap();
                    assert_eq!((p.game, p.resolution, p.codec), (game, res, codec));
                }
            }
        }
        assert_eq!(builtin_name(Game::TR, Resolution::R4k, VideoCodec::H264), "tr_4k_h264");
    }

    #[test]
    fn preset_roundtrips_through_toml() {
        let p = builtin("th_4k_h264").unwrap();
        let text = toml::to_string(&p).unwrap();
        let back = Preset::from_toml(&text).unwrap();
        assert_eq!(p, back);
    }
}
