//! Dataset manifests: a TOML index describing where each trace file lives,
//! which stream it belongs to, and the positional meaning of its columns.
//!
//! Grammar (one `[[trace]]` table per file):
//!
//! ```toml
//! [[trace]]
//! path = "d2/tr_rtp_downlink.txt"
//! game = "TR"                 # TR | TH | SP
//! protocol = "RTP"            # RTP | RTCP | DTLS | STUN | MIXED
//! direction = "downlink"      # downlink | uplink
//! codec = "VP9"               # optional: VP9 | H264
//! resolution = "1080p"        # optional: 720p | 1080p | 4K
//! dataset = "D2"              # D1..D8
//! schema = ["Y1", "Y2", "Y3"]
//! ```
//!
//! Paths are resolved relative to a base directory supplied at load time, so
//! one manifest works wherever the dataset is unpacked.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Column, Direction, Game, Protocol, StreamMeta, Trace, TraceError};

/// One trace file declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// File location relative to the manifest's base directory.
    pub path: PathBuf,
    #[serde(flatten)]
    pub meta: StreamMeta,
    /// Column meaning by position.
    pub schema: Vec<Column>,
}

/// Parsed and validated dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "trace")]
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest syntax")]
    Toml(#[from] toml::de::Error),
    #[error("manifest lists no traces")]
    Empty,
    #[error("duplicate trace path {0:?}")]
    DuplicatePath(PathBuf),
    #[error("entry {path:?}: empty schema")]
    EmptySchema { path: PathBuf },
    #[error("entry {path:?}: schema has {col:?} but no Y1 timestamp column")]
    SchemaMissingTime { path: PathBuf, col: Column },
    #[error("{0}")]
    Load(LoadFailures),
}

/// Per-file load failures, aggregated so one bad file does not hide others.
#[derive(Debug)]
pub struct LoadFailures(pub Vec<(PathBuf, TraceError)>);

impl fmt::Display for LoadFailures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} trace file(s) failed to load:", self.0.len())?;
        for (path, err) in &self.0 {
            writeln!(f, "  {}: {err}", path.display())?;
        }
        Ok(())
    }
}

impl DatasetManifest {
    /// Parses manifest TOML and checks structural invariants.
    pub fn from_toml(text: &str) -> Result<Self, ManifestError> {
        let manifest: DatasetManifest = toml::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, ManifestError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), ManifestError> {
        if self.entries.is_empty() {
            return Err(ManifestError::Empty);
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(ManifestError::DuplicatePath(e.path.clone()));
            }
            if e.schema.is_empty() {
                return Err(ManifestError::EmptySchema { path: e.path.clone() });
            }
            // Time-series columns only make sense against a timestamp.
            if !e.schema.contains(&Column::Y1) {
                if let Some(&col) =
                    e.schema.iter().find(|&&c| c == Column::Y2 || c == Column::Y3)
                {
                    return Err(ManifestError::SchemaMissingTime { path: e.path.clone(), col });
                }
            }
        }
        Ok(())
    }

    /// Loads every declared trace relative to `base_dir`. Failures are
    /// collected per file; any failure fails the whole load.
    pub fn load_dataset<P: AsRef<Path>>(&self, base_dir: P) -> Result<DatasetTraces, ManifestError> {
        let base = base_dir.as_ref();
        let mut traces = Vec::new();
        let mut failures = Vec::new();
        for e in &self.entries {
            let full = base.join(&e.path);
            match Trace::from_path(e.meta, &full, &e.schema) {
                Ok(t) => traces.push(t),
                Err(err) => failures.push((e.path.clone(), err)),
            }
        }
        if !failures.is_empty() {
            return Err(ManifestError::Load(LoadFailures(failures)));
        }
        Ok(DatasetTraces { traces })
    }
}

/// In-memory dataset, queryable by stream identity.
#[derive(Debug, Clone)]
pub struct DatasetTraces {
    traces: Vec<Trace>,
}

impl DatasetTraces {
    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    /// Traces matching every given filter; `None` matches anything.
    pub fn query(
        &self,
        game: Option<Game>,
        protocol: Option<Protocol>,
        direction: Option<Direction>,
    ) -> impl Iterator<Item = &Trace> {
        self.traces.iter().filter(move |t| {
            let m = t.meta();
            game.map_or(true, |g| m.game == g)
                && protocol.map_or(true, |p| m.protocol == p)
                && direction.map_or(true, |d| m.direction == d)
        })
    }

    /// First trace matching the exact (game, protocol, direction) triple.
    pub fn get(&self, game: Game, protocol: Protocol, direction: Direction) -> Option<&Trace> {
        self.query(Some(game), Some(protocol), Some(direction)).next()
    }
}
