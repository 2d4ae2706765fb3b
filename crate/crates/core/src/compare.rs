//! Checks measured metrics against a target file with explicit tolerances.
//!
//! A targets file is TOML: a `version` marker and one `[[metric]]` table per
//! check. Each metric carries exactly one tolerance form: `target` with
//! `rel_tol` (fraction of the target), `target` with `abs_tol` (same unit as
//! the value), or `band = [lo, hi]` (inclusive). Metric values come either
//! from a simulation report (latency, frame rate, delivered load and the
//! like) or from a traffic-stats table produced by the analyzer (per-stream
//! size, spacing and load).

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use crate::analyzer::{Ecdf, TrafficStats};
use crate::sim::{SimReport, SIM_REPORT_HEADER};

/// First line of a traffic-stats CSV file.
pub const STATS_HEADER: &str = "#cloudgame-csv v1 traffic-stats";

const STATS_COLUMNS: &str = "stream,packets,duration_s,mean_size_bytes,stdev_size_bytes,\
min_size_bytes,max_size_bytes,mean_ipt_ms,load_mbps,top_sizes";

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("targets file syntax")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unsupported targets version {found}, expected 1")]
    BadVersion { found: u32 },
    #[error("targets file declares no metrics")]
    NoMetrics,
    #[error("metric {name:?}: {problem}")]
    BadMetricSpec { name: String, problem: String },
    #[error("metric {name:?} listed twice in the targets file")]
    DuplicateMetric { name: String },
    #[error("metric {name:?} not present in the measured set")]
    UnknownMetric { name: String },
    #[error("stream {name:?}: {problem}")]
    BadStream { name: String, problem: String },
    #[error("stream {name:?} listed twice in the stats table")]
    DuplicateStream { name: String },
    #[error("a refused session carries no metrics to compare")]
    RefusedReport,
    #[error("the report holds no per-second records")]
    EmptyReport,
    #[error("missing stats header, expected {STATS_HEADER:?}, found {found:?}")]
    MissingHeader { found: String },
    #[error("stats line {line}: {problem}")]
    BadRow { line: usize, problem: String },
    #[error("unrecognized metrics file, first line {found:?}")]
    UnknownFileKind { found: String },
}

/// One acceptance window around a target value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// Pass when `|value - target| <= tol * |target|`.
    Relative { target: f64, tol: f64 },
    /// Pass when `|value - target| <= tol`.
    Absolute { target: f64, tol: f64 },
    /// Pass when `lo <= value <= hi`.
    Band { lo: f64, hi: f64 },
}

impl Tolerance {
    /// Inclusive `[lo, hi]` window this tolerance admits.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Tolerance::Relative { target, tol } => {
                let half = tol * target.abs();
                (target - half, target + half)
            }
            Tolerance::Absolute { target, tol } => (target - tol, target + tol),
            Tolerance::Band { lo, hi } => (lo, hi),
        }
    }

    pub fn admits(&self, value: f64) -> bool {
        let (lo, hi) = self.bounds();
        value.is_finite() && lo <= value && value <= hi
    }
}

impl std::fmt::Display for Tolerance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (lo, hi) = self.bounds();
        match *self {
            Tolerance::Relative { target, tol } => {
                write!(f, "{target} ±{}% [{lo:.6}, {hi:.6}]", tol * 100.0)
            }
            Tolerance::Absolute { target, tol } => {
                write!(f, "{target} ±{tol} [{lo:.6}, {hi:.6}]")
            }
            Tolerance::Band { .. } => write!(f, "band [{lo:.6}, {hi:.6}]"),
        }
    }
}

/// One named check from a targets file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub name: String,
    pub tolerance: Tolerance,
}

/// Parsed targets file: an ordered list of named tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    metrics: Vec<MetricSpec>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsDoc {
    version: u32,
    #[serde(default)]
    metric: Vec<RawMetric>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetric {
    name: String,
    target: Option<f64>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    band: Option<[f64; 2]>,
}

impl RawMetric {
    fn into_spec(self) -> Result<MetricSpec, CompareError> {
        let bad = |problem: &str| CompareError::BadMetricSpec {
            name: self.name.clone(),
            problem: problem.to_string(),
        };
        if self.name.trim().is_empty() {
            return Err(bad("empty name"));
        }
        let tolerance = match (self.target, self.rel_tol, self.abs_tol, self.band) {
            (Some(target), Some(tol), None, None) => {
                if !target.is_finite() || !(tol > 0.0) || !tol.is_finite() {
                    return Err(bad("target must be finite and rel_tol positive"));
                }
                Tolerance::Relative { target, tol }
            }
            (Some(target), None, Some(tol), None) => {
                if !target.is_finite() || !(tol > 0.0) || !tol.is_finite() {
                    return Err(bad("target must be finite and abs_tol positive"));
                }
                Tolerance::Absolute { target, tol }
            }
            (None, None, None, Some([lo, hi])) => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(bad("band needs finite lo <= hi"));
                }
                Tolerance::Band { lo, hi }
            }
            (None, None, None, None) => return Err(bad("no tolerance given")),
            _ => return Err(bad("give exactly one of rel_tol, abs_tol or band")),
        };
        Ok(MetricSpec { name: self.name, tolerance })
    }
}

impl TargetSet {
    pub fn from_toml(text: &str) -> Result<Self, CompareError> {
        let doc: TargetsDoc = toml::from_str(text)?;
        if doc.version != 1 {
            return Err(CompareError::BadVersion { found: doc.version });
        }
        if doc.metric.is_empty() {
            return Err(CompareError::NoMetrics);
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut metrics = Vec::with_capacity(doc.metric.len());
        for raw in doc.metric {
            let spec = raw.into_spec()?;
            if !seen.insert(spec.name.clone()) {
                return Err(CompareError::DuplicateMetric { name: spec.name });
            }
            metrics.push(spec);
        }
        Ok(TargetSet { metrics })
    }

    pub fn from_path(path: &Path) -> Result<Self, CompareError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn metrics(&self) -> &[MetricSpec] {
        &self.metrics
    }
}

/// Named measured values, the right-hand side of a comparison.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSet {
    values: BTreeMap<String, f64>,
}

impl MetricSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Session-level metrics from a simulation report: latency, frame rate,
    /// loss, jitter-buffer delay, delivered load and resolution behavior.
    pub fn from_sim_report(report: &SimReport) -> Result<Self, CompareError> {
        if report.refused {
            return Err(CompareError::RefusedReport);
        }
        if report.records.is_empty() {
            return Err(CompareError::EmptyReport);
        }
        let recs = &report.records;
        let n = recs.len() as f64;
        let mean = |f: &dyn Fn(&crate::sim::SecondRecord) -> f64| {
            recs.iter().map(|r| f(r)).sum::<f64>() / n
        };

        let rtts: Vec<f64> = recs.iter().map(|r| r.rtt_s).collect();
        // Per-second records all carry a value, so the ECDF never sees an
        // empty sample set here.
        let rtt_ecdf = Ecdf::from_samples(rtts).expect("nonempty rtt samples");

        let mut changes = 0u32;
        for pair in recs.windows(2) {
            if pair[0].resolution_height != pair[1].resolution_height {
                changes += 1;
            }
        }

        let mut m = MetricSet::new();
        m.insert("mean_rtt_s", mean(&|r| r.rtt_s));
        m.insert("p95_rtt_s", rtt_ecdf.quantile(0.95));
        m.insert("mean_fps", mean(&|r| f64::from(r.frames_decoded_fps)));
        m.insert("min_fps", recs.iter().map(|r| f64::from(r.frames_decoded_fps)).fold(f64::INFINITY, f64::min));
        m.insert("mean_jitter_buffer_delay_s", mean(&|r| r.jitter_buffer_delay_s));
        m.insert("mean_delivered_load_mbps", mean(&|r| r.delivered_load_mbps));
        m.insert("final_resolution_height", f64::from(recs[recs.len() - 1].resolution_height));
        m.insert("total_packets_lost", recs.iter().map(|r| f64::from(r.packets_lost)).sum());
        m.insert("resolution_change_count", f64::from(changes));
        Ok(m)
    }

    /// Per-stream metrics from a traffic-stats table, keyed
    /// `<stream>.mean_size_bytes`, `<stream>.mean_ipt_ms`, `<stream>.load_mbps`.
    pub fn from_stats_table(table: &StatsTable) -> Self {
        let mut m = MetricSet::new();
        for (name, stats) in table.rows() {
            m.insert(format!("{name}.mean_size_bytes"), stats.mean_payload_bytes);
            m.insert(format!("{name}.mean_ipt_ms"), stats.mean_ipt_ms);
            m.insert(format!("{name}.load_mbps"), stats.load_mbps);
        }
        m
    }
}

/// Reads a metrics file, dispatching on its header line: simulation reports
/// and traffic-stats tables both yield a [`MetricSet`].
pub fn load_metrics(path: &Path) -> Result<MetricSet, CompareError> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    if first == SIM_REPORT_HEADER {
        let report = SimReport::from_csv_reader(text.as_bytes()).map_err(|e| match e {
            crate::sim::ReportCsvError::Io(e) => CompareError::Io(e),
            crate::sim::ReportCsvError::MissingHeader { found } => {
                CompareError::MissingHeader { found }
            }
            crate::sim::ReportCsvError::BadRow { line, problem } => {
                CompareError::BadRow { line, problem }
            }
        })?;
        MetricSet::from_sim_report(&report)
    } else if first == STATS_HEADER {
        Ok(MetricSet::from_stats_table(&StatsTable::from_csv_reader(text.as_bytes())?))
    } else {
        Err(CompareError::UnknownFileKind { found: first.to_string() })
    }
}

/// Ordered collection of named [`TrafficStats`] rows with a CSV form, the
/// bridge between the analyzer and the comparison step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsTable {
    rows: Vec<(String, TrafficStats)>,
}

impl StatsTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a named row. Names must be unique, nonempty, and free of the
    /// CSV separator and comment marker.
    pub fn push(&mut self, name: impl Into<String>, stats: TrafficStats) -> Result<(), CompareError> {
        let name = name.into();
        let bad = |problem: &str| CompareError::BadStream {
            name: name.clone(),
            problem: problem.to_string(),
        };
        if name.trim().is_empty() {
            return Err(bad("empty name"));
        }
        if name.contains(',') || name.starts_with('#') || name.contains('|') {
            return Err(bad("name may not contain ',' or '|' or start with '#'"));
        }
        if self.rows.iter().any(|(n, _)| *n == name) {
            return Err(CompareError::DuplicateStream { name });
        }
        self.rows.push((name, stats));
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &TrafficStats)> {
        self.rows.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{STATS_HEADER}")?;
        writeln!(w, "{STATS_COLUMNS}")?;
        for (name, s) in &self.rows {
            let tops: Vec<String> =
                s.top_sizes.iter().map(|(b, f)| format!("{b}:{f:.6}")).collect();
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{},{},{:.6},{:.6},{}",
                name,
                s.packet_count,
                s.duration_s,
                s.mean_payload_bytes,
                s.stdev_payload_bytes,
                s.min_payload_bytes,
                s.max_payload_bytes,
                s.mean_ipt_ms,
                s.load_mbps,
                tops.join("|"),
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("vec write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn from_csv_reader<R: BufRead>(reader: R) -> Result<Self, CompareError> {
        let mut lines = reader.lines().enumerate();
        let first = loop {
            match lines.next() {
                Some((_, line)) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => {
                    return Err(CompareError::MissingHeader { found: String::new() });
                }
            }
        };
        if first.trim() != STATS_HEADER {
            return Err(CompareError::MissingHeader { found: first.trim().to_string() });
        }

        let mut table = StatsTable::new();
        for (idx, line) in lines {
            let line = line?;
            let line_no = idx + 1;
            let bad = |problem: String| CompareError::BadRow { line: line_no, problem };
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed == STATS_COLUMNS {
                continue;
            }
            if trimmed.starts_with('#') {
                return Err(bad(format!("unexpected marker {trimmed:?}")));
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 10 {
                return Err(bad(format!("expected 10 columns, found {}", fields.len())));
            }
            let num = |i: usize, what: &str| -> Result<f64, CompareError> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{what}: {e}")))
            };
            let int = |i: usize, what: &str| -> Result<u32, CompareError> {
                fields[i]
                    .parse::<u32>()
                    .map_err(|e| bad(format!("{what}: {e}")))
            };
            let mut top_sizes = Vec::new();
            if !fields[9].is_empty() {
                for part in fields[9].split('|') {
                    let (size, share) = part
                        .split_once(':')
                        .ok_or_else(|| bad(format!("top size {part:?} lacks ':'")))?;
                    let size = size
                        .parse::<u32>()
                        .map_err(|e| bad(format!("top size bytes: {e}")))?;
                    let share = share
                        .parse::<f64>()
                        .map_err(|e| bad(format!("top size share: {e}")))?;
                    top_sizes.push((size, share));
                }
            }
            let stats = TrafficStats {
                packet_count: int(1, "packets")? as usize,
                duration_s: num(2, "duration_s")?,
                mean_payload_bytes: num(3, "mean_size_bytes")?,
                stdev_payload_bytes: num(4, "stdev_size_bytes")?,
                min_payload_bytes: int(5, "min_size_bytes")?,
                max_payload_bytes: int(6, "max_size_bytes")?,
                mean_ipt_ms: num(7, "mean_ipt_ms")?,
                load_mbps: num(8, "load_mbps")?,
                top_sizes,
            };
            table.push(fields[0].to_string(), stats).map_err(|e| match e {
                CompareError::BadStream { name, problem } => {
                    bad(format!("stream {name:?}: {problem}"))
                }
                CompareError::DuplicateStream { name } => {
                    bad(format!("stream {name:?} repeated"))
                }
                other => other,
            })?;
        }
        Ok(table)
    }
}

/// One evaluated check.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub value: f64,
    pub tolerance: Tolerance,
    pub pass: bool,
}

/// All evaluated checks; `pass` only when every row passed.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub pass: bool,
}

impl ComparisonReport {
    /// Human-readable listing, one line per check plus a verdict line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for row in &self.rows {
            let mark = if row.pass { "pass" } else { "FAIL" };
            out.push_str(&format!(
                "{mark}  {name:<width$}  {value:.6}  vs {tol}\n",
                name = row.name,
                value = row.value,
                tol = row.tolerance,
            ));
        }
        let verdict = if self.pass { "all checks passed" } else { "some checks failed" };
        out.push_str(&format!("{}/{} passed: {verdict}\n", self.rows.iter().filter(|r| r.pass).count(), self.rows.len()));
        out
    }
}

/// Evaluates every target against the measured set. Order follows the
/// targets file. A target whose metric is missing is an error, not a
/// failure: a misspelled name must not read as a real regression.
pub fn compare(targets: &TargetSet, metrics: &MetricSet) -> Result<ComparisonReport, CompareError> {
    let mut rows = Vec::with_capacity(targets.metrics().len());
    for spec in targets.metrics() {
        let value = metrics
            .get(&spec.name)
            .ok_or_else(|| CompareError::UnknownMetric { name: spec.name.clone() })?;
        rows.push(ComparisonRow {
            name: spec.name.clone(),
            value,
            tolerance: spec.tolerance,
            pass: spec.tolerance.admits(value),
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ComparisonReport { rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SecondRecord;

    fn spec_toml() -> &'static str {
        r#"
version = 1

[[metric]]
name = "tr_rtp_down.load_mbps"
target = 25.60
rel_tol = 0.05

[[metric]]
name = "mean_rtt_s"
band = [0.010, 0.015]

[[metric]]
name = "tr_stun_down.mean_ipt_ms"
target = 265.23
abs_tol = 30.0
"#
    }

    #[test]
    fn targets_file_parses_every_tolerance_form() {
        let set = TargetSet::from_toml(spec_toml()).unwrap();
        assert_eq!(set.metrics().len(), 3);
        assert_eq!(
            set.metrics()[0].tolerance,
            Tolerance::Relative { target: 25.60, tol: 0.05 }
        );
        assert_eq!(set.metrics()[1].tolerance, Tolerance::Band { lo: 0.010, hi: 0.015 });
        assert_eq!(
            set.metrics()[2].tolerance,
            Tolerance::Absolute { target: 265.23, tol: 30.0 }
        );
    }

    #[test]
    fn malformed_targets_are_rejected() {
        let cases: &[(&str, &str)] = &[
            ("version = 2\n[[metric]]\nname = \"x\"\nband = [0.0, 1.0]\n", "version"),
            ("version = 1\n", "no metrics"),
            ("version = 1\n[[metric]]\nname = \"x\"\n", "no tolerance"),
            (
                "version = 1\n[[metric]]\nname = \"x\"\ntarget = 1.0\nrel_tol = 0.1\nabs_tol = 0.1\n",
                "two tolerance forms",
            ),
            (
                "version = 1\n[[metric]]\nname = \"x\"\ntarget = 1.0\nband = [0.0, 1.0]\nrel_tol = 0.1\n",
                "band mixed with target",
            ),
            ("version = 1\n[[metric]]\nname = \"x\"\ntarget = 1.0\nrel_tol = 0.0\n", "zero tol"),
            ("version = 1\n[[metric]]\nname = \"x\"\nband = [2.0, 1.0]\n", "inverted band"),
            ("version = 1\n[[metric]]\nname = \"\"\nband = [0.0, 1.0]\n", "empty name"),
            (
                "version = 1\n[[metric]]\nname = \"x\"\nband = [0.0, 1.0]\n[[metric]]\nname = \"x\"\nband = [0.0, 1.0]\n",
                "duplicate",
            ),
        ];
        for (text, why) in cases {
            assert!(TargetSet::from_toml(text).is_err(), "accepted {why}: {text}");
        }
    }

    #[test]
    fn tolerance_windows_are_inclusive() {
        let rel = Tolerance::Relative { target: 25.60, tol: 0.05 };
        assert!(rel.admits(25.1), "measured load near the target must pass");
        assert!(rel.admits(24.32) && rel.admits(26.88));
        assert!(!rel.admits(24.31) && !rel.admits(26.89));

        let abs = Tolerance::Absolute { target: 100.0, tol: 1.0 };
        assert!(abs.admits(99.0) && abs.admits(101.0) && !abs.admits(101.01));

        let band = Tolerance::Band { lo: 0.01028, hi: 0.01230 };
        assert!(band.admits(0.0110), "in-band latency must pass");
        assert!(band.admits(0.01028) && band.admits(0.01230));
        assert!(!band.admits(0.01027) && !band.admits(0.01231));
        assert!(!band.admits(f64::NAN));
    }

    fn record(second: u32) -> SecondRecord {
        SecondRecord {
            second,
            resolution_height: 1080,
            frames_decoded_fps: 60,
            rtt_s: 0.010 + f64::from(second) * 1e-4,
            packets_lost: second,
            jitter_buffer_delay_s: 0.020,
            delivered_load_mbps: 25.0,
            target_rate_bps: 28e6,
        }
    }

    fn small_report() -> SimReport {
        let mut records: Vec<SecondRecord> = (0..10).map(record).collect();
        records[9].resolution_height = 720;
        SimReport { refused: false, records, totals: Default::default() }
    }

    #[test]
    fn sim_report_metrics_cover_the_session() {
        let m = MetricSet::from_sim_report(&small_report()).unwrap();
        assert!((m.get("mean_rtt_s").unwrap() - 0.01045).abs() < 1e-12);
        assert_eq!(m.get("mean_fps").unwrap(), 60.0);
        assert_eq!(m.get("min_fps").unwrap(), 60.0);
        assert_eq!(m.get("final_resolution_height").unwrap(), 720.0);
        assert_eq!(m.get("total_packets_lost").unwrap(), 45.0);
        assert_eq!(m.get("resolution_change_count").unwrap(), 1.0);
        assert_eq!(m.get("mean_delivered_load_mbps").unwrap(), 25.0);
        assert!(m.get("p95_rtt_s").unwrap() >= m.get("mean_rtt_s").unwrap());
    }

    #[test]
    fn refused_and_empty_reports_yield_no_metrics() {
        let refused = SimReport { refused: true, records: vec![], totals: Default::default() };
        assert!(matches!(
            MetricSet::from_sim_report(&refused),
            Err(CompareError::RefusedReport)
        ));
        let empty = SimReport { refused: false, records: vec![], totals: Default::default() };
        assert!(matches!(MetricSet::from_sim_report(&empty), Err(CompareError::EmptyReport)));
    }

    #[test]
    fn comparison_passes_and_fails_per_row() {
        let targets = TargetSet::from_toml(spec_toml()).unwrap();
        let mut metrics = MetricSet::new();
        metrics.insert("tr_rtp_down.load_mbps", 25.1);
        metrics.insert("mean_rtt_s", 0.0112);
        metrics.insert("tr_stun_down.mean_ipt_ms", 262.0);
        let report = compare(&targets, &metrics).unwrap();
        assert!(report.pass);
        assert!(report.rows.iter().all(|r| r.pass));

        metrics.insert("mean_rtt_s", 0.020);
        let report = compare(&targets, &metrics).unwrap();
        assert!(!report.pass, "one out-of-band row must fail the report");
        assert_eq!(report.rows.iter().filter(|r| !r.pass).count(), 1);
        let text = report.to_text();
        assert!(text.contains("FAIL") && text.contains("mean_rtt_s"));
    }

    #[test]
    fn a_misspelled_metric_is_an_error_not_a_failure() {
        let targets =
            TargetSet::from_toml("version = 1\n[[metric]]\nname = \"mean_rtt_z\"\nband = [0.0, 1.0]\n")
                .unwrap();
        let mut metrics = MetricSet::new();
        metrics.insert("mean_rtt_s", 0.010);
        assert!(matches!(
            compare(&targets, &metrics),
            Err(CompareError::UnknownMetric { name }) if name == "mean_rtt_z"
        ));
    }

    fn sample_stats() -> TrafficStats {
        TrafficStats {
            packet_count: 1000,
            duration_s: 60.0,
            mean_payload_bytes: 1118.01,
            stdev_payload_bytes: 150.5,
            min_payload_bytes: 35,
            max_payload_bytes: 1194,
            mean_ipt_ms: 0.34,
            load_mbps: 25.6,
            top_sizes: vec![(1194, 0.523), (1096, 0.21)],
        }
    }

    #[test]
    fn stats_table_survives_a_csv_roundtrip() {
        let mut table = StatsTable::new();
        table.push("tr_rtp_down", sample_stats()).unwrap();
        let mut second = sample_stats();
        second.top_sizes.clear();
        table.push("tr_stun_down", second).unwrap();

        let csv = table.to_csv_string();
        assert!(csv.starts_with(STATS_HEADER));
        let parsed = StatsTable::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 2);
        // CSV is the canonical fixed-precision form.
        assert_eq!(parsed.to_csv_string(), csv);

        let metrics = MetricSet::from_stats_table(&parsed);
        assert!((metrics.get("tr_rtp_down.load_mbps").unwrap() - 25.6).abs() < 1e-9);
        assert!((metrics.get("tr_stun_down.mean_ipt_ms").unwrap() - 0.34).abs() < 1e-9);
    }

    #[test]
    fn stats_table_rejects_bad_names_and_bad_rows() {
        let mut table = StatsTable::new();
        assert!(table.push("", sample_stats()).is_err());
        assert!(table.push("a,b", sample_stats()).is_err());
        assert!(table.push("#x", sample_stats()).is_err());
        table.push("ok", sample_stats()).unwrap();
        assert!(matches!(
            table.push("ok", sample_stats()),
            Err(CompareError::DuplicateStream { .. })
        ));

        assert!(matches!(
            StatsTable::from_csv_reader("not a header\n".as_bytes()),
            Err(CompareError::MissingHeader { .. })
        ));
        let bad_row = format!("{STATS_HEADER}\n{STATS_COLUMNS}\nx,1,2\n");
        assert!(matches!(
            StatsTable::from_csv_reader(bad_row.as_bytes()),
            Err(CompareError::BadRow { .. })
        ));
    }

    #[test]
    fn metrics_files_are_detected_by_header() {
        let dir = tempfile::tempdir().unwrap();

        let report_path = dir.path().join("report.csv");
        std::fs::write(&report_path, small_report().to_csv_string()).unwrap();
        let m = load_metrics(&report_path).unwrap();
        assert!(m.get("mean_fps").is_some());

        let stats_path = dir.path().join("stats.csv");
        let mut table = StatsTable::new();
        table.push("tr_rtp_down", sample_stats()).unwrap();
        std::fs::write(&stats_path, table.to_csv_string()).unwrap();
        let m = load_metrics(&stats_path).unwrap();
        assert!(m.get("tr_rtp_down.load_mbps").is_some());

        let junk_path = dir.path().join("junk.csv");
        std::fs::write(&junk_path, "second,rtt\n0,1\n").unwrap();
        assert!(matches!(
            load_metrics(&junk_path),
            Err(CompareError::UnknownFileKind { .. })
        ));
    }
}
