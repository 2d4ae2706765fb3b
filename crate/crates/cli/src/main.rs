//! Command-line front end for the cloudgame toolkit: analyze captured
//! traces, fit generator parameters, synthesize traffic, run closed-loop
//! session simulations and compare results against target files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cloudgame::analyzer::summary_stats;
use cloudgame::compare::{compare, load_metrics, StatsTable, TargetSet};
use cloudgame::fit::fit_generator_params;
use cloudgame::generator::{generate_session, GeneratorParams};
use cloudgame::presets::{all_builtin, builtin, Preset};
use cloudgame::sim::{self, Scenario};
use cloudgame::trace::{
    Column, DatasetId, Direction, Game, Protocol, StreamMeta, Trace,
};
use cloudgame::DatasetManifest;

#[derive(Parser)]
#[command(name = "cloudgame", version, about = "Cloud-gaming traffic toolkit")]
struct Cli {
    /// Output format for tabular results (analyze, simulate, compare).
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize the streams of a captured dataset into a stats table.
    Analyze {
        /// Dataset manifest (TOML) declaring the trace files.
        manifest: PathBuf,
        /// Keep only matching streams: `game,protocol,direction` with empty
        /// segments as wildcards (e.g. `TR,,downlink` or `,stun,`).
        #[arg(long)]
        filter: Option<String>,
        /// Directory trace paths are relative to; defaults to the manifest's.
        #[arg(long)]
        base_dir: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit generator parameters to a downlink media trace.
    Fit {
        /// Trace file (whitespace-separated columns).
        trace: PathBuf,
        /// Column meaning by position, e.g. `Y1,Y2,Y3`.
        #[arg(long, default_value = "Y1,Y2,Y3")]
        schema: String,
        /// Game label for the trace (TR, TH or SP).
        #[arg(long, default_value = "TR")]
        game: String,
        /// Treat the trace as video-only: skip audio separation.
        #[arg(long)]
        no_audio: bool,
        /// Output file for the fitted parameters (TOML); stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Synthesize a downlink media trace from parameters or a preset.
    Generate {
        /// Parameters file (TOML) as written by `fit`, or a built-in preset
        /// name (see `cloudgame presets`).
        params: String,
        /// Seconds of traffic to synthesize.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Overrides the seed baked into the parameters.
        #[arg(long)]
        seed: Option<u64>,
        /// Output trace file (3-column text); stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a closed-loop session simulation from a scenario file.
    Simulate {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Output report file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a metrics file against a targets file; exits 1 on failure.
    Compare {
        /// Measured metrics: a simulation report or a stats table (CSV).
        metrics: PathBuf,
        /// Targets file (TOML) with tolerances.
        targets: PathBuf,
    },
    /// List the built-in presets.
    Presets,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            // A closed pipe (`cloudgame ... | head`) is not a failure.
            if let Some(io) = err.root_cause().downcast_ref::<std::io::Error>() {
                if io.kind() == std::io::ErrorKind::BrokenPipe {
                    return ExitCode::SUCCESS;
                }
            }
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let format = cli.format;
    match cli.command {
        Command::Analyze { manifest, filter, base_dir, output } => {
            cmd_analyze(&manifest, filter.as_deref(), base_dir.as_deref(), output.as_deref(), format)?
        }
        Command::Fit { trace, schema, game, no_audio, output } => {
            cmd_fit(&trace, &schema, &game, no_audio, output.as_deref())?
        }
        Command::Generate { params, duration, seed, output } => {
            cmd_generate(&params, duration, seed, output.as_deref())?
        }
        Command::Simulate { scenario, output } => {
            cmd_simulate(&scenario, output.as_deref(), format)?
        }
        Command::Compare { metrics, targets } => return cmd_compare(&metrics, &targets, format),
        Command::Presets => cmd_presets()?,
    }
    Ok(ExitCode::SUCCESS)
}

/// Opens the output sink: a file when given, stdout otherwise.
fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(
            std::fs::File::create(p)
                .with_context(|| format!("creating {}", p.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn parse_game(s: &str) -> Result<Game> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "tr" => Game::TR,
        "th" => Game::TH,
        "sp" => Game::SP,
        _ => bail!("unknown game {s:?}, expected TR, TH or SP"),
    })
}

fn parse_protocol(s: &str) -> Result<Protocol> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "rtp" => Protocol::Rtp,
        "rtcp" => Protocol::Rtcp,
        "dtls" => Protocol::Dtls,
        "stun" => Protocol::Stun,
        "mixed" => Protocol::Mixed,
        _ => bail!("unknown protocol {s:?}, expected RTP, RTCP, DTLS, STUN or mixed"),
    })
}

fn parse_direction(s: &str) -> Result<Direction> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "down" | "downlink" => Direction::Downlink,
        "up" | "uplink" => Direction::Uplink,
        _ => bail!("unknown direction {s:?}, expected downlink or uplink"),
    })
}

/// `game,protocol,direction` with empty segments (or missing trailing
/// segments) matching anything.
fn parse_filter(s: &str) -> Result<(Option<Game>, Option<Protocol>, Option<Direction>)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() > 3 {
        bail!("filter {s:?} has more than three segments");
    }
    let seg = |i: usize| parts.get(i).map(|p| p.trim()).filter(|p| !p.is_empty());
    Ok((
        seg(0).map(parse_game).transpose()?,
        seg(1).map(parse_protocol).transpose()?,
        seg(2).map(parse_direction).transpose()?,
    ))
}

/// Row key for a stream: `tr_rtp_down` and the like.
fn stream_name(meta: &StreamMeta) -> String {
    let game = match meta.game {
        Game::TR => "tr",
        Game::TH => "th",
        Game::SP => "sp",
    };
    let proto = match meta.protocol {
        Protocol::Rtp => "rtp",
        Protocol::Rtcp => "rtcp",
        Protocol::Dtls => "dtls",
        Protocol::Stun => "stun",
        Protocol::Mixed => "mixed",
    };
    let dir = match meta.direction {
        Direction::Downlink => "down",
        Direction::Uplink => "up",
    };
    format!("{game}_{proto}_{dir}")
}

fn cmd_analyze(
    manifest_path: &Path,
    filter: Option<&str>,
    base_dir: Option<&Path>,
    output: Option<&Path>,
    format: Format,
) -> Result<()> {
    let manifest = DatasetManifest::from_path(manifest_path)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let base = match base_dir {
        Some(dir) => dir.to_path_buf(),
        None => manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let dataset = manifest
        .load_dataset(&base)
        .with_context(|| format!("loading traces relative to {}", base.display()))?;

    let (game, protocol, direction) = match filter {
        Some(f) => parse_filter(f)?,
        None => (None, None, None),
    };

    let mut table = StatsTable::new();
    let mut seen = std::collections::HashMap::new();
    for trace in dataset.query(game, protocol, direction) {
        let stats = summary_stats(trace)
            .with_context(|| format!("summarizing {}", trace.meta()))?;
        let base_name = stream_name(trace.meta());
        // Repeated capture sessions of one stream get numbered suffixes so
        // every row keeps a unique key.
        let n = seen.entry(base_name.clone()).or_insert(0u32);
        *n += 1;
        let name = if *n == 1 { base_name } else { format!("{base_name}_{n}") };
        table.push(name, stats)?;
    }
    if table.is_empty() {
        bail!("no streams matched the filter");
    }

    let mut out = open_output(output)?;
    match format {
        Format::Csv => table.write_csv(&mut out)?,
        Format::Json => {
            let rows: Vec<serde_json::Value> = table
                .rows()
                .map(|(name, stats)| {
                    let mut v = serde_json::to_value(stats).expect("stats serialize");
                    v["stream"] = serde_json::Value::from(name);
                    v
                })
                .collect();
            serde_json::to_writer_pretty(&mut out, &rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn cmd_fit(
    trace_path: &Path,
    schema: &str,
    game: &str,
    no_audio: bool,
    output: Option<&Path>,
) -> Result<()> {
    let schema: Vec<Column> = schema
        .split(',')
        .map(|s| s.trim().parse().map_err(anyhow::Error::msg))
        .collect::<Result<_>>()?;
    let meta = StreamMeta {
        game: parse_game(game)?,
        protocol: Protocol::Rtp,
        direction: Direction::Downlink,
        codec: None,
        resolution: None,
        dataset: DatasetId::D1,
    };
    let trace = Trace::from_path(meta, trace_path, &schema)
        .with_context(|| format!("loading trace {}", trace_path.display()))?;
    let params = fit_generator_params(&trace, !no_audio)?;
    let text = toml::to_string_pretty(&params).context("serializing parameters")?;
    let mut out = open_output(output)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_generate(
    params: &str,
    duration: f64,
    seed: Option<u64>,
    output: Option<&Path>,
) -> Result<()> {
    let path = Path::new(params);
    let (mut params, meta) = if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let params: GeneratorParams = toml::from_str(&text).context("parameter file syntax")?;
        let meta = StreamMeta {
            game: Game::TR,
            protocol: Protocol::Rtp,
            direction: Direction::Downlink,
            codec: None,
            resolution: None,
            dataset: DatasetId::D2,
        };
        (params, meta)
    } else {
        let preset = builtin(params).with_context(|| {
            format!("{params:?} is neither a file nor a built-in preset name")
        })?;
        let meta = preset.stream_meta(Protocol::Rtp, Direction::Downlink, DatasetId::D2);
        (preset.params, meta)
    };
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let trace = generate_session(&params, duration, meta)?;
    let mut out = open_output(output)?;
    trace.write_text(&mut out)?;
    Ok(())
}

fn cmd_simulate(scenario_path: &Path, output: Option<&Path>, format: Format) -> Result<()> {
    let scenario = Scenario::from_path(scenario_path)
        .with_context(|| format!("loading scenario {}", scenario_path.display()))?;
    let report = sim::run(&scenario)?;
    let mut out = open_output(output)?;
    match format {
        Format::Csv => report.write_csv(&mut out)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn cmd_compare(metrics_path: &Path, targets_path: &Path, format: Format) -> Result<ExitCode> {
    let targets = TargetSet::from_path(targets_path)
        .with_context(|| format!("loading targets {}", targets_path.display()))?;
    let metrics = load_metrics(metrics_path)
        .with_context(|| format!("loading metrics {}", metrics_path.display()))?;
    let report = compare(&targets, &metrics)?;
    match format {
        Format::Csv => print!("{}", report.to_text()),
        Format::Json => {
            let rows: Vec<serde_json::Value> = report
                .rows
                .iter()
                .map(|r| {
                    let (lo, hi) = r.tolerance.bounds();
                    serde_json::json!({
                        "name": r.name,
                        "value": r.value,
                        "lo": lo,
                        "hi": hi,
                        "pass": r.pass,
                    })
                })
                .collect();
            let doc = serde_json::json!({ "pass": report.pass, "rows": rows });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_presets() -> Result<()> {
    let mut out = std::io::stdout().lock();
    for (name, preset) in all_builtin() {
        let Preset { game, codec, resolution, nominal_media_mbps, .. } = preset;
        writeln!(
            out,
            "{name:<14} {game:?} {resolution} {codec:?} ~{nominal_media_mbps:.2} Mbit/s media"
        )?;
    }
    Ok(())
}
