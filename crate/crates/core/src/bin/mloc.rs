//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 pipeline
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mloc_core::builder::{build_map, BuildConfig};
use mloc_core::detect::{detect_stops, segment_trace, DetectorConfig};
use mloc_core::error::{BuildError, DetectError, EvalError, IoError, LocateError, SimError};
use mloc_core::eval::{run_eval, terminus_hints, EvalConfig};
use mloc_core::io;
use mloc_core::locator::{locate_trace, LocationEstimate, StreamingLocator};
use mloc_core::matching::MatchConfig;
use mloc_core::model::{TraceEvent, UserTrace};
use mloc_core::sim::{gen_corpus, gen_world, CorpusConfig};

#[derive(Parser)]
#[command(name = "mloc", version, about = "Metro train localization from phone sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and labeled recordings.
    Simulate {
        #[arg(long)]
        metro: PathBuf,
        #[arg(long, default_value_t = 162)]
        trips: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Seed of the latent tunnel profiles; defaults to --seed. Reuse it
        /// to draw a fresh corpus in the same world.
        #[arg(long)]
        world_seed: Option<u64>,
        /// Share of devices that carry a barometer.
        #[arg(long, default_value_t = CorpusConfig::default().barometer_fraction)]
        baro_fraction: f64,
        /// Expected mid-tunnel halts per tunnel.
        #[arg(long, default_value_t = CorpusConfig::default().decoy_decel_rate)]
        decoy_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one recording into stop and running events.
    Detect {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a pattern map from a directory of recordings.
    BuildMap {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        metro: PathBuf,
        #[arg(long)]
        hints: Option<PathBuf>,
        #[arg(long, default_value_t = BuildConfig::default().min_overlap)]
        min_overlap: usize,
        #[arg(long, default_value_t = MatchConfig::default().dtw_threshold)]
        dtw_threshold: f64,
        /// Skip re-anchoring after every trace; the map then has no coverage curve.
        #[arg(long)]
        no_coverage_curve: bool,
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Locate the rider of one recording on a map.
    Locate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Report an estimate after every running event.
        #[arg(long)]
        stream: bool,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Score a map against a simulated world and write CSV tables.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = EvalConfig::default().max_tunnels)]
        max_tunnels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DetectorArgs {
    /// Acceleration variation (m/s²) above which a crest starts.
    #[arg(long, default_value_t = DetectorConfig::default().accel_crest_threshold)]
    crest_threshold: f64,
    /// Acceleration variation (m/s²) below which the train is quiet.
    #[arg(long, default_value_t = DetectorConfig::default().accel_stable_threshold)]
    stable_threshold: f64,
    /// Minimum quiet time for a stop.
    #[arg(long, default_value_t = DetectorConfig::default().stable_min_seconds)]
    stable_seconds: f64,
    /// Minimum pressure step (hPa) taken as a door event.
    #[arg(long, default_value_t = DetectorConfig::default().baro_step_threshold)]
    baro_step: f64,
    /// Accept acceleration candidates without a door pressure signature.
    #[arg(long)]
    no_baro_confirm: bool,
}

impl DetectorArgs {
    fn config(&self) -> Result<DetectorConfig, Failure> {
        let cfg = DetectorConfig {
            accel_crest_threshold: self.crest_threshold,
            accel_stable_threshold: self.stable_threshold,
            stable_min_seconds: self.stable_seconds,
            baro_step_threshold: self.baro_step,
            use_barometer: !self.no_baro_confirm,
            ..DetectorConfig::default()
        };
        cfg.validate().map_err(Failure::Usage)?;
        Ok(cfg)
    }
}

enum Failure {
    Usage(String),
    Data(String),
    Pipeline(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Pipeline(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Pipeline(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<DetectError> for Failure {
    fn from(e: DetectError) -> Self {
        Failure::Pipeline(e.to_string())
    }
}

impl From<LocateError> for Failure {
    fn from(e: LocateError) -> Self {
        Failure::Pipeline(e.to_string())
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::InvalidConfig(m) => Failure::Usage(m),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Input(_) => Failure::Data(e.to_string()),
            _ => Failure::Pipeline(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { metro, trips, seed, world_seed, baro_fraction, decoy_rate, out } => {
            let metro = io::read_topology(&metro)?;
            let world = gen_world(&metro, world_seed.unwrap_or(seed));
            let cfg = CorpusConfig {
                n_trips: trips,
                barometer_fraction: baro_fraction,
                decoy_decel_rate: decoy_rate,
                ..CorpusConfig::default()
            };
            let corpus = gen_corpus(&world, &cfg, seed.wrapping_add(1))?;
            let detector = DetectorConfig::default();
            let segmented: Vec<(UserTrace, _)> = corpus
                .iter()
                .filter_map(|t| segment_trace(&t.trace, &detector).ok().map(|ut| (ut, &t.truth)))
                .collect();
            let hints = terminus_hints(segmented.iter().map(|(ut, t)| (ut, *t)), &metro);
            let trips = corpus.into_iter().map(|t| (t.trace, t.truth)).collect();
            io::write_world(&out, &io::WorldDir { world, trips, hints })?;
            println!("wrote {} trips to {}", cfg.n_trips, out.display());
        }
        Command::Detect { trace, detector, out } => {
            let cfg = detector.config()?;
            let trace = io::read_trace(&trace)?;
            let detection = detect_stops(&trace, &cfg)?;
            let ut = segment_trace(&trace, &cfg)?;
            io::write_events_csv(&ut, &out)?;
            println!(
                "{}: {} candidate(s), {} stop(s), {} running event(s)",
                trace.trip_id,
                detection.candidates.len(),
                detection.stops.len(),
                ut.running_count()
            );
        }
        Command::BuildMap { traces, metro, hints, min_overlap, dtw_threshold, no_coverage_curve, detector, out } => {
            let detector = detector.config()?;
            let metro = io::read_topology(&metro)?;
            let hints = match hints {
                Some(p) => io::read_hints(&p)?,
                None => Vec::new(),
            };
            let raw = io::read_trace_dir(&traces)?;
            let mut uts = Vec::with_capacity(raw.len());
            for trace in &raw {
                match segment_trace(trace, &detector) {
                    Ok(ut) => uts.push(ut),
                    Err(e) => log::warn!("{}: skipped: {e}", trace.trip_id),
                }
            }
            let cfg = BuildConfig {
                matching: MatchConfig { dtw_threshold, ..MatchConfig::default() },
                min_overlap,
                track_coverage: !no_coverage_curve,
                ..BuildConfig::default()
            };
            let built = build_map(&uts, &metro, &cfg, &hints)?;
            if built.map.tunnel_patterns.is_empty() {
                let why: Vec<String> = built.anchors.components.iter().map(|c| format!("{:?}", c.outcome)).collect();
                return Err(Failure::Pipeline(format!("no component could be anchored: {}", why.join("; "))));
            }
            io::write_map(&built.map, &out)?;
            let s = &built.map.build_stats;
            println!(
                "{} traces, {} running events, {} components ({} anchored), coverage {}",
                s.traces,
                s.running_events,
                s.components,
                s.anchored_components,
                io::format_float(s.coverage)
            );
        }
        Command::Locate { map, trace, stream, detector } => {
            let detector = detector.config()?;
            let map = io::read_map(&map)?;
            let trace = io::read_trace(&trace)?;
            let ut = segment_trace(&trace, &detector)?;
            let cfg = &map.config.matching;
            if stream {
                let mut locator = StreamingLocator::new(&map, cfg)?;
                let mut last_stop = None;
                for e in &ut.events {
                    match e {
                        TraceEvent::Stop(s) => last_stop = Some(s),
                        TraceEvent::Running(re) => match locator.push(re, last_stop) {
                            Ok(est) => print_estimate(&est),
                            Err(LocateError::NoFix) => println!("events={} no fix", locator.events()),
                            Err(e) => return Err(e.into()),
                        },
                    }
                }
            } else {
                print_estimate(&locate_trace(&ut, &map, cfg)?);
            }
        }
        Command::Eval { world, map, max_tunnels, seed, detector, out } => {
            let detector = detector.config()?;
            let data = io::read_world(&world)?;
            let map = io::read_map(&map)?;
            let cfg = EvalConfig { detector, max_tunnels, seed, ..EvalConfig::default() };
            let report = run_eval(&data.world, &data.trips, &map, &cfg)?;
            io::write_report(&report, &out)?;
            for b in &report.localization {
                println!("after {} tunnel(s): {}/{} located", b.tunnels, b.correct, b.trips);
            }
        }
    }
    Ok(())
}

fn print_estimate(est: &LocationEstimate) {
    let path: Vec<String> = est.tunnel_path.iter().map(ToString::to_string).collect();
    println!(
        "events={} station={} confidence={} cost={} path={}",
        est.events_used,
        est.station_id,
        io::format_float(est.confidence),
        io::format_float(est.cost),
        path.join(",")
    );
}
