use std::collections::BTreeMap;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use hemicap::coverage::build_hemisphere_layout;
use hemicap::metrics::{format_trial_table, format_variability_table, variability_report, VariabilityRow};
use hemicap::simcam::{
    random_walk_trajectory, run_replay, run_simulated_session, scripted_trajectory, ReplayFrame, SimulationOptions,
    SimulationRun, TrajectorySpec,
};
use hemicap::{Engine, HitThresholds, ManualClock, Mode, SessionConfig, Store, SystemClock};
use rand::SeedableRng;

const STORE_ROOT_ENV: &str = "HEMICAP_STORE_ROOT";

/// Marker-based bounding-box capture with hemisphere coverage guidance.
#[derive(Debug, Parser)]
#[command(name = "hemicap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// TCP port to listen on.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Dataset directory.
        #[arg(long, env = STORE_ROOT_ENV, default_value = "hemicap-data")]
        store_root: PathBuf,
    },
    /// Run a simulated session end to end; prints one frame result per line.
    Simulate {
        /// Display mode: full, no-hm, no-cr or no-et.
        #[arg(long)]
        mode: Option<Mode>,
        /// Number of images to collect (hemisphere patches). Default 100.
        #[arg(long)]
        n: Option<u32>,
        /// Gaussian corner noise, pixels.
        #[arg(long, default_value_t = 0.0)]
        noise_px: f64,
        /// RNG seed for noise and random-walk trajectories.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Session config JSON; --mode and --n override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trajectory JSON (`frame_interval_ms`, `camera_from_layout`).
        /// Defaults to one scripted pose per patch.
        #[arg(long, conflicts_with_all = ["random_walk", "replay"])]
        trajectory: Option<PathBuf>,
        /// Use a seeded random walk around the hemisphere instead.
        #[arg(long, conflicts_with = "replay")]
        random_walk: bool,
        /// Replay a recorded frame stream instead of synthesizing one.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Write the submitted frame stream as a replay file.
        #[arg(long)]
        replay_out: Option<PathBuf>,
        /// Override the hit radius around the image center, pixels.
        #[arg(long)]
        center_px_radius: Option<f64>,
        /// Give up after this many frames.
        #[arg(long, default_value_t = 100_000)]
        max_submissions: usize,
        /// Milliseconds between frames.
        #[arg(long, default_value_t = 100)]
        frame_interval_ms: u64,
        /// Keep the dataset here instead of a temporary directory.
        #[arg(long, env = STORE_ROOT_ENV)]
        store_root: Option<PathBuf>,
    },
    /// Print viewpoint variability and per-participant ID rates.
    Report {
        #[arg(long, env = STORE_ROOT_ENV)]
        store_root: PathBuf,
        /// Only this session.
        #[arg(long)]
        session: Option<String>,
    },
    /// Write the hemisphere patch layout as JSON.
    Layout {
        /// Number of patches (at least 2).
        #[arg(long)]
        n: usize,
        /// Hemisphere radius, meters.
        #[arg(long, default_value_t = 0.4)]
        radius: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Bad input is a usage error (exit 1); anything else is a runtime error (exit 2).
enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(runtime),
    }
}

fn serve(host: IpAddr, port: u16, store_root: PathBuf) -> Result<(), Failure> {
    let store = Store::open(&store_root).map_err(runtime)?;
    let engine = Arc::new(Engine::new(store, Arc::new(SystemClock)));
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(hemicap_service::serve(SocketAddr::new(host, port), engine)).map_err(runtime)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    mode: Option<Mode>,
    n: Option<u32>,
    noise_px: f64,
    seed: u64,
    config: Option<PathBuf>,
    trajectory: Option<PathBuf>,
    random_walk: bool,
    replay: Option<PathBuf>,
    replay_out: Option<PathBuf>,
    center_px_radius: Option<f64>,
    max_submissions: usize,
    frame_interval_ms: u64,
    store_root: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = match &config {
        Some(path) => read_json::<SessionConfig>(path)?,
        None => SessionConfig::new(100, Mode::Full),
    };
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if let Some(n) = n {
        cfg.target_count = n;
    }
    if let Some(px) = center_px_radius {
        let base = cfg.resolved_thresholds();
        cfg.thresholds = Some(HitThresholds { center_px_radius: px, ..base });
    }
    cfg.validate().map_err(usage)?;
    if !(noise_px.is_finite() && noise_px >= 0.0) {
        return Err(usage("--noise-px must be a non-negative number"));
    }

    let scratch;
    let root = match store_root {
        Some(root) => root,
        None => {
            scratch = tempfile::tempdir().map_err(runtime)?;
            scratch.path().to_path_buf()
        }
    };
    let clock = Arc::new(ManualClock::new(0));
    let engine = Engine::new(Store::open(&root).map_err(runtime)?, clock.clone());

    let run: SimulationRun = if let Some(path) = replay {
        let frames: Vec<ReplayFrame> = read_json(&path)?;
        run_replay(&engine, &clock, cfg, &frames, None).map_err(runtime)?
    } else {
        let (poses, interval) = if let Some(path) = trajectory {
            let spec: TrajectorySpec = read_json(&path)?;
            (spec.camera_from_layout, spec.frame_interval_ms)
        } else if random_walk {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (random_walk_trajectory(max_submissions, 0.45, 0.75, 0.0, &mut rng), frame_interval_ms)
        } else {
            let layout = build_hemisphere_layout(cfg.target_count as usize, cfg.display_radius).map_err(usage)?;
            (scripted_trajectory(&layout, 1.5).map_err(runtime)?, frame_interval_ms)
        };
        let opts = SimulationOptions { noise_px, seed, frame_interval_ms: interval, max_submissions, session_id: None };
        run_simulated_session(&engine, &clock, cfg, &poses, &opts).map_err(runtime)?
    };

    let mut out = String::new();
    out.push_str(&format!("session {}\n", run.session_id));
    for result in &run.results {
        out.push_str(&serde_json::to_string(result).map_err(runtime)?);
        out.push('\n');
    }
    out.push_str(&format!("submissions {}\n", run.submissions()));
    out.push_str(&format!("capture_time_s {:.3}\n", run.capture_time_s));
    write_output(None, &out)?;
    if let Some(path) = replay_out {
        let text = serde_json::to_string_pretty(&run.replay).map_err(runtime)? + "\n";
        write_output(Some(&path), &text)?;
    }
    Ok(())
}

fn report(store_root: PathBuf, session: Option<String>) -> Result<(), Failure> {
    if !store_root.is_dir() {
        return Err(usage(format!("{}: not a directory", store_root.display())));
    }
    let store = Store::open(&store_root).map_err(runtime)?;
    let manifests = match &session {
        Some(id) => vec![store.load_session(id).map_err(runtime)?],
        None => store.list_sessions().map_err(runtime)?,
    };
    let with_frames: Vec<_> = manifests.iter().filter(|m| !m.frames.is_empty()).collect();
    if with_frames.is_empty() {
        println!("no sessions");
        return Ok(());
    }

    let mut reports = Vec::new();
    for m in &with_frames {
        let poses: Vec<_> = m.frames.iter().map(|f| f.cam_from_layout).collect();
        let marker = m.config.layout_from_marker.rotation;
        reports.push((m.session_id.as_str(), variability_report(&poses, &marker).map_err(runtime)?));
    }
    let rows: Vec<VariabilityRow<'_, f64>> =
        reports.iter().map(|(label, report)| VariabilityRow { label, report }).collect();
    print!("{}", format_variability_table(&rows));

    // Trials in finishing order, grouped by participant and mode.
    let mut finished: Vec<_> = manifests.iter().filter_map(|m| m.summary().map(|s| (m, s))).collect();
    finished.sort_by_key(|(_, s)| (s.finished_at_ms, s.session_id.clone()));
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (m, s) in finished {
        let who = m.config.participant.as_deref().unwrap_or("-");
        groups.entry(format!("{who} / {}", s.mode)).or_default().push(s.capture_time_s);
    }
    if !groups.is_empty() {
        println!();
        print!("{}", format_trial_table(&groups.into_iter().collect::<Vec<_>>()));
    }
    Ok(())
}

fn layout(n: usize, radius: f64, out: Option<PathBuf>) -> Result<(), Failure> {
    let layout = build_hemisphere_layout(n, radius).map_err(usage)?;
    let text = serde_json::to_string_pretty(&layout).map_err(runtime)? + "\n";
    write_output(out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let outcome = match cli.command {
        Command::Serve { port, host, store_root } => serve(host, port, store_root),
        Command::Simulate {
            mode,
            n,
            noise_px,
            seed,
            config,
            trajectory,
            random_walk,
            replay,
            replay_out,
            center_px_radius,
            max_submissions,
            frame_interval_ms,
            store_root,
        } => simulate(
            mode,
            n,
            noise_px,
            seed,
            config,
            trajectory,
            random_walk,
            replay,
            replay_out,
            center_px_radius,
            max_submissions,
            frame_interval_ms,
            store_root,
        ),
        Command::Report { store_root, session } => report(store_root, session),
        Command::Layout { n, radius, out } => layout(n, radius, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
