mod common;

use std::sync::Arc;

use hemicap::coverage::build_hemisphere_layout;
use hemicap::simcam::{
    random_walk_trajectory, run_replay, run_simulated_session, scripted_trajectory, ReplayFrame, SimError,
    SimulationOptions,
};
use hemicap::{Engine, HitThresholds, ManualClock, Mode, SessionConfig, Store};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn engine(root: &std::path::Path) -> (Engine, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(0));
    (Engine::new(Store::open(root).unwrap(), clock.clone()), clock)
}

#[test]
fn noisy_random_walk_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, clock) = engine(dir.path());
    let config = SessionConfig::new(25, Mode::NoHemisphere);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let walk = random_walk_trajectory(50_000, 0.45, 0.75, 0.0, &mut rng);
    let opts = SimulationOptions { noise_px: 0.5, seed: 1, max_submissions: 50_000, ..Default::default() };
    let run = run_simulated_session(&engine, &clock, config, &walk, &opts).unwrap();
    assert_eq!(run.results.iter().filter(|r| r.hit.is_some()).count(), 25);
    let rates: Vec<f64> = run.results.iter().map(|r| r.rate_percent).collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*rates.last().unwrap(), 100.0);
    let manifest = engine.store().load_session(&run.session_id).unwrap();
    assert_eq!(manifest.frames.len(), 25);
    assert!(dir.path().join(&run.session_id).join("annotations.json").is_file());
}

#[test]
fn heavy_noise_completes_with_wider_center_radius() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, clock) = engine(dir.path());
    let mut config = SessionConfig::new(40, Mode::Full);
    let default_px = config.resolved_thresholds().center_px_radius;
    config.thresholds = Some(HitThresholds { center_px_radius: 1.5 * default_px, min_distance: 0.3, max_distance: 1.5 });
    let layout = build_hemisphere_layout(40, config.display_radius).unwrap();
    let trajectory = scripted_trajectory(&layout, 1.5).unwrap();
    let opts = SimulationOptions { noise_px: 2.0, seed: 7, max_submissions: 40 * 200, ..Default::default() };
    let run = run_simulated_session(&engine, &clock, config, &trajectory, &opts).unwrap();
    assert!(run.results.last().unwrap().finished);
}

#[test]
fn unfinished_trajectory_reports_budget() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, clock) = engine(dir.path());
    let config = SessionConfig::new(20, Mode::Full);
    let layout = build_hemisphere_layout(20, config.display_radius).unwrap();
    let mut trajectory = scripted_trajectory(&layout, 1.5).unwrap();
    trajectory.truncate(10);
    let opts = SimulationOptions { max_submissions: 30, ..Default::default() };
    let err = run_simulated_session(&engine, &clock, config, &trajectory, &opts).unwrap_err();
    assert!(matches!(err, SimError::NotFinished(30)));
}

#[test]
fn replay_file_reproduces_the_session() {
    let config = SessionConfig::new(30, Mode::NoRate);
    let layout = build_hemisphere_layout(30, config.display_radius).unwrap();
    let trajectory = scripted_trajectory(&layout, 1.4).unwrap();
    let opts = SimulationOptions { noise_px: 0.5, seed: 3, session_id: Some("rec".into()), ..Default::default() };

    let a = tempfile::tempdir().unwrap();
    let (engine_a, clock_a) = engine(a.path());
    let recorded = run_simulated_session(&engine_a, &clock_a, config.clone(), &trajectory, &opts).unwrap();

    let file = serde_json::to_string(&recorded.replay).unwrap();
    let frames: Vec<ReplayFrame> = serde_json::from_str(&file).unwrap();
    assert_eq!(frames, recorded.replay);

    let b = tempfile::tempdir().unwrap();
    let (engine_b, clock_b) = engine(b.path());
    let replayed = run_replay(&engine_b, &clock_b, config, &frames, Some("rec".into())).unwrap();
    assert_eq!(replayed.results, recorded.results);
    assert_eq!(replayed.capture_time_s, recorded.capture_time_s);
    assert_eq!(common::tree_bytes(a.path()), common::tree_bytes(b.path()));
}

#[test]
fn restart_mid_session_resumes_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = SessionConfig::new(20, Mode::Full);
    let layout = build_hemisphere_layout(20, config.display_radius).unwrap();
    let trajectory = scripted_trajectory(&layout, 1.5).unwrap();
    let reference = {
        let other = tempfile::tempdir().unwrap();
        let (e, c) = engine(other.path());
        let opts = SimulationOptions { session_id: Some("r".into()), ..Default::default() };
        run_simulated_session(&e, &c, config.clone(), &trajectory, &opts).unwrap()
    };

    let (first, clock) = engine(dir.path());
    let half = &reference.replay[..10];
    let rest = &reference.replay[10..];
    let err = run_replay(&first, &clock, config.clone(), half, Some("r".into())).unwrap_err();
    assert!(matches!(err, SimError::NotFinished(10)));
    drop(first);

    let (second, clock) = engine(dir.path());
    let mut last = None;
    for frame in rest {
        clock.set(hemicap::session::COUNTDOWN_MS + frame.timestamp_ms);
        last = Some(second.submit_frame("r", hemicap::datastore::PLACEHOLDER_PNG, &frame.observations).unwrap());
    }
    let last = last.unwrap();
    assert!(last.finished);
    assert_eq!(last.rate_percent, 100.0);
    assert_eq!(second.store().load_session("r").unwrap().frames.len(), 20);
}
