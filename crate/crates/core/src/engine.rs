//! Multi-session engine: owns live sessions, the store and the clock.
//!
//! Each session sits behind its own mutex, so frames for one session are
//! applied strictly one at a time while distinct sessions proceed in
//! parallel. Status reads take the same lock and never see a half-applied
//! frame.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::datastore::{is_safe_id, persist_frame, DatasetManifest, Store, StoreError};
use crate::session::{
    ConfigError, FrameResult, Phase, RankingEntry, Session, SessionConfig, SessionError,
    SessionStatus,
};
use crate::MarkerObservation;

pub trait Clock: Send + Sync {
    /// Milliseconds on a monotone-enough timeline (Unix time for the server).
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock advanced by hand; used by the simulator and tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) -> u64 {
        self.0.fetch_add(ms, Ordering::SeqCst) + ms
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("session is {phase}, expected {expected}")]
    WrongPhase { phase: Phase, expected: Phase },
    #[error("session not finished")]
    NotFinished,
    #[error("session id conflict: {0}")]
    Conflict(String),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Session(SessionError),
}

impl From<SessionError> for EngineError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(c) => EngineError::Config(c),
            SessionError::WrongPhase { phase, expected } => EngineError::WrongPhase { phase, expected },
            SessionError::Store(s) => EngineError::from(s),
            other => EngineError::Session(other),
        }
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => EngineError::NotFound(id),
            StoreError::Precondition(_) => EngineError::NotFinished,
            other => EngineError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StartOptions {
    /// Explicit session id; generated from the clock when absent.
    pub session_id: Option<String>,
    /// Mark the dataset as simulator output.
    pub synthetic: bool,
}

struct Live {
    session: Session,
    synthetic: bool,
}

pub struct Engine {
    store: Store,
    clock: Arc<dyn Clock>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Live>>>>,
    ranking_lock: Mutex<()>,
    seq: AtomicU64,
}

impl Engine {
    pub fn new(store: Store, clock: Arc<dyn Clock>) -> Self {
        Engine {
            store,
            clock,
            sessions: RwLock::new(HashMap::new()),
            ranking_lock: Mutex::new(()),
            seq: AtomicU64::new(0),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn start_session(&self, config: SessionConfig) -> Result<String, EngineError> {
        self.start_session_with(config, StartOptions::default())
    }

    pub fn start_session_with(&self, config: SessionConfig, opts: StartOptions) -> Result<String, EngineError> {
        config.validate()?;
        let now = self.clock.now_ms();
        let id = match opts.session_id {
            Some(id) => {
                if !is_safe_id(&id) {
                    return Err(EngineError::Conflict(format!("invalid session id '{id}'")));
                }
                id
            }
            None => self.fresh_id(now),
        };
        let mut sessions = self.sessions.write().expect("session map poisoned");
        if sessions.contains_key(&id) || self.store.exists(&id) {
            return Err(EngineError::Conflict(id));
        }
        let session = Session::start(id.clone(), config, now)?;
        self.store.create_session(&DatasetManifest::from_session(&session, opts.synthetic))?;
        sessions.insert(id.clone(), Arc::new(Mutex::new(Live { session, synthetic: opts.synthetic })));
        Ok(id)
    }

    fn fresh_id(&self, now: u64) -> String {
        loop {
            let n = self.seq.fetch_add(1, Ordering::SeqCst);
            let id = format!("s{now:013}-{n:04}");
            if !self.store.exists(&id) {
                return id;
            }
        }
    }

    fn live(&self, id: &str) -> Result<Arc<Mutex<Live>>, EngineError> {
        if let Some(s) = self.sessions.read().expect("session map poisoned").get(id) {
            return Ok(Arc::clone(s));
        }
        // not in memory: rehydrate from disk
        let manifest = self.store.load_session(id)?;
        let synthetic = manifest.synthetic;
        let session = manifest.to_session()?;
        let mut sessions = self.sessions.write().expect("session map poisoned");
        let entry = sessions
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(Live { session, synthetic })));
        Ok(Arc::clone(entry))
    }

    pub fn submit_frame(
        &self,
        id: &str,
        image: &[u8],
        observations: &[MarkerObservation],
    ) -> Result<FrameResult, EngineError> {
        let live = self.live(id)?;
        let mut guard = live.lock().expect("session poisoned");
        let now = self.clock.now_ms();
        let dir = self.store.session_dir(id);
        let result = guard
            .session
            .submit_frame(observations, now, |record| persist_frame(&dir, image, record).map(|_| ()))?;
        if result.finished {
            let manifest = DatasetManifest::from_session(&guard.session, guard.synthetic);
            self.store.finalize_session(&manifest)?;
            drop(guard);
            let _rank = self.ranking_lock.lock().expect("ranking lock poisoned");
            self.store.refresh_ranking()?;
        }
        Ok(result)
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus, EngineError> {
        let live = self.live(id)?;
        let mut guard = live.lock().expect("session poisoned");
        let now = self.clock.now_ms();
        guard.session.tick(now);
        Ok(guard.session.status(now))
    }

    /// Copy of the session's current state.
    pub fn snapshot(&self, id: &str) -> Result<Session, EngineError> {
        let live = self.live(id)?;
        let guard = live.lock().expect("session poisoned");
        Ok(guard.session.clone())
    }

    pub fn ranking(&self) -> Result<Vec<RankingEntry>, EngineError> {
        Ok(self.store.ranking()?)
    }

    /// COCO JSON of a finished session, identical to the exported file.
    pub fn annotations(&self, id: &str) -> Result<String, EngineError> {
        let manifest = self.store.load_session(id)?;
        if !manifest.is_finished() {
            return Err(EngineError::NotFinished);
        }
        Ok(crate::datastore::export_annotations(&self.store.session_dir(id))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Mode;

    #[test]
    fn lifecycle_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let engine = Engine::new(Store::open(tmp.path()).unwrap(), clock.clone());
        assert!(matches!(engine.status("missing"), Err(EngineError::NotFound(_))));
        assert!(matches!(
            engine.start_session(SessionConfig::new(0, Mode::Full)),
            Err(EngineError::Config(_))
        ));
        let id = engine.start_session(SessionConfig::new(4, Mode::Full)).unwrap();
        assert!(matches!(engine.submit_frame(&id, &[], &[]), Err(EngineError::WrongPhase { .. })));
        assert!(matches!(engine.annotations(&id), Err(EngineError::NotFinished)));
        clock.set(5_000);
        let st = engine.status(&id).unwrap();
        assert_eq!(st.phase, Phase::Capturing);
        let r = engine.submit_frame(&id, &[], &[]).unwrap();
        assert!(!r.marker_found);

        let dup = engine.start_session_with(
            SessionConfig::new(4, Mode::Full),
            StartOptions { session_id: Some(id.clone()), synthetic: false },
        );
        assert!(matches!(dup, Err(EngineError::Conflict(_))));
    }

    #[test]
    fn rehydrates_from_disk() {
        let tmp = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let id = {
            let engine = Engine::new(Store::open(tmp.path()).unwrap(), clock.clone());
            engine.start_session(SessionConfig::new(4, Mode::NoRate)).unwrap()
        };
        let engine = Engine::new(Store::open(tmp.path()).unwrap(), clock.clone());
        let st = engine.status(&id).unwrap();
        assert_eq!(st.mode, Mode::NoRate);
        assert!(!st.show_rate);
    }
}
