//! Session store: one engine worker thread per session, an append-only event
//! log per session directory, and recovery of unfinished sessions by replay.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Read};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use tokio::sync::oneshot;

use archdisc_core::engine::{ArchiveSnapshot, Engine, EngineConfig, FeedbackOutcome, GenerationStats, Tick};
use archdisc_core::error::ProtocolError;
use archdisc_core::interaction::{CandidateSet, FeedbackBundle, FeedbackEntry};
use archdisc_core::model::AnalysisModel;
use archdisc_core::par::Execution;
use archdisc_core::preferences::Preference;
use archdisc_core::session::{
    read_events, replay, Event, EventLog, EventRecord, FinishReason, RecordedSession, ReplayMode,
};

const EVENTS_FILE: &str = "events.jsonl";
const ARCHIVE_FILE: &str = "archive.json";

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("session is not awaiting feedback")]
    NotAwaiting,
    #[error(transparent)]
    Protocol(ProtocolError),
    #[error("{0} sessions are already active")]
    TooMany(usize),
    #[error(transparent)]
    Engine(#[from] archdisc_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("session worker is gone")]
    WorkerGone,
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> SessionError {
    let context = context.into();
    move |source| SessionError::Io { context, source }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Limit on sessions that are running or awaiting feedback.
    pub max_sessions: usize,
    /// Auto-submit "no preference" after this long at a stop.
    pub idle_timeout: Option<Duration>,
    pub execution: Execution,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), max_sessions: 4, idle_timeout: None, execution: Execution::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    AwaitingFeedback,
    Finished,
    Aborted,
}

impl SessionState {
    fn active(self) -> bool {
        matches!(self, SessionState::Running | SessionState::AwaitingFeedback)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionStatus {
    pub id: String,
    pub state: SessionState,
    pub seed: u64,
    pub generation: usize,
    pub total_generations: usize,
    pub evaluations: usize,
    pub max_evaluations: usize,
    /// Index of the next (or pending) interaction stop.
    pub stop: usize,
    pub stops: Vec<usize>,
    pub archive_size: usize,
    pub latest: Option<GenerationStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

enum Command {
    Feedback(FeedbackBundle, oneshot::Sender<Result<FeedbackOutcome, ProtocolError>>),
    Stop(oneshot::Sender<()>),
    Archive(oneshot::Sender<ArchiveSnapshot>),
}

struct Shared {
    status: SessionStatus,
    pending: Option<CandidateSet>,
    final_archive: Option<ArchiveSnapshot>,
}

pub struct Session {
    id: String,
    dir: PathBuf,
    shared: Mutex<Shared>,
    tx: Mutex<Option<Sender<Command>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> SessionStatus {
        self.shared.lock().unwrap().status.clone()
    }

    /// The pending candidate set, if the session is waiting at a stop.
    pub fn candidates(&self) -> Option<CandidateSet> {
        self.shared.lock().unwrap().pending.clone()
    }

    fn send(&self, cmd: Command) -> Result<(), SessionError> {
        let tx = self.tx.lock().unwrap();
        tx.as_ref().ok_or(SessionError::WorkerGone)?.send(cmd).map_err(|_| SessionError::WorkerGone)
    }

    pub async fn feedback(&self, bundle: FeedbackBundle) -> Result<FeedbackOutcome, SessionError> {
        if self.status().state != SessionState::AwaitingFeedback {
            return Err(SessionError::NotAwaiting);
        }
        let (reply, rx) = oneshot::channel();
        self.send(Command::Feedback(bundle, reply))?;
        match rx.await.map_err(|_| SessionError::WorkerGone)? {
            Ok(outcome) => Ok(outcome),
            Err(ProtocolError::NotAwaiting) => Err(SessionError::NotAwaiting),
            Err(e) => Err(SessionError::Protocol(e)),
        }
    }

    /// Ends the run. Stopping a finished session is a no-op.
    pub async fn stop(self: &Arc<Self>) -> Result<SessionStatus, SessionError> {
        if self.status().state.active() {
            let (reply, rx) = oneshot::channel();
            if self.send(Command::Stop(reply)).is_ok() {
                let _ = rx.await;
            }
            let s = self.clone();
            let _ = tokio::task::spawn_blocking(move || s.join()).await;
        }
        Ok(self.status())
    }

    pub async fn archive(&self) -> Result<ArchiveSnapshot, SessionError> {
        if let Some(a) = self.shared.lock().unwrap().final_archive.clone() {
            return Ok(a);
        }
        let (reply, rx) = oneshot::channel();
        self.send(Command::Archive(reply))?;
        match rx.await {
            Ok(a) => Ok(a),
            // the worker finished between the two checks
            Err(_) => self.shared.lock().unwrap().final_archive.clone().ok_or(SessionError::WorkerGone),
        }
    }

    /// Logged events with `seq >= since`, at most `limit` of them.
    pub fn events(&self, since: u64, limit: usize) -> Result<Vec<EventRecord>, SessionError> {
        let path = self.dir.join(EVENTS_FILE);
        let file = File::open(&path).map_err(io_err(format!("opening {}", path.display())))?;
        let events = read_events(BufReader::new(file)).map_err(|e| SessionError::Engine(e.into()))?;
        Ok(events.into_iter().filter(|r| r.seq >= since).take(limit).collect())
    }

    fn join(&self) {
        let handle = self.worker.lock().unwrap().take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    fn update(&self, f: impl FnOnce(&mut Shared)) {
        f(&mut self.shared.lock().unwrap());
    }
}

pub struct SessionManager {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionManager {
    /// Opens the data directory, resuming every unfinished session in it.
    pub fn open(cfg: ServiceConfig) -> Result<Self, SessionError> {
        fs::create_dir_all(&cfg.data_dir).map_err(io_err(format!("creating {}", cfg.data_dir.display())))?;
        let manager = Self { cfg, sessions: RwLock::new(HashMap::new()) };
        let entries = fs::read_dir(&manager.cfg.data_dir).map_err(io_err("listing the data directory"))?;
        let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(EVENTS_FILE).is_file()).collect();
        dirs.sort();
        for dir in dirs {
            match manager.recover(&dir) {
                Ok(session) => {
                    manager.sessions.write().unwrap().insert(session.id.clone(), session);
                }
                Err(e) => eprintln!("skipping session in {}: {e}", dir.display()),
            }
        }
        Ok(manager)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn list(&self) -> Vec<SessionStatus> {
        let mut out: Vec<SessionStatus> = self.sessions.read().unwrap().values().map(|s| s.status()).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    fn active(&self) -> usize {
        self.sessions.read().unwrap().values().filter(|s| s.status().state.active()).count()
    }

    pub fn create(&self, model: AnalysisModel, config: EngineConfig) -> Result<Arc<Session>, SessionError> {
        if self.active() >= self.cfg.max_sessions {
            return Err(SessionError::TooMany(self.cfg.max_sessions));
        }
        let engine = Engine::with_execution(Arc::new(model), config, self.cfg.execution).map_err(archdisc_core::Error::from)?;
        let id = loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !self.cfg.data_dir.join(&id).exists() {
                break id;
            }
        };
        let dir = self.cfg.data_dir.join(&id);
        fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let file = File::create(dir.join(EVENTS_FILE)).map_err(io_err("creating the event log"))?;
        let mut log = EventLog::new(file);
        log.session_start(&engine).map_err(io_err("writing the event log"))?;
        let session = Arc::new(Session {
            shared: Mutex::new(Shared { status: status_of(&id, &engine, SessionState::Running), pending: None, final_archive: None }),
            id: id.clone(),
            dir,
            tx: Mutex::new(None),
            worker: Mutex::new(None),
        });
        spawn(&session, engine, log, None, self.cfg.idle_timeout);
        self.sessions.write().unwrap().insert(id, session.clone());
        Ok(session)
    }

    fn recover(&self, dir: &Path) -> Result<Arc<Session>, SessionError> {
        let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let path = dir.join(EVENTS_FILE);
        drop_torn_tail(&path)?;
        let file = File::open(&path).map_err(io_err(format!("opening {}", path.display())))?;
        let events = read_events(BufReader::new(file)).map_err(|e| SessionError::Engine(e.into()))?;
        let recorded = RecordedSession::from_events(&events)?;

        let make = |status: SessionStatus, pending, final_archive| {
            Arc::new(Session {
                id: id.clone(),
                dir: dir.to_path_buf(),
                shared: Mutex::new(Shared { status, pending, final_archive }),
                tx: Mutex::new(None),
                worker: Mutex::new(None),
            })
        };

        if recorded.finished.is_some() {
            let engine = replay(&recorded, recorded.seed, ReplayMode::Strict, self.cfg.execution, &mut |_| {})?;
            let mut status = status_of(&id, &engine, SessionState::Finished);
            status.latest = last_stats(&events);
            return Ok(make(status, None, Some(engine.archive_snapshot())));
        }

        let last_logged = events
            .iter()
            .filter_map(|r| match &r.event {
                Event::GenStats(s) => Some(s.generation),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let opened = events.iter().rev().find_map(|r| match &r.event {
            Event::InteractionStart { candidates, .. } => Some(candidates.stop),
            _ => None,
        });
        let append = OpenOptions::new().append(true).open(&path).map_err(io_err("reopening the event log"))?;
        let mut log = EventLog::resume(append, &events);
        let mut write_error = None;
        let engine = replay(&recorded, recorded.seed, ReplayMode::Resume, self.cfg.execution, &mut |s| {
            if s.generation > last_logged {
                if let Err(e) = log.generation(s) {
                    write_error.get_or_insert(e);
                }
            }
        })?;
        if let Some(e) = write_error {
            return Err(io_err("writing the event log")(e));
        }
        let mut status = status_of(&id, &engine, SessionState::Running);
        status.latest = last_stats(&events);
        let session = make(status, None, None);
        spawn(&session, engine, log, opened, self.cfg.idle_timeout);
        Ok(session)
    }

    /// Stops every worker without finishing its session, leaving the logs
    /// as they would be after a crash.
    pub fn shutdown(&self) {
        let sessions: Vec<Arc<Session>> = self.sessions.read().unwrap().values().cloned().collect();
        for s in &sessions {
            s.tx.lock().unwrap().take();
        }
        for s in &sessions {
            s.join();
        }
    }
}

impl Drop for SessionManager {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn last_stats(events: &[EventRecord]) -> Option<GenerationStats> {
    events.iter().rev().find_map(|r| match &r.event {
        Event::GenStats(s) => Some(s.clone()),
        _ => None,
    })
}

/// Cuts a partially written final line so appends start on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<(), SessionError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(format!("reading {}", path.display())))?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let f = OpenOptions::new().write(true).open(path).map_err(io_err("truncating the event log"))?;
        f.set_len(keep as u64).map_err(io_err("truncating the event log"))?;
    }
    Ok(())
}

fn status_of(id: &str, engine: &Engine, state: SessionState) -> SessionStatus {
    SessionStatus {
        id: id.to_string(),
        state,
        seed: engine.config().seed,
        generation: engine.generation(),
        total_generations: engine.total_generations(),
        evaluations: engine.evaluations(),
        max_evaluations: engine.config().max_evaluations,
        stop: engine.next_stop(),
        stops: engine.schedule().stops.clone(),
        archive_size: engine.archive().len(),
        latest: None,
        error: None,
    }
}

fn spawn(session: &Arc<Session>, engine: Engine, log: EventLog<File>, opened: Option<usize>, idle: Option<Duration>) {
    let (tx, rx) = mpsc::channel();
    *session.tx.lock().unwrap() = Some(tx);
    let s = session.clone();
    let handle = std::thread::Builder::new()
        .name(format!("session-{}", session.id))
        .spawn(move || {
            let result = panic::catch_unwind(AssertUnwindSafe(|| work(&s, engine, log, rx, opened, idle)));
            let error = match result {
                Ok(Ok(())) => None,
                Ok(Err(e)) => Some(e.to_string()),
                Err(p) => Some(p.downcast_ref::<&str>().map(|m| m.to_string()).unwrap_or_else(|| "worker panicked".into())),
            };
            if let Some(e) = error {
                s.update(|sh| {
                    sh.status.state = SessionState::Aborted;
                    sh.status.error = Some(e);
                    sh.pending = None;
                });
            }
        })
        .expect("spawning a session worker");
    *session.worker.lock().unwrap() = Some(handle);
}

fn work(
    session: &Session,
    mut engine: Engine,
    mut log: EventLog<File>,
    rx: Receiver<Command>,
    mut opened: Option<usize>,
    idle: Option<Duration>,
) -> std::io::Result<()> {
    let mut stopped = false;
    loop {
        loop {
            match rx.try_recv() {
                Ok(cmd) => running_command(cmd, &mut engine, &mut stopped),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match engine.tick() {
            Tick::Generation(stats) => {
                log.generation(&stats)?;
                session.update(|sh| {
                    sh.status.generation = stats.generation;
                    sh.status.evaluations = stats.evaluations;
                    sh.status.archive_size = stats.archive_size;
                    sh.status.latest = Some(stats);
                });
            }
            Tick::Awaiting(shown) => {
                if opened != Some(shown.stop) {
                    log.interaction_start(&engine, &shown)?;
                    opened = Some(shown.stop);
                }
                session.update(|sh| {
                    sh.status.state = SessionState::AwaitingFeedback;
                    sh.status.stop = shown.stop;
                    sh.pending = Some(shown.clone());
                });
                let resumed = await_feedback(session, &mut engine, &mut log, &rx, &shown, idle, &mut stopped)?;
                if !resumed {
                    return Ok(());
                }
            }
            Tick::Finished => {
                let reason = if stopped { FinishReason::Stopped } else { FinishReason::Completed };
                log.finished(&engine, reason)?;
                let archive = engine.archive_snapshot();
                fs::write(session.dir.join(ARCHIVE_FILE), archive.to_json())?;
                session.update(|sh| {
                    sh.status = SessionStatus { latest: sh.status.latest.take(), ..status_of(&session.id, &engine, SessionState::Finished) };
                    sh.pending = None;
                    sh.final_archive = Some(archive);
                });
                return Ok(());
            }
        }
    }
}

fn running_command(cmd: Command, engine: &mut Engine, stopped: &mut bool) {
    match cmd {
        Command::Feedback(_, reply) => {
            let _ = reply.send(Err(ProtocolError::NotAwaiting));
        }
        Command::Stop(reply) => {
            engine.request_stop();
            *stopped = true;
            let _ = reply.send(());
        }
        Command::Archive(reply) => {
            let _ = reply.send(engine.archive_snapshot());
        }
    }
}

/// Blocks at a stop until feedback, a stop request or the idle timeout.
/// Returns false when the service is shutting down.
fn await_feedback(
    session: &Session,
    engine: &mut Engine,
    log: &mut EventLog<File>,
    rx: &Receiver<Command>,
    shown: &CandidateSet,
    idle: Option<Duration>,
    stopped: &mut bool,
) -> std::io::Result<bool> {
    loop {
        let cmd = match idle {
            Some(t) => match rx.recv_timeout(t) {
                Ok(c) => Some(c),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return Ok(false),
            },
            None => match rx.recv() {
                Ok(c) => Some(c),
                Err(_) => return Ok(false),
            },
        };
        let bundle = match cmd {
            Some(Command::Feedback(bundle, reply)) => match engine.submit(&bundle) {
                Ok(outcome) => {
                    log.feedback(engine, &bundle, &outcome)?;
                    *stopped |= outcome.stop_search;
                    resume(session, engine);
                    let _ = reply.send(Ok(outcome));
                    return Ok(true);
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                    continue;
                }
            },
            Some(Command::Stop(reply)) => {
                engine.request_stop();
                *stopped = true;
                resume(session, engine);
                let _ = reply.send(());
                return Ok(true);
            }
            Some(Command::Archive(reply)) => {
                let _ = reply.send(engine.archive_snapshot());
                continue;
            }
            None => FeedbackBundle {
                stop: shown.stop,
                entries: shown
                    .candidates
                    .iter()
                    .map(|c| FeedbackEntry { solution: c.solution, preference: Some(Preference::none()), actions: Default::default() })
                    .collect(),
            },
        };
        let outcome = engine.submit(&bundle).expect("an all-none bundle for the pending stop is valid");
        log.feedback(engine, &bundle, &outcome)?;
        resume(session, engine);
        return Ok(true);
    }
}

fn resume(session: &Session, engine: &Engine) {
    session.update(|sh| {
        sh.status.state = SessionState::Running;
        sh.status.stop = engine.next_stop();
        sh.status.archive_size = engine.archive().len();
        sh.pending = None;
    });
}
