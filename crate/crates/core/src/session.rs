//! Event-sourced session logs and deterministic replay.
//!
//! A log is JSON lines. The first record carries the model, configuration
//! and seed; feedback bundles are recorded verbatim at the end of each stop,
//! which is all replay needs to reproduce the run.

use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, FeedbackOutcome, GenerationStats, Tick};
use crate::error::{Error, ReplayError};
use crate::interaction::{Actions, CandidateSet, DecisionMaker, FeedbackBundle};
use crate::model::{parse_model, AnalysisModel};
use crate::par::Execution;
use crate::preferences::Preference;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Completed,
    Stopped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionStart { seed: u64, config: EngineConfig, model: serde_json::Value },
    GenStats(GenerationStats),
    InteractionStart { evaluations: usize, candidates: CandidateSet },
    Preference { stop: usize, solution: u64, preference: Preference },
    Action { stop: usize, solution: u64, actions: Actions },
    InteractionEnd { evaluations: usize, bundle: FeedbackBundle, outcome: FeedbackOutcome },
    Finished { generation: usize, evaluations: usize, archive_size: usize, reason: FinishReason },
}

/// One log line: `{"seq", "timestamp_ms", "kind", "payload"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "WireRecord", try_from = "WireRecord")]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub event: Event,
}

// serde's flatten stringifies integer map keys, so the record is split by hand.
#[derive(Serialize, Deserialize)]
struct WireRecord {
    seq: u64,
    timestamp_ms: u64,
    kind: String,
    #[serde(default)]
    payload: serde_json::Value,
}

impl From<EventRecord> for WireRecord {
    fn from(r: EventRecord) -> Self {
        let mut v = serde_json::to_value(&r.event).expect("events serialize");
        let kind = v["kind"].as_str().unwrap_or_default().to_owned();
        let payload = v.get_mut("payload").map(serde_json::Value::take).unwrap_or_default();
        Self { seq: r.seq, timestamp_ms: r.timestamp_ms, kind, payload }
    }
}

impl TryFrom<WireRecord> for EventRecord {
    type Error = serde_json::Error;

    fn try_from(w: WireRecord) -> Result<Self, Self::Error> {
        let event = serde_json::from_value(serde_json::json!({ "kind": w.kind, "payload": w.payload }))?;
        Ok(Self { seq: w.seq, timestamp_ms: w.timestamp_ms, event })
    }
}

/// Append-only JSON-lines writer with monotone timestamps.
pub struct EventLog<W: Write> {
    out: W,
    seq: u64,
    last_ts: u64,
    generation_stats: bool,
}

impl<W: Write> EventLog<W> {
    pub fn new(out: W) -> Self {
        Self { out, seq: 0, last_ts: 0, generation_stats: true }
    }

    /// Continues an existing log after `records`.
    pub fn resume(out: W, records: &[EventRecord]) -> Self {
        let last = records.last();
        Self {
            out,
            seq: last.map_or(0, |r| r.seq + 1),
            last_ts: last.map_or(0, |r| r.timestamp_ms),
            generation_stats: true,
        }
    }

    /// Skips per-generation records (the log stays replayable).
    pub fn without_generation_stats(mut self) -> Self {
        self.generation_stats = false;
        self
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    pub fn append(&mut self, event: Event) -> std::io::Result<EventRecord> {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        self.last_ts = self.last_ts.max(now);
        let record = EventRecord { seq: self.seq, timestamp_ms: self.last_ts, event };
        let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        self.seq += 1;
        Ok(record)
    }

    pub fn session_start(&mut self, engine: &Engine) -> std::io::Result<EventRecord> {
        let model = serde_json::from_str(&engine.model().to_json()).map_err(std::io::Error::other)?;
        self.append(Event::SessionStart { seed: engine.config().seed, config: engine.config().clone(), model })
    }

    pub fn generation(&mut self, stats: &GenerationStats) -> std::io::Result<()> {
        if self.generation_stats {
            self.append(Event::GenStats(stats.clone()))?;
        }
        Ok(())
    }

    pub fn interaction_start(&mut self, engine: &Engine, shown: &CandidateSet) -> std::io::Result<()> {
        self.append(Event::InteractionStart { evaluations: engine.evaluations(), candidates: shown.clone() })?;
        Ok(())
    }

    pub fn feedback(&mut self, engine: &Engine, bundle: &FeedbackBundle, outcome: &FeedbackOutcome) -> std::io::Result<()> {
        for e in &bundle.entries {
            if let Some(p) = &e.preference {
                self.append(Event::Preference { stop: bundle.stop, solution: e.solution, preference: p.clone() })?;
            }
            if !e.actions.is_empty() {
                self.append(Event::Action { stop: bundle.stop, solution: e.solution, actions: e.actions.clone() })?;
            }
        }
        self.append(Event::InteractionEnd {
            evaluations: engine.evaluations(),
            bundle: bundle.clone(),
            outcome: outcome.clone(),
        })?;
        Ok(())
    }

    pub fn finished(&mut self, engine: &Engine, reason: FinishReason) -> std::io::Result<()> {
        self.append(Event::Finished {
            generation: engine.generation(),
            evaluations: engine.evaluations(),
            archive_size: engine.archive().len(),
            reason,
        })?;
        Ok(())
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("writing event log", e)
}

/// Runs `engine` to completion with `dm`, recording every step.
pub fn run_recorded<W: Write>(engine: &mut Engine, dm: &mut dyn DecisionMaker, log: &mut EventLog<W>) -> Result<(), Error> {
    log.session_start(engine).map_err(io_err)?;
    loop {
        match engine.tick() {
            Tick::Generation(stats) => log.generation(&stats).map_err(io_err)?,
            Tick::Awaiting(shown) => {
                log.interaction_start(engine, &shown).map_err(io_err)?;
                let bundle = dm.decide(&shown, engine.model())?;
                let outcome = engine.submit(&bundle)?;
                log.feedback(engine, &bundle, &outcome).map_err(io_err)?;
            }
            Tick::Finished => break,
        }
    }
    log.finished(engine, FinishReason::Completed).map_err(io_err)?;
    Ok(())
}

/// Parses a JSON-lines log. Blank lines are ignored; a torn final line (from
/// a crash mid-write) is dropped.
pub fn read_events<R: BufRead>(input: R) -> Result<Vec<EventRecord>, ReplayError> {
    let lines: Vec<String> = input
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| ReplayError::Malformed { line: 0, message: e.to_string() })?;
    let mut out = Vec::new();
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EventRecord>(line) {
            Ok(r) => out.push(r),
            Err(e) if e.is_eof() && Some(i) == last => break,
            Err(e) => return Err(ReplayError::Malformed { line: i + 1, message: e.to_string() }),
        }
    }
    Ok(out)
}

/// What a log says about how its session went.
#[derive(Clone, Debug)]
pub struct RecordedSession {
    pub seed: u64,
    pub config: EngineConfig,
    pub model: AnalysisModel,
    pub bundles: Vec<FeedbackBundle>,
    pub finished: Option<(usize, FinishReason)>,
}

impl RecordedSession {
    pub fn from_events(events: &[EventRecord]) -> Result<Self, Error> {
        let Some(Event::SessionStart { seed, config, model }) = events.first().map(|r| &r.event) else {
            return Err(ReplayError::MissingHeader.into());
        };
        let model_bytes = serde_json::to_vec(model).map_err(|e| Error::json("re-encoding logged model", e))?;
        let model = parse_model(&model_bytes)?;
        let mut bundles = Vec::new();
        let mut finished = None;
        for r in events {
            match &r.event {
                Event::InteractionEnd { bundle, .. } => bundles.push(bundle.clone()),
                Event::Finished { generation, reason, .. } => finished = Some((*generation, *reason)),
                _ => {}
            }
        }
        Ok(Self { seed: *seed, config: config.clone(), model, bundles, finished })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplayMode {
    /// Every stop must have recorded feedback.
    Strict,
    /// Stop at the first stop without feedback and leave it pending.
    Resume,
}

/// Re-runs a recorded session. `requested_seed` must match the seed in the
/// log. Per-generation statistics go to `on_generation`.
pub fn replay(
    session: &RecordedSession,
    requested_seed: u64,
    mode: ReplayMode,
    exec: Execution,
    on_generation: &mut dyn FnMut(&GenerationStats),
) -> Result<Engine, Error> {
    if session.seed != requested_seed {
        return Err(ReplayError::SeedMismatch { recorded: session.seed, requested: requested_seed }.into());
    }
    let mut engine = Engine::with_execution(Arc::new(session.model.clone()), session.config.clone(), exec)?;
    let stop_at = match session.finished {
        Some((g, FinishReason::Stopped)) => Some(g),
        _ => None,
    };
    loop {
        // a stop lands after the feedback given at the same generation
        if stop_at == Some(engine.generation()) && engine.next_stop() >= session.bundles.len() {
            engine.request_stop();
        }
        match engine.tick() {
            Tick::Generation(stats) => on_generation(&stats),
            Tick::Awaiting(shown) => match session.bundles.iter().find(|b| b.stop == shown.stop) {
                Some(b) => {
                    engine.submit(b)?;
                }
                None if mode == ReplayMode::Resume => return Ok(engine),
                None => return Err(ReplayError::MissingStop(shown.stop).into()),
            },
            Tick::Finished => return Ok(engine),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::ScriptedPolicy;
    use crate::model::minilib;

    fn cfg(seed: u64) -> EngineConfig {
        EngineConfig { population_size: 20, max_evaluations: 420, seed, ..Default::default() }
    }

    fn record(seed: u64, policy: ScriptedPolicy) -> (Vec<u8>, String) {
        let mut engine = Engine::new(Arc::new(minilib()), cfg(seed)).unwrap();
        let mut log = EventLog::new(Vec::new());
        let mut p = policy;
        run_recorded(&mut engine, &mut p, &mut log).unwrap();
        (log.into_inner(), engine.archive_snapshot().to_json())
    }

    #[test]
    fn replay_reproduces_archive() {
        let (bytes, archive) = record(3, ScriptedPolicy::FixedNc { n: 4, likert: 4, archive_candidate: true });
        let events = read_events(bytes.as_slice()).unwrap();
        assert!(matches!(events[0].event, Event::SessionStart { .. }));
        assert!(events.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms && w[0].seq + 1 == w[1].seq));
        let session = RecordedSession::from_events(&events).unwrap();
        assert_eq!(session.bundles.len(), 3);
        let engine = replay(&session, 3, ReplayMode::Strict, Execution::default(), &mut |_| {}).unwrap();
        assert_eq!(engine.archive_snapshot().to_json(), archive);
    }

    #[test]
    fn evaluations_frozen_while_awaiting() {
        let (bytes, _) = record(4, ScriptedPolicy::Noop);
        let events = read_events(bytes.as_slice()).unwrap();
        let starts: Vec<usize> = events
            .iter()
            .filter_map(|r| match r.event {
                Event::InteractionStart { evaluations, .. } => Some(evaluations),
                _ => None,
            })
            .collect();
        let ends: Vec<usize> = events
            .iter()
            .filter_map(|r| match r.event {
                Event::InteractionEnd { evaluations, .. } => Some(evaluations),
                _ => None,
            })
            .collect();
        assert_eq!(starts.len(), 3);
        assert_eq!(starts, ends);
    }

    #[test]
    fn seed_mismatch_and_truncation() {
        let (bytes, _) = record(5, ScriptedPolicy::Noop);
        let events = read_events(bytes.as_slice()).unwrap();
        let session = RecordedSession::from_events(&events).unwrap();
        let err = replay(&session, 6, ReplayMode::Strict, Execution::default(), &mut |_| {}).err().unwrap();
        assert!(matches!(err, Error::Replay(ReplayError::SeedMismatch { recorded: 5, requested: 6 })));

        let cut = events.iter().position(|r| matches!(r.event, Event::InteractionEnd { .. })).unwrap();
        let truncated = RecordedSession::from_events(&events[..=cut]).unwrap();
        let err = replay(&truncated, 5, ReplayMode::Strict, Execution::default(), &mut |_| {}).err().unwrap();
        assert!(matches!(err, Error::Replay(ReplayError::MissingStop(1))));
        let resumed = replay(&truncated, 5, ReplayMode::Resume, Execution::default(), &mut |_| {}).unwrap();
        assert_eq!(resumed.pending().map(|p| p.stop), Some(1));
    }

    #[test]
    fn stopped_session_replays_to_the_same_generation() {
        // stop right after the first feedback, before another generation runs
        let mut engine = Engine::new(Arc::new(minilib()), cfg(8)).unwrap();
        let mut log = EventLog::new(Vec::new());
        log.session_start(&engine).unwrap();
        let Tick::Awaiting(shown) = (loop {
            match engine.tick() {
                Tick::Generation(s) => log.generation(&s).unwrap(),
                other => break other,
            }
        }) else {
            panic!("expected a stop")
        };
        log.interaction_start(&engine, &shown).unwrap();
        let bundle = FeedbackBundle::empty(shown.stop);
        let outcome = engine.submit(&bundle).unwrap();
        log.feedback(&engine, &bundle, &outcome).unwrap();
        engine.request_stop();
        assert!(matches!(engine.tick(), Tick::Finished));
        log.finished(&engine, FinishReason::Stopped).unwrap();

        let events = read_events(log.into_inner().as_slice()).unwrap();
        let session = RecordedSession::from_events(&events).unwrap();
        let replayed = replay(&session, 8, ReplayMode::Strict, Execution::default(), &mut |_| {}).unwrap();
        assert_eq!(replayed.generation(), engine.generation());
        assert_eq!(replayed.archive_snapshot().to_json(), engine.archive_snapshot().to_json());
    }

    #[test]
    fn torn_last_line_is_dropped_and_header_required() {
        let (bytes, _) = record(6, ScriptedPolicy::Noop);
        let text = String::from_utf8(bytes).unwrap();
        let torn = &text[..text.len() - 10];
        let events = read_events(torn.as_bytes()).unwrap();
        assert_eq!(events.len(), text.lines().count() - 1);
        assert!(matches!(
            RecordedSession::from_events(&events[1..]),
            Err(Error::Replay(ReplayError::MissingHeader))
        ));
        assert!(matches!(read_events("{\"seq\":0}\n{}\n".as_bytes()), Err(ReplayError::Malformed { line: 1, .. })));
    }
}
