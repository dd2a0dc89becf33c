use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use exaddis_core::{BudgetState, EngineError, LevelRule, Policy, PolicyConfig, StepOutcome};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::error::ServiceError;
use crate::persist::{self, EventLog, LogError};
use crate::records::{Checkpoint, Decision, Event, HistoryView, LevelView, SessionView, WhatIfReport};

/// Submissions between checkpoints.
pub const CHECKPOINT_EVERY: u64 = 16;

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn check_p(p: f64) -> Result<(), ServiceError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ServiceError::PValueRange(p))
    }
}

fn step_error(e: EngineError) -> ServiceError {
    match e {
        EngineError::Inadmissible { step, violation } => ServiceError::Inadmissible { step, violation },
        EngineError::PValueRange(p) => ServiceError::PValueRange(p),
        other => ServiceError::Storage(other.to_string()),
    }
}

fn decision(seq: u64, o: &StepOutcome, state: &BudgetState, at_ms: u64) -> Decision {
    Decision {
        seq,
        step: state.history().len(),
        p: o.p,
        level: o.params.alpha_i,
        tau: o.params.tau,
        lambda: o.params.lambda,
        rejected: o.rejected,
        selected: o.selected,
        candidate: o.candidate,
        remaining_before: o.budget_before,
        new_remaining: state.remaining(),
        at_ms,
    }
}

/// One live study: its policy, the replayed state and the open log.
#[derive(Debug)]
pub struct Session {
    id: String,
    dir: PathBuf,
    policy: Arc<Policy>,
    state: BudgetState,
    decisions: Vec<Decision>,
    created_at_ms: u64,
    updated_at_ms: u64,
    log: EventLog,
}

impl Session {
    fn view(&self) -> SessionView {
        let next = self.policy.params(&self.state);
        let cfg = self.policy.config();
        SessionView {
            id: self.id.clone(),
            procedure: cfg.procedure,
            mode: cfg.mode(),
            alpha: cfg.alpha,
            step: self.state.step(),
            remaining: self.state.remaining(),
            level: next.alpha_i,
            tau: next.tau,
            lambda: next.lambda,
            rejections: self.decisions.iter().filter(|d| d.rejected).count(),
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
            config: cfg.clone(),
        }
    }

    fn level(&self) -> LevelView {
        let next = self.policy.params(&self.state);
        LevelView {
            id: self.id.clone(),
            step: self.state.step(),
            level: next.alpha_i,
            tau: next.tau,
            lambda: next.lambda,
            remaining: self.state.remaining(),
        }
    }

    fn submit(&mut self, p: f64, seq: Option<u64>) -> Result<Decision, ServiceError> {
        check_p(p)?;
        let expected = self.decisions.len() as u64 + 1;
        let seq = seq.unwrap_or(expected);
        if seq < expected && seq >= 1 {
            let original = &self.decisions[seq as usize - 1];
            return if original.p.to_bits() == p.to_bits() {
                Ok(original.clone())
            } else {
                Err(ServiceError::SequenceConflict { seq })
            };
        }
        if seq != expected {
            return Err(ServiceError::SequenceGap { seq, expected });
        }
        let mut next = self.state.clone();
        let params = self.policy.params(&next);
        let o = next.apply(params, p).map_err(step_error)?;
        let at_ms = now_ms();
        let d = decision(seq, &o, &next, at_ms);
        self.log.append(&Event::Submitted { seq, decision: d.clone() })?;
        self.state = next;
        self.decisions.push(d.clone());
        self.updated_at_ms = at_ms;
        if seq % CHECKPOINT_EVERY == 0 {
            let checkpoint = Checkpoint { seq, state: self.state.to_snapshot() };
            if let Err(e) = persist::write_checkpoint(&self.dir, &checkpoint) {
                warn!(session = %self.id, error = %e, "checkpoint not written");
            }
        }
        Ok(d)
    }

    /// sha256 over the serialized state and decision history.
    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.state.to_snapshot()).expect("snapshot serializes"));
        h.update(serde_json::to_vec(&self.decisions).expect("decisions serialize"));
        h.update(self.updated_at_ms.to_le_bytes());
        hex::encode(h.finalize())
    }
}

fn what_if(policy: &Policy, state: &BudgetState, p: f64) -> Result<WhatIfReport, ServiceError> {
    check_p(p)?;
    let mut copy = state.clone();
    let params = policy.params(&copy);
    let o = copy.apply(params, p).map_err(step_error)?;
    let next = policy.params(&copy);
    Ok(WhatIfReport {
        p,
        step: state.step(),
        level: params.alpha_i,
        would_reject: o.rejected,
        next_remaining: copy.remaining(),
        next_level: next.alpha_i,
    })
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct RestoreReport {
    pub restored: Vec<String>,
    /// `(session id, diagnostic)`
    pub quarantined: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// All sessions under one persistence directory.
///
/// Each session sits behind its own mutex, so submissions to one session are
/// serialized while different sessions proceed in parallel. What-ifs copy
/// the state under the lock and evaluate outside it.
#[derive(Debug)]
pub struct SessionStore {
    root: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    quarantined: RwLock<HashMap<String, String>>,
}

impl SessionStore {
    /// Opens `root`, creating it if needed, and restores every session in it.
    pub fn open(root: &Path) -> Result<(Self, RestoreReport), ServiceError> {
        std::fs::create_dir_all(root)?;
        let store = Self {
            root: root.to_path_buf(),
            sessions: RwLock::new(HashMap::new()),
            quarantined: RwLock::new(HashMap::new()),
        };
        let report = store.restore_all()?;
        Ok((store, report))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn restore_all(&self) -> Result<RestoreReport, ServiceError> {
        let mut report = RestoreReport::default();
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&self.root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(persist::EVENTS_FILE).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match restore_session(&dir, &name, &mut report.warnings) {
                Ok(session) => {
                    report.restored.push(session.id.clone());
                    self.sessions.write().unwrap().insert(session.id.clone(), Arc::new(Mutex::new(session)));
                }
                Err(reason) => {
                    warn!(session = %name, %reason, "session quarantined");
                    self.quarantined.write().unwrap().insert(name.clone(), reason.clone());
                    report.quarantined.push((name, reason));
                }
            }
        }
        for w in &report.warnings {
            warn!("{w}");
        }
        Ok(report)
    }

    pub fn create(&self, config: PolicyConfig) -> Result<SessionView, ServiceError> {
        let policy = Policy::new(config.clone())?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.root.join(&id);
        let mut log = EventLog::create(&dir)?;
        let at_ms = now_ms();
        log.append(&Event::Created { seq: 0, id: id.clone(), config, at_ms })?;
        let state = policy.new_state();
        let session = Session {
            id: id.clone(),
            dir,
            policy: Arc::new(policy),
            state,
            decisions: Vec::new(),
            created_at_ms: at_ms,
            updated_at_ms: at_ms,
            log,
        };
        let view = session.view();
        self.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        if let Some(s) = self.sessions.read().unwrap().get(id) {
            return Ok(s.clone());
        }
        match self.quarantined.read().unwrap().get(id) {
            Some(reason) => Err(ServiceError::Quarantined { id: id.to_string(), reason: reason.clone() }),
            None => Err(ServiceError::NotFound(id.to_string())),
        }
    }

    fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> T) -> Result<T, ServiceError> {
        let session = self.get(id)?;
        let mut guard = session.lock().unwrap_or_else(|e| e.into_inner());
        Ok(f(&mut guard))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn quarantined(&self) -> Vec<(String, String)> {
        let mut q: Vec<_> = self.quarantined.read().unwrap().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        q.sort();
        q
    }

    pub fn view(&self, id: &str) -> Result<SessionView, ServiceError> {
        self.with(id, |s| s.view())
    }

    pub fn level(&self, id: &str) -> Result<LevelView, ServiceError> {
        self.with(id, |s| s.level())
    }

    /// Applies `p` as the session's next hypothesis. The decision is on disk
    /// before this returns. `seq` defaults to the next sequence number; a
    /// repeated `seq` with the same `p` returns the recorded decision.
    pub fn submit(&self, id: &str, p: f64, seq: Option<u64>) -> Result<Decision, ServiceError> {
        self.with(id, |s| s.submit(p, seq))?
    }

    pub fn what_if(&self, id: &str, p: f64) -> Result<WhatIfReport, ServiceError> {
        let (policy, state) = self.with(id, |s| (s.policy.clone(), s.state.clone()))?;
        what_if(&policy, &state, p)
    }

    pub fn history(&self, id: &str) -> Result<HistoryView, ServiceError> {
        self.with(id, |s| HistoryView { id: s.id.clone(), decisions: s.decisions.clone() })
    }

    pub fn state(&self, id: &str) -> Result<BudgetState, ServiceError> {
        self.with(id, |s| s.state.clone())
    }

    pub fn digest(&self, id: &str) -> Result<String, ServiceError> {
        self.with(id, |s| s.digest())
    }
}

fn restore_session(dir: &Path, name: &str, warnings: &mut Vec<String>) -> Result<Session, String> {
    let contents = persist::read_log(dir).map_err(|e| match e {
        LogError::Io(m) => m,
        corrupt => corrupt.to_string(),
    })?;
    if let Some(len) = contents.torn_tail_at {
        warnings.push(format!("session {name}: dropped partial final log line at byte {len}"));
        persist::truncate_log(dir, len).map_err(|e| format!("cannot truncate torn log tail: {e}"))?;
    }
    let mut events = contents.events.into_iter();
    let Some(Event::Created { seq: 0, id, config, at_ms }) = events.next() else {
        return Err("log does not start with a created event".into());
    };
    if id != name {
        return Err(format!("log belongs to session {id}, found in directory {name}"));
    }
    let policy = Policy::new(config).map_err(|e| format!("stored configuration is invalid: {e}"))?;
    let mut state = policy.new_state();
    let mut decisions: Vec<Decision> = Vec::new();
    let mut updated_at_ms = at_ms;
    for event in events {
        let expected = decisions.len() as u64 + 1;
        let Event::Submitted { seq, decision: logged } = event else {
            return Err(format!("unexpected created event after sequence {}", expected - 1));
        };
        if seq != expected || logged.seq != seq {
            return Err(format!("sequence {seq} where {expected} was expected"));
        }
        let params = policy.params(&state);
        let o = state.apply(params, logged.p).map_err(|e| format!("sequence {seq} does not replay: {e}"))?;
        let replayed = decision(seq, &o, &state, logged.at_ms);
        if replayed != logged {
            return Err(format!("sequence {seq}: replayed decision differs from the log"));
        }
        updated_at_ms = logged.at_ms;
        decisions.push(logged);
    }
    match persist::read_checkpoint(dir) {
        Some(Ok(cp)) => {
            let at = decisions.get((cp.seq as usize).wrapping_sub(1));
            let agrees = match at {
                Some(d) => d.new_remaining.to_bits() == cp.state.remaining.to_bits(),
                None => cp.seq == 0,
            };
            if !agrees {
                warnings.push(format!("session {name}: checkpoint at sequence {} disagrees with log; log wins", cp.seq));
            }
        }
        Some(Err(e)) => warnings.push(format!("session {name}: unreadable checkpoint ignored: {e}")),
        None => {}
    }
    let log = EventLog::open(dir).map_err(|e| format!("cannot reopen log: {e}"))?;
    Ok(Session {
        id,
        dir: dir.to_path_buf(),
        policy: Arc::new(policy),
        state,
        decisions,
        created_at_ms: at_ms,
        updated_at_ms,
        log,
    })
}
