//! Study service: sessions, item delivery, responses and reports.
//!
//! The service is synchronous and thread-safe; the HTTP layer wraps it.
//! Every accepted state change is first applied to a copy of the session,
//! then appended to the study's event log, and only then committed, so a
//! failed append never leaves memory ahead of disk.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use drt_core::corpus::WordSide;
use drt_core::rng::split_seed;
use drt_core::session::{
    evaluate_screening, Answer, ExclusionReason, ItemRef, ParticipantProfile, Phase, QuestionnaireAnswers,
    ScreeningFailure, Session, SessionError, SessionEvent, SessionState,
};
use drt_core::Timestamp;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{create_dir, write_atomic, HarnessError};
use crate::eventlog::{
    file_sinks, read_log, read_snapshot, write_snapshot, EventLog, EventLogRecord, Payload, SessionOpened, SinkFactory,
    Snapshot, LOG_FILE, SNAPSHOT_VERSION,
};
use crate::report::{study_report, StudyReport};
use crate::study::{apply_record, completion_token, counts_as_served, StudyDefinition, StudyExport, StudyStatus};

pub const STUDY_FILE: &str = "study.json";
pub const STUDIES_DIR: &str = "studies";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 200;

/// Source of the current time.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        Timestamp(ms)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        ManualClock(AtomicU64::new(start.0))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t.0, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Protocol(#[from] SessionError),
    #[error("session is closed ({0})")]
    SessionClosed(SessionState),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("participant is not eligible: {}", list_failures(.0))]
    Ineligible(Vec<ScreeningFailure>),
    #[error("study {0} is not open")]
    StudyNotOpen(String),
    #[error(transparent)]
    Storage(HarnessError),
}

impl ServiceError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::Protocol(_) => "protocol_violation",
            ServiceError::SessionClosed(_) => "session_closed",
            ServiceError::InsufficientData(_) => "insufficient_data",
            ServiceError::Ineligible(_) => "ineligible",
            ServiceError::StudyNotOpen(_) => "study_not_open",
            ServiceError::Storage(_) => "storage_failure",
        }
    }
}

fn list_failures(f: &[ScreeningFailure]) -> String {
    f.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl From<HarnessError> for ServiceError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Invalid { .. } => ServiceError::Invalid(e.to_string()),
            HarnessError::Io { .. } => ServiceError::Storage(e),
        }
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Clone)]
pub struct ServiceOptions {
    /// Persistence root; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Directory that item audio paths are relative to.
    pub audio_root: Option<PathBuf>,
    /// Secret mixed into session ids and completion tokens.
    pub token_salt: String,
    pub snapshot_every: u64,
    pub sinks: SinkFactory,
}

impl std::fmt::Debug for ServiceOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceOptions")
            .field("data_dir", &self.data_dir)
            .field("audio_root", &self.audio_root)
            .field("snapshot_every", &self.snapshot_every)
            .finish_non_exhaustive()
    }
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            data_dir: None,
            audio_root: None,
            token_salt: String::new(),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            sinks: file_sinks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub study_id: String,
    pub condition: String,
    pub status: StudyStatus,
    pub blocks: usize,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub study_id: String,
    pub block_id: u32,
    pub state: SessionState,
    pub created_at: Timestamp,
    /// Playbacks allowed per item.
    pub max_playbacks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Choice,
    Digits,
}

/// What the client needs to present one item. It deliberately carries
/// neither the correct answer nor the recording identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDescriptor {
    pub item_ref: String,
    pub phase: Phase,
    pub index: usize,
    pub total: usize,
    pub kind: ItemKind,
    pub audio: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<[String; 2]>,
    /// Seed for the client's left/right placement of the choices.
    pub layout_seed: u64,
    pub max_playbacks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextResponse {
    /// Waiting for a consent event.
    Consent,
    /// Waiting for the questionnaire.
    Questionnaire,
    Item(ItemDescriptor),
    Completed { completion_token: String },
    Rejected { reason: ExclusionReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSubmission {
    pub item_ref: String,
    /// The chosen word, for choice items.
    #[serde(default)]
    pub choice: Option<String>,
    /// The typed triplet, for digits items.
    #[serde(default)]
    pub digits: Option<String>,
    #[serde(default)]
    pub reaction_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acknowledged {
    pub session_id: String,
    pub state: SessionState,
}

/// Events a client may post outside of item responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientEvent {
    Consent { given: bool },
    Questionnaire { answers: QuestionnaireAnswers },
    Abandon,
}

struct StudyState {
    def: StudyDefinition,
    sessions: BTreeMap<String, Session>,
    records: Vec<EventLogRecord>,
    log: Option<EventLog>,
    dir: Option<PathBuf>,
    /// In-memory sequence when there is no log.
    next_seq: u64,
    since_snapshot: u64,
}

impl StudyState {
    fn new(def: StudyDefinition, dir: Option<PathBuf>, log: Option<EventLog>) -> Self {
        StudyState { def, sessions: BTreeMap::new(), records: Vec::new(), log, dir, next_seq: 1, since_snapshot: 0 }
    }

    fn served(&self) -> BTreeMap<u32, usize> {
        let mut served: BTreeMap<u32, usize> = self.def.blocks.iter().map(|b| (b.block_id, 0)).collect();
        for s in self.sessions.values().filter(|s| counts_as_served(s)) {
            *served.entry(s.block_id).or_default() += 1;
        }
        served
    }

    /// Durably records `payload`, then applies it.
    fn commit(&mut self, session_id: &str, now: Timestamp, payload: Payload, snapshot_every: u64) -> ServiceResult<()> {
        let mut sessions_after = None;
        if let Payload::Event { event } = &payload {
            let mut s = self.sessions.get(session_id).cloned().ok_or_else(|| not_found("session", session_id))?;
            s.advance(event)?;
            sessions_after = Some(s);
        }
        let rec = match &mut self.log {
            Some(log) => log.append(session_id, now, payload)?,
            None => {
                let rec = EventLogRecord { seq: self.next_seq, session_id: session_id.into(), wall_time: now, payload };
                self.next_seq += 1;
                rec
            }
        };
        match sessions_after {
            Some(s) => {
                self.sessions.insert(session_id.to_string(), s);
            }
            None => apply_record(&self.def, &mut self.sessions, &rec)?,
        }
        self.records.push(rec);
        self.since_snapshot += 1;
        if self.since_snapshot >= snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    fn snapshot(&mut self) -> ServiceResult<()> {
        if let Some(dir) = &self.dir {
            let seq = self.records.last().map_or(0, |r| r.seq);
            let snap = Snapshot { version: SNAPSHOT_VERSION, seq, sessions: self.sessions.values().cloned().collect() };
            write_snapshot(dir, &snap)?;
        }
        self.since_snapshot = 0;
        Ok(())
    }
}

fn not_found(what: &'static str, id: &str) -> ServiceError {
    ServiceError::NotFound { what, id: id.to_string() }
}

pub struct StudyService {
    opts: ServiceOptions,
    clock: Arc<dyn Clock>,
    studies: RwLock<HashMap<String, Arc<Mutex<StudyState>>>>,
    session_index: RwLock<HashMap<String, String>>,
    audio: RwLock<HashMap<String, PathBuf>>,
}

impl std::fmt::Debug for StudyService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudyService").field("opts", &self.opts).finish_non_exhaustive()
    }
}

/// Content hash naming an audio file in URLs.
pub fn audio_hash(study_id: &str, audio: &str) -> String {
    let mut h = Sha256::new();
    h.update(study_id.as_bytes());
    h.update([0]);
    h.update(audio.as_bytes());
    hex::encode(&h.finalize()[..16])
}

fn lock(study: &Mutex<StudyState>) -> std::sync::MutexGuard<'_, StudyState> {
    // a panic while holding the lock cannot leave a half-applied change:
    // sessions are only replaced after a successful append
    study.lock().unwrap_or_else(|e| e.into_inner())
}

impl StudyService {
    /// Creates the service, recovering every persisted study.
    pub fn new(opts: ServiceOptions, clock: Arc<dyn Clock>) -> ServiceResult<StudyService> {
        let svc = StudyService {
            opts,
            clock,
            studies: RwLock::new(HashMap::new()),
            session_index: RwLock::new(HashMap::new()),
            audio: RwLock::new(HashMap::new()),
        };
        if let Some(root) = &svc.opts.data_dir {
            let dir = root.join(STUDIES_DIR);
            create_dir(&dir)?;
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| HarnessError::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join(STUDY_FILE).is_file())
                .collect();
            entries.sort();
            for study_dir in entries {
                let state = svc.recover(&study_dir)?;
                svc.install(state);
            }
        }
        Ok(svc)
    }

    pub fn in_memory(clock: Arc<dyn Clock>) -> StudyService {
        StudyService::new(ServiceOptions::default(), clock).expect("in-memory service has no storage to fail")
    }

    fn recover(&self, dir: &Path) -> ServiceResult<StudyState> {
        let path = dir.join(STUDY_FILE);
        let def: StudyDefinition = serde_json::from_str(&crate::error::read_to_string(&path)?)
            .map_err(|e| HarnessError::at_line(e.line(), e).in_file(&path))?;
        let log_path = dir.join(LOG_FILE);
        let contents = read_log(&log_path)?;
        let snapshot = read_snapshot(dir)?;
        let mut sessions = BTreeMap::new();
        let mut from = 0;
        if let Some(snap) = &snapshot {
            if contents.records.last().map_or(0, |r| r.seq) < snap.seq {
                return Err(HarnessError::invalid(format!("log ends before snapshot sequence {}", snap.seq)).in_file(&log_path).into());
            }
            sessions = snap.sessions.iter().map(|s| (s.session_id.clone(), s.clone())).collect();
            from = snap.seq;
        }
        for rec in contents.records.iter().filter(|r| r.seq > from) {
            apply_record(&def, &mut sessions, rec).map_err(|e| e.in_file(&log_path))?;
        }
        if contents.torn_tail {
            tracing::warn!(log = %log_path.display(), "dropped a partial record at the end of the log");
        }
        let mut log = EventLog::resume(&log_path, &contents, &self.opts.sinks)?;
        log.skip_to(from);
        let mut state = StudyState::new(def, Some(dir.to_path_buf()), Some(log));
        state.sessions = sessions;
        state.records = contents.records;
        Ok(state)
    }

    fn install(&self, state: StudyState) {
        let id = state.def.study_id.clone();
        {
            let mut index = self.session_index.write().unwrap_or_else(|e| e.into_inner());
            for sid in state.sessions.keys() {
                index.insert(sid.clone(), id.clone());
            }
        }
        if let Some(root) = &self.opts.audio_root {
            let mut audio = self.audio.write().unwrap_or_else(|e| e.into_inner());
            let def = &state.def;
            let paths = def
                .blocks
                .iter()
                .flat_map(|b| b.items.iter().map(|i| &i.audio))
                .chain(def.practice.items.iter().map(|i| &i.audio))
                .chain(def.digits.trials.iter().map(|t| &t.audio));
            for p in paths {
                audio.insert(audio_hash(&id, p), root.join(p));
            }
        }
        self.studies.write().unwrap_or_else(|e| e.into_inner()).insert(id, Arc::new(Mutex::new(state)));
    }

    fn study(&self, study_id: &str) -> ServiceResult<Arc<Mutex<StudyState>>> {
        self.studies
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(study_id)
            .cloned()
            .ok_or_else(|| not_found("study", study_id))
    }

    fn study_of_session(&self, session_id: &str) -> ServiceResult<Arc<Mutex<StudyState>>> {
        let study_id = self
            .session_index
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
            .ok_or_else(|| not_found("session", session_id))?;
        self.study(&study_id)
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn study_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.studies.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create_study(&self, def: StudyDefinition) -> ServiceResult<StudySummary> {
        def.validate()?;
        if self.studies.read().unwrap_or_else(|e| e.into_inner()).contains_key(&def.study_id) {
            return Err(ServiceError::Conflict(format!("study {} already exists", def.study_id)));
        }
        let state = match &self.opts.data_dir {
            Some(root) => {
                let dir = root.join(STUDIES_DIR).join(&def.study_id);
                create_dir(&dir)?;
                let json = serde_json::to_vec_pretty(&def).map_err(HarnessError::invalid)?;
                write_atomic(&dir.join(STUDY_FILE), &json)?;
                let log = EventLog::resume(&dir.join(LOG_FILE), &Default::default(), &self.opts.sinks)?;
                StudyState::new(def, Some(dir), Some(log))
            }
            None => StudyState::new(def, None, None),
        };
        let summary = summarize(&state);
        self.install(state);
        Ok(summary)
    }

    /// Opens, closes or drafts a study. The new status is persisted with the
    /// definition.
    pub fn set_status(&self, study_id: &str, status: StudyStatus) -> ServiceResult<StudySummary> {
        let study = self.study(study_id)?;
        let mut st = lock(&study);
        if let Some(dir) = &st.dir {
            let def = StudyDefinition { status, ..st.def.clone() };
            let json = serde_json::to_vec_pretty(&def).map_err(HarnessError::invalid)?;
            write_atomic(&dir.join(STUDY_FILE), &json)?;
        }
        st.def.status = status;
        Ok(summarize(&st))
    }

    pub fn create_session(&self, study_id: &str, participant: ParticipantProfile) -> ServiceResult<SessionCreated> {
        if participant.participant_id.trim().is_empty() {
            return Err(ServiceError::Invalid("participant_id must not be empty".into()));
        }
        let study = self.study(study_id)?;
        let mut st = lock(&study);
        if st.def.status != StudyStatus::Open {
            return Err(ServiceError::StudyNotOpen(study_id.into()));
        }
        let failures = evaluate_screening(&participant, &st.def.protocol.screening);
        if !failures.is_empty() {
            return Err(ServiceError::Ineligible(failures));
        }
        if st.sessions.values().any(|s| s.participant.participant_id == participant.participant_id) {
            return Err(ServiceError::Conflict(format!(
                "participant {} already has a session in study {study_id}",
                participant.participant_id
            )));
        }
        let served = st.served();
        let block_id = served
            .iter()
            .min_by_key(|(id, n)| (**n, **id))
            .map(|(id, _)| *id)
            .expect("validated study has blocks");
        let mut index = st.sessions.len() as u64;
        let session_id = loop {
            let id = session_id_for(&self.opts.token_salt, study_id, index);
            if !st.sessions.contains_key(&id) && !self.session_index.read().unwrap_or_else(|e| e.into_inner()).contains_key(&id) {
                break id;
            }
            index += 1;
        };
        let now = self.now();
        let opened = SessionOpened { participant, block_id, order_seed: st.def.order_seed(index), created_at: now };
        let snapshot_every = self.opts.snapshot_every;
        st.commit(&session_id, now, Payload::SessionOpened(opened), snapshot_every)?;
        self.session_index.write().unwrap_or_else(|e| e.into_inner()).insert(session_id.clone(), study_id.to_string());
        tracing::info!(study = study_id, session = %session_id, block = block_id, "session opened");
        let s = &st.sessions[&session_id];
        Ok(SessionCreated {
            session_id,
            study_id: study_id.into(),
            block_id,
            state: s.state,
            created_at: now,
            max_playbacks: s.config.max_playbacks,
        })
    }

    /// Runs `f` on a live session after expiring it if it has been idle.
    fn with_open_session<T>(
        &self,
        session_id: &str,
        f: impl FnOnce(&mut StudyState, Timestamp, u64) -> ServiceResult<T>,
    ) -> ServiceResult<T> {
        let study = self.study_of_session(session_id)?;
        let mut st = lock(&study);
        let now = self.now();
        self.expire_if_idle(&mut st, session_id, now)?;
        f(&mut st, now, self.opts.snapshot_every)
    }

    fn expire_if_idle(&self, st: &mut StudyState, session_id: &str, now: Timestamp) -> ServiceResult<bool> {
        let s = st.sessions.get(session_id).ok_or_else(|| not_found("session", session_id))?;
        if !s.is_idle(now) {
            return Ok(false);
        }
        let event = SessionEvent::Abandoned { reason: ExclusionReason::Timeout, at: now };
        st.commit(session_id, now, Payload::Event { event }, self.opts.snapshot_every)?;
        tracing::info!(session = session_id, "session expired after inactivity");
        Ok(true)
    }

    /// Expires every idle session; returns how many were closed.
    pub fn sweep_expired(&self) -> ServiceResult<usize> {
        let studies: Vec<_> = self.studies.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        let mut n = 0;
        for study in studies {
            let mut st = lock(&study);
            let now = self.now();
            let idle: Vec<String> = st.sessions.values().filter(|s| s.is_idle(now)).map(|s| s.session_id.clone()).collect();
            for id in idle {
                n += usize::from(self.expire_if_idle(&mut st, &id, now)?);
            }
        }
        Ok(n)
    }

    /// The item to show now. Presenting an item is recorded the first time
    /// it is served; asking again returns the same item.
    pub fn next_item(&self, session_id: &str) -> ServiceResult<NextResponse> {
        self.with_open_session(session_id, |st, now, every| {
            let s = &st.sessions[session_id];
            match s.state {
                SessionState::Consent => return Ok(NextResponse::Consent),
                SessionState::Questionnaire => return Ok(NextResponse::Questionnaire),
                SessionState::Rejected(reason) => return Ok(NextResponse::Rejected { reason }),
                SessionState::Completed => {
                    let token = completion_token(&self.opts.token_salt, &st.def.study_id, session_id);
                    return Ok(NextResponse::Completed { completion_token: token });
                }
                _ => {}
            }
            let next = s.next_item().ok_or(ServiceError::SessionClosed(s.state))?;
            if !next.presented {
                let at = now.max(s.updated_at);
                st.commit(session_id, now, Payload::Event { event: SessionEvent::Presented { item: next.item, at } }, every)?;
            }
            let s = &st.sessions[session_id];
            Ok(NextResponse::Item(describe(&st.def.study_id, s, next.item)))
        })
    }

    pub fn submit_response(&self, session_id: &str, sub: ResponseSubmission) -> ServiceResult<Acknowledged> {
        let item: ItemRef =
            sub.item_ref.parse().map_err(|_| ServiceError::Invalid(format!("malformed item_ref {:?}", sub.item_ref)))?;
        self.with_open_session(session_id, |st, now, every| {
            let s = &st.sessions[session_id];
            if s.state.is_terminal() {
                return Err(ServiceError::SessionClosed(s.state));
            }
            let answer = match (item.phase, &sub.choice, &sub.digits) {
                (Phase::Digits, None, Some(d)) => Answer::Digits { digits: d.clone() },
                (Phase::Practice | Phase::Main, Some(word), None) => {
                    let b = s.block_item(item).ok_or(SessionError::UnknownItem(item))?;
                    let side: WordSide = b.side_of(word).ok_or_else(|| {
                        ServiceError::Invalid(format!("{word:?} is not one of the choices of {}", sub.item_ref))
                    })?;
                    Answer::Choice { side }
                }
                (Phase::Digits, _, _) => return Err(ServiceError::Invalid("digits items take a `digits` answer".into())),
                _ => return Err(ServiceError::Invalid("choice items take a `choice` answer".into())),
            };
            let at = now.max(s.updated_at);
            let event = SessionEvent::Responded { item, answer, at, reaction_ms: sub.reaction_ms };
            st.commit(session_id, now, Payload::Event { event }, every)?;
            let state = st.sessions[session_id].state;
            if state.is_terminal() {
                tracing::info!(session = session_id, state = ?state, "session finished");
            }
            Ok(ack(st, session_id))
        })
    }

    pub fn post_event(&self, session_id: &str, event: ClientEvent) -> ServiceResult<Acknowledged> {
        self.with_open_session(session_id, |st, now, every| {
            let s = &st.sessions[session_id];
            if s.state.is_terminal() {
                return Err(ServiceError::SessionClosed(s.state));
            }
            let at = now.max(s.updated_at);
            let event = match event {
                ClientEvent::Consent { given: true } => SessionEvent::ConsentGiven { at },
                ClientEvent::Consent { given: false } => SessionEvent::ConsentDeclined { at },
                ClientEvent::Questionnaire { answers } => SessionEvent::QuestionnaireSubmitted { answers, at },
                ClientEvent::Abandon => SessionEvent::Abandoned { reason: ExclusionReason::Incomplete, at },
            };
            st.commit(session_id, now, Payload::Event { event }, every)?;
            Ok(ack(st, session_id))
        })
    }

    pub fn session(&self, session_id: &str) -> ServiceResult<Session> {
        let study = self.study_of_session(session_id)?;
        let st = lock(&study);
        Ok(st.sessions[session_id].clone())
    }

    pub fn sessions(&self, study_id: &str) -> ServiceResult<Vec<Session>> {
        let study = self.study(study_id)?;
        let st = lock(&study);
        Ok(st.sessions.values().cloned().collect())
    }

    pub fn summary(&self, study_id: &str) -> ServiceResult<StudySummary> {
        let study = self.study(study_id)?;
        let st = lock(&study);
        Ok(summarize(&st))
    }

    pub fn report(&self, study_id: &str) -> ServiceResult<StudyReport> {
        let study = self.study(study_id)?;
        let st = lock(&study);
        study_report(&st.def, st.sessions.values()).map_err(|e| ServiceError::InsufficientData(e.to_string()))
    }

    pub fn export(&self, study_id: &str) -> ServiceResult<StudyExport> {
        let study = self.study(study_id)?;
        let st = lock(&study);
        Ok(StudyExport::new(st.def.clone(), st.records.clone()))
    }

    /// Resolved file for an audio URL hash.
    pub fn audio_path(&self, hash: &str) -> Option<PathBuf> {
        self.audio.read().unwrap_or_else(|e| e.into_inner()).get(hash).cloned()
    }

    /// Writes a snapshot of every persisted study.
    pub fn snapshot_all(&self) -> ServiceResult<()> {
        let studies: Vec<_> = self.studies.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        for study in studies {
            lock(&study).snapshot()?;
        }
        Ok(())
    }
}

fn summarize(st: &StudyState) -> StudySummary {
    StudySummary {
        study_id: st.def.study_id.clone(),
        condition: st.def.condition.clone(),
        status: st.def.status,
        blocks: st.def.blocks.len(),
        sessions: st.sessions.len(),
    }
}

fn ack(st: &StudyState, session_id: &str) -> Acknowledged {
    Acknowledged { session_id: session_id.to_string(), state: st.sessions[session_id].state }
}

fn session_id_for(salt: &str, study_id: &str, index: u64) -> String {
    let mut h = Sha256::new();
    h.update(b"session:");
    h.update(salt.as_bytes());
    h.update(b":");
    h.update(study_id.as_bytes());
    h.update(index.to_le_bytes());
    hex::encode(&h.finalize()[..12])
}

fn describe(study_id: &str, s: &Session, item: ItemRef) -> ItemDescriptor {
    let (total, kind, audio, choices) = match item.phase {
        Phase::Digits => {
            let t = &s.digits.trials[item.index];
            (s.digits.trials.len(), ItemKind::Digits, &t.audio, None)
        }
        Phase::Practice | Phase::Main => {
            let b = s.block_item(item).expect("item was validated by the session");
            let total = if item.phase == Phase::Main { s.main.len() } else { s.practice.len() };
            (total, ItemKind::Choice, &b.audio, Some(b.choices.clone()))
        }
    };
    ItemDescriptor {
        item_ref: item.to_string(),
        phase: item.phase,
        index: item.index,
        total,
        kind,
        audio: format!("/audio/{}", audio_hash(study_id, audio)),
        choices,
        layout_seed: split_seed(s.order_seed ^ (item.phase as u64 + 1), item.index as u64),
        max_playbacks: s.config.max_playbacks,
    }
}
