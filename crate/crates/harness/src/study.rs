//! Study definitions, replay of event records and the export archive.

use std::collections::{BTreeMap, BTreeSet};

use drt_core::blocks::{BlockPlan, PracticeSet};
use drt_core::corpus::WordList;
use drt_core::rng::split_seed;
use drt_core::session::{DigitsTest, ProtocolConfig, Session, SessionInit, SessionState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::BonusConfig;
use crate::error::{HarnessError, Result};
use crate::eventlog::{EventLogRecord, Payload, SessionOpened};

pub const EXPORT_FORMAT_VERSION: u32 = 1;

/// Everything the service needs to run one condition of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDefinition {
    pub study_id: String,
    pub condition: String,
    pub language: String,
    pub word_list: WordList,
    pub blocks: Vec<BlockPlan>,
    pub practice: PracticeSet,
    pub digits: DigitsTest,
    pub protocol: ProtocolConfig,
    /// Master seed of per-session item orders.
    #[serde(default)]
    pub session_seed: u64,
    #[serde(default)]
    pub bonus: BonusConfig,
    #[serde(default)]
    pub status: StudyStatus,
}

/// Only open studies accept new sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyStatus {
    Draft,
    #[default]
    Open,
    Closed,
}

impl StudyDefinition {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::invalid(m));
        if self.study_id.is_empty()
            || !self.study_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad("study_id must be non-empty and use only [A-Za-z0-9_-]".into());
        }
        if self.blocks.is_empty() {
            return bad("study has no blocks".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.blocks {
            if !ids.insert(b.block_id) {
                return bad(format!("duplicate block id {}", b.block_id));
            }
            if b.condition != self.condition {
                return bad(format!("block {} has condition {:?}, study has {:?}", b.block_id, b.condition, self.condition));
            }
            if b.catch_items().next().is_none() {
                return bad(format!("block {} has no catch trials", b.block_id));
            }
        }
        let items = self.blocks.iter().flat_map(|b| &b.items).chain(&self.practice.items);
        for item in items {
            let Some(pair) = self.word_list.pair(&item.pair_id) else {
                return bad(format!("item {} references unknown pair {}", item.recording_id, item.pair_id));
            };
            if item.choices != [pair.word_present.clone(), pair.word_absent.clone()] {
                return bad(format!("item {} choices differ from pair {}", item.recording_id, item.pair_id));
            }
        }
        if let Some(t) = self.digits.trials.iter().find(|t| t.digits.is_empty() || !t.digits.bytes().all(|c| c.is_ascii_digit())) {
            return bad(format!("digits trial {:?} is not a digit string", t.digits));
        }
        Ok(())
    }

    pub fn block(&self, block_id: u32) -> Option<&BlockPlan> {
        self.blocks.iter().find(|b| b.block_id == block_id)
    }

    pub fn order_seed(&self, session_index: u64) -> u64 {
        split_seed(self.session_seed, session_index)
    }

    pub fn session_init(&self, session_id: &str, opened: &SessionOpened) -> Result<SessionInit> {
        let block = self
            .block(opened.block_id)
            .ok_or_else(|| HarnessError::invalid(format!("session {session_id} names unknown block {}", opened.block_id)))?;
        Ok(SessionInit {
            session_id: session_id.to_string(),
            study_id: self.study_id.clone(),
            participant: opened.participant.clone(),
            block: block.clone(),
            practice: self.practice.clone(),
            digits: self.digits.clone(),
            config: self.protocol.clone(),
            order_seed: opened.order_seed,
            created_at: opened.created_at,
        })
    }
}

/// Applies one record to the session map.
pub fn apply_record(def: &StudyDefinition, sessions: &mut BTreeMap<String, Session>, rec: &EventLogRecord) -> Result<()> {
    let fail = |m: String| HarnessError::invalid(format!("record {}: {m}", rec.seq));
    match &rec.payload {
        Payload::SessionOpened(opened) => {
            if sessions.contains_key(&rec.session_id) {
                return Err(fail(format!("session {} opened twice", rec.session_id)));
            }
            let init = def.session_init(&rec.session_id, opened).map_err(|e| fail(e.to_string()))?;
            sessions.insert(rec.session_id.clone(), Session::open(init));
        }
        Payload::Event { event } => {
            let s = sessions
                .get_mut(&rec.session_id)
                .ok_or_else(|| fail(format!("event for unknown session {}", rec.session_id)))?;
            s.advance(event).map_err(|e| fail(e.to_string()))?;
        }
    }
    Ok(())
}

pub fn replay(def: &StudyDefinition, records: &[EventLogRecord]) -> Result<BTreeMap<String, Session>> {
    let mut sessions = BTreeMap::new();
    for r in records {
        apply_record(def, &mut sessions, r)?;
    }
    Ok(sessions)
}

/// A self-contained record of a study: its definition and full event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyExport {
    pub format_version: u32,
    pub study: StudyDefinition,
    pub records: Vec<EventLogRecord>,
}

impl StudyExport {
    pub fn new(study: StudyDefinition, records: Vec<EventLogRecord>) -> Self {
        StudyExport { format_version: EXPORT_FORMAT_VERSION, study, records }
    }

    pub fn parse(text: &str) -> Result<StudyExport> {
        let export: StudyExport = serde_json::from_str(text).map_err(|e| HarnessError::at_line(e.line(), e))?;
        if export.format_version != EXPORT_FORMAT_VERSION {
            return Err(HarnessError::invalid(format!("unsupported export format {}", export.format_version)));
        }
        export.study.validate()?;
        Ok(export)
    }

    pub fn sessions(&self) -> Result<BTreeMap<String, Session>> {
        replay(&self.study, &self.records)
    }
}

/// Opaque token a participant shows the recruitment platform on completion.
pub fn completion_token(salt: &str, study_id: &str, session_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(b":");
    h.update(study_id.as_bytes());
    h.update(b":");
    h.update(session_id.as_bytes());
    hex::encode(&h.finalize()[..16])
}

/// Whether the session counts towards its block's quota.
pub fn counts_as_served(s: &Session) -> bool {
    match s.state {
        SessionState::Rejected(_) => false,
        SessionState::Completed => drt_core::session::filter_submission(s, &s.config).reason().is_none(),
        _ => true,
    }
}
