//! Participant protocol: screening, the session state machine and the
//! inclusion filter.
//!
//! A session moves through consent, a questionnaire, a digits-in-noise
//! hearing check, practice and one main block. Every change is driven by a
//! [`SessionEvent`]; the ordered event list is the session's complete record
//! and replaying it through [`Session::replay`] reproduces the same state.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockItem, BlockPlan, PracticeSet};
use crate::corpus::WordSide;
use crate::rng::{stream, stream_rng};
use crate::scoring::ScoredResponse;
use crate::Timestamp;

/// Default digits-in-noise SNRs in dB, one per trial.
pub const DEFAULT_DIGIT_SNRS_DB: [f64; 6] = [0.0, -2.0, -4.0, -6.0, -8.0, -10.0];
/// Default number of fully correct triplets needed to pass.
pub const DEFAULT_DIGITS_PASS: usize = 5;
/// Catch-trial accuracy must be strictly above this to be included.
pub const DEFAULT_CATCH_THRESHOLD: f64 = 0.8;
/// Sessions idle for longer than this are abandoned.
pub const DEFAULT_INACTIVITY_MS: u64 = 2 * 60 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreeningCriteria {
    /// Required first language (language tag, compared case-insensitively).
    pub language: String,
    /// Allowed countries of residence; empty allows any.
    #[serde(default)]
    pub residency: Vec<String>,
    #[serde(default = "yes")]
    pub exclude_dyslexia: bool,
    #[serde(default = "yes")]
    pub exclude_hearing_problems: bool,
    /// Minimum recruitment-platform approval rate in [0, 1].
    #[serde(default)]
    pub min_approval_rate: f64,
    #[serde(default = "yes")]
    pub require_headphones: bool,
}

fn yes() -> bool {
    true
}

impl ScreeningCriteria {
    pub fn for_language(language: &str) -> Self {
        ScreeningCriteria {
            language: language.into(),
            residency: Vec::new(),
            exclude_dyslexia: true,
            exclude_hearing_problems: true,
            min_approval_rate: 0.98,
            require_headphones: true,
        }
    }
}

/// Recruitment-time answers about a participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    pub first_language: String,
    pub residency: String,
    pub dyslexia: bool,
    pub hearing_problems: bool,
    pub headphones: bool,
    pub quiet_environment: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approval_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
}

/// Answers given in the in-study questionnaire, which repeats the screening
/// questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireAnswers {
    pub first_language: String,
    pub residency: String,
    pub dyslexia: bool,
    pub hearing_problems: bool,
    pub headphones: bool,
    pub quiet_environment: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
}

impl QuestionnaireAnswers {
    /// The answers a participant with `profile` would give if consistent.
    pub fn from_profile(profile: &ParticipantProfile) -> Self {
        QuestionnaireAnswers {
            first_language: profile.first_language.clone(),
            residency: profile.residency.clone(),
            dyslexia: profile.dyslexia,
            hearing_problems: profile.hearing_problems,
            headphones: profile.headphones,
            quiet_environment: profile.quiet_environment,
            age_group: profile.age_group.clone(),
            gender: profile.gender.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreeningFailure {
    Language,
    Residency,
    Dyslexia,
    Hearing,
    ApprovalRate,
    Headphones,
    /// A repeated answer differs from the recruitment-time answer.
    Inconsistent,
}

impl fmt::Display for ScreeningFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScreeningFailure::Language => "language",
            ScreeningFailure::Residency => "residency",
            ScreeningFailure::Dyslexia => "dyslexia",
            ScreeningFailure::Hearing => "hearing",
            ScreeningFailure::ApprovalRate => "approval_rate",
            ScreeningFailure::Headphones => "headphones",
            ScreeningFailure::Inconsistent => "inconsistent",
        })
    }
}

fn same_tag(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

/// Every criterion `profile` fails, in a fixed order; empty means eligible.
pub fn evaluate_screening(profile: &ParticipantProfile, criteria: &ScreeningCriteria) -> Vec<ScreeningFailure> {
    let mut out = Vec::new();
    if !same_tag(&profile.first_language, &criteria.language) {
        out.push(ScreeningFailure::Language);
    }
    if !criteria.residency.is_empty() && !criteria.residency.iter().any(|c| same_tag(c, &profile.residency)) {
        out.push(ScreeningFailure::Residency);
    }
    if criteria.exclude_dyslexia && profile.dyslexia {
        out.push(ScreeningFailure::Dyslexia);
    }
    if criteria.exclude_hearing_problems && profile.hearing_problems {
        out.push(ScreeningFailure::Hearing);
    }
    if profile.approval_rate.unwrap_or(1.0) < criteria.min_approval_rate {
        out.push(ScreeningFailure::ApprovalRate);
    }
    if criteria.require_headphones && !profile.headphones {
        out.push(ScreeningFailure::Headphones);
    }
    out
}

/// Screening on the repeated answers plus a consistency check against the
/// recruitment profile.
pub fn evaluate_questionnaire(
    profile: &ParticipantProfile,
    answers: &QuestionnaireAnswers,
    criteria: &ScreeningCriteria,
) -> Vec<ScreeningFailure> {
    let restated = ParticipantProfile {
        participant_id: profile.participant_id.clone(),
        first_language: answers.first_language.clone(),
        residency: answers.residency.clone(),
        dyslexia: answers.dyslexia,
        hearing_problems: answers.hearing_problems,
        headphones: answers.headphones,
        quiet_environment: answers.quiet_environment,
        approval_rate: profile.approval_rate,
        age_group: answers.age_group.clone(),
        gender: answers.gender.clone(),
    };
    let mut out = evaluate_screening(&restated, criteria);
    let consistent = same_tag(&profile.first_language, &answers.first_language)
        && same_tag(&profile.residency, &answers.residency)
        && profile.dyslexia == answers.dyslexia
        && profile.hearing_problems == answers.hearing_problems
        && profile.headphones == answers.headphones;
    if !consistent {
        out.push(ScreeningFailure::Inconsistent);
    }
    out
}

/// Why a session is not analysed. Also the reason a session was stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NoConsent,
    Screening,
    Headphones,
    Environment,
    Digits,
    Validation,
    Practice,
    Incomplete,
    Timeout,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::NoConsent => "no_consent",
            ExclusionReason::Screening => "screening",
            ExclusionReason::Headphones => "headphones",
            ExclusionReason::Environment => "environment",
            ExclusionReason::Digits => "digits",
            ExclusionReason::Validation => "validation",
            ExclusionReason::Practice => "practice",
            ExclusionReason::Incomplete => "incomplete",
            ExclusionReason::Timeout => "timeout",
        })
    }
}

/// Maps questionnaire results to the first failing inclusion criterion.
fn questionnaire_verdict(failures: &[ScreeningFailure], answers: &QuestionnaireAnswers) -> Option<ExclusionReason> {
    if failures.iter().any(|f| *f != ScreeningFailure::Headphones) {
        Some(ExclusionReason::Screening)
    } else if !failures.is_empty() || !answers.headphones {
        Some(ExclusionReason::Headphones)
    } else if !answers.quiet_environment {
        Some(ExclusionReason::Environment)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitsTrial {
    /// The triplet as spoken, e.g. "472".
    pub digits: String,
    pub snr_db: f64,
    /// Stimulus file, relative to the study's audio root.
    pub audio: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitsTest {
    pub trials: Vec<DigitsTrial>,
}

impl DigitsTest {
    /// Random triplets, one per SNR, in a shuffled SNR order. Audio paths
    /// follow `digits/{index}.wav`.
    pub fn generate(snrs_db: &[f64], seed: u64) -> DigitsTest {
        use rand::seq::SliceRandom;
        let mut rng = stream_rng(seed, stream::DIGITS);
        let mut snrs = snrs_db.to_vec();
        snrs.shuffle(&mut rng);
        let trials = snrs
            .into_iter()
            .enumerate()
            .map(|(i, snr_db)| {
                let digits = (0..3).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
                DigitsTrial { digits, snr_db, audio: alloc::format!("digits/{i}.wav") }
            })
            .collect();
        DigitsTest { trials }
    }
}

/// Whitespace-free form of a typed triplet, or `None` if it contains
/// anything other than digits and whitespace.
pub fn normalize_digits(s: &str) -> Option<String> {
    let out: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    out.chars().all(|c| c.is_ascii_digit()).then_some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "result")]
pub enum DigitsOutcome {
    Pass { correct: usize },
    Fail { correct: usize },
}

impl DigitsOutcome {
    pub fn passed(self) -> bool {
        matches!(self, DigitsOutcome::Pass { .. })
    }
}

/// A trial is correct only if the whole triplet matches.
pub fn evaluate_digits(responses: &[String], test: &DigitsTest, pass_threshold: usize) -> Result<DigitsOutcome, SessionError> {
    if responses.len() != test.trials.len() {
        return Err(SessionError::MissingResponses { expected: test.trials.len(), found: responses.len() });
    }
    let correct = responses
        .iter()
        .zip(&test.trials)
        .filter(|(r, t)| normalize_digits(r).is_some_and(|r| Some(r) == normalize_digits(&t.digits)))
        .count();
    Ok(if correct >= pass_threshold { DigitsOutcome::Pass { correct } } else { DigitsOutcome::Fail { correct } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub screening: ScreeningCriteria,
    #[serde(default = "default_digits_pass")]
    pub digits_pass_threshold: usize,
    /// Catch-trial accuracy must be strictly greater than this.
    #[serde(default = "default_catch_threshold")]
    pub catch_threshold: f64,
    /// Optional minimum practice accuracy; off by default.
    #[serde(default)]
    pub practice_cutoff: Option<f64>,
    #[serde(default = "default_inactivity")]
    pub inactivity_timeout_ms: u64,
    /// Number of playbacks allowed per item.
    #[serde(default = "default_playbacks")]
    pub max_playbacks: u32,
}

fn default_digits_pass() -> usize {
    DEFAULT_DIGITS_PASS
}
fn default_catch_threshold() -> f64 {
    DEFAULT_CATCH_THRESHOLD
}
fn default_inactivity() -> u64 {
    DEFAULT_INACTIVITY_MS
}
fn default_playbacks() -> u32 {
    1
}

impl ProtocolConfig {
    pub fn new(screening: ScreeningCriteria) -> Self {
        ProtocolConfig {
            screening,
            digits_pass_threshold: DEFAULT_DIGITS_PASS,
            catch_threshold: DEFAULT_CATCH_THRESHOLD,
            practice_cutoff: None,
            inactivity_timeout_ms: DEFAULT_INACTIVITY_MS,
            max_playbacks: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Digits,
    Practice,
    Main,
}

/// Position of an item within one phase of a session's presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    pub phase: Phase,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Answer {
    Choice { side: WordSide },
    Digits { digits: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SessionEvent {
    ConsentGiven { at: Timestamp },
    ConsentDeclined { at: Timestamp },
    QuestionnaireSubmitted { answers: QuestionnaireAnswers, at: Timestamp },
    Presented { item: ItemRef, at: Timestamp },
    Responded {
        item: ItemRef,
        answer: Answer,
        at: Timestamp,
        /// Client-measured time from end of playback to the answer.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reaction_ms: Option<u64>,
    },
    Abandoned { reason: ExclusionReason, at: Timestamp },
}

impl SessionEvent {
    pub fn at(&self) -> Timestamp {
        match self {
            SessionEvent::ConsentGiven { at }
            | SessionEvent::ConsentDeclined { at }
            | SessionEvent::QuestionnaireSubmitted { at, .. }
            | SessionEvent::Presented { at, .. }
            | SessionEvent::Responded { at, .. }
            | SessionEvent::Abandoned { at, .. } => *at,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SessionEvent::ConsentGiven { .. } => "consent_given",
            SessionEvent::ConsentDeclined { .. } => "consent_declined",
            SessionEvent::QuestionnaireSubmitted { .. } => "questionnaire_submitted",
            SessionEvent::Presented { .. } => "presented",
            SessionEvent::Responded { .. } => "responded",
            SessionEvent::Abandoned { .. } => "abandoned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum SessionState {
    Consent,
    Questionnaire,
    DigitsInNoise,
    Practice,
    Main,
    Completed,
    Rejected(ExclusionReason),
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Completed | SessionState::Rejected(_))
    }

    fn phase(self) -> Option<Phase> {
        match self {
            SessionState::DigitsInNoise => Some(Phase::Digits),
            SessionState::Practice => Some(Phase::Practice),
            SessionState::Main => Some(Phase::Main),
            _ => None,
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionState::Consent => f.write_str("consent"),
            SessionState::Questionnaire => f.write_str("questionnaire"),
            SessionState::DigitsInNoise => f.write_str("digits_in_noise"),
            SessionState::Practice => f.write_str("practice"),
            SessionState::Main => f.write_str("main"),
            SessionState::Completed => f.write_str("completed"),
            SessionState::Rejected(r) => write!(f, "rejected({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("event {event} is not allowed in state {state}")]
    IllegalEvent { state: SessionState, event: &'static str },
    #[error("no item {0:?} in this session")]
    UnknownItem(ItemRef),
    #[error("item {item:?} is not the current item")]
    NotCurrentItem { item: ItemRef },
    #[error("item {0:?} was already presented")]
    AlreadyPresented(ItemRef),
    #[error("item {0:?} has not been presented")]
    NotPresented(ItemRef),
    #[error("answer kind does not match item {0:?}")]
    WrongAnswerKind(ItemRef),
    #[error("event at {at} precedes the previous event at {last}")]
    OutOfOrder { at: Timestamp, last: Timestamp },
    #[error("expected {expected} responses, found {found}")]
    MissingResponses { expected: usize, found: usize },
    #[error("session is not completed")]
    NotCompleted,
    #[error("the main block has no catch trials")]
    NoCatchTrials,
}

/// One answered item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub item: ItemRef,
    pub answer: Answer,
    pub presented_at: Timestamp,
    pub responded_at: Timestamp,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction_ms: Option<u64>,
}

/// Everything a session needs at creation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInit {
    pub session_id: String,
    pub study_id: String,
    pub participant: ParticipantProfile,
    pub block: BlockPlan,
    pub practice: PracticeSet,
    pub digits: DigitsTest,
    pub config: ProtocolConfig,
    /// Seed for this session's item order.
    pub order_seed: u64,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub study_id: String,
    pub participant: ParticipantProfile,
    pub block_id: u32,
    pub condition: String,
    pub state: SessionState,
    pub config: ProtocolConfig,
    pub order_seed: u64,
    pub digits: DigitsTest,
    pub practice: Vec<BlockItem>,
    /// Main-block items in presentation order.
    pub main: Vec<BlockItem>,
    pub answers: Option<QuestionnaireAnswers>,
    pub responses: Vec<ResponseRecord>,
    /// Item currently on screen and when it was presented.
    pub pending: Option<(ItemRef, Timestamp)>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    pub completed_at: Option<Timestamp>,
}

/// What to show next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NextItem {
    pub item: ItemRef,
    /// Whether the item has already been presented and awaits an answer.
    pub presented: bool,
}

impl Session {
    pub fn open(init: SessionInit) -> Session {
        let main = crate::blocks::shuffle_for_session(&init.block, init.order_seed);
        Session {
            session_id: init.session_id,
            study_id: init.study_id,
            participant: init.participant,
            block_id: init.block.block_id,
            condition: init.block.condition,
            state: SessionState::Consent,
            config: init.config,
            order_seed: init.order_seed,
            digits: init.digits,
            practice: init.practice.items,
            main,
            answers: None,
            responses: Vec::new(),
            pending: None,
            created_at: init.created_at,
            updated_at: init.created_at,
            completed_at: None,
        }
    }

    /// Rebuilds a session from its creation record and event log. On failure
    /// returns the index of the offending event.
    pub fn replay<'a>(
        init: SessionInit,
        events: impl IntoIterator<Item = &'a SessionEvent>,
    ) -> Result<Session, (usize, SessionError)> {
        let mut s = Session::open(init);
        for (i, e) in events.into_iter().enumerate() {
            s.advance(e).map_err(|err| (i, err))?;
        }
        Ok(s)
    }

    fn phase_len(&self, phase: Phase) -> usize {
        match phase {
            Phase::Digits => self.digits.trials.len(),
            Phase::Practice => self.practice.len(),
            Phase::Main => self.main.len(),
        }
    }

    pub fn block_item(&self, item: ItemRef) -> Option<&BlockItem> {
        match item.phase {
            Phase::Digits => None,
            Phase::Practice => self.practice.get(item.index),
            Phase::Main => self.main.get(item.index),
        }
    }

    pub fn digits_trial(&self, item: ItemRef) -> Option<&DigitsTrial> {
        (item.phase == Phase::Digits).then(|| self.digits.trials.get(item.index)).flatten()
    }

    fn answered_in(&self, phase: Phase) -> usize {
        // responses are stored in phase order
        let start = self.responses.partition_point(|r| r.item.phase < phase);
        let end = self.responses.partition_point(|r| r.item.phase <= phase);
        end - start
    }

    /// The item the participant should see now, if the current state has one.
    pub fn next_item(&self) -> Option<NextItem> {
        if let Some((item, _)) = self.pending {
            return Some(NextItem { item, presented: true });
        }
        let phase = self.state.phase()?;
        let index = self.answered_in(phase);
        (index < self.phase_len(phase)).then_some(NextItem { item: ItemRef { phase, index }, presented: false })
    }

    /// First non-empty phase from `phase` on, as a state.
    fn enter(&self, phase: Phase) -> SessionState {
        let order = [Phase::Digits, Phase::Practice, Phase::Main];
        for p in order.into_iter().skip_while(|p| *p != phase) {
            if self.phase_len(p) > 0 {
                return match p {
                    Phase::Digits => SessionState::DigitsInNoise,
                    Phase::Practice => SessionState::Practice,
                    Phase::Main => SessionState::Main,
                };
            }
        }
        SessionState::Completed
    }

    fn digits_responses(&self) -> Vec<String> {
        self.responses
            .iter()
            .filter_map(|r| match &r.answer {
                Answer::Digits { digits } if r.item.phase == Phase::Digits => Some(digits.clone()),
                _ => None,
            })
            .collect()
    }

    fn check_item(&self, item: ItemRef) -> Result<(), SessionError> {
        if item.index >= self.phase_len(item.phase) {
            return Err(SessionError::UnknownItem(item));
        }
        Ok(())
    }

    /// Applies `event`, or returns an error and leaves the session unchanged.
    pub fn advance(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        let at = event.at();
        if at < self.updated_at {
            return Err(SessionError::OutOfOrder { at, last: self.updated_at });
        }
        let illegal = || SessionError::IllegalEvent { state: self.state, event: event.name() };
        if self.state.is_terminal() {
            return Err(illegal());
        }
        match (self.state, event) {
            (SessionState::Consent, SessionEvent::ConsentGiven { .. }) => {
                self.state = SessionState::Questionnaire;
            }
            (SessionState::Consent, SessionEvent::ConsentDeclined { .. }) => {
                self.state = SessionState::Rejected(ExclusionReason::NoConsent);
            }
            (SessionState::Questionnaire, SessionEvent::QuestionnaireSubmitted { answers, .. }) => {
                let failures = evaluate_questionnaire(&self.participant, answers, &self.config.screening);
                self.state = match questionnaire_verdict(&failures, answers) {
                    Some(reason) => SessionState::Rejected(reason),
                    None => self.enter(Phase::Digits),
                };
                self.answers = Some(answers.clone());
            }
            (state, SessionEvent::Presented { item, .. }) => {
                let phase = state.phase().ok_or_else(illegal)?;
                self.check_item(*item)?;
                if let Some((pending, _)) = self.pending {
                    return Err(if pending == *item {
                        SessionError::AlreadyPresented(*item)
                    } else {
                        SessionError::NotCurrentItem { item: *item }
                    });
                }
                let expected = ItemRef { phase, index: self.answered_in(phase) };
                if *item != expected {
                    return Err(if item.phase == phase && item.index < expected.index {
                        SessionError::AlreadyPresented(*item)
                    } else {
                        SessionError::NotCurrentItem { item: *item }
                    });
                }
                self.pending = Some((*item, at));
            }
            (state, SessionEvent::Responded { item, answer, reaction_ms, .. }) => {
                state.phase().ok_or_else(illegal)?;
                self.check_item(*item)?;
                let (pending, presented_at) = self.pending.ok_or(SessionError::NotPresented(*item))?;
                if pending != *item {
                    return Err(SessionError::NotCurrentItem { item: *item });
                }
                let correct = match (item.phase, answer) {
                    (Phase::Digits, Answer::Digits { digits }) => {
                        let want = normalize_digits(&self.digits.trials[item.index].digits);
                        normalize_digits(digits).is_some_and(|d| Some(d) == want)
                    }
                    (Phase::Practice | Phase::Main, Answer::Choice { side }) => {
                        self.block_item(*item).is_some_and(|b| b.correct_side == *side)
                    }
                    _ => return Err(SessionError::WrongAnswerKind(*item)),
                };
                self.pending = None;
                self.responses.push(ResponseRecord {
                    item: *item,
                    answer: answer.clone(),
                    presented_at,
                    responded_at: at,
                    correct,
                    reaction_ms: *reaction_ms,
                });
                if self.answered_in(item.phase) == self.phase_len(item.phase) {
                    self.finish_phase(item.phase, at);
                }
            }
            (_, SessionEvent::Abandoned { reason, .. }) => {
                self.pending = None;
                self.state = SessionState::Rejected(*reason);
            }
            _ => return Err(illegal()),
        }
        self.updated_at = at;
        Ok(())
    }

    fn finish_phase(&mut self, phase: Phase, at: Timestamp) {
        self.state = match phase {
            Phase::Digits => {
                let outcome = evaluate_digits(&self.digits_responses(), &self.digits, self.config.digits_pass_threshold);
                if outcome.is_ok_and(DigitsOutcome::passed) {
                    self.enter(Phase::Practice)
                } else {
                    SessionState::Rejected(ExclusionReason::Digits)
                }
            }
            Phase::Practice => self.enter(Phase::Main),
            Phase::Main => SessionState::Completed,
        };
        if self.state == SessionState::Completed {
            self.completed_at = Some(at);
        }
    }

    /// True if the session is still open but has seen no event for longer
    /// than the inactivity timeout.
    pub fn is_idle(&self, now: Timestamp) -> bool {
        !self.state.is_terminal() && now.millis_since(self.updated_at) > self.config.inactivity_timeout_ms
    }

    /// Fraction of practice items answered correctly, if any were answered.
    pub fn practice_accuracy(&self) -> Option<f64> {
        fraction(self.responses.iter().filter(|r| r.item.phase == Phase::Practice))
    }

    /// Responses that enter scoring: main block, non-catch items.
    pub fn scored_responses(&self) -> Vec<ScoredResponse> {
        self.responses
            .iter()
            .filter(|r| r.item.phase == Phase::Main)
            .filter_map(|r| {
                let item = &self.main[r.item.index];
                (!item.is_catch_trial).then(|| ScoredResponse {
                    recording_id: item.recording_id.clone(),
                    pair_id: item.pair_id.clone(),
                    correct: r.correct,
                })
            })
            .collect()
    }
}

fn fraction<'a>(records: impl Iterator<Item = &'a ResponseRecord>) -> Option<f64> {
    let (mut n, mut ok) = (0usize, 0usize);
    for r in records {
        n += 1;
        ok += usize::from(r.correct);
    }
    (n > 0).then(|| ok as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatchResult {
    pub correct: usize,
    pub total: usize,
    pub fraction: f64,
}

/// Catch-trial accuracy of a completed session.
pub fn evaluate_catch(session: &Session) -> Result<CatchResult, SessionError> {
    if session.state != SessionState::Completed {
        return Err(SessionError::NotCompleted);
    }
    let total = session.main.iter().filter(|i| i.is_catch_trial).count();
    if total == 0 {
        return Err(SessionError::NoCatchTrials);
    }
    let correct = session
        .responses
        .iter()
        .filter(|r| r.item.phase == Phase::Main && r.correct && session.main[r.item.index].is_catch_trial)
        .count();
    Ok(CatchResult { correct, total, fraction: correct as f64 / total as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum Verdict {
    Included,
    Excluded(ExclusionReason),
}

impl Verdict {
    pub fn reason(self) -> Option<ExclusionReason> {
        match self {
            Verdict::Included => None,
            Verdict::Excluded(r) => Some(r),
        }
    }
}

/// Decides inclusion from the session record alone, reporting the first
/// failing criterion. Criteria are re-evaluated under `config`, so a study
/// can be re-filtered with different thresholds.
pub fn filter_submission(session: &Session, config: &ProtocolConfig) -> Verdict {
    use ExclusionReason as R;
    let excluded = Verdict::Excluded;
    if session.state == SessionState::Rejected(R::NoConsent) {
        return excluded(R::NoConsent);
    }
    let unfinished = match session.state {
        SessionState::Rejected(R::Timeout) => R::Timeout,
        _ => R::Incomplete,
    };
    let Some(answers) = &session.answers else {
        return excluded(unfinished);
    };
    let failures = evaluate_questionnaire(&session.participant, answers, &config.screening);
    if let Some(reason) = questionnaire_verdict(&failures, answers) {
        return excluded(reason);
    }
    match evaluate_digits(&session.digits_responses(), &session.digits, config.digits_pass_threshold) {
        Ok(outcome) if !outcome.passed() => return excluded(R::Digits),
        Ok(_) => {}
        Err(_) => return excluded(unfinished),
    }
    let catch = match evaluate_catch(session) {
        Ok(c) => c,
        Err(SessionError::NoCatchTrials) => return excluded(R::Validation),
        Err(_) => return excluded(unfinished),
    };
    if catch.fraction <= config.catch_threshold {
        return excluded(R::Validation);
    }
    if let Some(cutoff) = config.practice_cutoff {
        if session.practice_accuracy().is_some_and(|a| a < cutoff) {
            return excluded(R::Practice);
        }
    }
    Verdict::Included
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Digits => "digits",
            Phase::Practice => "practice",
            Phase::Main => "main",
        })
    }
}

impl fmt::Display for ItemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.phase, self.index)
    }
}

impl core::str::FromStr for ItemRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (phase, index) = s.split_once(':').ok_or_else(|| s.to_string())?;
        let phase = match phase {
            "digits" => Phase::Digits,
            "practice" => Phase::Practice,
            "main" => Phase::Main,
            _ => return Err(s.to_string()),
        };
        Ok(ItemRef { phase, index: index.parse().map_err(|_| s.to_string())? })
    }
}
