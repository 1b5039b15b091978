//! Synthetic listeners.
//!
//! A simulated listener walks through the full protocol and answers each
//! item correctly with an independent probability. The resulting event logs
//! have the same shape as live ones, so they exercise the session filter and
//! scoring exactly as real data would.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockPlan, PracticeSet};
use crate::corpus::{RecordingId, WordList};
use crate::rng::{split_seed, stream, stream_rng, StreamRng};
use crate::scoring::{analyze_sessions, compare_conditions, ConditionComparison, ConditionReport, ScoringError, TTestOptions};
use crate::session::{
    Answer, DigitsTest, ParticipantProfile, Phase, ProtocolConfig, QuestionnaireAnswers, Session,
    SessionError, SessionEvent, SessionInit,
};
use crate::Timestamp;

/// Default panel size per block.
pub const DEFAULT_LISTENERS_PER_BLOCK: usize = 20;

/// Start of simulated time: 2024-01-01T00:00:00Z.
const SIM_EPOCH_MS: u64 = 1_704_067_200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QOverride {
    pub condition: String,
    pub feature_class: String,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerModel {
    /// Probability of choosing the spoken word on a scored item.
    pub q: f64,
    #[serde(default)]
    pub overrides: Vec<QOverride>,
    #[serde(default = "one")]
    pub catch_q: f64,
    #[serde(default = "one")]
    pub digits_q: f64,
    /// Practice accuracy; the item's scored probability when absent.
    #[serde(default)]
    pub practice_q: Option<f64>,
    /// Added to the item probability of individual recordings (then clamped
    /// to [0, 1]).
    #[serde(default)]
    pub difficulty: BTreeMap<RecordingId, f64>,
    /// Mixed into the panel seed, so two models can be told apart.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("probability {name} = {value} is outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("listener {session} produced an invalid event: {source}")]
    Protocol { session: String, source: SessionError },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl ListenerModel {
    pub fn new(q: f64) -> Self {
        ListenerModel {
            q,
            overrides: Vec::new(),
            catch_q: 1.0,
            digits_q: 1.0,
            practice_q: None,
            difficulty: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let check = |name, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(SimulationError::InvalidProbability { name, value })
            }
        };
        check("q", self.q)?;
        check("catch_q", self.catch_q)?;
        check("digits_q", self.digits_q)?;
        if let Some(p) = self.practice_q {
            check("practice_q", p)?;
        }
        self.overrides.iter().try_for_each(|o| check("override", o.q))
    }

    /// Probability of a correct answer to a scored item.
    pub fn item_q(&self, condition: &str, feature_class: &str, recording: &RecordingId) -> f64 {
        let base = self
            .overrides
            .iter()
            .find(|o| o.condition == condition && o.feature_class == feature_class)
            .map_or(self.q, |o| o.q);
        (base + self.difficulty.get(recording).copied().unwrap_or(0.0)).clamp(0.0, 1.0)
    }
}

/// Material shared by every session of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub study_id: String,
    /// Main blocks, catch trials included.
    pub blocks: Vec<BlockPlan>,
    pub practice: PracticeSet,
    pub digits: DigitsTest,
    pub config: ProtocolConfig,
}

/// One simulated session: how it was created and what happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSession {
    pub init: SessionInit,
    pub events: Vec<SessionEvent>,
}

impl SimulatedSession {
    pub fn replay(&self) -> Result<Session, SimulationError> {
        Session::replay(self.init.clone(), &self.events)
            .map_err(|(_, source)| SimulationError::Protocol { session: self.init.session_id.clone(), source })
    }
}

fn eligible_profile(id: String, config: &ProtocolConfig) -> ParticipantProfile {
    ParticipantProfile {
        participant_id: id,
        first_language: config.screening.language.clone(),
        residency: config.screening.residency.first().cloned().unwrap_or_else(|| "US".into()),
        dyslexia: false,
        hearing_problems: false,
        headphones: true,
        quiet_environment: true,
        approval_rate: Some(1.0),
        age_group: None,
        gender: None,
    }
}

/// A triplet differing from `digits` in one position.
fn wrong_triplet(digits: &str, rng: &mut StreamRng) -> String {
    let mut chars: Vec<u8> = digits.bytes().collect();
    if chars.is_empty() {
        return "0".into();
    }
    let pos = rng.random_range(0..chars.len());
    let shift = rng.random_range(1..10u8);
    chars[pos] = b'0' + (chars[pos].wrapping_sub(b'0') + shift) % 10;
    String::from_utf8(chars).unwrap_or_default()
}

/// Runs one listener assigned to `spec.blocks[block_index]`. `listener_seed`
/// fixes every random choice, including item order.
pub fn simulate_listener(
    spec: &PanelSpec,
    model: &ListenerModel,
    block_index: usize,
    listener_index: usize,
    listener_seed: u64,
) -> Result<SimulatedSession, SimulationError> {
    let block = &spec.blocks[block_index];
    let session_id = format!("sim-b{:02}-l{:03}", block.block_id, listener_index);
    let start = SIM_EPOCH_MS + (block_index as u64 * 1_000 + listener_index as u64) * 60_000;
    let init = SessionInit {
        session_id: session_id.clone(),
        study_id: spec.study_id.clone(),
        participant: eligible_profile(format!("participant-{session_id}"), &spec.config),
        block: block.clone(),
        practice: spec.practice.clone(),
        digits: spec.digits.clone(),
        config: spec.config.clone(),
        order_seed: split_seed(listener_seed, 0),
        created_at: Timestamp::from_millis(start),
    };
    let mut session = Session::open(init.clone());
    let mut rng = stream_rng(listener_seed, stream::LISTENER);
    let mut now = start;
    let mut events = Vec::new();
    let mut push = |session: &mut Session, event: SessionEvent| {
        session
            .advance(&event)
            .map_err(|source| SimulationError::Protocol { session: session_id.clone(), source })?;
        events.push(event);
        Ok::<(), SimulationError>(())
    };
    let mut tick = |rng: &mut StreamRng, lo: u64, hi: u64| {
        now += rng.random_range(lo..hi);
        Timestamp::from_millis(now)
    };

    push(&mut session, SessionEvent::ConsentGiven { at: tick(&mut rng, 1_000, 5_000) })?;
    let answers = QuestionnaireAnswers::from_profile(&session.participant);
    push(&mut session, SessionEvent::QuestionnaireSubmitted { answers, at: tick(&mut rng, 10_000, 40_000) })?;
    while let Some(next) = session.next_item() {
        let item = next.item;
        push(&mut session, SessionEvent::Presented { item, at: tick(&mut rng, 200, 800) })?;
        let answer = match item.phase {
            Phase::Digits => {
                let want = &session.digits.trials[item.index].digits;
                let digits = if rng.random_bool(model.digits_q) { want.clone() } else { wrong_triplet(want, &mut rng) };
                Answer::Digits { digits }
            }
            Phase::Practice | Phase::Main => {
                let b = session.block_item(item).expect("item in range");
                let scored = model.item_q(&b.condition, &b.feature_class, &b.recording_id);
                let q = match (item.phase, b.is_catch_trial) {
                    (Phase::Main, true) => model.catch_q,
                    (Phase::Practice, _) => model.practice_q.unwrap_or(scored),
                    _ => scored,
                };
                let side = if rng.random_bool(q) { b.correct_side } else { b.correct_side.other() };
                Answer::Choice { side }
            }
        };
        push(&mut session, SessionEvent::Responded { item, answer, at: tick(&mut rng, 600, 3_000), reaction_ms: None })?;
    }
    Ok(SimulatedSession { init, events })
}

/// Seed of listener `listener_index` of block `block_index`.
pub fn listener_seed(panel_seed: u64, model: &ListenerModel, block_index: usize, listener_index: usize) -> u64 {
    let block = split_seed(panel_seed ^ model.seed, block_index as u64);
    split_seed(block, listener_index as u64)
}

/// `listeners_per_block` sessions for every block, in block order.
pub fn simulate_panel(
    spec: &PanelSpec,
    model: &ListenerModel,
    listeners_per_block: usize,
    seed: u64,
) -> Result<Vec<SimulatedSession>, SimulationError> {
    model.validate()?;
    let mut out = Vec::with_capacity(spec.blocks.len() * listeners_per_block);
    for b in 0..spec.blocks.len() {
        for l in 0..listeners_per_block {
            out.push(simulate_listener(spec, model, b, l, listener_seed(seed, model, b, l))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub first: ConditionReport,
    pub second: ConditionReport,
    pub comparison: ConditionComparison,
}

/// Simulates both conditions, filters and scores each, and compares them.
#[allow(clippy::too_many_arguments)]
pub fn simulate_condition_pair(
    list: &WordList,
    first: (&PanelSpec, &ListenerModel),
    second: (&PanelSpec, &ListenerModel),
    listeners_per_block: usize,
    seed: u64,
    options: TTestOptions,
) -> Result<PairReport, SimulationError> {
    let mut reports = Vec::with_capacity(2);
    for (i, (spec, model)) in [first, second].into_iter().enumerate() {
        let sims = simulate_panel(spec, model, listeners_per_block, split_seed(seed, i as u64))?;
        let sessions = sims.iter().map(SimulatedSession::replay).collect::<Result<Vec<_>, _>>()?;
        let condition = spec.blocks.first().map(|b| b.condition.clone()).unwrap_or_default();
        reports.push(analyze_sessions(&condition, list, &sessions, &spec.config)?);
    }
    let second = reports.pop().expect("two reports");
    let first = reports.pop().expect("two reports");
    let comparison = compare_conditions(&first, &second, options)?;
    Ok(PairReport { first, second, comparison })
}

/// Probability that `Binomial(n, p)` exceeds `k`.
pub fn binomial_tail_above(n: u32, p: f64, k: u32) -> f64 {
    let mut total = 0.0;
    for j in (k + 1)..=n {
        let ln_choose = libm::lgamma(f64::from(n) + 1.0) - libm::lgamma(f64::from(j) + 1.0) - libm::lgamma(f64::from(n - j) + 1.0);
        total += libm::exp(ln_choose + f64::from(j) * libm::log(p) + f64::from(n - j) * libm::log1p(-p));
    }
    total
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::blocks::{build_blocks, inject_catch_trials, select_practice, CatchPolicy, DEFAULT_CATCH_TRIALS};
    use crate::corpus::{fixtures, TestSet};
    use crate::scoring::SessionTally;
    use crate::session::{filter_submission, ExclusionReason, ScreeningCriteria, Verdict, DEFAULT_DIGIT_SNRS_DB};

    pub fn spec(list: &WordList, set: &TestSet, wb: &TestSet, blocks: usize, seed: u64) -> PanelSpec {
        let plans = build_blocks(set, list, blocks, seed).unwrap();
        let blocks = plans
            .iter()
            .map(|b| inject_catch_trials(b, wb, list, DEFAULT_CATCH_TRIALS, CatchPolicy::default(), seed).unwrap())
            .collect();
        PanelSpec {
            study_id: "sim".into(),
            blocks,
            practice: select_practice(wb, list, 16, seed).unwrap(),
            digits: DigitsTest::generate(&DEFAULT_DIGIT_SNRS_DB, seed),
            config: ProtocolConfig::new(ScreeningCriteria::for_language("en")),
        }
    }

    #[test]
    fn perfect_listeners_score_100() {
        let list = fixtures::word_list(32, &["voicing", "nasality", "sustention", "sibilation"]);
        let wb = fixtures::test_set(&list, "WB", 6);
        let spec = spec(&list, &wb, &wb, 6, 1);
        let sims = simulate_panel(&spec, &ListenerModel::new(1.0), 3, 9).unwrap();
        assert_eq!(sims.len(), 18);
        let sessions: Vec<Session> = sims.iter().map(|s| s.replay().unwrap()).collect();
        assert!(sessions.iter().all(|s| filter_submission(s, &s.config) == Verdict::Included));
        let report = analyze_sessions("WB", &list, &sessions, &spec.config).unwrap();
        assert_eq!(report.overall.mean, 100.0);
        assert_eq!(report.sessions, SessionTally { total: 18, included: 18, excluded: Default::default() });
    }

    #[test]
    fn deterministic_given_seed() {
        let list = fixtures::word_list(24, &["voicing", "nasality"]);
        let wb = fixtures::test_set(&list, "WB", 6);
        let spec = spec(&list, &wb, &wb, 6, 2);
        let model = ListenerModel { catch_q: 0.9, digits_q: 0.9, ..ListenerModel::new(0.8) };
        let a = simulate_panel(&spec, &model, 2, 5).unwrap();
        assert_eq!(a, simulate_panel(&spec, &model, 2, 5).unwrap());
        assert_ne!(a, simulate_panel(&spec, &model, 2, 6).unwrap());
    }

    #[test]
    fn inclusion_rate_matches_binomial_tail() {
        let list = fixtures::word_list(32, &["voicing", "nasality"]);
        let wb = fixtures::test_set(&list, "WB", 6);
        let spec = spec(&list, &wb, &wb, 6, 3);
        let model = ListenerModel { catch_q: 0.9, ..ListenerModel::new(0.75) };
        let n = 60;
        let sims = simulate_panel(&spec, &model, n / 6, 77).unwrap();
        let included = sims
            .iter()
            .filter(|s| {
                let s = s.replay().unwrap();
                filter_submission(&s, &s.config) == Verdict::Included
            })
            .count();
        let p = binomial_tail_above(20, 0.9, 16);
        assert!((p - 0.8670).abs() < 1e-4);
        let sd = libm::sqrt(n as f64 * p * (1.0 - p));
        assert!((included as f64 - n as f64 * p).abs() <= 3.0 * sd, "{included} of {n}, expected {:.1}", n as f64 * p);
    }

    #[test]
    fn weak_digits_listeners_are_rejected_early() {
        let list = fixtures::word_list(24, &["voicing"]);
        let wb = fixtures::test_set(&list, "WB", 6);
        let spec = spec(&list, &wb, &wb, 6, 4);
        let model = ListenerModel { digits_q: 0.0, ..ListenerModel::new(0.9) };
        let sims = simulate_panel(&spec, &model, 1, 1).unwrap();
        for s in &sims {
            let s = s.replay().unwrap();
            assert_eq!(filter_submission(&s, &s.config), Verdict::Excluded(ExclusionReason::Digits));
            assert!(s.responses.iter().all(|r| r.item.phase == Phase::Digits));
        }
    }

    #[test]
    fn overrides_and_difficulty() {
        let mut m = ListenerModel::new(0.9);
        m.overrides.push(QOverride { condition: "NB".into(), feature_class: "voicing".into(), q: 0.6 });
        m.difficulty.insert("hard".into(), -0.5);
        assert_eq!(m.item_q("NB", "voicing", &"x".into()), 0.6);
        assert_eq!(m.item_q("WB", "voicing", &"x".into()), 0.9);
        assert!((m.item_q("WB", "voicing", &"hard".into()) - 0.4).abs() < 1e-12);
        assert!(ListenerModel::new(1.5).validate().is_err());
    }

    #[test]
    fn binomial_tail_edges() {
        assert!((binomial_tail_above(20, 0.5, 0) - (1.0 - libm::pow(0.5, 20.0))).abs() < 1e-12);
        assert_eq!(binomial_tail_above(20, 0.9, 20), 0.0);
    }
}
