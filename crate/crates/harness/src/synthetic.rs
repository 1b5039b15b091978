//! Synthetic corpora: generated word lists, manifests and tone-burst
//! "recordings" for demos and tests.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use drt_core::audio::AudioBuffer;
use drt_core::blocks::{
    build_blocks, inject_catch_trials, select_practice, CatchPolicy, DEFAULT_CATCH_TRIALS, DEFAULT_PRACTICE_ITEMS,
};
use drt_core::corpus::{
    ContrastPosition, Gender, Recording, RecordingId, TestSet, WordList, WordPair, WordSide, DEFAULT_INSTANCES_PER_WORD,
};
use drt_core::rng::split_seed;
use drt_core::session::{
    DigitsTest, ItemRef, ParticipantProfile, ProtocolConfig, QuestionnaireAnswers, ScreeningCriteria, Session,
    SessionState, DEFAULT_DIGIT_SNRS_DB,
};
use drt_core::simulator::{ListenerModel, QOverride};
use serde_json::json;

use crate::config::BonusConfig;
use crate::error::{write_atomic, Result};
use crate::formats::{word_list_to_csv, write_manifest, write_wav};
use crate::service::{ClientEvent, NextResponse, ResponseSubmission, ServiceResult, StudyService};
use crate::study::{StudyDefinition, StudyStatus};

pub const FEATURE_CLASSES: [&str; 6] = ["voicing", "nasality", "sustention", "sibilation", "graveness", "compactness"];

/// `n` pairs cycling through `classes`, ids `p000`, `p001`, ...
pub fn word_list(n: usize, classes: &[&str]) -> WordList {
    let pairs = (0..n)
        .map(|i| {
            WordPair::new(
                format!("p{i:03}"),
                classes[i % classes.len()],
                if i % 2 == 0 { ContrastPosition::Initial } else { ContrastPosition::Final },
                &format!("yes{i}"),
                &format!("no{i}"),
            )
        })
        .collect();
    WordList::new("synthetic", "en", pairs).expect("generated list is valid")
}

/// A valid set with `instances` recordings per word, half of them female.
/// Audio files are named `<recording_id>.wav`.
pub fn test_set(list: &WordList, condition: &str, instances: usize) -> TestSet {
    let mut recordings = Vec::new();
    for pair in list.pairs() {
        for side in WordSide::BOTH {
            for k in 0..instances {
                let id = format!("{}-{}-{k}", pair.pair_id, side);
                recordings.push(Recording {
                    recording_id: RecordingId(id.clone()),
                    pair_id: pair.pair_id.clone(),
                    word_side: side,
                    talker_id: format!("t{k}"),
                    talker_gender: if k < instances / 2 { Gender::Female } else { Gender::Male },
                    language: list.language.clone(),
                    condition: condition.into(),
                    audio: format!("{id}.wav"),
                    sample_rate_hz: 16_000,
                    source_condition: None,
                });
            }
        }
    }
    TestSet { word_list: list.name.clone(), condition: condition.into(), instances_per_word: instances, recordings }
}

/// Harmonic tone burst between silences, loosely voice-like: fundamental
/// set by `pitch_hz`, a few decaying harmonics and a smooth envelope.
pub fn burst(rate: u32, pitch_hz: f64, pre_ms: f64, tone_ms: f64, post_ms: f64, amp: f64) -> AudioBuffer {
    let n = |ms: f64| (ms * f64::from(rate) / 1000.0).round() as usize;
    let len = n(tone_ms);
    let mut s = vec![0.0; n(pre_ms)];
    s.extend((0..len).map(|i| {
        let t = i as f64 / f64::from(rate);
        let env = (PI * (i as f64 + 0.5) / len as f64).sin().powf(0.5);
        let v: f64 = (1..=5)
            .map(|h| (2.0 * PI * pitch_hz * h as f64 * t).sin() / h as f64)
            .sum();
        amp * env * v / 2.0
    }));
    s.extend(std::iter::repeat_n(0.0, n(post_ms)));
    AudioBuffer::new(rate, s).expect("finite samples")
}

/// Raw audio for recording number `index` of `rec`.
fn raw_audio(rec: &Recording, index: usize, rate: u32) -> AudioBuffer {
    let pitch = match rec.talker_gender {
        Gender::Female => 200.0,
        Gender::Male => 110.0,
    } + (index % 7) as f64 * 3.0;
    burst(rate, pitch, 300.0 + (index % 5) as f64 * 40.0, 350.0 + (index % 9) as f64 * 20.0, 400.0, 0.25)
}

/// Paths written by [`write_demo`].
#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub config: PathBuf,
    pub dir: PathBuf,
}

/// Writes a complete synthetic study under `dir`: word list, raw recordings
/// at 22.05 kHz with their manifest, digit recordings and `study.json`.
pub fn write_demo(dir: &Path, pairs: usize, instances: usize, blocks: usize) -> Result<Demo> {
    let list = word_list(pairs, &FEATURE_CLASSES);
    write_atomic(&dir.join("lists/words.csv"), word_list_to_csv(&list).as_bytes())?;

    let raw_rate = 22_050;
    let mut set = test_set(&list, "RAW", instances);
    for (i, rec) in set.recordings.iter_mut().enumerate() {
        rec.sample_rate_hz = raw_rate;
        write_wav(&dir.join("raw").join(&rec.audio), &raw_audio(rec, i, raw_rate))?;
    }
    write_manifest(&dir.join("raw/manifest.jsonl"), &set.recordings)?;

    for d in 0..10 {
        let audio = burst(16_000, 130.0 + 15.0 * d as f64, 20.0, 300.0, 20.0, 0.25);
        write_wav(&dir.join(format!("digits/{d}.wav")), &audio)?;
    }

    let mut nb = ListenerModel::new(0.9);
    nb.overrides.push(QOverride { condition: "NB".into(), feature_class: "sibilation".into(), q: 0.8 });
    nb.seed = 1;
    let config = json!({
        "version": 1,
        "study_id": "demo",
        "language": "en",
        "word_list": "lists/words.csv",
        "raw_manifest": "raw/manifest.jsonl",
        "output": "out",
        "condition": {"kind": "pcmu_nb", "label": "NB"},
        "instances_per_word": instances,
        "blocks": blocks,
        "protocol": {"screening": {"language": "en", "min_approval_rate": 0.98}},
        "digits": {"recordings": "digits"},
        "simulation": {
            "listeners_per_block": 20,
            "wb_manifest": "out/WB/manifest.jsonl",
            "conditions": [
                {"manifest": "out/WB/manifest.jsonl", "model": ListenerModel::new(0.95)},
                {"manifest": "out/NB/manifest.jsonl", "model": nb}
            ],
            "paired": true
        },
        "seeds": {"blocks": 11, "catch": 12, "practice": 13, "digits": 14, "sessions": 15, "simulation": 16, "noise": 17}
    });
    let path = dir.join("study.json");
    write_atomic(&path, serde_json::to_string_pretty(&config).expect("json value").as_bytes())?;
    Ok(Demo { config: path, dir: dir.to_path_buf() })
}

/// Profile that passes the default screening for `language`.
pub fn eligible_participant(id: &str, language: &str) -> ParticipantProfile {
    ParticipantProfile {
        participant_id: id.into(),
        first_language: language.into(),
        residency: "US".into(),
        dyslexia: false,
        hearing_problems: false,
        headphones: true,
        quiet_environment: true,
        approval_rate: Some(0.99),
        age_group: None,
        gender: None,
    }
}

/// A ready-to-serve study over a synthetic `condition` set: `pairs` pairs
/// with six instances per word, `blocks` blocks with 20 catch trials each,
/// 16 practice items and the default digits test.
pub fn study_definition(study_id: &str, condition: &str, pairs: usize, blocks: usize, seed: u64) -> StudyDefinition {
    let list = word_list(pairs, &FEATURE_CLASSES);
    let set = test_set(&list, condition, DEFAULT_INSTANCES_PER_WORD);
    let wb = test_set(&list, "WB", DEFAULT_INSTANCES_PER_WORD);
    let plans = build_blocks(&set, &list, blocks, split_seed(seed, 1))
        .expect("synthetic set is balanced")
        .iter()
        .map(|b| {
            inject_catch_trials(b, &wb, &list, DEFAULT_CATCH_TRIALS, CatchPolicy::default(), split_seed(seed, 2))
                .expect("enough catch material")
        })
        .collect();
    let practice = select_practice(&wb, &list, DEFAULT_PRACTICE_ITEMS, split_seed(seed, 3)).expect("enough practice material");
    StudyDefinition {
        study_id: study_id.into(),
        condition: condition.into(),
        language: list.language.clone(),
        protocol: ProtocolConfig::new(ScreeningCriteria::for_language(&list.language)),
        word_list: list,
        blocks: plans,
        practice,
        digits: DigitsTest::generate(&DEFAULT_DIGIT_SNRS_DB, split_seed(seed, 4)),
        session_seed: split_seed(seed, 5),
        bonus: BonusConfig::default(),
        status: StudyStatus::Open,
    }
}

/// Walks one participant through a whole session over the service API.
/// `answer_correctly` decides, per item, whether to give the right answer;
/// it sees the session as the server holds it. Returns the final state.
pub fn complete_session(
    svc: &StudyService,
    session_id: &str,
    mut answer_correctly: impl FnMut(&Session, ItemRef) -> bool,
) -> ServiceResult<SessionState> {
    svc.post_event(session_id, ClientEvent::Consent { given: true })?;
    let profile = svc.session(session_id)?.participant;
    svc.post_event(session_id, ClientEvent::Questionnaire { answers: QuestionnaireAnswers::from_profile(&profile) })?;
    loop {
        let NextResponse::Item(item) = svc.next_item(session_id)? else {
            return Ok(svc.session(session_id)?.state);
        };
        let s = svc.session(session_id)?;
        let r: ItemRef = item.item_ref.parse().expect("server item refs parse");
        let correct = answer_correctly(&s, r);
        let sub = match s.digits_trial(r) {
            Some(t) => {
                let digits = if correct { t.digits.clone() } else { wrong_digits(&t.digits) };
                ResponseSubmission { item_ref: item.item_ref, choice: None, digits: Some(digits), reaction_ms: Some(900) }
            }
            None => {
                let b = s.block_item(r).expect("choice item");
                let side = if correct { b.correct_side } else { b.correct_side.other() };
                let word = b.choices[usize::from(side == WordSide::Absent)].clone();
                ResponseSubmission { item_ref: item.item_ref, choice: Some(word), digits: None, reaction_ms: Some(700) }
            }
        };
        svc.submit_response(session_id, sub)?;
    }
}

fn wrong_digits(d: &str) -> String {
    d.bytes().map(|c| char::from(b'0' + (c - b'0' + 1) % 10)).collect()
}
