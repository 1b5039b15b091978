//! Word lists, recordings and test sets.
//!
//! Feature classes are open-vocabulary tags: consonant inventories differ by
//! language and tonal lists use their own labels, so adding a language is a
//! data change only. Orthography is stored as NFC-normalized Unicode.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Default number of recordings per target word (half female, half male).
pub const DEFAULT_INSTANCES_PER_WORD: usize = 6;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

string_id!(
    /// Identifier of a word pair, unique within a word list.
    PairId
);
string_id!(
    /// Identifier of a recording, unique within a test set.
    RecordingId
);

/// Where in the word the distinctive contrast sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastPosition {
    Initial,
    Final,
    Tonal,
}

impl FromStr for ContrastPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "initial" => Ok(ContrastPosition::Initial),
            "final" => Ok(ContrastPosition::Final),
            "tonal" => Ok(ContrastPosition::Tonal),
            other => Err(other.to_string()),
        }
    }
}

/// Which member of a pair: the word carrying the distinctive feature or the
/// one lacking it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordSide {
    Present,
    Absent,
}

impl WordSide {
    pub const BOTH: [WordSide; 2] = [WordSide::Present, WordSide::Absent];

    pub fn other(self) -> WordSide {
        match self {
            WordSide::Present => WordSide::Absent,
            WordSide::Absent => WordSide::Present,
        }
    }
}

impl fmt::Display for WordSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordSide::Present => "present",
            WordSide::Absent => "absent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

/// Errors raised while building a [`WordList`]. `row` is the zero-based
/// index of the offending pair.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("word list has no pairs")]
    EmptyList,
    #[error("pair {row}: empty {field}")]
    EmptyField { row: usize, field: &'static str },
    #[error("pair {row}: duplicate pair id {pair_id:?}")]
    DuplicatePairId { row: usize, pair_id: PairId },
    #[error("pair {row}: both words are {word:?}")]
    IdenticalWords { row: usize, word: String },
    #[error("pair {row}: unknown contrast position {value:?} (expected initial, final or tonal)")]
    UnknownContrastPosition { row: usize, value: String },
}

impl CorpusError {
    pub fn row(&self) -> Option<usize> {
        match self {
            CorpusError::EmptyList => None,
            CorpusError::EmptyField { row, .. }
            | CorpusError::DuplicatePairId { row, .. }
            | CorpusError::IdenticalWords { row, .. }
            | CorpusError::UnknownContrastPosition { row, .. } => Some(*row),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPair {
    pub pair_id: PairId,
    pub feature_class: String,
    pub contrast_position: ContrastPosition,
    pub word_present: String,
    pub word_absent: String,
}

impl WordPair {
    pub fn new(
        pair_id: impl Into<String>,
        feature_class: impl Into<String>,
        contrast_position: ContrastPosition,
        word_present: &str,
        word_absent: &str,
    ) -> Self {
        WordPair {
            pair_id: PairId(pair_id.into()),
            feature_class: feature_class.into(),
            contrast_position,
            word_present: nfc(word_present),
            word_absent: nfc(word_absent),
        }
    }

    pub fn word(&self, side: WordSide) -> &str {
        match side {
            WordSide::Present => &self.word_present,
            WordSide::Absent => &self.word_absent,
        }
    }

    /// Side whose orthography equals `word` (after NFC), if any.
    pub fn side_of(&self, word: &str) -> Option<WordSide> {
        let word = nfc(word.trim());
        if word == self.word_present {
            Some(WordSide::Present)
        } else if word == self.word_absent {
            Some(WordSide::Absent)
        } else {
            None
        }
    }
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// A validated list of contrasting word pairs in one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWordList")]
pub struct WordList {
    pub name: String,
    pub language: String,
    pairs: Vec<WordPair>,
    #[serde(skip)]
    index: BTreeMap<PairId, usize>,
}

#[derive(Deserialize)]
struct RawWordList {
    name: String,
    language: String,
    pairs: Vec<WordPair>,
}

impl TryFrom<RawWordList> for WordList {
    type Error = CorpusError;

    fn try_from(raw: RawWordList) -> Result<Self, Self::Error> {
        WordList::new(raw.name, raw.language, raw.pairs)
    }
}

impl WordList {
    /// Validates and normalizes `pairs`.
    pub fn new(
        name: impl Into<String>,
        language: impl Into<String>,
        pairs: Vec<WordPair>,
    ) -> Result<Self, CorpusError> {
        if pairs.is_empty() {
            return Err(CorpusError::EmptyList);
        }
        let mut index = BTreeMap::new();
        let mut normalized = Vec::with_capacity(pairs.len());
        for (row, pair) in pairs.into_iter().enumerate() {
            let pair = WordPair {
                pair_id: PairId(pair.pair_id.0.trim().to_string()),
                feature_class: pair.feature_class.trim().to_string(),
                contrast_position: pair.contrast_position,
                word_present: nfc(pair.word_present.trim()),
                word_absent: nfc(pair.word_absent.trim()),
            };
            for (field, value) in [
                ("pair_id", pair.pair_id.as_str()),
                ("feature_class", pair.feature_class.as_str()),
                ("word_present", pair.word_present.as_str()),
                ("word_absent", pair.word_absent.as_str()),
            ] {
                if value.is_empty() {
                    return Err(CorpusError::EmptyField { row, field });
                }
            }
            if pair.word_present == pair.word_absent {
                return Err(CorpusError::IdenticalWords { row, word: pair.word_present });
            }
            if index.insert(pair.pair_id.clone(), row).is_some() {
                return Err(CorpusError::DuplicatePairId { row, pair_id: pair.pair_id });
            }
            normalized.push(pair);
        }
        Ok(WordList { name: name.into(), language: language.into(), pairs: normalized, index })
    }

    pub fn pairs(&self) -> &[WordPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, id: &PairId) -> Option<&WordPair> {
        self.index.get(id).map(|&i| &self.pairs[i])
    }

    /// Position of the pair in list order.
    pub fn position(&self, id: &PairId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Distinct feature classes in first-appearance order.
    pub fn feature_classes(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.pairs
            .iter()
            .filter(|p| seen.insert(p.feature_class.as_str()))
            .map(|p| p.feature_class.as_str())
            .collect()
    }
}

/// One curated audio instance of a target word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recording {
    pub recording_id: RecordingId,
    pub pair_id: PairId,
    pub word_side: WordSide,
    pub talker_id: String,
    pub talker_gender: Gender,
    pub language: String,
    pub condition: String,
    /// Audio file path relative to the manifest's directory.
    pub audio: String,
    pub sample_rate_hz: u32,
    /// Condition this recording was derived from, for treated conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_condition: Option<String>,
}

/// The recordings of one word list under one treatment condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    pub word_list: String,
    pub condition: String,
    pub instances_per_word: usize,
    pub recordings: Vec<Recording>,
}

impl TestSet {
    pub fn recording(&self, id: &RecordingId) -> Option<&Recording> {
        self.recordings.iter().find(|r| &r.recording_id == id)
    }

    /// Recordings grouped by `(pair, side)`, in recording order within a group.
    pub fn by_word(&self) -> BTreeMap<(&PairId, WordSide), Vec<&Recording>> {
        let mut map: BTreeMap<_, Vec<&Recording>> = BTreeMap::new();
        for r in &self.recordings {
            map.entry((&r.pair_id, r.word_side)).or_default().push(r);
        }
        map
    }

    pub fn sample_rate_hz(&self) -> Option<u32> {
        self.recordings.first().map(|r| r.sample_rate_hz)
    }
}

/// One broken test-set invariant. Violations are data: a report lists all
/// of them in a deterministic order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    InvalidInstancesPerWord { instances_per_word: usize },
    DuplicateRecordingId { recording_id: RecordingId },
    UnknownPair { recording_id: RecordingId, pair_id: PairId },
    ConditionMismatch { recording_id: RecordingId, expected: String, found: String },
    MixedSampleRate { recording_id: RecordingId, expected_hz: u32, found_hz: u32 },
    DuplicateInstance { pair_id: PairId, side: WordSide, talker_id: String },
    InstanceCount { pair_id: PairId, side: WordSide, expected: usize, found: usize },
    GenderBalance { pair_id: PairId, side: WordSide, female: usize, male: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidInstancesPerWord { instances_per_word } => {
                write!(f, "instances per word must be a positive even number, got {instances_per_word}")
            }
            Violation::DuplicateRecordingId { recording_id } => {
                write!(f, "duplicate recording id {recording_id}")
            }
            Violation::UnknownPair { recording_id, pair_id } => {
                write!(f, "recording {recording_id} references unknown pair {pair_id}")
            }
            Violation::ConditionMismatch { recording_id, expected, found } => {
                write!(f, "recording {recording_id} has condition {found:?}, test set is {expected:?}")
            }
            Violation::MixedSampleRate { recording_id, expected_hz, found_hz } => {
                write!(f, "recording {recording_id} is {found_hz} Hz, test set is {expected_hz} Hz")
            }
            Violation::DuplicateInstance { pair_id, side, talker_id } => {
                write!(f, "({pair_id}, {side}): talker {talker_id} recorded more than once")
            }
            Violation::InstanceCount { pair_id, side, expected, found } => {
                write!(f, "({pair_id}, {side}): {found} instances, expected {expected}")
            }
            Violation::GenderBalance { pair_id, side, female, male } => {
                write!(f, "({pair_id}, {side}): {female} female / {male} male, expected an even split")
            }
        }
    }
}

/// Checks every test-set invariant. An empty result means the set is valid.
///
/// With a word list, every pair of the list must be covered and every
/// recording must reference a listed pair. The gender split of a word is only
/// checked once its instance count is right, so one miscounted word yields a
/// single violation.
pub fn validate_test_set(set: &TestSet, word_list: Option<&WordList>) -> Vec<Violation> {
    let mut out = Vec::new();
    let expected = set.instances_per_word;
    if expected == 0 || !expected.is_multiple_of(2) {
        out.push(Violation::InvalidInstancesPerWord { instances_per_word: expected });
    }

    let mut ids = BTreeSet::new();
    let mut instances = BTreeSet::new();
    let rate = set.sample_rate_hz();
    for r in &set.recordings {
        if !ids.insert(&r.recording_id) {
            out.push(Violation::DuplicateRecordingId { recording_id: r.recording_id.clone() });
        }
        if let Some(list) = word_list {
            if list.pair(&r.pair_id).is_none() {
                out.push(Violation::UnknownPair {
                    recording_id: r.recording_id.clone(),
                    pair_id: r.pair_id.clone(),
                });
            }
        }
        if r.condition != set.condition {
            out.push(Violation::ConditionMismatch {
                recording_id: r.recording_id.clone(),
                expected: set.condition.clone(),
                found: r.condition.clone(),
            });
        }
        if let Some(rate) = rate {
            if r.sample_rate_hz != rate {
                out.push(Violation::MixedSampleRate {
                    recording_id: r.recording_id.clone(),
                    expected_hz: rate,
                    found_hz: r.sample_rate_hz,
                });
            }
        }
        if !instances.insert((&r.pair_id, r.word_side, r.talker_id.as_str(), r.condition.as_str())) {
            out.push(Violation::DuplicateInstance {
                pair_id: r.pair_id.clone(),
                side: r.word_side,
                talker_id: r.talker_id.clone(),
            });
        }
    }

    let groups = set.by_word();
    let mut words: BTreeSet<(PairId, WordSide)> =
        groups.keys().map(|(p, s)| ((*p).clone(), *s)).collect();
    if let Some(list) = word_list {
        for pair in list.pairs() {
            for side in WordSide::BOTH {
                words.insert((pair.pair_id.clone(), side));
            }
        }
    }
    for (pair_id, side) in words {
        let group = groups.get(&(&pair_id, side)).map(Vec::as_slice).unwrap_or(&[]);
        let found = group.len();
        if found != expected {
            out.push(Violation::InstanceCount { pair_id, side, expected, found });
            continue;
        }
        let female = group.iter().filter(|r| r.talker_gender == Gender::Female).count();
        let male = group.len() - female;
        if female != male {
            out.push(Violation::GenderBalance { pair_id, side, female, male });
        }
    }

    out.sort();
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::format;

    /// Synthetic list of `n` pairs cycling through `classes`.
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
        WordList::new("synthetic", "en", pairs).unwrap()
    }

    /// A valid test set with `instances` recordings per word, half female.
    pub fn test_set(list: &WordList, condition: &str, instances: usize) -> TestSet {
        let mut recordings = Vec::new();
        for pair in list.pairs() {
            for side in WordSide::BOTH {
                for k in 0..instances {
                    let gender = if k < instances / 2 { Gender::Female } else { Gender::Male };
                    recordings.push(Recording {
                        recording_id: RecordingId(format!("{}-{}-{k}", pair.pair_id, side)),
                        pair_id: pair.pair_id.clone(),
                        word_side: side,
                        talker_id: format!("t{k}"),
                        talker_gender: gender,
                        language: list.language.clone(),
                        condition: condition.into(),
                        audio: format!("{}/{}-{}-{k}.wav", condition, pair.pair_id, side),
                        sample_rate_hz: 16_000,
                        source_condition: None,
                    });
                }
            }
        }
        TestSet {
            word_list: list.name.clone(),
            condition: condition.into(),
            instances_per_word: instances,
            recordings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn duplicate_pair_id_is_rejected_with_row() {
        let pairs = vec![
            WordPair::new("vee-bee", "voicing", ContrastPosition::Initial, "vee", "bee"),
            WordPair::new("vee-bee", "voicing", ContrastPosition::Initial, "vee", "bee"),
        ];
        let err = WordList::new("en", "en", pairs).unwrap_err();
        assert_eq!(err, CorpusError::DuplicatePairId { row: 1, pair_id: "vee-bee".into() });
    }

    #[test]
    fn empty_and_identical_words_are_rejected() {
        assert_eq!(WordList::new("x", "en", vec![]).unwrap_err(), CorpusError::EmptyList);
        let err = WordList::new(
            "x",
            "en",
            vec![WordPair::new("a", "voicing", ContrastPosition::Initial, " ", "bee")],
        )
        .unwrap_err();
        assert_eq!(err, CorpusError::EmptyField { row: 0, field: "word_present" });
        let err = WordList::new(
            "x",
            "en",
            vec![WordPair::new("a", "voicing", ContrastPosition::Initial, "bee", "bee")],
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::IdenticalWords { row: 0, .. }));
    }

    #[test]
    fn orthography_is_nfc_normalized() {
        // "é" as e + combining acute
        let pair = WordPair::new("p", "voicing", ContrastPosition::Initial, "cafe\u{301}", "gafé");
        assert_eq!(pair.word_present, "café");
        assert_eq!(pair.side_of("café"), Some(WordSide::Present));
        assert_eq!(pair.side_of("gafe\u{301}"), Some(WordSide::Absent));
        let tonal = WordPair::new("t1", "tone1-tone2", ContrastPosition::Tonal, "妈", "麻");
        assert_eq!(tonal.word(WordSide::Absent), "麻");
    }

    #[test]
    fn contrast_position_parses_known_values_only() {
        assert_eq!("tonal".parse::<ContrastPosition>(), Ok(ContrastPosition::Tonal));
        assert!("medial".parse::<ContrastPosition>().is_err());
    }

    #[test]
    fn balanced_set_is_valid() {
        let list = word_list(8, &["voicing", "nasality"]);
        let set = test_set(&list, "WB", 6);
        assert!(validate_test_set(&set, Some(&list)).is_empty());
    }

    #[test]
    fn four_female_two_male_is_one_gender_violation() {
        let list = word_list(4, &["voicing"]);
        let mut set = test_set(&list, "WB", 6);
        set.recordings[3].talker_gender = Gender::Female;
        let report = validate_test_set(&set, Some(&list));
        assert_eq!(report.len(), 1);
        assert!(matches!(&report[0], Violation::GenderBalance { female: 4, male: 2, .. }));
    }

    #[test]
    fn five_instances_is_one_count_violation() {
        let list = word_list(4, &["voicing"]);
        let mut set = test_set(&list, "WB", 6);
        set.recordings.remove(0);
        let report = validate_test_set(&set, Some(&list));
        assert_eq!(
            report,
            vec![Violation::InstanceCount {
                pair_id: "p000".into(),
                side: WordSide::Present,
                expected: 6,
                found: 5
            }]
        );
    }

    #[test]
    fn mixed_rates_and_unknown_pairs_are_reported() {
        let list = word_list(2, &["voicing"]);
        let mut set = test_set(&list, "WB", 2);
        set.recordings[1].sample_rate_hz = 48_000;
        set.recordings[2].pair_id = "ghost".into();
        let report = validate_test_set(&set, Some(&list));
        assert!(report.iter().any(|v| matches!(v, Violation::MixedSampleRate { found_hz: 48_000, .. })));
        assert!(report.iter().any(|v| matches!(v, Violation::UnknownPair { .. })));
    }

    /// Independent restatement of the test-set invariants.
    fn brute_force_valid(set: &TestSet, list: &WordList) -> bool {
        let n = set.recordings.len();
        if set.instances_per_word == 0 || set.instances_per_word % 2 == 1 {
            return false;
        }
        for i in 0..n {
            let a = &set.recordings[i];
            if list.pair(&a.pair_id).is_none()
                || a.condition != set.condition
                || a.sample_rate_hz != set.recordings[0].sample_rate_hz
            {
                return false;
            }
            for b in &set.recordings[i + 1..] {
                if a.recording_id == b.recording_id
                    || (a.pair_id == b.pair_id
                        && a.word_side == b.word_side
                        && a.talker_id == b.talker_id
                        && a.condition == b.condition)
                {
                    return false;
                }
            }
        }
        for pair in list.pairs() {
            for side in WordSide::BOTH {
                let of_word: Vec<_> = set
                    .recordings
                    .iter()
                    .filter(|r| r.pair_id == pair.pair_id && r.word_side == side)
                    .collect();
                let f = of_word.iter().filter(|r| r.talker_gender == Gender::Female).count();
                if of_word.len() != set.instances_per_word || 2 * f != of_word.len() {
                    return false;
                }
            }
        }
        true
    }

    proptest! {
        #[test]
        fn report_is_empty_iff_invariants_hold(
            instances in prop_oneof![Just(2usize), Just(4)],
            edits in proptest::collection::vec((0usize..64, 0u8..6), 0..3),
        ) {
            let list = word_list(2, &["voicing", "sibilation"]);
            let mut set = test_set(&list, "WB", instances);
            for (idx, kind) in edits {
                let n = set.recordings.len();
                if n == 0 { break; }
                let i = idx % n;
                match kind {
                    0 => { set.recordings.remove(i); }
                    1 => {
                        let g = set.recordings[i].talker_gender;
                        set.recordings[i].talker_gender =
                            if g == Gender::Female { Gender::Male } else { Gender::Female };
                    }
                    2 => set.recordings[i].sample_rate_hz = 8_000,
                    3 => { let dup = set.recordings[i].clone(); set.recordings.push(dup); }
                    4 => set.recordings[i].talker_id = "t0".into(),
                    _ => set.recordings[i].pair_id = "p001".into(),
                }
            }
            let report = validate_test_set(&set, Some(&list));
            prop_assert_eq!(report.is_empty(), brute_force_valid(&set, &list));
            let mut sorted = report.clone();
            sorted.sort();
            prop_assert_eq!(sorted, report);
        }
    }
}
