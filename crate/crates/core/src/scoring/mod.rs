//! Guessing-adjusted intelligibility scores, aggregates, condition
//! comparisons and the bonus ranking.
//!
//! Scores are computed per recording: a file answered correctly `R` times and
//! incorrectly `W` times scores `(R - W) / (R + W) * 100`, so chance
//! performance in a two-alternative task maps to zero.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{PairId, RecordingId, WordList};
use crate::session::{evaluate_catch, filter_submission, ExclusionReason, ProtocolConfig, Session};
use crate::Timestamp;

pub mod special;
pub mod stats;

pub use stats::{
    aggregate, pearson, t_test, Aggregate, CorrelationResult, Degeneracy, StatTestResult,
    TTestOptions, TestMethod, DEFAULT_ALPHA,
};

/// Name of the confidence-interval method, printed in report footers.
pub const CI_METHOD: &str = "student-t 95% interval over per-file scores";

/// Default bonus per rewarded session, in minor currency units (cents).
pub const DEFAULT_BONUS_MINOR_UNITS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoringError {
    #[error("no responses for this file (R + W = 0)")]
    NoResponses,
    #[error("empty input")]
    Empty,
    #[error("need at least {needed} values, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("recording {recording} references pair {pair} which is not in the word list")]
    UnmappedRecording { recording: RecordingId, pair: PairId },
    #[error("recording {0} is scored with two different pairs")]
    InconsistentPair(RecordingId),
    #[error("paired comparison needs common recordings, found {found}")]
    NoCommonRecordings { found: usize },
}

/// `(R - W) / (R + W) * 100`.
///
/// The numerator and denominator are exact integers well below 2^53, so the
/// single IEEE division is the correctly rounded value of the exact ratio.
pub fn score_file(r: u32, w: u32) -> Result<f64, ScoringError> {
    let total = u64::from(r) + u64::from(w);
    if total == 0 {
        return Err(ScoringError::NoResponses);
    }
    let num = 100 * (i64::from(r) - i64::from(w));
    Ok(num as f64 / total as f64)
}

/// One scored answer: whether the listener picked the word actually spoken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub recording_id: RecordingId,
    pub pair_id: PairId,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScore {
    pub recording_id: RecordingId,
    pub pair_id: PairId,
    pub feature_class: String,
    #[serde(rename = "R")]
    pub r: u32,
    #[serde(rename = "W")]
    pub w: u32,
    pub pc: f64,
}

/// Tallies responses per recording, sorted by recording id.
pub fn score_files(responses: &[ScoredResponse], list: &WordList) -> Result<Vec<FileScore>, ScoringError> {
    let mut tally: BTreeMap<&RecordingId, (&PairId, u32, u32)> = BTreeMap::new();
    for resp in responses {
        let entry = tally.entry(&resp.recording_id).or_insert((&resp.pair_id, 0, 0));
        if entry.0 != &resp.pair_id {
            return Err(ScoringError::InconsistentPair(resp.recording_id.clone()));
        }
        if resp.correct {
            entry.1 += 1;
        } else {
            entry.2 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(rec, (pair, r, w))| {
            let class = &list
                .pair(pair)
                .ok_or_else(|| ScoringError::UnmappedRecording { recording: rec.clone(), pair: pair.clone() })?
                .feature_class;
            Ok(FileScore {
                recording_id: rec.clone(),
                pair_id: pair.clone(),
                feature_class: class.clone(),
                r,
                w,
                pc: score_file(r, w)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature_class: String,
    pub aggregate: Aggregate,
}

/// Aggregates of the file scores of each feature class, in the word list's
/// class order. Classes without scored files are omitted.
pub fn feature_breakdown(files: &[FileScore], list: &WordList) -> Result<Vec<FeatureRow>, ScoringError> {
    let mut rows = Vec::new();
    for class in list.feature_classes() {
        let pcs: Vec<f64> = files.iter().filter(|f| f.feature_class == class).map(|f| f.pc).collect();
        if !pcs.is_empty() {
            rows.push(FeatureRow { feature_class: class.into(), aggregate: aggregate(&pcs)? });
        }
    }
    if let Some(stray) = files.iter().find(|f| list.pair(&f.pair_id).is_none()) {
        return Err(ScoringError::UnmappedRecording {
            recording: stray.recording_id.clone(),
            pair: stray.pair_id.clone(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseStats {
    pub total: u64,
    pub min_per_file: u32,
    pub max_per_file: u32,
    pub mean_per_file: f64,
}

impl ResponseStats {
    pub fn of(files: &[FileScore]) -> Option<ResponseStats> {
        let counts: Vec<u32> = files.iter().map(|f| f.r + f.w).collect();
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        Some(ResponseStats {
            total,
            min_per_file: *counts.iter().min()?,
            max_per_file: *counts.iter().max()?,
            mean_per_file: total as f64 / counts.len() as f64,
        })
    }
}

/// How many sessions entered the analysis and why the others did not.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionTally {
    pub total: usize,
    pub included: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
}

impl SessionTally {
    pub fn record(&mut self, verdict: Option<ExclusionReason>) {
        self.total += 1;
        match verdict {
            None => self.included += 1,
            Some(reason) => *self.excluded.entry(reason).or_default() += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub ci_method: String,
    pub files: Vec<FileScore>,
    pub overall: Aggregate,
    pub features: Vec<FeatureRow>,
    pub responses: ResponseStats,
    pub sessions: SessionTally,
}

pub fn condition_report(
    condition: &str,
    list: &WordList,
    responses: &[ScoredResponse],
    sessions: SessionTally,
) -> Result<ConditionReport, ScoringError> {
    let files = score_files(responses, list)?;
    let pcs: Vec<f64> = files.iter().map(|f| f.pc).collect();
    let overall = aggregate(&pcs)?;
    let features = feature_breakdown(&files, list)?;
    let responses = ResponseStats::of(&files).ok_or(ScoringError::Empty)?;
    Ok(ConditionReport {
        condition: condition.into(),
        ci_method: CI_METHOD.into(),
        files,
        overall,
        features,
        responses,
        sessions,
    })
}

/// Filters `sessions` of one condition and scores the responses of the
/// included ones. Excluded sessions only enter the tally.
pub fn analyze_sessions<'a>(
    condition: &str,
    list: &WordList,
    sessions: impl IntoIterator<Item = &'a Session>,
    config: &ProtocolConfig,
) -> Result<ConditionReport, ScoringError> {
    let mut tally = SessionTally::default();
    let mut responses = Vec::new();
    for s in sessions.into_iter().filter(|s| s.condition == condition) {
        let verdict = filter_submission(s, config).reason();
        tally.record(verdict);
        if verdict.is_none() {
            responses.extend(s.scored_responses());
        }
    }
    condition_report(condition, list, &responses, tally)
}

/// Completed sessions as bonus candidates, scored by catch trials correct.
pub fn bonus_candidates<'a>(sessions: impl IntoIterator<Item = &'a Session>) -> Vec<BonusCandidate> {
    sessions
        .into_iter()
        .filter_map(|s| {
            let c = evaluate_catch(s).ok()?;
            Some(BonusCandidate {
                session_id: s.session_id.clone(),
                participant_id: s.participant.participant_id.clone(),
                validation_correct: c.correct as u32,
                completed_at: s.completed_at?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub feature_class: String,
    /// Mean of the first condition minus mean of the second.
    pub gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<StatTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionComparison {
    pub first: String,
    pub second: String,
    pub gap: f64,
    /// sqrt(se_first^2 + se_second^2).
    pub gap_se: Option<f64>,
    pub test: StatTestResult,
    /// Number of recordings entering the test (aligned count when paired).
    pub n_first: usize,
    pub n_second: usize,
    pub features: Vec<FeatureComparison>,
    /// Correlation of per-feature means across the two conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_correlation: Option<CorrelationResult>,
}

fn score_vectors(a: &[FileScore], b: &[FileScore], paired: bool) -> (Vec<f64>, Vec<f64>) {
    if paired {
        let index: BTreeMap<&RecordingId, f64> = b.iter().map(|f| (&f.recording_id, f.pc)).collect();
        a.iter()
            .filter_map(|f| index.get(&f.recording_id).map(|&pb| (f.pc, pb)))
            .unzip()
    } else {
        (a.iter().map(|f| f.pc).collect(), b.iter().map(|f| f.pc).collect())
    }
}

/// Compares two conditions file by file. With a paired test the files are
/// aligned by recording id and only common recordings enter.
pub fn compare_conditions(
    first: &ConditionReport,
    second: &ConditionReport,
    options: TTestOptions,
) -> Result<ConditionComparison, ScoringError> {
    let paired = options.method == TestMethod::Paired;
    let (xa, xb) = score_vectors(&first.files, &second.files, paired);
    if paired && xa.len() < 2 {
        return Err(ScoringError::NoCommonRecordings { found: xa.len() });
    }
    let test = t_test(&xa, &xb, options)?;
    let gap_se = match (first.overall.standard_error(), second.overall.standard_error()) {
        (Some(a), Some(b)) => Some(libm::sqrt(a * a + b * b)),
        _ => None,
    };

    let mut features = Vec::new();
    let mut means = (Vec::new(), Vec::new());
    for row in &first.features {
        let Some(other) = second.features.iter().find(|r| r.feature_class == row.feature_class) else {
            continue;
        };
        let pick = |files: &[FileScore]| -> Vec<FileScore> {
            files.iter().filter(|f| f.feature_class == row.feature_class).cloned().collect()
        };
        let (fa, fb) = score_vectors(&pick(&first.files), &pick(&second.files), paired);
        features.push(FeatureComparison {
            feature_class: row.feature_class.clone(),
            gap: row.aggregate.mean - other.aggregate.mean,
            test: t_test(&fa, &fb, options).ok(),
        });
        means.0.push(row.aggregate.mean);
        means.1.push(other.aggregate.mean);
    }

    Ok(ConditionComparison {
        first: first.condition.clone(),
        second: second.condition.clone(),
        gap: first.overall.mean - second.overall.mean,
        gap_se,
        test,
        n_first: xa.len(),
        n_second: xb.len(),
        features,
        feature_correlation: pearson(&means.0, &means.1).ok(),
    })
}

/// A completed session competing for the bonus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonusCandidate {
    pub session_id: String,
    pub participant_id: String,
    pub validation_correct: u32,
    pub completed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonusEntry {
    pub rank: usize,
    #[serde(flatten)]
    pub candidate: BonusCandidate,
    pub bonus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusRanking {
    pub entries: Vec<BonusEntry>,
    pub top_fraction: f64,
    /// Number of flagged sessions: floor(top_fraction * n).
    pub cutoff: usize,
    pub bonus_minor_units: u32,
}

/// Orders sessions by validation answers correct (descending), earlier
/// completion first on ties, and flags the top fraction.
pub fn bonus_ranking(candidates: &[BonusCandidate], top_fraction: f64, bonus_minor_units: u32) -> BonusRanking {
    let fraction = if top_fraction.is_finite() { top_fraction.clamp(0.0, 1.0) } else { 0.0 };
    let mut sorted: Vec<BonusCandidate> = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.validation_correct
            .cmp(&a.validation_correct)
            .then(a.completed_at.cmp(&b.completed_at))
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    // the epsilon keeps fractions like 1/3 of 3 from flooring to 0
    let cutoff = (libm::floor(fraction * sorted.len() as f64 + 1e-9) as usize).min(sorted.len());
    let entries = sorted
        .into_iter()
        .enumerate()
        .map(|(i, candidate)| BonusEntry { rank: i + 1, candidate, bonus: i < cutoff })
        .collect();
    BonusRanking { entries, top_fraction: fraction, cutoff, bonus_minor_units }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        assert_eq!(score_file(20, 0), Ok(100.0));
        assert_eq!(score_file(10, 10), Ok(0.0));
        assert_eq!(score_file(15, 5), Ok(50.0));
        assert_eq!(score_file(0, 0), Err(ScoringError::NoResponses));
        assert_eq!(score_file(0, 7), Ok(-100.0));
    }

    proptest! {
        #[test]
        fn score_is_antisymmetric(r in 0u32..10_000, w in 0u32..10_000) {
            prop_assume!(r + w > 0);
            prop_assert_eq!(score_file(r, w).unwrap(), -score_file(w, r).unwrap());
        }

        #[test]
        fn score_is_scale_invariant(r in 0u32..1000, w in 0u32..1000, k in 1u32..1000) {
            prop_assume!(r + w > 0);
            prop_assert_eq!(score_file(r, w).unwrap(), score_file(k * r, k * w).unwrap());
        }

        #[test]
        fn overall_mean_is_file_weighted_feature_mean(
            cells in proptest::collection::vec((0u32..30, 0u32..30), 8..40)
        ) {
            let list = fixtures::word_list(cells.len(), &["voicing", "nasality", "sibilation"]);
            let responses: Vec<ScoredResponse> = cells
                .iter()
                .enumerate()
                .flat_map(|(i, &(r, w))| {
                    let pair = list.pairs()[i].pair_id.clone();
                    let rec = RecordingId::new(format!("rec{i:03}"));
                    let ok = (0..r).map(move |_| true);
                    let bad = (0..w.max(u32::from(r == 0))).map(move |_| false);
                    ok.chain(bad).map(move |correct| ScoredResponse {
                        recording_id: rec.clone(),
                        pair_id: pair.clone(),
                        correct,
                    })
                })
                .collect();
            let report = condition_report("WB", &list, &responses, SessionTally::default()).unwrap();
            let weighted: f64 = report.features.iter().map(|f| f.aggregate.mean * f.aggregate.n as f64).sum::<f64>()
                / report.files.len() as f64;
            prop_assert!((weighted - report.overall.mean).abs() < 1e-9);
            let n: usize = report.features.iter().map(|f| f.aggregate.n).sum();
            prop_assert_eq!(n, report.files.len());
        }
    }

    fn responses_for(list: &WordList, per_file: &[(u32, u32)]) -> Vec<ScoredResponse> {
        let mut out = Vec::new();
        for (i, &(r, w)) in per_file.iter().enumerate() {
            for k in 0..r + w {
                out.push(ScoredResponse {
                    recording_id: RecordingId::new(format!("rec{i:03}")),
                    pair_id: list.pairs()[i].pair_id.clone(),
                    correct: k < r,
                });
            }
        }
        out
    }

    #[test]
    fn single_class_breakdown_equals_overall() {
        let list = fixtures::word_list(4, &["tone"]);
        let resp = responses_for(&list, &[(20, 0), (15, 5), (10, 10), (18, 2)]);
        let report = condition_report("WB", &list, &resp, SessionTally::default()).unwrap();
        assert_eq!(report.features.len(), 1);
        assert_eq!(report.features[0].feature_class, "tone");
        assert_eq!(report.features[0].aggregate, report.overall);
        assert_eq!(report.overall.mean, (100.0 + 50.0 + 0.0 + 80.0) / 4.0);
        assert_eq!(report.responses.total, 80);
    }

    #[test]
    fn unmapped_recording_is_an_error() {
        let list = fixtures::word_list(2, &["voicing"]);
        let resp = vec![ScoredResponse { recording_id: "x".into(), pair_id: "nope".into(), correct: true }];
        assert!(matches!(score_files(&resp, &list), Err(ScoringError::UnmappedRecording { .. })));
    }

    #[test]
    fn paired_comparison_aligns_by_recording() {
        let list = fixtures::word_list(6, &["voicing", "nasality"]);
        let a = condition_report("WB", &list, &responses_for(&list, &[(20, 0), (18, 2), (16, 4), (19, 1), (17, 3), (20, 0)]), SessionTally::default()).unwrap();
        let mut b = condition_report("NB", &list, &responses_for(&list, &[(19, 1), (17, 3), (15, 5), (18, 2), (16, 4), (19, 1)]), SessionTally::default()).unwrap();
        b.files.reverse();
        let paired = compare_conditions(&a, &b, TTestOptions { method: TestMethod::Paired, alpha: 0.05 }).unwrap();
        // every file drops by exactly 10 points
        assert_eq!(paired.test.degeneracy, Some(Degeneracy::ZeroVariance));
        assert!((paired.gap - 10.0).abs() < 1e-12);
        assert_eq!(paired.features.len(), 2);
        let welch = compare_conditions(&a, &b, TTestOptions::default()).unwrap();
        assert!(welch.test.p > 0.05);
        assert!(welch.gap_se.unwrap() > 0.0);
    }

    fn cand(id: &str, correct: u32, at: u64) -> BonusCandidate {
        BonusCandidate {
            session_id: id.into(),
            participant_id: format!("p-{id}"),
            validation_correct: correct,
            completed_at: Timestamp::from_millis(at),
        }
    }

    #[test]
    fn bonus_examples() {
        let r = bonus_ranking(&[cand("b", 18, 1), cand("c", 15, 2), cand("a", 20, 3)], 1.0 / 3.0, DEFAULT_BONUS_MINOR_UNITS);
        assert_eq!(r.cutoff, 1);
        assert_eq!(r.entries[0].candidate.session_id, "a");
        assert!(r.entries[0].bonus && !r.entries[1].bonus && !r.entries[2].bonus);
        assert_eq!(r.bonus_minor_units, 10);

        let tied = bonus_ranking(&[cand("x", 20, 30), cand("y", 20, 10), cand("z", 20, 20)], 0.34, 10);
        assert_eq!(tied.entries[0].candidate.session_id, "y");
        assert_eq!(tied.entries.iter().filter(|e| e.bonus).count(), 1);

        let none = bonus_ranking(&[cand("x", 20, 30), cand("y", 20, 10)], 0.0, 10);
        assert!(none.entries.iter().all(|e| !e.bonus));
    }
}
