//! Curation of raw recordings into the wideband reference set.
//!
//! Each raw file is resampled, trimmed to fixed silence margins, faded and
//! RMS-normalized. Files that fail a quality check are reported, not fixed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use drt_core::audio::{detect_activity, fade, normalize_rms, resample, trim_to_margins, AudioBuffer, LevelDb};
use drt_core::corpus::{validate_test_set, Recording, TestSet, Violation, WordList, WordSide};
use drt_core::PairId;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::CurationConfig;
use crate::error::{create_dir, write_atomic, HarnessError, Result};
use crate::formats::{parse_recordings, read_wav, write_manifest, write_wav};

pub const WB_CONDITION: &str = "WB";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_FILE: &str = "curation_report.json";

/// Why a raw recording was left out of the curated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    /// Listed in the reviewer's exclusion list.
    Excluded,
    Unreadable { message: String },
    Clipped { full_scale_samples: usize },
    NoActivity,
    /// Speech starts or ends too close to the file boundary.
    Truncated { edge: Edge },
    TooShort { speech_ms: f64 },
    TooLong { speech_ms: f64 },
    /// Normalization would push samples past full scale.
    ClipsAfterNormalization { peak: f64 },
    /// The word already has its quota of curated instances.
    Surplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationEntry {
    pub recording_id: String,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_rate_hz: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speech_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub condition: String,
    pub target_rate_hz: u32,
    pub target_rms_db: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub entries: Vec<CurationEntry>,
    /// Invariant violations of the resulting set; empty when usable.
    pub violations: Vec<Violation>,
}

/// Outcome of curating a single file.
#[derive(Debug, Clone, PartialEq)]
pub struct Curated {
    pub audio: AudioBuffer,
    pub speech_ms: f64,
}

/// Runs the per-file chain on decoded audio.
pub fn curate_audio(
    audio: &AudioBuffer,
    full_scale_samples: usize,
    cfg: &CurationConfig,
) -> std::result::Result<Curated, Rejection> {
    if full_scale_samples > cfg.max_clipped_samples {
        return Err(Rejection::Clipped { full_scale_samples });
    }
    let audio = resample(audio, cfg.target_rate_hz).map_err(|e| Rejection::Unreadable { message: e.to_string() })?;
    let params = cfg.trim_params();
    let activity = detect_activity(&audio, &params).map_err(|_| Rejection::NoActivity)?;
    let edge = audio.samples_for_ms(cfg.min_edge_ms);
    if activity.onset < edge {
        return Err(Rejection::Truncated { edge: Edge::Start });
    }
    if audio.len() - 1 - activity.offset < edge {
        return Err(Rejection::Truncated { edge: Edge::End });
    }
    let speech_ms = activity.span() as f64 * 1000.0 / f64::from(cfg.target_rate_hz);
    if speech_ms < cfg.min_speech_ms {
        return Err(Rejection::TooShort { speech_ms });
    }
    if speech_ms > cfg.max_speech_ms {
        return Err(Rejection::TooLong { speech_ms });
    }
    let trimmed = trim_to_margins(&audio, &params).map_err(|_| Rejection::NoActivity)?;
    let faded = fade(&trimmed, cfg.fade_ms).map_err(|e| Rejection::Unreadable { message: e.to_string() })?;
    let out = normalize_rms(&faded, LevelDb(cfg.target_rms_db)).map_err(|_| Rejection::NoActivity)?;
    let peak = out.peak();
    if peak > 32767.0 / 32768.0 {
        return Err(Rejection::ClipsAfterNormalization { peak });
    }
    Ok(Curated { audio: out, speech_ms })
}

/// Curates every recording of a raw manifest into `out_dir`.
///
/// Writes `<recording_id>.wav`, the manifest and the report. Accepted
/// recordings beyond `instances_per_word` for a word are reported as surplus,
/// keeping the earliest in manifest order. Only IO failures are errors; the
/// caller decides what to do with a report that has violations.
pub fn curate_manifest(
    raw_manifest: &Path,
    list: &WordList,
    cfg: &CurationConfig,
    instances_per_word: usize,
    excluded: &BTreeSet<String>,
    out_dir: &Path,
) -> Result<CurationReport> {
    let text = crate::error::read_to_string(raw_manifest)?;
    let raw = parse_recordings(&text).map_err(|e| e.in_file(raw_manifest))?;
    let base = raw_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    create_dir(out_dir)?;

    let results: Vec<Result<(CurationEntry, Option<Curated>)>> =
        raw.par_iter().map(|r| curate_one(r, &base, cfg, excluded)).collect();

    let mut quota: BTreeMap<(PairId, WordSide), usize> = BTreeMap::new();
    let mut entries = Vec::with_capacity(raw.len());
    let mut recordings = Vec::new();
    for (rec, result) in raw.iter().zip(results) {
        let (mut entry, curated) = result?;
        if let Some(c) = curated {
            let taken = quota.entry((rec.pair_id.clone(), rec.word_side)).or_default();
            if *taken >= instances_per_word {
                entry.accepted = false;
                entry.rejection = Some(Rejection::Surplus);
            } else {
                *taken += 1;
                let file = format!("{}.wav", rec.recording_id);
                write_wav(&out_dir.join(&file), &c.audio)?;
                recordings.push(Recording {
                    condition: WB_CONDITION.into(),
                    audio: file,
                    sample_rate_hz: cfg.target_rate_hz,
                    source_condition: None,
                    ..rec.clone()
                });
            }
        }
        entries.push(entry);
    }
    let set = TestSet {
        word_list: list.name.clone(),
        condition: WB_CONDITION.into(),
        instances_per_word,
        recordings,
    };
    let violations = validate_test_set(&set, Some(list));
    write_manifest(&out_dir.join(MANIFEST_FILE), &set.recordings)?;
    let accepted = set.recordings.len();
    let report = CurationReport {
        condition: WB_CONDITION.into(),
        target_rate_hz: cfg.target_rate_hz,
        target_rms_db: cfg.target_rms_db,
        accepted,
        rejected: entries.len() - accepted,
        entries,
        violations,
    };
    let json = serde_json::to_vec_pretty(&report).map_err(HarnessError::invalid)?;
    write_atomic(&out_dir.join(REPORT_FILE), &json)?;
    Ok(report)
}

fn curate_one(
    rec: &Recording,
    base: &Path,
    cfg: &CurationConfig,
    excluded: &BTreeSet<String>,
) -> Result<(CurationEntry, Option<Curated>)> {
    let mut entry = CurationEntry {
        recording_id: rec.recording_id.to_string(),
        accepted: false,
        rejection: None,
        source_rate_hz: None,
        speech_ms: None,
        duration_ms: None,
    };
    if excluded.contains(rec.recording_id.as_str()) {
        entry.rejection = Some(Rejection::Excluded);
        return Ok((entry, None));
    }
    let path: PathBuf = base.join(&rec.audio);
    let wav = match read_wav(&path) {
        Ok(w) => w,
        Err(e @ HarnessError::Io { .. }) => return Err(e),
        Err(e) => {
            entry.rejection = Some(Rejection::Unreadable { message: e.to_string() });
            return Ok((entry, None));
        }
    };
    entry.source_rate_hz = Some(wav.audio.sample_rate_hz());
    match curate_audio(&wav.audio, wav.full_scale_samples, cfg) {
        Ok(c) => {
            entry.accepted = true;
            entry.speech_ms = Some(c.speech_ms);
            entry.duration_ms = Some(c.audio.duration_ms());
            Ok((entry, Some(c)))
        }
        Err(r) => {
            entry.rejection = Some(r);
            Ok((entry, None))
        }
    }
}
