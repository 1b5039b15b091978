//! On-disk formats: word-list CSV, recording manifests (JSON Lines) and WAV.

use std::collections::BTreeSet;
use std::path::Path;

use drt_core::audio::AudioBuffer;
use drt_core::corpus::{validate_test_set, ContrastPosition, CorpusError, Recording, TestSet, Violation, WordList, WordPair};
use serde::Deserialize;

use crate::error::{read_to_string, write_atomic, HarnessError, Result};

/// Column names of the word-list CSV, in canonical order.
pub const WORD_LIST_HEADER: [&str; 5] = ["pair_id", "feature_class", "contrast_position", "word_present", "word_absent"];

#[derive(Deserialize)]
struct WordListRow {
    pair_id: String,
    feature_class: String,
    contrast_position: String,
    word_present: String,
    word_absent: String,
}

/// Parses a word list. Errors carry the 1-based line number of the
/// offending row.
pub fn parse_word_list(text: &str, name: &str, language: &str) -> Result<WordList> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| HarnessError::at_line(1, e))?.clone();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(HarnessError::at_line(1, "empty word list: missing header"));
    }
    for col in WORD_LIST_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(HarnessError::at_line(1, format!("missing column {col:?}")));
        }
    }
    let mut pairs = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            HarnessError::at_line(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: WordListRow = record.deserialize(Some(&headers)).map_err(|e| HarnessError::at_line(line, e))?;
        let position: ContrastPosition = row.contrast_position.parse().map_err(|value| {
            HarnessError::at_line(line, CorpusError::UnknownContrastPosition { row: pairs.len(), value })
        })?;
        pairs.push(WordPair::new(row.pair_id, row.feature_class, position, &row.word_present, &row.word_absent));
        lines.push(line);
    }
    WordList::new(name, language, pairs).map_err(|e| match e.row() {
        Some(row) => HarnessError::at_line(lines[row], e),
        None => HarnessError::at_line(1, e),
    })
}

/// Loads a word list; its name is the file stem.
pub fn load_word_list(path: &Path, language: &str) -> Result<WordList> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_word_list(&read_to_string(path)?, &name, language).map_err(|e| e.in_file(path))
}

pub fn word_list_to_csv(list: &WordList) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(WORD_LIST_HEADER).expect("in-memory write");
    for p in list.pairs() {
        let pos = match p.contrast_position {
            ContrastPosition::Initial => "initial",
            ContrastPosition::Final => "final",
            ContrastPosition::Tonal => "tonal",
        };
        w.write_record([p.pair_id.as_str(), &p.feature_class, pos, &p.word_present, &p.word_absent])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 fields")
}

/// Parses manifest lines. Blank lines are skipped; errors carry line numbers.
pub fn parse_recordings(text: &str) -> Result<Vec<Recording>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| HarnessError::at_line(i + 1, e))?);
    }
    Ok(out)
}

/// Builds a test set from manifest text and cross-checks it against `list`.
/// Unknown pair ids are errors; every other invariant violation is returned
/// alongside the set.
pub fn parse_manifest(text: &str, list: &WordList, instances_per_word: usize) -> Result<(TestSet, Vec<Violation>)> {
    let recordings = parse_recordings(text)?;
    let mut line = 0;
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let r = &recordings[line];
        if list.pair(&r.pair_id).is_none() {
            return Err(HarnessError::at_line(
                i + 1,
                format!("recording {} references unknown pair {}", r.recording_id, r.pair_id),
            ));
        }
        line += 1;
    }
    let condition = recordings.first().map(|r| r.condition.clone()).unwrap_or_default();
    let set = TestSet { word_list: list.name.clone(), condition, instances_per_word, recordings };
    let violations = validate_test_set(&set, Some(list));
    Ok((set, violations))
}

pub fn load_manifest(path: &Path, list: &WordList, instances_per_word: usize) -> Result<(TestSet, Vec<Violation>)> {
    parse_manifest(&read_to_string(path)?, list, instances_per_word).map_err(|e| e.in_file(path))
}

/// Loads a manifest and fails on any violation.
pub fn load_valid_manifest(path: &Path, list: &WordList, instances_per_word: usize) -> Result<TestSet> {
    let (set, violations) = load_manifest(path, list, instances_per_word)?;
    if let Some(first) = violations.first() {
        return Err(HarnessError::invalid(format!(
            "{} violation(s) in test set, first: {first}",
            violations.len()
        ))
        .in_file(path));
    }
    Ok(set)
}

pub fn manifest_to_jsonl(recordings: &[Recording]) -> String {
    let mut out = String::new();
    for r in recordings {
        out.push_str(&serde_json::to_string(r).expect("recording serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, recordings: &[Recording]) -> Result<()> {
    write_atomic(path, manifest_to_jsonl(recordings).as_bytes())
}

/// Decoded WAV content plus the number of samples at digital full scale.
#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub audio: AudioBuffer,
    pub full_scale_samples: usize,
}

/// Reads a mono WAV file (16-bit PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<WavData> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(HarnessError::invalid(format!("{} channels; only mono is supported", spec.channels)).in_file(path));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (format, bits) => {
            return Err(HarnessError::invalid(format!("unsupported sample format {format:?} {bits}-bit")).in_file(path))
        }
    };
    let full_scale_samples = samples.iter().filter(|s| s.abs() >= 32767.0 / 32768.0).count();
    let audio = AudioBuffer::new(spec.sample_rate, samples).map_err(|e| HarnessError::invalid(e).in_file(path))?;
    Ok(WavData { audio, full_scale_samples })
}

fn wav_error(path: &Path, e: hound::Error) -> HarnessError {
    match e {
        hound::Error::IoError(io) => HarnessError::io(path, io),
        other => HarnessError::invalid(other).in_file(path),
    }
}

/// 16-bit PCM encoding of `audio`, rounding and clipping to full scale.
pub fn wav_bytes(audio: &AudioBuffer) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav header");
        for &s in audio.samples() {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v).expect("in-memory wav write");
        }
        w.finalize().expect("in-memory wav finalize");
    }
    cursor.into_inner()
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    write_atomic(path, &wav_bytes(audio))
}

/// Recording ids listed one per line; `#` starts a comment.
pub fn parse_id_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use drt_core::corpus::{Gender, WordSide};

    const LIST: &str = "pair_id,feature_class,contrast_position,word_present,word_absent\n\
                        v1,voicing,initial,vee,bee\n\
                        n1,nasality,initial,meat,beat\n";

    #[test]
    fn word_list_round_trip() {
        let list = parse_word_list(LIST, "en", "en").unwrap();
        assert_eq!(list.len(), 2);
        let again = parse_word_list(&word_list_to_csv(&list), "en", "en").unwrap();
        assert_eq!(again, list);
    }

    #[test]
    fn word_list_errors_carry_lines() {
        let dup = format!("{LIST}v1,voicing,initial,zoo,sue\n");
        let e = parse_word_list(&dup, "x", "en").unwrap_err();
        assert_eq!(e.line(), Some(4));
        assert!(e.to_string().contains("duplicate"), "{e}");

        let bad_pos = "pair_id,feature_class,contrast_position,word_present,word_absent\nv1,voicing,middle,vee,bee\n";
        assert_eq!(parse_word_list(bad_pos, "x", "en").unwrap_err().line(), Some(2));

        let empty_word = "pair_id,feature_class,contrast_position,word_present,word_absent\nv1,voicing,initial,,bee\n";
        assert_eq!(parse_word_list(empty_word, "x", "en").unwrap_err().line(), Some(2));

        assert!(parse_word_list("", "x", "en").is_err());
        let header_only = "pair_id,feature_class,contrast_position,word_present,word_absent\n";
        assert!(parse_word_list(header_only, "x", "en").unwrap_err().to_string().contains("no pairs"));
        let missing_col = "pair_id,feature_class,word_present,word_absent\nv1,voicing,vee,bee\n";
        assert_eq!(parse_word_list(missing_col, "x", "en").unwrap_err().line(), Some(1));
    }

    #[test]
    fn unicode_words_survive() {
        let text = "pair_id,feature_class,contrast_position,word_present,word_absent\nt1,tone,tonal,妈,马\ng1,voicing,initial,Grüße,Krüße\n";
        let list = parse_word_list(text, "zh", "zh").unwrap();
        assert_eq!(list.pairs()[0].word_present, "妈");
        assert_eq!(parse_word_list(&word_list_to_csv(&list), "zh", "zh").unwrap(), list);
    }

    fn rec(id: &str, pair: &str, side: WordSide, gender: Gender, rate: u32) -> Recording {
        Recording {
            recording_id: id.into(),
            pair_id: pair.into(),
            word_side: side,
            talker_id: format!("t-{id}"),
            talker_gender: gender,
            language: "es".into(),
            condition: "WB".into(),
            audio: format!("{id}.wav"),
            sample_rate_hz: rate,
            source_condition: None,
        }
    }

    #[test]
    fn manifest_checks() {
        let list = parse_word_list(LIST, "es", "es").unwrap();
        let mut recs = Vec::new();
        for pair in ["v1", "n1"] {
            for side in WordSide::BOTH {
                recs.push(rec(&format!("{pair}-{side}-f"), pair, side, Gender::Female, 16_000));
                recs.push(rec(&format!("{pair}-{side}-m"), pair, side, Gender::Male, 16_000));
            }
        }
        let (set, violations) = parse_manifest(&manifest_to_jsonl(&recs), &list, 2).unwrap();
        assert!(violations.is_empty(), "{violations:?}");
        assert_eq!(set.condition, "WB");

        let mut mixed = recs.clone();
        mixed[0].sample_rate_hz = 44_100;
        let (_, violations) = parse_manifest(&manifest_to_jsonl(&mixed), &list, 2).unwrap();
        assert!(violations.iter().any(|v| matches!(v, Violation::MixedSampleRate { .. })));

        let mut unknown = recs.clone();
        unknown[3].pair_id = "zz".into();
        let e = parse_manifest(&manifest_to_jsonl(&unknown), &list, 2).unwrap_err();
        assert_eq!(e.line(), Some(4));

        let torn = format!("{}{{\"recording_id\":", manifest_to_jsonl(&recs));
        assert_eq!(parse_manifest(&torn, &list, 2).unwrap_err().line(), Some(9));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..1600).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
        let audio = AudioBuffer::new(16_000, samples.clone()).unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.audio.sample_rate_hz(), 16_000);
        assert_eq!(back.full_scale_samples, 0);
        for (a, b) in back.audio.samples().iter().zip(&samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
        assert!(matches!(read_wav(&dir.path().join("missing.wav")), Err(HarnessError::Io { .. })));
    }

    #[test]
    fn id_lists_ignore_comments() {
        let ids = parse_id_list("# excluded\nes-s-01  # lisp\n\nes-s-02\n");
        assert_eq!(ids.into_iter().collect::<Vec<_>>(), ["es-s-01", "es-s-02"]);
    }
}
