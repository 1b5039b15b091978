//! Derived conditions and digits-in-noise stimuli.

use std::path::{Path, PathBuf};
use std::process::Command;

use drt_core::audio::{apply_pcmu_nb, mix_at_snr, normalize_rms, speech_shaped_noise, AudioBuffer, LevelDb};
use drt_core::corpus::{Recording, TestSet};
use drt_core::rng::split_seed;
use drt_core::session::DigitsTest;
use rayon::prelude::*;

use crate::config::ConditionSpec;
use crate::curate::MANIFEST_FILE;
use crate::error::{create_dir, HarnessError, Result};
use crate::formats::{read_wav, write_manifest, write_wav};

/// Applies `spec` to every recording of `set` (audio under `set_dir`) and
/// writes the treated set to `out_dir`. Recording ids are kept so scores of
/// the two conditions can be paired; `source_condition` names the origin.
pub fn apply_condition(set: &TestSet, set_dir: &Path, spec: &ConditionSpec, out_dir: &Path) -> Result<TestSet> {
    create_dir(out_dir)?;
    let label = spec.label().to_string();
    let recordings = set
        .recordings
        .par_iter()
        .map(|r| {
            let input = set_dir.join(&r.audio);
            let file = format!("{}.wav", r.recording_id);
            let output = out_dir.join(&file);
            let rate = treat(spec, &input, &output)?;
            Ok(Recording {
                condition: label.clone(),
                audio: file,
                sample_rate_hz: rate,
                source_condition: Some(set.condition.clone()),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &recordings)?;
    Ok(TestSet { condition: label, recordings, ..set.clone() })
}

/// Treats one file and returns the output sample rate.
fn treat(spec: &ConditionSpec, input: &Path, output: &Path) -> Result<u32> {
    match spec {
        ConditionSpec::Wb => {
            let wav = read_wav(input)?;
            write_wav(output, &wav.audio)?;
            Ok(wav.audio.sample_rate_hz())
        }
        ConditionSpec::PcmuNb { .. } => {
            let wav = read_wav(input)?;
            let out = apply_pcmu_nb(&wav.audio).map_err(|e| HarnessError::invalid(e).in_file(input))?;
            write_wav(output, &out)?;
            Ok(out.sample_rate_hz())
        }
        ConditionSpec::External { command, .. } => {
            run_external(command, input, output)?;
            Ok(read_wav(output)?.audio.sample_rate_hz())
        }
    }
}

fn run_external(command: &[String], input: &Path, output: &Path) -> Result<()> {
    let abs = |p: &Path| -> PathBuf { std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()) };
    let (input, output) = (abs(input), abs(output));
    let args: Vec<String> = command
        .iter()
        .map(|a| a.replace("{input}", &input.to_string_lossy()).replace("{output}", &output.to_string_lossy()))
        .collect();
    let status = Command::new(&args[0])
        .args(&args[1..])
        .status()
        .map_err(|e| HarnessError::io(&args[0], e))?;
    if !status.success() {
        return Err(HarnessError::invalid(format!("condition command {:?} failed with {status}", args[0])).in_file(&input));
    }
    if !output.exists() {
        return Err(HarnessError::invalid(format!("condition command {:?} produced no output", args[0])).in_file(&input));
    }
    Ok(())
}

/// Level of each digit before mixing.
const DIGIT_RMS_DB: f64 = -26.0;
const NOISE_MS: f64 = 10_000.0;

/// Renders the digits-in-noise stimuli of `test` into `audio_root` from ten
/// recordings `0.wav` to `9.wav` in `digit_dir`.
///
/// Digits are level-matched and joined with `gap_ms` of silence; noise shaped
/// like the long-term spectrum of the ten digits is added at each trial's SNR.
pub fn render_digits(test: &DigitsTest, digit_dir: &Path, gap_ms: f64, seed: u64, audio_root: &Path) -> Result<()> {
    let digits: Vec<AudioBuffer> = (0..10)
        .map(|d| {
            let path = digit_dir.join(format!("{d}.wav"));
            let wav = read_wav(&path)?;
            normalize_rms(&wav.audio, LevelDb(DIGIT_RMS_DB)).map_err(|e| HarnessError::invalid(e).in_file(&path))
        })
        .collect::<Result<_>>()?;
    let rate = digits[0].sample_rate_hz();
    if let Some(d) = digits.iter().position(|d| d.sample_rate_hz() != rate) {
        return Err(HarnessError::invalid(format!("digit {d} has a different sample rate than digit 0")).in_file(digit_dir));
    }
    let noise = speech_shaped_noise(&digits, NOISE_MS, split_seed(seed, 0)).map_err(HarnessError::invalid)?;
    let gap = vec![0.0; (gap_ms * f64::from(rate) / 1000.0).round() as usize];
    for (i, trial) in test.trials.iter().enumerate() {
        let mut samples = gap.clone();
        for c in trial.digits.bytes() {
            if !c.is_ascii_digit() {
                return Err(HarnessError::invalid(format!("trial {i} has non-digit {:?}", c as char)));
            }
            samples.extend_from_slice(digits[usize::from(c - b'0')].samples());
            samples.extend_from_slice(&gap);
        }
        let speech = AudioBuffer::new(rate, samples).map_err(HarnessError::invalid)?;
        let mixed = mix_at_snr(&speech, &noise, trial.snr_db, split_seed(seed, i as u64 + 1)).map_err(HarnessError::invalid)?;
        // keep the mixture inside full scale without changing its SNR
        let peak = mixed.audio.peak();
        let out = if peak > 0.99 { mixed.audio.scaled(0.99 / peak) } else { mixed.audio };
        write_wav(&audio_root.join(&trial.audio), &out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::write_wav;
    use crate::synthetic::{test_set, word_list};

    fn tone(freq: f64, ms: f64) -> AudioBuffer {
        let n = (ms * 16.0) as usize;
        AudioBuffer::new(16_000, (0..n).map(|i| 0.2 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()).collect()).unwrap()
    }

    #[test]
    fn pcmu_condition_keeps_ids_and_length() {
        let dir = tempfile::tempdir().unwrap();
        let list = word_list(2, &["voicing"]);
        let mut set = test_set(&list, "WB", 2);
        for r in &mut set.recordings {
            r.audio = format!("{}.wav", r.recording_id);
            write_wav(&dir.path().join(&r.audio), &tone(440.0, 300.0)).unwrap();
        }
        let out = dir.path().join("NB");
        let nb = apply_condition(&set, dir.path(), &ConditionSpec::PcmuNb { label: "NB".into() }, &out).unwrap();
        assert_eq!(nb.condition, "NB");
        for (a, b) in set.recordings.iter().zip(&nb.recordings) {
            assert_eq!(a.recording_id, b.recording_id);
            assert_eq!(b.source_condition.as_deref(), Some("WB"));
            assert_eq!(read_wav(&out.join(&b.audio)).unwrap().audio.len(), 4800);
        }
        assert!(out.join(MANIFEST_FILE).exists());
    }

    #[test]
    fn external_condition_runs_command() {
        let dir = tempfile::tempdir().unwrap();
        let list = word_list(1, &["voicing"]);
        let mut set = test_set(&list, "WB", 2);
        for r in &mut set.recordings {
            r.audio = format!("{}.wav", r.recording_id);
            write_wav(&dir.path().join(&r.audio), &tone(440.0, 100.0)).unwrap();
        }
        let copy = ConditionSpec::External { label: "COPY".into(), command: vec!["cp".into(), "{input}".into(), "{output}".into()] };
        let out = apply_condition(&set, dir.path(), &copy, &dir.path().join("COPY")).unwrap();
        assert_eq!(out.recordings.len(), set.recordings.len());
        let fail = ConditionSpec::External { label: "F".into(), command: vec!["false".into(), "{input}".into(), "{output}".into()] };
        assert!(matches!(apply_condition(&set, dir.path(), &fail, &dir.path().join("F")), Err(HarnessError::Invalid { .. })));
    }

    #[test]
    fn digits_render_at_requested_snr() {
        let dir = tempfile::tempdir().unwrap();
        let digit_dir = dir.path().join("digits_src");
        for d in 0..10 {
            write_wav(&digit_dir.join(format!("{d}.wav")), &tone(300.0 + 100.0 * d as f64, 250.0)).unwrap();
        }
        let test = DigitsTest::generate(&[0.0, -10.0], 7);
        render_digits(&test, &digit_dir, 100.0, 3, dir.path()).unwrap();
        for t in &test.trials {
            let audio = read_wav(&dir.path().join(&t.audio)).unwrap().audio;
            assert_eq!(audio.len(), (4 * 100 + 3 * 250) * 16);
        }
    }
}
