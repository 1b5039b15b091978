use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ms_to_samples, AudioBuffer, AudioError, LevelDb};

pub const DEFAULT_FADE_MS: f64 = 10.0;

/// Silence-margin parameters for [`trim_to_margins`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimParams {
    pub lead_ms: f64,
    pub trail_ms: f64,
    /// Frames whose energy is this far below the loudest frame are silence.
    pub threshold_db: f64,
    pub frame_ms: f64,
}

impl Default for TrimParams {
    fn default() -> Self {
        TrimParams { lead_ms: 500.0, trail_ms: 500.0, threshold_db: -40.0, frame_ms: 10.0 }
    }
}

/// Sample span of detected speech, `onset..=offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Activity {
    pub onset: usize,
    pub offset: usize,
}

impl Activity {
    /// Number of samples from onset to offset inclusive.
    pub fn span(&self) -> usize {
        self.offset + 1 - self.onset
    }
}

/// Locates speech in `buf`.
///
/// Activity is decided on frame energy relative to the loudest frame; the
/// onset and offset are then refined to the first and last sample whose
/// magnitude reaches the threshold amplitude.
pub fn detect_activity(buf: &AudioBuffer, params: &TrimParams) -> Result<Activity, AudioError> {
    let x = buf.samples();
    let frame = ms_to_samples(params.frame_ms, buf.sample_rate_hz()).max(1);
    let energies: Vec<f64> = x
        .chunks(frame)
        .map(|c| c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64)
        .collect();
    let peak = energies.iter().copied().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(AudioError::NoActivity);
    }
    let floor = peak * libm::pow(10.0, params.threshold_db / 10.0);
    let first = energies.iter().position(|&e| e >= floor).ok_or(AudioError::NoActivity)?;
    let last = energies.iter().rposition(|&e| e >= floor).ok_or(AudioError::NoActivity)?;
    let amp = libm::sqrt(floor);

    let lo = first.saturating_sub(1) * frame;
    let hi = ((last + 2) * frame).min(x.len());
    let onset = (lo..hi).find(|&i| x[i].abs() >= amp).ok_or(AudioError::NoActivity)?;
    let offset = (lo..hi).rev().find(|&i| x[i].abs() >= amp).ok_or(AudioError::NoActivity)?;
    Ok(Activity { onset, offset })
}

/// Crops (or zero-pads) so that exactly `lead_ms` precede the detected
/// speech onset and `trail_ms` follow the offset.
pub fn trim_to_margins(buf: &AudioBuffer, params: &TrimParams) -> Result<AudioBuffer, AudioError> {
    let Activity { onset, offset } = detect_activity(buf, params)?;
    let x = buf.samples();
    let rate = buf.sample_rate_hz();
    let lead = ms_to_samples(params.lead_ms, rate) as i64;
    let trail = ms_to_samples(params.trail_ms, rate) as i64;
    let start = onset as i64 - lead;
    let end = offset as i64 + 1 + trail;
    let len = x.len() as i64;

    let mut out = Vec::with_capacity((end - start) as usize);
    out.resize((-start).max(0) as usize, 0.0);
    out.extend_from_slice(&x[start.max(0) as usize..end.min(len) as usize]);
    out.resize((end - start) as usize, 0.0);
    Ok(AudioBuffer::from_parts(rate, out))
}

/// Raised-cosine fade-in and fade-out of `fade_ms` each. The first and last
/// samples become exactly zero; samples between the ramps are untouched.
pub fn fade(buf: &AudioBuffer, fade_ms: f64) -> Result<AudioBuffer, AudioError> {
    let n = buf.samples_for_ms(fade_ms);
    let len = buf.len();
    if 2 * n > len {
        return Err(AudioError::FadeTooLong { fade_samples: n, len });
    }
    let mut out = buf.samples().to_vec();
    for i in 0..n {
        let g = 0.5 * (1.0 - libm::cos(PI * i as f64 / n as f64));
        out[i] *= g;
        out[len - 1 - i] *= g;
    }
    Ok(AudioBuffer::from_parts(buf.sample_rate_hz(), out))
}

/// Applies the single gain that brings the RMS level to `target`.
pub fn normalize_rms(buf: &AudioBuffer, target: LevelDb) -> Result<AudioBuffer, AudioError> {
    let rms = buf.rms();
    if rms <= 0.0 {
        return Err(AudioError::Silent);
    }
    Ok(buf.scaled(target.amplitude() / rms))
}

#[cfg(test)]
mod tests {
    use super::super::testsig::sine;
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn tone_in_silence(rate: u32, pre_s: f64, tone_s: f64, post_s: f64) -> AudioBuffer {
        let pre = (pre_s * f64::from(rate)) as usize;
        let post = (post_s * f64::from(rate)) as usize;
        // cosine phase so the first and last tone samples are non-zero
        let tone = sine(rate, 1000.0, 0.5, (tone_s * f64::from(rate)) as usize, PI / 2.0);
        let mut s = vec![0.0; pre];
        s.extend_from_slice(tone.samples());
        s.extend(core::iter::repeat_n(0.0, post));
        AudioBuffer::new(rate, s).unwrap()
    }

    #[test]
    fn crops_long_margins_to_half_a_second() {
        let buf = tone_in_silence(16_000, 2.0, 1.0, 2.0);
        let out = trim_to_margins(&buf, &TrimParams::default()).unwrap();
        assert_eq!(out.len(), 32_000);
        assert_eq!(&out.samples()[8_000..24_000], &buf.samples()[32_000..48_000]);
        assert!(out.samples()[..8_000].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pads_when_margin_is_missing() {
        let buf = tone_in_silence(16_000, 0.0, 1.0, 0.1);
        let out = trim_to_margins(&buf, &TrimParams::default()).unwrap();
        assert_eq!(out.len(), 32_000);
        assert!(out.samples()[..8_000].iter().all(|&s| s == 0.0));
        assert_eq!(out.samples()[8_000], buf.samples()[0]);
    }

    #[test]
    fn digital_silence_is_an_error() {
        let buf = AudioBuffer::silence(16_000, 16_000).unwrap();
        assert_eq!(trim_to_margins(&buf, &TrimParams::default()), Err(AudioError::NoActivity));
    }

    #[test]
    fn low_level_noise_is_treated_as_silence() {
        let mut buf = tone_in_silence(16_000, 1.0, 0.5, 1.0).into_samples();
        // -60 dB relative hiss before the tone stays outside the detected span
        for (i, s) in buf.iter_mut().enumerate().take(16_000) {
            *s = if i % 2 == 0 { 0.0003 } else { -0.0003 };
        }
        let out = trim_to_margins(&AudioBuffer::new(16_000, buf).unwrap(), &TrimParams::default()).unwrap();
        assert_eq!(out.len(), 8_000 + 8_000 + 8_000);
    }

    #[test]
    fn fade_endpoints_and_midpoint() {
        let buf = AudioBuffer::new(16_000, vec![1.0; 16_000]).unwrap();
        let out = fade(&buf, 10.0).unwrap();
        let s = out.samples();
        assert_eq!(s[0], 0.0);
        assert_eq!(s[s.len() - 1], 0.0);
        assert_eq!(s[8_000], 1.0);
        // 160-sample ramp, half-way is sample 80: 0.5 * (1 - cos(pi/2))
        assert!((s[80] - 0.5).abs() < 1e-12);
        assert!((s[s.len() - 1 - 80] - 0.5).abs() < 1e-12);
        assert_eq!(&s[160..s.len() - 160], &buf.samples()[160..buf.len() - 160]);
    }

    #[test]
    fn zero_fade_is_identity_and_long_fade_fails() {
        let buf = sine(16_000, 300.0, 0.2, 1000, 0.4);
        assert_eq!(fade(&buf, 0.0).unwrap(), buf);
        assert!(matches!(fade(&buf, 40.0), Err(AudioError::FadeTooLong { .. })));
    }

    #[test]
    fn constant_half_normalizes_to_target() {
        let buf = AudioBuffer::new(16_000, vec![0.5; 100]).unwrap();
        let out = normalize_rms(&buf, LevelDb(-26.0)).unwrap();
        for &s in out.samples() {
            assert!((s - 0.050_118_723_362_727_23).abs() < 1e-12);
        }
        let silent = AudioBuffer::silence(16_000, 100).unwrap();
        assert_eq!(normalize_rms(&silent, LevelDb(-26.0)), Err(AudioError::Silent));
    }

    #[test]
    fn already_normalized_input_gets_unit_gain() {
        let buf = sine(16_000, 440.0, 1.0, 16_000, 0.0);
        let once = normalize_rms(&buf, LevelDb(-26.0)).unwrap();
        let twice = normalize_rms(&once, LevelDb(-26.0)).unwrap();
        let gain = twice.samples()[5] / once.samples()[5];
        assert!((20.0 * libm::log10(gain)).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn normalization_is_a_pure_gain(samples in proptest::collection::vec(-1.0f64..1.0, 2..200)) {
            prop_assume!(samples.iter().any(|s| s.abs() > 1e-6));
            let buf = AudioBuffer::new(16_000, samples).unwrap();
            let out = normalize_rms(&buf, LevelDb(-26.0)).unwrap();
            prop_assert!((out.rms_db().0 + 26.0).abs() < 0.01);
            let k = buf.samples().iter().position(|s| s.abs() > 1e-6).unwrap();
            let gain = out.samples()[k] / buf.samples()[k];
            for (a, b) in buf.samples().iter().zip(out.samples()) {
                prop_assert!((a * gain - b).abs() < 1e-12);
            }
        }
    }
}
