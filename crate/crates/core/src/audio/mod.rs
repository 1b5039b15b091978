//! Deterministic audio curation and treatment conditions.
//!
//! All operations are pure functions over [`AudioBuffer`]s. Randomized
//! operations take an explicit seed.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

mod curate;
mod mix;
pub mod mulaw;
mod noise;
mod pcmu;
mod resample;
pub mod spectrum;

pub use curate::{detect_activity, fade, normalize_rms, trim_to_margins, Activity, TrimParams, DEFAULT_FADE_MS};
pub use mix::{mix_at_snr, Mixture};
pub use noise::{long_term_spectrum, speech_shaped_noise, third_octave_levels, ThirdOctaveBand};
pub use pcmu::{apply_pcmu_nb, float_to_linear14, linear14_to_float, NB_RATE_HZ, WB_RATE_HZ};
pub use resample::resample;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("no speech activity above the silence threshold")]
    NoActivity,
    #[error("signal is silent (zero RMS)")]
    Silent,
    #[error("fade of {fade_samples} samples exceeds half of a {len}-sample buffer")]
    FadeTooLong { fade_samples: usize, len: usize },
    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    RateMismatch { expected: u32, found: u32 },
    #[error("reference corpus is empty")]
    EmptyCorpus,
    #[error("buffer is empty")]
    Empty,
}

/// Mono audio at a fixed sample rate, samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioBuffer {
    sample_rate_hz: u32,
    samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(sample_rate_hz: u32, samples: Vec<f64>) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidRate);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        Ok(AudioBuffer { sample_rate_hz, samples })
    }

    /// `len` samples of digital silence.
    pub fn silence(sample_rate_hz: u32, len: usize) -> Result<Self, AudioError> {
        Self::new(sample_rate_hz, alloc::vec![0.0; len])
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / f64::from(self.sample_rate_hz)
    }

    /// Number of samples spanning `ms` milliseconds, rounded to nearest.
    pub fn samples_for_ms(&self, ms: f64) -> usize {
        ms_to_samples(ms, self.sample_rate_hz)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn rms_db(&self) -> LevelDb {
        LevelDb::from_amplitude(self.rms())
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples.iter().map(|s| s * gain).collect(),
        }
    }

    pub(crate) fn from_parts(sample_rate_hz: u32, samples: Vec<f64>) -> Self {
        debug_assert!(sample_rate_hz > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        AudioBuffer { sample_rate_hz, samples }
    }
}

pub(crate) fn ms_to_samples(ms: f64, rate: u32) -> usize {
    libm::round(ms * f64::from(rate) / 1000.0).max(0.0) as usize
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    libm::sqrt(samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64)
}

/// Level in dB relative to full scale, where an RMS of 1.0 is 0 dB.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelDb(pub f64);

impl LevelDb {
    /// Target level for curated stimuli.
    pub const CURATION_TARGET: LevelDb = LevelDb(-26.0);

    pub fn amplitude(self) -> f64 {
        libm::pow(10.0, self.0 / 20.0)
    }

    pub fn from_amplitude(amplitude: f64) -> LevelDb {
        LevelDb(20.0 * libm::log10(amplitude))
    }
}

impl Default for LevelDb {
    fn default() -> Self {
        LevelDb::CURATION_TARGET
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert_eq!(AudioBuffer::new(0, alloc::vec![0.0]), Err(AudioError::InvalidRate));
        assert_eq!(
            AudioBuffer::new(16_000, alloc::vec![0.0, f64::NAN]),
            Err(AudioError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn level_conversions() {
        assert!((LevelDb(-26.0).amplitude() - 0.050_118_723_362_727_23).abs() < 1e-15);
        assert!((LevelDb::from_amplitude(1.0).0).abs() < 1e-15);
    }
}
