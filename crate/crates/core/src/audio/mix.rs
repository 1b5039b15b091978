use alloc::vec::Vec;

use rand::Rng;

use super::{rms, AudioBuffer, AudioError};
use crate::rng::{stream, stream_rng};

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub audio: AudioBuffer,
    /// Gain applied to the noise segment.
    pub noise_gain: f64,
    /// Start of the noise segment within the noise buffer.
    pub noise_offset: usize,
}

/// Adds noise to `speech` so that RMS(speech) / RMS(scaled noise) equals
/// `snr_db`. The speech is not scaled.
///
/// The noise segment starts at a seeded random offset and has the speech's
/// length; noise shorter than the speech is looped. `f64::INFINITY` means no
/// noise and returns the speech unchanged.
pub fn mix_at_snr(
    speech: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    seed: u64,
) -> Result<Mixture, AudioError> {
    if speech.sample_rate_hz() != noise.sample_rate_hz() {
        return Err(AudioError::RateMismatch {
            expected: speech.sample_rate_hz(),
            found: noise.sample_rate_hz(),
        });
    }
    if snr_db == f64::INFINITY {
        return Ok(Mixture { audio: speech.clone(), noise_gain: 0.0, noise_offset: 0 });
    }
    if noise.is_empty() {
        return Err(AudioError::Empty);
    }
    let n = noise.len();
    let len = speech.len();
    let mut rng = stream_rng(seed, stream::MIX_OFFSET);
    let offset = if n > len { rng.random_range(0..=n - len) } else { rng.random_range(0..n) };
    let segment: Vec<f64> = (0..len).map(|i| noise.samples()[(offset + i) % n]).collect();
    let noise_rms = rms(&segment);
    if noise_rms <= 0.0 {
        return Err(AudioError::Silent);
    }
    let gain = speech.rms() / (noise_rms * libm::pow(10.0, snr_db / 20.0));
    let mixed = speech.samples().iter().zip(&segment).map(|(s, v)| s + gain * v).collect();
    Ok(Mixture {
        audio: AudioBuffer::from_parts(speech.sample_rate_hz(), mixed),
        noise_gain: gain,
        noise_offset: offset,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testsig::sine;
    use super::*;
    use alloc::vec;

    fn square(rate: u32, amp: f64, len: usize) -> AudioBuffer {
        AudioBuffer::new(rate, (0..len).map(|i| if i % 2 == 0 { amp } else { -amp }).collect()).unwrap()
    }

    fn measured_snr(m: &Mixture, speech: &AudioBuffer) -> f64 {
        let noise: Vec<f64> = m.audio.samples().iter().zip(speech.samples()).map(|(a, b)| a - b).collect();
        20.0 * libm::log10(speech.rms() / rms(&noise))
    }

    #[test]
    fn zero_db_equalizes_rms() {
        let speech = sine(16_000, 500.0, 0.3, 4000, 0.0);
        let noise = square(16_000, 0.05, 9000);
        let m = mix_at_snr(&speech, &noise, 0.0, 1).unwrap();
        assert!(measured_snr(&m, &speech).abs() < 0.01);
    }

    #[test]
    fn gain_closed_form() {
        let speech = square(16_000, 0.1, 1000);
        let noise = square(16_000, 0.2, 5000);
        let m = mix_at_snr(&speech, &noise, 6.0, 3).unwrap();
        let expected = 0.1 / (0.2 * libm::pow(10.0, 6.0 / 20.0));
        assert!((m.noise_gain - expected).abs() < 1e-12);
        assert!((m.noise_gain - 0.2506).abs() < 1e-4);
    }

    #[test]
    fn infinite_snr_is_clean() {
        let speech = sine(16_000, 500.0, 0.3, 400, 0.0);
        let noise = AudioBuffer::silence(16_000, 10).unwrap();
        let m = mix_at_snr(&speech, &noise, f64::INFINITY, 0).unwrap();
        assert_eq!(m.audio, speech);
    }

    #[test]
    fn short_noise_loops_and_silent_noise_fails() {
        let speech = sine(16_000, 500.0, 0.3, 4000, 0.0);
        let noise = AudioBuffer::new(16_000, vec![0.1, -0.3, 0.2]).unwrap();
        let m = mix_at_snr(&speech, &noise, -5.0, 9).unwrap();
        assert!((measured_snr(&m, &speech) + 5.0).abs() < 0.01);
        let silent = AudioBuffer::silence(16_000, 8000).unwrap();
        assert_eq!(mix_at_snr(&speech, &silent, 0.0, 0), Err(AudioError::Silent));
    }

    #[test]
    fn offsets_are_seeded() {
        let speech = sine(16_000, 500.0, 0.3, 100, 0.0);
        let noise = sine(16_000, 1234.0, 0.3, 100_000, 0.0);
        let a = mix_at_snr(&speech, &noise, 3.0, 42).unwrap();
        let b = mix_at_snr(&speech, &noise, 3.0, 42).unwrap();
        let c = mix_at_snr(&speech, &noise, 3.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.noise_offset, c.noise_offset);
    }

    #[test]
    fn rate_mismatch() {
        let a = AudioBuffer::silence(16_000, 10).unwrap();
        let b = AudioBuffer::silence(8_000, 10).unwrap();
        assert!(matches!(mix_at_snr(&a, &b, 0.0, 0), Err(AudioError::RateMismatch { .. })));
    }
}
