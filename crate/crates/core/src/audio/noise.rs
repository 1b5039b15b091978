use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use super::spectrum::{fft_in_place, hann, real_fft};
use super::{ms_to_samples, AudioBuffer, AudioError};
use crate::rng::{stream, stream_rng};

/// Analysis frame for long-term spectra.
const LTAS_FRAME: usize = 1024;

/// Long-term average power spectrum (bins `0..=frame/2`) over all buffers,
/// Hann-windowed with 50% overlap. Buffers shorter than a frame contribute
/// one zero-padded frame.
pub fn long_term_spectrum(buffers: &[AudioBuffer], frame: usize) -> Result<Vec<f64>, AudioError> {
    let rate = buffers.first().ok_or(AudioError::EmptyCorpus)?.sample_rate_hz();
    let window = hann(frame);
    let mut acc = vec![0.0; frame / 2 + 1];
    let mut frames = 0usize;
    for buf in buffers {
        if buf.sample_rate_hz() != rate {
            return Err(AudioError::RateMismatch { expected: rate, found: buf.sample_rate_hz() });
        }
        let x = buf.samples();
        let hop = frame / 2;
        let mut start = 0;
        loop {
            let end = (start + frame).min(x.len());
            let windowed: Vec<f64> =
                x[start..end].iter().zip(&window).map(|(s, w)| s * w).collect();
            let spec = real_fft(&windowed, frame);
            for (a, c) in acc.iter_mut().zip(&spec) {
                *a += c.norm_sqr();
            }
            frames += 1;
            if start + frame >= x.len() {
                break;
            }
            start += hop;
        }
    }
    acc.iter_mut().for_each(|a| *a /= frames as f64);
    Ok(acc)
}

/// Gaussian noise whose long-term spectrum follows that of `reference`, at
/// the references' mean power, `duration_ms` long at the references' rate.
pub fn speech_shaped_noise(
    reference: &[AudioBuffer],
    duration_ms: f64,
    seed: u64,
) -> Result<AudioBuffer, AudioError> {
    let ltas = long_term_spectrum(reference, LTAS_FRAME)?;
    let rate = reference[0].sample_rate_hz();
    let len = ms_to_samples(duration_ms, rate);
    let n = len.max(LTAS_FRAME).next_power_of_two();

    let mut rng = stream_rng(seed, stream::NOISE);
    let mut data: Vec<Complex64> =
        (0..n).map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0)).collect();
    fft_in_place(&mut data, false);
    for k in 0..=n / 2 {
        // position of this bin on the LTAS grid
        let pos = k as f64 * LTAS_FRAME as f64 / n as f64;
        let i = libm::floor(pos) as usize;
        let frac = pos - i as f64;
        let p = if i + 1 < ltas.len() { ltas[i] * (1.0 - frac) + ltas[i + 1] * frac } else { ltas[ltas.len() - 1] };
        let g = libm::sqrt(p.max(0.0));
        data[k] *= g;
        if k != 0 && k != n / 2 {
            data[n - k] *= g;
        }
    }
    fft_in_place(&mut data, true);
    let mut out: Vec<f64> = data[..len].iter().map(|c| c.re).collect();

    let target_power = reference.iter().map(|b| b.rms() * b.rms()).sum::<f64>() / reference.len() as f64;
    let power = out.iter().map(|s| s * s).sum::<f64>() / out.len().max(1) as f64;
    if power > 0.0 {
        let gain = libm::sqrt(target_power / power);
        out.iter_mut().for_each(|s| *s *= gain);
    }
    Ok(AudioBuffer::from_parts(rate, out))
}

/// Power density of one third-octave band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThirdOctaveBand {
    pub center_hz: f64,
    pub level_db: f64,
}

/// Mean power per frequency bin in each base-2 third-octave band whose centre
/// lies in `[lo_hz, hi_hz]` (nearest-band rounding), from a Welch estimate
/// with 4096-sample frames. Equal levels mean a flat spectrum.
pub fn third_octave_levels(buf: &AudioBuffer, lo_hz: f64, hi_hz: f64) -> Vec<ThirdOctaveBand> {
    let frame = 4096usize.min(buf.len().next_power_of_two()).max(2);
    let psd = long_term_spectrum(core::slice::from_ref(buf), frame).unwrap_or_default();
    let rate = f64::from(buf.sample_rate_hz());
    let bin_hz = rate / frame as f64;
    let k_lo = libm::round(3.0 * libm::log2(lo_hz / 1000.0)) as i32;
    let k_hi = libm::round(3.0 * libm::log2(hi_hz / 1000.0)) as i32;
    let mut bands = Vec::new();
    for k in k_lo..=k_hi {
        let center = 1000.0 * libm::exp2(f64::from(k) / 3.0);
        let lo = center * libm::exp2(-1.0 / 6.0);
        let hi = center * libm::exp2(1.0 / 6.0);
        if hi > rate / 2.0 {
            break;
        }
        let bins: Vec<f64> = psd
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let f = *i as f64 * bin_hz;
                f >= lo && f < hi
            })
            .map(|(_, p)| *p)
            .collect();
        if bins.is_empty() {
            continue;
        }
        let mean = bins.iter().sum::<f64>() / bins.len() as f64;
        bands.push(ThirdOctaveBand { center_hz: center, level_db: 10.0 * libm::log10(mean.max(1e-300)) });
    }
    bands
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn white(rate: u32, len: usize, seed: u64) -> AudioBuffer {
        let mut rng = stream_rng(seed, 99);
        let s = (0..len).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 0.1 * z }).collect();
        AudioBuffer::new(rate, s).unwrap()
    }

    /// First-order low-pass: a strongly tilted reference spectrum.
    fn coloured(rate: u32, len: usize, seed: u64) -> AudioBuffer {
        let w = white(rate, len, seed);
        let mut y = 0.0;
        let s = w
            .samples()
            .iter()
            .map(|x| {
                y = 0.9 * y + 0.1 * x;
                y
            })
            .collect();
        AudioBuffer::new(rate, s).unwrap()
    }

    #[test]
    fn white_reference_gives_flat_noise() {
        let reference = [white(16_000, 160_000, 1)];
        let out = speech_shaped_noise(&reference, 2000.0, 7).unwrap();
        let bands = third_octave_levels(&out, 100.0, 7000.0);
        assert!(bands.len() >= 18);
        let mean = bands.iter().map(|b| b.level_db).sum::<f64>() / bands.len() as f64;
        for b in &bands {
            assert!((b.level_db - mean).abs() <= 3.0, "{:.0} Hz deviates {:.2} dB", b.center_hz, b.level_db - mean);
        }
    }

    #[test]
    fn follows_a_tilted_reference_spectrum() {
        let reference = [coloured(16_000, 80_000, 2), coloured(16_000, 80_000, 3)];
        let out = speech_shaped_noise(&reference, 4000.0, 11).unwrap();
        let want = third_octave_levels(&reference[0], 100.0, 7000.0);
        let got = third_octave_levels(&out, 100.0, 7000.0);
        assert_eq!(want.len(), got.len());
        // compare shapes after removing the overall level difference
        let diff: Vec<f64> = want.iter().zip(&got).map(|(w, g)| g.level_db - w.level_db).collect();
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        for (d, w) in diff.iter().zip(&want) {
            assert!((d - mean).abs() <= 3.0, "{:.0} Hz off by {:.2} dB", w.center_hz, d - mean);
        }
        assert!(want[0].level_db - want[want.len() - 1].level_db > 20.0, "reference is not tilted");
    }

    #[test]
    fn deterministic_and_exact_duration() {
        let reference = [white(16_000, 20_000, 4)];
        let a = speech_shaped_noise(&reference, 2000.0, 5).unwrap();
        let b = speech_shaped_noise(&reference, 2000.0, 5).unwrap();
        let c = speech_shaped_noise(&reference, 2000.0, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 32_000);
        assert_eq!(a.sample_rate_hz(), 16_000);
        assert!((a.rms_db().0 - reference[0].rms_db().0).abs() < 0.01);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(speech_shaped_noise(&[], 100.0, 0), Err(AudioError::EmptyCorpus));
    }
}
