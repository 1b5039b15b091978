//! Minimal spectral analysis: radix-2 FFT and band/tone level measurement.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

/// In-place iterative radix-2 FFT. `data.len()` must be a power of two.
/// `inverse` computes the unscaled inverse transform.
pub fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let angle = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = Complex64::new(libm::cos(angle * k as f64), libm::sin(angle * k as f64));
                let a = data[start + k];
                let b = data[start + k + half] * w;
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Spectrum of a real signal zero-padded to `n` (a power of two).
pub fn real_fft(samples: &[f64], n: usize) -> Vec<Complex64> {
    let mut data = vec![Complex64::new(0.0, 0.0); n];
    for (d, &s) in data.iter_mut().zip(samples) {
        d.re = s;
    }
    fft_in_place(&mut data, false);
    data
}

pub fn hann(len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![1.0; len];
    }
    (0..len).map(|i| 0.5 * (1.0 - libm::cos(2.0 * PI * i as f64 / len as f64))).collect()
}

/// Level in dB of the spectral peak near `freq`, from a Hann-windowed
/// transform of the whole signal. The window's main lobe (±2 bins) is summed,
/// so the value is independent of where the tone falls between bins.
pub fn tone_level_db(samples: &[f64], rate: u32, freq: f64) -> f64 {
    let n = samples.len().next_power_of_two();
    let w = hann(samples.len());
    let windowed: Vec<f64> = samples.iter().zip(&w).map(|(s, w)| s * w).collect();
    let spec = real_fft(&windowed, n);
    let bin = libm::round(freq * n as f64 / f64::from(rate)) as i64;
    let mut power = 0.0;
    for k in bin - 3..=bin + 3 {
        if k >= 0 && (k as usize) <= n / 2 {
            power += spec[k as usize].norm_sqr();
        }
    }
    10.0 * libm::log10(power.max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    acc + v * Complex64::new(libm::cos(a), libm::sin(a))
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<Complex64> = (0..64)
            .map(|i| Complex64::new(libm::sin(i as f64 * 0.37), libm::cos(i as f64 * 1.3)))
            .collect();
        let mut fast = x.clone();
        fft_in_place(&mut fast, false);
        for (a, b) in fast.iter().zip(naive_dft(&x)) {
            assert!((a - b).norm() < 1e-9);
        }
        fft_in_place(&mut fast, true);
        for (a, b) in fast.iter().zip(&x) {
            assert!((a / 64.0 - b).norm() < 1e-12);
        }
    }
}
