use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{AudioBuffer, AudioError};

/// Stopband attenuation of the anti-aliasing/anti-imaging filter.
const STOPBAND_DB: f64 = 80.0;
/// Passband edge as a fraction of the lower of the two rates.
const PASSBAND_EDGE: f64 = 0.45;
/// Stopband edge (the lower Nyquist frequency) as a fraction of the lower rate.
const STOPBAND_EDGE: f64 = 0.5;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser-windowed sinc low-pass for the rational `up/down` converter, at the
/// upsampled rate. Each polyphase branch has unit DC gain.
fn design_filter(up: u64, src_rate: u32, dst_rate: u32) -> Vec<f64> {
    let min_rate = f64::from(src_rate.min(dst_rate));
    let fs_up = f64::from(src_rate) * up as f64;
    let cutoff = 0.5 * (PASSBAND_EDGE + STOPBAND_EDGE) * min_rate / fs_up;
    let transition = 2.0 * PI * (STOPBAND_EDGE - PASSBAND_EDGE) * min_rate / fs_up;
    let beta = 0.1102 * (STOPBAND_DB - 8.7);
    let mut taps = libm::ceil((STOPBAND_DB - 8.0) / (2.285 * transition)) as usize + 1;
    if taps.is_multiple_of(2) {
        taps += 1;
    }
    let center = (taps - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let t = k as f64 - center;
            let x = 2.0 * cutoff * t;
            let sinc = if x == 0.0 { 1.0 } else { libm::sin(PI * x) / (PI * x) };
            let r = t / center;
            let window = bessel_i0(beta * libm::sqrt((1.0 - r * r).max(0.0))) / norm;
            2.0 * cutoff * sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    let scale = up as f64 / sum;
    h.iter_mut().for_each(|c| *c *= scale);
    h
}

/// Converts `buf` to `target_rate_hz` with a linear-phase windowed-sinc
/// polyphase filter (passband to 0.45 of the lower rate, 80 dB stopband from
/// its Nyquist frequency). The output is time-aligned with the input and has
/// `ceil(len * target / source)` samples. Equal rates return the input
/// unchanged.
pub fn resample(buf: &AudioBuffer, target_rate_hz: u32) -> Result<AudioBuffer, AudioError> {
    if target_rate_hz == 0 {
        return Err(AudioError::InvalidRate);
    }
    let src_rate = buf.sample_rate_hz();
    if src_rate == target_rate_hz {
        return Ok(buf.clone());
    }
    let g = gcd(u64::from(src_rate), u64::from(target_rate_hz));
    let up = u64::from(target_rate_hz) / g;
    let down = u64::from(src_rate) / g;
    let h = design_filter(up, src_rate, target_rate_hz);
    let taps = h.len() as i64;
    let delay = (taps - 1) / 2;
    let x = buf.samples();
    let n_in = x.len() as u64;
    let n_out = (n_in * up).div_ceil(down) as usize;
    let up_i = up as i64;

    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out as i64 {
        let pos = i * down as i64 + delay;
        // taps k = pos - j*up must lie in [0, taps)
        let lo = pos - (taps - 1);
        let j_lo = if lo <= 0 { 0 } else { (lo + up_i - 1) / up_i };
        let j_hi = pos.div_euclid(up_i).min(n_in as i64 - 1);
        let mut acc = 0.0;
        let mut j = j_lo;
        while j <= j_hi {
            acc += x[j as usize] * h[(pos - j * up_i) as usize];
            j += 1;
        }
        out.push(acc);
    }
    Ok(AudioBuffer::from_parts(target_rate_hz, out))
}
