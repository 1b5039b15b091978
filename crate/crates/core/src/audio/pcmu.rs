use alloc::vec::Vec;

use super::mulaw::{self, Linear14, MAX_MAGNITUDE};
use super::{resample, AudioBuffer, AudioError};

pub const WB_RATE_HZ: u32 = 16_000;
pub const NB_RATE_HZ: u32 = 8_000;

/// Scales [-1, 1] onto the 14-bit domain (full scale = 8159), rounding half
/// away from zero and clipping.
pub fn float_to_linear14(x: f64) -> Linear14 {
    let v = libm::round(x * f64::from(MAX_MAGNITUDE));
    let v = v.clamp(-f64::from(MAX_MAGNITUDE), f64::from(MAX_MAGNITUDE));
    Linear14::from_i16(v as i16)
}

pub fn linear14_to_float(x: Linear14) -> f64 {
    f64::from(x.to_i16()) / f64::from(MAX_MAGNITUDE)
}

/// Narrowband G.711 mu-law condition: 16 kHz → 8 kHz → mu-law encode/decode
/// → 16 kHz. The output has exactly the input's length.
pub fn apply_pcmu_nb(buf: &AudioBuffer) -> Result<AudioBuffer, AudioError> {
    if buf.sample_rate_hz() != WB_RATE_HZ {
        return Err(AudioError::RateMismatch { expected: WB_RATE_HZ, found: buf.sample_rate_hz() });
    }
    let nb = resample(buf, NB_RATE_HZ)?;
    let coded: Vec<f64> = nb
        .samples()
        .iter()
        .map(|&x| linear14_to_float(mulaw::decode(mulaw::encode(float_to_linear14(x)))))
        .collect();
    let back = resample(&AudioBuffer::from_parts(NB_RATE_HZ, coded), WB_RATE_HZ)?;
    let mut out = back.into_samples();
    out.resize(buf.len(), 0.0);
    Ok(AudioBuffer::from_parts(WB_RATE_HZ, out))
}
