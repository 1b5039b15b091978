//! ITU-T G.711 mu-law companding on the 14-bit linear domain.
//!
//! Linear samples are sign-magnitude, as in the recommendation, so the two
//! zero codewords (`0xFF` = +0, `0x7F` = -0) stay distinct and every codeword
//! survives a decode/encode round trip. Magnitudes above [`MAX_MAGNITUDE`]
//! are clipped.

use serde::{Deserialize, Serialize};

/// Largest representable magnitude (the top decision value).
pub const MAX_MAGNITUDE: u16 = 8159;
const BIAS: u16 = 33;

/// A 14-bit linear PCM sample in sign-magnitude form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Linear14 {
    negative: bool,
    magnitude: u16,
}

impl Linear14 {
    pub fn new(negative: bool, magnitude: u16) -> Self {
        Linear14 { negative, magnitude: magnitude.min(MAX_MAGNITUDE) }
    }

    /// Two's-complement input, clipped to `[-8159, 8159]`. Zero maps to +0.
    pub fn from_i16(value: i16) -> Self {
        Linear14::new(value < 0, value.unsigned_abs().min(MAX_MAGNITUDE))
    }

    pub fn to_i16(self) -> i16 {
        let m = self.magnitude as i16;
        if self.negative {
            -m
        } else {
            m
        }
    }

    pub fn is_negative(self) -> bool {
        self.negative
    }

    pub fn magnitude(self) -> u16 {
        self.magnitude
    }
}

/// Segment (exponent) of a biased magnitude in `[33, 8191]`.
fn segment(biased: u16) -> u8 {
    if biased < 64 {
        0
    } else {
        (15 - biased.leading_zeros() as u8) - 5
    }
}

/// Quantization step of `segment`, in linear units.
pub fn step_size(segment: u8) -> u16 {
    2 << segment
}

pub fn encode(sample: Linear14) -> u8 {
    let biased = (sample.magnitude.min(MAX_MAGNITUDE) + BIAS).min(0x1FFF);
    let seg = segment(biased);
    let mantissa = ((biased >> (seg + 1)) & 0x0F) as u8;
    let bits = (seg << 4) | mantissa;
    if sample.negative {
        bits ^ 0x7F
    } else {
        bits ^ 0xFF
    }
}

/// Maps a codeword to the midpoint of its quantization interval.
pub fn decode(code: u8) -> Linear14 {
    let raw = !code;
    let seg = (raw >> 4) & 0x07;
    let mantissa = u16::from(raw & 0x0F);
    let magnitude = ((2 * mantissa + BIAS) << seg) - BIAS;
    Linear14 { negative: raw & 0x80 != 0, magnitude }
}

pub fn encode_i16(value: i16) -> u8 {
    encode(Linear14::from_i16(value))
}

pub fn decode_i16(code: u8) -> i16 {
    decode(code).to_i16()
}

/// Segment number (0..=7) carried by a codeword.
pub fn code_segment(code: u8) -> u8 {
    ((!code) >> 4) & 0x07
}
