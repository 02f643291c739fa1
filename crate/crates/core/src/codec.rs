//! Gradient-innovation quantization.
//!
//! A client never sends its gradient directly. It sends the difference
//! between the gradient and a reference it shares with the server, quantized
//! onto a uniform grid of `2^b + 1` points spanning `[-R, R]`:
//!
//! ```text
//! index = floor((x + R) / (2 t R) + 1/2),   t = 2^-b
//! x_hat = index * 2 t R - R
//! ```
//!
//! Both sides then add `x_hat` to their copy of the reference, so the two
//! copies stay bitwise identical. Indices need `b + 1` bits because the grid
//! includes both end points.
//!
//! Wire layout of a quantized payload:
//!
//! ```text
//! [bits_b: u8][range_r: f32 LE][d indices of (b+1) bits, MSB-first, zero-padded]
//! ```
//!
//! A full-precision payload (used when the codec is bypassed) carries the
//! value `32` in the first byte followed by `d` little-endian `f32`s and
//! replaces the reference instead of adding to it.

use crate::error::{Error, Result};

pub const MAX_BITS: u8 = 16;
/// Range header (binary32) plus the bit-depth byte.
pub const HEADER_BITS: u64 = 40;
pub const FULL_PRECISION_TAG: u8 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedInnovation {
    pub indices: Vec<u32>,
    /// Transmitted range; exactly representable as `f32`.
    pub range_r: f64,
    pub bits_b: u8,
}

impl QuantizedInnovation {
    pub fn dims(&self) -> usize {
        self.indices.len()
    }

    /// `t = 2^-b`.
    pub fn step_t(&self) -> f64 {
        (-(self.bits_b as f64)).exp2()
    }

    /// Grid spacing `2 t R`.
    fn spacing(&self) -> f64 {
        grid_spacing(self.range_r, self.bits_b)
    }

    pub fn max_index(&self) -> u32 {
        1u32 << self.bits_b
    }
}

fn grid_spacing(range: f64, bits: u8) -> f64 {
    range * (1.0 - bits as f64).exp2()
}

/// Shared reconstruction of everything a client has sent so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGradient(Vec<f64>);

impl ReferenceGradient {
    pub fn zeros(dims: usize) -> Self {
        Self(vec![0.0; dims])
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Bitwise comparison (distinguishes `0.0` from `-0.0`).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// `current - reference`, elementwise.
pub fn compute_innovation(current: &[f64], reference: &ReferenceGradient) -> Result<Vec<f64>> {
    check_dims(reference.dims(), current.len())?;
    Ok(current.iter().zip(reference.values()).map(|(g, r)| g - r).collect())
}

/// Smallest binary32 value that is `>= value`.
pub(crate) fn f32_at_least(value: f64) -> Result<f32> {
    if value > f32::MAX as f64 {
        return Err(Error::RangeOverflow(value));
    }
    let rounded = value as f32;
    Ok(if (rounded as f64) < value {
        rounded.next_up()
    } else {
        rounded
    })
}

pub fn quantize(delta: &[f64], bits_b: u8) -> Result<QuantizedInnovation> {
    if !(1..=MAX_BITS).contains(&bits_b) {
        return Err(Error::InvalidBitDepth(bits_b));
    }
    let mut max_abs = 0.0f64;
    for (index, &value) in delta.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteGradient { index, value });
        }
        max_abs = max_abs.max(value.abs());
    }
    let max_index = 1u32 << bits_b;
    if max_abs == 0.0 {
        return Ok(QuantizedInnovation {
            indices: vec![max_index / 2; delta.len()],
            range_r: 1.0,
            bits_b,
        });
    }
    let range = f32_at_least(max_abs)? as f64;
    let spacing = grid_spacing(range, bits_b);
    let half_step = spacing / 2.0;
    let indices = delta
        .iter()
        .map(|&x| {
            let raw = ((x + range) / spacing + 0.5).floor();
            let mut index = raw.clamp(0.0, max_index as f64) as u32;
            // `x + range` may round across a grid midpoint; step to the
            // neighbour if that left us more than half a step away.
            let err = (x - (index as f64 * spacing - range)).abs();
            if err > half_step {
                if index < max_index
                    && (x - ((index + 1) as f64 * spacing - range)).abs() < err
                {
                    index += 1;
                } else {
                    index = index.saturating_sub(1);
                }
            }
            index
        })
        .collect();
    Ok(QuantizedInnovation {
        indices,
        range_r: range,
        bits_b,
    })
}

pub fn dequantize(qi: &QuantizedInnovation) -> Vec<f64> {
    let spacing = qi.spacing();
    qi.indices
        .iter()
        .map(|&i| i as f64 * spacing - qi.range_r)
        .collect()
}

/// `delta - dequantize(qi)`.
pub fn quantization_error(delta: &[f64], qi: &QuantizedInnovation) -> Result<Vec<f64>> {
    check_dims(qi.dims(), delta.len())?;
    Ok(delta
        .iter()
        .zip(dequantize(qi))
        .map(|(d, r)| d - r)
        .collect())
}

/// Payload width in bits before byte padding: `d (b + 1) + 40`.
pub fn encoded_bits(qi: &QuantizedInnovation) -> u64 {
    qi.dims() as u64 * (qi.bits_b as u64 + 1) + HEADER_BITS
}

pub fn advance_reference(
    reference: &ReferenceGradient,
    qi: &QuantizedInnovation,
) -> Result<ReferenceGradient> {
    check_dims(reference.dims(), qi.dims())?;
    Ok(ReferenceGradient(
        reference
            .values()
            .iter()
            .zip(dequantize(qi))
            .map(|(r, x)| r + x)
            .collect(),
    ))
}

/// What a client puts on the uplink when it decides to send.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Quantized(QuantizedInnovation),
    /// Codec bypass: the full gradient rounded to binary32.
    Full(Vec<f32>),
}

impl Payload {
    pub fn dims(&self) -> usize {
        match self {
            Payload::Quantized(qi) => qi.dims(),
            Payload::Full(values) => values.len(),
        }
    }

    pub fn encoded_bits(&self) -> u64 {
        match self {
            Payload::Quantized(qi) => encoded_bits(qi),
            Payload::Full(values) => values.len() as u64 * 32 + 8,
        }
    }

    /// Bit depth written in the first byte.
    pub fn bits_tag(&self) -> u8 {
        match self {
            Payload::Quantized(qi) => qi.bits_b,
            Payload::Full(_) => FULL_PRECISION_TAG,
        }
    }

    /// The innovation the receiver reconstructs relative to `reference`.
    pub fn reconstructed_innovation(&self, reference: &ReferenceGradient) -> Result<Vec<f64>> {
        check_dims(reference.dims(), self.dims())?;
        Ok(match self {
            Payload::Quantized(qi) => dequantize(qi),
            Payload::Full(values) => values
                .iter()
                .zip(reference.values())
                .map(|(&v, r)| v as f64 - r)
                .collect(),
        })
    }

    pub fn apply(&self, reference: &ReferenceGradient) -> Result<ReferenceGradient> {
        match self {
            Payload::Quantized(qi) => advance_reference(reference, qi),
            Payload::Full(values) => {
                check_dims(reference.dims(), values.len())?;
                Ok(ReferenceGradient(values.iter().map(|&v| v as f64).collect()))
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Payload::Quantized(qi) => encode_quantized(qi),
            Payload::Full(values) => {
                let mut out = Vec::with_capacity(1 + 4 * values.len());
                out.push(FULL_PRECISION_TAG);
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out
            }
        }
    }

    /// Parses a payload for a model of `dims` parameters.
    pub fn decode(bytes: &[u8], dims: usize) -> Result<Self> {
        let (&tag, rest) = bytes
            .split_first()
            .ok_or_else(|| Error::Malformed("empty payload".into()))?;
        if tag == FULL_PRECISION_TAG {
            if rest.len() != 4 * dims {
                return Err(Error::Malformed(format!(
                    "full-precision payload has {} bytes, expected {}",
                    rest.len(),
                    4 * dims
                )));
            }
            let values = rest
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            return Ok(Payload::Full(values));
        }
        decode_quantized(bytes, dims).map(Payload::Quantized)
    }
}

pub fn encode_quantized(qi: &QuantizedInnovation) -> Vec<u8> {
    let mut writer = BitWriter::with_capacity(encoded_bits(qi).div_ceil(8) as usize);
    writer.write_byte(qi.bits_b);
    for b in (qi.range_r as f32).to_le_bytes() {
        writer.write_byte(b);
    }
    let width = qi.bits_b as u32 + 1;
    for &index in &qi.indices {
        writer.write(index, width);
    }
    writer.finish()
}

pub fn decode_quantized(bytes: &[u8], dims: usize) -> Result<QuantizedInnovation> {
    if bytes.len() < 5 {
        return Err(Error::Malformed("payload shorter than its header".into()));
    }
    let bits_b = bytes[0];
    if !(1..=MAX_BITS).contains(&bits_b) {
        return Err(Error::InvalidBitDepth(bits_b));
    }
    let range = f32::from_le_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]);
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::Malformed(format!("invalid range header {range}")));
    }
    let width = bits_b as u32 + 1;
    let expected_len = (dims as u64 * width as u64 + HEADER_BITS).div_ceil(8) as usize;
    if bytes.len() != expected_len {
        return Err(Error::Malformed(format!(
            "payload has {} bytes, expected {expected_len} for {dims} indices of {width} bits",
            bytes.len()
        )));
    }
    let max_index = 1u32 << bits_b;
    let mut reader = BitReader::new(&bytes[5..]);
    let mut indices = Vec::with_capacity(dims);
    for _ in 0..dims {
        let index = reader.read(width);
        if index > max_index {
            return Err(Error::Malformed(format!("index {index} exceeds {max_index}")));
        }
        indices.push(index);
    }
    Ok(QuantizedInnovation {
        indices,
        range_r: range as f64,
        bits_b,
    })
}

/// MSB-first bit packer.
struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn with_capacity(capacity: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(capacity),
            acc: 0,
            filled: 0,
        }
    }

    fn write_byte(&mut self, byte: u8) {
        self.write(byte as u32, 8);
    }

    fn write(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32 && (width == 32 || value >> width == 0));
        self.acc = (self.acc << width) | value as u64;
        self.filled += width;
        while self.filled >= 8 {
            self.filled -= 8;
            self.bytes.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push((self.acc << (8 - self.filled)) as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    filled: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            acc: 0,
            filled: 0,
        }
    }

    /// Caller guarantees enough bytes remain (checked against the length up front).
    fn read(&mut self, width: u32) -> u32 {
        while self.filled < width {
            self.acc = (self.acc << 8) | self.bytes[self.pos] as u64;
            self.pos += 1;
            self.filled += 8;
        }
        self.filled -= width;
        let value = (self.acc >> self.filled) as u32 & ((1u64 << width) - 1) as u32;
        self.acc &= (1u64 << self.filled) - 1;
        value
    }
}
