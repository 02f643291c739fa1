//! Unbiased stochastic uniform quantization of a whole vector.
//!
//! Each coordinate becomes `norm * sign * level / s`, where `level` is
//! `floor(|x| s / norm)` or one more, picked so the expectation is exact.

use rand::Rng;

use crate::codec::f32_at_least;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct QsgdMessage {
    pub norm: f32,
    pub levels: u32,
    pub signed_levels: Vec<i32>,
}

pub fn quantize<R: Rng + ?Sized>(x: &[f64], levels: u32, rng: &mut R) -> Result<QsgdMessage> {
    let norm = f32_at_least(x.iter().map(|v| v * v).sum::<f64>().sqrt())?;
    let n = norm as f64;
    let signed_levels = x
        .iter()
        .map(|&v| {
            if n == 0.0 {
                return 0;
            }
            let r = (v.abs() / n * levels as f64).min(levels as f64);
            let lower = r.floor();
            let level = if rng.random::<f64>() < r - lower { lower + 1.0 } else { lower };
            (level as i32) * if v < 0.0 { -1 } else { 1 }
        })
        .collect();
    Ok(QsgdMessage {
        norm,
        levels,
        signed_levels,
    })
}

pub fn dequantize(msg: &QsgdMessage) -> Vec<f64> {
    let scale = msg.norm as f64 / msg.levels as f64;
    msg.signed_levels.iter().map(|&l| l as f64 * scale).collect()
}

/// `ceil(log2(s + 1))` magnitude bits plus a sign bit per coordinate, and a
/// 40-bit header (level byte + f32 norm).
pub fn message_bits(dims: usize, levels: u32) -> u64 {
    let magnitude = 32 - levels.leading_zeros() as u64;
    dims as u64 * (magnitude + 1) + 40
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_vector_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = quantize(&[0.0; 4], 15, &mut rng).unwrap();
        assert_eq!(dequantize(&m), vec![0.0; 4]);
    }

    #[test]
    fn bit_formula() {
        assert_eq!(message_bits(10, 15), 10 * 5 + 40);
        assert_eq!(message_bits(10, 1), 10 * 2 + 40);
        assert_eq!(message_bits(3, 16), 3 * 6 + 40);
    }

    #[test]
    fn unbiased_within_three_standard_errors() {
        let x = [0.3, -1.2, 0.05, 2.0, 0.0, -0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let mut sum = [0.0; 6];
        let mut sq = [0.0; 6];
        for _ in 0..n {
            for (i, v) in dequantize(&quantize(&x, 4, &mut rng).unwrap()).into_iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..6 {
            let mean = sum[i] / n as f64;
            let var = (sq[i] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!((mean - x[i]).abs() <= 3.0 * se + 1e-12, "{i}: {mean} vs {}", x[i]);
        }
    }

    #[test]
    fn fine_levels_are_nearly_exact() {
        let x = [0.3, -1.2, 0.05];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = dequantize(&quantize(&x, 1 << 15, &mut rng).unwrap());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1.3 / 32768.0 + 1e-7);
        }
    }
}
