//! Bit-level helpers for BF16 words.
//!
//! A BF16 word is the upper half of an IEEE 754 binary32 value:
//! `sign(1) | biased exponent(8) | mantissa(7)`. Buffers are plain `u16`
//! slices; every one of the 65536 patterns is a legal input to the codec.

/// Mask of the 7 mantissa bits.
pub const MANTISSA_MASK: u16 = 0x007F;
/// Exponent bias shared with binary32.
pub const EXPONENT_BIAS: i32 = 127;

/// Biased 8-bit exponent field.
#[inline]
pub fn exponent(word: u16) -> u8 {
    ((word >> 7) & 0xFF) as u8
}

/// Sign and mantissa folded into one byte: `(sign << 7) | mantissa`.
#[inline]
pub fn sign_mantissa(word: u16) -> u8 {
    (((word >> 8) & 0x80) | (word & MANTISSA_MASK)) as u8
}

/// Inverse of [`exponent`] + [`sign_mantissa`].
#[inline]
pub fn assemble(sign_mantissa: u8, exponent: u8) -> u16 {
    let sm = sign_mantissa as u16;
    ((sm & 0x80) << 8) | ((exponent as u16) << 7) | (sm & MANTISSA_MASK)
}

#[inline]
pub fn to_f32(word: u16) -> f32 {
    f32::from_bits((word as u32) << 16)
}

#[inline]
pub fn to_f64(word: u16) -> f64 {
    to_f32(word) as f64
}

/// Round a binary32 value to BF16, nearest-even. NaNs keep their sign and
/// high payload bits; a NaN whose payload lives only in the low 16 bits is
/// made quiet so it stays a NaN. Every BF16 word survives
/// `from_f32(to_f32(w))` unchanged.
#[inline]
pub fn from_f32(value: f32) -> u16 {
    let bits = value.to_bits();
    if value.is_nan() {
        let high = (bits >> 16) as u16;
        return if high & MANTISSA_MASK == 0 { high | 0x0040 } else { high };
    }
    let rounding = 0x7FFF + ((bits >> 16) & 1);
    ((bits + rounding) >> 16) as u16
}

/// Round a binary64 value to BF16, nearest-even, without double rounding.
///
/// The value is first narrowed to binary32 with round-to-odd, which keeps
/// 16 guard bits beyond the BF16 mantissa at every magnitude, so the second
/// (nearest-even) step sees the same tie information as a direct rounding.
pub fn from_f64(value: f64) -> u16 {
    if value.is_nan() {
        let sign = if value.is_sign_negative() { 0x8000 } else { 0 };
        return sign | 0x7FC0;
    }
    let narrowed = value as f32;
    if narrowed.is_infinite() {
        // Finite inputs that overflow binary32 are far above the BF16
        // overflow threshold as well.
        return if value.is_sign_negative() { 0xFF80 } else { 0x7F80 };
    }
    let mut bits = narrowed.to_bits();
    if narrowed as f64 != value && bits & 1 == 0 {
        if (narrowed as f64).abs() > value.abs() {
            bits -= 1;
        } else {
            bits += 1;
        }
    }
    from_f32(f32::from_bits(bits))
}

/// Convert a buffer of words to little-endian bytes.
pub fn to_le_bytes(words: &[u16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(words.len() * 2);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Parse little-endian bytes into words. `None` on odd length.
pub fn from_le_bytes(bytes: &[u8]) -> Option<Vec<u16>> {
    if !bytes.len().is_multiple_of(2) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Nearest-even over the BF16 neighbours of `x`. The neighbours lie
    // within a factor of two of `x`, so the differences are exact.
    fn oracle_from_f64(x: f64) -> u16 {
        let t = (x as f32).to_bits() >> 16;
        let mut best = None;
        for cand in [t.wrapping_sub(1), t, t + 1] {
            let cand = cand as u16;
            let v = to_f64(cand);
            if !v.is_finite() || v.is_sign_negative() != x.is_sign_negative() {
                continue;
            }
            let d = (v - x).abs();
            best = match best {
                Some((b, bd)) if bd < d || (bd == d && b & 1 == 0) => Some((b, bd)),
                _ => Some((cand, d)),
            };
        }
        best.unwrap().0
    }

    #[test]
    fn one_is_3f80() {
        assert_eq!(from_f64(1.0), 0x3F80);
        assert_eq!(from_f32(-2.0), 0xC000);
    }

    #[test]
    fn split_and_assemble_cover_every_word() {
        for w in 0..=u16::MAX {
            assert_eq!(assemble(sign_mantissa(w), exponent(w)), w);
        }
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-8 sits halfway between 1.0 and 1 + 2^-7.
        assert_eq!(from_f64(1.0 + 2f64.powi(-8)), 0x3F80);
        assert_eq!(from_f64(1.0 + 3.0 * 2f64.powi(-8)), 0x3F82);
        // A hair above the tie goes up, even when binary32 would lose it.
        assert_eq!(from_f64(1.0 + 2f64.powi(-8) + 2f64.powi(-40)), 0x3F81);
    }

    #[test]
    fn matches_midpoint_oracle_on_random_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200_000 {
            let mag: f64 = rng.random_range(-130.0..120.0);
            let x = 2f64.powf(mag) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            assert_eq!(from_f64(x), oracle_from_f64(x), "x = {x:e}");
        }
    }

    #[test]
    fn overflow_and_specials() {
        assert_eq!(from_f64(1e300), 0x7F80);
        assert_eq!(from_f64(-1e39), 0xFF80);
        assert_eq!(from_f64(f64::NAN) & 0x7FC0, 0x7FC0);
        assert_eq!(from_f64(0.0), 0);
        assert_eq!(from_f64(-0.0), 0x8000);
        assert_eq!(from_f64(1e-300), 0);
    }

    #[test]
    fn every_word_survives_widening() {
        for w in 0..=u16::MAX {
            assert_eq!(from_f32(to_f32(w)), w, "{w:#06x}");
        }
        let low_payload_nan = f32::from_bits(0x7F80_0001);
        assert!(to_f32(from_f32(low_payload_nan)).is_nan());
    }
}
