//! Exponent codebooks and their closed-form derivation from Gaussian scale.
//!
//! A codebook names seven biased exponents that get the 3-bit codes 1..=7;
//! anything else escapes through code 0. For zero-mean Gaussian data with
//! standard deviation σ, the seven-bin window `[2^x, 2^(x+7))` holds
//! `erf(2^(x+7)/(σ√2)) − erf(2^x/(σ√2))` of the mass, maximised where
//! `2^x/(σ√2) = sqrt(7·ln2/16383)`.

use super::CodecError;
use crate::bf16;

/// Number of exponents a codebook can name.
pub const CODEBOOK_LEN: usize = 7;

/// `u = 2^x/(σ√2)` at the coverage optimum: `sqrt(7·ln2 / 16383)`.
pub const OPTIMAL_U: f64 = 0.017_209_372_493_284_695;

/// `½·log2(14·ln2 / 16383)`: offset of the optimal base from `log2(σ)`.
pub const OPTIMAL_BASE_OFFSET: f64 = -5.360_661_696_541_357;

/// Base used when the data carries no usable scale (all ±0, all non-finite).
pub const FALLBACK_BASE: i32 = -6;

// The window `base+127 ..= base+133` must stay inside the normal range [1, 254].
const MIN_BASE: i32 = 1 - bf16::EXPONENT_BIAS;
const MAX_BASE: i32 = 254 - bf16::EXPONENT_BIAS - (CODEBOOK_LEN as i32 - 1);

/// Seven distinct biased exponents; entry `i` encodes as code `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ExponentCodebook {
    entries: [u8; CODEBOOK_LEN],
}

impl ExponentCodebook {
    /// Arbitrary codebook. Entries must be pairwise distinct.
    pub fn new(entries: [u8; CODEBOOK_LEN]) -> Result<Self, CodecError> {
        for i in 0..CODEBOOK_LEN {
            for j in (i + 1)..CODEBOOK_LEN {
                if entries[i] == entries[j] {
                    return Err(CodecError::InvalidArgument(format!(
                        "codebook entry {} repeated",
                        entries[i]
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Contiguous window `{base+127, ..., base+133}`. The window is shifted
    /// (not truncated) so that it lies in `[1, 254]`.
    pub fn contiguous(base: i32) -> Self {
        let base = base.clamp(MIN_BASE, MAX_BASE);
        let first = (base + bf16::EXPONENT_BIAS) as u8;
        let mut entries = [0u8; CODEBOOK_LEN];
        for (i, e) in entries.iter_mut().enumerate() {
            *e = first + i as u8;
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[u8; CODEBOOK_LEN] {
        &self.entries
    }

    /// Unbiased exponent of the first entry.
    pub fn base(&self) -> i32 {
        self.entries[0] as i32 - bf16::EXPONENT_BIAS
    }

    pub fn contains(&self, biased_exponent: u8) -> bool {
        self.entries.contains(&biased_exponent)
    }

    /// Exponent → code table (0 for escapes).
    pub(crate) fn encode_table(&self) -> [u8; 256] {
        let mut table = [0u8; 256];
        for (i, &e) in self.entries.iter().enumerate() {
            table[e as usize] = i as u8 + 1;
        }
        table
    }

    /// Code → exponent table; slot 0 is unused.
    pub(crate) fn decode_table(&self) -> [u8; 8] {
        let mut table = [0u8; 8];
        table[1..].copy_from_slice(&self.entries);
        table
    }

    /// Entries as a sorted vector, for set comparisons.
    pub fn sorted_entries(&self) -> Vec<u8> {
        let mut v = self.entries.to_vec();
        v.sort_unstable();
        v
    }

    /// Codebook for a buffer: analytic when the data has a positive finite
    /// scale, otherwise a window around the modal exponent.
    pub fn for_data(data: &[u16]) -> Result<Self, CodecError> {
        match measure_sigma(data) {
            Ok(sigma) if sigma > 0.0 && sigma.is_finite() => derive_codebook(sigma),
            Ok(_) | Err(CodecError::DegenerateInput(_)) => Ok(modal_codebook(data)),
            Err(e) => Err(e),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<(), CodecError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(CodecError::InvalidArgument(format!(
            "sigma must be positive and finite, got {sigma}"
        )))
    }
}

/// Probability that `|w| ∈ [2^x, 2^(x+7))` for `w ~ N(0, σ²)`.
///
/// `x` may be fractional; integer values correspond to real codebooks.
pub fn window_coverage(sigma: f64, x: f64) -> Result<f64, CodecError> {
    check_sigma(sigma)?;
    let scale = sigma * std::f64::consts::SQRT_2;
    let lo = x.exp2() / scale;
    let hi = (x + 7.0).exp2() / scale;
    Ok((libm::erf(hi) - libm::erf(lo)).max(0.0))
}

/// Continuous maximiser of [`window_coverage`]: `log2(σ) + OPTIMAL_BASE_OFFSET`.
pub fn optimal_base_exponent(sigma: f64) -> Result<f64, CodecError> {
    check_sigma(sigma)?;
    Ok(sigma.log2() + OPTIMAL_BASE_OFFSET)
}

/// Integer base for σ: the better of `floor(x_opt)` and `ceil(x_opt)`,
/// ties to floor, before any range shift.
pub fn optimal_integer_base(sigma: f64) -> Result<i32, CodecError> {
    let x = optimal_base_exponent(sigma)?;
    let lo = x.floor();
    let hi = x.ceil();
    if lo == hi {
        return Ok(lo as i32);
    }
    let base = if window_coverage(sigma, hi)? > window_coverage(sigma, lo)? {
        hi
    } else {
        lo
    };
    Ok(base as i32)
}

/// Codebook from Gaussian scale alone, no histogram.
pub fn derive_codebook(sigma: f64) -> Result<ExponentCodebook, CodecError> {
    Ok(ExponentCodebook::contiguous(optimal_integer_base(sigma)?))
}

/// Population standard deviation over the finite elements.
pub fn measure_sigma(data: &[u16]) -> Result<f64, CodecError> {
    if data.is_empty() {
        return Err(CodecError::DegenerateInput("empty buffer".into()));
    }
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for &w in data {
        let v = bf16::to_f64(w);
        if v.is_finite() {
            count += 1;
            sum += v;
        }
    }
    if count == 0 {
        return Err(CodecError::DegenerateInput("no finite elements".into()));
    }
    let mean = sum / count as f64;
    let mut sq = 0.0f64;
    for &w in data {
        let v = bf16::to_f64(w);
        if v.is_finite() {
            let d = v - mean;
            sq += d * d;
        }
    }
    Ok((sq / count as f64).sqrt())
}

/// Counts of each biased exponent.
pub fn exponent_histogram(data: &[u16]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &w in data {
        hist[bf16::exponent(w) as usize] += 1;
    }
    hist
}

/// Exponents ordered by descending count (ties: smaller exponent first),
/// restricted to those that occur.
pub fn ranked_exponents(hist: &[u64; 256]) -> Vec<(u8, u64)> {
    let mut ranked: Vec<(u8, u64)> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(e, &c)| (e as u8, c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Cumulative top-k coverage fractions for k = 1..=`k_max`.
pub fn top_k_coverage(hist: &[u64; 256], k_max: usize) -> Vec<f64> {
    let total: u64 = hist.iter().sum();
    let ranked = ranked_exponents(hist);
    let mut acc = 0u64;
    (0..k_max)
        .map(|k| {
            if let Some(&(_, c)) = ranked.get(k) {
                acc += c;
            }
            if total == 0 {
                0.0
            } else {
                acc as f64 / total as f64
            }
        })
        .collect()
}

/// Window centred on the most frequent exponent. Buffers whose modal
/// exponent is 0 or 255 (zeros, subnormals, Inf/NaN) get [`FALLBACK_BASE`].
pub fn modal_codebook(data: &[u16]) -> ExponentCodebook {
    let hist = exponent_histogram(data);
    match ranked_exponents(&hist).first() {
        Some(&(mode, _)) if mode != 0 && mode != 255 => {
            ExponentCodebook::contiguous(mode as i32 - bf16::EXPONENT_BIAS - 3)
        }
        _ => ExponentCodebook::contiguous(FALLBACK_BASE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Composite Simpson on an adaptive split; independent of erf.
    fn gaussian_mass(sigma: f64, a: f64, b: f64) -> f64 {
        fn pdf(sigma: f64, t: f64) -> f64 {
            (-(t * t) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        }
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        }
        fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                adapt(f, a, m, left, tol / 2.0, depth - 1) + adapt(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        let f = |t: f64| pdf(sigma, t);
        2.0 * adapt(&f, a, b, simpson(&f, a, b), 1e-13, 50)
    }

    #[test]
    fn optimum_constants_match_closed_form() {
        let ln2 = std::f64::consts::LN_2;
        assert!((OPTIMAL_U - (7.0 * ln2 / 16383.0).sqrt()).abs() < 1e-15);
        assert!((OPTIMAL_BASE_OFFSET - 0.5 * (14.0 * ln2 / 16383.0).log2()).abs() < 1e-14);
        assert_eq!(format!("{OPTIMAL_U:.4}"), "0.0172");
    }

    #[test]
    fn coverage_matches_quadrature() {
        for x in [-6, -5, -9, 0] {
            let got = window_coverage(1.0, x as f64).unwrap();
            let want = gaussian_mass(1.0, (x as f64).exp2(), (x as f64 + 7.0).exp2());
            assert!((got - want).abs() < 1e-9, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn coverage_vanishes_far_from_scale() {
        assert!(window_coverage(1.0, -1000.0).unwrap() < 1e-12);
        assert!(window_coverage(1.0, -200.0).unwrap() < 1e-12);
        assert_eq!(window_coverage(1.0, 2000.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_sigma() {
        for s in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(window_coverage(s, 0.0).is_err());
            assert!(optimal_base_exponent(s).is_err());
            assert!(derive_codebook(s).is_err());
        }
    }

    #[test]
    fn base_offset_values() {
        // The closed form is -5.3607; the commonly quoted -5.35 is a truncation.
        assert!((optimal_base_exponent(1.0).unwrap() + 5.35).abs() < 0.015);
        assert!((optimal_base_exponent(2.0).unwrap() + 4.35).abs() < 0.015);
    }

    #[test]
    fn derivative_changes_sign_at_optimum() {
        let x = optimal_base_exponent(1.0).unwrap();
        let d = |x: f64| {
            let h = 1e-4;
            (window_coverage(1.0, x + h).unwrap() - window_coverage(1.0, x - h).unwrap()) / (2.0 * h)
        };
        assert!(d(x - 1e-6) > 0.0);
        assert!(d(x + 1e-6) < 0.0);
    }

    #[test]
    fn integer_optimum_is_global_over_sweep() {
        for k in -10..=10 {
            let sigma = 2f64.powi(k);
            let base = optimal_integer_base(sigma).unwrap();
            let best = base_by_sweep(sigma);
            assert_eq!(base, best, "sigma=2^{k}");
        }
    }

    fn base_by_sweep(sigma: f64) -> i32 {
        let mut best = (-60, f64::MIN);
        for x in -60..=60 {
            let c = window_coverage(sigma, x as f64).unwrap();
            if c > best.1 {
                best = (x, c);
            }
        }
        best.0
    }

    #[test]
    fn sigma_one_picks_better_neighbour() {
        let cb = derive_codebook(1.0).unwrap();
        assert!(cb.base() == -6 || cb.base() == -5);
        let other = if cb.base() == -6 { -5 } else { -6 };
        assert!(window_coverage(1.0, cb.base() as f64).unwrap() >= window_coverage(1.0, other as f64).unwrap());
        assert_eq!(cb.base(), -5);
        assert_eq!(cb.entries(), &[122, 123, 124, 125, 126, 127, 128]);
    }

    #[test]
    fn huge_sigma_window_is_shifted_into_range() {
        let cb = derive_codebook(2f64.powi(40)).unwrap();
        assert!(cb.entries().iter().all(|&e| (1..=254).contains(&e)));
        let tiny = derive_codebook(2f64.powi(-140)).unwrap();
        assert!(tiny.entries().iter().all(|&e| (1..=254).contains(&e)));
        assert_eq!(tiny.base(), -126);
    }

    #[test]
    fn sigma_of_simple_sets() {
        let ones = vec![0x3F80u16; 16];
        assert_eq!(measure_sigma(&ones).unwrap(), 0.0);
        assert_eq!(measure_sigma(&[0xBF80, 0x3F80]).unwrap(), 1.0);
        assert!(matches!(measure_sigma(&[]), Err(CodecError::DegenerateInput(_))));
        assert!(matches!(measure_sigma(&[0x7FC0, 0x7F80]), Err(CodecError::DegenerateInput(_))));
        // Non-finite values are excluded.
        assert_eq!(measure_sigma(&[0xBF80, 0x3F80, 0x7FC0]).unwrap(), 1.0);
    }

    #[test]
    fn duplicate_entries_rejected() {
        assert!(ExponentCodebook::new([1, 2, 3, 4, 5, 6, 6]).is_err());
        assert!(ExponentCodebook::new([0, 255, 3, 4, 5, 6, 7]).is_ok());
    }

    #[test]
    fn degenerate_data_uses_mode() {
        let ones = vec![0x3F80u16; 8];
        let cb = ExponentCodebook::for_data(&ones).unwrap();
        assert!(cb.contains(127));
        let zeros = vec![0u16, 0x8000, 0];
        assert_eq!(ExponentCodebook::for_data(&zeros).unwrap().base(), FALLBACK_BASE);
        let nans = vec![0x7FC1u16; 3];
        assert_eq!(ExponentCodebook::for_data(&nans).unwrap().base(), FALLBACK_BASE);
    }
}
