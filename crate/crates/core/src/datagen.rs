//! Seeded synthetic BF16 data and raw `.bf16` file IO.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, LogNormal, Normal};

use crate::bf16;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad distribution {0:?}: expected normal(σ), lognormal(μ,σ) or constant(v)")]
    BadDistribution(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("{path}: {len} bytes is not a whole number of BF16 words")]
    OddLength { path: String, len: usize },
    #[error("{0}: empty file")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Source distribution; samples are drawn in FP64 and rounded to BF16.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    /// Zero-mean Gaussian with standard deviation `sigma`.
    Normal { sigma: f64 },
    /// `exp(N(mu, sigma²))`.
    LogNormal { mu: f64, sigma: f64 },
    Constant(f64),
}

impl Distribution {
    pub fn validate(&self) -> Result<(), DataError> {
        let ok = match *self {
            Distribution::Normal { sigma } => sigma.is_finite() && sigma > 0.0,
            Distribution::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            Distribution::Constant(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidParameters(self.to_string()))
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Normal { sigma } => write!(f, "normal({sigma})"),
            Distribution::LogNormal { mu, sigma } => write!(f, "lognormal({mu},{sigma})"),
            Distribution::Constant(v) => write!(f, "constant({v})"),
        }
    }
}

impl FromStr for Distribution {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::BadDistribution(s.to_string());
        let (name, rest) = s.trim().split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let d = match (name.trim(), nums.as_slice()) {
            ("normal", [sigma]) => Distribution::Normal { sigma: *sigma },
            ("lognormal", [mu, sigma]) => Distribution::LogNormal { mu: *mu, sigma: *sigma },
            ("constant", [v]) => Distribution::Constant(*v),
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

/// `n` words from `dist`, reproducible from `seed`.
pub fn generate(dist: Distribution, n: usize, seed: u64) -> Result<Vec<u16>, DataError> {
    generate_stream(dist, n, seed, 0)
}

/// Like [`generate`] but from an independent stream of the same seed, so
/// ranks can share a seed without sharing samples.
pub fn generate_stream(dist: Distribution, n: usize, seed: u64, stream: u64) -> Result<Vec<u16>, DataError> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let out = match dist {
        Distribution::Normal { sigma } => {
            let d = Normal::new(0.0, sigma).map_err(|e| DataError::InvalidParameters(e.to_string()))?;
            (0..n).map(|_| bf16::from_f64(d.sample(&mut rng))).collect()
        }
        Distribution::LogNormal { mu, sigma } => {
            let d = LogNormal::new(mu, sigma).map_err(|e| DataError::InvalidParameters(e.to_string()))?;
            (0..n).map(|_| bf16::from_f64(d.sample(&mut rng))).collect()
        }
        Distribution::Constant(v) => vec![bf16::from_f64(v); n],
    };
    Ok(out)
}

pub fn write_bf16(path: impl AsRef<Path>, words: &[u16]) -> Result<(), DataError> {
    std::fs::write(path, bf16::to_le_bytes(words))?;
    Ok(())
}

/// Read a non-empty raw little-endian BF16 file.
pub fn read_bf16(path: impl AsRef<Path>) -> Result<Vec<u16>, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Err(DataError::Empty(path.display().to_string()));
    }
    bf16::from_le_bytes(&bytes).ok_or_else(|| DataError::OddLength {
        path: path.display().to_string(),
        len: bytes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::measure_sigma;

    #[test]
    fn parse_and_display() {
        for text in ["normal(1)", "lognormal(0,1)", "constant(1.5)", "constant(-0)"] {
            let d: Distribution = text.parse().unwrap();
            assert_eq!(d.to_string().parse::<Distribution>().unwrap(), d);
        }
        for text in ["normal(0)", "normal(-1)", "normal", "gamma(1)", "lognormal(1)", "normal(1,2)", "normal(x)"] {
            assert!(text.parse::<Distribution>().is_err(), "{text}");
        }
    }

    #[test]
    fn constant_words() {
        assert_eq!(generate(Distribution::Constant(1.0), 4, 0).unwrap(), vec![0x3F80; 4]);
    }

    #[test]
    fn seeded_and_streamed() {
        let d = Distribution::Normal { sigma: 1.0 };
        assert_eq!(generate(d, 1000, 5).unwrap(), generate(d, 1000, 5).unwrap());
        assert_ne!(generate(d, 1000, 5).unwrap(), generate(d, 1000, 6).unwrap());
        assert_ne!(generate_stream(d, 1000, 5, 1).unwrap(), generate_stream(d, 1000, 5, 2).unwrap());
    }

    #[test]
    fn normal_sigma_is_recovered() {
        let words = generate(Distribution::Normal { sigma: 1.0 }, 1_000_000, 42).unwrap();
        let s = measure_sigma(&words).unwrap();
        assert!((0.99..=1.01).contains(&s), "{s}");
    }

    #[test]
    fn lognormal_is_positive() {
        let words = generate(Distribution::LogNormal { mu: 0.0, sigma: 1.0 }, 10_000, 1).unwrap();
        assert!(words.iter().all(|&w| w >> 15 == 0));
    }
}
