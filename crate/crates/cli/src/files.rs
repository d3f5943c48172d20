//! File-level subcommands: `gen`, `analyze`, `zip` and `unzip`.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use zipcoll::bf16;
use zipcoll::codec::codebook::{exponent_histogram, ranked_exponents, top_k_coverage};
use zipcoll::codec::{compress_with_group, decompress, derive_codebook, measure_sigma, CODEBOOK_LEN};
use zipcoll::container;
use zipcoll::datagen::{self, Distribution};

use crate::args::{parse_sigma, GenArgs, UnzipArgs, ZipArgs};

/// A `--dist` value: a synthetic distribution, or raw little-endian FP32
/// values from a file, rounded to BF16.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Synthetic(Distribution),
    F32File(PathBuf),
}

impl std::str::FromStr for Source {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let t = s.trim();
        if let Some(inner) = t.strip_prefix("file(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Source::F32File(PathBuf::from(inner)));
        }
        Ok(Source::Synthetic(t.parse()?))
    }
}

fn read_f32_file(path: &Path) -> anyhow::Result<Vec<u16>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() % 4 != 0 {
        bail!("{}: {} bytes is not a whole number of FP32 values", path.display(), bytes.len());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| bf16::from_f32(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

pub fn gen(a: &GenArgs) -> anyhow::Result<String> {
    let data = match a.dist.parse::<Source>()? {
        Source::Synthetic(d) => datagen::generate(d, a.count, a.seed)?,
        Source::F32File(p) => {
            let all = read_f32_file(&p)?;
            if all.len() < a.count {
                bail!("{} holds {} values, {} requested", p.display(), all.len(), a.count);
            }
            all[..a.count].to_vec()
        }
    };
    datagen::write_bf16(&a.out, &data)?;
    Ok(format!("wrote {} elements ({}) to {}", data.len(), a.dist, a.out.display()))
}

/// Exponent statistics of a BF16 buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub elements: usize,
    pub finite: usize,
    pub mean: f64,
    pub sigma: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Cumulative fraction covered by the k most frequent exponents, k = 1..=7.
    pub coverage: Vec<f64>,
    /// The seven most frequent biased exponents, ascending.
    pub histogram_top: Vec<u8>,
    /// σ the analytic codebook was derived from.
    pub analytic_sigma: f64,
    /// Analytic codebook entries, ascending.
    pub analytic: Vec<u8>,
    /// Fraction of elements whose exponent is in the analytic codebook.
    pub analytic_coverage: f64,
}

impl Analysis {
    pub fn sets_match(&self) -> bool {
        self.histogram_top == self.analytic
    }

    /// Whether the data looks far enough from zero-mean Gaussian that the
    /// analytic codebook is likely to underperform a histogram one.
    pub fn looks_non_gaussian(&self) -> bool {
        !(self.sigma > 0.0 && self.sigma.is_finite())
            || self.mean.abs() > 0.25 * self.sigma
            || self.skewness.abs() > 0.5
            || self.excess_kurtosis.abs() > 1.0
    }
}

pub fn analyze(data: &[u16], sigma: Option<f64>) -> anyhow::Result<Analysis> {
    if data.is_empty() {
        bail!("nothing to analyze: empty buffer");
    }
    let values: Vec<f64> = data.iter().map(|&w| bf16::to_f64(w)).filter(|v| v.is_finite()).collect();
    let finite = values.len();
    let count = finite.max(1) as f64;
    let mean = values.iter().sum::<f64>() / count;
    let moment = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / count;
    let sd = moment(2).sqrt();
    let (skewness, excess_kurtosis) = if sd > 0.0 {
        (moment(3) / sd.powi(3), moment(4) / sd.powi(4) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let hist = exponent_histogram(data);
    let coverage = top_k_coverage(&hist, CODEBOOK_LEN);
    let mut histogram_top: Vec<u8> = ranked_exponents(&hist).iter().take(CODEBOOK_LEN).map(|&(e, _)| e).collect();
    histogram_top.sort_unstable();

    let analytic_sigma = match sigma {
        Some(s) => s,
        None => measure_sigma(data).context("cannot measure σ; pass --sigma")?,
    };
    let codebook = derive_codebook(analytic_sigma)?;
    let analytic = codebook.sorted_entries();
    let covered: u64 = analytic.iter().map(|&e| hist[e as usize]).sum();

    Ok(Analysis {
        elements: data.len(),
        finite,
        mean,
        sigma: sd,
        skewness,
        excess_kurtosis,
        coverage,
        histogram_top,
        analytic_sigma,
        analytic,
        analytic_coverage: covered as f64 / data.len() as f64,
    })
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "elements         {} ({} finite)", self.elements, self.finite)?;
        writeln!(f, "mean             {:.6}", self.mean)?;
        writeln!(f, "sigma            {:.6}", self.sigma)?;
        writeln!(f, "skewness         {:.4}", self.skewness)?;
        writeln!(f, "excess kurtosis  {:.4}", self.excess_kurtosis)?;
        writeln!(f)?;
        writeln!(f, "top-k exponent coverage")?;
        for (k, c) in self.coverage.iter().enumerate() {
            writeln!(f, "  k={}  {:6.2}%", k + 1, 100.0 * c)?;
        }
        writeln!(f)?;
        let top_cov = self.coverage.last().copied().unwrap_or(0.0);
        writeln!(f, "histogram top-7  {:?}  covers {:.2}%", self.histogram_top, 100.0 * top_cov)?;
        writeln!(
            f,
            "analytic (σ={})  {:?}  covers {:.2}%",
            self.analytic_sigma,
            self.analytic,
            100.0 * self.analytic_coverage
        )?;
        write!(f, "sets match       {}", if self.sets_match() { "yes" } else { "no" })?;
        if self.looks_non_gaussian() {
            write!(
                f,
                "\nwarning: data does not look like zero-mean Gaussian; the analytic codebook may cover less than a histogram one"
            )?;
        }
        Ok(())
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn zip(a: &ZipArgs) -> anyhow::Result<String> {
    let data = datagen::read_bf16(&a.file)?;
    let codebook = parse_sigma(&a.sigma)?.codebook([data.as_slice()])?;
    let chunk = compress_with_group(&data, &codebook, a.group_size_log2)?;
    let frame = container::serialize(&chunk)?;
    let out = a.out.clone().unwrap_or_else(|| with_suffix(&a.file, ".zbf16"));
    std::fs::write(&out, &frame).with_context(|| format!("writing {}", out.display()))?;
    let raw = 2 * data.len();
    Ok(format!(
        "{}: {} elements, {raw} -> {} bytes, ratio {:.4}, codebook {:?}, {} escapes",
        out.display(),
        data.len(),
        frame.len(),
        raw as f64 / frame.len() as f64,
        codebook.sorted_entries(),
        chunk.zero_count
    ))
}

pub fn unzip(a: &UnzipArgs) -> anyhow::Result<String> {
    let bytes = std::fs::read(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let chunk = container::parse(&bytes)
        .map_err(|e| anyhow::anyhow!("{}: invalid frame ({} field): {e}", a.file.display(), e.field()))?;
    let data = decompress(&chunk)?;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => match a.file.to_str().and_then(|s| s.strip_suffix(".zbf16")) {
            Some(stem) => PathBuf::from(stem),
            None => with_suffix(&a.file, ".bf16"),
        },
    };
    datagen::write_bf16(&out, &data)?;
    Ok(format!("{}: {} elements", out.display(), data.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_parsing() {
        assert_eq!(
            "file(/tmp/x.f32)".parse::<Source>().unwrap(),
            Source::F32File(PathBuf::from("/tmp/x.f32"))
        );
        assert_eq!(
            "normal(2)".parse::<Source>().unwrap(),
            Source::Synthetic(Distribution::Normal { sigma: 2.0 })
        );
        assert!("uniform(0,1)".parse::<Source>().is_err());
    }

    #[test]
    fn gaussian_analysis_matches_histogram() {
        let data = datagen::generate(Distribution::Normal { sigma: 1.0 }, 200_000, 5).unwrap();
        let a = analyze(&data, None).unwrap();
        assert!(a.sets_match(), "{a}");
        assert_eq!(a.analytic, (122..=128).collect::<Vec<u8>>());
        assert!(!a.looks_non_gaussian(), "{a}");
        assert!((a.coverage[6] - 0.975).abs() < 0.01);
        assert!(a.coverage.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn lognormal_is_flagged() {
        let data = datagen::generate(Distribution::LogNormal { mu: 0.0, sigma: 1.0 }, 50_000, 5).unwrap();
        let a = analyze(&data, None).unwrap();
        assert!(a.looks_non_gaussian());
        assert!(a.to_string().contains("warning"));
    }

    #[test]
    fn constant_data_is_flagged_but_analyzable() {
        let a = analyze(&[bf16::from_f32(3.0); 100], Some(1.0)).unwrap();
        assert!(a.looks_non_gaussian());
        assert_eq!(a.coverage[0], 1.0);
        assert!(analyze(&[], None).is_err());
    }
}
