use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "zipcoll", version, about = "Lossless compressed collectives for BF16 tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write seeded synthetic BF16 data to a raw .bf16 file.
    Gen(GenArgs),
    /// Exponent coverage table and codebook suggestion for a .bf16 file.
    Analyze(AnalyzeArgs),
    /// Compress a .bf16 file into a .zbf16 frame.
    Zip(ZipArgs),
    /// Decompress a .zbf16 frame back to .bf16.
    Unzip(UnzipArgs),
    /// Run collectives and emit CSV records.
    Collective(CollectiveArgs),
    /// Fit the reduce-scatter cost model and write it to a profile file.
    Profile(ProfileArgs),
    /// Turn a CSV report into gnuplot-ready data blocks.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// normal(σ), lognormal(μ,σ), constant(v) or file(PATH).
    #[arg(long, default_value = "normal(1)")]
    pub dist: String,
    /// Number of BF16 elements.
    #[arg(short = 'n', long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub file: PathBuf,
    /// Derive the analytic codebook from this σ instead of the measured one.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ZipArgs {
    pub file: PathBuf,
    /// Output path; defaults to the input with `.zbf16` appended.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// A positive σ, or `measure`.
    #[arg(long, default_value = "measure")]
    pub sigma: String,
    #[arg(long, default_value_t = zipcoll::codec::DEFAULT_GROUP_SIZE_LOG2)]
    pub group_size_log2: u8,
}

#[derive(Args, Debug)]
pub struct UnzipArgs {
    pub file: PathBuf,
    /// Output path; defaults to the input without `.zbf16`, or with `.bf16` appended.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    Loopback,
    Tcp,
    Sim,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Allgather,
    A2aD1,
    A2aD2,
    Reducescatter,
    AutoRs,
    RefAllgather,
    RefA2a,
    RefRs,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Allgather => "allgather",
            Op::A2aD1 => "a2a-d1",
            Op::A2aD2 => "a2a-d2",
            Op::Reducescatter => "reducescatter",
            Op::AutoRs => "auto-rs",
            Op::RefAllgather => "ref-allgather",
            Op::RefA2a => "ref-a2a",
            Op::RefRs => "ref-rs",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Native {
    Bf16,
    Fp32,
}

impl From<Native> for zipcoll::collectives::NativePrecision {
    fn from(n: Native) -> Self {
        match n {
            Native::Bf16 => Self::Bf16,
            Native::Fp32 => Self::Fp32,
        }
    }
}

/// How ranks are bound together.
#[derive(Args, Debug, Clone)]
pub struct WorldArgs {
    #[arg(long, value_enum, default_value_t = TransportKind::Loopback)]
    pub transport: TransportKind,
    /// Number of ranks.
    #[arg(long, visible_alias = "ranks", default_value_t = 2)]
    pub world: usize,
    /// This process's rank (TCP only; loopback and sim run every rank).
    #[arg(long)]
    pub rank: Option<usize>,
    /// Rank 0's `host:port` for TCP.
    #[arg(long, env = zipcoll::transport::RENDEZVOUS_ENV)]
    pub rendezvous: Option<String>,
    /// Simulator network profile (key = value file).
    #[arg(long)]
    pub sim_profile: Option<PathBuf>,
    /// Receive timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
}

#[derive(Args, Debug)]
pub struct CollectiveArgs {
    /// Comma-separated operations.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub op: Vec<Op>,
    #[command(flatten)]
    pub world: WorldArgs,
    /// Per-rank input size, e.g. 4096, 64KiB, 16MiB. Repeatable.
    #[arg(long, value_parser = parse_bytes, required = true)]
    pub size: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// A positive σ, or `measure`.
    #[arg(long, default_value = "measure")]
    pub sigma: String,
    /// Compare every result bit-for-bit with the reference collective.
    #[arg(long)]
    pub verify: bool,
    /// Cost model for auto-rs.
    #[arg(long)]
    pub cost_profile: Option<PathBuf>,
    /// Element type of the native reduce-scatter used by auto-rs.
    #[arg(long, value_enum, default_value_t = Native::Fp32)]
    pub native: Native,
    /// Send unequal all-to-all chunks.
    #[arg(long)]
    pub uneven: bool,
    /// Repetitions per operation and size; one CSV record each.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    /// Profiling sizes (per-rank native bytes). Defaults to 64KiB, 1MiB, 16MiB, 64MiB.
    #[arg(long, value_parser = parse_bytes)]
    pub size: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// A positive σ, or `measure`.
    #[arg(long, default_value = "1")]
    pub sigma: String,
    #[arg(long, value_enum, default_value_t = Native::Fp32)]
    pub native: Native,
    /// Profile file to write.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// CSV report from `zipcoll collective`.
    pub input: PathBuf,
    /// Output; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Byte count with an optional unit: B, KiB, MiB, GiB (1024-based) or
/// KB, MB, GB (1000-based).
pub fn parse_bytes(s: &str) -> Result<usize, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: usize = num.parse().map_err(|_| format!("bad size {s:?}"))?;
    let mult: usize = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" => 1 << 10,
        "m" | "mib" => 1 << 20,
        "g" | "gib" => 1 << 30,
        "kb" => 1_000,
        "mb" => 1_000_000,
        "gb" => 1_000_000_000,
        other => return Err(format!("unknown size unit {other:?} in {s:?}")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}

pub fn parse_sigma(s: &str) -> anyhow::Result<zipcoll::collectives::SigmaPolicy> {
    use zipcoll::collectives::SigmaPolicy;
    if s.eq_ignore_ascii_case("measure") {
        return Ok(SigmaPolicy::Measure);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| anyhow::anyhow!("--sigma takes a positive number or `measure`, got {s:?}"))?;
    anyhow::ensure!(v.is_finite() && v > 0.0, "--sigma must be positive and finite, got {v}");
    Ok(SigmaPolicy::Fixed(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_units() {
        assert_eq!(parse_bytes("4096"), Ok(4096));
        assert_eq!(parse_bytes("64KiB"), Ok(65536));
        assert_eq!(parse_bytes("16MiB"), Ok(16 << 20));
        assert_eq!(parse_bytes("1GiB"), Ok(1 << 30));
        assert_eq!(parse_bytes("2kb"), Ok(2000));
        assert!(parse_bytes("MiB").is_err());
        assert!(parse_bytes("3 parsecs").is_err());
    }

    #[test]
    fn sigma_flag() {
        use zipcoll::collectives::SigmaPolicy;
        assert_eq!(parse_sigma("measure").unwrap(), SigmaPolicy::Measure);
        assert_eq!(parse_sigma("0.5").unwrap(), SigmaPolicy::Fixed(0.5));
        assert!(parse_sigma("-1").is_err());
        assert!(parse_sigma("wide").is_err());
    }

    #[test]
    fn op_names_match_value_enum() {
        for op in Op::value_variants() {
            assert_eq!(op.to_possible_value().unwrap().get_name(), op.name());
        }
    }
}
