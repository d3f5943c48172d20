//! Choosing between native and compressed Reduce-Scatter.
//!
//! Both paths follow a linear latency/bandwidth law in the payload size
//! `d` (bytes of the native path's per-rank input):
//!
//! ```text
//! T_RS(d)  = α_RS  + β_RS  · d
//! T_A2A(d) = α_A2A + β_A2A · e · s · d
//! ```
//!
//! `e` is the compressed-to-original byte ratio of the codec, and `s` is
//! the byte width of a compressed-path element over that of a native-path
//! element (0.5 when the native collective moves FP32 and the compressed
//! one BF16). The compressed path is chosen only when it is strictly
//! faster.

use std::fmt;

use crate::collectives::{
    native_reduce_scatter, zip_reduce_scatter, CollectiveError, NativePrecision, ReduceScatterSpec, SigmaPolicy,
};
use crate::datagen::{self, Distribution};
use crate::transport::{Communicator, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum SwitcherError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("profiling failed: {0}")]
    Profiling(#[from] CollectiveError),
    #[error("cost profile line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TransportError> for SwitcherError {
    fn from(e: TransportError) -> Self {
        SwitcherError::Profiling(e.into())
    }
}

fn invalid(detail: impl Into<String>) -> SwitcherError {
    SwitcherError::InvalidArgument(detail.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    Native,
    Zipped,
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Path::Native => "native",
            Path::Zipped => "zipped",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub alpha_rs: f64,
    pub beta_rs: f64,
    pub alpha_a2a: f64,
    pub beta_a2a: f64,
    pub e: f64,
    pub s: f64,
    /// Residual RMS of the native fit, seconds.
    pub rms_rs: f64,
    /// Residual RMS of the compressed fit, seconds.
    pub rms_a2a: f64,
}

const KEYS: [&str; 8] = ["alpha_rs", "beta_rs", "alpha_a2a", "beta_a2a", "e", "s", "rms_rs", "rms_a2a"];

impl CostModel {
    pub fn new(alpha_rs: f64, beta_rs: f64, alpha_a2a: f64, beta_a2a: f64, e: f64, s: f64) -> Result<Self, SwitcherError> {
        let m = Self {
            alpha_rs,
            beta_rs,
            alpha_a2a,
            beta_a2a,
            e,
            s,
            rms_rs: 0.0,
            rms_a2a: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SwitcherError> {
        for (name, v) in [
            ("alpha_rs", self.alpha_rs),
            ("beta_rs", self.beta_rs),
            ("alpha_a2a", self.alpha_a2a),
            ("beta_a2a", self.beta_a2a),
            ("rms_rs", self.rms_rs),
            ("rms_a2a", self.rms_a2a),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.e > 0.0 && self.e <= 1.0) {
            return Err(invalid(format!("e must lie in (0, 1], got {}", self.e)));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(invalid(format!("s must be positive, got {}", self.s)));
        }
        Ok(())
    }

    /// `(T_RS(d), T_A2A(d))` in seconds.
    pub fn predict(&self, d: f64) -> Result<(f64, f64), SwitcherError> {
        if !(d >= 0.0) {
            return Err(invalid(format!("payload size must be >= 0, got {d}")));
        }
        Ok((
            self.alpha_rs + self.beta_rs * d,
            self.alpha_a2a + self.beta_a2a * self.e * self.s * d,
        ))
    }

    pub fn select(&self, d: f64) -> Result<Path, SwitcherError> {
        let (rs, a2a) = self.predict(d)?;
        Ok(if a2a < rs { Path::Zipped } else { Path::Native })
    }

    /// Effective compressed slope over native slope.
    pub fn slope_ratio(&self) -> f64 {
        self.beta_a2a * self.e * self.s / self.beta_rs
    }

    /// Size at which both predictions are equal, when the lines cross at a
    /// non-negative size.
    pub fn crossover(&self) -> Option<f64> {
        let dslope = self.beta_rs - self.beta_a2a * self.e * self.s;
        if dslope == 0.0 {
            return None;
        }
        let d = (self.alpha_a2a - self.alpha_rs) / dslope;
        (d >= 0.0 && d.is_finite()).then_some(d)
    }

    /// All four α, β multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            alpha_rs: self.alpha_rs * c,
            beta_rs: self.beta_rs * c,
            alpha_a2a: self.alpha_a2a * c,
            beta_a2a: self.beta_a2a * c,
            rms_rs: self.rms_rs * c,
            rms_a2a: self.rms_a2a * c,
            ..*self
        }
    }

    fn values(&self) -> [f64; 8] {
        [
            self.alpha_rs,
            self.beta_rs,
            self.alpha_a2a,
            self.beta_a2a,
            self.e,
            self.s,
            self.rms_rs,
            self.rms_a2a,
        ]
    }

    /// `key = value` lines. Values print in shortest round-trip form, so
    /// [`CostModel::parse`] recovers them exactly.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, SwitcherError> {
        let mut vals: [Option<f64>; 8] = [None; 8];
        for (i, raw) in text.lines().enumerate() {
            let syntax = |detail: String| SwitcherError::Syntax { line: i + 1, detail };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let idx = KEYS
                .iter()
                .position(|&key| key == k)
                .ok_or_else(|| syntax(format!("unknown key {k:?}")))?;
            let v: f64 = v.parse().map_err(|_| syntax(format!("{k}: not a number: {v:?}")))?;
            vals[idx] = Some(v);
        }
        let get = |i: usize| vals[i].ok_or_else(|| invalid(format!("cost profile lacks {}", KEYS[i])));
        let m = Self {
            alpha_rs: get(0)?,
            beta_rs: get(1)?,
            alpha_a2a: get(2)?,
            beta_a2a: get(3)?,
            e: get(4)?,
            s: get(5)?,
            rms_rs: vals[6].unwrap_or(0.0),
            rms_a2a: vals[7].unwrap_or(0.0),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SwitcherError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), SwitcherError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Least-squares line through `(x, y)` points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub rms: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit, SwitcherError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("a line fit needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("a line fit needs at least two distinct sizes"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(LineFit { intercept, slope, rms })
}

/// Settings for [`profile`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileOptions {
    pub trials: usize,
    pub precision: NativePrecision,
    pub sigma: SigmaPolicy,
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            trials: 5,
            precision: NativePrecision::Fp32,
            sigma: SigmaPolicy::Fixed(1.0),
            seed: 0,
        }
    }
}

impl ProfileOptions {
    /// Compressed-path element bytes over native-path element bytes.
    pub fn precision_scale(&self) -> f64 {
        2.0 / self.precision.element_bytes() as f64
    }
}

/// Default profiling sizes: 64 KiB, 1 MiB, 16 MiB, 64 MiB.
pub const DEFAULT_SIZES: [usize; 4] = [64 << 10, 1 << 20, 16 << 20, 64 << 20];

/// Timings for one profiled size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeTiming {
    pub bytes: usize,
    pub native: f64,
    pub zipped: f64,
}

/// Reduce-scatter input for a payload of `bytes` native bytes per rank.
pub fn profiling_spec(
    comm: &Communicator,
    bytes: usize,
    precision: NativePrecision,
    seed: u64,
) -> Result<ReduceScatterSpec, SwitcherError> {
    let world = comm.world_size();
    let shard_len = (bytes / (precision.element_bytes() * world)).max(1);
    let input = datagen::generate_stream(
        Distribution::Normal { sigma: 1.0 },
        world * shard_len,
        seed,
        comm.rank() as u64,
    )
    .map_err(|e| invalid(e.to_string()))?;
    Ok(ReduceScatterSpec::new(input, shard_len))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time both paths at each size, collectively. Every rank must call this
/// with the same arguments; every rank gets the same result.
pub fn measure(
    comm: &mut Communicator,
    sizes: &[usize],
    opts: &ProfileOptions,
) -> Result<(Vec<SizeTiming>, f64), SwitcherError> {
    if opts.trials == 0 {
        return Err(invalid("at least one trial per size is needed"));
    }
    let mut timings = Vec::with_capacity(sizes.len());
    let mut wire = 0u64;
    let mut payload = 0u64;
    for &bytes in sizes {
        let spec = profiling_spec(comm, bytes, opts.precision, opts.seed)?;
        let mut native = Vec::with_capacity(opts.trials);
        let mut zipped = Vec::with_capacity(opts.trials);
        for _ in 0..opts.trials {
            let (_, t) = comm.timed(|c| native_reduce_scatter(c, &spec, opts.precision))?;
            native.push(t);
            comm.take_stats();
            let (_, t) = comm.timed(|c| zip_reduce_scatter(c, &spec, opts.sigma))?;
            let stats = comm.take_stats();
            wire += stats.wire_bytes;
            payload += stats.payload_bytes;
            zipped.push(t);
        }
        timings.push(SizeTiming {
            bytes,
            native: median(native),
            zipped: median(zipped),
        });
    }
    let wire = comm.all_gather_u64(wire)?.into_iter().sum::<u64>();
    let payload = comm.all_gather_u64(payload)?.into_iter().sum::<u64>();
    // A single-rank world moves no bytes; the codec ratio is then unknown
    // and the compressed path cannot win on bandwidth.
    let e = if payload == 0 { 1.0 } else { (wire as f64 / payload as f64).min(1.0) };
    Ok((timings, e))
}

/// Fit a [`CostModel`] from measured timings.
pub fn fit(timings: &[SizeTiming], e: f64, s: f64) -> Result<CostModel, SwitcherError> {
    let ds: Vec<f64> = timings.iter().map(|t| t.bytes as f64).collect();
    let native = fit_line(&ds, &timings.iter().map(|t| t.native).collect::<Vec<_>>())?;
    let xs: Vec<f64> = ds.iter().map(|d| e * s * d).collect();
    let zipped = fit_line(&xs, &timings.iter().map(|t| t.zipped).collect::<Vec<_>>())?;
    let mut m = CostModel::new(
        native.intercept.max(0.0),
        native.slope.max(0.0),
        zipped.intercept.max(0.0),
        zipped.slope.max(0.0),
        e,
        s,
    )?;
    m.rms_rs = native.rms;
    m.rms_a2a = zipped.rms;
    Ok(m)
}

/// Profile both paths and fit a cost model.
pub fn profile(comm: &mut Communicator, sizes: &[usize], opts: &ProfileOptions) -> Result<CostModel, SwitcherError> {
    let mut distinct = sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(invalid("profiling needs at least two distinct sizes"));
    }
    let (timings, e) = measure(comm, sizes, opts)?;
    fit(&timings, e, opts.precision_scale())
}

/// Reduce-scatter through whichever path `model` predicts is faster.
/// Both paths produce identical bits.
pub fn switched_reduce_scatter(
    comm: &mut Communicator,
    model: &CostModel,
    spec: &ReduceScatterSpec,
    precision: NativePrecision,
    sigma: SigmaPolicy,
) -> Result<(Vec<u16>, Path), SwitcherError> {
    let d = (spec.input.len() * precision.element_bytes()) as f64;
    let path = model.select(d)?;
    let out = match path {
        Path::Native => native_reduce_scatter(comm, spec, precision)?,
        Path::Zipped => zip_reduce_scatter(comm, spec, sigma)?,
    };
    Ok((out, path))
}
