//! Lossless BF16 codec: 3-bit exponent codes with a zero-point escape.
//!
//! Each element is split into a sign-mantissa byte and its biased exponent.
//! Exponents named by the codebook become codes 1..=7; all others become
//! code 0 and their raw byte is appended to the zero-point list. The three
//! code bits are stored as separate bit planes, and a per-group exclusive
//! prefix sum of zero-point counts lets any group be decoded on its own.

pub mod codebook;

use crate::bf16;
use crate::container;
pub use codebook::{
    derive_codebook, measure_sigma, optimal_base_exponent, window_coverage, ExponentCodebook,
    CODEBOOK_LEN, OPTIMAL_BASE_OFFSET, OPTIMAL_U,
};

/// Default number of elements per group-index entry.
pub const GROUP_SIZE: usize = 512;
pub const DEFAULT_GROUP_SIZE_LOG2: u8 = 9;
/// Largest accepted `log2(group size)`.
pub const MAX_GROUP_SIZE_LOG2: u8 = 30;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("corrupt chunk: {field}: {detail}")]
    CorruptChunk { field: &'static str, detail: String },
}

fn corrupt(field: &'static str, detail: impl Into<String>) -> CodecError {
    CodecError::CorruptChunk {
        field,
        detail: detail.into(),
    }
}

/// A compressed buffer. Everything but `zero_exponents` has a size fixed
/// by `element_count` and the group size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedChunk {
    pub element_count: usize,
    pub group_size_log2: u8,
    pub codebook: ExponentCodebook,
    /// `(sign << 7) | mantissa`, one byte per element.
    pub sign_mantissa: Vec<u8>,
    /// Plane `b` holds bit `b` of each code; element `j` sits at byte
    /// `j / 8`, bit `j % 8`.
    pub exp_planes: [Vec<u8>; 3],
    /// Zero-points preceding each group.
    pub group_index: Vec<u32>,
    pub zero_count: usize,
    /// Raw biased exponents of escaped elements, in element order.
    pub zero_exponents: Vec<u8>,
}

impl CompressedChunk {
    pub fn group_size(&self) -> usize {
        1usize << self.group_size_log2
    }

    pub fn group_count(&self) -> usize {
        self.element_count.div_ceil(self.group_size())
    }

    #[inline]
    fn code(&self, j: usize) -> u8 {
        let byte = j / 8;
        let bit = j % 8;
        ((self.exp_planes[0][byte] >> bit) & 1)
            | (((self.exp_planes[1][byte] >> bit) & 1) << 1)
            | (((self.exp_planes[2][byte] >> bit) & 1) << 2)
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<(), CodecError> {
        let n = self.element_count;
        if n == 0 {
            return Err(corrupt("element_count", "zero elements"));
        }
        if self.group_size_log2 > MAX_GROUP_SIZE_LOG2 {
            return Err(corrupt("group_size_log2", format!("{} too large", self.group_size_log2)));
        }
        ExponentCodebook::new(*self.codebook.entries())
            .map_err(|e| corrupt("codebook", e.to_string()))?;
        if self.sign_mantissa.len() != n {
            return Err(corrupt(
                "sign_mantissa",
                format!("{} bytes for {n} elements", self.sign_mantissa.len()),
            ));
        }
        let plane_len = n.div_ceil(8);
        for (b, plane) in self.exp_planes.iter().enumerate() {
            if plane.len() != plane_len {
                return Err(corrupt(
                    PLANE_FIELDS[b],
                    format!("{} bytes, expected {plane_len}", plane.len()),
                ));
            }
            if !n.is_multiple_of(8) && plane[plane_len - 1] >> (n % 8) != 0 {
                return Err(corrupt(PLANE_FIELDS[b], "bits set past the last element"));
            }
        }
        if self.zero_count > n {
            return Err(corrupt("zero_count", format!("{} exceeds {n}", self.zero_count)));
        }
        if self.zero_exponents.len() != self.zero_count {
            return Err(corrupt(
                "zero_exponents",
                format!("{} bytes for zero_count {}", self.zero_exponents.len(), self.zero_count),
            ));
        }
        if let Some(&e) = self.zero_exponents.iter().find(|&&e| self.codebook.contains(e)) {
            return Err(corrupt(
                "zero_exponents",
                format!("escaped exponent {e} is a codebook entry"),
            ));
        }
        let groups = self.group_count();
        if self.group_index.len() != groups {
            return Err(corrupt(
                "group_index",
                format!("{} entries, expected {groups}", self.group_index.len()),
            ));
        }
        let g = self.group_size();
        let mut running = 0u64;
        for (gi, &entry) in self.group_index.iter().enumerate() {
            if entry as u64 != running {
                return Err(corrupt(
                    "group_index",
                    format!("entry {gi} is {entry}, codes imply {running}"),
                ));
            }
            let end = ((gi + 1) * g).min(n);
            running += (gi * g..end).filter(|&j| self.code(j) == 0).count() as u64;
        }
        if running != self.zero_count as u64 {
            return Err(corrupt(
                "zero_count",
                format!("declared {} but codes contain {running}", self.zero_count),
            ));
        }
        Ok(())
    }

    /// Byte length of the static (data-independent) part once framed.
    pub fn static_len(&self) -> usize {
        container::static_size(self.element_count, self.group_size_log2)
    }
}

const PLANE_FIELDS: [&str; 3] = ["plane0", "plane1", "plane2"];

/// Compress with the default group size.
pub fn compress(data: &[u16], codebook: &ExponentCodebook) -> Result<CompressedChunk, CodecError> {
    compress_with_group(data, codebook, DEFAULT_GROUP_SIZE_LOG2)
}

pub fn compress_with_group(
    data: &[u16],
    codebook: &ExponentCodebook,
    group_size_log2: u8,
) -> Result<CompressedChunk, CodecError> {
    if data.is_empty() {
        return Err(CodecError::InvalidArgument("cannot compress an empty buffer".into()));
    }
    if group_size_log2 > MAX_GROUP_SIZE_LOG2 {
        return Err(CodecError::InvalidArgument(format!(
            "group size 2^{group_size_log2} too large"
        )));
    }
    let n = data.len();
    let group_size = 1usize << group_size_log2;
    let table = codebook.encode_table();

    let mut sign_mantissa = Vec::with_capacity(n);
    let plane_len = n.div_ceil(8);
    let mut planes = [vec![0u8; plane_len], vec![0u8; plane_len], vec![0u8; plane_len]];
    let mut group_index = Vec::with_capacity(n.div_ceil(group_size));
    let mut zero_exponents = Vec::new();

    for (j, &w) in data.iter().enumerate() {
        if j % group_size == 0 {
            let zeros = u32::try_from(zero_exponents.len()).map_err(|_| {
                CodecError::InvalidArgument("zero-point count exceeds u32 index range".into())
            })?;
            group_index.push(zeros);
        }
        sign_mantissa.push(bf16::sign_mantissa(w));
        let exp = bf16::exponent(w);
        let code = table[exp as usize];
        if code == 0 {
            zero_exponents.push(exp);
        } else {
            let (byte, bit) = (j / 8, j % 8);
            for (b, plane) in planes.iter_mut().enumerate() {
                plane[byte] |= ((code >> b) & 1) << bit;
            }
        }
    }

    Ok(CompressedChunk {
        element_count: n,
        group_size_log2,
        codebook: *codebook,
        sign_mantissa,
        exp_planes: planes,
        group_index,
        zero_count: zero_exponents.len(),
        zero_exponents,
    })
}

/// Full decode. The chunk is validated first.
pub fn decompress(chunk: &CompressedChunk) -> Result<Vec<u16>, CodecError> {
    chunk.validate()?;
    let decode = chunk.codebook.decode_table();
    let mut out = Vec::with_capacity(chunk.element_count);
    let mut next_zero = 0usize;
    for j in 0..chunk.element_count {
        let code = chunk.code(j);
        let exp = if code == 0 {
            let e = chunk.zero_exponents[next_zero];
            next_zero += 1;
            e
        } else {
            decode[code as usize]
        };
        out.push(bf16::assemble(chunk.sign_mantissa[j], exp));
    }
    Ok(out)
}

/// Decode one group using only its prefix-index entry.
pub fn decompress_group(chunk: &CompressedChunk, group: usize) -> Result<Vec<u16>, CodecError> {
    if group >= chunk.group_index.len() {
        return Err(corrupt(
            "group_index",
            format!("group {group} out of {} groups", chunk.group_index.len()),
        ));
    }
    let g = chunk.group_size();
    let start = group * g;
    let end = (start + g).min(chunk.element_count);
    if end > chunk.sign_mantissa.len() || end.div_ceil(8) > chunk.exp_planes.iter().map(Vec::len).min().unwrap_or(0) {
        return Err(corrupt("sign_mantissa", "truncated"));
    }
    let decode = chunk.codebook.decode_table();
    let mut next_zero = chunk.group_index[group] as usize;
    let mut out = Vec::with_capacity(end - start);
    for j in start..end {
        let code = chunk.code(j);
        let exp = if code == 0 {
            let e = *chunk
                .zero_exponents
                .get(next_zero)
                .ok_or_else(|| corrupt("zero_exponents", format!("index {next_zero} out of range")))?;
            next_zero += 1;
            e
        } else {
            decode[code as usize]
        };
        out.push(bf16::assemble(chunk.sign_mantissa[j], exp));
    }
    Ok(out)
}

/// Framed static-section size for `element_count` elements at the default
/// group size.
pub fn static_size_bytes(element_count: usize) -> Result<usize, CodecError> {
    static_size_bytes_with_group(element_count, DEFAULT_GROUP_SIZE_LOG2)
}

pub fn static_size_bytes_with_group(element_count: usize, group_size_log2: u8) -> Result<usize, CodecError> {
    if element_count == 0 {
        return Err(CodecError::InvalidArgument("element_count must be at least 1".into()));
    }
    if group_size_log2 > MAX_GROUP_SIZE_LOG2 {
        return Err(CodecError::InvalidArgument(format!(
            "group size 2^{group_size_log2} too large"
        )));
    }
    Ok(container::static_size(element_count, group_size_log2))
}
