//! `.zbf16` frame format.
//!
//! All integers are little-endian. Every section starts on a 128-byte
//! boundary and the frame is zero-padded to a multiple of 128 bytes.
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `"ZCCL"`                         |
//! | 4      | 1    | version (1)                            |
//! | 5      | 1    | flags (must be 0)                      |
//! | 6      | 1    | log2(group size)                       |
//! | 7      | 1    | reserved (0)                           |
//! | 8      | 8    | element count                          |
//! | 16     | 8    | zero-point count                       |
//! | 24     | 7    | codebook entries (codes 1..=7)         |
//! | 31     | 1    | base byte (biased exponent of entry 0) |
//! | 32     | 24   | u32 offsets: sign_mantissa, plane0, plane1, plane2, group_index, zero_exponents |
//!
//! Everything before the `zero_exponents` offset is the static part; its
//! length depends only on the element count and group size.

use crate::codec::{CodecError, CompressedChunk, ExponentCodebook, CODEBOOK_LEN, MAX_GROUP_SIZE_LOG2};

pub const MAGIC: [u8; 4] = *b"ZCCL";
pub const VERSION: u8 = 1;
pub const ALIGN: usize = 128;
/// Header bytes excluding the codebook.
pub const HEADER_FIELDS_LEN: usize = 48;
pub const CODEBOOK_BYTES: usize = CODEBOOK_LEN + 1;
pub const HEADER_LEN: usize = HEADER_FIELDS_LEN + CODEBOOK_BYTES;

const SECTION_NAMES: [&str; 6] = [
    "sign_mantissa",
    "plane0",
    "plane1",
    "plane2",
    "group_index",
    "zero_exponents",
];

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown flags {0:#04x}")]
    UnknownFlags(u8),
    #[error("truncated frame at {field}: need {need} bytes, have {have}")]
    Truncated { field: &'static str, need: usize, have: usize },
    #[error("corrupt frame: {field}: {detail}")]
    Corrupt { field: &'static str, detail: String },
    #[error("unrepresentable: {0}")]
    Unrepresentable(String),
}

impl FrameError {
    /// Name of the first field found to be invalid.
    pub fn field(&self) -> &'static str {
        match self {
            FrameError::BadMagic(_) => "magic",
            FrameError::UnsupportedVersion(_) => "version",
            FrameError::UnknownFlags(_) => "flags",
            FrameError::Truncated { field, .. } | FrameError::Corrupt { field, .. } => field,
            FrameError::Unrepresentable(_) => "frame",
        }
    }
}

fn corrupt(field: &'static str, detail: impl Into<String>) -> FrameError {
    FrameError::Corrupt {
        field,
        detail: detail.into(),
    }
}

#[inline]
fn pad(len: usize) -> usize {
    len.div_ceil(ALIGN) * ALIGN
}

/// Canonical section offsets for a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Start of each section, in header order.
    pub offsets: [usize; 6],
    /// Unpadded length of each section.
    pub lengths: [usize; 6],
}

impl Layout {
    pub fn new(element_count: usize, group_size_log2: u8, zero_count: usize) -> Self {
        let plane = element_count.div_ceil(8);
        let groups = element_count.div_ceil(1usize << group_size_log2);
        let lengths = [element_count, plane, plane, plane, 4 * groups, zero_count];
        let mut offsets = [0usize; 6];
        let mut at = pad(HEADER_LEN);
        for (o, &len) in offsets.iter_mut().zip(&lengths) {
            *o = at;
            at += pad(len);
        }
        Self { offsets, lengths }
    }

    /// Length of the static part (header through group index, padded).
    pub fn static_len(&self) -> usize {
        self.offsets[5]
    }

    pub fn frame_len(&self) -> usize {
        self.offsets[5] + pad(self.lengths[5])
    }

    /// Static bytes before alignment padding.
    pub fn unpadded_static_len(&self) -> usize {
        HEADER_LEN + self.lengths[..5].iter().sum::<usize>()
    }
}

/// Static part length for `element_count` elements.
pub fn static_size(element_count: usize, group_size_log2: u8) -> usize {
    Layout::new(element_count, group_size_log2, 0).static_len()
}

/// Decoded header fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub group_size_log2: u8,
    pub element_count: usize,
    pub zero_count: usize,
    pub codebook: ExponentCodebook,
    pub layout: Layout,
}

pub fn serialize(chunk: &CompressedChunk) -> Result<Vec<u8>, FrameError> {
    chunk.validate().map_err(chunk_error)?;
    let layout = Layout::new(chunk.element_count, chunk.group_size_log2, chunk.zero_count);
    let total = layout.frame_len();
    if total > u32::MAX as usize {
        return Err(FrameError::Unrepresentable(format!(
            "frame of {total} bytes exceeds u32 offsets"
        )));
    }

    let mut out = vec![0u8; total];
    out[0..4].copy_from_slice(&MAGIC);
    out[4] = VERSION;
    out[5] = 0;
    out[6] = chunk.group_size_log2;
    out[7] = 0;
    out[8..16].copy_from_slice(&(chunk.element_count as u64).to_le_bytes());
    out[16..24].copy_from_slice(&(chunk.zero_count as u64).to_le_bytes());
    out[24..31].copy_from_slice(chunk.codebook.entries());
    out[31] = chunk.codebook.entries()[0];
    for (i, &off) in layout.offsets.iter().enumerate() {
        out[32 + 4 * i..36 + 4 * i].copy_from_slice(&(off as u32).to_le_bytes());
    }

    let o = layout.offsets;
    out[o[0]..o[0] + chunk.element_count].copy_from_slice(&chunk.sign_mantissa);
    for b in 0..3 {
        let plane = &chunk.exp_planes[b];
        out[o[1 + b]..o[1 + b] + plane.len()].copy_from_slice(plane);
    }
    for (i, &entry) in chunk.group_index.iter().enumerate() {
        let at = o[4] + 4 * i;
        out[at..at + 4].copy_from_slice(&entry.to_le_bytes());
    }
    out[o[5]..o[5] + chunk.zero_count].copy_from_slice(&chunk.zero_exponents);
    Ok(out)
}

fn chunk_error(e: CodecError) -> FrameError {
    match e {
        CodecError::CorruptChunk { field, detail } => FrameError::Corrupt { field, detail },
        other => corrupt("chunk", other.to_string()),
    }
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Validate the header and the section table. Section contents are not
/// inspected. `bytes` must hold exactly one frame.
pub fn read_header(bytes: &[u8]) -> Result<FrameHeader, FrameError> {
    let header = read_header_prefix(bytes)?;
    let want = header.layout.frame_len();
    if bytes.len() != want {
        return Err(if bytes.len() < want {
            FrameError::Truncated {
                field: "frame",
                need: want,
                have: bytes.len(),
            }
        } else {
            corrupt("frame", format!("{} trailing bytes", bytes.len() - want))
        });
    }
    Ok(header)
}

/// Like [`read_header`] but tolerates bytes after the frame, for
/// concatenated streams.
fn read_header_prefix(bytes: &[u8]) -> Result<FrameHeader, FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::Truncated {
            field: "magic",
            need: 4,
            have: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            field: "header",
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(FrameError::UnsupportedVersion(bytes[4]));
    }
    if bytes[5] != 0 {
        return Err(FrameError::UnknownFlags(bytes[5]));
    }
    let group_size_log2 = bytes[6];
    if group_size_log2 > MAX_GROUP_SIZE_LOG2 {
        return Err(corrupt("group_size_log2", format!("{group_size_log2} too large")));
    }
    if bytes[7] != 0 {
        return Err(corrupt("reserved", format!("{:#04x}", bytes[7])));
    }
    let element_count = u64_at(bytes, 8);
    if element_count == 0 {
        return Err(corrupt("element_count", "zero elements"));
    }
    // Any count that fits a real frame fits u32 offsets; larger is corrupt.
    if element_count > u32::MAX as u64 {
        return Err(corrupt("element_count", format!("{element_count} too large")));
    }
    let element_count = element_count as usize;
    let zero_count = u64_at(bytes, 16);
    if zero_count > element_count as u64 {
        return Err(corrupt(
            "zero_count",
            format!("{zero_count} exceeds element count {element_count}"),
        ));
    }
    let zero_count = zero_count as usize;
    let entries: [u8; CODEBOOK_LEN] = bytes[24..31].try_into().unwrap();
    let codebook = ExponentCodebook::new(entries).map_err(|e| corrupt("codebook", e.to_string()))?;
    if bytes[31] != entries[0] {
        return Err(corrupt(
            "codebook_base",
            format!("base byte {} disagrees with first entry {}", bytes[31], entries[0]),
        ));
    }

    let layout = Layout::new(element_count, group_size_log2, zero_count);
    let mut prev_end = HEADER_LEN;
    for i in 0..6 {
        let field = SECTION_NAMES[i];
        let off = u32_at(bytes, 32 + 4 * i) as usize;
        if !off.is_multiple_of(ALIGN) {
            return Err(corrupt(field, format!("offset {off} not {ALIGN}-byte aligned")));
        }
        if off < prev_end {
            return Err(corrupt(field, format!("offset {off} overlaps previous section ending at {prev_end}")));
        }
        let end = off + layout.lengths[i];
        if end > bytes.len() {
            return Err(FrameError::Truncated {
                field,
                need: end,
                have: bytes.len(),
            });
        }
        if off != layout.offsets[i] {
            return Err(corrupt(
                field,
                format!("offset {off}, canonical layout puts it at {}", layout.offsets[i]),
            ));
        }
        prev_end = end;
    }
    let want = layout.frame_len();
    if bytes.len() < want {
        return Err(FrameError::Truncated {
            field: "padding",
            need: want,
            have: bytes.len(),
        });
    }
    Ok(FrameHeader {
        group_size_log2,
        element_count,
        zero_count,
        codebook,
        layout,
    })
}

pub fn parse(bytes: &[u8]) -> Result<CompressedChunk, FrameError> {
    let h = read_header(bytes)?;
    let o = h.layout.offsets;
    let l = h.layout.lengths;

    // Gaps between sections must be zero so that parse/serialize is a bijection.
    let mut at = HEADER_LEN;
    for i in 0..=6 {
        let (start, name) = if i < 6 {
            (o[i], SECTION_NAMES[i])
        } else {
            (bytes.len(), "padding")
        };
        if bytes[at..start].iter().any(|&b| b != 0) {
            return Err(corrupt(name, "non-zero padding before section"));
        }
        if i < 6 {
            at = o[i] + l[i];
        }
    }

    let section = |i: usize| bytes[o[i]..o[i] + l[i]].to_vec();
    let group_index = bytes[o[4]..o[4] + l[4]]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let chunk = CompressedChunk {
        element_count: h.element_count,
        group_size_log2: h.group_size_log2,
        codebook: h.codebook,
        sign_mantissa: section(0),
        exp_planes: [section(1), section(2), section(3)],
        group_index,
        zero_count: h.zero_count,
        zero_exponents: section(5),
    };
    chunk.validate().map_err(chunk_error)?;
    Ok(chunk)
}

/// Frame split into its static and dynamic spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StaticDynamicSplit<'a> {
    pub static_bytes: &'a [u8],
    pub dynamic_bytes: &'a [u8],
}

impl StaticDynamicSplit<'_> {
    pub fn recombine(&self) -> Vec<u8> {
        recombine(self.static_bytes, self.dynamic_bytes)
    }
}

pub fn split_static_dynamic(frame: &[u8]) -> Result<StaticDynamicSplit<'_>, FrameError> {
    let h = read_header(frame)?;
    let (s, d) = frame.split_at(h.layout.static_len());
    Ok(StaticDynamicSplit {
        static_bytes: s,
        dynamic_bytes: d,
    })
}

pub fn recombine(static_bytes: &[u8], dynamic_bytes: &[u8]) -> Vec<u8> {
    let mut frame = Vec::with_capacity(static_bytes.len() + dynamic_bytes.len());
    frame.extend_from_slice(static_bytes);
    frame.extend_from_slice(dynamic_bytes);
    frame
}

/// Parse back-to-back frames.
pub fn parse_concatenated(mut bytes: &[u8]) -> Result<Vec<CompressedChunk>, FrameError> {
    let mut chunks = Vec::new();
    while !bytes.is_empty() {
        let len = read_header_prefix(bytes)?.layout.frame_len();
        chunks.push(parse(&bytes[..len])?);
        bytes = &bytes[len..];
    }
    Ok(chunks)
}
