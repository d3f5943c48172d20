//! Golden frames and malformed-frame handling.
//!
//! Set `ZIPCOLL_BLESS=1` to regenerate the fixtures after an intentional
//! format change.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zipcoll::codec::{compress_with_group, decompress, derive_codebook, ExponentCodebook};
use zipcoll::container::{parse, serialize, FrameError};
use zipcoll::datagen::{generate, read_bf16, write_bf16, Distribution};

struct Fixture {
    name: &'static str,
    input: fn() -> Vec<u16>,
    codebook: fn() -> ExponentCodebook,
    group_size_log2: u8,
}

fn fixtures() -> [Fixture; 2] {
    [
        Fixture {
            name: "normal_4096",
            input: || generate(Distribution::Normal { sigma: 1.0 }, 4096, 2024).unwrap(),
            codebook: || derive_codebook(1.0).unwrap(),
            group_size_log2: 9,
        },
        Fixture {
            name: "specials_1000",
            input: || {
                (0..1000u32)
                    .map(|i| match i % 5 {
                        0 => 0x7FC1,
                        1 => (i % 0x80) as u16,
                        2 => 0x8000,
                        3 => 0x3F80 | (i % 0x80) as u16,
                        _ => 0xC2F7,
                    })
                    .collect()
            },
            codebook: || ExponentCodebook::contiguous(-3),
            group_size_log2: 4,
        },
    ]
}

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn golden_frames_are_byte_identical() {
    let bless = std::env::var_os("ZIPCOLL_BLESS").is_some();
    for f in fixtures() {
        let input = (f.input)();
        let frame = serialize(&compress_with_group(&input, &(f.codebook)(), f.group_size_log2).unwrap()).unwrap();
        let bf16_path = fixture_path(&format!("{}.bf16", f.name));
        let frame_path = fixture_path(&format!("{}.zbf16", f.name));
        if bless {
            write_bf16(&bf16_path, &input).unwrap();
            std::fs::write(&frame_path, &frame).unwrap();
        }
        assert_eq!(read_bf16(&bf16_path).unwrap(), input, "{}: generator drifted", f.name);
        let golden = std::fs::read(&frame_path).unwrap();
        assert!(golden == frame, "{}: frame bytes changed", f.name);
        assert_eq!(decompress(&parse(&golden).unwrap()).unwrap(), input);
    }
}

#[test]
fn golden_header_bytes() {
    let golden = std::fs::read(fixture_path("normal_4096.zbf16")).unwrap();
    let header: [u8; 32] = golden[..32].try_into().unwrap();
    #[rustfmt::skip]
    let expect_prefix: [u8; 24] = [
        b'Z', b'C', b'C', b'L', 1, 0, 9, 0,
        0x00, 0x10, 0, 0, 0, 0, 0, 0,
        0, 0, 0, 0, 0, 0, 0, 0,
    ];
    assert_eq!(&header[..8], &expect_prefix[..8]);
    assert_eq!(&header[8..16], &expect_prefix[8..16]);
    // σ = 1 puts the window at exponents 122..=128, base byte 122.
    assert_eq!(&header[24..32], &[122, 123, 124, 125, 126, 127, 128, 122]);
    let offsets: Vec<u32> = golden[32..56]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(offsets, vec![128, 4224, 4736, 5248, 5760, 5888]);
    assert!(golden[56..128].iter().all(|&b| b == 0));
}

fn check_structured(bytes: &[u8]) -> Result<(), FrameError> {
    let r = std::panic::catch_unwind(|| parse(bytes));
    match r {
        Ok(Ok(chunk)) => {
            // An accepted frame must be canonical.
            assert_eq!(serialize(&chunk).unwrap(), bytes);
            Ok(())
        }
        Ok(Err(e)) => {
            assert!(!e.field().is_empty());
            assert!(!e.to_string().is_empty());
            Err(e)
        }
        Err(_) => panic!("parse panicked"),
    }
}

#[test]
fn every_truncation_is_an_error() {
    for f in fixtures() {
        let golden = std::fs::read(fixture_path(&format!("{}.zbf16", f.name))).unwrap();
        for len in 0..golden.len() {
            assert!(check_structured(&golden[..len]).is_err(), "{} truncated to {len}", f.name);
        }
        let mut longer = golden.clone();
        longer.push(0);
        assert!(check_structured(&longer).is_err());
    }
}

#[test]
fn every_single_bit_flip_is_handled() {
    let golden = std::fs::read(fixture_path("specials_1000.zbf16")).unwrap();
    let chunk = parse(&golden).unwrap();
    let offsets: Vec<usize> = golden[32..56]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    // Payload bytes can change into another valid frame: sign/mantissa,
    // code planes (between two non-escape codes), escaped exponents, and
    // codebook entries after the first, which the base byte duplicates.
    // Header fields, offsets, group index and padding cannot.
    let planes = offsets[1]..offsets[3] + chunk.element_count.div_ceil(8);
    let free = |byte: usize| {
        (offsets[0]..offsets[0] + chunk.element_count).contains(&byte)
            || planes.contains(&byte)
            || (25..31).contains(&byte)
            || (offsets[5]..offsets[5] + chunk.zero_count).contains(&byte)
    };
    let mut accepted_sign_mantissa = 0;
    for byte in 0..golden.len() {
        for bit in 0..8 {
            let mut bad = golden.clone();
            bad[byte] ^= 1 << bit;
            if check_structured(&bad).is_ok() {
                assert!(free(byte), "flip at byte {byte} bit {bit} accepted");
                if byte >= offsets[0] && byte < offsets[0] + chunk.element_count {
                    accepted_sign_mantissa += 1;
                }
            }
        }
    }
    assert_eq!(accepted_sign_mantissa, 8 * chunk.element_count);
}

#[test]
fn random_multi_byte_corruption_never_panics() {
    let golden = std::fs::read(fixture_path("normal_4096.zbf16")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20_000 {
        let mut bad = golden.clone();
        for _ in 0..rng.random_range(1..8) {
            let at = rng.random_range(0..bad.len());
            bad[at] = rng.random();
        }
        if rng.random_bool(0.3) {
            let cut = rng.random_range(0..bad.len());
            bad.truncate(cut);
        }
        let _ = check_structured(&bad);
    }
    for _ in 0..2_000 {
        let len = rng.random_range(0..600);
        let mut junk: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        if junk.len() >= 4 {
            junk[..4].copy_from_slice(b"ZCCL");
        }
        let _ = check_structured(&junk);
    }
}
