//! Lossless compressed collectives for BF16 tensors.
//!
//! The crate is layered bottom-up:
//!
//! * [`codec`]: 3-bit exponent coding with zero-point escape, and the
//!   closed-form codebook derived from a tensor's standard deviation.
//! * [`container`]: the 128-byte aligned `.zbf16` frame with separable
//!   static and dynamic parts.
//! * [`transport`]: point-to-point messaging (in-process, TCP, and a
//!   virtual-clock simulator) wrapped in a [`transport::Communicator`].
//! * [`collectives`]: compressed All-Gather, All-to-All (two designs) and
//!   Reduce-Scatter, plus uncompressed reference collectives.
//! * [`switcher`]: α-β cost models that pick native or compressed
//!   Reduce-Scatter per call size.

pub mod bf16;
pub mod codec;
pub mod container;
pub mod transport;
pub mod collectives;
pub mod datagen;
pub mod switcher;
