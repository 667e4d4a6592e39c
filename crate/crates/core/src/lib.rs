//! Stuck-at-fault aware weight mapping for bit-sliced compute-in-memory crossbars.
//!
//! The crate is organised bottom-up:
//!
//! - [`numfmt`]: fixed-width integer codes, two's complement decoding, bit slices.
//! - [`faults`]: ternary stuck-at masks, seeded injection, legality and forced writes.
//! - [`lut`]: the precomputed closest-value table and its binary file format.
//! - [`mapping`]: naive, closest-value, sign-flip and bit-flip layer mappings.
//! - [`crossbar`]: bit-sliced, bit-streamed functional simulator with digital corrections.
//! - [`quant`]: symmetric per-tensor quantization.
//! - [`eval`]: toy quantized MLP, Monte Carlo sweeps, reports and the LUT benchmark.

pub mod crossbar;
pub mod error;
pub mod eval;
pub mod faults;
pub mod lut;
pub mod mapping;
pub mod numfmt;
pub mod quant;

pub use error::{Error, Result};

/// Version string embedded in every artifact this crate writes.
pub const TOOL_VERSION: &str = concat!("safmap ", env!("CARGO_PKG_VERSION"));
