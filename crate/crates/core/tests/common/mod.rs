//! Reference implementations used as test oracles. Written from the bit-level
//! definitions, sharing no arithmetic with the library.
#![allow(dead_code)]

use safmap::faults::{FaultPattern, SafMask};
use safmap::mapping::MappedLayout;
use safmap::numfmt::{CodeFormat, Encoding};

pub fn decode(bits: u8, width: u8, signed: bool) -> i64 {
    let v = bits as i64;
    if signed && v >= 1 << (width - 1) {
        v - (1 << width)
    } else {
        v
    }
}

pub fn fmt_decode(bits: u8, f: CodeFormat) -> i64 {
    decode(bits, f.width(), f.encoding() == Encoding::TwosComplement)
}

/// Per-bit check: SA1 bits read 1, SA0 bits read 0.
pub fn legal(bits: u8, sa1: u8, sa0: u8, width: u8) -> bool {
    (0..width).all(|k| {
        let b = (bits >> k) & 1;
        let s1 = (sa1 >> k) & 1 == 1;
        let s0 = (sa0 >> k) & 1 == 1;
        !(s1 && b == 0) && !(s0 && b == 1)
    })
}

/// Smallest |decode(c) - target| over legal codes c.
pub fn min_legal_error(target: i64, p: FaultPattern, f: CodeFormat) -> u64 {
    (0..(1u16 << f.width()))
        .map(|c| c as u8)
        .filter(|&c| legal(c, p.sa1(), p.sa0(), f.width()))
        .map(|c| (fmt_decode(c, f) - target).unsigned_abs())
        .min()
        .expect("some code is always legal")
}

/// All 3^n fault patterns for width n.
pub fn all_patterns(width: u8) -> Vec<FaultPattern> {
    let mut out = Vec::new();
    for idx in 0..3usize.pow(width as u32) {
        let (mut sa1, mut sa0, mut d) = (0u8, 0u8, idx);
        for k in 0..width {
            match d % 3 {
                1 => sa1 |= 1 << k,
                2 => sa0 |= 1 << k,
                _ => {}
            }
            d /= 3;
        }
        out.push(FaultPattern::new(sa1, sa0).unwrap());
    }
    out
}

/// Effective weight of every cell: stored code, xor the chunk's bit-flip
/// mask, decode, negate if the chunk column is sign-flipped.
pub fn effective(layout: &MappedLayout) -> Vec<i64> {
    let f = layout.format();
    let mut out = Vec::with_capacity(layout.rows() * layout.cols());
    for r in 0..layout.rows() {
        let chunk = r / layout.row_len();
        for k in 0..layout.cols() {
            let bits = layout.stored_code(r, k) ^ layout.flip_mask(chunk, k);
            let v = fmt_decode(bits, f);
            out.push(if layout.col_flip(chunk, k) { -v } else { v });
        }
    }
    out
}

pub fn matvec(weights: &[i64], rows: usize, cols: usize, acts: &[i64]) -> Vec<i64> {
    (0..cols)
        .map(|k| (0..rows).map(|r| weights[r * cols + k] * acts[r]).sum())
        .collect()
}

/// Per-column absolute error of effective weights against targets.
pub fn column_errors(layout: &MappedLayout, targets: &[i64]) -> Vec<u64> {
    let eff = effective(layout);
    let cols = layout.cols();
    let mut errs = vec![0u64; cols];
    for (i, (e, t)) in eff.iter().zip(targets).enumerate() {
        errs[i % cols] += (e - t).unsigned_abs();
    }
    errs
}

pub fn all_legal(layout: &MappedLayout, mask: &SafMask) -> bool {
    (0..layout.rows()).all(|r| {
        (0..layout.cols()).all(|k| {
            let p = mask.pattern(r, k);
            legal(layout.stored_code(r, k), p.sa1(), p.sa0(), layout.format().width())
        })
    })
}
