//! Precomputed closest-value table.
//!
//! One entry per (target code, per-bit fault pattern) pair, `2^n * 3^n = 6^n`
//! entries in total. Key layout:
//!
//! ```text
//! index = target_code * 3^n + sum_k digit_k * 3^k
//! digit_k: 0 = fault-free, 1 = SA1, 2 = SA0   (k = 0 is the LSB)
//! ```
//!
//! File format (little-endian, bit-exact):
//!
//! ```text
//! "CVML" | version 0x01 | mode (0 unsigned, 1 twos-complement) | width n | 6^n entry bytes
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::faults::{CellFault, FaultPattern};
use crate::mapping::closest_legal;
use crate::numfmt::{CodeFormat, Encoding};

pub const MAGIC: &[u8; 4] = b"CVML";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 7;

/// `TERNARY[m] = sum of 3^k over the set bits k of m`.
static TERNARY: [u16; 256] = ternary_table();

const fn ternary_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut m = 0;
    while m < 256 {
        let mut acc = 0u16;
        let mut pow = 1u16;
        let mut k = 0;
        while k < 8 {
            if (m >> k) & 1 == 1 {
                acc += pow;
            }
            pow *= 3;
            k += 1;
        }
        table[m] = acc;
        m += 1;
    }
    table
}

/// Base-3 fault digits of a pattern.
#[inline]
pub fn fault_digits(pattern: FaultPattern) -> usize {
    TERNARY[pattern.sa1() as usize] as usize + 2 * TERNARY[pattern.sa0() as usize] as usize
}

/// Inverse of [`fault_digits`] for a `width`-bit pattern.
pub fn pattern_from_digits(mut digits: usize, width: u8) -> FaultPattern {
    let mut p = FaultPattern::FAULT_FREE;
    for k in 0..width {
        let cell = match digits % 3 {
            0 => CellFault::FaultFree,
            1 => CellFault::Sa1,
            _ => CellFault::Sa0,
        };
        p = p.with(k, cell);
        digits /= 3;
    }
    p
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CvmLut {
    format: CodeFormat,
    patterns_per_code: usize,
    entries: Vec<u8>,
}

/// A table entry that disagrees with direct enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LutMismatch {
    pub index: usize,
    pub target_code: u8,
    pub fault_digits: usize,
    pub expected: u8,
    pub found: u8,
}

impl std::fmt::Display for LutMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "key {} (target code {:#04x}, fault digits {}): table has {:#04x}, direct CVM gives {:#04x}",
            self.index, self.target_code, self.fault_digits, self.found, self.expected
        )
    }
}

impl CvmLut {
    pub fn build(format: CodeFormat) -> CvmLut {
        let patterns_per_code = 3usize.pow(format.width() as u32);
        let patterns: Vec<FaultPattern> = (0..patterns_per_code)
            .map(|d| pattern_from_digits(d, format.width()))
            .collect();
        let entries = (0..format.num_codes())
            .into_par_iter()
            .flat_map_iter(|code| {
                let target = format.decode(code as u8);
                patterns
                    .iter()
                    .map(move |&p| closest_legal(target, p, format))
            })
            .collect();
        CvmLut {
            format,
            patterns_per_code,
            entries,
        }
    }

    pub fn format(&self) -> CodeFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    #[inline]
    pub fn key_index(&self, target_code: u8, pattern: FaultPattern) -> usize {
        target_code as usize * self.patterns_per_code + fault_digits(pattern)
    }

    /// Mapped code for a decoded target; out-of-range targets are clamped first.
    #[inline]
    pub fn lookup(&self, target: i32, pattern: FaultPattern) -> u8 {
        let code = self.format.encode_unchecked(self.format.clamp(target));
        self.entries[self.key_index(code, pattern)]
    }

    /// Compares entries against direct enumeration: every key when
    /// `samples >= len()`, otherwise `samples` uniformly drawn keys.
    pub fn verify<R: Rng>(&self, samples: usize, rng: &mut R) -> Option<LutMismatch> {
        let check = |index: usize| {
            let code = (index / self.patterns_per_code) as u8;
            let digits = index % self.patterns_per_code;
            let p = pattern_from_digits(digits, self.format.width());
            let expected = closest_legal(self.format.decode(code), p, self.format);
            let found = self.entries[index];
            (expected != found).then_some(LutMismatch {
                index,
                target_code: code,
                fault_digits: digits,
                expected,
                found,
            })
        };
        if samples >= self.len() {
            (0..self.len()).find_map(check)
        } else {
            (0..samples).find_map(|_| check(rng.random_range(0..self.len())))
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let mode = match self.format.encoding() {
            Encoding::Unsigned => 0u8,
            Encoding::TwosComplement => 1u8,
        };
        w.write_all(&[VERSION, mode, self.format.width()])?;
        w.write_all(&self.entries)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<CvmLut> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| Error::LutFormat("truncated header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::LutFormat("bad magic".into()));
        }
        if header[4] != VERSION {
            return Err(Error::LutFormat(format!("unsupported version {}", header[4])));
        }
        let encoding = match header[5] {
            0 => Encoding::Unsigned,
            1 => Encoding::TwosComplement,
            m => return Err(Error::LutFormat(format!("unknown mode byte {m}"))),
        };
        let format = CodeFormat::new(header[6], encoding)?;
        let patterns_per_code = 3usize.pow(format.width() as u32);
        let expected = patterns_per_code * format.num_codes();
        let mut entries = Vec::with_capacity(expected);
        r.read_to_end(&mut entries)?;
        if entries.len() != expected {
            return Err(Error::LutFormat(format!(
                "expected {expected} entries, found {}",
                entries.len()
            )));
        }
        if entries.iter().any(|&e| e & !format.mask() != 0) {
            return Err(Error::LutFormat(format!("entry wider than {} bits", format.width())));
        }
        Ok(CvmLut {
            format,
            patterns_per_code,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CvmLut> {
        let file = fs::File::open(path)?;
        CvmLut::read_from(std::io::BufReader::new(file))
    }

    /// Loads the cached table at `path`, or builds and caches it. A cached
    /// table for a different format is an error.
    pub fn load_or_build(path: &Path, format: CodeFormat) -> Result<CvmLut> {
        if path.exists() {
            let lut = CvmLut::load(path)?;
            if lut.format != format {
                return Err(Error::InvalidConfig(format!(
                    "cached LUT {} is for {}, need {format}",
                    path.display(),
                    lut.format
                )));
            }
            return Ok(lut);
        }
        let lut = CvmLut::build(format);
        lut.save(path)?;
        Ok(lut)
    }

    #[cfg(test)]
    pub(crate) fn entries_mut(&mut self) -> &mut [u8] {
        &mut self.entries
    }
}
