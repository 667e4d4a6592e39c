//! Fixed-width integer codes.
//!
//! A code is a raw unsigned bit pattern of `width` bits. Signedness is a
//! decode-time property: the same pattern decodes as an unsigned integer or as
//! a two's complement integer depending on the [`Encoding`]. Bit index 0 is
//! always the least significant bit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widest supported code. Keeps the closest-value table at 6^8 entries.
pub const MAX_WIDTH: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    Unsigned,
    TwosComplement,
}

impl Encoding {
    pub fn name(self) -> &'static str {
        match self {
            Encoding::Unsigned => "unsigned",
            Encoding::TwosComplement => "twos-complement",
        }
    }

    pub fn is_signed(self) -> bool {
        matches!(self, Encoding::TwosComplement)
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "unsigned" | "u" => Ok(Encoding::Unsigned),
            "twos-complement" | "twos" | "signed" | "s" => Ok(Encoding::TwosComplement),
            other => Err(format!(
                "unknown encoding {other:?} (expected \"unsigned\" or \"twos-complement\")"
            )),
        }
    }
}

/// Width plus encoding: everything needed to interpret a raw pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFormat", into = "RawFormat")]
pub struct CodeFormat {
    width: u8,
    encoding: Encoding,
}

#[derive(Serialize, Deserialize)]
struct RawFormat {
    bits: u8,
    mode: Encoding,
}

impl TryFrom<RawFormat> for CodeFormat {
    type Error = Error;
    fn try_from(raw: RawFormat) -> Result<Self> {
        CodeFormat::new(raw.bits, raw.mode)
    }
}

impl From<CodeFormat> for RawFormat {
    fn from(f: CodeFormat) -> Self {
        RawFormat {
            bits: f.width,
            mode: f.encoding,
        }
    }
}

impl CodeFormat {
    pub fn new(width: u8, encoding: Encoding) -> Result<Self> {
        if width == 0 || width > MAX_WIDTH {
            return Err(Error::UnsupportedWidth(width));
        }
        Ok(CodeFormat { width, encoding })
    }

    pub fn unsigned(width: u8) -> Result<Self> {
        Self::new(width, Encoding::Unsigned)
    }

    pub fn twos_complement(width: u8) -> Result<Self> {
        Self::new(width, Encoding::TwosComplement)
    }

    #[inline]
    pub fn width(self) -> u8 {
        self.width
    }

    #[inline]
    pub fn encoding(self) -> Encoding {
        self.encoding
    }

    /// Number of distinct codes, `2^width`.
    #[inline]
    pub fn num_codes(self) -> usize {
        1usize << self.width
    }

    /// All-ones pattern of `width` bits.
    #[inline]
    pub fn mask(self) -> u8 {
        (((1u16) << self.width) - 1) as u8
    }

    #[inline]
    pub fn min_value(self) -> i32 {
        match self.encoding {
            Encoding::Unsigned => 0,
            Encoding::TwosComplement => -(1i32 << (self.width - 1)),
        }
    }

    #[inline]
    pub fn max_value(self) -> i32 {
        match self.encoding {
            Encoding::Unsigned => (1i32 << self.width) - 1,
            Encoding::TwosComplement => (1i32 << (self.width - 1)) - 1,
        }
    }

    #[inline]
    pub fn contains(self, value: i32) -> bool {
        (self.min_value()..=self.max_value()).contains(&value)
    }

    /// Decodes a raw pattern. Bits above `width` must be zero.
    #[inline]
    pub fn decode(self, bits: u8) -> i32 {
        debug_assert!(bits & !self.mask() == 0, "pattern wider than format");
        match self.encoding {
            Encoding::Unsigned => bits as i32,
            Encoding::TwosComplement => {
                let shift = 32 - self.width as u32;
                ((bits as i32) << shift) >> shift
            }
        }
    }

    pub fn encode(self, value: i32) -> Result<CodeWord> {
        if !self.contains(value) {
            return Err(Error::OutOfRange {
                value: value as i64,
                width: self.width,
                encoding: self.encoding.name(),
                min: self.min_value(),
                max: self.max_value(),
            });
        }
        Ok(CodeWord {
            bits: (value as u32 & self.mask() as u32) as u8,
            width: self.width,
        })
    }

    /// Encodes without the range check; the caller guarantees `contains(value)`.
    #[inline]
    pub(crate) fn encode_unchecked(self, value: i32) -> u8 {
        debug_assert!(self.contains(value));
        (value as u32 & self.mask() as u32) as u8
    }

    /// Nearest representable value.
    #[inline]
    pub fn clamp(self, value: i32) -> i32 {
        value.clamp(self.min_value(), self.max_value())
    }

    /// Decoded value of every pattern, indexed by pattern.
    pub fn decode_table(self) -> Vec<i32> {
        (0..self.num_codes()).map(|c| self.decode(c as u8)).collect()
    }
}

impl fmt::Display for CodeFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-bit {}", self.width, self.encoding)
    }
}

/// An n-bit stored pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CodeWord {
    bits: u8,
    width: u8,
}

impl CodeWord {
    pub fn new(bits: u8, width: u8) -> Result<Self> {
        if width == 0 || width > MAX_WIDTH {
            return Err(Error::UnsupportedWidth(width));
        }
        if width < 8 && bits >> width != 0 {
            return Err(Error::OutOfRange {
                value: bits as i64,
                width,
                encoding: Encoding::Unsigned.name(),
                min: 0,
                max: (1i32 << width) - 1,
            });
        }
        Ok(CodeWord { bits, width })
    }

    #[inline]
    pub fn bits(self) -> u8 {
        self.bits
    }

    #[inline]
    pub fn width(self) -> u8 {
        self.width
    }

    /// Bit `k` (LSB = 0), i.e. the cell content of bit-plane `k`.
    #[inline]
    pub fn bit(self, k: u8) -> u8 {
        debug_assert!(k < self.width);
        (self.bits >> k) & 1
    }

    #[inline]
    pub fn xor(self, flip: u8) -> CodeWord {
        debug_assert!(self.width == 8 || flip >> self.width == 0);
        CodeWord {
            bits: self.bits ^ flip,
            width: self.width,
        }
    }

    #[inline]
    pub fn decode(self, encoding: Encoding) -> i32 {
        CodeFormat {
            width: self.width,
            encoding,
        }
        .decode(self.bits)
    }
}

pub fn decode(code: CodeWord, encoding: Encoding) -> i32 {
    code.decode(encoding)
}

pub fn encode(value: i32, width: u8, encoding: Encoding) -> Result<CodeWord> {
    CodeFormat::new(width, encoding)?.encode(value)
}

pub fn clamp_to_range(value: i32, width: u8, encoding: Encoding) -> Result<i32> {
    Ok(CodeFormat::new(width, encoding)?.clamp(value))
}

pub fn bit_slice(code: CodeWord, k: u8) -> u8 {
    code.bit(k)
}

pub fn xor_mask(code: CodeWord, flip: u8) -> CodeWord {
    code.xor(flip)
}
