//! Stuck-at fault masks.
//!
//! A [`SafMask`] holds one [`FaultPattern`] per weight: two bitsets over the
//! weight's bit slices marking stuck-at-1 and stuck-at-0 cells. The ternary
//! cell view ([`CellFault`], serialized as -1/0/+1) is what files carry.
//!
//! Injection uses ChaCha8 (`rand_chacha`): the generator is seeded with
//! `seed` through `SeedableRng::seed_from_u64` and switched to stream
//! `trial_index`. Cells are visited in (row, col, bit LSB-first) order and
//! each cell consumes two uniform `f64` draws: the first decides whether the
//! cell is faulty (`u < rate`), the second whether a faulty cell is SA1
//! (`v < sa1_fraction`). Because both draws are always taken, masks for the
//! same seed and trial are nested across rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::{CodeFormat, MAX_WIDTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum CellFault {
    /// Stuck at logic 0 (serialized -1).
    Sa0,
    #[default]
    FaultFree,
    /// Stuck at logic 1 (serialized +1).
    Sa1,
}

impl CellFault {
    pub fn to_i8(self) -> i8 {
        match self {
            CellFault::Sa0 => -1,
            CellFault::FaultFree => 0,
            CellFault::Sa1 => 1,
        }
    }

    pub fn from_i64(v: i64) -> Result<Self> {
        match v {
            -1 => Ok(CellFault::Sa0),
            0 => Ok(CellFault::FaultFree),
            1 => Ok(CellFault::Sa1),
            other => Err(Error::InvalidFaultState(other)),
        }
    }
}

/// Per-bit fault vector of one weight. Bit `k` of `sa1`/`sa0` marks slice `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FaultPattern {
    sa1: u8,
    sa0: u8,
}

impl FaultPattern {
    pub const FAULT_FREE: FaultPattern = FaultPattern { sa1: 0, sa0: 0 };

    /// Builds a pattern from the two bitsets. Overlapping bits are rejected.
    pub fn new(sa1: u8, sa0: u8) -> Result<Self> {
        if sa1 & sa0 != 0 {
            return Err(Error::InvalidConfig(format!(
                "cell marked both SA1 and SA0 (sa1={sa1:#010b}, sa0={sa0:#010b})"
            )));
        }
        Ok(FaultPattern { sa1, sa0 })
    }

    /// LSB-first cell list.
    pub fn from_cells(cells: &[CellFault]) -> Result<Self> {
        if cells.len() > MAX_WIDTH as usize {
            return Err(Error::UnsupportedWidth(cells.len() as u8));
        }
        let mut p = FaultPattern::FAULT_FREE;
        for (k, cell) in cells.iter().enumerate() {
            p = p.with(k as u8, *cell);
        }
        Ok(p)
    }

    pub fn with(self, k: u8, cell: CellFault) -> Self {
        let bit = 1u8 << k;
        let (sa1, sa0) = (self.sa1 & !bit, self.sa0 & !bit);
        match cell {
            CellFault::Sa1 => FaultPattern { sa1: sa1 | bit, sa0 },
            CellFault::Sa0 => FaultPattern { sa1, sa0: sa0 | bit },
            CellFault::FaultFree => FaultPattern { sa1, sa0 },
        }
    }

    pub fn sa1_at(k: u8) -> Self {
        FaultPattern::FAULT_FREE.with(k, CellFault::Sa1)
    }

    pub fn sa0_at(k: u8) -> Self {
        FaultPattern::FAULT_FREE.with(k, CellFault::Sa0)
    }

    #[inline]
    pub fn sa1(self) -> u8 {
        self.sa1
    }

    #[inline]
    pub fn sa0(self) -> u8 {
        self.sa0
    }

    #[inline]
    pub fn faulty(self) -> u8 {
        self.sa1 | self.sa0
    }

    pub fn cell(self, k: u8) -> CellFault {
        if (self.sa1 >> k) & 1 == 1 {
            CellFault::Sa1
        } else if (self.sa0 >> k) & 1 == 1 {
            CellFault::Sa0
        } else {
            CellFault::FaultFree
        }
    }

    pub fn is_fault_free(self) -> bool {
        self.faulty() == 0
    }

    pub fn fault_count(self) -> u32 {
        self.faulty().count_ones()
    }

    /// Whether `bits` can be programmed: every stuck cell already holds its forced value.
    #[inline]
    pub fn is_legal(self, bits: u8) -> bool {
        bits & self.sa0 == 0 && bits & self.sa1 == self.sa1
    }

    /// What a fault-oblivious write of `bits` leaves in the cells.
    #[inline]
    pub fn force_write(self, bits: u8) -> u8 {
        (bits | self.sa1) & !self.sa0
    }

    /// Number of stuck cells whose forced value conflicts with `bits`.
    #[inline]
    pub fn conflicts(self, bits: u8) -> u32 {
        ((!bits & self.sa1) | (bits & self.sa0)).count_ones()
    }

    /// Fault pattern seen by the effective (post-correction) code when the
    /// slices in `flip` are stored complemented: SA0 and SA1 swap there.
    #[inline]
    pub fn flipped(self, flip: u8) -> Self {
        FaultPattern {
            sa1: (self.sa1 & !flip) | (self.sa0 & flip),
            sa0: (self.sa0 & !flip) | (self.sa1 & flip),
        }
    }
}

pub fn is_legal(bits: u8, pattern: FaultPattern) -> bool {
    pattern.is_legal(bits)
}

pub fn force_write(bits: u8, pattern: FaultPattern) -> u8 {
    pattern.force_write(bits)
}

pub fn transform_mask_for_flip(pattern: FaultPattern, flip: u8) -> FaultPattern {
    pattern.flipped(flip)
}

/// Stuck-at mask over an `rows x cols` weight matrix of `width`-bit codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafMask {
    rows: usize,
    cols: usize,
    width: u8,
    patterns: Vec<FaultPattern>,
}

impl SafMask {
    pub fn fault_free(rows: usize, cols: usize, width: u8) -> Result<Self> {
        CodeFormat::unsigned(width)?;
        Ok(SafMask {
            rows,
            cols,
            width,
            patterns: vec![FaultPattern::FAULT_FREE; rows * cols],
        })
    }

    pub fn from_patterns(
        rows: usize,
        cols: usize,
        width: u8,
        patterns: Vec<FaultPattern>,
    ) -> Result<Self> {
        CodeFormat::unsigned(width)?;
        if patterns.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} patterns for a {rows}x{cols} mask",
                patterns.len()
            )));
        }
        let wide = if width == 8 { 0 } else { !((1u8 << width) - 1) };
        if patterns.iter().any(|p| p.faulty() & wide != 0) {
            return Err(Error::DimensionMismatch(format!(
                "fault pattern touches bits beyond width {width}"
            )));
        }
        Ok(SafMask {
            rows,
            cols,
            width,
            patterns,
        })
    }

    /// Builds a mask from the flat row-major (row, col, bit LSB-first) ternary array.
    pub fn from_flat(rows: usize, cols: usize, width: u8, data: &[i64]) -> Result<Self> {
        CodeFormat::unsigned(width)?;
        let n = width as usize;
        if data.len() != rows * cols * n {
            return Err(Error::DimensionMismatch(format!(
                "mask data has {} entries, expected {rows}*{cols}*{n} = {}",
                data.len(),
                rows * cols * n
            )));
        }
        let patterns = data
            .chunks_exact(n)
            .map(|cells| {
                let mut p = FaultPattern::FAULT_FREE;
                for (k, &v) in cells.iter().enumerate() {
                    p = p.with(k as u8, CellFault::from_i64(v)?);
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SafMask {
            rows,
            cols,
            width,
            patterns,
        })
    }

    pub fn to_flat(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.patterns.len() * self.width as usize);
        for p in &self.patterns {
            out.extend((0..self.width).map(|k| p.cell(k).to_i8()));
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn width(&self) -> u8 {
        self.width
    }

    #[inline]
    pub fn pattern(&self, row: usize, col: usize) -> FaultPattern {
        self.patterns[row * self.cols + col]
    }

    pub fn set_pattern(&mut self, row: usize, col: usize, pattern: FaultPattern) {
        self.patterns[row * self.cols + col] = pattern;
    }

    pub fn patterns(&self) -> &[FaultPattern] {
        &self.patterns
    }

    pub fn get(&self, row: usize, col: usize, bit: u8) -> CellFault {
        self.pattern(row, col).cell(bit)
    }

    pub fn num_cells(&self) -> usize {
        self.patterns.len() * self.width as usize
    }

    pub fn fault_count(&self) -> usize {
        self.patterns.iter().map(|p| p.fault_count() as usize).sum()
    }

    pub fn sa1_count(&self) -> usize {
        self.patterns.iter().map(|p| p.sa1.count_ones() as usize).sum()
    }

    pub fn check_shape(&self, rows: usize, cols: usize, width: u8) -> Result<()> {
        if (self.rows, self.cols, self.width) != (rows, cols, width) {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{}x{}, weights are {rows}x{cols}x{width}",
                self.rows, self.cols, self.width
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> SafMaskFile {
        SafMaskFile {
            rows: self.rows,
            cols: self.cols,
            bits: self.width,
            data: self.to_flat(),
            provenance: None,
        }
    }
}

/// On-disk JSON form of a [`SafMask`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SafMaskFile {
    pub rows: usize,
    pub cols: usize,
    pub bits: u8,
    pub data: Vec<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl TryFrom<SafMaskFile> for SafMask {
    type Error = Error;

    fn try_from(file: SafMaskFile) -> Result<Self> {
        let data: Vec<i64> = file.data.iter().map(|&v| v as i64).collect();
        SafMask::from_flat(file.rows, file.cols, file.bits, &data)
    }
}

/// Parameters of one random fault draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultInjectionSpec {
    pub rate: f64,
    pub sa1_fraction: f64,
    pub seed: u64,
    pub trial_index: u64,
}

impl FaultInjectionSpec {
    pub fn new(rate: f64, seed: u64, trial_index: u64) -> Self {
        FaultInjectionSpec {
            rate,
            sa1_fraction: 0.5,
            seed,
            trial_index,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("rate", self.rate)?;
        check_probability("sa1_fraction", self.sa1_fraction)
    }
}

pub(crate) fn check_probability(what: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidRate { what, value });
    }
    Ok(())
}

/// Draws an i.i.d. per-cell stuck-at mask.
pub fn gen_saf_mask(
    spec: &FaultInjectionSpec,
    rows: usize,
    cols: usize,
    width: u8,
) -> Result<SafMask> {
    spec.validate()?;
    let mut mask = SafMask::fault_free(rows, cols, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.trial_index);
    for p in mask.patterns.iter_mut() {
        for k in 0..width {
            let faulty: f64 = rng.random();
            let polarity: f64 = rng.random();
            if faulty < spec.rate {
                let bit = 1u8 << k;
                if polarity < spec.sa1_fraction {
                    p.sa1 |= bit;
                } else {
                    p.sa0 |= bit;
                }
            }
        }
    }
    Ok(mask)
}

/// SplitMix64 finalizer; derives independent seeds for sub-streams (e.g. one per layer).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Unmasked faults of a row-major code matrix under `mask`.
pub fn count_unmasked(codes: &[u8], mask: &SafMask) -> Result<usize> {
    if codes.len() != mask.patterns.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} codes against a {}x{} mask",
            codes.len(),
            mask.rows,
            mask.cols
        )));
    }
    Ok(codes
        .iter()
        .zip(&mask.patterns)
        .map(|(&c, p)| p.conflicts(c) as usize)
        .sum())
}
