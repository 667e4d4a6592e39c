//! Fault-aware weight mapping.
//!
//! Every scheme maps a layer's target codes against a [`SafMask`] and yields a
//! [`MappedLayout`]: what is physically programmed plus the per-chunk digital
//! correction masks.
//!
//! - `Naive` writes the target and lets stuck cells override it.
//! - `Cvm` picks, per weight, the legal code whose decoded value is closest to
//!   the target (smallest pattern on ties).
//! - `SignFlip` maps both `t` and `-t`, then per (chunk, column) keeps the
//!   negated copy only when its summed error is strictly lower. The crossbar
//!   negates those column outputs after shift-and-add.
//! - `BitFlip` searches every slice-flip mask `j` per (chunk, column). Flipped
//!   slices are corrected as `sum(I) - partial`, so the code that reaches the
//!   dot product is `stored ^ j` and sees SA0/SA1 swapped on flipped slices.
//!   The search therefore runs CVM against the swapped pattern, scores the
//!   resulting effective codes against the targets, keeps the smallest `j`
//!   among the minima and stores `effective ^ j`.
//!
//! Errors are always measured on decoded values.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{FaultPattern, SafMask};
use crate::lut::CvmLut;
use crate::numfmt::{CodeFormat, CodeWord, Encoding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Naive,
    Cvm,
    SignFlip,
    BitFlip,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Naive, Scheme::Cvm, Scheme::SignFlip, Scheme::BitFlip];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Naive => "naive",
            Scheme::Cvm => "cvm",
            Scheme::SignFlip => "signflip",
            Scheme::BitFlip => "bitflip",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Scheme::Naive),
            "cvm" => Ok(Scheme::Cvm),
            "signflip" | "sign-flip" => Ok(Scheme::SignFlip),
            "bitflip" | "bit-flip" => Ok(Scheme::BitFlip),
            other => Err(format!(
                "unknown scheme {other:?} (expected naive, cvm, signflip or bitflip)"
            )),
        }
    }
}

/// Target codes of one layer, row-major `rows x cols`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerWeights {
    rows: usize,
    cols: usize,
    format: CodeFormat,
    codes: Vec<u8>,
}

impl LayerWeights {
    pub fn from_values(rows: usize, cols: usize, format: CodeFormat, values: &[i32]) -> Result<Self> {
        check_dims(rows, cols, values.len())?;
        let codes = values
            .iter()
            .map(|&v| format.encode(v).map(CodeWord::bits))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerWeights {
            rows,
            cols,
            format,
            codes,
        })
    }

    pub fn from_codes(rows: usize, cols: usize, format: CodeFormat, codes: Vec<u8>) -> Result<Self> {
        check_dims(rows, cols, codes.len())?;
        if let Some(&bad) = codes.iter().find(|&&c| c & !format.mask() != 0) {
            return Err(Error::OutOfRange {
                value: bad as i64,
                width: format.width(),
                encoding: Encoding::Unsigned.name(),
                min: 0,
                max: format.mask() as i32,
            });
        }
        Ok(LayerWeights {
            rows,
            cols,
            format,
            codes,
        })
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
    pub fn format(&self) -> CodeFormat {
        self.format
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    #[inline]
    pub fn code(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.cols + col]
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> i32 {
        self.format.decode(self.code(row, col))
    }

    pub fn values(&self) -> Vec<i32> {
        self.codes.iter().map(|&c| self.format.decode(c)).collect()
    }

    fn check_mask(&self, mask: &SafMask) -> Result<()> {
        mask.check_shape(self.rows, self.cols, self.format.width())
    }
}

fn check_dims(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch(format!(
            "empty weight matrix ({rows}x{cols})"
        )));
    }
    if rows * cols != len {
        return Err(Error::DimensionMismatch(format!(
            "{len} weights for a {rows}x{cols} matrix"
        )));
    }
    Ok(())
}

/// Row blocks mapped onto one physical sub-array each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkGeometry {
    pub row_len: usize,
    pub num_chunks: usize,
    pub last_chunk_rows: usize,
}

impl ChunkGeometry {
    pub fn new(rows: usize, row_len: usize) -> Result<Self> {
        if row_len == 0 {
            return Err(Error::InvalidConfig("row_len must be at least 1".into()));
        }
        if rows == 0 {
            return Err(Error::DimensionMismatch("no rows to chunk".into()));
        }
        let num_chunks = rows.div_ceil(row_len);
        Ok(ChunkGeometry {
            row_len,
            num_chunks,
            last_chunk_rows: rows - row_len * (num_chunks - 1),
        })
    }

    pub fn rows_of(&self, chunk: usize) -> std::ops::Range<usize> {
        let start = chunk * self.row_len;
        let len = if chunk + 1 == self.num_chunks {
            self.last_chunk_rows
        } else {
            self.row_len
        };
        start..start + len
    }

    #[inline]
    pub fn chunk_of(&self, row: usize) -> usize {
        row / self.row_len
    }
}

/// Programmed codes of one layer plus per-chunk correction state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappedLayout {
    scheme: Scheme,
    format: CodeFormat,
    rows: usize,
    cols: usize,
    geometry: ChunkGeometry,
    stored: Vec<u8>,
    /// `num_chunks x cols`, sign-flip polarity.
    col_flip: Vec<bool>,
    /// `num_chunks x cols`, bit-flip mask `j` (bit `b` = slice `b` complemented).
    flip_masks: Vec<u8>,
}

impl MappedLayout {
    /// Assembles a layout from its parts, checking the scheme invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        scheme: Scheme,
        format: CodeFormat,
        rows: usize,
        cols: usize,
        row_len: usize,
        stored: Vec<u8>,
        col_flip: Vec<bool>,
        flip_masks: Vec<u8>,
    ) -> Result<Self> {
        check_dims(rows, cols, stored.len())?;
        let geometry = ChunkGeometry::new(rows, row_len)?;
        let per_chunk = geometry.num_chunks * cols;
        if col_flip.len() != per_chunk || flip_masks.len() != per_chunk {
            return Err(Error::DimensionMismatch(format!(
                "flip masks must have {per_chunk} entries (got col_flip {}, b_flip {})",
                col_flip.len(),
                flip_masks.len()
            )));
        }
        if stored.iter().chain(&flip_masks).any(|&c| c & !format.mask() != 0) {
            return Err(Error::InvalidConfig(format!(
                "stored code or flip mask wider than {} bits",
                format.width()
            )));
        }
        let any_col = col_flip.iter().any(|&f| f);
        let any_bit = flip_masks.iter().any(|&j| j != 0);
        let ok = match scheme {
            Scheme::Naive | Scheme::Cvm => !any_col && !any_bit,
            Scheme::SignFlip => !any_bit && format.encoding().is_signed(),
            Scheme::BitFlip => !any_col,
        };
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "flip masks inconsistent with scheme {scheme} ({format})"
            )));
        }
        Ok(MappedLayout {
            scheme,
            format,
            rows,
            cols,
            geometry,
            stored,
            col_flip,
            flip_masks,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn format(&self) -> CodeFormat {
        self.format
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_len(&self) -> usize {
        self.geometry.row_len
    }

    pub fn geometry(&self) -> ChunkGeometry {
        self.geometry
    }

    pub fn stored(&self) -> &[u8] {
        &self.stored
    }

    #[inline]
    pub fn stored_code(&self, row: usize, col: usize) -> u8 {
        self.stored[row * self.cols + col]
    }

    #[inline]
    pub fn col_flip(&self, chunk: usize, col: usize) -> bool {
        self.col_flip[chunk * self.cols + col]
    }

    /// `b_flip[bit, chunk, col]`.
    #[inline]
    pub fn b_flip(&self, bit: u8, chunk: usize, col: usize) -> bool {
        (self.flip_mask(chunk, col) >> bit) & 1 == 1
    }

    /// Assembled slice-flip mask of one (chunk, column).
    #[inline]
    pub fn flip_mask(&self, chunk: usize, col: usize) -> u8 {
        self.flip_masks[chunk * self.cols + col]
    }

    pub fn col_flip_flat(&self) -> Vec<u8> {
        self.col_flip.iter().map(|&f| f as u8).collect()
    }

    /// `b_flip` flattened bit-major, then chunk, then column.
    pub fn b_flip_flat(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.format.width() as usize * self.flip_masks.len());
        for b in 0..self.format.width() {
            out.extend(self.flip_masks.iter().map(|&j| (j >> b) & 1));
        }
        out
    }

    /// Signed weight that actually multiplies the activation after all
    /// digital corrections. For sign-flipped columns this may be `+2^(n-1)`.
    #[inline]
    pub fn effective_value(&self, row: usize, col: usize) -> i32 {
        let chunk = self.geometry.chunk_of(row);
        let stored = self.stored_code(row, col);
        match self.scheme {
            Scheme::Naive | Scheme::Cvm => self.format.decode(stored),
            Scheme::SignFlip => {
                let v = self.format.decode(stored);
                if self.col_flip(chunk, col) {
                    -v
                } else {
                    v
                }
            }
            Scheme::BitFlip => self.format.decode(stored ^ self.flip_mask(chunk, col)),
        }
    }

    /// Effective code; a sign-flipped `-(-2^(n-1))` saturates to the maximum.
    pub fn effective_code(&self, row: usize, col: usize) -> CodeWord {
        let v = self.format.clamp(self.effective_value(row, col));
        self.format.encode(v).expect("clamped value is representable")
    }

    /// Row-major effective values.
    pub fn effective_values(&self) -> Vec<i32> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.effective_value(r, c))
            .collect()
    }

    /// Whether every programmed code is writable under `mask`.
    pub fn is_legal_under(&self, mask: &SafMask) -> bool {
        mask.check_shape(self.rows, self.cols, self.format.width()).is_ok()
            && self
                .stored
                .iter()
                .zip(mask.patterns())
                .all(|(&c, p)| p.is_legal(c))
    }

    pub fn to_file(&self) -> MappedLayoutFile {
        MappedLayoutFile {
            scheme: self.scheme,
            bits: self.format.width(),
            mode: self.format.encoding(),
            row_len: self.geometry.row_len,
            rows: self.rows,
            cols: self.cols,
            stored: self.stored.clone(),
            col_flip: self.col_flip_flat(),
            b_flip: self.b_flip_flat(),
            provenance: None,
        }
    }
}

/// JSON form of a [`MappedLayout`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MappedLayoutFile {
    pub scheme: Scheme,
    pub bits: u8,
    pub mode: Encoding,
    pub row_len: usize,
    pub rows: usize,
    pub cols: usize,
    pub stored: Vec<u8>,
    pub col_flip: Vec<u8>,
    pub b_flip: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl TryFrom<MappedLayoutFile> for MappedLayout {
    type Error = Error;

    fn try_from(f: MappedLayoutFile) -> Result<Self> {
        let format = CodeFormat::new(f.bits, f.mode)?;
        let geometry = ChunkGeometry::new(f.rows, f.row_len)?;
        let per_chunk = geometry.num_chunks * f.cols;
        if f.b_flip.len() != per_chunk * f.bits as usize {
            return Err(Error::DimensionMismatch(format!(
                "b_flip has {} entries, expected {}",
                f.b_flip.len(),
                per_chunk * f.bits as usize
            )));
        }
        if f.col_flip.iter().chain(&f.b_flip).any(|&v| v > 1) {
            return Err(Error::InvalidConfig("flip masks must be 0/1".into()));
        }
        let mut flip_masks = vec![0u8; per_chunk];
        for (i, &bit) in f.b_flip.iter().enumerate() {
            flip_masks[i % per_chunk] |= bit << (i / per_chunk);
        }
        let col_flip = f.col_flip.iter().map(|&v| v == 1).collect();
        MappedLayout::from_parts(
            f.scheme, format, f.rows, f.cols, f.row_len, f.stored, col_flip, flip_masks,
        )
    }
}

/// How the closest-value search is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum CvmEngine<'a> {
    /// Enumerate all `2^n` candidates per query.
    Direct,
    /// Table lookup; the table must match the layer format.
    Lut(&'a CvmLut),
}

impl CvmEngine<'_> {
    pub fn check(&self, format: CodeFormat) -> Result<()> {
        match self {
            CvmEngine::Direct => Ok(()),
            CvmEngine::Lut(lut) if lut.format() == format => Ok(()),
            CvmEngine::Lut(lut) => Err(Error::InvalidConfig(format!(
                "LUT built for {}, layer is {format}",
                lut.format()
            ))),
        }
    }

    #[inline]
    pub fn closest(&self, target: i32, pattern: FaultPattern, format: CodeFormat) -> u8 {
        match self {
            CvmEngine::Direct => closest_legal(target, pattern, format),
            CvmEngine::Lut(lut) => lut.lookup(target, pattern),
        }
    }
}

/// Closest legal code to `target` by exhaustive enumeration.
///
/// `target` may lie outside the representable range (e.g. a negated
/// `-2^(n-1)`); distance is measured to the true value. Ties go to the
/// smallest pattern.
#[inline]
pub fn closest_legal(target: i32, pattern: FaultPattern, format: CodeFormat) -> u8 {
    // Beyond the range the distance is monotone in the candidate, so pulling
    // the target to one step outside keeps the arg-min and bounds the error.
    let target = target.clamp(format.min_value() - 1, format.max_value() + 1);
    let shift = 32 - format.width() as u32;
    let signed = format.encoding().is_signed();
    let (sa1, sa0) = (pattern.sa1() as u32, pattern.sa0() as u32);
    let mut best = u32::MAX;
    // Branch-free so the loop vectorizes. Key = error << 8 | candidate, so the
    // minimum key is the minimum error with the smallest pattern on ties.
    for c in 0..format.num_codes() as u32 {
        let value = if signed {
            ((c << shift) as i32) >> shift
        } else {
            c as i32
        };
        let err = value.wrapping_sub(target).unsigned_abs();
        let legal = (c & sa0) == 0 && (c & sa1) == sa1;
        let key = if legal { (err << 8) | c } else { u32::MAX };
        best = best.min(key);
    }
    debug_assert!(best != u32::MAX, "forced write is always legal");
    (best & 0xff) as u8
}

pub fn naive_map(weights: &LayerWeights, mask: &SafMask, row_len: usize) -> Result<MappedLayout> {
    weights.check_mask(mask)?;
    let stored = weights
        .codes
        .iter()
        .zip(mask.patterns())
        .map(|(&c, p)| p.force_write(c))
        .collect();
    uncorrected_layout(Scheme::Naive, weights, row_len, stored)
}

pub fn cvm_map(
    weights: &LayerWeights,
    mask: &SafMask,
    row_len: usize,
    engine: CvmEngine<'_>,
) -> Result<MappedLayout> {
    weights.check_mask(mask)?;
    engine.check(weights.format)?;
    let format = weights.format;
    let stored = weights
        .codes
        .par_iter()
        .zip(mask.patterns().par_iter())
        .map(|(&c, &p)| engine.closest(format.decode(c), p, format))
        .collect();
    uncorrected_layout(Scheme::Cvm, weights, row_len, stored)
}

fn uncorrected_layout(
    scheme: Scheme,
    weights: &LayerWeights,
    row_len: usize,
    stored: Vec<u8>,
) -> Result<MappedLayout> {
    let geometry = ChunkGeometry::new(weights.rows, row_len)?;
    let per_chunk = geometry.num_chunks * weights.cols;
    MappedLayout::from_parts(
        scheme,
        weights.format,
        weights.rows,
        weights.cols,
        row_len,
        stored,
        vec![false; per_chunk],
        vec![0; per_chunk],
    )
}

/// One column's mapping result: stored codes down the column and one
/// correction value per chunk.
struct ColumnMapping<T> {
    stored: Vec<u8>,
    per_chunk: Vec<T>,
}

fn map_columns<T, F>(cols: usize, map_column: F) -> Vec<ColumnMapping<T>>
where
    T: Send,
    F: Fn(usize) -> ColumnMapping<T> + Sync + Send,
{
    (0..cols).into_par_iter().map(map_column).collect()
}

fn scatter<T: Copy>(
    cols: usize,
    rows: usize,
    num_chunks: usize,
    columns: Vec<ColumnMapping<T>>,
    fill: T,
) -> (Vec<u8>, Vec<T>) {
    let mut stored = vec![0u8; rows * cols];
    let mut per_chunk = vec![fill; num_chunks * cols];
    for (k, col) in columns.into_iter().enumerate() {
        for (r, &code) in col.stored.iter().enumerate() {
            stored[r * cols + k] = code;
        }
        for (c, &v) in col.per_chunk.iter().enumerate() {
            per_chunk[c * cols + k] = v;
        }
    }
    (stored, per_chunk)
}

pub fn sign_flip_map(
    weights: &LayerWeights,
    mask: &SafMask,
    row_len: usize,
    engine: CvmEngine<'_>,
) -> Result<MappedLayout> {
    weights.check_mask(mask)?;
    engine.check(weights.format)?;
    let format = weights.format;
    if !format.encoding().is_signed() {
        return Err(Error::UnsignedLayer);
    }
    let geometry = ChunkGeometry::new(weights.rows, row_len)?;
    let decoded = format.decode_table();

    let columns = map_columns(weights.cols, |k| {
        let mut stored = vec![0u8; weights.rows];
        let mut flips = Vec::with_capacity(geometry.num_chunks);
        for c in 0..geometry.num_chunks {
            let rows = geometry.rows_of(c);
            let mut plus = Vec::with_capacity(rows.len());
            let mut minus = Vec::with_capacity(rows.len());
            let (mut e_plus, mut e_minus) = (0u64, 0u64);
            for r in rows.clone() {
                let t = weights.value(r, k);
                let p = mask.pattern(r, k);
                let wp = engine.closest(t, p, format);
                let wm = engine.closest(-t, p, format);
                e_plus += (decoded[wp as usize] - t).unsigned_abs() as u64;
                e_minus += (decoded[wm as usize] + t).unsigned_abs() as u64;
                plus.push(wp);
                minus.push(wm);
            }
            let flip = e_minus < e_plus;
            let chosen = if flip { minus } else { plus };
            stored[rows].copy_from_slice(&chosen);
            flips.push(flip);
        }
        ColumnMapping {
            stored,
            per_chunk: flips,
        }
    });

    let (stored, col_flip) = scatter(weights.cols, weights.rows, geometry.num_chunks, columns, false);
    let flip_masks = vec![0; col_flip.len()];
    MappedLayout::from_parts(
        Scheme::SignFlip,
        format,
        weights.rows,
        weights.cols,
        row_len,
        stored,
        col_flip,
        flip_masks,
    )
}

pub fn bit_flip_map(
    weights: &LayerWeights,
    mask: &SafMask,
    row_len: usize,
    engine: CvmEngine<'_>,
) -> Result<MappedLayout> {
    weights.check_mask(mask)?;
    engine.check(weights.format)?;
    match engine {
        CvmEngine::Direct => bit_flip_with(weights, mask, row_len, |t, p| {
            closest_legal(t, p, weights.format)
        }),
        CvmEngine::Lut(lut) => bit_flip_with(weights, mask, row_len, |t, p| lut.lookup(t, p)),
    }
}

fn bit_flip_with<F>(
    weights: &LayerWeights,
    mask: &SafMask,
    row_len: usize,
    closest: F,
) -> Result<MappedLayout>
where
    F: Fn(i32, FaultPattern) -> u8 + Sync + Send,
{
    let format = weights.format;
    let geometry = ChunkGeometry::new(weights.rows, row_len)?;
    let decoded = format.decode_table();
    let num_masks = format.num_codes();

    let columns = map_columns(weights.cols, |k| {
        let mut stored = vec![0u8; weights.rows];
        let mut chosen = Vec::with_capacity(geometry.num_chunks);
        let mut errors = vec![0u64; num_masks];
        for c in 0..geometry.num_chunks {
            let rows = geometry.rows_of(c);
            errors.iter_mut().for_each(|e| *e = 0);
            for r in rows.clone() {
                let t = weights.value(r, k);
                let p = mask.pattern(r, k);
                for (j, err) in errors.iter_mut().enumerate() {
                    let effective = closest(t, p.flipped(j as u8));
                    *err += (decoded[effective as usize] - t).unsigned_abs() as u64;
                }
            }
            // First minimum: the smallest j wins ties, so j = 0 (plain CVM)
            // is kept unless some flip is strictly better.
            let (best, _) = errors
                .iter()
                .enumerate()
                .fold((0usize, u64::MAX), |acc, (j, &e)| if e < acc.1 { (j, e) } else { acc });
            let j = best as u8;
            for r in rows {
                let t = weights.value(r, k);
                let p = mask.pattern(r, k);
                stored[r] = closest(t, p.flipped(j)) ^ j;
            }
            chosen.push(j);
        }
        ColumnMapping {
            stored,
            per_chunk: chosen,
        }
    });

    let (stored, flip_masks) = scatter(weights.cols, weights.rows, geometry.num_chunks, columns, 0u8);
    let col_flip = vec![false; flip_masks.len()];
    MappedLayout::from_parts(
        Scheme::BitFlip,
        format,
        weights.rows,
        weights.cols,
        row_len,
        stored,
        col_flip,
        flip_masks,
    )
}

/// Maps a layer under any scheme.
pub fn map_layer(
    scheme: Scheme,
    weights: &LayerWeights,
    mask: &SafMask,
    row_len: usize,
    engine: CvmEngine<'_>,
) -> Result<MappedLayout> {
    match scheme {
        Scheme::Naive => naive_map(weights, mask, row_len),
        Scheme::Cvm => cvm_map(weights, mask, row_len, engine),
        Scheme::SignFlip => sign_flip_map(weights, mask, row_len, engine),
        Scheme::BitFlip => bit_flip_map(weights, mask, row_len, engine),
    }
}

/// Absolute decoded error of effective weights against targets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MappingError {
    pub per_column: Vec<u64>,
    pub total: u64,
}

pub fn mapping_error(layout: &MappedLayout, weights: &LayerWeights) -> Result<MappingError> {
    if (layout.rows, layout.cols, layout.format) != (weights.rows, weights.cols, weights.format) {
        return Err(Error::DimensionMismatch(format!(
            "layout {}x{} ({}) vs weights {}x{} ({})",
            layout.rows, layout.cols, layout.format, weights.rows, weights.cols, weights.format
        )));
    }
    let mut per_column = vec![0u64; layout.cols];
    for r in 0..layout.rows {
        for (k, acc) in per_column.iter_mut().enumerate() {
            *acc += (layout.effective_value(r, k) - weights.value(r, k)).unsigned_abs() as u64;
        }
    }
    let total = per_column.iter().sum();
    Ok(MappingError { per_column, total })
}

/// Unmasked faults against the pattern each scheme *intends* to program
/// before the closest-value search: the target for naive/CVM, `-t` for
/// sign-flipped columns and `t ^ j` for bit-flipped ones.
pub fn intended_unmasked_faults(
    layout: &MappedLayout,
    weights: &LayerWeights,
    mask: &SafMask,
) -> Result<usize> {
    mask.check_shape(layout.rows, layout.cols, layout.format.width())?;
    let format = layout.format;
    let mut count = 0usize;
    for r in 0..layout.rows {
        let chunk = layout.geometry.chunk_of(r);
        for k in 0..layout.cols {
            let t = weights.code(r, k);
            let intended = match layout.scheme {
                Scheme::Naive | Scheme::Cvm => t,
                Scheme::SignFlip if layout.col_flip(chunk, k) => {
                    format.encode_unchecked(format.clamp(-format.decode(t)))
                }
                Scheme::SignFlip => t,
                Scheme::BitFlip => t ^ layout.flip_mask(chunk, k),
            };
            count += mask.pattern(r, k).conflicts(intended) as usize;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::{CellFault, FaultInjectionSpec, gen_saf_mask};

    fn fmt(width: u8, enc: Encoding) -> CodeFormat {
        CodeFormat::new(width, enc).unwrap()
    }

    fn single(value: i32, format: CodeFormat, pattern: FaultPattern) -> (LayerWeights, SafMask) {
        let w = LayerWeights::from_values(1, 1, format, &[value]).unwrap();
        let m = SafMask::from_patterns(1, 1, format.width(), vec![pattern]).unwrap();
        (w, m)
    }

    fn column(values: &[i32], format: CodeFormat, patterns: Vec<FaultPattern>) -> (LayerWeights, SafMask) {
        let w = LayerWeights::from_values(values.len(), 1, format, values).unwrap();
        let m = SafMask::from_patterns(values.len(), 1, format.width(), patterns).unwrap();
        (w, m)
    }

    /// Independent brute force: scan legal codes in pattern order.
    fn oracle_cvm(target: i32, p: FaultPattern, format: CodeFormat) -> u8 {
        let mut best: Option<(u32, u8)> = None;
        for c in 0..format.num_codes() {
            let c = c as u8;
            if !crate::faults::is_legal(c, p) {
                continue;
            }
            let err = (format.decode(c) as i64 - target as i64).unsigned_abs() as u32;
            if best.is_none_or(|(e, _)| err < e) {
                best = Some((err, c));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn cvm_reproduces_closest_value_example() {
        let f = fmt(4, Encoding::Unsigned);
        let (w, m) = single(7, f, FaultPattern::sa0_at(2));
        let cvm = cvm_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert_eq!(cvm.stored(), &[0b1000]);
        assert_eq!(mapping_error(&cvm, &w).unwrap().total, 1);
        let naive = naive_map(&w, &m, 64).unwrap();
        assert_eq!(naive.stored(), &[0b0011]);
        assert_eq!(mapping_error(&naive, &w).unwrap().total, 4);
    }

    #[test]
    fn cvm_signed_example() {
        // -3 with the sign bit stuck at 0: best non-negative code is 0.
        let f = fmt(4, Encoding::TwosComplement);
        assert_eq!(closest_legal(-3, FaultPattern::sa0_at(3), f), 0b0000);
        assert_eq!(oracle_cvm(-3, FaultPattern::sa0_at(3), f), 0b0000);
    }

    #[test]
    fn cvm_fault_free_is_identity() {
        for enc in [Encoding::Unsigned, Encoding::TwosComplement] {
            let f = fmt(5, enc);
            for v in f.min_value()..=f.max_value() {
                assert_eq!(
                    closest_legal(v, FaultPattern::FAULT_FREE, f),
                    f.encode(v).unwrap().bits()
                );
            }
        }
    }

    #[test]
    fn cvm_tie_break_prefers_smallest_pattern() {
        // Target 0 (twos, n=4) with bit 0 stuck at 1: -1 (0b1111) and +1 (0b0001) tie.
        let f = fmt(4, Encoding::TwosComplement);
        assert_eq!(closest_legal(0, FaultPattern::sa1_at(0), f), 0b0001);
    }

    #[test]
    fn cvm_out_of_range_target_uses_true_distance() {
        // +8 at n=4 signed with the sign bit stuck at 1: best is -1 (0b1111).
        let f = fmt(4, Encoding::TwosComplement);
        assert_eq!(closest_legal(8, FaultPattern::sa1_at(3), f), 0b1111);
        assert_eq!(closest_legal(1000, FaultPattern::FAULT_FREE, f), 0b0111);
        assert_eq!(closest_legal(-1000, FaultPattern::FAULT_FREE, f), 0b1000);
    }

    #[test]
    fn cvm_matches_oracle_exhaustive_small() {
        for width in 1..=4u8 {
            for enc in [Encoding::Unsigned, Encoding::TwosComplement] {
                let f = fmt(width, enc);
                for digits in 0..3usize.pow(width as u32) {
                    let p = crate::lut::pattern_from_digits(digits, width);
                    for t in f.min_value() - 2..=f.max_value() + 2 {
                        assert_eq!(closest_legal(t, p, f), oracle_cvm(t, p, f), "{f} t={t} {p:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn sign_flip_fault_free_keeps_polarity() {
        let f = fmt(8, Encoding::TwosComplement);
        let values: Vec<i32> = (-128..128).collect();
        let w = LayerWeights::from_values(64, 4, f, &values).unwrap();
        let m = SafMask::fault_free(64, 4, 8).unwrap();
        let l = sign_flip_map(&w, &m, 16, CvmEngine::Direct).unwrap();
        assert_eq!(l.stored(), w.codes());
        assert!(l.col_flip_flat().iter().all(|&b| b == 0));
    }

    #[test]
    fn sign_flip_single_row_flips() {
        // +7 with the sign bit stuck at 1: E+ = 8 (stores -1), E- = 0 (stores -7).
        let f = fmt(4, Encoding::TwosComplement);
        let (w, m) = single(7, f, FaultPattern::sa1_at(3));
        let l = sign_flip_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert!(l.col_flip(0, 0));
        assert_eq!(l.stored(), &[0b1001]);
        assert_eq!(l.effective_value(0, 0), 7);
        assert_eq!(mapping_error(&l, &w).unwrap().total, 0);
        let cvm = cvm_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert_eq!(cvm.stored(), &[0b1111]);
        assert_eq!(mapping_error(&cvm, &w).unwrap().total, 8);
    }

    #[test]
    fn sign_flip_two_row_column() {
        let f = fmt(4, Encoding::TwosComplement);
        let (w, m) = column(&[7, 6], f, vec![FaultPattern::sa1_at(3), FaultPattern::FAULT_FREE]);
        let l = sign_flip_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert!(l.col_flip(0, 0));
        assert_eq!(l.stored(), &[0b1001, 0b1010]);
        assert_eq!(mapping_error(&l, &w).unwrap().total, 0);
    }

    #[test]
    fn sign_flip_rejects_unsigned_layers() {
        let f = fmt(4, Encoding::Unsigned);
        let (w, m) = single(3, f, FaultPattern::FAULT_FREE);
        assert!(matches!(
            sign_flip_map(&w, &m, 64, CvmEngine::Direct),
            Err(Error::UnsignedLayer)
        ));
    }

    #[test]
    fn sign_flip_negates_most_negative_value() {
        // -8 negated is +8 (unrepresentable); with the sign bit stuck at 0 the
        // positive copy can only reach 0 (error 8) while -(+7) gives error 1.
        let f = fmt(4, Encoding::TwosComplement);
        let (w, m) = single(-8, f, FaultPattern::sa0_at(3));
        let l = sign_flip_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert!(l.col_flip(0, 0));
        assert_eq!(l.stored(), &[0b0111]);
        assert_eq!(l.effective_value(0, 0), -7);
        assert_eq!(mapping_error(&l, &w).unwrap().total, 1);
    }

    #[test]
    fn effective_code_examples() {
        let f = fmt(4, Encoding::TwosComplement);
        let (w, m) = single(7, f, FaultPattern::sa1_at(3));
        let l = sign_flip_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert_eq!(l.effective_code(0, 0).bits(), 0b0111);

        let naive = naive_map(&w, &m, 64).unwrap();
        assert_eq!(naive.effective_code(0, 0).bits(), naive.stored()[0]);

        let bf = MappedLayout::from_parts(
            Scheme::BitFlip,
            fmt(4, Encoding::Unsigned),
            1,
            1,
            64,
            vec![0b1000],
            vec![false],
            vec![0b1000],
        )
        .unwrap();
        assert_eq!(bf.effective_code(0, 0).bits(), 0);
    }

    #[test]
    fn bit_flip_examples() {
        let f = fmt(4, Encoding::Unsigned);
        let (w, m) = single(0, f, FaultPattern::sa1_at(3));
        let l = bit_flip_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert_eq!(l.flip_mask(0, 0), 0b1000);
        assert_eq!(l.stored(), &[0b1000]);
        assert_eq!(l.effective_code(0, 0).bits(), 0);
        assert_eq!(mapping_error(&l, &w).unwrap().total, 0);
        let cvm = cvm_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert_eq!(mapping_error(&cvm, &w).unwrap().total, 8);

        let p = FaultPattern::from_cells(&[CellFault::Sa0, CellFault::Sa1]).unwrap();
        let (w, m) = single(5, f, p);
        let l = bit_flip_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert_eq!(l.flip_mask(0, 0), 0b0011);
        assert_eq!(l.stored(), &[0b0110]);
        assert_eq!(l.effective_code(0, 0).bits(), 0b0101);
        assert_eq!(mapping_error(&l, &w).unwrap().total, 0);
        assert_eq!(l.b_flip_flat(), vec![1, 1, 0, 0]);
    }

    #[test]
    fn bit_flip_fault_free_is_identity() {
        let f = fmt(6, Encoding::TwosComplement);
        let values: Vec<i32> = (0..60).map(|i| (i % 64) - 32).collect();
        let w = LayerWeights::from_values(20, 3, f, &values).unwrap();
        let m = SafMask::fault_free(20, 3, 6).unwrap();
        let l = bit_flip_map(&w, &m, 8, CvmEngine::Direct).unwrap();
        assert_eq!(l.stored(), w.codes());
        assert!(l.b_flip_flat().iter().all(|&b| b == 0));
    }

    #[test]
    fn short_last_chunk() {
        let g = ChunkGeometry::new(10, 4).unwrap();
        assert_eq!((g.num_chunks, g.last_chunk_rows), (3, 2));
        assert_eq!(g.rows_of(2), 8..10);
        let g = ChunkGeometry::new(8, 4).unwrap();
        assert_eq!((g.num_chunks, g.last_chunk_rows), (2, 4));
        assert!(ChunkGeometry::new(8, 0).is_err());
    }

    #[test]
    fn mapping_rejects_mismatched_mask() {
        let f = fmt(4, Encoding::TwosComplement);
        let w = LayerWeights::from_values(2, 2, f, &[0, 1, 2, 3]).unwrap();
        let m = SafMask::fault_free(2, 3, 4).unwrap();
        for s in Scheme::ALL {
            assert!(matches!(
                map_layer(s, &w, &m, 64, CvmEngine::Direct),
                Err(Error::DimensionMismatch(_))
            ));
        }
    }

    #[test]
    fn layouts_are_legal_and_dominate_randomized() {
        let f = fmt(8, Encoding::TwosComplement);
        for trial in 0..6u64 {
            let values: Vec<i32> = (0..96 * 5)
                .map(|i| ((i as i64 * 37 + trial as i64 * 11) % 256 - 128) as i32)
                .collect();
            let w = LayerWeights::from_values(96, 5, f, &values).unwrap();
            let m = gen_saf_mask(&FaultInjectionSpec::new(0.1, 3, trial), 96, 5, 8).unwrap();
            let layouts: Vec<_> = Scheme::ALL
                .iter()
                .map(|&s| map_layer(s, &w, &m, 32, CvmEngine::Direct).unwrap())
                .collect();
            for l in &layouts {
                assert!(l.is_legal_under(&m), "{}", l.scheme());
            }
            let errs: Vec<_> = layouts.iter().map(|l| mapping_error(l, &w).unwrap()).collect();
            for k in 0..5 {
                assert!(errs[1].per_column[k] <= errs[0].per_column[k]);
                assert!(errs[2].per_column[k] <= errs[1].per_column[k]);
                assert!(errs[3].per_column[k] <= errs[1].per_column[k]);
            }
        }
    }

    #[test]
    fn file_round_trip_preserves_layout() {
        let f = fmt(4, Encoding::TwosComplement);
        let values: Vec<i32> = (0..30).map(|i| (i % 16) - 8).collect();
        let w = LayerWeights::from_values(10, 3, f, &values).unwrap();
        let m = gen_saf_mask(&FaultInjectionSpec::new(0.3, 1, 0), 10, 3, 4).unwrap();
        for s in Scheme::ALL {
            let l = map_layer(s, &w, &m, 4, CvmEngine::Direct).unwrap();
            let json = serde_json::to_string(&l.to_file()).unwrap();
            let back: MappedLayoutFile = serde_json::from_str(&json).unwrap();
            assert_eq!(MappedLayout::try_from(back).unwrap(), l);
        }
    }

    #[test]
    fn from_parts_rejects_inconsistent_masks() {
        let f = fmt(4, Encoding::TwosComplement);
        let r = MappedLayout::from_parts(Scheme::Cvm, f, 1, 1, 4, vec![0], vec![true], vec![0]);
        assert!(r.is_err());
        let r = MappedLayout::from_parts(Scheme::SignFlip, f, 1, 1, 4, vec![0], vec![false], vec![1]);
        assert!(r.is_err());
        let u = fmt(4, Encoding::Unsigned);
        let r = MappedLayout::from_parts(Scheme::SignFlip, u, 1, 1, 4, vec![0], vec![true], vec![0]);
        assert!(r.is_err());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("bit-flip".parse::<Scheme>().unwrap(), Scheme::BitFlip);
        assert_eq!("SignFlip".parse::<Scheme>().unwrap(), Scheme::SignFlip);
        assert!("flip".parse::<Scheme>().is_err());
    }
}
