//! Functional model of bit-sliced, bit-streamed in-memory matrix-vector multiply.
//!
//! Each weight column is stored as `n` one-bit planes per sub-array (chunk);
//! each activation is streamed as `m` one-bit cycles. A partial sum is the
//! number of rows where both the stored bit and the streamed bit are 1.
//! Per (chunk, column) the simulator:
//!
//! 1. computes every partial `W^(k) . a^(l)`;
//! 2. replaces partials of complemented slices with `sum(a^(l)) - partial`,
//!    where `sum(a^(l))` is shared by all columns of the chunk;
//! 3. shift-and-adds with weight `2^(k+l)`, negating the terms that carry
//!    exactly one two's complement MSB;
//! 4. negates the result for sign-flipped columns.
//!
//! Chunk outputs are summed per column. Arithmetic is exact: no ADC,
//! noise or partial wordline activation effects are modelled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{ChunkGeometry, MappedLayout};
use crate::numfmt::{CodeFormat, Encoding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    pub row_len: usize,
    #[serde(rename = "n")]
    pub weight_bits: u8,
    #[serde(rename = "m")]
    pub activation_bits: u8,
    pub weight_mode: Encoding,
    pub activation_mode: Encoding,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        CrossbarConfig {
            row_len: 64,
            weight_bits: 8,
            activation_bits: 8,
            weight_mode: Encoding::TwosComplement,
            activation_mode: Encoding::Unsigned,
        }
    }
}

impl CrossbarConfig {
    pub fn weight_format(&self) -> Result<CodeFormat> {
        CodeFormat::new(self.weight_bits, self.weight_mode)
    }

    pub fn activation_format(&self) -> Result<CodeFormat> {
        CodeFormat::new(self.activation_bits, self.activation_mode)
    }

    /// Configuration matching a layout and an activation format.
    pub fn for_layout(layout: &MappedLayout, activations: CodeFormat) -> Self {
        CrossbarConfig {
            row_len: layout.row_len(),
            weight_bits: layout.format().width(),
            activation_bits: activations.width(),
            weight_mode: layout.format().encoding(),
            activation_mode: activations.encoding(),
        }
    }
}

/// Decoded activations with their streaming format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationVector {
    format: CodeFormat,
    values: Vec<i32>,
}

impl ActivationVector {
    pub fn new(format: CodeFormat, values: Vec<i32>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|&&v| !format.contains(v)) {
            return Err(Error::OutOfRange {
                value: v as i64,
                width: format.width(),
                encoding: format.encoding().name(),
                min: format.min_value(),
                max: format.max_value(),
            });
        }
        Ok(ActivationVector { format, values })
    }

    pub fn format(&self) -> CodeFormat {
        self.format
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_file(&self) -> ActivationFile {
        ActivationFile {
            m: self.format.width(),
            mode: self.format.encoding(),
            values: self.values.clone(),
            provenance: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActivationFile {
    pub m: u8,
    pub mode: Encoding,
    pub values: Vec<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl TryFrom<ActivationFile> for ActivationVector {
    type Error = Error;

    fn try_from(f: ActivationFile) -> Result<Self> {
        ActivationVector::new(CodeFormat::new(f.m, f.mode)?, f.values)
    }
}

/// Plain integer product `y[k] = sum_r w[r][k] * a[r]` of a row-major matrix.
pub fn mvm_exact(weights: &[i32], rows: usize, cols: usize, activations: &[i32]) -> Result<Vec<i64>> {
    if weights.len() != rows * cols || activations.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "{} weights / {} activations for a {rows}x{cols} product",
            weights.len(),
            activations.len()
        )));
    }
    let mut out = vec![0i64; cols];
    for (row, &a) in weights.chunks_exact(cols).zip(activations) {
        for (y, &w) in out.iter_mut().zip(row) {
            *y += w as i64 * a as i64;
        }
    }
    Ok(out)
}

/// Replaces partials of complemented slices by `active[l] - partial`.
///
/// `partials` is `n x m` row-major (`k * m + l`); `active[l]` is the number
/// of rows driven high in stream `l`.
pub fn correct_partials(partials: &mut [i64], active: &[i64], flip_mask: u8) {
    let m = active.len();
    for (k, row) in partials.chunks_exact_mut(m).enumerate() {
        if (flip_mask >> k) & 1 == 1 {
            for (p, &a) in row.iter_mut().zip(active) {
                *p = a - *p;
            }
        }
    }
}

/// Shift-and-add of one (chunk, column) group of corrected partials.
pub fn reconstruct(partials: &[i64], cfg: &CrossbarConfig) -> i64 {
    let (n, m) = (cfg.weight_bits as usize, cfg.activation_bits as usize);
    debug_assert_eq!(partials.len(), n * m);
    let w_signed = cfg.weight_mode.is_signed();
    let a_signed = cfg.activation_mode.is_signed();
    let mut y = 0i64;
    for k in 0..n {
        let w_msb = w_signed && k == n - 1;
        for l in 0..m {
            let a_msb = a_signed && l == m - 1;
            let term = partials[k * m + l] << (k + l);
            if w_msb != a_msb {
                y -= term;
            } else {
                y += term;
            }
        }
    }
    y
}

/// A layout programmed into bit planes, ready for repeated multiplies.
#[derive(Clone, Debug)]
pub struct ProgrammedCrossbar {
    cfg: CrossbarConfig,
    activation_format: CodeFormat,
    rows: usize,
    cols: usize,
    geometry: ChunkGeometry,
    words: usize,
    /// `(chunk, col, slice)` planes of `words` u64 each, one bit per local row.
    planes: Vec<u64>,
    flip_masks: Vec<u8>,
    negate: Vec<bool>,
}

impl ProgrammedCrossbar {
    pub fn program(layout: &MappedLayout, cfg: &CrossbarConfig) -> Result<Self> {
        let weight_format = cfg.weight_format()?;
        let activation_format = cfg.activation_format()?;
        if weight_format != layout.format() || cfg.row_len != layout.row_len() {
            return Err(Error::DimensionMismatch(format!(
                "layout is {} with row_len {}, crossbar configured for {} with row_len {}",
                layout.format(),
                layout.row_len(),
                weight_format,
                cfg.row_len
            )));
        }
        let geometry = layout.geometry();
        let (rows, cols) = (layout.rows(), layout.cols());
        let n = weight_format.width() as usize;
        let words = cfg.row_len.div_ceil(64);
        let mut planes = vec![0u64; geometry.num_chunks * cols * n * words];
        let mut flip_masks = Vec::with_capacity(geometry.num_chunks * cols);
        let mut negate = Vec::with_capacity(geometry.num_chunks * cols);
        for c in 0..geometry.num_chunks {
            let start = geometry.rows_of(c).start;
            for k in 0..cols {
                let base = (c * cols + k) * n * words;
                for r in geometry.rows_of(c) {
                    let local = r - start;
                    let code = layout.stored_code(r, k);
                    for s in 0..n {
                        if (code >> s) & 1 == 1 {
                            planes[base + s * words + local / 64] |= 1u64 << (local % 64);
                        }
                    }
                }
                flip_masks.push(layout.flip_mask(c, k));
                negate.push(layout.col_flip(c, k));
            }
        }
        Ok(ProgrammedCrossbar {
            cfg: *cfg,
            activation_format,
            rows,
            cols,
            geometry,
            words,
            planes,
            flip_masks,
            negate,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.cfg
    }

    pub fn mvm(&self, activations: &ActivationVector) -> Result<Vec<i64>> {
        let order: Vec<usize> = (0..self.geometry.num_chunks).collect();
        self.mvm_with_chunk_order(activations, &order)
    }

    /// Same as [`mvm`](Self::mvm) with chunks accumulated in `order`.
    pub fn mvm_with_chunk_order(&self, activations: &ActivationVector, order: &[usize]) -> Result<Vec<i64>> {
        if activations.format() != self.activation_format {
            return Err(Error::DimensionMismatch(format!(
                "activations are {}, crossbar streams {}",
                activations.format(),
                self.activation_format
            )));
        }
        if activations.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} activations for {} crossbar rows",
                activations.len(),
                self.rows
            )));
        }
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.geometry.num_chunks).collect::<Vec<_>>() {
            return Err(Error::InvalidConfig("chunk order must be a permutation".into()));
        }

        let n = self.cfg.weight_bits as usize;
        let m = self.cfg.activation_bits as usize;
        let words = self.words;
        let act_mask = self.activation_format.mask();
        let mut out = vec![0i64; self.cols];
        let mut streams = vec![0u64; m * words];
        let mut active = vec![0i64; m];
        let mut partials = vec![0i64; n * m];

        for &c in order {
            let rows = self.geometry.rows_of(c);
            streams.iter_mut().for_each(|w| *w = 0);
            for (local, r) in rows.clone().enumerate() {
                let bits = (activations.values()[r] as u32 & act_mask as u32) as u8;
                for l in 0..m {
                    if (bits >> l) & 1 == 1 {
                        streams[l * words + local / 64] |= 1u64 << (local % 64);
                    }
                }
            }
            // Shared adder tree: one input-bit count per stream for the whole chunk.
            for (l, a) in active.iter_mut().enumerate() {
                *a = streams[l * words..(l + 1) * words]
                    .iter()
                    .map(|w| w.count_ones() as i64)
                    .sum();
            }
            #[allow(clippy::needless_range_loop)]
            for k in 0..self.cols {
                let idx = c * self.cols + k;
                let base = idx * n * words;
                for s in 0..n {
                    let plane = &self.planes[base + s * words..base + (s + 1) * words];
                    for l in 0..m {
                        let stream = &streams[l * words..(l + 1) * words];
                        partials[s * m + l] = plane
                            .iter()
                            .zip(stream)
                            .map(|(w, a)| (w & a).count_ones() as i64)
                            .sum();
                    }
                }
                correct_partials(&mut partials, &active, self.flip_masks[idx]);
                let y = reconstruct(&partials, &self.cfg);
                out[k] += if self.negate[idx] { -y } else { y };
            }
        }
        Ok(out)
    }
}

/// Programs `layout` and multiplies once.
pub fn mvm_simulate(
    layout: &MappedLayout,
    activations: &ActivationVector,
    cfg: &CrossbarConfig,
) -> Result<Vec<i64>> {
    ProgrammedCrossbar::program(layout, cfg)?.mvm(activations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::{FaultPattern, SafMask};
    use crate::mapping::{CvmEngine, LayerWeights, Scheme, cvm_map, sign_flip_map};

    fn fmt(width: u8, enc: Encoding) -> CodeFormat {
        CodeFormat::new(width, enc).unwrap()
    }

    fn cfg(row_len: usize, n: u8, wm: Encoding, m: u8, am: Encoding) -> CrossbarConfig {
        CrossbarConfig {
            row_len,
            weight_bits: n,
            activation_bits: m,
            weight_mode: wm,
            activation_mode: am,
        }
    }

    #[test]
    fn exact_examples() {
        assert_eq!(mvm_exact(&[1, 2, 3, 4], 2, 2, &[0, 0]).unwrap(), vec![0, 0]);
        // One 1 per column selects an activation.
        assert_eq!(
            mvm_exact(&[0, 1, 1, 0, 0, 0], 3, 2, &[5, 6, 7]).unwrap(),
            vec![6, 5]
        );
        assert_eq!(mvm_exact(&[-1, 1], 2, 1, &[3, 2]).unwrap(), vec![-1]);
        assert!(mvm_exact(&[1, 2], 2, 1, &[1]).is_err());
    }

    #[test]
    fn reconstruct_examples() {
        let c = cfg(4, 1, Encoding::Unsigned, 1, Encoding::Unsigned);
        assert_eq!(reconstruct(&[0], &c), 0);
        assert_eq!(reconstruct(&[5], &c), 5);
        // Weight -1 (0b11, signed) times activation 3 (0b11, unsigned).
        let c = cfg(4, 2, Encoding::TwosComplement, 2, Encoding::Unsigned);
        assert_eq!(reconstruct(&[1, 1, 1, 1], &c), 1 + 2 - 2 - 4);
        // Both signed: the MSB x MSB term is positive. -1 * -1 = 1.
        let c = cfg(4, 2, Encoding::TwosComplement, 2, Encoding::TwosComplement);
        assert_eq!(reconstruct(&[1, 1, 1, 1], &c), 1 - 2 - 2 + 4);
    }

    #[test]
    fn correction_complements_flipped_slices() {
        let mut p = vec![1, 2, 3, 4];
        correct_partials(&mut p, &[5, 6], 0b10);
        assert_eq!(p, vec![1, 2, 2, 2]);
    }

    #[test]
    fn fault_free_cvm_equals_exact() {
        let f = fmt(4, Encoding::TwosComplement);
        let values = [3, -8, 7, 0, -1, 5];
        let w = LayerWeights::from_values(3, 2, f, &values).unwrap();
        let m = SafMask::fault_free(3, 2, 4).unwrap();
        let l = cvm_map(&w, &m, 2, CvmEngine::Direct).unwrap();
        let c = cfg(2, 4, Encoding::TwosComplement, 3, Encoding::TwosComplement);
        let a = ActivationVector::new(fmt(3, Encoding::TwosComplement), vec![-4, 3, 1]).unwrap();
        assert_eq!(
            mvm_simulate(&l, &a, &c).unwrap(),
            mvm_exact(&values, 3, 2, a.values()).unwrap()
        );
    }

    #[test]
    fn sign_flipped_column_restores_polarity() {
        let f = fmt(4, Encoding::TwosComplement);
        let (w, m) = (
            LayerWeights::from_values(2, 1, f, &[7, 6]).unwrap(),
            SafMask::from_patterns(2, 1, 4, vec![FaultPattern::sa1_at(3), FaultPattern::FAULT_FREE]).unwrap(),
        );
        let l = sign_flip_map(&w, &m, 64, CvmEngine::Direct).unwrap();
        assert!(l.col_flip(0, 0));
        let c = cfg(64, 4, Encoding::TwosComplement, 4, Encoding::Unsigned);
        let a = ActivationVector::new(fmt(4, Encoding::Unsigned), vec![3, 2]).unwrap();
        assert_eq!(mvm_simulate(&l, &a, &c).unwrap(), vec![7 * 3 + 6 * 2]);
    }

    #[test]
    fn bit_flipped_slice_is_corrected() {
        let f = fmt(4, Encoding::Unsigned);
        let l = crate::mapping::MappedLayout::from_parts(
            Scheme::BitFlip,
            f,
            1,
            1,
            64,
            vec![0b1000],
            vec![false],
            vec![0b1000],
        )
        .unwrap();
        let c = cfg(64, 4, Encoding::Unsigned, 1, Encoding::Unsigned);
        let a = ActivationVector::new(fmt(1, Encoding::Unsigned), vec![1]).unwrap();
        assert_eq!(mvm_simulate(&l, &a, &c).unwrap(), vec![0]);
    }

    #[test]
    fn wide_chunks_span_multiple_words() {
        let f = fmt(3, Encoding::TwosComplement);
        let values: Vec<i32> = (0..150 * 2).map(|i| (i % 8) - 4).collect();
        let w = LayerWeights::from_values(150, 2, f, &values).unwrap();
        let m = SafMask::fault_free(150, 2, 3).unwrap();
        let l = cvm_map(&w, &m, 130, CvmEngine::Direct).unwrap();
        let af = fmt(2, Encoding::Unsigned);
        let acts: Vec<i32> = (0..150).map(|i| i % 4).collect();
        let a = ActivationVector::new(af, acts.clone()).unwrap();
        let c = CrossbarConfig::for_layout(&l, af);
        assert_eq!(
            mvm_simulate(&l, &a, &c).unwrap(),
            mvm_exact(&values, 150, 2, &acts).unwrap()
        );
    }

    #[test]
    fn rejects_mismatches() {
        let f = fmt(4, Encoding::TwosComplement);
        let w = LayerWeights::from_values(2, 1, f, &[1, 2]).unwrap();
        let l = cvm_map(&w, &SafMask::fault_free(2, 1, 4).unwrap(), 64, CvmEngine::Direct).unwrap();
        let c = cfg(64, 4, Encoding::TwosComplement, 4, Encoding::Unsigned);
        let short = ActivationVector::new(fmt(4, Encoding::Unsigned), vec![1]).unwrap();
        assert!(matches!(mvm_simulate(&l, &short, &c), Err(Error::DimensionMismatch(_))));
        let wrong_fmt = ActivationVector::new(fmt(3, Encoding::Unsigned), vec![1, 1]).unwrap();
        assert!(mvm_simulate(&l, &wrong_fmt, &c).is_err());
        let c_bad = cfg(32, 4, Encoding::TwosComplement, 4, Encoding::Unsigned);
        let ok = ActivationVector::new(fmt(4, Encoding::Unsigned), vec![1, 1]).unwrap();
        assert!(mvm_simulate(&l, &ok, &c_bad).is_err());
        assert!(ActivationVector::new(fmt(4, Encoding::Unsigned), vec![16]).is_err());
    }

    #[test]
    fn default_config_matches_evaluated_hardware() {
        let c = CrossbarConfig::default();
        assert_eq!((c.row_len, c.weight_bits, c.activation_bits), (64, 8, 8));
        let json = serde_json::to_value(c).unwrap();
        assert_eq!(json["n"], 8);
        assert_eq!(json["weight_mode"], "twos-complement");
    }
}
