//! Wall-clock comparison of direct and table-driven closest-value search.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::faults::{FaultInjectionSpec, SafMask, derive_seed, gen_saf_mask};
use crate::lut::CvmLut;
use crate::mapping::{CvmEngine, LayerWeights, MappedLayout, Scheme, map_layer};
use crate::numfmt::CodeFormat;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub scheme: Scheme,
    pub direct_seconds: f64,
    pub lut_seconds: f64,
    /// `direct_seconds / lut_seconds`.
    pub speedup: f64,
}

/// Uniformly random codes and an injected mask for benchmarking.
pub fn random_layer(
    rows: usize,
    cols: usize,
    format: CodeFormat,
    rate: f64,
    seed: u64,
) -> Result<(LayerWeights, SafMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7765));
    let codes = (0..rows * cols)
        .map(|_| rng.random_range(0..format.num_codes()) as u8)
        .collect();
    let weights = LayerWeights::from_codes(rows, cols, format, codes)?;
    let mask = gen_saf_mask(&FaultInjectionSpec::new(rate, seed, 0), rows, cols, format.width())?;
    Ok((weights, mask))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn timed(
    scheme: Scheme,
    weights: &LayerWeights,
    mask: &SafMask,
    row_len: usize,
    engine: CvmEngine<'_>,
    repeats: usize,
) -> Result<(f64, MappedLayout)> {
    let mut times = Vec::with_capacity(repeats);
    let mut layout = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let l = map_layer(scheme, weights, mask, row_len, engine)?;
        times.push(start.elapsed().as_secs_f64());
        layout = Some(l);
    }
    Ok((median(times), layout.expect("repeats >= 1")))
}

/// Median mapping time with and without the table for CVM, sign-flip (signed
/// formats only) and bit-flip. Fails if the two engines ever disagree.
pub fn bench_lut(
    weights: &LayerWeights,
    mask: &SafMask,
    row_len: usize,
    repeats: usize,
    lut: &CvmLut,
) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let mut schemes = vec![Scheme::Cvm, Scheme::SignFlip, Scheme::BitFlip];
    if !weights.format().encoding().is_signed() {
        schemes.retain(|&s| s != Scheme::SignFlip);
    }
    let mut rows = Vec::with_capacity(schemes.len());
    for scheme in schemes {
        let (direct_seconds, direct) =
            timed(scheme, weights, mask, row_len, CvmEngine::Direct, repeats)?;
        let (lut_seconds, tabled) = timed(scheme, weights, mask, row_len, CvmEngine::Lut(lut), repeats)?;
        if direct != tabled {
            return Err(Error::EngineMismatch {
                scheme: scheme.name(),
            });
        }
        rows.push(BenchRow {
            scheme,
            direct_seconds,
            lut_seconds,
            speedup: direct_seconds / lut_seconds.max(f64::MIN_POSITIVE),
        });
    }
    Ok(rows)
}
