//! Symmetric per-tensor quantization with round-half-away-from-zero.

use crate::error::{Error, Result};
use crate::numfmt::{CodeFormat, Encoding};

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub codes: Vec<i32>,
    pub scale: f64,
    pub format: CodeFormat,
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Scale mapping the tensor's extreme onto the largest positive code; 1 for
/// a tensor with nothing to represent.
pub fn symmetric_scale(x: &[f64], format: CodeFormat) -> Result<f64> {
    check_finite(x)?;
    let peak = match format.encoding() {
        Encoding::TwosComplement => x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        Encoding::Unsigned => x.iter().fold(0.0f64, |m, &v| m.max(v)),
    };
    Ok(if peak > 0.0 {
        peak / format.max_value() as f64
    } else {
        1.0
    })
}

/// Codes for `x` at a given scale, clamped to the format's range.
pub fn quantize_with_scale(x: &[f64], scale: f64, format: CodeFormat) -> Result<Vec<i32>> {
    check_finite(x)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidConfig(format!("quantization scale {scale}")));
    }
    let (lo, hi) = (format.min_value() as f64, format.max_value() as f64);
    // f64::round rounds half away from zero.
    Ok(x.iter().map(|&v| (v / scale).round().clamp(lo, hi) as i32).collect())
}

pub fn quantize(x: &[f64], format: CodeFormat) -> Result<QuantizedTensor> {
    let scale = symmetric_scale(x, format)?;
    Ok(QuantizedTensor {
        codes: quantize_with_scale(x, scale, format)?,
        scale,
        format,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Vec<f64> {
    q.codes.iter().map(|&c| c as f64 * q.scale).collect()
}
