//! Integer inference of a quantized toy model, in software or on simulated
//! crossbars.

use crate::crossbar::{ActivationVector, CrossbarConfig, ProgrammedCrossbar, mvm_exact};
use crate::error::{Error, Result};
use crate::mapping::{LayerWeights, MappedLayout};
use crate::numfmt::CodeFormat;
use crate::quant::{quantize, quantize_with_scale, symmetric_scale};

use super::model::{Dataset, ToyModel, argmax};

#[derive(Clone, Debug)]
pub struct QuantizedLayer {
    pub weights: LayerWeights,
    pub weight_scale: f64,
    /// Streaming format of this layer's inputs: unsigned after a ReLU.
    pub input_format: CodeFormat,
    /// Static input scale from calibration.
    pub input_scale: f64,
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl QuantizedLayer {
    /// Programs a crossbar for this layer from a mapped layout.
    pub fn program(&self, layout: &MappedLayout) -> Result<ProgrammedCrossbar> {
        let w = &self.weights;
        if (layout.rows(), layout.cols(), layout.format()) != (w.rows(), w.cols(), w.format()) {
            return Err(Error::DimensionMismatch(format!(
                "layout {}x{} ({}) for a {}x{} ({}) layer",
                layout.rows(),
                layout.cols(),
                layout.format(),
                w.rows(),
                w.cols(),
                w.format()
            )));
        }
        ProgrammedCrossbar::program(layout, &CrossbarConfig::for_layout(layout, self.input_format))
    }

    /// Rescales integer outputs to reals and applies the bias and activation.
    fn finish(&self, acc: &[i64]) -> Vec<f64> {
        let s = self.weight_scale * self.input_scale;
        acc.iter()
            .zip(&self.bias)
            .map(|(&y, &b)| {
                let v = y as f64 * s + b;
                if self.relu { v.max(0.0) } else { v }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct QuantizedModel {
    pub layers: Vec<QuantizedLayer>,
    pub input_dim: usize,
    pub classes: usize,
}

impl QuantizedModel {
    /// Quantizes weights per tensor and calibrates activation scales on
    /// `calibration`.
    pub fn quantize(
        model: &ToyModel,
        calibration: &Dataset,
        weight_format: CodeFormat,
        activation_bits: u8,
    ) -> Result<Self> {
        model.validate()?;
        calibration.validate(model.classes)?;
        if calibration.dim != model.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "calibration data has dimension {}, model expects {}",
                calibration.dim, model.input_dim
            )));
        }
        if calibration.is_empty() {
            return Err(Error::InvalidConfig("empty calibration set".into()));
        }

        let mut inputs = calibration.inputs.clone();
        let mut dim = model.input_dim;
        let mut layers = Vec::with_capacity(model.layers.len());
        for (i, l) in model.layers.iter().enumerate() {
            let after_relu = i > 0 && model.layers[i - 1].relu;
            let input_format = if after_relu {
                CodeFormat::unsigned(activation_bits)?
            } else {
                CodeFormat::twos_complement(activation_bits)?
            };
            let input_scale = symmetric_scale(&inputs, input_format)?;
            let q = quantize(&l.weights, weight_format)?;
            let weights = LayerWeights::from_values(l.rows, l.cols, weight_format, &q.codes)?;
            layers.push(QuantizedLayer {
                weights,
                weight_scale: q.scale,
                input_format,
                input_scale,
                bias: l.bias.clone(),
                relu: l.relu,
            });
            inputs = inputs.chunks_exact(dim).flat_map(|x| l.forward(x)).collect();
            dim = l.cols;
        }
        Ok(QuantizedModel {
            layers,
            input_dim: model.input_dim,
            classes: model.classes,
        })
    }

    /// Runs the model with `mvm(layer, activations)` supplying each layer's
    /// integer matrix-vector product.
    pub fn forward_with<F>(&self, x: &[f64], mut mvm: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, ActivationVector) -> Result<Vec<i64>>,
    {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input of length {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        self.forward_layers(x, &mut mvm).map_err(|(_, e)| e)
    }

    /// As [`QuantizedModel::forward_with`], with errors tagged by layer index.
    pub(crate) fn forward_layers<F>(
        &self,
        x: &[f64],
        mvm: &mut F,
    ) -> std::result::Result<Vec<f64>, (usize, Error)>
    where
        F: FnMut(usize, ActivationVector) -> Result<Vec<i64>>,
    {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut step = || -> Result<Vec<i64>> {
                let codes = quantize_with_scale(&h, l.input_scale, l.input_format)?;
                mvm(i, ActivationVector::new(l.input_format, codes)?)
            };
            let acc = step().map_err(|e| (i, e))?;
            h = l.finish(&acc);
        }
        Ok(h)
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.rows() * l.weights.cols()).sum()
    }
}

fn check_data(model: &QuantizedModel, data: &Dataset) -> Result<()> {
    if data.dim != model.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "data has dimension {}, model expects {}",
            data.dim, model.input_dim
        )));
    }
    Ok(())
}

/// Predictions with exact integer matrix multiplies of the quantized weights.
pub fn software_predictions(model: &QuantizedModel, data: &Dataset) -> Result<Vec<usize>> {
    check_data(model, data)?;
    let values: Vec<Vec<i32>> = model.layers.iter().map(|l| l.weights.values()).collect();
    data.iter()
        .map(|(x, _)| {
            let logits = model.forward_with(x, |i, a| {
                let w = &model.layers[i].weights;
                mvm_exact(&values[i], w.rows(), w.cols(), a.values())
            })?;
            Ok(argmax(&logits))
        })
        .collect()
}

/// Predictions with every layer multiplied on a crossbar programmed from
/// `layouts[i]`.
pub fn run_inference(
    model: &QuantizedModel,
    layouts: &[MappedLayout],
    data: &Dataset,
) -> Result<Vec<usize>> {
    check_data(model, data)?;
    if layouts.len() != model.layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} layouts for {} layers",
            layouts.len(),
            model.layers.len()
        )));
    }
    let crossbars = layouts
        .iter()
        .zip(&model.layers)
        .map(|(layout, l)| l.program(layout))
        .collect::<Result<Vec<_>>>()?;
    data.iter()
        .map(|(x, _)| Ok(argmax(&model.forward_with(x, |i, a| crossbars[i].mvm(&a))?)))
        .collect()
}

/// Fraction of predictions matching the labels.
pub fn accuracy(predictions: &[usize], data: &Dataset) -> f64 {
    let correct = predictions.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    correct as f64 / data.len() as f64
}
