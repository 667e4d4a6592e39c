//! Desk-scale evaluation: a toy quantized MLP, Monte Carlo fault sweeps and the
//! LUT benchmark.
//!
//! The model has no attention layers, so every weight matrix is mapped onto
//! crossbars and sees faults.

mod bench;
mod infer;
mod model;
mod sweep;

pub use bench::{BenchRow, bench_lut, random_layer};
pub use infer::{QuantizedLayer, QuantizedModel, accuracy, run_inference, software_predictions};
pub use model::{
    BlobSpec, Dataset, DatasetRef, DenseLayer, ToyModel, ToyProblem, TrainSpec, argmax, train_mlp,
    train_toy, train_toy_with,
};
pub use sweep::{EvalReport, ResultRow, SweepSpec, run_sweep};
