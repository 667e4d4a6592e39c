//! Monte Carlo fault sweeps with paired masks.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{FaultInjectionSpec, check_probability, derive_seed, gen_saf_mask};
use crate::lut::CvmLut;
use crate::mapping::{
    CvmEngine, MappedLayout, Scheme, intended_unmasked_faults, map_layer, mapping_error,
};

use super::infer::{QuantizedModel, accuracy, software_predictions};
use super::model::{Dataset, argmax};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub rates: Vec<f64>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    pub sa1_fraction: f64,
    pub row_len: usize,
    /// Record wall-clock mapping time; when off, `map_seconds` is 0 and the
    /// report is byte-for-byte reproducible.
    pub record_timing: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            rates: (0..=5).map(|i| i as f64 / 100.0).collect(),
            trials: 50,
            schemes: Scheme::ALL.to_vec(),
            seed: 0,
            sa1_fraction: 0.5,
            row_len: 64,
            record_timing: true,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for &r in &self.rates {
            check_probability("fault rate", r)?;
        }
        check_probability("SA1 fraction", self.sa1_fraction)?;
        if self.rates.is_empty() || self.schemes.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one rate and one scheme".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.row_len == 0 {
            return Err(Error::InvalidConfig("row_len must be at least 1".into()));
        }
        Ok(())
    }

    /// Injection parameters for one layer of one trial. Every scheme and
    /// every rate share the same stream, so masks are paired across schemes
    /// and nested across rates.
    pub fn injection(&self, rate: f64, trial: usize, layer: usize) -> FaultInjectionSpec {
        FaultInjectionSpec {
            rate,
            sa1_fraction: self.sa1_fraction,
            seed: derive_seed(self.seed, layer as u64),
            trial_index: trial as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub rate: f64,
    pub scheme: Scheme,
    pub trials: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_abs_weight_err: f64,
    pub mean_unmasked_faults: f64,
    pub map_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    /// Test accuracy of fault-free integer software inference.
    pub baseline_acc: f64,
    pub results: Vec<ResultRow>,
}

impl EvalReport {
    pub fn row(&self, rate: f64, scheme: Scheme) -> Option<&ResultRow> {
        self.results.iter().find(|r| r.rate == rate && r.scheme == scheme)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.results {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn save(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, serde_json::to_string_pretty(self)?)?;
        self.write_csv(std::fs::File::create(csv)?)
    }
}

/// One scheme's result in one trial.
#[derive(Clone, Copy, Debug, Default)]
struct Outcome {
    correct: usize,
    abs_weight_err: f64,
    unmasked: f64,
    seconds: f64,
}

fn run_trial(
    model: &QuantizedModel,
    test: &Dataset,
    spec: &SweepSpec,
    engine: CvmEngine<'_>,
    rate: f64,
    trial: usize,
) -> Result<Vec<Outcome>> {
    let tag = |layer: usize| {
        move |e: Error| Error::Trial {
            rate,
            trial,
            layer,
            source: Box::new(e),
        }
    };
    let masks = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let w = &l.weights;
            gen_saf_mask(&spec.injection(rate, trial, i), w.rows(), w.cols(), w.format().width())
                .map_err(tag(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let num_weights = model.num_weights() as f64;

    let mut outcomes = Vec::with_capacity(spec.schemes.len());
    for &scheme in &spec.schemes {
        let mut out = Outcome::default();
        let mut total_err = 0u64;
        let mut unmasked = 0usize;
        let mut crossbars = Vec::with_capacity(model.layers.len());
        for (i, (l, mask)) in model.layers.iter().zip(&masks).enumerate() {
            let start = Instant::now();
            let layout: MappedLayout =
                map_layer(scheme, &l.weights, mask, spec.row_len, engine).map_err(tag(i))?;
            out.seconds += start.elapsed().as_secs_f64();
            total_err += mapping_error(&layout, &l.weights).map_err(tag(i))?.total;
            unmasked += intended_unmasked_faults(&layout, &l.weights, mask).map_err(tag(i))?;
            crossbars.push(l.program(&layout).map_err(tag(i))?);
        }
        let mut correct = 0usize;
        for (x, y) in test.iter() {
            let logits = model
                .forward_layers(x, &mut |i, a| crossbars[i].mvm(&a))
                .map_err(|(i, e)| tag(i)(e))?;
            correct += usize::from(argmax(&logits) == y);
        }
        out.correct = correct;
        out.abs_weight_err = total_err as f64 / num_weights;
        out.unmasked = unmasked as f64;
        if !spec.record_timing {
            out.seconds = 0.0;
        }
        outcomes.push(out);
    }
    Ok(outcomes)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and sample standard deviation of accuracies, computed from integer
/// correct counts so identical trials give exactly the per-trial accuracy
/// and a zero spread.
fn accuracy_stats(correct: &[usize], samples: usize) -> (f64, f64) {
    let n = correct.len();
    let total: usize = correct.iter().sum();
    let mean = total as f64 / (n * samples) as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mean_count = total as f64 / n as f64;
    let ss: f64 = correct.iter().map(|&c| (c as f64 - mean_count).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / samples as f64)
}

/// Runs every (rate, trial) in parallel; each trial maps all schemes against
/// the same per-layer masks and classifies the whole test set.
///
/// `lut` accelerates the closest-value search when it matches the weight
/// format. Results are aggregated in (rate, scheme) order independent of
/// scheduling.
pub fn run_sweep(
    model: &QuantizedModel,
    test: &Dataset,
    spec: &SweepSpec,
    lut: Option<&CvmLut>,
) -> Result<EvalReport> {
    spec.validate()?;
    if test.is_empty() {
        return Err(Error::InvalidConfig("empty test set".into()));
    }
    let engine = lut.map_or(CvmEngine::Direct, CvmEngine::Lut);
    for l in &model.layers {
        engine.check(l.weights.format())?;
    }
    let baseline_acc = accuracy(&software_predictions(model, test)?, test);

    let tasks: Vec<(usize, usize)> = (0..spec.rates.len())
        .flat_map(|r| (0..spec.trials).map(move |t| (r, t)))
        .collect();
    let outcomes = tasks
        .par_iter()
        .map(|&(r, t)| run_trial(model, test, spec, engine, spec.rates[r], t))
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::with_capacity(spec.rates.len() * spec.schemes.len());
    for (r, per_rate) in outcomes.chunks(spec.trials).enumerate() {
        for (s, &scheme) in spec.schemes.iter().enumerate() {
            let pick = |f: fn(&Outcome) -> f64| per_rate.iter().map(|o| f(&o[s])).collect::<Vec<_>>();
            let correct: Vec<usize> = per_rate.iter().map(|o| o[s].correct).collect();
            let (mean_acc, std_acc) = accuracy_stats(&correct, test.len());
            results.push(ResultRow {
                rate: spec.rates[r],
                scheme,
                trials: spec.trials,
                mean_acc,
                std_acc,
                mean_abs_weight_err: mean(&pick(|o| o.abs_weight_err)),
                mean_unmasked_faults: mean(&pick(|o| o.unmasked)),
                map_seconds: mean(&pick(|o| o.seconds)),
            });
        }
    }

    let config = serde_json::json!({
        "tool": crate::TOOL_VERSION,
        "sweep": spec,
        "engine": if lut.is_some() { "lut" } else { "direct" },
    });
    Ok(EvalReport {
        config,
        baseline_acc,
        results,
    })
}
