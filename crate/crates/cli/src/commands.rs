//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use safmap::crossbar::{ActivationFile, ActivationVector, CrossbarConfig, mvm_simulate};
use safmap::eval::{
    self, BlobSpec, Dataset, EvalReport, QuantizedModel, SweepSpec, ToyModel, run_sweep,
};
use safmap::faults::{FaultInjectionSpec, SafMask, SafMaskFile, gen_saf_mask};
use safmap::lut::CvmLut;
use safmap::mapping::{CvmEngine, LayerWeights, MappedLayout, MappedLayoutFile, map_layer, mapping_error};
use safmap::numfmt::CodeFormat;

use crate::{
    BenchArgs, EvalArgs, InjectArgs, LutBuildArgs, LutVerifyArgs, MapArgs, MvmArgs, TrainToyArgs,
};

/// A bad flag or an input inconsistent with the flags.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for usage errors, 1 for everything else. Failures inside a sweep trial
/// are runtime failures whatever their cause.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<safmap::Error>() {
            use safmap::Error::*;
            return match e {
                DimensionMismatch(_)
                | UnsignedLayer
                | UnsupportedWidth(_)
                | InvalidRate { .. }
                | InvalidConfig(_)
                | OutOfRange { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn provenance(command: &str, config: &impl Serialize) -> Value {
    json!({
        "tool": safmap::TOOL_VERSION,
        "command": command,
        "config": config,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn inject(a: &InjectArgs) -> Result<()> {
    let spec = FaultInjectionSpec {
        rate: a.rate,
        sa1_fraction: a.sa1_frac,
        seed: a.seed,
        trial_index: a.trial,
    };
    let mask = gen_saf_mask(&spec, a.rows, a.cols, a.bits)?;
    let mut file = mask.to_file();
    file.provenance = Some(provenance("inject", a));
    write_json(&a.out, &file)?;
    println!(
        "{}x{}x{} cells, {} faulty ({} SA1) -> {}",
        a.rows,
        a.cols,
        a.bits,
        mask.fault_count(),
        mask.sa1_count(),
        a.out.display()
    );
    Ok(())
}

pub fn lut_build(a: &LutBuildArgs) -> Result<()> {
    let lut = CvmLut::build(CodeFormat::new(a.bits, a.mode)?);
    lut.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} entries for {} -> {}", lut.len(), lut.format(), a.out.display());
    Ok(())
}

pub fn lut_verify(a: &LutVerifyArgs) -> Result<()> {
    let lut = CvmLut::load(&a.lut).with_context(|| format!("loading {}", a.lut.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    match lut.verify(a.samples, &mut rng) {
        None => {
            println!("{} ({}): ok", a.lut.display(), lut.format());
            Ok(())
        }
        Some(m) => bail!("{}: {m}", a.lut.display()),
    }
}

/// Weight matrix input for `map`.
#[derive(Debug, Deserialize)]
struct WeightsFile {
    rows: usize,
    cols: usize,
    values: Vec<i32>,
}

fn load_lut(path: Option<&PathBuf>, format: CodeFormat) -> Result<CvmLut> {
    match path {
        Some(p) => CvmLut::load_or_build(p, format).with_context(|| format!("LUT {}", p.display())),
        None => Ok(CvmLut::build(format)),
    }
}

pub fn map(a: &MapArgs) -> Result<()> {
    let format = CodeFormat::new(a.bits, a.mode)?;
    let w: WeightsFile = read_json(&a.weights)?;
    let weights = LayerWeights::from_values(w.rows, w.cols, format, &w.values)?;
    let mask: SafMask = read_json::<SafMaskFile>(&a.mask)?.try_into()?;
    let lut = a.lut.as_ref().map(|p| load_lut(Some(p), format)).transpose()?;
    let engine = lut.as_ref().map_or(CvmEngine::Direct, CvmEngine::Lut);
    let layout = map_layer(a.scheme, &weights, &mask, a.row_len as usize, engine)?;
    let err = mapping_error(&layout, &weights)?;
    let mut file = layout.to_file();
    file.provenance = Some(provenance("map", a));
    write_json(&a.out, &file)?;
    println!(
        "{} on {}x{} {}: total |error| {} -> {}",
        a.scheme,
        w.rows,
        w.cols,
        format,
        err.total,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MvmOutput<'a> {
    outputs: &'a [i64],
    provenance: Value,
}

pub fn mvm(a: &MvmArgs) -> Result<()> {
    let layout: MappedLayout = read_json::<MappedLayoutFile>(&a.layout)?.try_into()?;
    let acts: ActivationVector = read_json::<ActivationFile>(&a.activations)?.try_into()?;
    let cfg = match &a.config {
        Some(p) => read_json::<CrossbarConfig>(p)?,
        None => CrossbarConfig::for_layout(&layout, acts.format()),
    };
    let outputs = mvm_simulate(&layout, &acts, &cfg)?;
    write_json(
        &a.out,
        &MvmOutput {
            outputs: &outputs,
            provenance: provenance("mvm", &json!({ "args": a, "crossbar": cfg })),
        },
    )?;
    println!("{} outputs -> {}", outputs.len(), a.out.display());
    Ok(())
}

/// Train/test split file for `eval --data` and `train-toy --data-out`.
#[derive(Debug, Serialize, Deserialize)]
struct DataFile {
    train: Dataset,
    test: Dataset,
}

pub fn train_toy(a: &TrainToyArgs) -> Result<()> {
    let problem = eval::train_toy(a.seed)?;
    let mut model = problem.model;
    model.provenance = Some(provenance("train-toy", a));
    write_json(&a.out, &model)?;
    if let Some(p) = &a.data_out {
        write_json(
            p,
            &DataFile {
                train: problem.train,
                test: problem.test,
            },
        )?;
    }
    println!(
        "float test accuracy {:.4} -> {}",
        problem.float_accuracy,
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model: ToyModel = read_json(&a.model)?;
    model.validate().with_context(|| format!("model {}", a.model.display()))?;
    let data = match (&a.data, model.dataset) {
        (Some(p), _) => read_json::<DataFile>(p)?,
        (None, Some(d)) => {
            let (train, test) = BlobSpec::default().generate(d.seed);
            DataFile { train, test }
        }
        (None, None) => {
            return Err(UsageError(format!(
                "{} does not name its training data; pass --data",
                a.model.display()
            ))
            .into());
        }
    };
    data.test.validate(model.classes)?;

    let weight_format = CodeFormat::twos_complement(a.bits)?;
    let q = QuantizedModel::quantize(&model, &data.train, weight_format, a.act_bits)?;
    let lut = load_lut(a.lut.as_ref(), weight_format)?;
    let spec = SweepSpec {
        rates: a.rates.0.clone(),
        trials: a.trials as usize,
        schemes: a.schemes.0.clone(),
        seed: a.seed,
        sa1_fraction: a.sa1_frac,
        row_len: a.row_len as usize,
        record_timing: !a.no_timing,
    };
    let mut report = run_sweep(&q, &data.test, &spec, Some(&lut))?;
    if let Value::Object(config) = &mut report.config {
        config.insert("provenance".into(), provenance("eval", a));
    }

    let csv = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    report
        .save(&a.out, &csv)
        .with_context(|| format!("writing {} and {}", a.out.display(), csv.display()))?;
    print_report(&report);
    println!("-> {}, {}", a.out.display(), csv.display());
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("baseline accuracy {:.4}", report.baseline_acc);
    println!(
        "{:>6}  {:<8}  {:>8}  {:>8}  {:>10}  {:>10}  {:>10}",
        "rate", "scheme", "mean_acc", "std_acc", "abs_w_err", "unmasked", "map_s"
    );
    for r in &report.results {
        println!(
            "{:>6.3}  {:<8}  {:>8.4}  {:>8.4}  {:>10.4}  {:>10.2}  {:>10.6}",
            r.rate,
            r.scheme.name(),
            r.mean_acc,
            r.std_acc,
            r.mean_abs_weight_err,
            r.mean_unmasked_faults,
            r.map_seconds
        );
    }
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let format = CodeFormat::new(a.bits, a.mode)?;
    let lut = load_lut(a.lut.as_ref(), format)?;
    let (rows, cols) = a.dims;
    let (weights, mask) = eval::random_layer(rows, cols, format, a.rate, a.seed)?;
    let results = eval::bench_lut(&weights, &mask, a.row_len as usize, a.repeats as usize, &lut)?;
    println!(
        "{rows}x{cols} {format}, rate {}, median of {} runs",
        a.rate, a.repeats
    );
    println!("{:<8}  {:>12}  {:>12}  {:>8}", "scheme", "direct_s", "lut_s", "speedup");
    for r in &results {
        println!(
            "{:<8}  {:>12.6}  {:>12.6}  {:>8.2}",
            r.scheme.name(),
            r.direct_seconds,
            r.lut_seconds,
            r.speedup
        );
    }
    if let Some(p) = &a.out {
        write_json(p, &json!({ "results": results, "provenance": provenance("bench", a) }))?;
    }
    Ok(())
}
