//! Declarative experiments: dataset preparation, architecture templates,
//! split-wise training and evaluation, and repeated runs.
//!
//! A model is trained on the training split only (encoders and readout
//! included) and then driven from rest over the series up to the end of the
//! split being scored, so validation and test predictions follow on from
//! the training states without a second transient.

use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{self, Column, MackeyGlassParams, SeriesTask, Split};
use crate::encoder::{EncoderKind, EncoderSpec, DEFAULT_ELM_LAMBDA};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::optimizer::GaConfig;
use crate::reservoir::ReservoirParams;
use crate::seed::derive_seed;
use crate::stack::{DeepEsnConfig, DeepEsnModel, DEFAULT_RIDGE};

/// Seed stream offset separating encoder seeds from reservoir seeds.
const ENCODER_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    MackeyGlass {
        #[serde(default)]
        params: MackeyGlassParams,
        #[serde(default)]
        seed: u64,
    },
    /// Input `u(t)`, target `y(t + horizon)` of the NARMA-10 system.
    Narma10 {
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        column: Column,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: Source,
    /// Generated length; ignored for CSV sources.
    #[serde(default)]
    pub length: Option<usize>,
    pub horizon: usize,
    pub split: Split,
    pub washout: usize,
    /// Odd moving-average window, 1 for none.
    #[serde(default = "one")]
    pub smoothing: usize,
    /// Points removed from the end of the raw series (provisional values).
    #[serde(default)]
    pub drop_tail: usize,
    /// Constant factor applied after smoothing.
    #[serde(default = "unit")]
    pub scale: f64,
    /// Offset added before computing MAPE.
    #[serde(default)]
    pub mape_offset: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl DatasetSpec {
    /// Builds the task. Relative CSV paths resolve against `base_dir`.
    pub fn load(&self, name: &str, base_dir: &Path) -> Result<SeriesTask> {
        let needed = self.split.total() + self.horizon;
        let (inputs, outputs) = match &self.source {
            Source::MackeyGlass { params, seed } => {
                let s = datasets::mackey_glass(self.length.unwrap_or(needed), params, *seed)?;
                (s.clone(), s)
            }
            Source::Narma10 { seed } => datasets::narma10(self.length.unwrap_or(needed), *seed)?,
            Source::Csv { path, column } => {
                let path = if path.is_relative() {
                    base_dir.join(path)
                } else {
                    path.clone()
                };
                let s = datasets::load_csv(&path, column)?;
                (s.clone(), s)
            }
        };
        let prepare = |mut s: Vec<f64>| -> Result<Vec<f64>> {
            s.truncate(s.len().saturating_sub(self.drop_tail));
            let mut s = datasets::smooth(&s, self.smoothing)?;
            if self.scale != 1.0 {
                s.iter_mut().for_each(|v| *v *= self.scale);
            }
            Ok(s)
        };
        let autonomous = inputs == outputs;
        let inputs = prepare(inputs)?;
        let outputs = if autonomous { inputs.clone() } else { prepare(outputs)? };
        make_io_task(name, &inputs, &outputs, self.horizon, self.split, self.washout)
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.smoothing == 0 || self.smoothing % 2 == 0 {
            errors.push(format!("dataset.smoothing: {} is not a positive odd number", self.smoothing));
        }
        if self.split.train == 0 {
            errors.push("dataset.split.train: must be positive".into());
        }
        if !(self.scale.is_finite() && self.scale != 0.0) {
            errors.push("dataset.scale: must be finite and nonzero".into());
        }
        if let Some(len) = self.length {
            if len < self.split.total() + self.horizon {
                errors.push(format!(
                    "dataset.length: {} is shorter than split total {} plus horizon {}",
                    len,
                    self.split.total(),
                    self.horizon
                ));
            }
        }
    }
}

/// Pairs `inputs[t]` with `outputs[t + horizon]`.
pub fn make_io_task(
    name: &str,
    inputs: &[f64],
    outputs: &[f64],
    horizon: usize,
    split: Split,
    washout: usize,
) -> Result<SeriesTask> {
    if std::ptr::eq(inputs, outputs) || inputs == outputs {
        return datasets::make_task(name, inputs, horizon, split, washout);
    }
    let mut task = datasets::make_task(name, inputs, 0, split, washout)?;
    if outputs.len() < split.total() + horizon {
        return Err(Error::SplitOverflow {
            train: split.train,
            validate: split.validate,
            test: split.test,
            available: outputs.len().saturating_sub(horizon),
        });
    }
    for t in 0..task.len() {
        task.targets[(t, 0)] = outputs[t + horizon];
    }
    task.horizon = horizon;
    Ok(task)
}

/// Per-layer hyperparameters searched by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerHyper {
    pub input_scaling: f64,
    pub spectral_radius: f64,
    pub leak_rate: f64,
}

/// Extends `base` to `depth` layers by cycling layers 2..=len of `base`,
/// so with three base layers the even layers copy the second and the odd
/// layers from the fifth on copy the third.
pub fn extend_hyper(base: &[LayerHyper], depth: usize) -> Vec<LayerHyper> {
    if base.is_empty() {
        return Vec::new();
    }
    (0..depth)
        .map(|i| {
            if i < base.len() {
                base[i]
            } else if base.len() == 1 {
                base[0]
            } else {
                base[1 + (i - 1) % (base.len() - 1)]
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub depth: usize,
    pub reservoir_size: usize,
    pub encoder: EncoderKind,
    /// Ignored for identity encoders, which keep the reservoir size.
    pub encoder_size: usize,
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    pub feature_links: bool,
    #[serde(default = "yes")]
    pub direct_input: bool,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_elm_lambda")]
    pub elm_lambda: f64,
}

fn default_sparsity() -> f64 {
    0.1
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

fn default_elm_lambda() -> f64 {
    DEFAULT_ELM_LAMBDA
}

impl Architecture {
    /// Plain single-reservoir ESN.
    pub fn esn(size: usize) -> Self {
        Self {
            depth: 1,
            reservoir_size: size,
            encoder: EncoderKind::Identity,
            encoder_size: size,
            sparsity: default_sparsity(),
            feature_links: false,
            direct_input: true,
            ridge: DEFAULT_RIDGE,
            elm_lambda: DEFAULT_ELM_LAMBDA,
        }
    }

    pub fn encoder_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Identity => self.reservoir_size,
            _ => self.encoder_size,
        }
    }

    /// Concrete model configuration. `hyper` is extended to the depth with
    /// [`extend_hyper`]; reservoir and encoder seeds derive from `seed`.
    pub fn build(
        &self,
        hyper: &[LayerHyper],
        input_dim: usize,
        washout: usize,
        seed: u64,
    ) -> Result<DeepEsnConfig> {
        if hyper.is_empty() {
            return Err(Error::Config(vec!["hyperparameters: at least one layer required".into()]));
        }
        let hyper = extend_hyper(hyper, self.depth);
        let m = self.encoder_dim();
        let layers = hyper
            .iter()
            .enumerate()
            .map(|(i, h)| ReservoirParams {
                size: self.reservoir_size,
                input_dim: if i == 0 { input_dim } else { m },
                input_scaling: h.input_scaling,
                spectral_radius: h.spectral_radius,
                leak_rate: h.leak_rate,
                sparsity: self.sparsity,
                seed: derive_seed(seed, i as u64),
            })
            .collect();
        let encoders = (0..self.depth.saturating_sub(1))
            .map(|j| EncoderSpec {
                kind: self.encoder,
                input_dim: self.reservoir_size,
                output_dim: m,
                lambda: self.elm_lambda,
                seed: derive_seed(seed, ENCODER_STREAM + j as u64),
            })
            .collect();
        let config = DeepEsnConfig {
            layers,
            encoders,
            feature_links: self.feature_links,
            direct_input: self.direct_input,
            ridge: self.ridge,
            washout,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.depth == 0 {
            errors.push("architecture.depth: must be at least 1".into());
        }
        if self.reservoir_size == 0 {
            errors.push("architecture.reservoir_size: must be positive".into());
        }
        if self.encoder != EncoderKind::Identity && self.depth > 1 && self.encoder_size == 0 {
            errors.push("architecture.encoder_size: must be positive".into());
        }
        if self.encoder == EncoderKind::Pca && self.encoder_size > self.reservoir_size {
            errors.push(format!(
                "architecture.encoder_size: PCA size {} exceeds reservoir size {}",
                self.encoder_size, self.reservoir_size
            ));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            errors.push(format!("architecture.sparsity: {} outside (0, 1]", self.sparsity));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            errors.push("architecture.ridge: must be finite and nonnegative".into());
        }
        if !(self.elm_lambda >= 0.0 && self.elm_lambda.is_finite()) {
            errors.push("architecture.elm_lambda: must be finite and nonnegative".into());
        }
    }
}

/// Trains on the training split of `task`.
pub fn train_on_task(task: &SeriesTask, config: &DeepEsnConfig) -> Result<DeepEsnModel> {
    let r = task.train_range();
    let inputs = task.inputs.rows(r.start, r.len()).clone_owned();
    let teachers = task.targets.rows(r.start, r.len()).clone_owned();
    DeepEsnModel::train(config, &inputs, &teachers)
}

/// Predictions and targets over `range`, driving the model from rest at
/// step 0 with the model's washout.
pub fn predict_range(model: &DeepEsnModel, task: &SeriesTask, range: Range<usize>) -> Result<(Vec<f64>, Vec<f64>)> {
    let washout = model.config().washout;
    let skip = washout * model.config().depth();
    if range.start < skip || range.end > task.len() || range.is_empty() {
        return Err(Error::Empty("prediction range"));
    }
    let inputs = task.inputs.rows(0, range.end).clone_owned();
    let out = model.predict(&inputs, washout)?;
    let pred = out
        .rows(range.start - skip, range.len())
        .iter()
        .copied()
        .collect();
    let target = task.targets.rows(range.start, range.len()).iter().copied().collect();
    Ok((pred, target))
}

pub fn score(model: &DeepEsnModel, task: &SeriesTask, range: Range<usize>, mape_offset: f64) -> Result<MetricReport> {
    let (pred, target) = predict_range(model, task, range)?;
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predictions"));
    }
    MetricReport::compute(&target, &pred, mape_offset)
}

/// Validation RMSE of a model trained on the training split.
pub fn validation_rmse(task: &SeriesTask, config: &DeepEsnConfig) -> Result<f64> {
    let model = train_on_task(task, config)?;
    let (pred, target) = predict_range(&model, task, task.validate_range())?;
    let v = metrics::rmse(&target, &pred)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("validation predictions"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hyperparameters {
    Fixed { layers: Vec<LayerHyper> },
    Ga { ga: GaConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub repetitions: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub architecture: Architecture,
    pub hyperparameters: Hyperparameters,
    pub run: RunSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.name.trim().is_empty() {
            errors.push("name: must not be empty".into());
        }
        self.dataset.validate(&mut errors);
        self.architecture.validate(&mut errors);
        match &self.hyperparameters {
            Hyperparameters::Fixed { layers } => {
                if layers.is_empty() {
                    errors.push("hyperparameters.layers: at least one layer required".into());
                }
                for (i, h) in layers.iter().enumerate() {
                    if !(0.0..=1.0).contains(&h.input_scaling) {
                        errors.push(format!("hyperparameters.layers[{i}].input_scaling: outside [0, 1]"));
                    }
                    if !(h.spectral_radius > 0.0 && h.spectral_radius < 1.0) {
                        errors.push(format!("hyperparameters.layers[{i}].spectral_radius: outside (0, 1)"));
                    }
                    if !(h.leak_rate > 0.0 && h.leak_rate <= 1.0) {
                        errors.push(format!("hyperparameters.layers[{i}].leak_rate: outside (0, 1]"));
                    }
                }
            }
            Hyperparameters::Ga { ga } => ga.validate(&mut errors),
        }
        if self.run.repetitions == 0 {
            errors.push("run.repetitions: must be positive".into());
        }
        if self.dataset.washout * self.architecture.depth >= self.dataset.split.train {
            errors.push(format!(
                "dataset.washout: {} steps per layer over {} layers consume the whole training split",
                self.dataset.washout, self.architecture.depth
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn repetition_seed(&self, rep: usize) -> u64 {
        self.run.base_seed.wrapping_add(rep as u64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub seed: u64,
    pub validate: Option<MetricReport>,
    pub test: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub nrmse_mean: f64,
    pub nrmse_std: f64,
    pub mape_mean: f64,
    pub mape_std: f64,
    pub succeeded: usize,
    pub failed: usize,
}

impl Aggregate {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = Option<&'a MetricReport>>) -> Self {
        let mut ok = Vec::new();
        let mut failed = 0;
        for r in reports {
            match r {
                Some(r) => ok.push(*r),
                None => failed += 1,
            }
        }
        let col = |f: fn(&MetricReport) -> f64| metrics::mean_std(&ok.iter().map(f).collect::<Vec<_>>());
        let (rmse_mean, rmse_std) = col(|r| r.rmse);
        let (nrmse_mean, nrmse_std) = col(|r| r.nrmse);
        let (mape_mean, mape_std) = col(|r| r.mape);
        Self {
            rmse_mean,
            rmse_std,
            nrmse_mean,
            nrmse_std,
            mape_mean,
            mape_std,
            succeeded: ok.len(),
            failed,
        }
    }
}

/// One trained repetition: the model and its validation and test scores.
pub struct Trained {
    pub model: DeepEsnModel,
    pub validate: Option<MetricReport>,
    pub test: MetricReport,
}

pub fn run_repetition(
    task: &SeriesTask,
    arch: &Architecture,
    hyper: &[LayerHyper],
    seed: u64,
    mape_offset: f64,
) -> Result<Trained> {
    let config = arch.build(hyper, task.inputs.ncols(), task.washout, seed)?;
    let model = train_on_task(task, &config)?;
    let validate = if task.split.validate > 0 {
        Some(score(&model, task, task.validate_range(), mape_offset)?)
    } else {
        None
    };
    let test = score(&model, task, task.test_range(), mape_offset)?;
    Ok(Trained {
        model,
        validate,
        test,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub hyperparameters: Vec<LayerHyper>,
    pub repetitions: Vec<RepetitionResult>,
    pub test: Aggregate,
}

/// Runs `repetitions` independent models (seed `base_seed + r`) with fixed
/// hyperparameters. Failed repetitions are reported and left out of the
/// aggregate. `keep` receives each successful model.
pub fn run_repetitions(
    name: &str,
    task: &SeriesTask,
    arch: &Architecture,
    hyper: &[LayerHyper],
    run: &RunSpec,
    mape_offset: f64,
    keep: impl Fn(usize, &DeepEsnModel) -> Result<()> + Sync,
) -> ExperimentReport {
    let results: Vec<RepetitionResult> = (0..run.repetitions)
        .into_par_iter()
        .map(|rep| {
            let seed = run.base_seed.wrapping_add(rep as u64);
            let outcome = run_repetition(task, arch, hyper, seed, mape_offset)
                .and_then(|t| keep(rep, &t.model).map(|_| t));
            match outcome {
                Ok(t) => RepetitionResult {
                    repetition: rep,
                    seed,
                    validate: t.validate,
                    test: Some(t.test),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{name}: repetition {rep} (seed {seed}) failed: {e}");
                    RepetitionResult {
                        repetition: rep,
                        seed,
                        validate: None,
                        test: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let test = Aggregate::from_reports(results.iter().map(|r| r.test.as_ref()));
    ExperimentReport {
        name: name.to_string(),
        hyperparameters: hyper.to_vec(),
        repetitions: results,
        test,
    }
}

/// Sets the leaf at dotted `path` (array elements by index) to `raw`,
/// parsed as JSON when possible and as a string otherwise. Missing object
/// keys are created; unknown ones are caught when the result is parsed.
pub fn apply_override(root: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    use serde_json::Value;
    let bad = |reason: String| Error::Config(vec![format!("override {path}: {reason}")]);
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty path segment".into()));
    }
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| bad(format!("{part} is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(i)
                    .ok_or_else(|| bad(format!("index {i} out of range for length {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(format!("{part} is below a non-container value"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Parses a JSON experiment description, applies `key=value` overrides and
/// validates the result.
pub fn resolve_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("config is not valid JSON: {e}")]))?;
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(vec![format!("override {o}: expected key=value")]))?;
        apply_override(&mut value, path.trim(), raw.trim())?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(vec![format!("config: {e}")]))?;
    config.validate()?;
    Ok(config)
}
