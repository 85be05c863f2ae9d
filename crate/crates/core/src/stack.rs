//! Deep echo state network: `K` reservoirs joined by `K - 1` encoders,
//! with a linear readout over the last reservoir, the raw input and
//! (optionally) every encoder output.
//!
//! Washout is applied per reservoir: each layer discards the first
//! `washout` states it produces, so layer `i` (1-based) retains
//! `T - i * washout` steps and the readout is trained on the final
//! `T - K * washout` steps that every segment has in common.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderSpec, FittedEncoder};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::reservoir::{ReservoirLayer, ReservoirParams};

/// Default ridge coefficient of the readout.
pub const DEFAULT_RIDGE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepEsnConfig {
    pub layers: Vec<ReservoirParams>,
    pub encoders: Vec<EncoderSpec>,
    /// Route every encoder output to the readout.
    pub feature_links: bool,
    /// Route the raw input to the readout.
    pub direct_input: bool,
    pub ridge: f64,
    /// Steps discarded by each reservoir.
    pub washout: usize,
}

impl DeepEsnConfig {
    /// A single-reservoir ESN with direct input connections.
    pub fn single(layer: ReservoirParams, washout: usize) -> Self {
        Self {
            layers: vec![layer],
            encoders: Vec::new(),
            feature_links: false,
            direct_input: true,
            ridge: DEFAULT_RIDGE,
            washout,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.layers.len();
        if k == 0 {
            return Err(invalid("layers", "at least one reservoir is required"));
        }
        if self.encoders.len() + 1 != k {
            return Err(invalid(
                "encoders",
                format!("{} reservoirs need {} encoders, got {}", k, k - 1, self.encoders.len()),
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(invalid("ridge", "must be finite and nonnegative"));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (j, enc) in self.encoders.iter().enumerate() {
            enc.validate()?;
            if enc.input_dim != self.layers[j].size {
                return Err(invalid(
                    "encoders",
                    format!(
                        "encoder {} expects {} inputs but reservoir {} has {} units",
                        j + 1,
                        enc.input_dim,
                        j + 1,
                        self.layers[j].size
                    ),
                ));
            }
            if self.layers[j + 1].input_dim != enc.output_dim {
                return Err(invalid(
                    "layers",
                    format!(
                        "reservoir {} expects {} inputs but encoder {} emits {}",
                        j + 2,
                        self.layers[j + 1].input_dim,
                        j + 1,
                        enc.output_dim
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Ordered readout segments: last reservoir, raw input, encoders.
    pub fn layout(&self) -> Vec<Segment> {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |role, len| {
            segments.push(Segment { role, offset, len });
            offset += len;
        };
        if let Some(last) = self.layers.last() {
            push(SegmentRole::LastReservoir, last.size);
        }
        if self.direct_input {
            push(SegmentRole::Input, self.input_dim());
        }
        if self.feature_links {
            for (j, enc) in self.encoders.iter().enumerate() {
                push(SegmentRole::Encoder(j), enc.output_dim);
            }
        }
        segments
    }

    /// Length of one readout input vector.
    pub fn design_len(&self) -> usize {
        self.layout().iter().map(|s| s.len).sum()
    }

    /// Steps lost to washout across the whole stack.
    pub fn total_washout(&self) -> usize {
        self.washout * self.layers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRole {
    LastReservoir,
    Input,
    /// Output of encoder `j` (0-based).
    Encoder(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub role: SegmentRole,
    pub offset: usize,
    pub len: usize,
}

/// Readout inputs, one column per retained time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCollection {
    pub matrix: DMatrix<f64>,
    pub segments: Vec<Segment>,
}

impl StateCollection {
    pub fn steps(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn segment(&self, role: SegmentRole) -> Option<DMatrix<f64>> {
        self.segments
            .iter()
            .find(|s| s.role == role)
            .map(|s| self.matrix.rows(s.offset, s.len).clone_owned())
    }
}

/// Per-layer state matrices of one pass, one row per retained step.
#[derive(Debug, Clone)]
pub struct LayerStates {
    /// Reservoir `i` holds `T - (i + 1) * washout` rows.
    pub reservoirs: Vec<DMatrix<f64>>,
    /// Encoder `j` output for the retained states of reservoir `j`.
    pub encoders: Vec<DMatrix<f64>>,
}

enum Encoders<'a> {
    Fit(&'a [EncoderSpec]),
    Frozen(&'a [FittedEncoder]),
}

/// Drives the stack layer by layer. With `Encoders::Fit`, each encoder is
/// fitted on the retained states of the reservoir below it before use.
fn cascade(
    reservoirs: &mut [ReservoirLayer],
    encoders: Encoders<'_>,
    inputs: &DMatrix<f64>,
    washout: usize,
) -> Result<(LayerStates, Vec<FittedEncoder>)> {
    let k = reservoirs.len();
    let needed = washout * k;
    if needed >= inputs.nrows() {
        return Err(Error::WashoutTooLong {
            washout: needed,
            length: inputs.nrows(),
        });
    }
    let mut res_states = Vec::with_capacity(k);
    let mut enc_states = Vec::with_capacity(k.saturating_sub(1));
    let mut fitted = Vec::with_capacity(k.saturating_sub(1));

    let mut drive = reservoirs[0].run_sequence(inputs, washout)?;
    for j in 0..k - 1 {
        let encoder = match &encoders {
            Encoders::Fit(specs) => {
                fitted.push(FittedEncoder::fit(specs[j], &drive)?);
                &fitted[j]
            }
            Encoders::Frozen(list) => &list[j],
        };
        let encoded = encoder.encode_rows(&drive)?;
        res_states.push(drive);
        drive = reservoirs[j + 1].run_sequence(&encoded, washout)?;
        enc_states.push(encoded);
    }
    res_states.push(drive);
    Ok((
        LayerStates {
            reservoirs: res_states,
            encoders: enc_states,
        },
        fitted,
    ))
}

/// Stacks the aligned segments into the `P x T_eff` readout matrix.
fn assemble(config: &DeepEsnConfig, inputs: &DMatrix<f64>, states: &LayerStates) -> StateCollection {
    let k = config.depth();
    let w = config.washout;
    let steps = inputs.nrows() - k * w;
    let segments = config.layout();
    let p = segments.iter().map(|s| s.len).sum();
    let mut matrix = DMatrix::zeros(p, steps);
    for seg in &segments {
        let (source, start) = match seg.role {
            SegmentRole::LastReservoir => (&states.reservoirs[k - 1], 0),
            SegmentRole::Input => (inputs, k * w),
            SegmentRole::Encoder(j) => (&states.encoders[j], (k - j - 1) * w),
        };
        matrix
            .view_mut((seg.offset, 0), (seg.len, steps))
            .copy_from(&source.rows(start, steps).transpose());
    }
    StateCollection { matrix, segments }
}

/// Output of the training forward pass.
#[derive(Debug, Clone)]
pub struct Collected {
    pub reservoirs: Vec<ReservoirLayer>,
    pub encoders: Vec<FittedEncoder>,
    pub states: StateCollection,
    /// Teacher signals aligned with `states`, `L x T_eff`.
    pub teachers: DMatrix<f64>,
}

/// Initializes the reservoirs of `config`, drives them with `inputs`
/// (one row per step), fits the encoders inline and returns the aligned
/// readout inputs together with the truncated teachers.
pub fn forward_collect(
    config: &DeepEsnConfig,
    inputs: &DMatrix<f64>,
    teachers: &DMatrix<f64>,
) -> Result<Collected> {
    config.validate()?;
    check_inputs(config, inputs)?;
    if teachers.nrows() != inputs.nrows() {
        return Err(Error::DimensionMismatch {
            context: "teacher length",
            expected: inputs.nrows(),
            actual: teachers.nrows(),
        });
    }
    let mut reservoirs = config
        .layers
        .iter()
        .map(|p| ReservoirLayer::new(*p))
        .collect::<Result<Vec<_>>>()?;
    let (layer_states, encoders) = cascade(
        &mut reservoirs,
        Encoders::Fit(&config.encoders),
        inputs,
        config.washout,
    )?;
    let states = assemble(config, inputs, &layer_states);
    let start = config.total_washout();
    let teachers = teachers.rows(start, states.steps()).transpose();
    Ok(Collected {
        reservoirs,
        encoders,
        states,
        teachers,
    })
}

fn check_inputs(config: &DeepEsnConfig, inputs: &DMatrix<f64>) -> Result<()> {
    if inputs.ncols() != config.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "model input",
            expected: config.input_dim(),
            actual: inputs.ncols(),
        });
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input"));
    }
    Ok(())
}

/// Ridge readout `W_out = T M^T (M M^T + ridge I)^-1`, computed with a
/// Cholesky solve of the regularised normal matrix.
///
/// `design` is `P x T_eff`, `teachers` is `L x T_eff`.
pub fn fit_readout(design: &DMatrix<f64>, teachers: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if design.ncols() == 0 {
        return Err(Error::Empty("readout training range"));
    }
    if teachers.ncols() != design.ncols() {
        return Err(Error::DimensionMismatch {
            context: "readout teachers",
            expected: design.ncols(),
            actual: teachers.ncols(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(invalid("ridge", "must be nonnegative"));
    }
    if design.iter().chain(teachers.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("readout regression"));
    }
    let mut normal = design * design.transpose();
    for i in 0..normal.nrows() {
        normal[(i, i)] += ridge;
    }
    let rhs = design * teachers.transpose();
    Ok(linalg::solve_spd(normal, &rhs)?.transpose())
}

/// A trained deep ESN. Reservoir states are not part of the model: every
/// pass starts from zero states.
#[derive(Debug, Clone)]
pub struct DeepEsnModel {
    config: DeepEsnConfig,
    reservoirs: Vec<ReservoirLayer>,
    encoders: Vec<FittedEncoder>,
    readout: DMatrix<f64>,
}

impl DeepEsnModel {
    /// Trains a model on `inputs` (`T x D`) and `teachers` (`T x L`).
    pub fn train(config: &DeepEsnConfig, inputs: &DMatrix<f64>, teachers: &DMatrix<f64>) -> Result<Self> {
        let collected = forward_collect(config, inputs, teachers)?;
        let readout = fit_readout(&collected.states.matrix, &collected.teachers, config.ridge)?;
        Ok(Self {
            config: config.clone(),
            reservoirs: collected.reservoirs,
            encoders: collected.encoders,
            readout,
        })
    }

    /// Reassembles a model from its parts, checking every dimension.
    pub fn from_parts(
        config: DeepEsnConfig,
        reservoirs: Vec<ReservoirLayer>,
        encoders: Vec<FittedEncoder>,
        readout: DMatrix<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if reservoirs.len() != config.depth() || encoders.len() + 1 != config.depth() {
            return Err(invalid("model", "layer count does not match configuration"));
        }
        for (r, p) in reservoirs.iter().zip(&config.layers) {
            if r.params() != p {
                return Err(invalid("model", "reservoir parameters do not match configuration"));
            }
        }
        for (e, s) in encoders.iter().zip(&config.encoders) {
            if e.spec() != s {
                return Err(invalid("model", "encoder spec does not match configuration"));
            }
        }
        if readout.ncols() != config.design_len() {
            return Err(Error::DimensionMismatch {
                context: "readout columns",
                expected: config.design_len(),
                actual: readout.ncols(),
            });
        }
        let mut model = Self {
            config,
            reservoirs,
            encoders,
            readout,
        };
        for r in &mut model.reservoirs {
            r.reset();
        }
        Ok(model)
    }

    pub fn config(&self) -> &DeepEsnConfig {
        &self.config
    }

    pub fn reservoirs(&self) -> &[ReservoirLayer] {
        &self.reservoirs
    }

    pub fn encoders(&self) -> &[FittedEncoder] {
        &self.encoders
    }

    pub fn readout(&self) -> &DMatrix<f64> {
        &self.readout
    }

    pub fn set_readout(&mut self, readout: DMatrix<f64>) -> Result<()> {
        if readout.ncols() != self.config.design_len() {
            return Err(Error::DimensionMismatch {
                context: "readout columns",
                expected: self.config.design_len(),
                actual: readout.ncols(),
            });
        }
        self.readout = readout;
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.readout.nrows()
    }

    /// Runs a fresh pass with frozen encoders and returns every layer's
    /// retained states.
    pub fn layer_states(&self, inputs: &DMatrix<f64>, washout: usize) -> Result<LayerStates> {
        check_inputs(&self.config, inputs)?;
        let mut reservoirs = self.reservoirs.clone();
        for r in &mut reservoirs {
            r.reset();
        }
        let (states, _) = cascade(&mut reservoirs, Encoders::Frozen(&self.encoders), inputs, washout)?;
        Ok(states)
    }

    /// Readout inputs of a fresh pass over `inputs`.
    pub fn collect(&self, inputs: &DMatrix<f64>, washout: usize) -> Result<StateCollection> {
        let states = self.layer_states(inputs, washout)?;
        let config = DeepEsnConfig {
            washout,
            ..self.config.clone()
        };
        Ok(assemble(&config, inputs, &states))
    }

    /// Predictions for steps `K * washout ..` of `inputs`, one row per step.
    pub fn predict(&self, inputs: &DMatrix<f64>, washout: usize) -> Result<DMatrix<f64>> {
        let collection = self.collect(inputs, washout)?;
        Ok((&self.readout * &collection.matrix).transpose())
    }

    /// Output for a single readout input vector.
    pub fn readout_output(&self, design_row: &DVector<f64>) -> DVector<f64> {
        &self.readout * design_row
    }
}
