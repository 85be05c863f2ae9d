//! Unsupervised dimension-reduction layers placed between reservoirs.
//!
//! All encoders are linear maps `x -> W_enc (x - mean)`; only PCA uses a
//! nonzero mean. An encoder is fitted once on the training echo states of
//! the reservoir below it and is frozen afterwards.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::seed;

/// Default ridge coefficient of the ELM autoencoder decoder solve.
pub const DEFAULT_ELM_LAMBDA: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Pca,
    ElmAe,
    #[serde(rename = "rp")]
    RandomProjection,
    Identity,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Pca => "pca",
            EncoderKind::ElmAe => "elm_ae",
            EncoderKind::RandomProjection => "rp",
            EncoderKind::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Ridge coefficient, used by the ELM autoencoder only.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub seed: u64,
}

fn default_lambda() -> f64 {
    DEFAULT_ELM_LAMBDA
}

impl EncoderSpec {
    pub fn new(kind: EncoderKind, input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self {
            kind,
            input_dim,
            output_dim,
            lambda: DEFAULT_ELM_LAMBDA,
            seed,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(EncoderKind::Identity, dim, dim, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid("encoder.input_dim", "must be positive"));
        }
        if self.output_dim == 0 {
            return Err(invalid("encoder.output_dim", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("encoder.lambda", "must be finite and nonnegative"));
        }
        match self.kind {
            EncoderKind::Pca if self.output_dim > self.input_dim => Err(invalid(
                "encoder.output_dim",
                format!(
                    "PCA cannot produce {} components from {} dimensions",
                    self.output_dim, self.input_dim
                ),
            )),
            EncoderKind::Identity if self.output_dim != self.input_dim => Err(invalid(
                "encoder.output_dim",
                "identity encoder must preserve the dimension",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedEncoder {
    spec: EncoderSpec,
    weights: DMatrix<f64>,
    mean: DVector<f64>,
}

impl FittedEncoder {
    /// Fits an encoder to `states`, one row per time step.
    pub fn fit(spec: EncoderSpec, states: &DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        if states.ncols() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "encoder fit",
                expected: spec.input_dim,
                actual: states.ncols(),
            });
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder training states"));
        }
        let needs_data = matches!(spec.kind, EncoderKind::Pca | EncoderKind::ElmAe);
        if needs_data && states.nrows() < 2 {
            return Err(invalid(
                "states",
                format!("{} needs at least two samples", spec.kind.as_str()),
            ));
        }
        let n = spec.input_dim;
        let (weights, mean) = match spec.kind {
            EncoderKind::Pca => fit_pca(spec.output_dim, states),
            EncoderKind::ElmAe => (fit_elm_ae(&spec, states)?, DVector::zeros(n)),
            EncoderKind::RandomProjection => {
                (achlioptas_matrix(spec.output_dim, n, spec.seed), DVector::zeros(n))
            }
            EncoderKind::Identity => (DMatrix::identity(n, n), DVector::zeros(n)),
        };
        Ok(Self {
            spec,
            weights,
            mean,
        })
    }

    /// Reassembles a fitted encoder from stored parts.
    pub fn from_parts(spec: EncoderSpec, weights: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        spec.validate()?;
        if weights.shape() != (spec.output_dim, spec.input_dim) {
            return Err(Error::DimensionMismatch {
                context: "encoder weights",
                expected: spec.output_dim * spec.input_dim,
                actual: weights.len(),
            });
        }
        if mean.len() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "encoder mean",
                expected: spec.input_dim,
                actual: mean.len(),
            });
        }
        Ok(Self {
            spec,
            weights,
            mean,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn encode(&self, state: &[f64]) -> Result<DVector<f64>> {
        if state.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "encoder input",
                expected: self.spec.input_dim,
                actual: state.len(),
            });
        }
        let x = DVector::from_column_slice(state);
        Ok(match self.spec.kind {
            EncoderKind::Identity => x,
            _ => &self.weights * (x - &self.mean),
        })
    }

    /// Encodes every row of `states`.
    pub fn encode_rows(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if states.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "encoder input",
                expected: self.spec.input_dim,
                actual: states.ncols(),
            });
        }
        Ok(match self.spec.kind {
            EncoderKind::Identity => states.clone(),
            EncoderKind::Pca => {
                let mut centered = states.clone();
                for mut row in centered.row_iter_mut() {
                    row -= self.mean.transpose();
                }
                centered * self.weights.transpose()
            }
            _ => states * self.weights.transpose(),
        })
    }
}

/// Leading principal axes of the centred data, one per row.
fn fit_pca(components: usize, states: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = states.ncols();
    let mean = states.row_mean().transpose();
    let mut centered = states.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    // Scatter-matrix eigenvectors, taken as right singular vectors of the
    // QR factor so that weak components keep full relative precision.
    let factor = if centered.nrows() > n { centered.qr().r() } else { centered };
    let svd = factor.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let top = order.first().map_or(0.0, |&i| sv[i]);
    let floor = top * 1e-13;
    let mut weights = DMatrix::zeros(components, n);
    let mut missing = components.saturating_sub(order.len());
    for (row, &idx) in order.iter().take(components).enumerate() {
        if !(sv[idx] > floor) {
            missing += 1;
            continue;
        }
        let mut v = v_t.row(idx).transpose();
        let peak = v.amax();
        let lead = v
            .iter()
            .position(|x| x.abs() >= peak * (1.0 - 1e-12))
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        weights.row_mut(row).copy_from(&v.transpose());
    }
    if missing > 0 {
        log::warn!(
            "PCA: only {} of {} requested components have positive variance; {} rows set to zero",
            components - missing,
            components,
            missing
        );
    }
    (weights, mean)
}

/// Transposed ridge decoder of a random tanh hidden layer.
fn fit_elm_ae(spec: &EncoderSpec, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = (spec.output_dim, spec.input_dim);
    let mut rng = seed::rng(spec.seed);
    let w0 = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..=1.0));
    let b0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0));

    // Hidden activations, one row per sample.
    let mut hidden = states * w0.transpose();
    for mut row in hidden.row_iter_mut() {
        row += b0.transpose();
    }
    hidden.apply(|h| *h = h.tanh());

    // W* = X H^T (H H^T + lambda I)^-1, so W_enc = W*^T solves
    // (H H^T + lambda I) W_enc = H X.
    let mut gram = hidden.tr_mul(&hidden);
    for i in 0..m {
        gram[(i, i)] += spec.lambda;
    }
    let rhs = hidden.tr_mul(states);
    linalg::solve_spd(gram, &rhs)
}

/// Sparse three-point random matrix: `sqrt(3)` times +1 or -1 with
/// probability 1/6 each, 0 with probability 2/3.
fn achlioptas_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let scale = 3f64.sqrt();
    let mut rng = seed::rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| match rng.random_range(0..6u8) {
        0 => scale,
        1 => -scale,
        _ => 0.0,
    })
}
