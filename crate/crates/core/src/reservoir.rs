//! A single leaky-integrator echo-state reservoir.
//!
//! The recurrent matrix is drawn uniformly on `[-0.5, 0.5]`, sparsified to a
//! fraction `sparsity` of nonzero entries and rescaled so that its spectral
//! radius equals the requested value. The update is
//!
//! ```text
//! z      = tanh(W_res x(t) + W_in u(t+1))
//! x(t+1) = (1 - leak) x(t) + leak z
//! ```
//!
//! with no bias term and no output feedback.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::seed;

/// Below this spectral radius the rescaling `SR / lambda_max` is not trusted.
pub const MIN_SPECTRAL_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirParams {
    /// Number of reservoir units.
    pub size: usize,
    pub input_dim: usize,
    /// `W_in` entries are uniform on `[-input_scaling, input_scaling]`.
    pub input_scaling: f64,
    /// Target largest eigenvalue magnitude of `W_res`.
    pub spectral_radius: f64,
    pub leak_rate: f64,
    /// Fraction of structurally nonzero recurrent weights.
    pub sparsity: f64,
    pub seed: u64,
}

impl ReservoirParams {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(invalid("size", "must be positive"));
        }
        if self.input_dim == 0 {
            return Err(invalid("input_dim", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.input_scaling) {
            return Err(invalid(
                "input_scaling",
                format!("{} outside [0, 1]", self.input_scaling),
            ));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            return Err(invalid(
                "spectral_radius",
                format!("{} outside (0, 1)", self.spectral_radius),
            ));
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            return Err(invalid(
                "leak_rate",
                format!("{} outside (0, 1]", self.leak_rate),
            ));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(invalid(
                "sparsity",
                format!("{} outside (0, 1]", self.sparsity),
            ));
        }
        Ok(())
    }

    /// Number of nonzero recurrent weights kept after sparsification.
    pub fn nonzero_count(&self) -> usize {
        let total = self.size * self.size;
        ((self.sparsity * total as f64).round() as usize).clamp(1, total)
    }
}

/// Row-compressed copy of the recurrent matrix used by the update loop.
#[derive(Debug, Clone)]
struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut offsets = Vec::with_capacity(m.nrows() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            offsets.push(cols.len());
        }
        Self {
            offsets,
            cols,
            vals,
        }
    }

    /// `out += self * x`
    fn add_mul(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o += acc;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReservoirLayer {
    params: ReservoirParams,
    w_in: DMatrix<f64>,
    w_res: DMatrix<f64>,
    sparse: SparseRows,
    state: DVector<f64>,
    input_buf: DVector<f64>,
    pre_buf: DVector<f64>,
}

impl ReservoirLayer {
    /// Draws the fixed random weights for `params`.
    ///
    /// `W_in` is sampled first, then the positions and values of the
    /// recurrent weights, all from one ChaCha8 stream seeded by `params.seed`.
    pub fn new(params: ReservoirParams) -> Result<Self> {
        params.validate()?;
        let n = params.size;
        let mut rng = seed::rng(params.seed);

        let w_in = DMatrix::from_fn(n, params.input_dim, |_, _| {
            params.input_scaling * rng.random_range(-1.0..=1.0)
        });

        let mut positions = rand::seq::index::sample(&mut rng, n * n, params.nonzero_count())
            .into_vec();
        positions.sort_unstable();
        let mut w = DMatrix::zeros(n, n);
        for p in positions {
            w[(p / n, p % n)] = rng.random_range(-0.5..=0.5);
        }

        let lambda = linalg::spectral_radius(&w)?;
        if !(lambda >= MIN_SPECTRAL_RADIUS) {
            return Err(Error::DegenerateSpectrum(lambda));
        }
        let w_res = w * (params.spectral_radius / lambda);
        Ok(Self::assemble(params, w_in, w_res))
    }

    /// Builds a layer from explicit weights, bypassing sampling and
    /// spectral rescaling. Used when loading models and in diagnostics.
    pub fn from_weights(
        params: ReservoirParams,
        w_in: DMatrix<f64>,
        w_res: DMatrix<f64>,
    ) -> Result<Self> {
        let n = params.size;
        if w_in.shape() != (n, params.input_dim) {
            return Err(Error::DimensionMismatch {
                context: "input weights",
                expected: n * params.input_dim,
                actual: w_in.len(),
            });
        }
        if w_res.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "recurrent weights",
                expected: n * n,
                actual: w_res.len(),
            });
        }
        if w_in.iter().chain(w_res.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reservoir weights"));
        }
        Ok(Self::assemble(params, w_in, w_res))
    }

    fn assemble(params: ReservoirParams, w_in: DMatrix<f64>, w_res: DMatrix<f64>) -> Self {
        let n = params.size;
        Self {
            sparse: SparseRows::from_dense(&w_res),
            state: DVector::zeros(n),
            input_buf: DVector::zeros(params.input_dim),
            pre_buf: DVector::zeros(n),
            params,
            w_in,
            w_res,
        }
    }

    pub fn params(&self) -> &ReservoirParams {
        &self.params
    }

    pub fn size(&self) -> usize {
        self.params.size
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn recurrent_weights(&self) -> &DMatrix<f64> {
        &self.w_res
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.params.size {
            return Err(Error::DimensionMismatch {
                context: "reservoir state",
                expected: self.params.size,
                actual: state.len(),
            });
        }
        self.state.copy_from_slice(state);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    /// Advances the state by one input and returns the new state.
    pub fn step(&mut self, input: &[f64]) -> Result<&DVector<f64>> {
        if input.len() != self.params.input_dim {
            return Err(Error::DimensionMismatch {
                context: "reservoir input",
                expected: self.params.input_dim,
                actual: input.len(),
            });
        }
        self.input_buf.copy_from_slice(input);
        self.advance()
    }

    fn advance(&mut self) -> Result<&DVector<f64>> {
        self.pre_buf.gemv(1.0, &self.w_in, &self.input_buf, 0.0);
        self.sparse.add_mul(&self.state, &mut self.pre_buf);
        let leak = self.params.leak_rate;
        let keep = 1.0 - leak;
        let mut finite = true;
        for (x, p) in self.state.iter_mut().zip(self.pre_buf.iter()) {
            *x = keep * *x + leak * p.tanh();
            finite &= x.is_finite();
        }
        if !finite {
            return Err(Error::NonFinite("reservoir state"));
        }
        Ok(&self.state)
    }

    /// Drives the layer with the rows of `inputs` (one row per time step)
    /// from its current state and returns the states after the first
    /// `washout` steps, one row per retained step.
    pub fn run_sequence(&mut self, inputs: &DMatrix<f64>, washout: usize) -> Result<DMatrix<f64>> {
        let steps = inputs.nrows();
        if washout >= steps {
            return Err(Error::WashoutTooLong {
                washout,
                length: steps,
            });
        }
        if inputs.ncols() != self.params.input_dim {
            return Err(Error::DimensionMismatch {
                context: "reservoir input",
                expected: self.params.input_dim,
                actual: inputs.ncols(),
            });
        }
        let n = self.params.size;
        let mut out = DMatrix::zeros(steps - washout, n);
        for t in 0..steps {
            for (d, v) in self.input_buf.iter_mut().enumerate() {
                *v = inputs[(t, d)];
            }
            self.advance()?;
            if t >= washout {
                let row = t - washout;
                for (i, x) in self.state.iter().enumerate() {
                    out[(row, i)] = *x;
                }
            }
        }
        Ok(out)
    }
}
