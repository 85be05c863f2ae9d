//! Collinearity, stability and memory diagnostics of trained stacks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::reservoir::ReservoirLayer;
use crate::seed::derive_seed;
use crate::stack::DeepEsnModel;

/// Relative singular-value floor below which a matrix counts as singular.
pub const RANK_TOL: f64 = 1e-14;

/// Stream used to seed the reference single-layer reservoir.
const REFERENCE_STREAM: u64 = 0x5eed_0e5a;

/// Ratio of extreme singular values; `+∞` for numerically singular input.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Empty("state matrix"));
    }
    let s = linalg::singular_values(m);
    let max = s[0];
    let min = s[s.len() - 1];
    if max == 0.0 || min < RANK_TOL * max {
        Ok(f64::INFINITY)
    } else {
        Ok(max / min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondEntry {
    /// `R1, E1, R2, ...`
    pub label: String,
    pub cond: f64,
    pub log10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondReport {
    pub entries: Vec<CondEntry>,
}

impl CondReport {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.cond)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,cond,log10\n");
        for e in &self.entries {
            s.push_str(&format!("{},{:e},{}\n", e.label, e.cond, e.log10));
        }
        s
    }
}

fn entry(label: String, m: &DMatrix<f64>) -> Result<CondEntry> {
    let cond = condition_number(m)?;
    Ok(CondEntry {
        label,
        cond,
        log10: cond.log10(),
    })
}

/// Condition numbers of every reservoir's retained states and every
/// encoder's outputs over a fresh pass, in stack order.
pub fn condition_analysis(model: &DeepEsnModel, inputs: &DMatrix<f64>, washout: usize) -> Result<CondReport> {
    let states = model.layer_states(inputs, washout)?;
    let mut entries = Vec::new();
    for (i, r) in states.reservoirs.iter().enumerate() {
        entries.push(entry(format!("R{}", i + 1), r)?);
        if let Some(e) = states.encoders.get(i) {
            entries.push(entry(format!("E{}", i + 1), e)?);
        }
    }
    Ok(CondReport { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStability {
    pub layer: usize,
    pub max_singular_value: f64,
    /// `max_singular_value < 1`, sufficient for the echo state property.
    pub satisfies: bool,
    pub spectral_radius: f64,
    /// `spectral_radius < 1`, necessary for a zero-input stable reservoir.
    pub spectral_radius_ok: bool,
}

pub fn check_layer(layer: usize, w: &DMatrix<f64>) -> Result<LayerStability> {
    let sigma = linalg::max_singular_value(w);
    let rho = linalg::spectral_radius(w)?;
    Ok(LayerStability {
        layer,
        max_singular_value: sigma,
        satisfies: sigma < 1.0,
        spectral_radius: rho,
        spectral_radius_ok: rho < 1.0,
    })
}

pub fn check_esp(model: &DeepEsnModel) -> Result<Vec<LayerStability>> {
    model
        .reservoirs()
        .iter()
        .enumerate()
        .map(|(i, r)| check_layer(i + 1, r.recurrent_weights()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSettings {
    pub perturb_step: usize,
    pub magnitude: f64,
    pub horizon: usize,
}

impl Default for PerturbSettings {
    fn default() -> Self {
        Self {
            perturb_step: 200,
            magnitude: 0.1,
            horizon: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbTrace {
    pub perturb_step: usize,
    pub perturb_magnitude: f64,
    /// `deltas[i][t]` is the state distance of layer `i + 1` at step `t`.
    pub deltas: Vec<Vec<f64>>,
    /// Same measurement for a single reservoir with the first layer's
    /// hyperparameters.
    pub reference: Vec<f64>,
}

impl PerturbTrace {
    /// Long-format CSV `t,layer,delta` starting at `from`; the reference
    /// reservoir is labelled `esn`.
    pub fn to_csv(&self, from: usize) -> String {
        let mut s = String::from("t,layer,delta\n");
        for (i, d) in self.deltas.iter().enumerate() {
            for (t, v) in d.iter().enumerate().skip(from) {
                s.push_str(&format!("{t},{},{v:e}\n", i + 1));
            }
        }
        for (t, v) in self.reference.iter().enumerate().skip(from) {
            s.push_str(&format!("{t},esn,{v:e}\n"));
        }
        s
    }
}

fn row_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    (0..a.nrows()).map(|t| (a.row(t) - b.row(t)).norm()).collect()
}

/// Drives the model from rest with a scalar series and with a copy whose
/// value at `perturb_step` is shifted by `magnitude`, and records each
/// layer's state distance over the first `horizon` steps.
pub fn perturbation_trace(model: &DeepEsnModel, series: &[f64], settings: PerturbSettings) -> Result<PerturbTrace> {
    let PerturbSettings {
        perturb_step,
        magnitude,
        horizon,
    } = settings;
    if perturb_step >= horizon {
        return Err(crate::error::invalid("perturb_step", "must precede the horizon"));
    }
    if series.len() < horizon {
        return Err(Error::DimensionMismatch {
            context: "perturbation series length",
            expected: horizon,
            actual: series.len(),
        });
    }
    if model.config().input_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "perturbation input dimension",
            expected: 1,
            actual: model.config().input_dim(),
        });
    }
    let s = DMatrix::from_column_slice(horizon, 1, &series[..horizon]);
    let mut s2 = s.clone();
    s2[(perturb_step, 0)] += magnitude;

    let a = model.layer_states(&s, 0)?;
    let b = model.layer_states(&s2, 0)?;
    let deltas = a
        .reservoirs
        .iter()
        .zip(&b.reservoirs)
        .map(|(x, y)| row_distances(x, y))
        .collect();

    let mut params = *model.reservoirs()[0].params();
    params.seed = derive_seed(params.seed, REFERENCE_STREAM);
    let mut esn = ReservoirLayer::new(params)?;
    let x = esn.run_sequence(&s, 0)?;
    esn.reset();
    let y = esn.run_sequence(&s2, 0)?;

    Ok(PerturbTrace {
        perturb_step,
        perturb_magnitude: magnitude,
        deltas,
        reference: row_distances(&x, &y),
    })
}
