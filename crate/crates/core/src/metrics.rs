//! Prediction error metrics. Multi-output series are flattened.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub nrmse: f64,
    /// Percent.
    pub mape: f64,
    pub n: usize,
    pub offset_applied: f64,
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "metric inputs",
            expected: y.len(),
            actual: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Empty("metric inputs"));
    }
    Ok(())
}

fn squared_error(y: &[f64], y_hat: &[f64]) -> f64 {
    y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok((squared_error(y, y_hat) / y.len() as f64).sqrt())
}

/// Root of squared error over the squared deviation of `y` from its mean.
pub fn nrmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if spread == 0.0 {
        return Err(Error::ConstantTarget);
    }
    Ok((squared_error(y, y_hat) / spread).sqrt())
}

/// Mean absolute percentage error, with `offset` added to both series first.
pub fn mape(y: &[f64], y_hat: &[f64], offset: f64) -> Result<f64> {
    check(y, y_hat)?;
    let mut total = 0.0;
    for (t, (a, b)) in y.iter().zip(y_hat).enumerate() {
        let (a, b) = (a + offset, b + offset);
        if a == 0.0 {
            return Err(Error::ZeroDenominator(t));
        }
        total += ((a - b) / a).abs();
    }
    Ok(100.0 * total / y.len() as f64)
}

impl MetricReport {
    pub fn compute(y: &[f64], y_hat: &[f64], mape_offset: f64) -> Result<Self> {
        Ok(Self {
            rmse: rmse(y, y_hat)?,
            nrmse: nrmse(y, y_hat)?,
            mape: mape(y, y_hat, mape_offset)?,
            n: y.len(),
            offset_applied: mape_offset,
        })
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
