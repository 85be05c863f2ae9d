//! Benchmark series: Mackey-Glass, tenth-order NARMA, CSV ingestion,
//! smoothing and supervised task construction.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::persist::write_atomic;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MackeyGlassParams {
    pub tau: f64,
    /// Integration step; `1 / delta` internal steps per emitted point.
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub n: f64,
    /// Constant initial history.
    pub history: f64,
    /// Half-width of the uniform jitter added to each history value.
    pub jitter: f64,
    /// Emitted points discarded before the returned series starts.
    pub transient: usize,
}

impl Default for MackeyGlassParams {
    fn default() -> Self {
        Self {
            tau: 17.0,
            delta: 0.1,
            a: 0.2,
            b: -0.1,
            n: 10.0,
            history: 1.2,
            jitter: 0.01,
            transient: 1000,
        }
    }
}

fn integral_ratio(num: f64, den: f64, name: &'static str) -> Result<usize> {
    let r = num / den;
    let k = r.round();
    if !(k >= 1.0) || (r - k).abs() > 1e-9 * k {
        return Err(invalid(name, format!("{num} is not a positive multiple of delta {den}")));
    }
    Ok(k as usize)
}

/// Integrates `dy/dt = a y(t - tau) / (1 + y(t - tau)^n) + b y(t)` with RK4
/// at step `delta`, holding the delayed term constant over each step, and
/// returns `length` unit-spaced samples after the transient.
pub fn mackey_glass(length: usize, params: &MackeyGlassParams, seed: u64) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(invalid("length", "must be positive"));
    }
    if !(params.tau > 0.0) {
        return Err(invalid("tau", "must be positive"));
    }
    if !(params.delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    let per_unit = integral_ratio(1.0, params.delta, "delta")?;
    let delay = integral_ratio(params.tau, params.delta, "tau")?;
    let h = params.delta;

    let mut rng = seed::rng(seed);
    // buffer[k % len] holds y at internal step k - delay.
    let len = delay + 1;
    let mut buffer: Vec<f64> = (0..len)
        .map(|_| {
            let j = if params.jitter > 0.0 {
                rng.random_range(-params.jitter..=params.jitter)
            } else {
                0.0
            };
            params.history + j
        })
        .collect();
    let mut y = buffer[len - 1];

    let total = params.transient + length;
    let mut out = Vec::with_capacity(length);
    let mut step = 0usize;
    for emitted in 0..total {
        if emitted >= params.transient {
            out.push(y);
        }
        if emitted + 1 == total {
            break;
        }
        for _ in 0..per_unit {
            let delayed = buffer[step % len];
            let drive = params.a * delayed / (1.0 + delayed.powf(params.n));
            let f = |v: f64| drive + params.b * v;
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            // Slot of step - delay is reused for step + 1.
            buffer[step % len] = y;
            step += 1;
        }
        if !y.is_finite() {
            return Err(Error::NonFinite("Mackey-Glass integration"));
        }
    }
    Ok(out)
}

/// Tenth-order NARMA output for a given input sequence; the first ten
/// outputs are zero.
pub fn narma10_from_inputs(u: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; u.len()];
    for t in 9..u.len().saturating_sub(1) {
        let window: f64 = y[t - 9..=t].iter().sum();
        y[t + 1] = 0.3 * y[t] + 0.05 * y[t] * window + 1.5 * u[t - 9] * u[t] + 0.1;
    }
    y
}

/// Inputs uniform on `[0, 0.5]` and the corresponding NARMA-10 outputs.
pub fn narma10(length: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if length <= 10 {
        return Err(invalid("length", "NARMA-10 needs more than 10 steps"));
    }
    let mut rng = seed::rng(seed);
    let u: Vec<f64> = (0..length).map(|_| rng.random_range(0.0..=0.5)).collect();
    let y = narma10_from_inputs(&u);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("NARMA-10 recurrence"));
    }
    Ok((u, y))
}

/// Column selector for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

/// Reads one numeric column. A first row whose selected field is not a
/// number is treated as a header.
pub fn load_csv(path: &Path, column: &Column) -> Result<Vec<f64>> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut index = match column {
        Column::Index(i) => Some(*i),
        Column::Name(_) => None,
    };
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        let Some(idx) = index else {
            let Column::Name(name) = column else { unreachable!() };
            let found = record.iter().position(|f| f == name);
            index = Some(found.ok_or_else(|| parse_err(line, format!("no column named `{name}`")))?);
            continue;
        };
        let field = record
            .get(idx)
            .ok_or_else(|| parse_err(line, format!("missing column {idx}")))?;
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if row == 0 => continue,
            _ => return Err(parse_err(line, format!("`{field}` is not a finite number"))),
        }
    }
    if values.is_empty() {
        return Err(Error::Empty("CSV series"));
    }
    Ok(values)
}

/// Centred moving average. Near the ends the window shrinks symmetrically
/// so every output stays centred on its own sample.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(invalid("window", format!("{window} is not a positive odd number")));
    }
    let half = window / 2;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let r = half.min(i).min(n - 1 - i);
            let slice = &series[i - r..=i + r];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub validate: usize,
    pub test: usize,
}

impl Split {
    pub fn total(&self) -> usize {
        self.train + self.validate + self.test
    }
}

/// A one-dimensional supervised forecasting task.
#[derive(Debug, Clone)]
pub struct SeriesTask {
    pub name: String,
    /// `T x 1`
    pub inputs: DMatrix<f64>,
    /// `T x 1`, `targets[t] = series[t + horizon]`
    pub targets: DMatrix<f64>,
    pub horizon: usize,
    pub split: Split,
    pub washout: usize,
}

impl SeriesTask {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.split.train
    }

    pub fn validate_range(&self) -> std::ops::Range<usize> {
        self.split.train..self.split.train + self.split.validate
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        let start = self.split.train + self.split.validate;
        start..start + self.split.test
    }
}

/// Pairs `u(t) = series[t]` with `d(t) = series[t + horizon]` over the
/// first `split.total()` steps.
pub fn make_task(
    name: &str,
    series: &[f64],
    horizon: usize,
    split: Split,
    washout: usize,
) -> Result<SeriesTask> {
    let usable = series.len().saturating_sub(horizon);
    if split.total() > usable || split.total() == 0 {
        return Err(Error::SplitOverflow {
            train: split.train,
            validate: split.validate,
            test: split.test,
            available: usable,
        });
    }
    let t = split.total();
    Ok(SeriesTask {
        name: name.to_string(),
        inputs: DMatrix::from_fn(t, 1, |i, _| series[i]),
        targets: DMatrix::from_fn(t, 1, |i, _| series[i + horizon]),
        horizon,
        split,
        washout,
    })
}

/// Writes named columns as CSV next to a `<path>.meta.json` sidecar.
pub fn export_csv<M: Serialize>(path: &Path, columns: &[(&str, &[f64])], metadata: &M) -> Result<()> {
    let rows = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != rows) {
        return Err(invalid("columns", "all columns must have the same length"));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    writer
        .write_record(columns.iter().map(|c| c.0))
        .map_err(to_io)?;
    for i in 0..rows {
        writer
            .write_record(columns.iter().map(|c| format!("{:?}", c.1[i])))
            .map_err(to_io)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)?;
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    write_atomic(Path::new(&meta), &serde_json::to_vec_pretty(metadata)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn linear_decay_matches_exponential() {
        let params = MackeyGlassParams {
            a: 0.0,
            jitter: 0.0,
            transient: 0,
            ..Default::default()
        };
        let y = mackey_glass(11, &params, 0).unwrap();
        for (t, v) in y.iter().enumerate() {
            let exact = 1.2 * (-0.1 * t as f64).exp();
            assert!((v - exact).abs() < 1e-6, "t={t}: {v} vs {exact}");
        }
    }

    #[test]
    fn mackey_glass_is_deterministic() {
        let p = MackeyGlassParams {
            transient: 50,
            ..Default::default()
        };
        let a = mackey_glass(200, &p, 5).unwrap();
        assert_eq!(a, mackey_glass(200, &p, 5).unwrap());
        assert_ne!(a, mackey_glass(200, &p, 6).unwrap());
    }

    #[test]
    fn mackey_glass_is_aperiodic() {
        let y = mackey_glass(2000, &MackeyGlassParams::default(), 1).unwrap();
        // Largest deviation from every period-k cycle, k <= 50.
        for k in 1..=50 {
            let dev = (k..y.len()).map(|t| (y[t] - y[t - k]).abs()).fold(0.0, f64::max);
            assert!(dev > 1e-3, "period {k} deviation {dev}");
        }
    }

    #[test]
    fn mackey_glass_rejects_bad_params() {
        let bad = MackeyGlassParams {
            tau: 0.0,
            ..Default::default()
        };
        assert!(mackey_glass(10, &bad, 0).is_err());
        let bad = MackeyGlassParams {
            delta: 0.3,
            ..Default::default()
        };
        assert!(mackey_glass(10, &bad, 0).is_err());
    }

    #[test]
    fn narma_initial_zeros_and_first_step() {
        let (u, y) = narma10(50, 3).unwrap();
        assert!(y[..10].iter().all(|&v| v == 0.0));
        assert_eq!(y[10], 1.5 * u[0] * u[9] + 0.1);
        assert!(u.iter().all(|v| (0.0..=0.5).contains(v)));
    }

    #[test]
    fn narma_zero_input_converges_to_fixed_point() {
        // With u = 0 the recurrence is y <- 0.3 y + 0.05 y * 10 y + 0.1 at
        // rest, whose stable root solves 0.5 y^2 - 0.7 y + 0.1 = 0.
        let y = narma10_from_inputs(&vec![0.0; 2000]);
        let root = 0.7 - (0.49f64 - 0.2).sqrt();
        assert!((y[1999] - root).abs() < 1e-12);
    }

    #[test]
    fn narma_length_checked() {
        assert!(narma10(10, 0).is_err());
    }

    #[test]
    fn smoothing_cases() {
        let s = [1.0, 5.0, -2.0, 7.0];
        assert_eq!(smooth(&s, 1).unwrap(), s);
        assert_eq!(smooth(&[3.5; 9], 5).unwrap(), vec![3.5; 9]);
        let m = smooth(&[1.0, 2.0, 3.0, 4.0, 5.0], 5).unwrap();
        assert_eq!(m[2], 3.0);
        // Edges shrink symmetrically.
        assert_eq!(m[0], 1.0);
        assert_eq!(m[1], 2.0);
        assert!(smooth(&s, 4).is_err());
        assert!(smooth(&s, 0).is_err());
    }

    #[test]
    fn task_alignment() {
        let s: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let split = Split {
            train: 50,
            validate: 20,
            test: 16,
        };
        let task = make_task("ramp", &s, 14, split, 3).unwrap();
        assert_eq!(task.len(), 86);
        for t in 0..task.len() {
            assert_eq!(task.targets[(t, 0)], task.inputs[(t, 0)] + 14.0);
        }
        assert_eq!(task.test_range(), 70..86);
        let over = Split { test: 17, ..split };
        assert!(matches!(
            make_task("ramp", &s, 14, over, 3),
            Err(Error::SplitOverflow { .. })
        ));
    }

    #[test]
    fn csv_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "date,value\n1981-01-01,20.7\n1981-01-02,17.9\n1981-01-03,18.8").unwrap();
        drop(f);
        assert_eq!(
            load_csv(&path, &Column::Name("value".into())).unwrap(),
            vec![20.7, 17.9, 18.8]
        );
        assert_eq!(load_csv(&path, &Column::Index(1)).unwrap(), vec![20.7, 17.9, 18.8]);

        let bare = dir.path().join("b.csv");
        std::fs::write(&bare, "1.5\n2.5\n").unwrap();
        assert_eq!(load_csv(&bare, &Column::Index(0)).unwrap(), vec![1.5, 2.5]);
    }

    #[test]
    fn csv_parse_error_has_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "v\n1.0\n2.0\nabc\n").unwrap();
        match load_csv(&path, &Column::Index(0)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn export_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        export_csv(&path, &[("t", &[0.0, 1.0]), ("y", &[0.5, 0.25])], &serde_json::json!({"seed": 3}))
            .unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body, "t,y\n0.0,0.5\n1.0,0.25\n");
        let meta = std::fs::read_to_string(dir.path().join("out.csv.meta.json")).unwrap();
        assert!(meta.contains("\"seed\": 3"));
    }
}
