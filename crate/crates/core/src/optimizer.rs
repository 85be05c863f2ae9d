//! Genetic search over per-layer (IS, SR, γ) and grid sweeps over
//! structural parameters.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::SeriesTask;
use crate::error::{Error, Result};
use crate::experiment::{self, Architecture, LayerHyper};
use crate::metrics::MetricReport;
use crate::persist::write_atomic;
use crate::seed::{derive_seed, rng};

/// Margin keeping mapped spectral radii inside (0, 1) and leak rates above 0.
pub const GENE_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub mutation_sigma: f64,
    pub elitism: usize,
    pub tournament_size: usize,
    /// Generations over which the best fitness must improve by more than
    /// `stagnation_tol` for the search to continue.
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 40,
            generations: 80,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_sigma: 0.1,
            elitism: 2,
            tournament_size: 3,
            stagnation_window: 10,
            stagnation_tol: 1e-9,
            seed: 0,
        }
    }
}

impl GaConfig {
    /// Small profile for quick runs.
    pub fn desk() -> Self {
        Self {
            population: 10,
            generations: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.population == 0 {
            errors.push("ga.population: must be positive".into());
        }
        if self.generations == 0 {
            errors.push("ga.generations: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            errors.push("ga.crossover_rate: outside [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            errors.push("ga.mutation_rate: outside [0, 1]".into());
        }
        if !(self.mutation_sigma > 0.0 && self.mutation_sigma.is_finite()) {
            errors.push("ga.mutation_sigma: must be positive".into());
        }
        if self.elitism > self.population {
            errors.push(format!(
                "ga.elitism: {} exceeds population {}",
                self.elitism, self.population
            ));
        }
        if self.tournament_size == 0 {
            errors.push("ga.tournament_size: must be positive".into());
        }
    }

    fn check(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.validate(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

/// JSON cannot hold infinities; failed evaluations serialize as `null`.
mod fitness_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genes: Vec<f64>,
    /// Lower is better; `+∞` marks a failed evaluation.
    #[serde(with = "fitness_serde")]
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    #[serde(with = "fitness_serde")]
    pub best: f64,
    /// Mean over finite fitness values.
    #[serde(with = "fitness_serde")]
    pub mean: f64,
    pub best_genes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub generation: usize,
    pub best_genes: Vec<f64>,
    #[serde(with = "fitness_serde")]
    pub best_fitness: f64,
    #[serde(with = "fitness_serde")]
    pub mean_fitness: f64,
    pub config: GaConfig,
    pub population: Vec<Individual>,
    pub history: Vec<GenerationStats>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: Individual,
    pub history: Vec<GenerationStats>,
}

/// Where and whether to checkpoint a search.
#[derive(Debug, Clone, Default)]
pub struct Checkpointing {
    pub path: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
}

fn tournament<'a, R: Rng>(pop: &'a [Individual], size: usize, rng: &mut R) -> &'a Individual {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if c.fitness < best.fitness {
            best = c;
        }
    }
    best
}

/// Sorted by fitness with ties broken by position.
fn ranked(pop: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness).then(a.cmp(&b)));
    idx
}

/// Elites keep their fitness; offspring carry `None` until evaluated.
fn breed(pop: &[Individual], ga: &GaConfig, generation: usize) -> Vec<(Vec<f64>, Option<f64>)> {
    let mut rng = rng(derive_seed(ga.seed, generation as u64));
    let noise = Normal::new(0.0, ga.mutation_sigma).expect("sigma validated");
    let mut next: Vec<(Vec<f64>, Option<f64>)> = ranked(pop)
        .into_iter()
        .take(ga.elitism)
        .map(|i| (pop[i].genes.clone(), Some(pop[i].fitness)))
        .collect();
    while next.len() < ga.population {
        let a = tournament(pop, ga.tournament_size, &mut rng);
        let b = tournament(pop, ga.tournament_size, &mut rng);
        let mut child = if rng.random::<f64>() < ga.crossover_rate {
            a.genes
                .iter()
                .zip(&b.genes)
                .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
                .collect()
        } else {
            a.genes.clone()
        };
        for g in &mut child {
            if rng.random::<f64>() < ga.mutation_rate {
                *g = (*g + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        next.push((child, None));
    }
    next
}

fn evaluate<F>(candidates: Vec<(Vec<f64>, Option<f64>)>, fitness: &F) -> Vec<Individual>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    candidates
        .into_par_iter()
        .map(|(genes, known)| {
            let f = known.unwrap_or_else(|| fitness(&genes));
            Individual {
                fitness: if f.is_nan() { f64::INFINITY } else { f },
                genes,
            }
        })
        .collect()
}

fn stats(pop: &[Individual], generation: usize) -> GenerationStats {
    let best = &pop[ranked(pop)[0]];
    let finite: Vec<f64> = pop.iter().map(|i| i.fitness).filter(|f| f.is_finite()).collect();
    let mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    GenerationStats {
        generation,
        best: best.fitness,
        mean,
        best_genes: best.genes.clone(),
    }
}

/// Minimizes `fitness` over `[0, 1]^n_genes`.
///
/// Generation `g` draws from a stream derived from `(ga.seed, g)`, so a run
/// resumed from the checkpoint of generation `g` continues exactly as the
/// uninterrupted run would.
pub fn evolve_with<F>(n_genes: usize, ga: &GaConfig, fitness: F, checkpointing: &Checkpointing) -> Result<GaOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    ga.check()?;
    if n_genes == 0 {
        return Err(Error::Empty("genome"));
    }
    let (mut pop, mut history) = match &checkpointing.resume {
        Some(cp) => {
            if cp.population.iter().any(|i| i.genes.len() != n_genes) {
                return Err(Error::DimensionMismatch {
                    context: "checkpoint genome",
                    expected: n_genes,
                    actual: cp.population.first().map_or(0, |i| i.genes.len()),
                });
            }
            (cp.population.clone(), cp.history.clone())
        }
        None => {
            let mut r = rng(derive_seed(ga.seed, 0));
            let init = (0..ga.population)
                .map(|_| ((0..n_genes).map(|_| r.random::<f64>()).collect(), None))
                .collect();
            let pop = evaluate(init, &fitness);
            let h = vec![stats(&pop, 0)];
            (pop, h)
        }
    };

    loop {
        let g = history.len() - 1;
        if let Some(path) = &checkpointing.path {
            let last = history.last().expect("nonempty history");
            let cp = Checkpoint {
                generation: g,
                best_genes: last.best_genes.clone(),
                best_fitness: last.best,
                mean_fitness: last.mean,
                config: ga.clone(),
                population: pop.clone(),
                history: history.clone(),
            };
            write_atomic(path, &serde_json::to_vec_pretty(&cp)?)?;
        }
        log::info!("generation {g}: best {:.6e}", history[g].best);
        if g + 1 >= ga.generations {
            break;
        }
        let w = ga.stagnation_window;
        if w > 0 && g >= w && history[g - w].best - history[g].best < ga.stagnation_tol {
            log::info!("stopping after generation {g}: no improvement over {w} generations");
            break;
        }
        pop = evaluate(breed(&pop, ga, g + 1), &fitness);
        history.push(stats(&pop, g + 1));
    }
    let best = pop[ranked(&pop)[0]].clone();
    Ok(GaOutcome { best, history })
}

/// Decodes a genome of `3K` genes into per-layer hyperparameters.
pub fn genes_to_hyper(genes: &[f64]) -> Vec<LayerHyper> {
    genes
        .chunks_exact(3)
        .map(|g| LayerHyper {
            input_scaling: g[0],
            spectral_radius: GENE_EPS + g[1] * (1.0 - 2.0 * GENE_EPS),
            leak_rate: GENE_EPS + g[2] * (1.0 - GENE_EPS),
        })
        .collect()
}

/// Inverse of [`genes_to_hyper`], clamped to the gene bounds.
pub fn hyper_to_genes(hyper: &[LayerHyper]) -> Vec<f64> {
    hyper
        .iter()
        .flat_map(|h| {
            [
                h.input_scaling,
                (h.spectral_radius - GENE_EPS) / (1.0 - 2.0 * GENE_EPS),
                (h.leak_rate - GENE_EPS) / (1.0 - GENE_EPS),
            ]
        })
        .map(|g| g.clamp(0.0, 1.0))
        .collect()
}

/// Searches the per-layer hyperparameters of `arch` on `task`. Every
/// individual uses the same reservoir and encoder seed, `model_seed`.
pub fn evolve(
    task: &SeriesTask,
    arch: &Architecture,
    ga: &GaConfig,
    model_seed: u64,
    checkpointing: &Checkpointing,
) -> Result<GaOutcome> {
    if task.split.validate == 0 {
        return Err(Error::Empty("validation split"));
    }
    let fitness = |genes: &[f64]| {
        let hyper = genes_to_hyper(genes);
        arch.build(&hyper, task.inputs.ncols(), task.washout, model_seed)
            .and_then(|config| experiment::validation_rmse(task, &config))
            .unwrap_or_else(|e| {
                log::debug!("fitness evaluation failed: {e}");
                f64::INFINITY
            })
    };
    evolve_with(3 * arch.depth, ga, fitness, checkpointing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepAxis {
    Depth { from: usize, to: usize },
    EncoderSize { from: usize, to: usize, step: usize },
    ReservoirSize { from: usize, to: usize, step: usize },
}

impl SweepAxis {
    pub fn depth() -> Self {
        Self::Depth { from: 2, to: 8 }
    }

    pub fn encoder_size() -> Self {
        Self::EncoderSize {
            from: 10,
            to: 300,
            step: 10,
        }
    }

    pub fn reservoir_size() -> Self {
        Self::ReservoirSize {
            from: 100,
            to: 1000,
            step: 100,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Depth { .. } => "depth",
            Self::EncoderSize { .. } => "encoder_size",
            Self::ReservoirSize { .. } => "reservoir_size",
        }
    }

    /// Inclusive grid.
    pub fn grid(&self) -> Vec<usize> {
        let (from, to, step) = match *self {
            Self::Depth { from, to } => (from, to, 1),
            Self::EncoderSize { from, to, step } | Self::ReservoirSize { from, to, step } => (from, to, step),
        };
        (from..=to).step_by(step.max(1)).collect()
    }

    pub fn apply(&self, base: &Architecture, value: usize) -> Architecture {
        let mut a = base.clone();
        match self {
            Self::Depth { .. } => a.depth = value,
            Self::EncoderSize { .. } => a.encoder_size = value,
            Self::ReservoirSize { .. } => a.reservoir_size = value,
        }
        a
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

/// Trains and scores one model per grid point on the test split. Failed
/// points are recorded and the sweep continues.
pub fn sweep(
    task: &SeriesTask,
    axis: SweepAxis,
    base: &Architecture,
    hyper: &[LayerHyper],
    seed: u64,
    mape_offset: f64,
) -> Vec<SweepRow> {
    axis.grid()
        .into_par_iter()
        .map(|value| {
            let arch = axis.apply(base, value);
            match experiment::run_repetition(task, &arch, hyper, seed, mape_offset) {
                Ok(t) => SweepRow {
                    value,
                    report: Some(t.test),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep {} = {value} failed: {e}", axis.name());
                    SweepRow {
                        value,
                        report: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}

/// CSV table with columns `<axis>,rmse,nrmse,mape,error`.
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([axis.name(), "rmse", "nrmse", "mape", "error"]).map_err(io)?;
    for r in rows {
        let num = |f: fn(&MetricReport) -> f64| r.report.as_ref().map(|m| format!("{:e}", f(m))).unwrap_or_default();
        w.write_record([
            r.value.to_string(),
            num(|m| m.rmse),
            num(|m| m.nrmse),
            num(|m| m.mape),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}
