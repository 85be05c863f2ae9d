use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use deep_esn::datasets::{self, SeriesTask};
use deep_esn::diagnostics::{self, PerturbSettings};
use deep_esn::experiment::{self, ExperimentConfig, Hyperparameters, LayerHyper};
use deep_esn::optimizer::{self, Checkpoint, Checkpointing, SweepAxis};
use deep_esn::persist::{self, write_atomic};
use deep_esn::{DeepEsnModel, Error, Result};

const OUTPUT_ENV: &str = "DEEP_ESN_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "deep-esn", version, about = "Deep echo state network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment description (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config leaf, e.g. `--set dataset.washout=50`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Output directory. Defaults to the config's `output_dir`, then
    /// `$DEEP_ESN_OUTPUT_DIR/<name>`, then `runs/<name>`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the prepared dataset as CSV with a metadata sidecar.
    Dataset(ConfigArgs),
    /// Train and evaluate `run.repetitions` models.
    Train(ConfigArgs),
    /// Score a saved model on a split of the configured dataset.
    Eval {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Genetic search of per-layer hyperparameters.
    Optimize {
        #[command(flatten)]
        args: ConfigArgs,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score one model per grid point along an axis.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, value_enum)]
        axis: AxisName,
        #[arg(long)]
        from: Option<usize>,
        #[arg(long)]
        to: Option<usize>,
        #[arg(long)]
        step: Option<usize>,
    },
    /// Condition numbers, stability checks or perturbation traces.
    Diagnose {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: DiagnoseKind,
        #[arg(long, default_value_t = 200)]
        perturb_step: usize,
        #[arg(long, default_value_t = 0.1)]
        magnitude: f64,
        #[arg(long, default_value_t = 300)]
        horizon: usize,
        /// Emit the whole trace instead of starting 20 steps before the
        /// perturbation.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Validate,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisName {
    Depth,
    EncoderSize,
    ReservoirSize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagnoseKind {
    Cond,
    Esp,
    Perturb,
}

struct Context {
    config: ExperimentConfig,
    task: SeriesTask,
    out: PathBuf,
}

impl Context {
    fn load(args: &ConfigArgs) -> Result<Self> {
        let text = std::fs::read_to_string(&args.config)?;
        let config = experiment::resolve_config(&text, &args.overrides)?;
        let base = args.config.parent().unwrap_or(Path::new("."));
        let task = config.dataset.load(&config.name, base)?;
        let out = match (&args.out, &config.output_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => o.clone(),
            (None, None) => std::env::var_os(OUTPUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(&config.name),
        };
        std::fs::create_dir_all(&out)?;
        let ctx = Self { config, task, out };
        ctx.write_json("config.resolved.json", &ctx.config)?;
        Ok(ctx)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(name);
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        write_atomic(&p, &bytes)?;
        Ok(p)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, text.as_bytes())?;
        Ok(p)
    }

    /// Fixed hyperparameters, or the result of a search with the model
    /// seed pinned to `run.base_seed`.
    fn hyperparameters(&self, checkpointing: &Checkpointing) -> Result<Vec<LayerHyper>> {
        match &self.config.hyperparameters {
            Hyperparameters::Fixed { layers } => Ok(layers.clone()),
            Hyperparameters::Ga { ga } => {
                let outcome = optimizer::evolve(
                    &self.task,
                    &self.config.architecture,
                    ga,
                    self.config.run.base_seed,
                    checkpointing,
                )?;
                let hyper = optimizer::genes_to_hyper(&outcome.best.genes);
                self.write_json("ga_history.json", &outcome.history)?;
                self.write_json("best_hyperparameters.json", &hyper)?;
                Ok(hyper)
            }
        }
    }

    fn model_input(&self, end: usize) -> nalgebra::DMatrix<f64> {
        self.task.inputs.rows(0, end).clone_owned()
    }
}

fn cmd_dataset(args: &ConfigArgs) -> Result<()> {
    let ctx = Context::load(args)?;
    let inputs: Vec<f64> = ctx.task.inputs.iter().copied().collect();
    let targets: Vec<f64> = ctx.task.targets.iter().copied().collect();
    let path = ctx.path(&format!("{}.csv", ctx.config.name));
    datasets::export_csv(
        &path,
        &[("input", &inputs), ("target", &targets)],
        &serde_json::json!({
            "name": ctx.config.name,
            "dataset": ctx.config.dataset,
            "rows": inputs.len(),
        }),
    )?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let ctx = Context::load(args)?;
    let checkpointing = Checkpointing {
        path: Some(ctx.path("ga_checkpoint.json")),
        resume: None,
    };
    let hyper = ctx.hyperparameters(&checkpointing)?;
    let report = experiment::run_repetitions(
        &ctx.config.name,
        &ctx.task,
        &ctx.config.architecture,
        &hyper,
        &ctx.config.run,
        ctx.config.dataset.mape_offset,
        |rep, model| persist::save(model, &ctx.path(&format!("model_rep{rep}.desn"))),
    );
    ctx.write_json("report.json", &report)?;
    let a = &report.test;
    println!("{}: {} of {} repetitions succeeded", report.name, a.succeeded, report.repetitions.len());
    for r in &report.repetitions {
        match (&r.test, &r.error) {
            (Some(m), _) => println!(
                "  rep {:>2}  seed {:>6}  rmse {:.4e}  nrmse {:.4e}  mape {:.4e}",
                r.repetition, r.seed, m.rmse, m.nrmse, m.mape
            ),
            (None, Some(e)) => println!("  rep {:>2}  seed {:>6}  FAILED: {e}", r.repetition, r.seed),
            (None, None) => {}
        }
    }
    println!("  rmse  {:.4e} ± {:.2e}", a.rmse_mean, a.rmse_std);
    println!("  nrmse {:.4e} ± {:.2e}", a.nrmse_mean, a.nrmse_std);
    println!("  mape  {:.4e} ± {:.2e}", a.mape_mean, a.mape_std);
    if a.succeeded == 0 {
        return Err(Error::Empty("successful repetitions"));
    }
    Ok(())
}

fn check_model(ctx: &Context, model: &DeepEsnModel) -> Result<()> {
    let expected = ctx.task.inputs.ncols();
    if model.config().input_dim() != expected {
        return Err(Error::DimensionMismatch {
            context: "model input dimension versus dataset",
            expected,
            actual: model.config().input_dim(),
        });
    }
    Ok(())
}

fn cmd_eval(args: &ConfigArgs, model: &Path, split: SplitName) -> Result<()> {
    let ctx = Context::load(args)?;
    let model = persist::load(model)?;
    check_model(&ctx, &model)?;
    let range = match split {
        SplitName::Validate => ctx.task.validate_range(),
        SplitName::Test => ctx.task.test_range(),
    };
    let report = experiment::score(&model, &ctx.task, range, ctx.config.dataset.mape_offset)?;
    ctx.write_json("eval.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_optimize(args: &ConfigArgs, resume: Option<&Path>) -> Result<()> {
    let ctx = Context::load(args)?;
    let ga = match &ctx.config.hyperparameters {
        Hyperparameters::Ga { ga } => ga.clone(),
        Hyperparameters::Fixed { .. } => {
            return Err(Error::Config(vec![
                "hyperparameters.mode: optimize requires \"ga\"".into(),
            ]))
        }
    };
    let checkpointing = Checkpointing {
        path: Some(ctx.path("ga_checkpoint.json")),
        resume: resume.map(Checkpoint::load).transpose()?,
    };
    let outcome = optimizer::evolve(
        &ctx.task,
        &ctx.config.architecture,
        &ga,
        ctx.config.run.base_seed,
        &checkpointing,
    )?;
    let hyper = optimizer::genes_to_hyper(&outcome.best.genes);
    ctx.write_json("ga_history.json", &outcome.history)?;
    let path = ctx.write_json("best_hyperparameters.json", &hyper)?;
    println!("best validation rmse {:.4e}", outcome.best.fitness);
    println!("{}", path.display());
    Ok(())
}

fn cmd_sweep(args: &ConfigArgs, axis: AxisName, from: Option<usize>, to: Option<usize>, step: Option<usize>) -> Result<()> {
    let ctx = Context::load(args)?;
    let axis = match axis {
        AxisName::Depth => SweepAxis::Depth {
            from: from.unwrap_or(2),
            to: to.unwrap_or(8),
        },
        AxisName::EncoderSize => SweepAxis::EncoderSize {
            from: from.unwrap_or(10),
            to: to.unwrap_or(300),
            step: step.unwrap_or(10),
        },
        AxisName::ReservoirSize => SweepAxis::ReservoirSize {
            from: from.unwrap_or(100),
            to: to.unwrap_or(1000),
            step: step.unwrap_or(100),
        },
    };
    if axis.grid().is_empty() {
        return Err(Error::Config(vec!["sweep: empty grid".into()]));
    }
    let hyper = ctx.hyperparameters(&Checkpointing::default())?;
    let rows = optimizer::sweep(
        &ctx.task,
        axis,
        &ctx.config.architecture,
        &hyper,
        ctx.config.run.base_seed,
        ctx.config.dataset.mape_offset,
    );
    let csv = optimizer::sweep_csv(axis, &rows)?;
    let path = ctx.path(&format!("sweep_{}.csv", axis.name()));
    write_atomic(&path, &csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn cmd_diagnose(
    args: &ConfigArgs,
    model: &Path,
    kind: DiagnoseKind,
    settings: PerturbSettings,
    full: bool,
) -> Result<()> {
    let ctx = Context::load(args)?;
    let model = persist::load(model)?;
    check_model(&ctx, &model)?;
    let path = match kind {
        DiagnoseKind::Cond => {
            let end = ctx.task.train_range().end;
            let report = diagnostics::condition_analysis(&model, &ctx.model_input(end), model.config().washout)?;
            ctx.write_text("condition.csv", &report.to_csv())?
        }
        DiagnoseKind::Esp => {
            let layers = diagnostics::check_esp(&model)?;
            let mut csv = String::from("layer,max_singular_value,satisfies,spectral_radius,spectral_radius_ok\n");
            for l in &layers {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    l.layer, l.max_singular_value, l.satisfies, l.spectral_radius, l.spectral_radius_ok
                ));
            }
            ctx.write_text("esp.csv", &csv)?
        }
        DiagnoseKind::Perturb => {
            let series: Vec<f64> = ctx.task.inputs.column(0).iter().copied().collect();
            let trace = diagnostics::perturbation_trace(&model, &series, settings)?;
            let from = if full { 0 } else { settings.perturb_step.saturating_sub(20) };
            ctx.write_text("perturbation.csv", &trace.to_csv(from))?
        }
    };
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset(args) => cmd_dataset(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval { args, model, split } => cmd_eval(&args, &model, split),
        Command::Optimize { args, resume } => cmd_optimize(&args, resume.as_deref()),
        Command::Sweep {
            args,
            axis,
            from,
            to,
            step,
        } => cmd_sweep(&args, axis, from, to, step),
        Command::Diagnose {
            args,
            model,
            kind,
            perturb_step,
            magnitude,
            horizon,
            full,
        } => cmd_diagnose(
            &args,
            &model,
            kind,
            PerturbSettings {
                perturb_step,
                magnitude,
                horizon,
            },
            full,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(errors)) => {
            eprintln!("configuration error:");
            for e in errors {
                eprintln!("  {e}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
