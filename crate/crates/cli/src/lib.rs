//! Command-line front end: `train`, `eval`, `inspect` and `plot`.

use clap::{Args, Parser, Subcommand};
use madqrl::config::{self, ConfigError, Settings};
use madqrl::env::{CoopEnv, PongEnv};
use madqrl::inspect::ModelReport;
use madqrl::marl::{make_policies, StrategyKind};
use madqrl::metrics::{read_metrics, sampling_saturation, write_plot, IterationMetrics};
use madqrl::policy::ModelKind;
use madqrl::qsim::Entanglement;
use madqrl::runtime::{
    latest_checkpoint, read_eval, RuntimeError, Trainer, EVAL_FILE, METRICS_FILE,
};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const PLOT_FILE: &str = "learning_curve.svg";
pub const REPORT_FILE: &str = "report.txt";

/// Saturation is reported where the smoothed reward first reaches this
/// fraction of its final value.
const SATURATION_FRACTION: f64 = 0.95;
const SATURATION_WINDOW: usize = 50;

#[derive(Debug, Parser)]
#[command(
    name = "madqrl",
    version,
    about = "Cooperative pong with hybrid quantum-classical PPO agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a run and write metrics, checkpoints, a plot and a report.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Print per-layer parameter counts and which learner each agent uses.
    Inspect(SettingsArgs),
    /// Render a learning-curve SVG from a metrics CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct SettingsArgs {
    /// TOML file with settings keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the small test-scale preset instead of the full defaults.
    #[arg(long)]
    pub desk: bool,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<StrategyKind>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    #[arg(long, value_parser = parse_entanglement)]
    pub entanglement: Option<Entanglement>,
    #[arg(long)]
    pub qubits: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Worker pool size; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Continue the run in --output-dir from its latest checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory, or a run directory to use its latest checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Report file to append to; defaults to report.txt in the run directory.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mean reward")]
    pub title: String,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    StrategyKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("expected joint, shared or independent, got `{s}`"))
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s {
        "quantum" => Ok(ModelKind::Quantum),
        "classical" => Ok(ModelKind::Classical),
        _ => Err(format!("expected classical or quantum, got `{s}`")),
    }
}

fn parse_entanglement(s: &str) -> Result<Entanglement, String> {
    match s {
        "basic" => Ok(Entanglement::Basic),
        "strong" => Ok(Entanglement::Strong),
        _ => Err(format!("expected basic or strong, got `{s}`")),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl CliError {
    /// Process exit status: 2 for bad invocations, 1 for failed runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Config(ConfigError::Invalid { .. } | ConfigError::Parse { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

impl SettingsArgs {
    fn quantum_flags(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.entanglement.is_some() {
            v.push("--entanglement");
        }
        if self.qubits.is_some() {
            v.push("--qubits");
        }
        if self.layers.is_some() {
            v.push("--layers");
        }
        v
    }

    fn is_empty(&self) -> bool {
        self.config.is_none()
            && !self.desk
            && self.strategy.is_none()
            && self.model.is_none()
            && self.quantum_flags().is_empty()
            && self.batch_size.is_none()
            && self.seed.is_none()
            && self.workers.is_none()
            && self.gamma.is_none()
            && self.lr.is_none()
            && self.threads.is_none()
    }

    /// Defaults (or the desk preset), then the config file, then flags.
    pub fn resolve(&self) -> Result<Settings, CliError> {
        let base = if self.desk {
            Settings::desk()
        } else {
            Settings::default()
        };
        let mut s = match &self.config {
            Some(path) => base.overlay_file(path)?,
            None => base,
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    s.$field = v.clone();
                })*
            };
        }
        apply!(
            strategy,
            model,
            entanglement,
            qubits,
            layers,
            iterations,
            seed,
            workers,
            output_dir,
            gamma,
            lr,
            threads
        );
        if let Some(b) = self.batch_size {
            s.batch_size = b;
            // Keep one iteration's collection at least one batch.
            s.steps_per_worker = s.steps_per_worker.max(b.div_ceil(s.workers.max(1)));
        }
        if s.model == ModelKind::Classical {
            let flags = self.quantum_flags();
            if !flags.is_empty() {
                return Err(CliError::Usage(format!(
                    "{} only apply to the quantum model, but the model is classical",
                    flags.join(", ")
                )));
            }
        }
        s.validate()?;
        Ok(s)
    }
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out`. Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Inspect(a) => cmd_inspect(&a.resolve()?, out),
        Command::Plot(a) => cmd_plot(&a, out),
    }
}

fn say(out: &mut dyn std::io::Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(io_err(Path::new("<stdout>")))
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let (settings, mut trainer) = if args.resume {
        let s = &args.settings;
        if !s.is_empty() {
            return Err(CliError::Usage(
                "--resume takes only --output-dir and --iterations; the rest comes from the run manifest".into(),
            ));
        }
        let dir = s
            .output_dir
            .clone()
            .ok_or_else(|| CliError::Usage("--resume needs --output-dir".into()))?;
        let mut settings = config::read_manifest(&dir.join(config::MANIFEST_FILE))?;
        if let Some(n) = s.iterations {
            settings.iterations = n;
            config::write_manifest(&dir, &settings)?;
        }
        let trainer = Trainer::<PongEnv>::resume(&dir)?;
        say(
            out,
            &format!(
                "resuming {} at iteration {}",
                dir.display(),
                trainer.iteration()
            ),
        )?;
        (settings, trainer)
    } else {
        let settings = args.settings.resolve()?;
        let trainer = Trainer::new(settings.run_config(), settings.env()?)?;
        (settings, trainer)
    };
    let dir = settings.output_dir.clone();
    if !args.resume {
        config::write_manifest(&dir, &settings)?;
    }
    let baseline = trainer.random_baseline(settings.eval_episodes)?;
    say(
        out,
        &format!(
            "random-policy baseline: mean episode length {:.2}, mean return {:.4}",
            baseline.mean_episode_len, baseline.mean_return
        ),
    )?;

    let mut echo = |r: &IterationMetrics| {
        let _ = writeln!(
            out,
            "iter {:>6}  len {:>7.2}  reward {:.5}  entropy {:.3}  kl {:.4}",
            r.iteration, r.mean_episode_len, r.mean_reward, r.entropy, r.kl
        );
    };
    trainer.run(settings.iterations, &mut echo)?;

    let metrics_path = dir.join(METRICS_FILE);
    let rows = read_metrics(&metrics_path).map_err(|source| CliError::Csv {
        path: metrics_path.clone(),
        source,
    })?;
    let plot = dir.join(PLOT_FILE);
    let title = format!("{} / {:?}", settings.strategy.name(), settings.model).to_lowercase();
    write_plot(&plot, &rows, &title).map_err(io_err(&plot))?;

    let final_eval = trainer.evaluate(settings.eval_episodes)?;
    let evals = read_eval(&dir.join(EVAL_FILE))?;
    let report = train_report(&settings, &trainer, &rows, &evals, baseline, final_eval);
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, &report).map_err(io_err(&path))?;
    say(out, &report)?;
    Ok(())
}

fn train_report(
    settings: &Settings,
    trainer: &Trainer<PongEnv>,
    rows: &[IterationMetrics],
    evals: &[madqrl::runtime::EvalRow],
    baseline: madqrl::runtime::EvalResult,
    final_eval: madqrl::runtime::EvalResult,
) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "run report");
    let _ = writeln!(
        r,
        "strategy {}  model {:?}",
        settings.strategy.name(),
        settings.model
    );
    if settings.model == ModelKind::Quantum {
        let _ = writeln!(
            r,
            "ansatz {:?}, {} qubits x {} layers",
            settings.entanglement, settings.qubits, settings.layers
        );
    }
    let _ = writeln!(r, "iterations completed {}", trainer.iteration());
    let _ = writeln!(
        r,
        "random-policy baseline: {} episodes, mean episode length {:.2}, mean return {:.4}",
        baseline.episodes, baseline.mean_episode_len, baseline.mean_return
    );
    for e in evals {
        let _ = writeln!(
            r,
            "greedy eval at iteration {}: mean episode length {:.2}, mean return {:.4}",
            e.iteration, e.mean_episode_len, e.mean_return
        );
    }
    let _ = writeln!(
        r,
        "final greedy eval: {} episodes, mean episode length {:.2} ({:.2}x baseline), mean return {:.4}",
        final_eval.episodes,
        final_eval.mean_episode_len,
        final_eval.mean_episode_len / baseline.mean_episode_len,
        final_eval.mean_return
    );
    match sampling_saturation(
        rows,
        SATURATION_WINDOW.min(rows.len().max(1)),
        SATURATION_FRACTION,
    ) {
        Some(i) => {
            let _ = writeln!(r, "sampling saturation at iteration {i}");
        }
        None => {
            let _ = writeln!(r, "sampling saturation: not reached");
        }
    }
    let report = ModelReport::new(&trainer.policies);
    let _ = writeln!(
        r,
        "trainable weights: classical {}  quantum {}",
        report.totals.classical, report.totals.quantum
    );
    r
}

/// Resolves a run directory to its latest checkpoint.
fn checkpoint_dir(path: &Path) -> Result<PathBuf, CliError> {
    if path.join("run_state.json").exists() {
        return Ok(path.to_owned());
    }
    if !path.exists() {
        return Err(CliError::Io {
            path: path.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        });
    }
    latest_checkpoint(path)?.ok_or_else(|| CliError::Io {
        path: path.to_owned(),
        source: std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "neither a checkpoint nor a run directory with one",
        ),
    })
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let dir = checkpoint_dir(&args.checkpoint)?;
    let trainer = Trainer::<PongEnv>::from_checkpoint(&dir, None)?;
    let n = args.episodes.unwrap_or(trainer.config.eval_episodes);
    if n == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let r = trainer.evaluate(n)?;
    let line = format!(
        "eval {} (iteration {}): {} episodes, mean episode length {:.2}, mean return {:.4}",
        dir.display(),
        trainer.iteration(),
        r.episodes,
        r.mean_episode_len,
        r.mean_return
    );
    say(out, &line)?;
    let report = match &args.report {
        Some(p) => Some(p.clone()),
        // checkpoints/iter_N -> run directory
        None => dir
            .parent()
            .and_then(Path::parent)
            .map(|run| run.join(REPORT_FILE)),
    };
    if let Some(path) = report {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(f, "{line}").map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn cmd_inspect(settings: &Settings, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let env = settings.env()?;
    let half = env.obs_shape();
    let spec = settings.run_config().actor_spec(half);
    let policies = make_policies(
        settings.strategy,
        &spec,
        half,
        &mut rand::rngs::mock::StepRng::new(0, 1),
    )
    .map_err(RuntimeError::from)?;
    let mut text = String::new();
    match settings.model {
        ModelKind::Quantum => {
            let a = settings.ansatz();
            let _ = writeln!(
                text,
                "model quantum: {} hybrid layers, each a {:?} circuit of {} qubits x {} layers ({} angles per circuit)",
                settings.hybrid_layers,
                a.entanglement,
                a.n_qubits,
                a.n_layers,
                a.param_count()
            );
        }
        ModelKind::Classical => {
            let _ = writeln!(
                text,
                "model classical: convolution channels {:?}",
                settings.cnn_channels
            );
        }
    }
    let _ = writeln!(
        text,
        "actor input {:?}, {} actions",
        spec.obs_shape, spec.n_actions
    );
    let _ = write!(text, "{}", ModelReport::new(&policies));
    say(out, &text)
}

pub fn cmd_plot(args: &PlotArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let rows = read_metrics(&args.metrics).map_err(|source| CliError::Csv {
        path: args.metrics.clone(),
        source,
    })?;
    write_plot(&args.out, &rows, &args.title).map_err(io_err(&args.out))?;
    say(
        out,
        &format!("wrote {} ({} rows)", args.out.display(), rows.len()),
    )
}
