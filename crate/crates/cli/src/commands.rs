//! The `train`, `eval`, `trace`, `sweep` and `gradcheck` commands.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffplast_core::encoding::NoiseKind;
use diffplast_core::envs::CuePattern;
use diffplast_core::gradcheck::{network_suite, op_suite, NetCheckConfig};
use diffplast_core::rng::SeedTree;
use diffplast_core::training::{
    eval_accuracy_with, toy_rollout, CueTrainer, NoiseSetting, Policy, PpoTrainer,
};
use diffplast_core::Network;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, ExperimentConfig, Task};
use crate::output::{episode_text, MetricsRow, MetricsWriter};
use crate::trace::trace_cue;

/// A failed command: exit code plus a one-line reason.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message.replace('\n', " "))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(format!("config: {e}"))
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError { code: 3, message: format!("checkpoint: {e}") }
    }
}

impl From<diffplast_core::Error> for CliError {
    fn from(e: diffplast_core::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::runtime(format!("io: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "diffplast", version, about = "Train and inspect spiking networks with learned plasticity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    Obs,
    Act,
    Friction,
}

impl From<NoiseArg> for NoiseKind {
    fn from(k: NoiseArg) -> Self {
        match k {
            NoiseArg::Obs => NoiseKind::Observation,
            NoiseArg::Act => NoiseKind::Action,
            NoiseArg::Friction => NoiseKind::Friction,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PatternArg {
    Random,
    Left,
    Right,
    None,
}

impl From<PatternArg> for CuePattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Random => CuePattern::Random,
            PatternArg::Left => CuePattern::AllLeft,
            PatternArg::Right => CuePattern::AllRight,
            PatternArg::None => CuePattern::NoCues,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config, or resume from a checkpoint.
    Train(TrainArgs),
    /// Accuracy (cue) or greedy return (toy) of a checkpoint.
    Eval(EvalArgs),
    /// Dump per-step activity of one cue episode.
    Trace(TraceArgs),
    /// Evaluate a toy checkpoint over a grid of noise levels.
    Sweep(EvalArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for metrics and checkpoints (default `runs`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many iterations in this invocation without
    /// changing the configured budget.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Record elapsed seconds in the metrics file instead of 0.
    #[arg(long)]
    pub wall_clock: bool,
    /// No per-iteration progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Environment and evaluation overrides; the topology must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub noise_kind: Option<NoiseArg>,
    /// Noise standard deviation; a single value for `sweep`.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Episode seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    pub pattern: PatternArg,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for both suites; by default the op suite uses 0 and the network
    /// suite an instance where every parameter carries gradient.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Trace(a) => trace(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Gradcheck(a) => gradcheck(&a),
    }
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    if !path.is_file() {
        return Err(CliError::usage(format!("config file not found: {}", path.display())));
    }
    Ok(ExperimentConfig::load(path)?)
}

/// Builds the network described by `cfg` from its seed.
pub fn init_network(cfg: &ExperimentConfig) -> CliResult<Network> {
    let nc = cfg.network_config()?;
    Ok(Network::init(nc, &mut SeedTree::new(cfg.seed).stream("init", &[]))?)
}

fn out_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = flag.clone().or_else(|| cfg.out_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| "runs".into());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

enum Trainer {
    Cue(Box<CueTrainer>),
    Toy(Box<PpoTrainer>),
}

impl Trainer {
    fn iteration(&self) -> usize {
        match self {
            Trainer::Cue(t) => t.iteration,
            Trainer::Toy(t) => t.update,
        }
    }

    fn finished(&self) -> bool {
        match self {
            Trainer::Cue(t) => t.finished(),
            Trainer::Toy(t) => t.finished(),
        }
    }

    fn checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        match self {
            Trainer::Cue(t) => Checkpoint::from_cue(cfg, t),
            Trainer::Toy(t) => Checkpoint::from_ppo(cfg, t),
        }
    }

    fn step(&mut self) -> diffplast_core::Result<MetricsRow> {
        match self {
            Trainer::Cue(t) => {
                let s = t.step()?;
                Ok(MetricsRow {
                    iteration: s.iteration,
                    loss: s.loss,
                    accuracy: s.accuracy,
                    mean_hidden_rate: s.mean_hidden_rate,
                    lr: s.lr,
                    wall_time: 0.0,
                })
            }
            Trainer::Toy(t) => {
                let opt = t.optimal_return();
                let s = t.step()?;
                Ok(MetricsRow {
                    iteration: s.update,
                    loss: s.stats.epochs.last().map_or(0.0, |e| e.loss),
                    accuracy: s.mean_return / opt,
                    mean_hidden_rate: s.mean_hidden_rate,
                    lr: s.lr,
                    wall_time: 0.0,
                })
            }
        }
    }

    fn summary(&self) -> String {
        match self {
            Trainer::Cue(t) => format!(
                "done iterations={} rolling_accuracy={:.4} halted={}",
                t.iteration,
                t.rolling_accuracy(),
                t.halted()
            ),
            Trainer::Toy(t) => format!(
                "done updates={} best_eval_return={:.4} optimal_return={:.4} reached_target={}",
                t.update,
                t.best_eval,
                t.optimal_return(),
                t.reached_target
            ),
        }
    }
}

fn build_trainer(cfg: &ExperimentConfig) -> CliResult<Trainer> {
    let net = init_network(cfg)?;
    Ok(match cfg.task()? {
        Task::Cue(c) => Trainer::Cue(Box::new(CueTrainer::new(net, c, cfg.seed)?)),
        Task::Toy(p) => Trainer::Toy(Box::new(PpoTrainer::new(net, p, cfg.seed)?)),
    })
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let (cfg, mut trainer, resumed) = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let cfg = ck.experiment()?;
            if let Some(p) = &a.config {
                if load_config(p)?.hash() != ck.config_hash {
                    return Err(CliError::usage("config hash mismatch: --config differs from the checkpoint's config"));
                }
            }
            if a.seed.is_some_and(|s| s != cfg.seed) {
                return Err(CliError::usage("config hash mismatch: --seed differs from the checkpoint's seed"));
            }
            let mut tr = build_trainer(&cfg)?;
            match &mut tr {
                Trainer::Cue(t) => ck.restore_cue(t)?,
                Trainer::Toy(t) => ck.restore_ppo(t)?,
            }
            (cfg, tr, true)
        }
        None => {
            let path = a.config.as_ref().ok_or_else(|| CliError::usage("train needs --config or --checkpoint"))?;
            let mut cfg = load_config(path)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let tr = build_trainer(&cfg)?;
            (cfg, tr, false)
        }
    };
    let dir = out_dir(&a.out, &cfg)?;
    let metrics_path = dir.join("metrics.csv");
    let append = resumed && metrics_path.is_file();
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(&metrics_path)?;
    let mut metrics = MetricsWriter::new(io::BufWriter::new(file), !append)?;

    let t0 = Instant::now();
    let mut done_here = 0usize;
    while !trainer.finished() && a.max_iterations.is_none_or(|m| done_here < m) {
        let mut row = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                let path = dir.join("checkpoint_diverged.bin");
                trainer.checkpoint(&cfg).save(&path)?;
                return Err(CliError::runtime(format!(
                    "training aborted at iteration {}: {e}; state saved to {}",
                    trainer.iteration(),
                    path.display()
                )));
            }
        };
        if a.wall_clock {
            row.wall_time = t0.elapsed().as_secs_f64();
        }
        metrics.write(&row)?;
        done_here += 1;
        let it = trainer.iteration();
        if !a.quiet && it % 10 == 0 {
            eprintln!("iteration {it} accuracy {:.3} rate {:.3}", row.accuracy, row.mean_hidden_rate);
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            trainer.checkpoint(&cfg).save(&dir.join(format!("checkpoint_{it:06}.bin")))?;
        }
    }
    trainer.checkpoint(&cfg).save(&dir.join("checkpoint.bin"))?;
    println!("{}", trainer.summary());
    Ok(())
}

/// Loads a checkpoint's network and the config to evaluate it under.
fn load_for_eval(checkpoint: &Path, config: &Option<PathBuf>) -> CliResult<(ExperimentConfig, Network)> {
    let ck = Checkpoint::load(checkpoint)?;
    let embedded = ck.experiment()?;
    let cfg = match config {
        Some(p) => {
            let c = load_config(p)?;
            if c.topology_hash() != embedded.topology_hash() {
                return Err(CliError::usage("config hash mismatch: override changes the network topology"));
            }
            let same_env = matches!((c.task()?, embedded.task()?), (Task::Cue(_), Task::Cue(_)) | (Task::Toy(_), Task::Toy(_)));
            if !same_env {
                return Err(CliError::usage("config hash mismatch: override selects a different environment"));
            }
            c
        }
        None => embedded,
    };
    let mut net = init_network(&cfg)?;
    ck.restore_network(&mut net)?;
    Ok((cfg, net))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn noise_setting(kind: Option<NoiseKind>, sigma: f64) -> Option<NoiseSetting> {
    kind.filter(|_| sigma > 0.0).map(|kind| NoiseSetting { kind, sigma })
}

/// Mean and standard deviation of per-trial scores: correctness for the
/// cue task, greedy return for the toy task.
fn score(cfg: &ExperimentConfig, net: &Network, trials: usize, noise: Option<NoiseSetting>, seed: u64) -> CliResult<(f64, f64)> {
    let seeds = SeedTree::new(seed);
    match cfg.task()? {
        Task::Cue(c) => {
            if noise.is_some() {
                return Err(CliError::usage("noise injection applies to the toy task only"));
            }
            let p = eval_accuracy_with(net, &c.env, c.gain(), trials, &seeds, CuePattern::Random, Policy::Sample)?;
            Ok((p, (p * (1.0 - p)).sqrt()))
        }
        Task::Toy(p) => {
            let returns = (0..trials)
                .map(|i| {
                    let mut rng = seeds.stream("eval", &[i as u64]);
                    Ok(toy_rollout(net, &p, noise, true, &mut rng)?.ret())
                })
                .collect::<CliResult<Vec<f64>>>()?;
            Ok(mean_std(&returns))
        }
    }
}

fn eval_noise_kind(flag: Option<NoiseArg>, cfg: &ExperimentConfig) -> Option<NoiseKind> {
    flag.map(NoiseKind::from).or(cfg.eval.noise_kind.map(NoiseKind::from))
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let (cfg, net) = load_for_eval(&a.checkpoint, &a.config)?;
    let kind = eval_noise_kind(a.noise_kind, &cfg);
    let sigma = a.noise_sigma.unwrap_or(cfg.eval.noise_sigma);
    if a.noise_sigma.is_some_and(|s| s > 0.0) && kind.is_none() {
        return Err(CliError::usage("--noise-sigma needs --noise-kind"));
    }
    let trials = a.trials.unwrap_or(cfg.eval.trials);
    let (m, sd) = score(&cfg, &net, trials, noise_setting(kind, sigma), a.seed.unwrap_or(cfg.seed))?;
    let metric = match cfg.task()? {
        Task::Cue(_) => "accuracy",
        Task::Toy(_) => "return",
    };
    println!("{metric} mean={m:.6} std={sd:.6} trials={trials}");
    Ok(())
}

pub fn sweep(a: &EvalArgs) -> CliResult<()> {
    let (cfg, net) = load_for_eval(&a.checkpoint, &a.config)?;
    if matches!(cfg.task()?, Task::Cue(_)) {
        return Err(CliError::usage("sweep needs a toy-task checkpoint"));
    }
    let kinds: Vec<NoiseKind> = match eval_noise_kind(a.noise_kind, &cfg) {
        Some(k) => vec![k],
        None => vec![NoiseKind::Observation, NoiseKind::Action, NoiseKind::Friction],
    };
    let sigmas = match a.noise_sigma {
        Some(s) => vec![s],
        None => cfg.eval.sweep_sigmas.clone(),
    };
    let trials = a.trials.unwrap_or(cfg.eval.trials);
    let seed = a.seed.unwrap_or(cfg.seed);
    let mut text = String::from("kind,sigma,mean,std,trials\n");
    for kind in kinds {
        for &sigma in &sigmas {
            let (m, sd) = score(&cfg, &net, trials, noise_setting(Some(kind), sigma), seed)?;
            let line = format!("{},{},{},{},{}", kind.name(), sigma, m, sd, trials);
            println!("{line}");
            text.push_str(&line);
            text.push('\n');
        }
    }
    let dir = out_dir(&a.out, &cfg)?;
    fs::write(dir.join("sweep.csv"), text)?;
    Ok(())
}

pub fn trace(a: &TraceArgs) -> CliResult<()> {
    let (cfg, net) = load_for_eval(&a.checkpoint, &a.config)?;
    let Task::Cue(c) = cfg.task()? else {
        return Err(CliError::usage("trace needs a cue-task checkpoint"));
    };
    let pattern = CuePattern::from(a.pattern);
    let text = trace_cue(&net, &c.env, pattern, a.seed)?;
    let dir = out_dir(&a.out, &cfg)?;
    let name = format!("{:?}", a.pattern).to_lowercase();
    let path = dir.join(format!("trace_{name}_{}.txt", a.seed));
    fs::write(&path, text)?;
    let ep = diffplast_core::envs::cue_generate_with(
        &c.env,
        pattern,
        &mut SeedTree::new(a.seed).stream("trace-env", &[]),
    )?;
    let ep_path = dir.join(format!("episode_{name}_{}.txt", a.seed));
    fs::write(&ep_path, episode_text(&ep))?;
    println!("wrote {} and {}", path.display(), ep_path.display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let mut lines = Vec::new();
    let mut failed = 0;
    let net_default = NetCheckConfig::default();
    for (tol, results) in [
        (1e-6, op_suite(a.seed.unwrap_or(0))?),
        (1e-4, network_suite(NetCheckConfig { seed: a.seed.unwrap_or(net_default.seed), ..net_default })?),
    ] {
        for r in results {
            // a tensor with no entry above the floor was not tested at all
            let ok = r.passes(tol) && r.checked > 0;
            failed += !ok as usize;
            lines.push(format!(
                "{} {} max_rel_err={:.3e} checked={} tol={tol:e}",
                if ok { "PASS" } else { "FAIL" },
                r.name,
                r.max_rel_err,
                r.checked
            ));
        }
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    io::stdout().flush()?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("gradcheck.txt"), &text)?;
    }
    if failed > 0 {
        return Err(CliError::runtime(format!("gradcheck: {failed} checks above tolerance or unchecked")));
    }
    Ok(())
}
