//! Experiment configuration files.
//!
//! A config is TOML with a handful of sections. Keys carry their units
//! (`_steps`, `_mv`) and unknown keys are rejected. Exactly one of `[cue]`
//! or `[toy]` selects the environment.

use std::fmt;
use std::path::Path;

use diffplast_core::encoding::{CenterLayout, NoiseKind};
use diffplast_core::envs::{CueProbabilities, CueTaskConfig, ToyEnvConfig};
use diffplast_core::snn::InitParams;
use diffplast_core::training::{AdamConfig, CueTrainConfig, PpoConfig, ReturnMode};
use diffplast_core::{NetworkConfig, NeuronParams, RuleKind};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// A config problem, reported as `path:line: message` on one line.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.path, l, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

/// A rule name such as `ndp-bcm`, checked while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule(pub RuleKind);

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0.name())
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map(Rule).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    #[default]
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReturnModeName {
    #[default]
    Discounted,
    Bandit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Linear,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKindName {
    Obs,
    Act,
    Friction,
}

impl From<NoiseKindName> for NoiseKind {
    fn from(k: NoiseKindName) -> Self {
        match k {
            NoiseKindName::Obs => NoiseKind::Observation,
            NoiseKindName::Act => NoiseKind::Action,
            NoiseKindName::Friction => NoiseKind::Friction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_sizes: Vec<usize>,
    /// One rule for every layer, or one per layer (hidden layers then output).
    pub rules: Vec<Rule>,
    pub weight_gain: f64,
    pub alpha_bound: f64,
    pub rate_window_steps: usize,
    pub trace_clip: f64,
    pub refractory_grad: bool,
    pub sigma_log_init: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let init = InitParams::default();
        NetworkSection {
            hidden_sizes: vec![64],
            rules: vec![Rule(RuleKind::NdpBcm)],
            weight_gain: init.weight_gain,
            alpha_bound: init.alpha_bound,
            rate_window_steps: 20,
            trace_clip: diffplast_core::plasticity::DEFAULT_TRACE_CLIP,
            refractory_grad: false,
            sigma_log_init: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronSection {
    pub theta_mv: f64,
    pub tau_s_steps: f64,
    pub tau_ref_steps: f64,
    pub refractory_scale: f64,
    pub surrogate_tau_mv: f64,
    pub surrogate_scale: f64,
    pub kernel_trunc_tol: f64,
}

impl Default for NeuronSection {
    fn default() -> Self {
        let n = NeuronParams::default();
        NeuronSection {
            theta_mv: n.theta_mv,
            tau_s_steps: n.tau_s,
            tau_ref_steps: n.tau_ref,
            refractory_scale: n.refr_scale,
            surrogate_tau_mv: n.surrogate_tau,
            surrogate_scale: n.surrogate_scale,
            kernel_trunc_tol: n.trunc_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// Base rate; it is annealed linearly to zero over the budget.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerSection { lr: 5e-4, beta1: a.beta1, beta2: a.beta2, eps: a.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CueSection {
    pub n_cues: usize,
    pub cue_duration_steps: usize,
    pub rest_choices_steps: Vec<usize>,
    pub decision_duration_steps: usize,
    pub population: usize,
    pub horizon_steps: usize,
    pub noise: NoiseLevel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cue_event_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cue_rest_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_rest_prob: Option<f64>,
    pub batch_size: usize,
    pub halt_accuracy: f64,
    pub rolling_window: usize,
    pub discount: f64,
    pub return_mode: ReturnModeName,
    pub baseline: bool,
    pub baseline_decay: f64,
    /// Defaults to the decision window length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logit_gain: Option<f64>,
}

impl Default for CueSection {
    fn default() -> Self {
        let e = CueTaskConfig::default();
        let t = CueTrainConfig::default();
        CueSection {
            n_cues: e.n_cues,
            cue_duration_steps: e.cue_duration,
            rest_choices_steps: e.rest_choices,
            decision_duration_steps: e.decision_duration,
            population: e.population,
            horizon_steps: e.horizon,
            noise: NoiseLevel::Low,
            cue_event_prob: None,
            cue_rest_prob: None,
            noise_rest_prob: None,
            batch_size: t.batch_size,
            halt_accuracy: t.halt_accuracy,
            rolling_window: t.rolling_window,
            discount: t.discount,
            return_mode: ReturnModeName::Discounted,
            baseline: true,
            baseline_decay: t.baseline_decay.unwrap_or(0.9),
            logit_gain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub dims: usize,
    pub mass: f64,
    pub friction: f64,
    pub dt_steps: f64,
    pub energy_cost: f64,
    pub horizon_steps: usize,
    pub position_bound: f64,
    pub velocity_bound: f64,
    pub obs_population: usize,
    pub theta_min: f64,
    pub center_layout: Layout,
    pub action_population: usize,
    pub interval_steps: usize,
    pub action_min: f64,
    pub action_max: f64,
    pub episodes_per_update: usize,
    pub epochs: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_lr: f64,
    /// Stop once the greedy return reaches this fraction of the optimum;
    /// 0 disables early stopping.
    pub target_fraction: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        let p = PpoConfig::default();
        let e = p.env;
        ToySection {
            dims: e.dims,
            mass: e.mass,
            friction: e.friction,
            dt_steps: e.dt,
            energy_cost: e.energy_cost,
            horizon_steps: e.horizon,
            position_bound: e.position_bound,
            velocity_bound: e.velocity_bound,
            obs_population: p.obs_population,
            theta_min: p.theta_min,
            center_layout: Layout::Linear,
            action_population: p.action_population,
            interval_steps: p.interval,
            action_min: p.action_range.0,
            action_max: p.action_range.1,
            episodes_per_update: p.episodes_per_update,
            epochs: p.epochs,
            clip: p.clip,
            gamma: p.gamma,
            lambda: p.lambda,
            value_lr: p.value_lr,
            target_fraction: p.target_fraction.unwrap_or(0.0),
            eval_every: p.eval_every,
            eval_episodes: p.eval_episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    pub sweep_sigmas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_kind: Option<NoiseKindName>,
    pub noise_sigma: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { trials: 100, sweep_sigmas: vec![0.0, 0.1, 0.2, 0.3], noise_kind: None, noise_sigma: 0.0 }
    }
}

fn default_iterations() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Training iterations (cue) or PPO updates (toy).
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Write a numbered checkpoint every this many iterations; 0 keeps only
    /// the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub neuron: NeuronSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue: Option<CueSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySection>,
    #[serde(default)]
    pub eval: EvalSection,
}

/// The environment an experiment runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Cue(CueTrainConfig),
    Toy(PpoConfig),
}

impl ExperimentConfig {
    pub fn cue(cue: CueSection) -> Self {
        ExperimentConfig {
            seed: 0,
            iterations: default_iterations(),
            checkpoint_every: 0,
            out_dir: None,
            network: NetworkSection::default(),
            neuron: NeuronSection::default(),
            optimizer: OptimizerSection::default(),
            cue: Some(cue),
            toy: None,
            eval: EvalSection::default(),
        }
    }

    pub fn toy(toy: ToySection) -> Self {
        ExperimentConfig { cue: None, toy: Some(toy), iterations: 1500, ..Self::cue(CueSection::default()) }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { path: name.clone(), line: None, message: e.to_string() })?;
        Self::parse(&text, &name)
    }

    /// Parses and validates; `origin` names the source in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError {
            path: origin.to_string(),
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().replace('\n', " ").trim().to_string(),
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError {
            path: origin.to_string(),
            line: key.and_then(|k| find_key(text, k)),
            message,
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    /// Hash of everything that fixes the parameter layout: network,
    /// neuron constants and the environment's input/output sizes.
    pub fn topology_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(toml::to_string(&self.network).expect("section serializes"));
        h.update(toml::to_string(&self.neuron).expect("section serializes"));
        if let Ok(nc) = self.network_config() {
            h.update(nc.input_size.to_le_bytes());
            h.update(nc.output_size().to_le_bytes());
        }
        h.finalize().into()
    }

    fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        match (&self.cue, &self.toy) {
            (None, None) => return Err((None, "exactly one of [cue] or [toy] is required".into())),
            (Some(_), Some(_)) => return Err((Some("[toy]"), "exactly one of [cue] or [toy] is allowed".into())),
            _ => {}
        }
        if self.iterations == 0 {
            return Err((Some("iterations"), "iterations must be > 0".into()));
        }
        let n = &self.network;
        if n.hidden_sizes.contains(&0) {
            return Err((Some("hidden_sizes"), "every layer size must be > 0".into()));
        }
        let layers = n.hidden_sizes.len() + 1;
        if n.rules.len() != 1 && n.rules.len() != layers {
            return Err((Some("rules"), format!("give 1 rule or {layers} (one per layer), got {}", n.rules.len())));
        }
        if let Some(c) = &self.cue {
            for (key, p) in [
                ("cue_event_prob", c.cue_event_prob),
                ("cue_rest_prob", c.cue_rest_prob),
                ("noise_rest_prob", c.noise_rest_prob),
            ] {
                if p.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
                    return Err((Some(key), format!("{key} must lie in [0, 1]")));
                }
            }
        }
        if let Some(t) = &self.toy {
            if t.action_population % 2 != 0 {
                return Err((Some("action_population"), "action_population must be even".into()));
            }
        }
        self.task().map_err(|e| (None, e.to_string()))?;
        self.network_config().and_then(|nc| nc.validate().map(|_| ())).map_err(|e| (None, e.to_string()))?;
        Ok(())
    }

    pub fn task(&self) -> diffplast_core::Result<Task> {
        let opt = &self.optimizer;
        let adam = AdamConfig { beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps };
        if let Some(c) = &self.cue {
            let mut probs = match c.noise {
                NoiseLevel::Low => CueProbabilities::LOW_NOISE,
                NoiseLevel::High => CueProbabilities::HIGH_NOISE,
            };
            probs.cue_event = c.cue_event_prob.unwrap_or(probs.cue_event);
            probs.cue_rest = c.cue_rest_prob.unwrap_or(probs.cue_rest);
            probs.noise_rest = c.noise_rest_prob.unwrap_or(probs.noise_rest);
            let env = CueTaskConfig {
                n_cues: c.n_cues,
                cue_duration: c.cue_duration_steps,
                rest_choices: c.rest_choices_steps.clone(),
                decision_duration: c.decision_duration_steps,
                population: c.population,
                probs,
                horizon: c.horizon_steps,
            };
            let cfg = CueTrainConfig {
                env,
                batch_size: c.batch_size,
                iterations: self.iterations,
                halt_accuracy: c.halt_accuracy,
                rolling_window: c.rolling_window,
                discount: c.discount,
                return_mode: match c.return_mode {
                    ReturnModeName::Discounted => ReturnMode::Discounted,
                    ReturnModeName::Bandit => ReturnMode::Bandit,
                },
                baseline_decay: c.baseline.then_some(c.baseline_decay),
                lr: opt.lr,
                adam,
                logit_gain: c.logit_gain,
            };
            cfg.validate()?;
            return Ok(Task::Cue(cfg));
        }
        let t = self.toy.clone().unwrap_or_default();
        let cfg = PpoConfig {
            env: ToyEnvConfig {
                dims: t.dims,
                mass: t.mass,
                friction: t.friction,
                dt: t.dt_steps,
                energy_cost: t.energy_cost,
                horizon: t.horizon_steps,
                position_bound: t.position_bound,
                velocity_bound: t.velocity_bound,
            },
            obs_population: t.obs_population,
            theta_min: t.theta_min,
            center_layout: match t.center_layout {
                Layout::Linear => CenterLayout::Linear,
                Layout::Literal => CenterLayout::Literal,
            },
            action_population: t.action_population,
            interval: t.interval_steps,
            action_range: (t.action_min, t.action_max),
            episodes_per_update: t.episodes_per_update,
            updates: self.iterations,
            epochs: t.epochs,
            clip: t.clip,
            gamma: t.gamma,
            lambda: t.lambda,
            lr: opt.lr,
            value_lr: t.value_lr,
            adam,
            target_fraction: (t.target_fraction > 0.0).then_some(t.target_fraction),
            eval_every: t.eval_every,
            eval_episodes: t.eval_episodes,
        };
        cfg.validate()?;
        cfg.obs_codec()?;
        cfg.action_codec()?;
        Ok(Task::Toy(cfg))
    }

    pub fn network_config(&self) -> diffplast_core::Result<NetworkConfig> {
        let (input, output, action_dims) = match self.task()? {
            Task::Cue(c) => (c.env.input_size(), 2, None),
            Task::Toy(p) => (p.input_size(), p.output_size(), Some(p.env.dims)),
        };
        let n = &self.network;
        let mut sizes = n.hidden_sizes.clone();
        sizes.push(output);
        let rules: Vec<RuleKind> = if n.rules.len() == 1 {
            vec![n.rules[0].0; sizes.len()]
        } else {
            n.rules.iter().map(|r| r.0).collect()
        };
        let nr = &self.neuron;
        let mut nc = NetworkConfig::new(input, sizes, RuleKind::None);
        nc.rules = rules;
        nc.neuron = NeuronParams {
            theta_mv: nr.theta_mv,
            tau_s: nr.tau_s_steps,
            tau_ref: nr.tau_ref_steps,
            refr_scale: nr.refractory_scale,
            surrogate_tau: nr.surrogate_tau_mv,
            surrogate_scale: nr.surrogate_scale,
            trunc_tol: nr.kernel_trunc_tol,
        };
        nc.rate_window = n.rate_window_steps;
        nc.trace_clip = n.trace_clip;
        nc.init = InitParams { weight_gain: n.weight_gain, alpha_bound: n.alpha_bound };
        nc.action_dims = action_dims;
        nc.sigma_log_init = n.sigma_log_init;
        nc.refractory_grad = n.refractory_grad;
        Ok(nc)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key =` assignment (or `[section]` header) in `text`.
fn find_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        if key.starts_with('[') {
            l.starts_with(key)
        } else {
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        }
    })
    .map(|i| i + 1)
}
