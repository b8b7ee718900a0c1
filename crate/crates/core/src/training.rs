//! Policy-gradient training through BPTT: Adam, REINFORCE with a running
//! baseline for the cue task, and PPO with GAE for continuous control.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::encoding::{gaussian_action, CenterLayout, gaussian_log_prob, inject_noise, sample_noise, ActionCodec, NoiseKind, PopulationCodec};
use crate::envs::{self, CueEpisode, CuePattern, CueTaskConfig, Side, ToyEnvConfig, ToyVelocityEnv};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::snn::{Network, Rollout};
use crate::tensor::{Shape, Tensor};

/// `lr_k = base · (1 - k / (total - 1))`, reaching zero at the final update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSchedule {
    pub base: f64,
    pub total: usize,
}

impl LinearSchedule {
    pub fn factor(&self, k: usize) -> f64 {
        if self.total <= 1 {
            return 1.0;
        }
        (1.0 - k as f64 / (self.total - 1) as f64).max(0.0)
    }

    pub fn lr(&self, k: usize) -> f64 {
        self.base * self.factor(k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Applied steps, for bias correction.
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let m: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { config, v: m.clone(), m, t: 0 }
    }

    /// Returns `false` (and leaves everything untouched) when any gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<bool> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Length(alloc::format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::Length(alloc::format!("adam: shape mismatch at parameter {i}")));
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient, skipping optimizer step");
            return Ok(false);
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - crate::math::powi(beta1, self.t as i32);
        let bc2 = 1.0 - crate::math::powi(beta2, self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * mhat / (crate::math::sqrt(vhat) + eps);
            }
        }
        Ok(true)
    }
}

/// One episode as seen by a learner. Every per-step sequence has the same
/// length; `log_probs[t]` is `None` on steps without a decision.
#[derive(Clone, Debug, Default)]
pub struct EpisodeRecord {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<Option<Var>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Option<Vec<f64>>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        if n == 0 {
            return Err(Error::EmptyRecord);
        }
        let ok = self.observations.len() == n
            && self.actions.len() == n
            && self.log_probs.len() == n
            && self.dones.len() == n
            && self.values.as_ref().is_none_or(|v| v.len() == n + 1);
        if !ok {
            return Err(Error::Length("episode record sequences differ in length".into()));
        }
        Ok(())
    }

    pub fn returns(&self, discount: f64) -> Vec<f64> {
        discounted_returns(&self.rewards, discount)
    }
}

pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + discount * acc;
        g[t] = acc;
    }
    g
}

/// `-Σ_t (G_t - b) · log π(a_t)` over the decision steps.
pub fn reinforce_loss(tape: &mut Tape, record: &EpisodeRecord, discount: f64, baseline: f64) -> Result<Var> {
    record.validate()?;
    let g = record.returns(discount);
    let terms: Vec<(Var, f64)> = record
        .log_probs
        .iter()
        .zip(&g)
        .filter_map(|(lp, &gt)| lp.map(|v| (v, -(gt - baseline))))
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyRecord);
    }
    Ok(tape.weighted_sum(&terms)?)
}

/// Raw GAE advantages; `values` carries one bootstrap entry.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Length(alloc::format!(
            "gae needs {} values for {} rewards, got {}",
            rewards.len() + 1,
            rewards.len(),
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Shifts to zero mean and scales to unit variance (left centred when the
/// variance is zero).
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = crate::math::sqrt(var);
    for x in xs.iter_mut() {
        *x -= mean;
        if sd > 1e-12 {
            *x /= sd;
        }
    }
}

fn sum_grads(acc: &mut Option<Vec<Tensor>>, grads: &mut Gradients, leaves: &[Var]) -> Result<()> {
    let got: Vec<Tensor> = leaves
        .iter()
        .map(|&v| grads.take(v).ok_or_else(|| Error::Length("missing parameter gradient".into())))
        .collect::<Result<_>>()?;
    match acc {
        None => *acc = Some(got),
        Some(a) => {
            for (x, g) in a.iter_mut().zip(&got) {
                for (p, q) in x.data_mut().iter_mut().zip(g.data()) {
                    *p += q;
                }
            }
        }
    }
    Ok(())
}

/// How the terminal cue reward is credited to the decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReturnMode {
    /// Reward at the last horizon step, discounted back to the decision.
    #[default]
    Discounted,
    /// Reward credited at the decision itself.
    Bandit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CueTrainConfig {
    pub env: CueTaskConfig,
    pub batch_size: usize,
    pub iterations: usize,
    pub halt_accuracy: f64,
    pub rolling_window: usize,
    pub discount: f64,
    pub return_mode: ReturnMode,
    /// Decay of the running-mean baseline; `None` disables it.
    pub baseline_decay: Option<f64>,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Logits are `gain ·` mean output rate over the decision window;
    /// `None` uses the window length, making logits equal spike counts.
    pub logit_gain: Option<f64>,
}

impl Default for CueTrainConfig {
    fn default() -> Self {
        CueTrainConfig {
            env: CueTaskConfig::default(),
            batch_size: 16,
            iterations: 500,
            halt_accuracy: 0.97,
            rolling_window: 100,
            discount: 0.99,
            return_mode: ReturnMode::Discounted,
            baseline_decay: Some(0.9),
            lr: 5e-4,
            adam: AdamConfig::default(),
            logit_gain: None,
        }
    }
}

impl CueTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.batch_size == 0 || self.iterations == 0 || self.rolling_window == 0 {
            return Err(Error::Config("batch size, iterations and rolling window must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config("discount must lie in [0, 1]".into()));
        }
        if self.baseline_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return Err(Error::Config("baseline decay must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        self.logit_gain.unwrap_or(self.env.decision_duration as f64)
    }
}

/// How the decision is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Sample,
    Greedy,
}

#[derive(Clone, Debug)]
pub struct CueOutcome {
    pub side: Side,
    pub correct: bool,
    pub log_prob: Var,
    /// Hidden-layer spikes summed over neurons and simulated steps.
    pub hidden_spikes: f64,
    pub hidden_neuron_steps: f64,
    pub decision_step: usize,
    /// Parameter leaves of the rollout, in canonical order.
    pub leaves: Vec<Var>,
}

/// Runs `net` on one cue episode up to `steps` (at least to the end of
/// the decision window) and takes a decision from the output spike counts.
pub fn run_cue_episode<R: Rng + ?Sized>(
    net: &Network,
    tape: &mut Tape,
    ep: &CueEpisode,
    gain: f64,
    policy: Policy,
    steps: Option<usize>,
    rng: &mut R,
) -> Result<CueOutcome> {
    let mut ro = net.begin(tape)?;
    let (d0, d1) = ep.decision;
    let steps = steps.unwrap_or(d1).clamp(d1, ep.horizon());
    let mut window = Vec::with_capacity(d1 - d0);
    let mut hidden = 0.0;
    let n_hidden: usize = net.config.layer_sizes[..net.num_layers() - 1].iter().sum();
    for (t, x) in ep.spikes.iter().take(steps).enumerate() {
        let out = ro.step_values(net, tape, x)?;
        hidden += hidden_spikes(tape, &ro);
        if (d0..d1).contains(&t) {
            window.push(out);
        }
    }
    let logits = envs::decision_logits(tape, &window, gain)?;
    let (side, log_prob) = match policy {
        Policy::Sample => envs::decide(tape, logits, rng)?,
        Policy::Greedy => {
            let l = tape.value(logits).data();
            let side = if l[0] > l[1] {
                Side::Left
            } else if l[1] > l[0] {
                Side::Right
            } else if rng.random::<bool>() {
                Side::Left
            } else {
                Side::Right
            };
            (side, envs::log_softmax_at(tape, logits, side.index())?)
        }
    };
    Ok(CueOutcome {
        side,
        correct: side == ep.correct_side,
        log_prob,
        hidden_spikes: hidden,
        hidden_neuron_steps: (n_hidden * steps) as f64,
        decision_step: d1 - 1,
        leaves: ro.leaves(),
    })
}

fn hidden_spikes(tape: &Tape, ro: &Rollout) -> f64 {
    let n = ro.outputs.len();
    ro.outputs[..n.saturating_sub(1)].iter().map(|&s| tape.value(s).data().iter().sum::<f64>()).sum()
}

/// Builds the record of a finished cue episode.
pub fn cue_record(ep: &CueEpisode, outcome: &CueOutcome, mode: ReturnMode) -> EpisodeRecord {
    let t_end = match mode {
        ReturnMode::Discounted => ep.horizon(),
        ReturnMode::Bandit => outcome.decision_step + 1,
    };
    let mut rec = EpisodeRecord {
        observations: ep.spikes[..t_end].to_vec(),
        actions: vec![Vec::new(); t_end],
        log_probs: vec![None; t_end],
        rewards: vec![0.0; t_end],
        dones: vec![false; t_end],
        values: None,
    };
    rec.actions[outcome.decision_step] = vec![outcome.side.index() as f64];
    rec.log_probs[outcome.decision_step] = Some(outcome.log_prob);
    rec.rewards[t_end - 1] = envs::cue_reward(outcome.side, ep.correct_side);
    rec.dones[t_end - 1] = true;
    rec
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Minus the rolling accuracy.
    pub loss: f64,
    pub accuracy: f64,
    pub batch_accuracy: f64,
    pub mean_hidden_rate: f64,
    pub lr: f64,
    /// Policy-gradient surrogate averaged over the batch.
    pub pg_loss: f64,
    pub applied: bool,
}

/// Resumable REINFORCE trainer. Every random draw is keyed by
/// `(iteration, episode)`, so a restored trainer continues exactly.
#[derive(Clone, Debug)]
pub struct CueTrainer {
    pub config: CueTrainConfig,
    pub net: Network,
    pub adam: Adam,
    pub baseline: f64,
    pub recent: VecDeque<bool>,
    pub iteration: usize,
    pub seeds: SeedTree,
}

impl CueTrainer {
    pub fn new(net: Network, config: CueTrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if net.config.input_size != config.env.input_size() || net.config.output_size() != 2 {
            return Err(Error::Config(alloc::format!(
                "cue task needs {} inputs and 2 outputs, network has {} and {}",
                config.env.input_size(),
                net.config.input_size,
                net.config.output_size()
            )));
        }
        let adam = {
            let mut net = net.clone();
            let ps = net.tensors_mut();
            let refs: Vec<&Tensor> = ps.iter().map(|p| &**p).collect();
            Adam::new(config.adam, &refs)
        };
        Ok(CueTrainer {
            config,
            net,
            adam,
            baseline: 0.0,
            recent: VecDeque::new(),
            iteration: 0,
            seeds: SeedTree::new(seed),
        })
    }

    pub fn schedule(&self) -> LinearSchedule {
        LinearSchedule { base: self.config.lr, total: self.config.iterations }
    }

    pub fn rolling_accuracy(&self) -> f64 {
        if self.recent.is_empty() {
            return 0.0;
        }
        self.recent.iter().filter(|&&c| c).count() as f64 / self.recent.len() as f64
    }

    pub fn halted(&self) -> bool {
        self.recent.len() >= self.config.rolling_window && self.rolling_accuracy() >= self.config.halt_accuracy
    }

    pub fn finished(&self) -> bool {
        self.halted() || self.iteration >= self.config.iterations
    }

    /// One batch: roll out, backpropagate, and take an Adam step.
    pub fn step(&mut self) -> Result<IterationStats> {
        let k = self.iteration;
        let cfg = &self.config;
        let b = cfg.batch_size as f64;
        let gain = cfg.gain();
        let mut grads: Option<Vec<Tensor>> = None;
        let (mut correct, mut spikes, mut slots, mut pg) = (0usize, 0.0, 0.0, 0.0);
        let mut returns = Vec::with_capacity(cfg.batch_size);
        for e in 0..cfg.batch_size {
            let key = [k as u64, e as u64];
            let ep = envs::cue_generate(&cfg.env, &mut self.seeds.stream("env", &key))?;
            let mut tape = Tape::new();
            let out =
                run_cue_episode(&self.net, &mut tape, &ep, gain, Policy::Sample, None, &mut self.seeds.stream("policy", &key))?;
            let rec = cue_record(&ep, &out, cfg.return_mode);
            let g = rec.returns(cfg.discount)[out.decision_step];
            returns.push(g);
            let loss = reinforce_loss(&mut tape, &rec, cfg.discount, self.baseline)?;
            let loss = tape.scale(loss, 1.0 / b)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(alloc::format!("policy loss at iteration {k}")));
            }
            pg += lv;
            let mut gr = tape.backward(loss)?;
            sum_grads(&mut grads, &mut gr, &out.leaves)?;
            correct += out.correct as usize;
            spikes += out.hidden_spikes;
            slots += out.hidden_neuron_steps;
            self.recent.push_back(out.correct);
            while self.recent.len() > cfg.rolling_window {
                self.recent.pop_front();
            }
        }
        let lr = self.schedule().lr(k);
        let grads = grads.unwrap_or_default();
        let applied = {
            let mut ps = self.net.tensors_mut();
            self.adam.step(&mut ps, &grads, lr)?
        };
        if let Some(decay) = cfg.baseline_decay {
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            self.baseline = decay * self.baseline + (1.0 - decay) * mean;
        }
        self.iteration += 1;
        let accuracy = self.rolling_accuracy();
        Ok(IterationStats {
            iteration: k,
            loss: -accuracy,
            accuracy,
            batch_accuracy: correct as f64 / b,
            mean_hidden_rate: if slots > 0.0 { spikes / slots } else { 0.0 },
            lr,
            pg_loss: pg,
            applied,
        })
    }

    /// Steps until halting or the iteration budget, reporting every
    /// iteration to `on_iter`.
    pub fn run(&mut self, mut on_iter: impl FnMut(&IterationStats)) -> Result<()> {
        while !self.finished() {
            let s = self.step()?;
            on_iter(&s);
        }
        Ok(())
    }
}

/// Fraction of correct sampled decisions over fresh episodes.
/// Plastic traces evolve within each episode; parameters are untouched.
pub fn eval_accuracy(net: &Network, env: &CueTaskConfig, gain: f64, trials: usize, seeds: &SeedTree) -> Result<f64> {
    eval_accuracy_with(net, env, gain, trials, seeds, CuePattern::Random, Policy::Sample)
}

pub fn eval_accuracy_with(
    net: &Network,
    env: &CueTaskConfig,
    gain: f64,
    trials: usize,
    seeds: &SeedTree,
    pattern: CuePattern,
    policy: Policy,
) -> Result<f64> {
    if trials == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for i in 0..trials {
        let key = [i as u64];
        let ep = envs::cue_generate_with(env, pattern, &mut seeds.stream("eval-env", &key))?;
        let mut tape = Tape::new();
        tape.set_check_finite(false);
        let out = run_cue_episode(net, &mut tape, &ep, gain, policy, None, &mut seeds.stream("eval-policy", &key))?;
        correct += out.correct as usize;
    }
    Ok(correct as f64 / trials as f64)
}

/// Mean hidden spikes per neuron per step over full-horizon episodes.
pub fn firing_rate_report(net: &Network, env: &CueTaskConfig, episodes: usize, seeds: &SeedTree) -> Result<f64> {
    let (mut spikes, mut slots) = (0.0, 0.0);
    for i in 0..episodes {
        let key = [i as u64];
        let ep = envs::cue_generate(env, &mut seeds.stream("rate-env", &key))?;
        let mut tape = Tape::new();
        tape.set_check_finite(false);
        let out = run_cue_episode(
            net,
            &mut tape,
            &ep,
            1.0,
            Policy::Sample,
            Some(ep.horizon()),
            &mut seeds.stream("rate-policy", &key),
        )?;
        spikes += out.hidden_spikes;
        slots += out.hidden_neuron_steps;
    }
    Ok(if slots > 0.0 { spikes / slots } else { 0.0 })
}

/// Non-spiking linear critic over the hidden-layer rates.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueHead {
    pub w: Tensor,
    pub b: Tensor,
}

impl ValueHead {
    pub fn zeros(n: usize) -> Self {
        ValueHead { w: Tensor::zeros(Shape::vector(n)), b: Tensor::scalar(0.0) }
    }

    pub fn predict(&self, rates: &[f64]) -> f64 {
        self.w.data().iter().zip(rates).map(|(w, r)| w * r).sum::<f64>() + self.b.item()
    }

    /// Gradients of `mean (V(x) - y)²`.
    pub fn grads(&self, xs: &[Vec<f64>], ys: &[f64]) -> [Tensor; 2] {
        let n = xs.len().max(1) as f64;
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let e = 2.0 * (self.predict(x) - y) / n;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += e * xi;
            }
            gb += e;
        }
        [Tensor::vector(gw), Tensor::scalar(gb)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub env: ToyEnvConfig,
    /// Encoder neurons per observation dimension.
    pub obs_population: usize,
    pub theta_min: f64,
    pub center_layout: CenterLayout,
    /// Neurons per action dimension; even.
    pub action_population: usize,
    /// Network steps per environment step.
    pub interval: usize,
    pub action_range: (f64, f64),
    pub episodes_per_update: usize,
    pub updates: usize,
    pub epochs: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub value_lr: f64,
    pub adam: AdamConfig,
    /// Halt once the greedy return reaches this fraction of the optimum.
    pub target_fraction: Option<f64>,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            env: ToyEnvConfig::default(),
            obs_population: 8,
            theta_min: 0.05,
            center_layout: CenterLayout::Linear,
            action_population: 10,
            interval: 10,
            action_range: (-4.0, 4.0),
            episodes_per_update: 4,
            updates: 1500,
            epochs: 10,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.97,
            lr: 5e-4,
            value_lr: 1e-2,
            adam: AdamConfig::default(),
            target_fraction: Some(0.8),
            eval_every: 10,
            eval_episodes: 4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.episodes_per_update == 0 || self.updates == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("PPO batch, updates, epochs and eval cadence must be > 0".into()));
        }
        if !(self.clip > 0.0) || !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("PPO needs clip > 0 and gamma, lambda in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn obs_codec(&self) -> Result<PopulationCodec> {
        PopulationCodec::new(
            self.env.observation_bounds(),
            self.obs_population,
            self.theta_min,
            self.center_layout,
        )
    }

    pub fn action_codec(&self) -> Result<ActionCodec> {
        ActionCodec::new(
            self.env.dims,
            self.action_population,
            self.interval,
            vec![self.action_range; self.env.dims],
        )
    }

    pub fn input_size(&self) -> usize {
        2 * self.env.dims * self.obs_population
    }

    pub fn output_size(&self) -> usize {
        self.env.dims * self.action_population
    }
}

/// `min(ρ·Â, clip(ρ, 1-ε, 1+ε)·Â)` with `ρ = exp(log π - log π_old)`.
/// Returns the objective node and the ratio's value.
pub fn ppo_clip_objective(tape: &mut Tape, log_prob: Var, old_log_prob: f64, advantage: f64, clip: f64) -> Result<(Var, f64)> {
    let diff = tape.affine(log_prob, 1.0, -old_log_prob)?;
    let ratio = tape.exp(diff)?;
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip)?;
    let s1 = tape.scale(ratio, advantage)?;
    let s2 = tape.scale(clipped, advantage)?;
    Ok((tape.minimum(s1, s2)?, tape.value(ratio).item()))
}

/// Optional perturbation applied during a toy-env episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSetting {
    pub kind: NoiseKind,
    pub sigma: f64,
}

/// A toy episode with everything needed to replay it through the network.
#[derive(Clone, Debug)]
pub struct ToyEpisode {
    /// `steps × interval` input spike vectors.
    pub inputs: Vec<Vec<Vec<f64>>>,
    /// Sampled actions before noise and clipping.
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Mean hidden rates per step, the critic's features.
    pub features: Vec<Vec<f64>>,
    pub mean_hidden_rate: f64,
}

impl ToyEpisode {
    pub fn ret(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

struct StepOut {
    mean: Var,
    features: Vec<f64>,
    hidden_spikes: f64,
}

fn toy_forward(net: &Network, tape: &mut Tape, ro: &mut Rollout, codec: &ActionCodec, inputs: &[Vec<f64>]) -> Result<StepOut> {
    let mut outs = Vec::with_capacity(inputs.len());
    let n_hidden = net.config.layer_sizes[..net.num_layers() - 1].iter().sum::<usize>().max(1);
    let mut features = vec![0.0; n_hidden];
    let mut hidden_spikes = 0.0;
    for x in inputs {
        outs.push(ro.step_values(net, tape, x)?);
        let mut off = 0;
        for &s in &ro.outputs[..ro.outputs.len() - 1] {
            for (f, v) in features[off..].iter_mut().zip(tape.value(s).data()) {
                *f += v;
                hidden_spikes += v;
            }
            off += tape.value(s).len();
        }
    }
    for f in &mut features {
        *f /= inputs.len() as f64;
    }
    let terms: Vec<(Var, f64)> = outs.iter().map(|&v| (v, 1.0)).collect();
    let counts = tape.weighted_sum(&terms)?;
    let mean = codec.decode_tape(tape, counts)?;
    Ok(StepOut { mean, features, hidden_spikes })
}

/// Runs one toy episode. `greedy` takes mean actions.
pub fn toy_rollout(
    net: &Network,
    cfg: &PpoConfig,
    noise: Option<NoiseSetting>,
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ToyEpisode> {
    let obs_codec = cfg.obs_codec()?;
    let act_codec = cfg.action_codec()?;
    let mut env = ToyVelocityEnv::new(cfg.env.clone())?;
    let d = cfg.env.dims;
    let mut obs = env.reset();
    if let Some(NoiseSetting { kind: NoiseKind::Friction, sigma }) = noise {
        let z = sample_noise(d, sigma, rng);
        env.perturb_friction(&z)?;
    }
    let mut tape = Tape::new();
    tape.set_check_finite(false);
    let mut ro = net.begin(&mut tape)?;
    let sigma_log = ro.sigma_log().ok_or_else(|| Error::Config("network has no action head".into()))?;
    let mut ep = ToyEpisode {
        inputs: Vec::new(),
        actions: Vec::new(),
        old_log_probs: Vec::new(),
        rewards: Vec::new(),
        features: Vec::new(),
        mean_hidden_rate: 0.0,
    };
    let mut hidden = 0.0;
    while !env.done() {
        let x = match noise {
            Some(NoiseSetting { kind: NoiseKind::Observation, sigma }) => {
                let z = sample_noise(obs.len(), sigma, rng);
                inject_noise(NoiseKind::Observation, &obs, &z)?
            }
            _ => obs.clone(),
        };
        let inputs: Vec<Vec<f64>> =
            (0..cfg.interval).map(|_| obs_codec.encode_observation(&x, rng)).collect::<Result<_>>()?;
        let out = toy_forward(net, &mut tape, &mut ro, &act_codec, &inputs)?;
        hidden += out.hidden_spikes;
        let (action, logp) = if greedy {
            let a = tape.value(out.mean).data().to_vec();
            let lp = gaussian_log_prob(&mut tape, out.mean, sigma_log, &a)?;
            (a, lp)
        } else {
            gaussian_action(&mut tape, out.mean, sigma_log, rng)?
        };
        let applied = match noise {
            Some(NoiseSetting { kind: NoiseKind::Action, sigma }) => {
                let z = sample_noise(d, sigma, rng);
                inject_noise(NoiseKind::Action, &action, &z)?
            }
            _ => action.clone(),
        };
        let (next, r) = env.step(&applied)?;
        ep.inputs.push(inputs);
        ep.actions.push(action);
        ep.old_log_probs.push(tape.value(logp).item());
        ep.rewards.push(r);
        ep.features.push(out.features);
        obs = next;
    }
    let n_hidden = net.config.layer_sizes[..net.num_layers() - 1].iter().sum::<usize>().max(1);
    ep.mean_hidden_rate = hidden / (n_hidden * cfg.interval * ep.rewards.len()) as f64;
    Ok(ep)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Largest `|ρ - 1|` over the batch.
    pub max_ratio_deviation: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub epochs: Vec<EpochStats>,
    pub value_loss: f64,
    pub skipped_steps: usize,
}

/// PPO state: policy network, critic and both optimizers.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub config: PpoConfig,
    pub net: Network,
    pub value: ValueHead,
    pub adam: Adam,
    pub value_adam: Adam,
}

impl PpoLearner {
    pub fn new(net: Network, config: PpoConfig) -> Result<Self> {
        config.validate()?;
        if net.config.input_size != config.input_size() || net.config.output_size() != config.output_size() {
            return Err(Error::Config(alloc::format!(
                "toy task needs {} inputs and {} outputs, network has {} and {}",
                config.input_size(),
                config.output_size(),
                net.config.input_size,
                net.config.output_size()
            )));
        }
        if net.layers.last().and_then(|l| l.sigma_log.as_ref()).is_none_or(|s| s.len() != config.env.dims) {
            return Err(Error::Config("network needs a σ_log vector per action dimension".into()));
        }
        let adam = {
            let mut n = net.clone();
            let ps = n.tensors_mut();
            let refs: Vec<&Tensor> = ps.iter().map(|p| &**p).collect();
            Adam::new(config.adam, &refs)
        };
        let n_hidden = net.config.layer_sizes[..net.num_layers() - 1].iter().sum::<usize>().max(1);
        let value = ValueHead::zeros(n_hidden);
        let value_adam = Adam::new(config.adam, &[&value.w, &value.b]);
        Ok(PpoLearner { config, net, value, adam, value_adam })
    }

    pub fn schedule(&self) -> LinearSchedule {
        LinearSchedule { base: self.config.lr, total: self.config.updates }
    }

    /// Clipped-surrogate update over a batch of episodes. `lr_factor` scales
    /// both learning rates.
    pub fn update(&mut self, batch: &[ToyEpisode], lr_factor: f64) -> Result<PpoStats> {
        let cfg = self.config.clone();
        let act_codec = cfg.action_codec()?;
        let mut advantages = Vec::new();
        let mut targets = Vec::new();
        let mut features = Vec::new();
        for ep in batch {
            let mut values: Vec<f64> = ep.features.iter().map(|f| self.value.predict(f)).collect();
            values.push(0.0);
            let adv = gae(&ep.rewards, &values, cfg.gamma, cfg.lambda)?;
            targets.extend(discounted_returns(&ep.rewards, cfg.gamma));
            advantages.extend(adv);
            features.extend(ep.features.iter().cloned());
        }
        normalize(&mut advantages);
        let n = advantages.len();
        if n == 0 {
            return Err(Error::EmptyRecord);
        }
        let mut stats = PpoStats::default();
        for _ in 0..cfg.epochs {
            let mut grads: Option<Vec<Tensor>> = None;
            let mut es = EpochStats::default();
            let mut idx = 0;
            for ep in batch {
                let mut tape = Tape::new();
                tape.set_check_finite(false);
                let mut ro = self.net.begin(&mut tape)?;
                let leaves = ro.leaves();
                let sigma_log = ro.sigma_log().ok_or(Error::EmptyRecord)?;
                let mut terms = Vec::with_capacity(ep.rewards.len());
                for (t, inputs) in ep.inputs.iter().enumerate() {
                    let out = toy_forward(&self.net, &mut tape, &mut ro, &act_codec, inputs)?;
                    let lp = gaussian_log_prob(&mut tape, out.mean, sigma_log, &ep.actions[t])?;
                    let (obj, rv) = ppo_clip_objective(&mut tape, lp, ep.old_log_probs[t], advantages[idx], cfg.clip)?;
                    terms.push((obj, -1.0 / n as f64));
                    es.mean_ratio += rv / n as f64;
                    es.max_ratio_deviation = es.max_ratio_deviation.max((rv - 1.0).abs());
                    es.approx_kl += (ep.old_log_probs[t] - tape.value(lp).item()) / n as f64;
                    if (rv - 1.0).abs() > cfg.clip {
                        es.clip_fraction += 1.0 / n as f64;
                    }
                    idx += 1;
                }
                let loss = tape.weighted_sum(&terms)?;
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::NonFinite(alloc::format!(
                        "PPO objective (mean ratio so far {:.4})",
                        es.mean_ratio
                    )));
                }
                es.loss += lv;
                let mut g = tape.backward(loss)?;
                sum_grads(&mut grads, &mut g, &leaves)?;
            }
            let grads = grads.unwrap_or_default();
            let mut ps = self.net.tensors_mut();
            if !self.adam.step(&mut ps, &grads, cfg.lr * lr_factor)? {
                stats.skipped_steps += 1;
            }
            let vg = self.value.grads(&features, &targets);
            let mut vp = [&mut self.value.w, &mut self.value.b];
            self.value_adam.step(&mut vp, &vg, cfg.value_lr * lr_factor)?;
            stats.epochs.push(es);
        }
        stats.value_loss = features
            .iter()
            .zip(&targets)
            .map(|(f, y)| {
                let e = self.value.predict(f) - y;
                e * e
            })
            .sum::<f64>()
            / n as f64;
        Ok(stats)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoIteration {
    pub update: usize,
    pub mean_return: f64,
    /// Greedy evaluation return, on evaluation updates only.
    pub eval_return: Option<f64>,
    pub mean_hidden_rate: f64,
    pub lr: f64,
    pub stats: PpoStats,
}

/// Resumable PPO loop on the toy environment.
#[derive(Clone, Debug)]
pub struct PpoTrainer {
    pub learner: PpoLearner,
    pub update: usize,
    pub best_eval: f64,
    pub reached_target: bool,
    pub seeds: SeedTree,
}

impl PpoTrainer {
    pub fn new(net: Network, config: PpoConfig, seed: u64) -> Result<Self> {
        Ok(PpoTrainer {
            learner: PpoLearner::new(net, config)?,
            update: 0,
            best_eval: f64::NEG_INFINITY,
            reached_target: false,
            seeds: SeedTree::new(seed),
        })
    }

    pub fn optimal_return(&self) -> f64 {
        self.learner.config.env.optimal_return()
    }

    pub fn finished(&self) -> bool {
        self.reached_target || self.update >= self.learner.config.updates
    }

    pub fn evaluate(&self, episodes: usize, noise: Option<NoiseSetting>, key: u64) -> Result<Vec<f64>> {
        (0..episodes)
            .map(|i| {
                let mut rng = self.seeds.stream("eval", &[key, i as u64]);
                toy_rollout(&self.learner.net, &self.learner.config, noise, true, &mut rng).map(|e| e.ret())
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<PpoIteration> {
        let k = self.update;
        let cfg = self.learner.config.clone();
        let batch: Vec<ToyEpisode> = (0..cfg.episodes_per_update)
            .map(|e| {
                let mut rng = self.seeds.stream("rollout", &[k as u64, e as u64]);
                toy_rollout(&self.learner.net, &cfg, None, false, &mut rng)
            })
            .collect::<Result<_>>()?;
        let factor = self.learner.schedule().factor(k);
        let stats = self.learner.update(&batch, factor)?;
        self.update += 1;
        let mean_return = batch.iter().map(|e| e.ret()).sum::<f64>() / batch.len() as f64;
        let rate = batch.iter().map(|e| e.mean_hidden_rate).sum::<f64>() / batch.len() as f64;
        let eval_return = if self.update % cfg.eval_every == 0 || self.update == cfg.updates {
            let r = self.evaluate(cfg.eval_episodes, None, self.update as u64)?;
            let m = r.iter().sum::<f64>() / r.len().max(1) as f64;
            self.best_eval = self.best_eval.max(m);
            if cfg.target_fraction.is_some_and(|f| m >= f * self.optimal_return()) {
                self.reached_target = true;
            }
            Some(m)
        } else {
            None
        };
        Ok(PpoIteration { update: k, mean_return, eval_return, mean_hidden_rate: rate, lr: cfg.lr * factor, stats })
    }

    pub fn run(&mut self, mut on_iter: impl FnMut(&PpoIteration)) -> Result<()> {
        while !self.finished() {
            let s = self.step()?;
            on_iter(&s);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plasticity::RuleKind;
    use crate::snn::NetworkConfig;

    fn record(rewards: Vec<f64>, lps: Vec<Option<Var>>) -> EpisodeRecord {
        let n = rewards.len();
        EpisodeRecord {
            observations: vec![Vec::new(); n],
            actions: vec![Vec::new(); n],
            log_probs: lps,
            rewards,
            dones: vec![false; n],
            values: None,
        }
    }

    #[test]
    fn reinforce_single_terminal_reward() {
        let mut tape = Tape::new();
        let lp = tape.param(Tensor::scalar(-0.693));
        let rec = record(vec![1.0], vec![Some(lp)]);
        let l = reinforce_loss(&mut tape, &rec, 0.99, 0.0).unwrap();
        assert!((tape.value(l).item() - 0.693).abs() < 1e-12);
        let rec = record(vec![-1.0], vec![Some(lp)]);
        let l = reinforce_loss(&mut tape, &rec, 0.99, 0.0).unwrap();
        assert!((tape.value(l).item() + 0.693).abs() < 1e-12);
    }

    #[test]
    fn reinforce_matches_direct_summation() {
        let mut tape = Tape::new();
        let lps: Vec<Var> = [-0.2, -1.1, -0.7].iter().map(|&v| tape.param(Tensor::scalar(v))).collect();
        let r = [0.5, -1.0, 2.0];
        let rec = record(r.to_vec(), lps.iter().map(|&v| Some(v)).collect());
        let l = reinforce_loss(&mut tape, &rec, 0.9, 0.1).unwrap();
        let g0 = 0.5 + 0.9 * (-1.0) + 0.81 * 2.0;
        let g1 = -1.0 + 0.9 * 2.0;
        let g2 = 2.0;
        let want = -((g0 - 0.1) * -0.2 + (g1 - 0.1) * -1.1 + (g2 - 0.1) * -0.7);
        assert!((tape.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn reinforce_rejects_empty() {
        let mut tape = Tape::new();
        assert!(matches!(reinforce_loss(&mut tape, &EpisodeRecord::default(), 0.99, 0.0), Err(Error::EmptyRecord)));
    }

    #[test]
    fn reinforce_gradient_direction() {
        // two logits, chosen action 0: d loss / d l0 = -r (1 - p0)
        for &r in &[1.0, -1.0] {
            let mut tape = Tape::new();
            let l = tape.param(Tensor::vector(vec![0.3, -0.2]));
            let lp = envs::log_softmax_at(&mut tape, l, 0).unwrap();
            let rec = record(vec![r], vec![Some(lp)]);
            let loss = reinforce_loss(&mut tape, &rec, 0.99, 0.0).unwrap();
            let g = tape.backward(loss).unwrap();
            let g = g.get(l).unwrap().data().to_vec();
            let p0 = 1.0 / (1.0 + (-0.5f64).exp());
            assert!((g[0] + r * (1.0 - p0)).abs() < 1e-12);
            assert!((g[1] - r * (1.0 - p0)).abs() < 1e-12);
            // a descent step raises p0 iff r > 0
            assert_eq!(g[0] < 0.0, r > 0.0);
        }
    }

    #[test]
    fn gae_examples() {
        let a = gae(&[1.0, 1.0], &[0.5, 0.5, 0.0], 0.99, 0.97).unwrap();
        assert!((a[1] - 0.5).abs() < 1e-12);
        assert!((a[0] - 1.47515).abs() < 1e-12);
        assert!(gae(&[1.0], &[0.0], 0.99, 0.97).is_err());
    }

    #[test]
    fn gae_reductions() {
        let r = [0.3, -1.0, 2.0, 0.5];
        let v = [0.1, 0.7, -0.4, 0.2, 0.9];
        let a = gae(&r, &[0.0; 5], 0.99, 1.0).unwrap();
        let g = discounted_returns(&r, 0.99);
        for (x, y) in a.iter().zip(&g) {
            assert!((x - y).abs() < 1e-12);
        }
        let a = gae(&r, &v, 0.99, 0.0).unwrap();
        for t in 0..4 {
            assert!((a[t] - (r[t] + 0.99 * v[t + 1] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut x);
        let m: f64 = x.iter().sum::<f64>() / 4.0;
        let v: f64 = x.iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_properties() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[Tensor::vector(vec![0.0, 0.0])], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);

        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[Tensor::vector(vec![3.0, -0.5])], 0.01).unwrap();
        assert!((p.data()[0] - 0.99).abs() < 1e-6);
        assert!((p.data()[1] + 1.99).abs() < 1e-6);

        let before = p.clone();
        let ok = adam.step(&mut [&mut p], &[Tensor::vector(vec![f64::NAN, 0.0])], 0.01).unwrap();
        assert!(!ok);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_quadratic_bowl() {
        let mut p = Tensor::scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * p.item());
            adam.step(&mut [&mut p], &[g], 0.1).unwrap();
        }
        assert!(p.item().abs() < 0.05, "{}", p.item());
    }

    #[test]
    fn schedule_reaches_zero() {
        let s = LinearSchedule { base: 5e-4, total: 500 };
        assert_eq!(s.lr(0), 5e-4);
        assert!(s.lr(499) <= 1e-6 * 5e-4);
    }

    fn small_cue() -> (Network, CueTrainConfig) {
        let env = CueTaskConfig { population: 2, ..CueTaskConfig::reduced() };
        let cfg = CueTrainConfig { env, batch_size: 2, iterations: 3, ..Default::default() };
        let nc = NetworkConfig::new(cfg.env.input_size(), vec![4, 2], RuleKind::NdpOja);
        let net = Network::init(nc, &mut SeedTree::new(1).stream("init", &[])).unwrap();
        (net, cfg)
    }

    #[test]
    fn trainer_is_deterministic_and_resumable() {
        let (net, cfg) = small_cue();
        let mut a = CueTrainer::new(net.clone(), cfg.clone(), 9).unwrap();
        let mut sa = Vec::new();
        a.run(|s| sa.push(s.clone())).unwrap();

        let mut b = CueTrainer::new(net, cfg, 9).unwrap();
        let mut sb = vec![b.step().unwrap()];
        let mut c = b.clone();
        c.run(|s| sb.push(s.clone())).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.net.layers, c.net.layers);
    }

    #[test]
    fn untrained_network_is_near_chance() {
        let (net, cfg) = small_cue();
        let acc = eval_accuracy(&net, &cfg.env, cfg.gain(), 200, &SeedTree::new(5)).unwrap();
        assert!((0.35..=0.65).contains(&acc), "{acc}");
    }

    #[test]
    fn silent_network_has_zero_rate() {
        let (mut net, cfg) = small_cue();
        for l in &mut net.layers {
            l.w.data_mut().fill(0.0);
        }
        assert_eq!(firing_rate_report(&net, &cfg.env, 3, &SeedTree::new(1)).unwrap(), 0.0);
    }

    fn small_toy() -> (Network, PpoConfig) {
        let cfg = PpoConfig {
            env: ToyEnvConfig { dims: 1, horizon: 4, ..Default::default() },
            obs_population: 4,
            action_population: 4,
            interval: 5,
            episodes_per_update: 2,
            epochs: 2,
            updates: 2,
            ..Default::default()
        };
        let mut nc = NetworkConfig::new(cfg.input_size(), vec![6, cfg.output_size()], RuleKind::DpOja);
        nc.action_dims = Some(1);
        let net = Network::init(nc, &mut SeedTree::new(2).stream("init", &[])).unwrap();
        (net, cfg)
    }

    #[test]
    fn ppo_first_epoch_ratio_is_one() {
        let (net, cfg) = small_toy();
        let mut tr = PpoTrainer::new(net, cfg, 3).unwrap();
        let it = tr.step().unwrap();
        let e0 = it.stats.epochs[0];
        assert!((e0.mean_ratio - 1.0).abs() < 1e-6);
        assert!(e0.max_ratio_deviation < 1e-6);
        assert_eq!(e0.clip_fraction, 0.0);
    }

    #[test]
    fn ppo_solves_a_linear_gaussian_bandit() {
        // r(a) = 4 - (a - 2)^2, so E[r] = 4 - (mu - 2)^2 - sigma^2 and the
        // optimum is 4 as sigma -> 0
        let expected = |mu: f64, sl: f64| 4.0 - (mu - 2.0).powi(2) - (2.0 * sl).exp();
        let mut mu = Tensor::vector(vec![0.0]);
        let mut sl = Tensor::vector(vec![0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[&mu, &sl]);
        let mut rng = SeedTree::new(4).stream("bandit", &[]);
        let mut reached = None;
        for k in 0..200 {
            let (m0, s0) = (mu.item(), sl.item().exp());
            let actions: Vec<f64> =
                (0..64).map(|_| m0 + s0 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)).collect();
            let mut adv: Vec<f64> = actions.iter().map(|a| 4.0 - (a - 2.0).powi(2)).collect();
            normalize(&mut adv);
            let old: Vec<f64> = actions
                .iter()
                .map(|&a| -0.5 * ((a - m0) / s0).powi(2) - sl.item() - 0.5 * (2.0 * core::f64::consts::PI).ln())
                .collect();
            for _ in 0..10 {
                let mut tape = Tape::new();
                let (mv, sv) = (tape.param(mu.clone()), tape.param(sl.clone()));
                let mut terms = Vec::new();
                for (i, &a) in actions.iter().enumerate() {
                    let lp = gaussian_log_prob(&mut tape, mv, sv, &[a]).unwrap();
                    let (obj, _) = ppo_clip_objective(&mut tape, lp, old[i], adv[i], 0.2).unwrap();
                    terms.push((obj, -1.0 / 64.0));
                }
                let loss = tape.weighted_sum(&terms).unwrap();
                let g = tape.backward(loss).unwrap();
                let grads = [g.get(mv).unwrap().clone(), g.get(sv).unwrap().clone()];
                adam.step(&mut [&mut mu, &mut sl], &grads, 0.05).unwrap();
            }
            if expected(mu.item(), sl.item()) >= 0.95 * 4.0 {
                reached = Some(k + 1);
                break;
            }
        }
        assert!(reached.is_some(), "mu {} sigma_log {}", mu.item(), sl.item());
    }

    #[test]
    fn ppo_zero_advantage_leaves_policy() {
        let (net, cfg) = small_toy();
        let mut learner = PpoLearner::new(net, cfg.clone()).unwrap();
        let mut ep = toy_rollout(&learner.net, &cfg, None, false, &mut SeedTree::new(1).stream("r", &[])).unwrap();
        // constant returns of zero with a zero critic give zero advantages
        ep.rewards.fill(0.0);
        let before = learner.net.layers.clone();
        learner.update(&[ep], 1.0).unwrap();
        assert_eq!(before, learner.net.layers);
    }
}
