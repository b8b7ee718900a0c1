//! Task environments: the noisy cue-association maze and a point-mass
//! velocity task for continuous control.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::encoding::{inject_noise, NoiseKind, PopulationCodec};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Side {
        if i == 0 {
            Side::Left
        } else {
            Side::Right
        }
    }
}

/// Per-neuron, per-step spike probabilities of the three activity regimes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CueProbabilities {
    /// Active cue population (and decision population in its window).
    pub cue_event: f64,
    /// Cue and decision populations outside their windows.
    pub cue_rest: f64,
    /// Noise population, always.
    pub noise_rest: f64,
}

impl CueProbabilities {
    pub const LOW_NOISE: CueProbabilities =
        CueProbabilities { cue_event: 0.75, cue_rest: 0.05, noise_rest: 0.2 };
    pub const HIGH_NOISE: CueProbabilities =
        CueProbabilities { cue_event: 0.65, cue_rest: 0.25, noise_rest: 0.4 };
}

#[derive(Clone, Debug, PartialEq)]
pub struct CueTaskConfig {
    pub n_cues: usize,
    pub cue_duration: usize,
    pub rest_choices: Vec<usize>,
    pub decision_duration: usize,
    /// Neurons per population (left, right, decision, noise).
    pub population: usize,
    pub probs: CueProbabilities,
    pub horizon: usize,
}

impl Default for CueTaskConfig {
    fn default() -> Self {
        CueTaskConfig {
            n_cues: 7,
            cue_duration: 25,
            rest_choices: vec![45, 75, 105],
            decision_duration: 25,
            population: 10,
            probs: CueProbabilities::LOW_NOISE,
            horizon: 500,
        }
    }
}

impl CueTaskConfig {
    pub fn high_noise() -> Self {
        CueTaskConfig { probs: CueProbabilities::HIGH_NOISE, ..Self::default() }
    }

    /// Five cues over a 250-step horizon with a 20-step decision window.
    pub fn reduced() -> Self {
        CueTaskConfig { n_cues: 5, decision_duration: 20, horizon: 250, ..Self::default() }
    }

    pub fn input_size(&self) -> usize {
        4 * self.population
    }

    pub fn max_schedule_len(&self) -> usize {
        self.n_cues * self.cue_duration
            + self.rest_choices.iter().copied().max().unwrap_or(0)
            + self.decision_duration
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cues == 0 || self.n_cues % 2 == 0 {
            return Err(Error::Config(alloc::format!("n_cues must be odd, got {}", self.n_cues)));
        }
        let p = self.probs;
        if [p.cue_event, p.cue_rest, p.noise_rest].iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Config("cue probabilities must lie in [0, 1]".into()));
        }
        if self.rest_choices.is_empty() || self.cue_duration == 0 || self.decision_duration == 0 {
            return Err(Error::Config("cue, rest and decision durations must be non-empty".into()));
        }
        if self.population == 0 {
            return Err(Error::Config("population size must be > 0".into()));
        }
        if self.max_schedule_len() > self.horizon {
            return Err(Error::ScheduleTooLong { needed: self.max_schedule_len(), horizon: self.horizon });
        }
        Ok(())
    }
}

/// Which cue sequence to present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CuePattern {
    #[default]
    Random,
    AllLeft,
    AllRight,
    /// Cue populations stay at rest; only noise and the decision cue fire.
    NoCues,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CueEpisode {
    /// Empty for [`CuePattern::NoCues`].
    pub cue_sides: Vec<Side>,
    /// `horizon` rows of `4 · population` spikes.
    pub spikes: Vec<Vec<f64>>,
    pub correct_side: Side,
    /// Half-open step interval of the decision window.
    pub decision: (usize, usize),
    pub rest: usize,
}

impl CueEpisode {
    pub fn horizon(&self) -> usize {
        self.spikes.len()
    }
}

pub fn majority(sides: &[Side]) -> Side {
    let left = sides.iter().filter(|&&s| s == Side::Left).count();
    if 2 * left > sides.len() {
        Side::Left
    } else {
        Side::Right
    }
}

/// Input layout: `[left | right | decision | noise]`, `population` each.
pub fn cue_generate<R: Rng + ?Sized>(config: &CueTaskConfig, rng: &mut R) -> Result<CueEpisode> {
    cue_generate_with(config, CuePattern::Random, rng)
}

pub fn cue_generate_with<R: Rng + ?Sized>(
    config: &CueTaskConfig,
    pattern: CuePattern,
    rng: &mut R,
) -> Result<CueEpisode> {
    config.validate()?;
    let n = config.population;
    let sides: Vec<Side> = match pattern {
        CuePattern::Random => {
            (0..config.n_cues).map(|_| if rng.random::<bool>() { Side::Left } else { Side::Right }).collect()
        }
        CuePattern::AllLeft => vec![Side::Left; config.n_cues],
        CuePattern::AllRight => vec![Side::Right; config.n_cues],
        CuePattern::NoCues => Vec::new(),
    };
    let rest = config.rest_choices[rng.random_range(0..config.rest_choices.len())];
    let cue_end = config.n_cues * config.cue_duration;
    let dec_start = cue_end + rest;
    let dec_end = dec_start + config.decision_duration;
    if dec_end > config.horizon {
        return Err(Error::ScheduleTooLong { needed: dec_end, horizon: config.horizon });
    }
    let p = config.probs;
    let mut spikes = Vec::with_capacity(config.horizon);
    let mut probs = vec![0.0; 4 * n];
    for t in 0..config.horizon {
        let active = if t < cue_end { sides.get(t / config.cue_duration).copied() } else { None };
        let deciding = (dec_start..dec_end).contains(&t);
        for (pop, chunk) in probs.chunks_mut(n).enumerate() {
            let q = match pop {
                0 | 1 if active.map(Side::index) == Some(pop) => p.cue_event,
                2 if deciding => p.cue_event,
                3 => p.noise_rest,
                _ => p.cue_rest,
            };
            chunk.fill(q);
        }
        spikes.push(probs.iter().map(|&q| if rng.random::<f64>() < q { 1.0 } else { 0.0 }).collect());
    }
    let correct_side = match pattern {
        CuePattern::NoCues => {
            if rng.random::<bool>() {
                Side::Left
            } else {
                Side::Right
            }
        }
        _ => majority(&sides),
    };
    Ok(CueEpisode { cue_sides: sides, spikes, correct_side, decision: (dec_start, dec_end), rest })
}

/// Samples a side from `softmax(logits)` and records `log π(side)`.
///
/// `logits` is a 2-vector node; index 0 is left.
pub fn decide<R: Rng + ?Sized>(tape: &mut Tape, logits: Var, rng: &mut R) -> Result<(Side, Var)> {
    let l = tape.value(logits).data();
    if l.len() != 2 {
        return Err(Error::Length(alloc::format!("decision needs 2 logits, got {}", l.len())));
    }
    let p_left = math::sigmoid(l[0] - l[1]);
    let side = if rng.random::<f64>() < p_left { Side::Left } else { Side::Right };
    let logp = log_softmax_at(tape, logits, side.index())?;
    Ok((side, logp))
}

/// `l[i] - log Σ exp(l)`, shifted by the max for stability.
pub fn log_softmax_at(tape: &mut Tape, logits: Var, i: usize) -> Result<Var> {
    let shift = tape.value(logits).data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.affine(logits, 1.0, -shift)?;
    let e = tape.exp(shifted)?;
    let z = tape.sum(e)?;
    let lz = tape.log(z)?;
    let li = tape.slice(shifted, i, 1)?;
    let li = tape.sum(li)?;
    Ok(tape.sub(li, lz)?)
}

/// `+1` for the correct side, `-1` otherwise.
pub fn cue_reward(action: Side, correct: Side) -> f64 {
    if action == correct {
        1.0
    } else {
        -1.0
    }
}

/// Independent point masses, one per action dimension:
///
/// ```text
/// v' = v + dt·(a - f·v)/m,   x' = x + dt·v'
/// r  = Σ v' - energy_cost·‖a‖²
/// ```
///
/// Actions are clipped to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEnvConfig {
    pub dims: usize,
    pub mass: f64,
    pub friction: f64,
    pub dt: f64,
    pub energy_cost: f64,
    pub horizon: usize,
    pub position_bound: f64,
    pub velocity_bound: f64,
}

impl Default for ToyEnvConfig {
    fn default() -> Self {
        ToyEnvConfig {
            dims: 2,
            mass: 1.0,
            friction: 0.2,
            dt: 1.0,
            energy_cost: 0.1,
            horizon: 16,
            position_bound: 50.0,
            velocity_bound: 5.0,
        }
    }
}

impl ToyEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.horizon == 0 {
            return Err(Error::Config("toy env needs dims > 0 and horizon > 0".into()));
        }
        if !(self.mass > 0.0) || !(self.dt > 0.0) || self.friction < 0.0 {
            return Err(Error::Config("toy env needs mass > 0, dt > 0, friction >= 0".into()));
        }
        Ok(())
    }

    pub fn observation_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dims)
            .flat_map(|_| {
                [(-self.position_bound, self.position_bound), (-self.velocity_bound, self.velocity_bound)]
            })
            .collect()
    }

    /// Velocity retained per step.
    fn retention(&self, friction: f64) -> f64 {
        1.0 - self.dt * friction / self.mass
    }

    fn gain(&self) -> f64 {
        self.dt / self.mass
    }

    /// Exact optimum of the return over `[-1, 1]` actions from rest.
    ///
    /// The return is separable in the actions: `a_s` adds
    /// `gain·c_s·a_s - energy_cost·a_s²` with
    /// `c_s = Σ_{t=s}^{H-1} ρ^(t-s)`, so the best action is
    /// `clip(gain·c_s / (2·energy_cost), -1, 1)` at every step.
    pub fn optimal_return(&self) -> f64 {
        let rho = self.retention(self.friction);
        let b = self.gain();
        let mut total = 0.0;
        for s in 0..self.horizon {
            let c: f64 = (0..self.horizon - s).map(|k| math::powi(rho, k as i32)).sum();
            let a = if self.energy_cost > 0.0 { (b * c / (2.0 * self.energy_cost)).clamp(-1.0, 1.0) } else { 1.0 };
            total += b * c * a - self.energy_cost * a * a;
        }
        total * self.dims as f64
    }
}

#[derive(Clone, Debug)]
pub struct ToyVelocityEnv {
    pub config: ToyEnvConfig,
    position: Vec<f64>,
    velocity: Vec<f64>,
    friction: Vec<f64>,
    t: usize,
}

impl ToyVelocityEnv {
    pub fn new(config: ToyEnvConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        Ok(ToyVelocityEnv {
            friction: vec![config.friction; d],
            position: vec![0.0; d],
            velocity: vec![0.0; d],
            config,
            t: 0,
        })
    }

    /// Rescales per-dimension friction as `f ⊙ (1 + z)` for this episode.
    pub fn perturb_friction(&mut self, z: &[f64]) -> Result<()> {
        let base = vec![self.config.friction; self.config.dims];
        self.friction = inject_noise(NoiseKind::Friction, &base, z)?;
        Ok(())
    }

    pub fn friction(&self) -> &[f64] {
        &self.friction
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.position.fill(0.0);
        self.velocity.fill(0.0);
        self.t = 0;
        self.observation()
    }

    /// `[x_0, v_0, x_1, v_1, ...]`.
    pub fn observation(&self) -> Vec<f64> {
        self.position.iter().zip(&self.velocity).flat_map(|(&x, &v)| [x, v]).collect()
    }

    pub fn done(&self) -> bool {
        self.t >= self.config.horizon
    }

    pub fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64)> {
        if action.len() != self.config.dims {
            return Err(Error::Length(alloc::format!(
                "toy env expects {} actions, got {}",
                self.config.dims,
                action.len()
            )));
        }
        let c = &self.config;
        let mut reward = 0.0;
        for i in 0..c.dims {
            let a = if action[i].is_finite() { action[i].clamp(-1.0, 1.0) } else { 0.0 };
            self.velocity[i] += c.dt * (a - self.friction[i] * self.velocity[i]) / c.mass;
            self.position[i] += c.dt * self.velocity[i];
            reward += self.velocity[i] - c.energy_cost * a * a;
        }
        self.t += 1;
        Ok((self.observation(), reward))
    }
}

/// Observation → input spikes for the toy task, with optional additive noise.
pub fn encode_toy_observation<R: Rng + ?Sized>(
    codec: &PopulationCodec,
    obs: &[f64],
    obs_noise: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let x = match obs_noise {
        Some(z) => inject_noise(NoiseKind::Observation, obs, z)?,
        None => obs.to_vec(),
    };
    codec.encode_observation(&x, rng)
}

/// Spike counts of the two output neurons over a window, as logits.
pub fn decision_logits(tape: &mut Tape, window_spikes: &[Var], gain: f64) -> Result<Var> {
    if window_spikes.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let w = gain / window_spikes.len() as f64;
    let terms: Vec<(Var, f64)> = window_spikes.iter().map(|&v| (v, w)).collect();
    Ok(tape.weighted_sum(&terms)?)
}

/// Helper for tests and evaluation: logits from plain spike counts.
pub fn constant_logits(tape: &mut Tape, counts: [f64; 2], window: usize, gain: f64) -> Var {
    let k = gain / window as f64;
    tape.constant(Tensor::vector(vec![counts[0] * k, counts[1] * k]))
}
