//! Spike-response-model layers with plastic synapses.
//!
//! Membrane potential of layer `l` at step `t`:
//!
//! ```text
//! a(t) = Σ_k eps[k] · s_in(t - k)
//! u(t) = (W + α ⊙ E) · a(t) + Σ_k nu[k] · s_self(t - k)
//! s(t) = spike(u(t))
//! ```
//!
//! There is no hard reset; the refractory kernel `nu` carries the
//! after-spike suppression. Traces `E` are advanced every `rate_window`
//! steps from windowed spike rates.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{SurrogateParams, Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::plasticity::{self, PlasticityRuleParams, RuleKind, RuleVars, TraceState};
use crate::tensor::{Shape, Tensor};

/// Neuron-model constants. Times are in steps of the 1 ms grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronParams {
    pub theta_mv: f64,
    pub tau_s: f64,
    pub tau_ref: f64,
    pub refr_scale: f64,
    pub surrogate_tau: f64,
    pub surrogate_scale: f64,
    pub trunc_tol: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            theta_mv: 10.0,
            tau_s: 10.0,
            tau_ref: 2.0,
            refr_scale: 2.0,
            surrogate_tau: 1.0,
            surrogate_scale: 1.0,
            trunc_tol: 1e-3,
        }
    }
}

impl NeuronParams {
    pub fn surrogate(&self) -> SurrogateParams {
        SurrogateParams { theta: self.theta_mv, tau: self.surrogate_tau, scale: self.surrogate_scale }
    }
}

/// Sampled alpha-shaped response kernel and refractory kernel, both `k` long.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    pub eps: Vec<f64>,
    pub nu: Vec<f64>,
}

impl KernelBank {
    pub fn k(&self) -> usize {
        self.eps.len()
    }
}

fn alpha(t: f64, tau: f64) -> f64 {
    (t / tau) * math::exp(1.0 - t / tau)
}

/// `eps[t] = (t/τ_s)·e^(1 - t/τ_s)`, `nu[t] = -refr_scale·θ·(t/τ_ref)·e^(1 - t/τ_ref)`.
///
/// `K` is the smallest length at which the last sample of both kernels is
/// below `trunc_tol` times its peak.
pub fn build_kernels(
    tau_s: f64,
    tau_ref: f64,
    theta: f64,
    refr_scale: f64,
    trunc_tol: f64,
) -> Result<KernelBank> {
    if !(tau_s > 0.0) || !(tau_ref > 0.0) {
        return Err(Error::Config(alloc::format!(
            "kernel time constants must be positive (tau_s = {tau_s}, tau_ref = {tau_ref})"
        )));
    }
    if !(trunc_tol > 0.0 && trunc_tol < 1.0) {
        return Err(Error::Config(alloc::format!("trunc_tol must lie in (0, 1), got {trunc_tol}")));
    }
    // both kernels peak at 1 (before scaling) at t = tau
    let tail_len = |tau: f64| {
        let mut t = libm::ceil(tau) as usize;
        while alpha(t as f64, tau) >= trunc_tol {
            t += 1;
        }
        t + 1
    };
    let k = tail_len(tau_s).max(tail_len(tau_ref));
    let eps = (0..k).map(|t| alpha(t as f64, tau_s)).collect();
    let nu = (0..k).map(|t| -refr_scale * theta * alpha(t as f64, tau_ref)).collect();
    Ok(KernelBank { eps, nu })
}

/// `a_j = Σ_k eps[k] · history[k][j]`, where `history[0]` is the current step.
pub fn psp_response(history: &[&[f64]], eps: &[f64], n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n];
    for (row, &w) in history.iter().zip(eps) {
        for (x, s) in a.iter_mut().zip(row.iter()) {
            *x += w * s;
        }
    }
    a
}

/// Mean of the last `window` entries of `history` (most recent first),
/// treating steps before the episode start as silent.
pub fn rate_update(history: &[&[f64]], window: usize, n: usize) -> Vec<f64> {
    let mut r = vec![0.0; n];
    for row in history.iter().take(window) {
        for (x, s) in r.iter_mut().zip(row.iter()) {
            *x += s;
        }
    }
    r.iter_mut().for_each(|x| *x /= window as f64);
    r
}

/// Learnable parameters of one fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w: Tensor,
    pub alpha: Tensor,
    pub rule: PlasticityRuleParams,
    /// Log standard deviation of Gaussian actions, on continuous-control
    /// output layers only.
    pub sigma_log: Option<Tensor>,
}

impl LayerParams {
    /// `W ~ U(-b, b)` with `b = sqrt(6 / (n_in + n_out)) · 10 / τ_s`,
    /// `α ~ U(-0.01, 0.01)`.
    pub fn init<R: Rng + ?Sized>(
        n_in: usize,
        n_out: usize,
        kind: RuleKind,
        clip: f64,
        tau_s: f64,
        init: &InitParams,
        rng: &mut R,
    ) -> Result<Self> {
        let b = math::sqrt(6.0 / (n_in + n_out) as f64) * 10.0 / tau_s * init.weight_gain;
        let shape = Shape::matrix(n_out, n_in);
        let w = Tensor::from_fn(shape, |_| rng.random_range(-b..b));
        let a = init.alpha_bound;
        let alpha = Tensor::from_fn(shape, |_| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 });
        let rule = PlasticityRuleParams::init(kind, n_in, n_out, clip, rng)?;
        Ok(LayerParams { w, alpha, rule, sigma_log: None })
    }

    pub fn n_in(&self) -> usize {
        self.w.shape().cols()
    }

    pub fn n_out(&self) -> usize {
        self.w.shape().rows()
    }

    /// Mutable views in the canonical order used for gradients, optimizer
    /// moments and checkpoints.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.w, &mut self.alpha, &mut self.rule.eta_raw];
        v.extend(self.rule.eta_phi_raw.as_mut());
        v.extend(self.rule.psi.as_mut());
        v.extend(self.rule.w_m.as_mut());
        v.extend(self.sigma_log.as_mut());
        v
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![("w", &self.w), ("alpha", &self.alpha), ("eta_raw", &self.rule.eta_raw)];
        v.extend(self.rule.eta_phi_raw.as_ref().map(|t| ("eta_phi_raw", t)));
        v.extend(self.rule.psi.as_ref().map(|t| ("psi", t)));
        v.extend(self.rule.w_m.as_ref().map(|t| ("w_m", t)));
        v.extend(self.sigma_log.as_ref().map(|t| ("sigma_log", t)));
        v
    }
}

/// Initialization scales. The defaults are the documented ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitParams {
    /// Multiplies the uniform weight bound.
    pub weight_gain: f64,
    pub alpha_bound: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams { weight_gain: 1.0, alpha_bound: 0.01 }
    }
}

/// Tape handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w: Var,
    pub alpha: Var,
    pub rule: RuleVars,
    pub sigma_log: Option<Var>,
}

impl LayerVars {
    pub fn register(tape: &mut Tape, p: &LayerParams) -> Result<Self> {
        Ok(LayerVars {
            w: tape.param(p.w.clone()),
            alpha: tape.param(p.alpha.clone()),
            rule: RuleVars::register(tape, &p.rule)?,
            sigma_log: p.sigma_log.as_ref().map(|t| tape.param(t.clone())),
        })
    }

    /// Same order as [`LayerParams::tensors_mut`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = vec![self.w, self.alpha, self.rule.eta_raw];
        v.extend(self.rule.eta_phi_raw);
        v.extend(self.rule.psi);
        v.extend(self.rule.w_m);
        v.extend(self.sigma_log);
        v
    }
}

/// Per-episode dynamic state of one layer. All entries are tape nodes.
#[derive(Clone, Debug)]
pub struct LayerState {
    /// Presynaptic spikes, most recent first.
    pub hist_in: VecDeque<Var>,
    /// Own spikes, most recent first.
    pub hist_self: VecDeque<Var>,
    pub trace: TraceState,
    /// `W + α ⊙ E`, refreshed after every trace update.
    pub w_eff: Var,
    pub rate_pre: Option<Var>,
    pub rate_post: Option<Var>,
    pub u: Option<Var>,
    pub steps: usize,
    n_in: usize,
    n_out: usize,
    hist_len: usize,
}

impl LayerState {
    /// Zeroed state: empty histories, `E = 0`, `phi = 0`.
    pub fn reset(tape: &mut Tape, vars: &LayerVars, n_in: usize, n_out: usize, hist_len: usize) -> Self {
        LayerState {
            hist_in: VecDeque::with_capacity(hist_len + 1),
            hist_self: VecDeque::with_capacity(hist_len + 1),
            trace: TraceState::zeros(tape, vars.rule.kind, n_in, n_out),
            w_eff: vars.w,
            rate_pre: None,
            rate_post: None,
            u: None,
            steps: 0,
            n_in,
            n_out,
            hist_len,
        }
    }
}

/// Shared per-network constants used while stepping layers.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub kernels: KernelBank,
    pub surrogate: SurrogateParams,
    /// Rate window and trace-update cadence, in steps.
    pub rate_window: usize,
    /// Propagate gradients through the refractory feedback.
    pub refractory_grad: bool,
}

impl Dynamics {
    pub fn new(neuron: &NeuronParams, rate_window: usize) -> Result<Self> {
        if rate_window == 0 {
            return Err(Error::Config("rate window must be at least 1 step".into()));
        }
        let kernels = build_kernels(
            neuron.tau_s,
            neuron.tau_ref,
            neuron.theta_mv,
            neuron.refr_scale,
            neuron.trunc_tol,
        )?;
        Ok(Dynamics { kernels, surrogate: neuron.surrogate(), rate_window, refractory_grad: false })
    }

    fn hist_len(&self) -> usize {
        self.kernels.k().max(self.rate_window)
    }

    /// PSP drive from the presynaptic history.
    pub fn psp(&self, tape: &mut Tape, state: &LayerState) -> Result<Var> {
        let terms: Vec<(Var, f64)> = state
            .hist_in
            .iter()
            .zip(&self.kernels.eps)
            .filter(|(_, &w)| w != 0.0)
            .map(|(&v, &w)| (v, w))
            .collect();
        if terms.is_empty() {
            return Ok(tape.constant(Tensor::zeros(Shape::vector(state.n_in))));
        }
        Ok(tape.weighted_sum(&terms)?)
    }

    /// `(W + α ⊙ E)·a + Σ_k nu[k]·s_self(t-k)`.
    pub fn membrane(&self, tape: &mut Tape, state: &LayerState, a: Var) -> Result<Var> {
        let syn = tape.mat_vec(state.w_eff, a)?;
        // hist_self[0] is the previous step, i.e. lag 1
        let terms: Vec<(Var, f64)> = state
            .hist_self
            .iter()
            .zip(self.kernels.nu.iter().skip(1))
            .filter(|(_, &w)| w != 0.0)
            .map(|(&v, &w)| (v, w))
            .collect();
        if terms.is_empty() {
            return Ok(syn);
        }
        let refr = if self.refractory_grad {
            tape.weighted_sum(&terms)?
        } else {
            let n = state.n_out;
            let mut d = vec![0.0; n];
            for &(v, w) in &terms {
                for (x, s) in d.iter_mut().zip(tape.value(v).data()) {
                    *x += w * s;
                }
            }
            tape.constant(Tensor::vector(d))
        };
        Ok(tape.add(syn, refr)?)
    }

    fn window_rate(&self, tape: &mut Tape, hist: &VecDeque<Var>) -> Result<Var> {
        let w = 1.0 / self.rate_window as f64;
        let terms: Vec<(Var, f64)> = hist.iter().take(self.rate_window).map(|&v| (v, w)).collect();
        Ok(tape.weighted_sum(&terms)?)
    }

    /// One step of a layer: ingest `s_in`, integrate, spike, and advance the
    /// trace when a full rate window has elapsed.
    pub fn layer_step(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        state: &mut LayerState,
        s_in: Var,
    ) -> Result<Var> {
        let sin_shape = tape.shape(s_in);
        if sin_shape != Shape::vector(state.n_in) {
            return Err(Error::Length(alloc::format!(
                "layer expects {} inputs, got shape {sin_shape}",
                state.n_in
            )));
        }
        state.hist_in.push_front(s_in);
        state.hist_in.truncate(state.hist_len);
        let a = self.psp(tape, state)?;
        let u = self.membrane(tape, state, a)?;
        let s = tape.spike(u, self.surrogate)?;
        state.u = Some(u);
        state.hist_self.push_front(s);
        state.hist_self.truncate(state.hist_len);
        state.steps += 1;

        if state.steps % self.rate_window == 0 {
            let r_pre = self.window_rate(tape, &state.hist_in)?;
            let r_post = self.window_rate(tape, &state.hist_self)?;
            state.rate_pre = Some(r_pre);
            state.rate_post = Some(r_post);
            if vars.rule.kind.is_plastic() {
                state.trace = plasticity::apply_rule(tape, &vars.rule, state.trace, r_pre, r_post)?;
                let ae = tape.mul(vars.alpha, state.trace.e)?;
                state.w_eff = tape.add(vars.w, ae)?;
            }
        }
        Ok(s)
    }
}

/// Layer sizes and rules of a feed-forward plastic network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_size: usize,
    /// Hidden layers followed by the output layer.
    pub layer_sizes: Vec<usize>,
    /// One rule per entry of `layer_sizes`.
    pub rules: Vec<RuleKind>,
    pub neuron: NeuronParams,
    pub rate_window: usize,
    pub trace_clip: f64,
    pub init: InitParams,
    /// Gaussian-action dimensionality for continuous control; `None` for
    /// the discrete cue task.
    pub action_dims: Option<usize>,
    pub sigma_log_init: f64,
    pub refractory_grad: bool,
}

impl NetworkConfig {
    pub fn new(input_size: usize, layer_sizes: Vec<usize>, rule: RuleKind) -> Self {
        let rules = vec![rule; layer_sizes.len()];
        NetworkConfig {
            input_size,
            layer_sizes,
            rules,
            neuron: NeuronParams::default(),
            rate_window: 20,
            trace_clip: plasticity::DEFAULT_TRACE_CLIP,
            init: InitParams::default(),
            action_dims: None,
            sigma_log_init: 0.0,
            refractory_grad: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::Config("every layer size must be > 0".into()));
        }
        if self.rules.len() != self.layer_sizes.len() {
            return Err(Error::Config(alloc::format!(
                "{} rules given for {} layers",
                self.rules.len(),
                self.layer_sizes.len()
            )));
        }
        if self.rate_window == 0 {
            return Err(Error::Config("rate window must be at least 1 step".into()));
        }
        if !(self.trace_clip > 0.0) {
            return Err(Error::Config("trace clip must be > 0".into()));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }
}

/// Network parameters plus the shared dynamics constants.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub dynamics: Dynamics,
    pub layers: Vec<LayerParams>,
}

impl Network {
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut dynamics = Dynamics::new(&config.neuron, config.rate_window)?;
        dynamics.refractory_grad = config.refractory_grad;
        let mut layers = Vec::with_capacity(config.layer_sizes.len());
        let mut n_in = config.input_size;
        for (&n_out, &kind) in config.layer_sizes.iter().zip(&config.rules) {
            layers.push(LayerParams::init(
                n_in,
                n_out,
                kind,
                config.trace_clip,
                config.neuron.tau_s,
                &config.init,
                rng,
            )?);
            n_in = n_out;
        }
        if let (Some(d), Some(last)) = (config.action_dims, layers.last_mut()) {
            last.sigma_log = Some(Tensor::full(Shape::vector(d), config.sigma_log_init));
        }
        Ok(Network { config, dynamics, layers })
    }

    /// All learnable tensors in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    /// `(name, tensor)` pairs in canonical order, e.g. `layer0.w`.
    pub fn named_tensors(&self) -> Vec<(alloc::string::String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensors().into_iter().map(move |(n, t)| (alloc::format!("layer{i}.{n}"), t))
            })
            .collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Registers parameters on `tape` and returns zeroed per-episode state.
    pub fn begin(&self, tape: &mut Tape) -> Result<Rollout> {
        let mut vars = Vec::with_capacity(self.layers.len());
        let mut states = Vec::with_capacity(self.layers.len());
        let hist_len = self.dynamics.hist_len();
        for p in &self.layers {
            let v = LayerVars::register(tape, p)?;
            states.push(LayerState::reset(tape, &v, p.n_in(), p.n_out(), hist_len));
            vars.push(v);
        }
        Ok(Rollout { vars, states, outputs: Vec::new() })
    }
}

/// One episode's view of a network on a tape.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub vars: Vec<LayerVars>,
    pub states: Vec<LayerState>,
    /// Spikes of every layer at the most recent step.
    pub outputs: Vec<Var>,
}

impl Rollout {
    /// Feeds one step of input spikes through all layers; returns the output
    /// layer's spikes.
    pub fn step(&mut self, net: &Network, tape: &mut Tape, input: Var) -> Result<Var> {
        self.outputs.clear();
        let mut s = input;
        for (v, st) in self.vars.iter().zip(self.states.iter_mut()) {
            s = net.dynamics.layer_step(tape, v, st, s)?;
            self.outputs.push(s);
        }
        Ok(s)
    }

    pub fn step_values(&mut self, net: &Network, tape: &mut Tape, input: &[f64]) -> Result<Var> {
        let x = tape.constant(Tensor::vector(input.to_vec()));
        self.step(net, tape, x)
    }

    /// Every parameter leaf in canonical order.
    pub fn leaves(&self) -> Vec<Var> {
        self.vars.iter().flat_map(|v| v.leaves()).collect()
    }

    pub fn sigma_log(&self) -> Option<Var> {
        self.vars.last().and_then(|v| v.sigma_log)
    }
}
