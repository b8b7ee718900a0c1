//! Central finite-difference checks of the tape's gradients.
//!
//! Two suites: one per smooth op on small random tensors, and one over whole
//! plastic networks in soft-spike mode, perturbing every learnable tensor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{SpikeMode, Tape, Var};
use crate::encoding::{gaussian_log_prob, ActionCodec};
use crate::error::Result;
use crate::plasticity::RuleKind;
use crate::rng::SeedTree;
use crate::snn::{Network, NetworkConfig};
use crate::tensor::{Shape, Tensor};

/// Worst relative error over the entries of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    /// Entries whose analytic or numeric gradient exceeded the floor.
    pub checked: usize,
}

impl CheckResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|)`, or 0 when both are below `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> Option<f64> {
    let scale = analytic.abs().max(numeric.abs());
    if scale <= floor {
        return None;
    }
    Some((analytic - numeric).abs() / scale)
}

/// Compares the gradient of `f` at `inputs` against central differences.
/// `f` builds the scalar loss from parameter leaves on a fresh tape.
pub fn check_fn<F>(name: &str, inputs: &[Tensor], step: f64, floor: f64, f: F) -> Result<Vec<CheckResult>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.set_check_finite(false);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        t.set_check_finite(false);
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };
    let mut out = Vec::with_capacity(inputs.len());
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let g = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut res = CheckResult { name: alloc::format!("{name}[{i}]"), max_rel_err: 0.0, checked: 0 };
        for k in 0..inputs[i].len() {
            let x0 = xs[i].data()[k];
            xs[i].data_mut()[k] = x0 + step;
            let up = eval(&xs)?;
            xs[i].data_mut()[k] = x0 - step;
            let down = eval(&xs)?;
            xs[i].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * step);
            if let Some(e) = relative_error(g.data()[k], numeric, floor) {
                res.max_rel_err = res.max_rel_err.max(e);
                res.checked += 1;
            }
        }
        out.push(res);
    }
    Ok(out)
}

fn random_tensor<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Every differentiable op away from its kinks, contracted with a random
/// probe so each output entry contributes to the loss.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = SeedTree::new(seed).stream("op-suite", &[]);
    let v3 = Shape::vector(3);
    let m3 = Shape::matrix(3, 3);
    let probe3 = random_tensor(v3, -1.0, 1.0, &mut rng);
    let probe9 = random_tensor(m3, -1.0, 1.0, &mut rng);
    let a = random_tensor(v3, -1.0, 1.0, &mut rng);
    let b = random_tensor(v3, -1.0, 1.0, &mut rng);
    let pos = random_tensor(v3, 0.5, 2.0, &mut rng);
    let m = random_tensor(m3, -1.0, 1.0, &mut rng);
    let m2 = random_tensor(m3, -1.0, 1.0, &mut rng);
    // keep |a - b| well away from zero for minimum
    let far = Tensor::from_fn(v3, |i| a.data()[i] + if i % 2 == 0 { 0.7 } else { -0.7 });

    let dot = |tape: &mut Tape, x: Var, p: &Tensor| -> Result<Var> {
        let c = tape.constant(p.clone());
        let y = tape.mul(x, c)?;
        Ok(tape.sum(y)?)
    };
    let (h, fl) = (1e-5, 1e-8);
    let mut out = Vec::new();
    out.extend(check_fn("add", &[a.clone(), b.clone()], h, fl, |t, v| {
        let y = t.add(v[0], v[1])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("sub", &[a.clone(), b.clone()], h, fl, |t, v| {
        let y = t.sub(v[0], v[1])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("hadamard", &[a.clone(), b.clone()], h, fl, |t, v| {
        let y = t.mul(v[0], v[1])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("minimum", &[a.clone(), far], h, fl, |t, v| {
        let y = t.minimum(v[0], v[1])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("mat-vec", &[m.clone(), a.clone()], h, fl, |t, v| {
        let y = t.mat_vec(v[0], v[1])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("mat-mat", &[m.clone(), m2], h, fl, |t, v| {
        let y = t.mat_mat(v[0], v[1])?;
        dot(t, y, &probe9)
    })?);
    out.extend(check_fn("outer", &[a.clone(), b.clone()], h, fl, |t, v| {
        let y = t.outer(v[0], v[1])?;
        dot(t, y, &probe9)
    })?);
    out.extend(check_fn("scalar-scale", &[a.clone(), Tensor::scalar(0.7)], h, fl, |t, v| {
        let y = t.scale_by(v[0], v[1])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("affine", &[a.clone()], h, fl, |t, v| {
        let y = t.affine(v[0], -1.3, 0.4)?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("exp", &[a.clone()], h, fl, |t, v| {
        let y = t.exp(v[0])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("negate", &[a.clone()], h, fl, |t, v| {
        let y = t.neg(v[0])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("log", &[pos.clone()], h, fl, |t, v| {
        let y = t.log(v[0])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("sigmoid", &[a.clone()], h, fl, |t, v| {
        let y = t.sigmoid(v[0])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("clamp", &[a.clone()], h, fl, |t, v| {
        // bounds outside the sampled range: identity region
        let y = t.clamp(v[0], -5.0, 5.0)?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("mean", &[m.clone()], h, fl, |t, v| {
        let y = t.mean(v[0])?;
        let y2 = t.mul(y, y)?;
        Ok(t.sum(y2)?)
    })?);
    out.extend(check_fn("transpose", &[m.clone()], h, fl, |t, v| {
        let y = t.transpose(v[0])?;
        dot(t, y, &probe9)
    })?);
    out.extend(check_fn("concat", &[a.clone(), b.clone()], h, fl, |t, v| {
        let y = t.concat(&[v[0], v[1]])?;
        let c = t.constant(Tensor::from_fn(Shape::vector(6), |i| (i as f64) - 2.5));
        let y = t.mul(y, c)?;
        Ok(t.sum(y)?)
    })?);
    out.extend(check_fn("slice", &[a.clone()], h, fl, |t, v| {
        let y = t.slice(v[0], 1, 2)?;
        let y = t.mul(y, y)?;
        Ok(t.sum(y)?)
    })?);
    out.extend(check_fn("weighted-sum", &[a.clone(), b.clone()], h, fl, |t, v| {
        let y = t.weighted_sum(&[(v[0], 0.3), (v[1], -1.7), (v[0], 0.5)])?;
        dot(t, y, &probe3)
    })?);
    out.extend(check_fn("soft-spike", &[Tensor::vector(vec![9.0, 10.2, 11.5])], h, fl, |t, v| {
        t.set_spike_mode(SpikeMode::Soft);
        let y = t.spike(v[0], Default::default())?;
        dot(t, y, &probe3)
    })?);
    Ok(out)
}

/// Shape of one network instance in [`network_suite`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetCheckConfig {
    pub neurons: usize,
    pub steps: usize,
    pub seed: u64,
    /// Weight init gain; it must be large enough for the soft spikes to
    /// build nonzero traces, or the plastic parameters get no gradient.
    pub weight_gain: f64,
    /// Soft-spike temperature. The default neuron value of 1 makes the
    /// loss too stiff for finite differences.
    pub surrogate_tau: f64,
}

impl Default for NetCheckConfig {
    fn default() -> Self {
        NetCheckConfig { neurons: 4, steps: 60, seed: 13, weight_gain: 5.0, surrogate_tau: 2.0 }
    }
}

fn soft_net_loss(net: &Network, tape: &mut Tape, inputs: &[Vec<f64>], sample: &[f64], codec: &ActionCodec, probe: &[f64]) -> Result<(Var, Vec<Var>)> {
    let mut ro = net.begin(tape)?;
    let leaves = ro.leaves();
    let mut outs = Vec::with_capacity(inputs.len());
    for x in inputs {
        outs.push(ro.step_values(net, tape, x)?);
    }
    let terms: Vec<(Var, f64)> = outs.iter().map(|&v| (v, 1.0)).collect();
    let counts = tape.weighted_sum(&terms)?;
    let mean = codec.decode_tape(tape, counts)?;
    let sigma_log = ro.sigma_log().ok_or(crate::error::Error::EmptyRecord)?;
    let lp = gaussian_log_prob(tape, mean, sigma_log, sample)?;
    // a second, time-resolved term so every step matters
    let p = tape.constant(Tensor::vector(probe.to_vec()));
    let mut acc = Vec::with_capacity(outs.len());
    for (t, &s) in outs.iter().enumerate() {
        let y = tape.mul(s, p)?;
        let y = tape.sum(y)?;
        acc.push((y, 0.05 * ((t % 7) as f64 - 3.0)));
    }
    let tail = tape.weighted_sum(&acc)?;
    let loss = tape.sub(tail, lp)?;
    Ok((loss, leaves))
}

/// Soft-spike FD check of every learnable tensor of a two-layer network
/// whose layers both use `rule`.
pub fn network_check(rule: RuleKind, cfg: NetCheckConfig) -> Result<Vec<CheckResult>> {
    let n = cfg.neurons;
    let seeds = SeedTree::new(cfg.seed);
    let mut nc = NetworkConfig::new(n, vec![n, n], rule);
    // large enough for the plastic paths to carry real gradient
    nc.init.alpha_bound = 0.5;
    nc.init.weight_gain = cfg.weight_gain;
    nc.action_dims = Some(n / 2);
    nc.sigma_log_init = -0.3;
    // exact gradients: the check compares against the full soft dynamics
    nc.refractory_grad = true;
    nc.neuron.surrogate_tau = cfg.surrogate_tau;
    let mut net = Network::init(nc, &mut seeds.stream("init", &[]))?;
    // nonzero ψ so its gradient is exercised at a generic point
    let mut rng = seeds.stream("perturb", &[]);
    for l in &mut net.layers {
        if let Some(psi) = l.rule.psi.as_mut() {
            psi.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.05..0.05));
        }
    }
    let codec = ActionCodec::new(n / 2, 2, cfg.steps, vec![(-1.0, 1.0); n / 2])?;
    let mut rng = seeds.stream("inputs", &[]);
    let inputs: Vec<Vec<f64>> =
        (0..cfg.steps).map(|_| (0..n).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect()).collect();
    let sample: Vec<f64> = (0..n / 2).map(|_| rng.random_range(-0.5..0.5)).collect();
    let probe: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    let loss_at = |net: &Network| -> Result<f64> {
        let mut t = Tape::with_spike_mode(SpikeMode::Soft);
        t.set_check_finite(false);
        let (l, _) = soft_net_loss(net, &mut t, &inputs, &sample, &codec, &probe)?;
        Ok(t.value(l).item())
    };

    let mut tape = Tape::with_spike_mode(SpikeMode::Soft);
    tape.set_check_finite(false);
    let (loss, leaves) = soft_net_loss(&net, &mut tape, &inputs, &sample, &codec, &probe)?;
    let grads = tape.backward(loss)?;
    let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Tensor> = leaves
        .iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let step = 1e-3;
    let mut out = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let mut res = CheckResult { name: alloc::format!("{rule}/{name}"), max_rel_err: 0.0, checked: 0 };
        let len = net.tensors_mut()[i].len();
        for k in 0..len {
            let x0 = net.tensors_mut()[i].data()[k];
            let mut at = |dx: f64| -> Result<f64> {
                net.tensors_mut()[i].data_mut()[k] = x0 + dx;
                loss_at(&net)
            };
            // five-point stencil, fourth-order accurate
            let numeric = (at(-2.0 * step)? - 8.0 * at(-step)? + 8.0 * at(step)? - at(2.0 * step)?) / (12.0 * step);
            net.tensors_mut()[i].data_mut()[k] = x0;
            if let Some(e) = relative_error(analytic[i].data()[k], numeric, 1e-7) {
                res.max_rel_err = res.max_rel_err.max(e);
                res.checked += 1;
            }
        }
        out.push(res);
    }
    Ok(out)
}

/// [`network_check`] over every plastic rule.
pub fn network_suite(cfg: NetCheckConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for rule in RuleKind::PLASTIC {
        out.extend(network_check(rule, cfg)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-12, 0.0, 1e-8), None);
        assert_eq!(relative_error(1.0, 1.0, 1e-8), Some(0.0));
    }

    #[test]
    fn network_suite_covers_every_parameter() {
        let res = network_suite(NetCheckConfig::default()).unwrap();
        for r in &res {
            assert!(r.checked > 0 && r.passes(1e-4), "{r:?}");
        }
        for p in ["w", "alpha", "eta_raw", "eta_phi_raw", "psi", "w_m", "sigma_log"] {
            assert!(res.iter().any(|r| r.name.ends_with(&alloc::format!(".{p}"))), "{p}");
        }
    }

    #[test]
    fn ops_pass() {
        for r in op_suite(1).unwrap() {
            assert!(r.passes(1e-6), "{r:?}");
        }
    }
}
