//! Reference computations shared by the integration tests: plain-loop
//! trace rules and codec statistics.
#![allow(dead_code)]

use diffplast_core::encoding::{CenterLayout, PopulationCodec, TUNING_SHARPNESS};
use diffplast_core::plasticity::{apply_rule, bcm_threshold_update, RuleVars, TraceState};
use diffplast_core::rng::SeedTree;
use diffplast_core::{PlasticityRuleParams, RuleKind, Tape, Tensor};
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clip(x: f64, c: f64) -> f64 {
    x.max(-c).min(c)
}

#[derive(Clone, Debug)]
pub struct OracleState {
    pub e: Mat,
    pub phi: Vec<f64>,
}

/// One update with every operation spelled out element by element.
pub fn oracle_step(p: &PlasticityRuleParams, s: &OracleState, pre: &[f64], post: &[f64]) -> OracleState {
    let eta = sigmoid(p.eta_raw.item());
    let (n_post, n_pre) = (post.len(), pre.len());
    let mut m = vec![1.0; n_post];
    if let Some(w) = &p.w_m {
        for i in 0..n_post {
            m[i] = 0.0;
            for j in 0..n_post {
                m[i] += w.data()[i * n_post + j] * post[j];
            }
        }
    }
    let mut beta = vec![0.0; n_pre];
    if let Some(psi) = &p.psi {
        for j in 0..n_pre {
            beta[j] = pre[j] * (pre[j] - (s.phi[j] + psi.data()[j]));
        }
    }
    let mut e = s.e.clone();
    for i in 0..n_post {
        let er: f64 = (0..n_pre).map(|j| s.e[i][j] * pre[j]).sum();
        for j in 0..n_pre {
            let hebb = match p.kind {
                RuleKind::None => continue,
                RuleKind::LinearDecay => post[i] * pre[j],
                RuleKind::DpOja => (post[i] - er) * pre[j],
                RuleKind::NdpOja => (m[i] * post[i] - er) * pre[j],
                RuleKind::DpBcm => post[i] * beta[j],
                RuleKind::NdpBcm => m[i] * post[i] * beta[j],
            };
            e[i][j] = clip((1.0 - eta) * s.e[i][j] + eta * hebb, p.clip);
        }
    }
    let mut phi = s.phi.clone();
    if let Some(raw) = &p.eta_phi_raw {
        let k = sigmoid(raw.item());
        for j in 0..n_pre {
            phi[j] = (1.0 - k) * s.phi[j] + k * pre[j];
        }
    }
    OracleState { e, phi }
}

/// Rule parameters with the defaults perturbed so every term matters.
pub fn random_params(kind: RuleKind, n_pre: usize, n_post: usize, seed: u64) -> PlasticityRuleParams {
    let mut rng = SeedTree::new(seed).stream("oracle-params", &[]);
    let mut p = PlasticityRuleParams::init(kind, n_pre, n_post, 2.0, &mut rng).unwrap();
    p.eta_raw = Tensor::scalar(rng.random_range(-2.5..0.5));
    if let Some(r) = p.eta_phi_raw.as_mut() {
        *r = Tensor::scalar(rng.random_range(-2.5..0.5));
    }
    if let Some(psi) = p.psi.as_mut() {
        psi.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.3..0.3));
    }
    p
}

/// Largest absolute difference between the tape rule and the oracle over
/// `steps` chained updates driven by random rates.
pub fn max_rule_diff(kind: RuleKind, steps: usize, seed: u64) -> f64 {
    let (n_pre, n_post) = (5, 4);
    let p = random_params(kind, n_pre, n_post, seed);
    let mut rng = SeedTree::new(seed).stream("oracle-rates", &[]);
    let mut tape = Tape::new();
    let vars = RuleVars::register(&mut tape, &p).unwrap();
    let mut st = TraceState::zeros(&mut tape, kind, n_pre, n_post);
    let mut os = OracleState { e: vec![vec![0.0; n_pre]; n_post], phi: vec![0.0; n_pre] };
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let pre: Vec<f64> = (0..n_pre).map(|_| rng.random_range(0.0..1.0)).collect();
        let post: Vec<f64> = (0..n_post).map(|_| rng.random_range(0.0..1.0)).collect();
        let (pv, qv) = (tape.constant(Tensor::vector(pre.clone())), tape.constant(Tensor::vector(post.clone())));
        st = apply_rule(&mut tape, &vars, st, pv, qv).unwrap();
        os = oracle_step(&p, &os, &pre, &post);
        let got = tape.value(st.e).data();
        for (g, w) in got.iter().zip(os.e.iter().flatten()) {
            worst = worst.max((g - w).abs());
        }
        if let Some(phi) = st.phi {
            for (g, w) in tape.value(phi).data().iter().zip(&os.phi) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    worst
}

/// Worst deviation of `(φ_{k+1} - r) / (φ_k - r)` from `1 - η_φ` under a
/// constant input `r`.
pub fn threshold_contraction_error(eta_phi: f64, steps: usize) -> f64 {
    let mut tape = Tape::new();
    let r = [0.8, 0.1, 0.45];
    let rv = tape.constant(Tensor::vector(r.to_vec()));
    let k = tape.scalar(eta_phi);
    let mut phi = tape.constant(Tensor::vector(vec![-0.5, 1.5, 0.0]));
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let next = bcm_threshold_update(&mut tape, phi, rv, k).unwrap();
        for ((a, b), r) in tape.value(phi).data().iter().zip(tape.value(next).data()).zip(r) {
            if (a - r).abs() > 1e-9 {
                worst = worst.max(((b - r) / (a - r) - (1.0 - eta_phi)).abs());
            }
        }
        phi = next;
    }
    worst
}

/// Largest gap between empirical spike frequencies over `n` draws and the
/// tuning curve evaluated by hand.
pub fn encoder_max_deviation(n: usize, seed: u64) -> f64 {
    let c = PopulationCodec::new(vec![(-1.0, 1.0), (0.0, 10.0)], 9, 0.05, CenterLayout::Linear).unwrap();
    let x = [0.13, 7.4];
    let mut rng = SeedTree::new(seed).stream("enc", &[]);
    let mut counts = vec![0.0; c.size()];
    for _ in 0..n {
        for (k, s) in c.encode_observation(&x, &mut rng).unwrap().into_iter().enumerate() {
            counts[k] += s;
        }
    }
    let mut worst: f64 = 0.0;
    for (k, count) in counts.iter().enumerate() {
        let (xi, m) = (k / c.p_dim, k % c.p_dim);
        let (lo, hi) = c.bounds[xi];
        let center = lo + m as f64 * (hi - lo) / (c.p_dim - 1) as f64;
        let p = (-TUNING_SHARPNESS * (center - x[xi]).powi(2)).exp().clamp(0.05, 1.0);
        worst = worst.max((count / n as f64 - p).abs());
    }
    worst
}

// Maximum-likelihood read-out of one Bernoulli population over a fine grid.
fn ml_decode(c: &PopulationCodec, spikes: &[f64]) -> f64 {
    let (lo, hi) = c.bounds[0];
    let grid = 2001;
    let mut best = (f64::NEG_INFINITY, lo);
    for g in 0..grid {
        let x = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
        let p = c.spike_probabilities(&[x]).unwrap();
        let ll: f64 = p
            .iter()
            .zip(spikes)
            .map(|(&p, &s)| {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                if s > 0.5 { p.ln() } else { (1.0 - p).ln() }
            })
            .sum();
        if ll > best.0 {
            best = (ll, x);
        }
    }
    best.1
}

/// Mean absolute encode/decode error for inputs on the centers, and the
/// center spacing.
pub fn round_trip_error(n: usize, seed: u64) -> (f64, f64) {
    let c = PopulationCodec::new(vec![(-2.0, 2.0)], 11, 0.05, CenterLayout::Linear).unwrap();
    let mut rng = SeedTree::new(seed).stream("rt", &[]);
    let mut err = 0.0;
    for i in 0..n {
        let x = c.centers.at(0, i % c.p_dim);
        let s = c.encode_observation(&[x], &mut rng).unwrap();
        err += (ml_decode(&c, &s) - x).abs();
    }
    (err / n as f64, c.spacing(0))
}
