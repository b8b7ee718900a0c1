//! Differentiable synaptic-trace updates.
//!
//! Each rule maps `(E, pre activity, post activity, local params[, M])` to the
//! next trace. All updates are recorded on the tape so the rule parameters
//! (`eta`, `eta_phi`, `psi`, `W_m`) and the activity that produced the rates
//! receive gradients. Every new trace is clamped to `[-clip, clip]`.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{AutodiffError, Error, Result};
use crate::math;
use crate::tensor::{Shape, Tensor};

type AdResult<T> = core::result::Result<T, AutodiffError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RuleKind {
    #[default]
    None,
    LinearDecay,
    DpOja,
    DpBcm,
    NdpOja,
    NdpBcm,
}

impl RuleKind {
    pub const ALL: [RuleKind; 6] = [
        RuleKind::None,
        RuleKind::LinearDecay,
        RuleKind::DpOja,
        RuleKind::DpBcm,
        RuleKind::NdpOja,
        RuleKind::NdpBcm,
    ];

    pub const PLASTIC: [RuleKind; 5] =
        [RuleKind::LinearDecay, RuleKind::DpOja, RuleKind::DpBcm, RuleKind::NdpOja, RuleKind::NdpBcm];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::None => "none",
            RuleKind::LinearDecay => "linear-decay",
            RuleKind::DpOja => "dp-oja",
            RuleKind::DpBcm => "dp-bcm",
            RuleKind::NdpOja => "ndp-oja",
            RuleKind::NdpBcm => "ndp-bcm",
        }
    }

    pub fn is_plastic(self) -> bool {
        self != RuleKind::None
    }

    /// Uses the sliding threshold `phi` and bias `psi`.
    pub fn is_bcm(self) -> bool {
        matches!(self, RuleKind::DpBcm | RuleKind::NdpBcm)
    }

    pub fn is_modulated(self) -> bool {
        matches!(self, RuleKind::NdpOja | RuleKind::NdpBcm)
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown { what: "plasticity rule", name: String::from(s) })
    }
}

/// Learnable rule parameters for one layer.
///
/// `eta_raw` and `eta_phi_raw` are unconstrained; the effective rates are
/// their sigmoids.
#[derive(Clone, Debug, PartialEq)]
pub struct PlasticityRuleParams {
    pub kind: RuleKind,
    pub eta_raw: Tensor,
    pub eta_phi_raw: Option<Tensor>,
    pub psi: Option<Tensor>,
    pub w_m: Option<Tensor>,
    pub clip: f64,
}

pub const DEFAULT_TRACE_CLIP: f64 = 2.0;
pub const DEFAULT_ETA: f64 = 0.1;

impl PlasticityRuleParams {
    /// Fresh parameters: `sigmoid(eta_raw) = 0.1`, `psi = 0`,
    /// `W_m ~ U(-1/sqrt(n_post), 1/sqrt(n_post))`.
    pub fn init<R: Rng + ?Sized>(
        kind: RuleKind,
        n_pre: usize,
        n_post: usize,
        clip: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(clip > 0.0) {
            return Err(Error::Config(alloc::format!("trace clip must be > 0, got {clip}")));
        }
        let raw = math::logit(DEFAULT_ETA);
        let bcm = kind.is_bcm();
        let w_m = kind.is_modulated().then(|| {
            let b = 1.0 / math::sqrt(n_post as f64);
            Tensor::from_fn(Shape::matrix(n_post, n_post), |_| rng.random_range(-b..b))
        });
        Ok(PlasticityRuleParams {
            kind,
            eta_raw: Tensor::scalar(raw),
            eta_phi_raw: bcm.then(|| Tensor::scalar(raw)),
            psi: bcm.then(|| Tensor::zeros(Shape::vector(n_pre))),
            w_m,
            clip,
        })
    }

    pub fn eta(&self) -> f64 {
        math::sigmoid(self.eta_raw.item())
    }

    pub fn eta_phi(&self) -> Option<f64> {
        self.eta_phi_raw.as_ref().map(|t| math::sigmoid(t.item()))
    }
}

/// Tape handles for one layer's rule parameters during an episode.
#[derive(Clone, Copy, Debug)]
pub struct RuleVars {
    pub kind: RuleKind,
    pub clip: f64,
    pub eta_raw: Var,
    pub eta_phi_raw: Option<Var>,
    pub psi: Option<Var>,
    pub w_m: Option<Var>,
    /// `sigmoid(eta_raw)`.
    pub eta: Var,
    pub eta_phi: Option<Var>,
}

impl RuleVars {
    pub fn register(tape: &mut Tape, p: &PlasticityRuleParams) -> AdResult<Self> {
        let eta_raw = tape.param(p.eta_raw.clone());
        let eta = tape.sigmoid(eta_raw)?;
        let eta_phi_raw = p.eta_phi_raw.as_ref().map(|t| tape.param(t.clone()));
        let eta_phi = match eta_phi_raw {
            Some(v) => Some(tape.sigmoid(v)?),
            None => None,
        };
        Ok(RuleVars {
            kind: p.kind,
            clip: p.clip,
            eta_raw,
            eta_phi_raw,
            psi: p.psi.as_ref().map(|t| tape.param(t.clone())),
            w_m: p.w_m.as_ref().map(|t| tape.param(t.clone())),
            eta,
            eta_phi,
        })
    }
}

/// `clip((1-eta)·E + eta·hebb)`.
fn blend(tape: &mut Tape, e: Var, hebb: Var, eta: Var, clip: f64) -> AdResult<Var> {
    let keep = tape.affine(eta, -1.0, 1.0)?;
    let old = tape.scale_by(e, keep)?;
    let new = tape.scale_by(hebb, eta)?;
    let sum = tape.add(old, new)?;
    tape.clamp(sum, -clip, clip)
}

/// Linear decay: `E' = (1-η)E + η·(ρ_post ⊗ ρ_pre)`.
pub fn trace_update_linear(
    tape: &mut Tape,
    e: Var,
    rho_pre: Var,
    rho_post: Var,
    eta: Var,
    clip: f64,
) -> AdResult<Var> {
    let hebb = tape.outer(rho_post, rho_pre)?;
    blend(tape, e, hebb, eta, clip)
}

/// Oja: `E' = (1-η)E + η·((r_post - E·r_pre) ⊗ r_pre)`.
pub fn trace_update_oja(
    tape: &mut Tape,
    e: Var,
    r_pre: Var,
    r_post: Var,
    eta: Var,
    clip: f64,
) -> AdResult<Var> {
    let er = tape.mat_vec(e, r_pre)?;
    let diff = tape.sub(r_post, er)?;
    let hebb = tape.outer(diff, r_pre)?;
    blend(tape, e, hebb, eta, clip)
}

/// `r_β = r_pre ⊙ (r_pre - (φ + ψ))`.
pub fn bcm_drive(tape: &mut Tape, r_pre: Var, phi: Var, psi: Var) -> AdResult<Var> {
    let boundary = tape.add(phi, psi)?;
    let d = tape.sub(r_pre, boundary)?;
    tape.mul(r_pre, d)
}

/// BCM: `E' = (1-η)E + η·(r_post ⊗ r_β)`.
pub fn trace_update_bcm(
    tape: &mut Tape,
    e: Var,
    r_post: Var,
    r_beta: Var,
    eta: Var,
    clip: f64,
) -> AdResult<Var> {
    let hebb = tape.outer(r_post, r_beta)?;
    blend(tape, e, hebb, eta, clip)
}

/// `φ' = (1-η_φ)φ + η_φ·r_pre`.
pub fn bcm_threshold_update(tape: &mut Tape, phi: Var, r_pre: Var, eta_phi: Var) -> AdResult<Var> {
    let keep = tape.affine(eta_phi, -1.0, 1.0)?;
    let old = tape.scale_by(phi, keep)?;
    let new = tape.scale_by(r_pre, eta_phi)?;
    tape.add(old, new)
}

/// `M = W_m · r_post`.
pub fn modulatory_signal(tape: &mut Tape, w_m: Var, r_post: Var) -> AdResult<Var> {
    let s = tape.shape(w_m);
    if s.rows() != s.cols() {
        return Err(AutodiffError::Shape { op: "modulatory-signal", shapes: alloc::vec![s] });
    }
    tape.mat_vec(w_m, r_post)
}

/// Modulated Oja: `E' = (1-η)E + η·((M ⊙ r_post - E·r_pre) ⊗ r_pre)`.
pub fn trace_update_ndp_oja(
    tape: &mut Tape,
    e: Var,
    r_pre: Var,
    r_post: Var,
    m: Var,
    eta: Var,
    clip: f64,
) -> AdResult<Var> {
    let mr = tape.mul(m, r_post)?;
    let er = tape.mat_vec(e, r_pre)?;
    let diff = tape.sub(mr, er)?;
    let hebb = tape.outer(diff, r_pre)?;
    blend(tape, e, hebb, eta, clip)
}

/// Modulated BCM: `E' = (1-η)E + η·((M ⊙ r_post) ⊗ r_β)`.
pub fn trace_update_ndp_bcm(
    tape: &mut Tape,
    e: Var,
    r_post: Var,
    r_beta: Var,
    m: Var,
    eta: Var,
    clip: f64,
) -> AdResult<Var> {
    let mr = tape.mul(m, r_post)?;
    let hebb = tape.outer(mr, r_beta)?;
    blend(tape, e, hebb, eta, clip)
}

/// Dynamic plasticity state carried between updates.
#[derive(Clone, Copy, Debug)]
pub struct TraceState {
    pub e: Var,
    /// BCM sliding threshold.
    pub phi: Option<Var>,
    /// Last modulatory signal (modulated rules only).
    pub m: Option<Var>,
}

impl TraceState {
    /// Zero trace and, for BCM rules, zero threshold.
    pub fn zeros(tape: &mut Tape, kind: RuleKind, n_pre: usize, n_post: usize) -> Self {
        let e = tape.constant(Tensor::zeros(Shape::matrix(n_post, n_pre)));
        let phi = kind.is_bcm().then(|| tape.constant(Tensor::zeros(Shape::vector(n_pre))));
        TraceState { e, phi, m: None }
    }
}

/// One rule update from windowed rates. `kind = none` leaves the state alone.
pub fn apply_rule(
    tape: &mut Tape,
    rule: &RuleVars,
    state: TraceState,
    r_pre: Var,
    r_post: Var,
) -> Result<TraceState> {
    let TraceState { e, phi, .. } = state;
    let missing = |what: &'static str| Error::Config(alloc::format!("{} rule has no {what}", rule.kind));
    let out = match rule.kind {
        RuleKind::None => state,
        RuleKind::LinearDecay => {
            let e = trace_update_linear(tape, e, r_pre, r_post, rule.eta, rule.clip)?;
            TraceState { e, ..state }
        }
        RuleKind::DpOja => {
            let e = trace_update_oja(tape, e, r_pre, r_post, rule.eta, rule.clip)?;
            TraceState { e, ..state }
        }
        RuleKind::NdpOja => {
            let w_m = rule.w_m.ok_or_else(|| missing("W_m"))?;
            let m = modulatory_signal(tape, w_m, r_post)?;
            let e = trace_update_ndp_oja(tape, e, r_pre, r_post, m, rule.eta, rule.clip)?;
            TraceState { e, phi, m: Some(m) }
        }
        RuleKind::DpBcm | RuleKind::NdpBcm => {
            let phi = phi.ok_or_else(|| missing("phi"))?;
            let psi = rule.psi.ok_or_else(|| missing("psi"))?;
            let eta_phi = rule.eta_phi.ok_or_else(|| missing("eta_phi"))?;
            let r_beta = bcm_drive(tape, r_pre, phi, psi)?;
            let (e, m) = if rule.kind == RuleKind::NdpBcm {
                let w_m = rule.w_m.ok_or_else(|| missing("W_m"))?;
                let m = modulatory_signal(tape, w_m, r_post)?;
                (trace_update_ndp_bcm(tape, e, r_post, r_beta, m, rule.eta, rule.clip)?, Some(m))
            } else {
                (trace_update_bcm(tape, e, r_post, r_beta, rule.eta, rule.clip)?, None)
            };
            let phi = bcm_threshold_update(tape, phi, r_pre, eta_phi)?;
            TraceState { e, phi: Some(phi), m }
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn v(t: &mut Tape, x: &[f64]) -> Var {
        t.constant(Tensor::vector(x.to_vec()))
    }

    fn m(t: &mut Tape, r: usize, c: usize, x: &[f64]) -> Var {
        t.constant(Tensor::matrix(r, c, x.to_vec()))
    }

    fn vals(t: &Tape, x: Var) -> Vec<f64> {
        t.value(x).data().to_vec()
    }

    const BIG: f64 = 1e9;

    #[test]
    fn linear_decay_examples() {
        let mut t = Tape::new();
        let e = m(&mut t, 1, 1, &[0.0]);
        let z = v(&mut t, &[0.0]);
        let eta = t.scalar(0.3);
        let out = trace_update_linear(&mut t, e, z, z, eta, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![0.0]);

        let e = m(&mut t, 2, 1, &[0.7, -0.2]);
        let pre = v(&mut t, &[0.4]);
        let post = v(&mut t, &[0.5, 0.25]);
        let one = t.scalar(1.0);
        let out = trace_update_linear(&mut t, e, pre, post, one, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![0.2, 0.1]);

        let e = m(&mut t, 1, 1, &[1.0]);
        let ones = v(&mut t, &[1.0]);
        let half = t.scalar(0.5);
        let out = trace_update_linear(&mut t, e, ones, ones, half, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![1.0]);
    }

    #[test]
    fn oja_examples() {
        let mut t = Tape::new();
        let e = m(&mut t, 1, 2, &[0.8, -0.4]);
        let zero = v(&mut t, &[0.0, 0.0]);
        let post = v(&mut t, &[0.9]);
        let eta = t.scalar(0.25);
        let out = trace_update_oja(&mut t, e, zero, post, eta, BIG).unwrap();
        let got = vals(&t, out);
        assert!((got[0] - 0.6).abs() < 1e-15 && (got[1] + 0.3).abs() < 1e-15);

        let e = m(&mut t, 1, 1, &[2.0]);
        let pre = v(&mut t, &[1.0]);
        let post = v(&mut t, &[2.0]);
        let half = t.scalar(0.5);
        let out = trace_update_oja(&mut t, e, pre, post, half, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![1.0]);

        let e = m(&mut t, 1, 1, &[0.0]);
        let one = t.scalar(1.0);
        let out = trace_update_oja(&mut t, e, pre, pre, one, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![1.0]);
    }

    #[test]
    fn bcm_drive_examples() {
        let mut t = Tape::new();
        let zero = v(&mut t, &[0.0]);
        let phi = v(&mut t, &[0.3]);
        let psi = v(&mut t, &[0.1]);
        let out = bcm_drive(&mut t, zero, phi, psi).unwrap();
        assert_eq!(vals(&t, out), vec![0.0]);

        let at = v(&mut t, &[0.4]);
        let out = bcm_drive(&mut t, at, phi, psi).unwrap();
        assert!(vals(&t, out)[0].abs() < 1e-15);

        let r = v(&mut t, &[0.6]);
        let out = bcm_drive(&mut t, r, phi, psi).unwrap();
        assert!((vals(&t, out)[0] - 0.12).abs() < 1e-15);
    }

    #[test]
    fn bcm_trace_examples() {
        let mut t = Tape::new();
        let e = m(&mut t, 2, 1, &[0.5, -1.0]);
        let post = v(&mut t, &[1.0, 0.0]);
        let zero = v(&mut t, &[0.0]);
        let eta = t.scalar(0.2);
        let out = trace_update_bcm(&mut t, e, post, zero, eta, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![0.4, -0.8]);

        let z = t.scalar(0.0);
        let rb = v(&mut t, &[0.12]);
        let out = trace_update_bcm(&mut t, e, post, rb, z, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![0.5, -1.0]);

        let e0 = m(&mut t, 2, 1, &[0.0, 0.0]);
        let one = t.scalar(1.0);
        let out = trace_update_bcm(&mut t, e0, post, rb, one, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![0.12, 0.0]);
    }

    #[test]
    fn threshold_update_examples() {
        let mut t = Tape::new();
        let phi = v(&mut t, &[0.2]);
        let r = v(&mut t, &[0.6]);
        let q = t.scalar(0.25);
        let out = bcm_threshold_update(&mut t, phi, r, q).unwrap();
        assert!((vals(&t, out)[0] - 0.3).abs() < 1e-15);

        let one = t.scalar(1.0);
        let out = bcm_threshold_update(&mut t, phi, r, one).unwrap();
        assert_eq!(vals(&t, out), vec![0.6]);

        let mut p = t.constant(Tensor::vector(vec![-3.0]));
        let c = v(&mut t, &[0.45]);
        for _ in 0..200 {
            p = bcm_threshold_update(&mut t, p, c, q).unwrap();
        }
        assert!((vals(&t, p)[0] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn modulation_examples() {
        let mut t = Tape::new();
        let wm = m(&mut t, 2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = v(&mut t, &[0.2, 0.8]);
        let out = modulatory_signal(&mut t, wm, r).unwrap();
        assert_eq!(vals(&t, out), vec![0.8, 0.2]);

        let id = t.constant(Tensor::identity(2));
        let out = modulatory_signal(&mut t, id, r).unwrap();
        assert_eq!(vals(&t, out), vec![0.2, 0.8]);

        let z = v(&mut t, &[0.0, 0.0]);
        let out = modulatory_signal(&mut t, wm, z).unwrap();
        assert_eq!(vals(&t, out), vec![0.0, 0.0]);

        let rect = m(&mut t, 1, 2, &[1.0, 1.0]);
        assert!(modulatory_signal(&mut t, rect, r).is_err());
    }

    #[test]
    fn ndp_examples() {
        let mut t = Tape::new();
        let e = m(&mut t, 1, 1, &[0.0]);
        let one = t.scalar(1.0);
        let m2 = v(&mut t, &[2.0]);
        let post = v(&mut t, &[0.5]);
        let pre = v(&mut t, &[1.0]);
        let out = trace_update_ndp_oja(&mut t, e, pre, post, m2, one, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![1.0]);

        let mz = v(&mut t, &[0.0]);
        let out = trace_update_ndp_oja(&mut t, e, pre, post, mz, one, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![0.0]);

        let rb = v(&mut t, &[0.12]);
        let out = trace_update_ndp_bcm(&mut t, e, post, rb, m2, one, BIG).unwrap();
        assert!((vals(&t, out)[0] - 0.12).abs() < 1e-15);

        let e1 = m(&mut t, 1, 1, &[0.9]);
        let zero = v(&mut t, &[0.0]);
        let eta = t.scalar(0.5);
        let out = trace_update_ndp_bcm(&mut t, e1, post, zero, m2, eta, BIG).unwrap();
        assert_eq!(vals(&t, out), vec![0.45]);
    }

    #[test]
    fn modulation_of_one_reproduces_unmodulated_rules_bitwise() {
        let mut t = Tape::new();
        let e = m(&mut t, 2, 3, &[0.1, -0.3, 0.7, 1.2, -0.05, 0.0]);
        let pre = v(&mut t, &[0.15, 0.6, 0.95]);
        let post = v(&mut t, &[0.35, 0.8]);
        let ones = v(&mut t, &[1.0, 1.0]);
        let eta = t.scalar(0.137);
        let a = trace_update_oja(&mut t, e, pre, post, eta, 2.0).unwrap();
        let b = trace_update_ndp_oja(&mut t, e, pre, post, ones, eta, 2.0).unwrap();
        assert_eq!(vals(&t, a), vals(&t, b));
        let rb = v(&mut t, &[0.02, -0.1, 0.3]);
        let a = trace_update_bcm(&mut t, e, post, rb, eta, 2.0).unwrap();
        let b = trace_update_ndp_bcm(&mut t, e, post, rb, ones, eta, 2.0).unwrap();
        assert_eq!(vals(&t, a), vals(&t, b));
    }

    #[test]
    fn traces_are_clipped() {
        let mut t = Tape::new();
        let e = m(&mut t, 1, 1, &[1.9]);
        let r = v(&mut t, &[5.0]);
        let eta = t.scalar(0.5);
        let out = trace_update_linear(&mut t, e, r, r, eta, 2.0).unwrap();
        assert_eq!(vals(&t, out), vec![2.0]);
    }

    #[test]
    fn rule_names_round_trip() {
        for k in RuleKind::ALL {
            assert_eq!(k.name().parse::<RuleKind>().unwrap(), k);
        }
        assert!("stdp".parse::<RuleKind>().is_err());
    }

    #[test]
    fn init_activates_only_relevant_fields() {
        let mut rng = crate::rng::SeedTree::new(1).stream("init", &[]);
        let p = PlasticityRuleParams::init(RuleKind::DpOja, 3, 2, 2.0, &mut rng).unwrap();
        assert!(p.psi.is_none() && p.w_m.is_none() && p.eta_phi_raw.is_none());
        assert!((p.eta() - 0.1).abs() < 1e-12);
        let p = PlasticityRuleParams::init(RuleKind::NdpBcm, 3, 2, 2.0, &mut rng).unwrap();
        assert_eq!(p.psi.as_ref().unwrap().len(), 3);
        let wm = p.w_m.as_ref().unwrap();
        assert_eq!(wm.shape(), Shape::matrix(2, 2));
        assert!(wm.max_abs() <= 1.0 / 2f64.sqrt());
        assert!(PlasticityRuleParams::init(RuleKind::DpBcm, 3, 2, 0.0, &mut rng).is_err());
    }
}
