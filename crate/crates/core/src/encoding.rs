//! Population spike codes for real-valued observations and actions, Gaussian
//! action sampling, and noise injection.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{AutodiffError, Error, Result};
use crate::math;
use crate::tensor::{Shape, Tensor};

/// How place-cell centers are laid out between the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CenterLayout {
    /// `Ω[m] = P_min + m·(P_max - P_min)/(P_dim - 1)`.
    #[default]
    Linear,
    /// `Ω[m] = P_min·(m - P_num) - P_max·(P_num - m)`, kept for comparison.
    /// It does not interpolate between the bounds.
    Literal,
}

impl FromStr for CenterLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(CenterLayout::Linear),
            "literal" => Ok(CenterLayout::Literal),
            _ => Err(Error::Unknown { what: "center layout", name: String::from(s) }),
        }
    }
}

/// Sharpness of the place-cell tuning curve.
pub const TUNING_SHARPNESS: f64 = 15.0;
pub const DEFAULT_THETA_MIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationCodec {
    pub p_num: usize,
    pub p_dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub theta_min: f64,
    /// `p_num × p_dim`.
    pub centers: Tensor,
}

/// Centers for each sub-population, `bounds.len() × p_dim`.
pub fn place_centers(bounds: &[(f64, f64)], p_dim: usize, layout: CenterLayout) -> Result<Tensor> {
    if p_dim < 2 {
        return Err(Error::Config(alloc::format!("population size must be >= 2, got {p_dim}")));
    }
    let p_num = bounds.len();
    let mut data = Vec::with_capacity(p_num * p_dim);
    for &(lo, hi) in bounds {
        if !(hi > lo) {
            return Err(Error::Config(alloc::format!("population bounds need max > min, got ({lo}, {hi})")));
        }
        for m in 0..p_dim {
            let c = match layout {
                CenterLayout::Linear => lo + m as f64 * (hi - lo) / (p_dim - 1) as f64,
                CenterLayout::Literal => {
                    let (m, n) = (m as f64, p_num as f64);
                    lo * (m - n) - hi * (n - m)
                }
            };
            data.push(c);
        }
    }
    Ok(Tensor::matrix(p_num, p_dim, data))
}

impl PopulationCodec {
    pub fn new(bounds: Vec<(f64, f64)>, p_dim: usize, theta_min: f64, layout: CenterLayout) -> Result<Self> {
        if !(0.0..1.0).contains(&theta_min) {
            return Err(Error::Config(alloc::format!("theta_min must lie in [0, 1), got {theta_min}")));
        }
        let centers = place_centers(&bounds, p_dim, layout)?;
        Ok(PopulationCodec { p_num: bounds.len(), p_dim, bounds, theta_min, centers })
    }

    pub fn size(&self) -> usize {
        self.p_num * self.p_dim
    }

    /// Spacing between neighbouring centers of sub-population `xi`.
    pub fn spacing(&self, xi: usize) -> f64 {
        let (lo, hi) = self.bounds[xi];
        (hi - lo) / (self.p_dim - 1) as f64
    }

    /// `max(ϑ_min, min(exp(-15·(Ω - x)²), 1))` after clipping `x` to the bounds.
    pub fn spike_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p_num {
            return Err(Error::Length(alloc::format!(
                "codec expects {} values, got {}",
                self.p_num,
                x.len()
            )));
        }
        let mut p = Vec::with_capacity(self.size());
        for (xi, (&v, &(lo, hi))) in x.iter().zip(&self.bounds).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(alloc::format!("observation {xi} is {v}")));
            }
            let v = v.clamp(lo, hi);
            for m in 0..self.p_dim {
                let d = self.centers.at(xi, m) - v;
                let q = math::exp(-TUNING_SHARPNESS * d * d).min(1.0);
                p.push(q.max(self.theta_min));
            }
        }
        Ok(p)
    }

    /// One Bernoulli draw per neuron.
    pub fn encode_observation<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self
            .spike_probabilities(x)?
            .into_iter()
            .map(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Signed population read-out of the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionCodec {
    pub d: usize,
    /// Neurons per sub-population; even.
    pub n: usize,
    /// Integration interval in steps.
    pub t: usize,
    pub ranges: Vec<(f64, f64)>,
}

impl ActionCodec {
    pub fn new(d: usize, n: usize, t: usize, ranges: Vec<(f64, f64)>) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::Config(alloc::format!("action population size must be even, got {n}")));
        }
        if t == 0 || d == 0 {
            return Err(Error::Config("action codec needs d > 0 and T > 0".into()));
        }
        if ranges.len() != d || ranges.iter().any(|&(lo, hi)| !(hi > lo)) {
            return Err(Error::Config("action codec needs one (lo, hi) range per output with hi > lo".into()));
        }
        Ok(ActionCodec { d, n, t, ranges })
    }

    pub fn size(&self) -> usize {
        self.d * self.n
    }

    /// `+1` for the first half of a sub-population, `-1` for the rest.
    pub fn weight(&self, neuron: usize) -> f64 {
        if neuron < self.n / 2 {
            1.0
        } else {
            -1.0
        }
    }

    fn to_range(&self, p: usize, a: f64) -> f64 {
        let (lo, hi) = self.ranges[p];
        lo + (a + 1.0) * 0.5 * (hi - lo)
    }

    /// `spikes[p][t][n]`: sub-population `p`, step `t`, neuron `n`.
    pub fn decode_action(&self, spikes: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
        if spikes.len() != self.d {
            return Err(Error::Length(alloc::format!("expected {} sub-populations", self.d)));
        }
        let mut out = Vec::with_capacity(self.d);
        for (p, raster) in spikes.iter().enumerate() {
            if raster.len() != self.t || raster.iter().any(|row| row.len() != self.n) {
                return Err(Error::Length(alloc::format!(
                    "sub-population {p} raster must be {} × {}",
                    self.t,
                    self.n
                )));
            }
            let raw: f64 = raster
                .iter()
                .map(|row| row.iter().enumerate().map(|(n, s)| self.weight(n) * s).sum::<f64>())
                .sum::<f64>()
                / self.t as f64;
            out.push(self.to_range(p, raw / (self.n / 2) as f64));
        }
        Ok(out)
    }

    /// `counts` holds per-neuron spike totals over the interval
    /// (length `d·n`); returns the action means as a tape node.
    pub fn decode_tape(&self, tape: &mut Tape, counts: Var) -> Result<Var> {
        let s = tape.shape(counts);
        if s != Shape::vector(self.size()) {
            return Err(AutodiffError::Shape { op: "decode-action", shapes: vec![s] }.into());
        }
        let k = 1.0 / (self.t as f64 * (self.n / 2) as f64);
        let cols = self.size();
        let mut read = vec![0.0; self.d * cols];
        for p in 0..self.d {
            for n in 0..self.n {
                let (lo, hi) = self.ranges[p];
                read[p * cols + p * self.n + n] = self.weight(n) * k * 0.5 * (hi - lo);
            }
        }
        let read = tape.constant(Tensor::matrix(self.d, cols, read));
        let scaled = tape.mat_vec(read, counts)?;
        let offset: Vec<f64> = self.ranges.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        let offset = tape.constant(Tensor::vector(offset));
        Ok(tape.add(scaled, offset)?)
    }
}

/// `log N(x; mean, exp(sigma_log)²)` summed over dimensions.
pub fn gaussian_log_prob(tape: &mut Tape, mean: Var, sigma_log: Var, sample: &[f64]) -> Result<Var> {
    let x = tape.constant(Tensor::vector(sample.to_vec()));
    let diff = tape.sub(x, mean)?;
    let neg = tape.neg(sigma_log)?;
    let inv_std = tape.exp(neg)?;
    let z = tape.mul(diff, inv_std)?;
    let z2 = tape.mul(z, z)?;
    let half = tape.scale(z2, -0.5)?;
    let per = tape.sub(half, sigma_log)?;
    let per = tape.affine(per, 1.0, -0.5 * math::LN_2PI)?;
    Ok(tape.sum(per)?)
}

/// Samples `A_e ~ N(A, exp(σ_log)²)` and records its log-probability.
pub fn gaussian_action<R: Rng + ?Sized>(
    tape: &mut Tape,
    mean: Var,
    sigma_log: Var,
    rng: &mut R,
) -> Result<(Vec<f64>, Var)> {
    let (ms, ss) = (tape.shape(mean), tape.shape(sigma_log));
    if ms != ss {
        return Err(AutodiffError::Shape { op: "gaussian-action", shapes: vec![ms, ss] }.into());
    }
    let sample: Vec<f64> = tape
        .value(mean)
        .data()
        .iter()
        .zip(tape.value(sigma_log).data())
        .map(|(&m, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            m + math::exp(s) * z
        })
        .collect();
    let logp = gaussian_log_prob(tape, mean, sigma_log, &sample)?;
    Ok((sample, logp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    /// `X + z`
    Observation,
    /// `A ⊙ (1 + z)`
    Action,
    /// `f ⊙ (1 + z)`, with `z` drawn once per episode.
    Friction,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Observation => "obs",
            NoiseKind::Action => "act",
            NoiseKind::Friction => "friction",
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obs" | "observation" => Ok(NoiseKind::Observation),
            "act" | "action" => Ok(NoiseKind::Action),
            "friction" => Ok(NoiseKind::Friction),
            _ => Err(Error::Unknown { what: "noise kind", name: String::from(s) }),
        }
    }
}

pub fn inject_noise(kind: NoiseKind, base: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if base.len() != z.len() {
        return Err(Error::Length(alloc::format!(
            "noise vector has {} entries for {} values",
            z.len(),
            base.len()
        )));
    }
    Ok(match kind {
        NoiseKind::Observation => base.iter().zip(z).map(|(b, z)| b + z).collect(),
        NoiseKind::Action | NoiseKind::Friction => {
            base.iter().zip(z).map(|(b, z)| b * (1.0 + z)).collect()
        }
    })
}

/// `N(0, σ²)` noise vector.
pub fn sample_noise<R: Rng + ?Sized>(dims: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    (0..dims)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn center_examples() {
        let c = place_centers(&[(3.0, 7.0)], 2, CenterLayout::Linear).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
        let c = place_centers(&[(-1.0, 1.0)], 5, CenterLayout::Linear).unwrap();
        assert_eq!(c.data(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let c = place_centers(&[(0.0, 10.0)], 50, CenterLayout::Linear).unwrap();
        assert!((c.data()[1] - 10.0 / 49.0).abs() < 1e-15);
        assert!(c.data().windows(2).all(|w| w[1] > w[0]));
        assert!(place_centers(&[(1.0, 1.0)], 5, CenterLayout::Linear).is_err());
        assert!(place_centers(&[(0.0, 1.0)], 1, CenterLayout::Linear).is_err());
    }

    #[test]
    fn literal_layout_collapses_symmetric_bounds() {
        let c = place_centers(&[(-1.0, 1.0)], 4, CenterLayout::Literal).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn probability_examples() {
        let codec = PopulationCodec::new(vec![(-1.0, 1.0)], 5, 0.05, CenterLayout::Linear).unwrap();
        let p = codec.spike_probabilities(&[0.5]).unwrap();
        assert_eq!(p[3], 1.0);
        assert_eq!(p[0], 0.05);
        let p = codec.spike_probabilities(&[0.6]).unwrap();
        assert!((p[3] - (-0.15f64).exp()).abs() < 1e-12);
        assert!((p[3] - 0.8607).abs() < 1e-4);
        // values outside the bounds are clipped first
        assert_eq!(codec.spike_probabilities(&[9.0]).unwrap()[4], 1.0);
        assert!(codec.spike_probabilities(&[f64::NAN]).is_err());
        assert!(codec.spike_probabilities(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn decoder_examples() {
        let codec = ActionCodec::new(1, 4, 2, vec![(-1.0, 1.0)]).unwrap();
        let even = vec![vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]];
        assert_eq!(codec.decode_action(&even).unwrap(), vec![0.0]);
        let sat = vec![vec![vec![1.0, 1.0, 0.0, 0.0]; 2]];
        assert_eq!(codec.decode_action(&sat).unwrap(), vec![1.0]);
        let mixed = vec![vec![vec![1.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0]]];
        assert_eq!(codec.decode_action(&mixed).unwrap(), vec![0.5]);
        let neg = vec![vec![vec![0.0, 0.0, 1.0, 1.0]; 2]];
        assert_eq!(codec.decode_action(&neg).unwrap(), vec![-1.0]);
        assert!(ActionCodec::new(1, 3, 2, vec![(-1.0, 1.0)]).is_err());
    }

    #[test]
    fn tape_decoder_matches_plain_decoder() {
        let codec = ActionCodec::new(2, 4, 3, vec![(-1.0, 1.0), (0.0, 4.0)]).unwrap();
        let mut rng = SeedTree::new(9).stream("spikes", &[]);
        let raster: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..3).map(|_| (0..4).map(|_| rng.random_range(0..2) as f64).collect()).collect())
            .collect();
        let plain = codec.decode_action(&raster).unwrap();
        let mut counts = vec![0.0; 8];
        for (p, r) in raster.iter().enumerate() {
            for row in r {
                for (n, s) in row.iter().enumerate() {
                    counts[p * 4 + n] += s;
                }
            }
        }
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(counts));
        let a = codec.decode_tape(&mut tape, c).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(&plain) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_log_prob_at_mean() {
        let mut tape = Tape::new();
        let mean = tape.constant(Tensor::vector(vec![0.3, -0.7]));
        let sl = tape.constant(Tensor::vector(vec![0.2, -1.1]));
        let lp = gaussian_log_prob(&mut tape, mean, sl, &[0.3, -0.7]).unwrap();
        let expect = -(0.2 + 0.5 * math::LN_2PI) - (-1.1 + 0.5 * math::LN_2PI);
        assert!((tape.value(lp).item() - expect).abs() < 1e-12);

        let tiny = tape.constant(Tensor::vector(vec![-40.0, -40.0]));
        let mut rng = SeedTree::new(1).stream("a", &[]);
        let (a, _) = gaussian_action(&mut tape, mean, tiny, &mut rng).unwrap();
        assert!((a[0] - 0.3).abs() < 1e-12 && (a[1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn noise_examples() {
        for k in [NoiseKind::Observation, NoiseKind::Action, NoiseKind::Friction] {
            assert_eq!(inject_noise(k, &[1.5, -2.0], &[0.0, 0.0]).unwrap(), vec![1.5, -2.0]);
        }
        assert_eq!(inject_noise(NoiseKind::Action, &[0.7, -0.2], &[-1.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(inject_noise(NoiseKind::Observation, &[2.0], &[0.5]).unwrap(), vec![2.5]);
        assert!(inject_noise(NoiseKind::Action, &[1.0], &[]).is_err());
        assert!("gravity".parse::<NoiseKind>().is_err());
    }
}
