//! Absorbing-state (masked) diffusion over node and edge labels.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::DenoiserOutput;
use crate::graph::{EdgeCodec, EdgeLabel, NodeState, ReactionGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("reverse step requires s < t, got s={s}, t={t}")]
    NonDecreasing { s: f64, t: f64 },
    #[error("denoiser output shape does not match the graph")]
    Shape,
    #[error("invalid probability row at {0}")]
    BadRow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    /// `σ(t) = σ_max·(bᵗ − 1)/(b − 1)`
    Geometric {
        base: f64,
    },
    /// `σ(t) = −log(1 − (1 − ε)·t)`; `σ_max` is unused.
    Loglinear {
        eps: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(1e8)
    }
}

impl NoiseSchedule {
    pub fn linear(sigma_max: f64) -> Self {
        NoiseSchedule {
            kind: ScheduleKind::Linear,
            sigma_max,
        }
    }

    pub fn geometric(sigma_max: f64, base: f64) -> Self {
        NoiseSchedule {
            kind: ScheduleKind::Geometric { base },
            sigma_max,
        }
    }

    pub fn loglinear(eps: f64) -> Self {
        NoiseSchedule {
            kind: ScheduleKind::Loglinear { eps },
            sigma_max: 1.0,
        }
    }

    /// Parses `linear`, `geometric` or `loglinear` with default shape parameters.
    pub fn from_name(name: &str, sigma_max: f64) -> Option<Self> {
        match name {
            "linear" => Some(Self::linear(sigma_max)),
            "geometric" => Some(Self::geometric(sigma_max, 10.0)),
            "loglinear" => Some(Self::loglinear(1e-3)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Geometric { .. } => "geometric",
            ScheduleKind::Loglinear { .. } => "loglinear",
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => self.sigma_max * t,
            ScheduleKind::Geometric { base } => self.sigma_max * (base.powf(t) - 1.0) / (base - 1.0),
            ScheduleKind::Loglinear { eps } => -(-(1.0 - eps) * t).ln_1p(),
        }
    }

    pub fn alpha(&self, t: f64) -> Result<f64, DiffusionError> {
        check_time(t)?;
        Ok((-self.sigma(t)).exp())
    }

    /// Probability that a masked entry is revealed going from `t` to `s`.
    pub fn unmask_prob(&self, s: f64, t: f64) -> Result<f64, DiffusionError> {
        check_time(s)?;
        check_time(t)?;
        if s >= t {
            return Err(DiffusionError::NonDecreasing { s, t });
        }
        let (ss, st) = (self.sigma(s), self.sigma(t));
        let one_minus_at = -(-st).exp_m1();
        if one_minus_at <= 0.0 {
            return Ok(1.0);
        }
        let gap = (-ss).exp() * -(-(st - ss)).exp_m1();
        Ok((gap / one_minus_at).clamp(0.0, 1.0))
    }
}

fn check_time(t: f64) -> Result<(), DiffusionError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(DiffusionError::TimeOutOfRange(t))
    }
}

/// Loss weight `Δσ / (exp(σ_t) − 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeight {
    pub w: f64,
    /// Set when `σ_t = 0` and the limit value was substituted.
    pub guarded: bool,
}

pub fn loss_weight(schedule: &NoiseSchedule, t: f64, t_prev: f64) -> LossWeight {
    sigma_loss_weight(schedule.sigma(t), schedule.sigma(t_prev))
}

pub fn sigma_loss_weight(sigma_t: f64, sigma_prev: f64) -> LossWeight {
    let delta = sigma_t - sigma_prev;
    if sigma_t == 0.0 {
        return LossWeight { w: 0.0, guarded: true };
    }
    if delta == 0.0 {
        return LossWeight { w: 0.0, guarded: false };
    }
    let denom = sigma_t.exp_m1();
    let w = if denom.is_infinite() { 0.0 } else { delta / denom };
    LossWeight { w, guarded: false }
}

/// Masks each node and upper-triangle edge independently with probability `1 − α`.
pub fn forward_noise_alpha<R: Rng + ?Sized>(x: &ReactionGraph, alpha: f64, rng: &mut R) -> ReactionGraph {
    let mut z = x.clone();
    let n = x.n();
    for i in 0..n {
        if rng.random::<f64>() >= alpha {
            z.set_node(i, NodeState::Mask);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() >= alpha {
                z.set_entry(i, j, EdgeLabel::Mask);
            }
        }
    }
    z.symmetrize();
    z
}

pub fn forward_noise<R: Rng + ?Sized>(
    x: &ReactionGraph,
    t: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ReactionGraph, DiffusionError> {
    Ok(forward_noise_alpha(x, schedule.alpha(t)?, rng))
}

/// Draws an index from unnormalized nonnegative weights.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(k);
            if u < acc {
                return Some(k);
            }
        }
    }
    last
}

/// One reverse step `t → s`: unmasked entries carry over, masked entries are
/// drawn from `((1−α_s)·mask + (α_s−α_t)·probs) / (1−α_t)`.
pub fn reverse_step<R: Rng + ?Sized>(
    z_t: &ReactionGraph,
    probs: &DenoiserOutput,
    s: f64,
    t: f64,
    schedule: &NoiseSchedule,
    codec: &EdgeCodec,
    rng: &mut R,
) -> Result<ReactionGraph, DiffusionError> {
    let reveal = schedule.unmask_prob(s, t)?;
    let n = z_t.n();
    if probs.n() != n || probs.edge_channels() != codec.concrete() + 1 {
        return Err(DiffusionError::Shape);
    }
    let mut z = z_t.clone();
    let mut weights = Vec::new();
    for i in 0..n {
        if !z_t.node(i).is_mask() {
            continue;
        }
        let row = probs.node_row(i);
        weights.clear();
        weights.extend(row.iter().map(|p| reveal * p));
        weights.push(1.0 - reveal);
        let k = sample_categorical(&weights, rng).ok_or_else(|| DiffusionError::BadRow(format!("node {i}")))?;
        if k < row.len() {
            z.set_node(i, NodeState::Block(k));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if !z_t.edge(i, j).is_mask() {
                continue;
            }
            let row = probs.edge_row(i, j);
            weights.clear();
            weights.extend(row.iter().map(|p| reveal * p));
            weights.push(1.0 - reveal);
            let k =
                sample_categorical(&weights, rng).ok_or_else(|| DiffusionError::BadRow(format!("edge ({i}, {j})")))?;
            if k < row.len() {
                let label = codec.decode(k).expect("channel in range");
                z.set_entry(i, j, label);
            }
        }
    }
    z.symmetrize();
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        let s = NoiseSchedule::linear(1e8);
        assert_eq!(s.alpha(0.0).unwrap(), 1.0);
        assert!(s.alpha(1.0).unwrap() < 1e-300);
        let s = NoiseSchedule::linear(4f64.ln());
        assert!((s.alpha(0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(s.alpha(1.5).is_err());
        assert!(s.alpha(-0.1).is_err());
    }

    #[test]
    fn schedules_monotone_and_start_at_zero() {
        for s in [
            NoiseSchedule::linear(100.0),
            NoiseSchedule::geometric(100.0, 10.0),
            NoiseSchedule::loglinear(1e-3),
        ] {
            assert_eq!(s.sigma(0.0), 0.0);
            let mut prev = 0.0;
            for k in 1..=100 {
                let v = s.sigma(k as f64 / 100.0);
                assert!(v > prev);
                prev = v;
            }
        }
        assert!((NoiseSchedule::loglinear(1e-3).sigma(1.0) - 1e3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn loss_weight_examples() {
        let w = sigma_loss_weight(2f64.ln(), 0.0);
        assert!((w.w - 2f64.ln()).abs() < 1e-12);
        assert_eq!(sigma_loss_weight(1.0, 1.0).w, 0.0);
        assert!(sigma_loss_weight(800.0, 1.0).w < 1e-300);
        let g = sigma_loss_weight(0.0, 0.0);
        assert!(g.guarded);
        assert_eq!(g.w, 0.0);
    }

    #[test]
    fn unmask_prob_edges() {
        let s = NoiseSchedule::linear(1e8);
        assert_eq!(s.unmask_prob(0.0, 0.01).unwrap(), 1.0);
        assert_eq!(s.unmask_prob(0.5, 0.51).unwrap(), 0.0);
        assert!(s.unmask_prob(0.5, 0.5).is_err());
        let s = NoiseSchedule::linear(4f64.ln());
        let a = |t: f64| (-4f64.ln() * t).exp();
        let want = (a(0.25) - a(0.5)) / (1.0 - a(0.5));
        assert!((s.unmask_prob(0.25, 0.5).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn categorical_skips_zero_weights() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[0.0, 2.0, 0.0], &mut rng), Some(1));
        }
        assert_eq!(sample_categorical(&[0.0, 0.0], &mut rng), None);
    }
}
