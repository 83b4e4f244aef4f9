//! Weighted multi-task binary cross-entropy:
//!
//! `L = Σ_n β_n [ α·J(ŷ_n, y_n) + (1 − α)·Σ_k J(ŷᵏ_n, yᵏ_n) ]`
//!
//! with per-example weight `β_n` and task weight `α`. Targets may be soft.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::HeadGrads;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    /// Sum divided by the number of examples in the batch.
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the toxicity term; auxiliary heads get `1 - alpha`.
    pub alpha: f64,
    /// Multiplier applied to `β` of non-toxic, identity-mentioning comments.
    pub c: f64,
    /// Number of auxiliary heads.
    pub heads: usize,
    /// Probabilities are clamped to `[epsilon, 1 - epsilon]` before logs.
    pub epsilon: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.6, c: 3.0, heads: 9, epsilon: 1e-7, reduction: Reduction::Mean }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(alloc::format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("c must be > 0, got {}", self.c)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidArgument(alloc::format!("epsilon {} outside (0, 0.5)", self.epsilon)));
        }
        Ok(())
    }

    fn scale(&self, n: usize) -> f64 {
        match self.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n.max(1) as f64,
        }
    }
}

/// Predictions, targets and weight of one example.
#[derive(Clone, Copy, Debug)]
pub struct LossExample<'a> {
    pub y_hat: f64,
    pub aux_hat: &'a [f64],
    pub y: f64,
    pub aux: &'a [f64],
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `Σ β α J_tox`, after reduction.
    pub toxicity: f64,
    /// `Σ β (1 − α) Σ_k J_k`, after reduction.
    pub auxiliary: f64,
    /// Unreduced `β[α J_tox + (1 − α) Σ_k J_k]` per example.
    pub per_example: Vec<f64>,
}

fn clamp(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Binary cross-entropy `−[y ln ŷ + (1 − y) ln(1 − ŷ)]` with `ŷ` clamped to
/// `[eps, 1 − eps]`.
pub fn bce(y_hat: f64, y: f64, eps: f64) -> f64 {
    let p = clamp(y_hat, eps);
    -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
}

fn check_batch(batch: &[LossExample<'_>], cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    for ex in batch {
        if ex.aux_hat.len() != cfg.heads {
            return Err(Error::ShapeMismatch { what: "auxiliary predictions", expected: cfg.heads, found: ex.aux_hat.len() });
        }
        if ex.aux.len() != cfg.heads {
            return Err(Error::ShapeMismatch { what: "auxiliary targets", expected: cfg.heads, found: ex.aux.len() });
        }
    }
    Ok(())
}

pub fn multitask_loss(batch: &[LossExample<'_>], cfg: &LossConfig) -> Result<LossBreakdown> {
    check_batch(batch, cfg)?;
    let mut toxicity = 0.0;
    let mut auxiliary = 0.0;
    let mut per_example = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for ex in batch {
        // β is applied last so scaling it scales every term exactly.
        let tox = cfg.alpha * bce(ex.y_hat, ex.y, cfg.epsilon);
        let aux_sum: f64 = ex.aux_hat.iter().zip(ex.aux).map(|(&p, &t)| bce(p, t, cfg.epsilon)).sum();
        let aux = (1.0 - cfg.alpha) * aux_sum;
        toxicity += ex.beta * tox;
        auxiliary += ex.beta * aux;
        let contribution = ex.beta * (tox + aux);
        total += contribution;
        per_example.push(contribution);
    }
    let s = cfg.scale(batch.len());
    Ok(LossBreakdown { total: total * s, toxicity: toxicity * s, auxiliary: auxiliary * s, per_example })
}

fn bce_grad(y_hat: f64, y: f64, eps: f64) -> f64 {
    let p = clamp(y_hat, eps);
    (p - y) / (p * (1.0 - p))
}

/// `dL/dŷ_n` and `dL/dŷᵏ_n` per example. Composed with a sigmoid head the
/// pre-activation gradient becomes `β α (ŷ − y)` (scaled by the reduction).
pub fn loss_grad_heads(batch: &[LossExample<'_>], cfg: &LossConfig) -> Result<Vec<HeadGrads>> {
    check_batch(batch, cfg)?;
    let s = cfg.scale(batch.len());
    Ok(batch
        .iter()
        .map(|ex| HeadGrads {
            toxicity: ex.beta * (s * cfg.alpha * bce_grad(ex.y_hat, ex.y, cfg.epsilon)),
            auxiliary: ex
                .aux_hat
                .iter()
                .zip(ex.aux)
                .map(|(&p, &t)| ex.beta * (s * (1.0 - cfg.alpha) * bce_grad(p, t, cfg.epsilon)))
                .collect(),
        })
        .collect())
}
