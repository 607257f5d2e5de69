//! Exponentially weighted average forecaster over a pool of matrix experts.

use std::sync::Arc;

use rayon::prelude::*;

use crate::covering::LowRankNet;
use crate::error::{Error, Result};
use crate::model::{ArmMatrix, LinkSpec};

/// Pools at least this large compute predictions and loss updates in parallel.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Squared,
    /// Negative log-likelihood `−y·z + m(z)` on the linear score `z`.
    Nll(LinkSpec),
}

impl LossKind {
    pub fn loss(&self, z: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => (y - z) * (y - z),
            LossKind::Nll(link) => -y * z + link.cumulant(z),
        }
    }
}

fn check_horizon(horizon: usize, delta: f64) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 0.25) {
        return Err(Error::InvalidArgument(format!(
            "delta {delta} must lie in (0, 0.25)"
        )));
    }
    Ok(())
}

/// Learning rate for squared loss: `1 / (2 (2 + sqrt(2 log(2T/δ)))²)`.
pub fn eta_squared(horizon: usize, delta: f64) -> Result<f64> {
    check_horizon(horizon, delta)?;
    let s = 2.0 + (2.0 * (2.0 * horizon as f64 / delta).ln()).sqrt();
    Ok(1.0 / (2.0 * s * s))
}

/// Learning rate for NLL loss: `κ / (sqrt(2R² log(2T/δ)) + 2c + 2L)²`.
pub fn eta_nll(horizon: usize, delta: f64, link: &LinkSpec) -> Result<f64> {
    check_horizon(horizon, delta)?;
    if !(link.kappa_mu > 0.0) {
        return Err(Error::InvalidArgument(
            "link kappa_mu must be positive".into(),
        ));
    }
    let r = link.noise_scale;
    let s = (2.0 * r * r * (2.0 * horizon as f64 / delta).ln()).sqrt()
        + 2.0 * link.c_mu
        + 2.0 * link.l_mu;
    Ok(link.kappa_mu / (s * s))
}

/// Cumulative expert losses and the learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EwState {
    losses: Vec<f64>,
    eta: f64,
    kind: LossKind,
    round: usize,
}

impl EwState {
    pub fn new(n_experts: usize, eta: f64, kind: LossKind) -> Result<Self> {
        Self::from_losses(vec![0.0; n_experts], eta, kind)
    }

    /// State with given cumulative losses at round 0, mostly useful in tests.
    pub fn from_losses(losses: Vec<f64>, eta: f64, kind: LossKind) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::EmptyNet);
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta {eta} must be positive"
            )));
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("losses must be finite".into()));
        }
        Ok(EwState {
            losses,
            eta,
            kind,
            round: 0,
        })
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn min_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Normalized weights `exp(−η L_i) / Σ_j exp(−η L_j)`, shifted by the minimum loss.
    pub fn weights(&self) -> Vec<f64> {
        let lmin = self.min_loss();
        let mut w: Vec<f64> = self
            .losses
            .iter()
            .map(|l| (-self.eta * (l - lmin)).exp())
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    /// Weighted prediction given this round's expert predictions.
    pub fn predict_from(&self, preds: &[f64]) -> Result<f64> {
        self.check_len(preds.len())?;
        let lmin = self.min_loss();
        let eta = self.eta;
        let (num, den) = if preds.len() >= PAR_THRESHOLD {
            self.losses
                .par_iter()
                .zip(preds.par_iter())
                .map(|(l, f)| {
                    let w = (-eta * (l - lmin)).exp();
                    (w * f, w)
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
        } else {
            self.losses
                .iter()
                .zip(preds)
                .fold((0.0, 0.0), |acc, (l, f)| {
                    let w = (-eta * (l - lmin)).exp();
                    (acc.0 + w * f, acc.1 + w)
                })
        };
        // keep the convex-combination bound exact under rounding
        let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((num / den).clamp(lo, hi))
    }

    /// Adds this round's loss of every expert against the observed `y`.
    pub fn update_from(&mut self, preds: &[f64], y: f64) -> Result<()> {
        self.check_len(preds.len())?;
        if !y.is_finite() {
            return Err(Error::InvalidArgument(
                "observed reward must be finite".into(),
            ));
        }
        let kind = self.kind;
        if preds.len() >= PAR_THRESHOLD {
            self.losses
                .par_iter_mut()
                .zip(preds.par_iter())
                .for_each(|(l, &f)| *l += kind.loss(f, y));
        } else {
            for (l, &f) in self.losses.iter_mut().zip(preds) {
                *l += kind.loss(f, y);
            }
        }
        self.round += 1;
        Ok(())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.losses.len() {
            return Err(Error::LengthMismatch {
                expected: self.losses.len(),
                found: n,
            });
        }
        Ok(())
    }
}

/// Experts backed by the elements of a [`LowRankNet`]; expert `i` predicts `⟨Θ_i, X⟩`.
#[derive(Debug, Clone)]
pub struct ExpertPool {
    net: Arc<LowRankNet>,
}

impl ExpertPool {
    pub fn new(net: Arc<LowRankNet>) -> Result<Self> {
        if net.is_empty() {
            return Err(Error::EmptyNet);
        }
        Ok(ExpertPool { net })
    }

    pub fn net(&self) -> &LowRankNet {
        &self.net
    }

    pub fn len(&self) -> usize {
        self.net.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net.is_empty()
    }

    pub fn predictions_into(&self, x: &ArmMatrix, out: &mut Vec<f64>) -> Result<()> {
        if x.dims() != self.net.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.net.dims(),
                found: x.dims(),
            });
        }
        let xv = x.vec();
        if self.net.len() >= PAR_THRESHOLD {
            out.clear();
            let p = xv.len();
            out.par_extend(
                self.net
                    .packed()
                    .par_chunks_exact(p)
                    .map(|e| e.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()),
            );
        } else {
            self.net.predictions_into(xv, out);
        }
        Ok(())
    }

    pub fn predictions(&self, x: &ArmMatrix) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        self.predictions_into(x, &mut out)?;
        Ok(out)
    }

    pub fn predict(&self, state: &EwState, x: &ArmMatrix) -> Result<f64> {
        state.predict_from(&self.predictions(x)?)
    }

    pub fn update(&self, state: &mut EwState, x: &ArmMatrix, y: f64) -> Result<()> {
        state.update_from(&self.predictions(x)?, y)
    }
}

/// `ρ_t = Σ_s ℓ(ŷ_s, y_s) − ℓ(f_s, y_s)` of the forecaster against one expert.
pub fn regret_vs_expert(y_hat: &[f64], expert: &[f64], y: &[f64], kind: &LossKind) -> Result<f64> {
    for n in [expert.len(), y.len()] {
        if n != y_hat.len() {
            return Err(Error::LengthMismatch {
                expected: y_hat.len(),
                found: n,
            });
        }
    }
    Ok(y_hat
        .iter()
        .zip(expert)
        .zip(y)
        .map(|((&p, &f), &obs)| kind.loss(p, obs) - kind.loss(f, obs))
        .sum())
}
