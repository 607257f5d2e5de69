//! LowLOC and its GLM sibling LowGLOC.
//!
//! Each round the agent picks the arm with the largest optimistic score over the
//! enclosing ellipsoid, then on observing the reward it (a) predicts `ŷ_t` with the
//! EW forecaster from losses through `t − 1`, (b) feeds `(X_t, ŷ_t)` to the
//! conversion state, (c) charges every expert its loss against `y_t` and
//! (d) recomputes the radius from the forecaster-regret budget `B_t`.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::confidence::{beta_glb, beta_linear, ConversionState};
use crate::covering::{build_net_with, factor_grid_size, LowRankNet, NetConfig, NetStrategy};
use crate::error::{Error, Result};
use crate::forecaster::{eta_nll, eta_squared, EwState, ExpertPool, LossKind};
use crate::lowoful::REWARD_STREAM;
use crate::model::{rng_for, ArmMatrix, ArmSet, BanditInstance, LinkSpec};
use crate::trace::RegretTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowLocMode {
    /// Squared loss, linear-mode set with radius `1 + β`.
    Linear,
    /// NLL loss under the link, GLB-mode set with radius `β^GLB`.
    Glm(LinkSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BtSchedule {
    /// Explicit bound from the squared-loss EW regret proof.
    Lemma3,
    /// Explicit bound from the NLL-loss EW regret proof.
    Lemma7,
    /// Running maximum of the forecaster's realized regret against the best expert.
    Empirical,
}

impl FromStr for BtSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lemma3" => Ok(BtSchedule::Lemma3),
            "lemma7" => Ok(BtSchedule::Lemma7),
            "empirical" => Ok(BtSchedule::Empirical),
            other => Err(Error::Config(format!("unknown B_t schedule `{other}`"))),
        }
    }
}

fn check_round(t: usize, horizon: usize, delta: f64, eps: f64) -> Result<()> {
    if horizon == 0 || t > horizon {
        return Err(Error::InvalidArgument(format!(
            "round {t} outside 0..={horizon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) || !(eps > 0.0) {
        return Err(Error::InvalidArgument(
            "delta must lie in (0, 1) and eps be positive".into(),
        ));
    }
    Ok(())
}

/// `2(d1+d2+1) r log(9/ε) (2 + sqrt(2 log(2T/δ)))² + 2tε (1 + sqrt(2 log(2T/δ)))`.
///
/// With `ε = 1/T` the covering term is `log(9T)` and the discretization term `2t/T (…)`.
pub fn bt_lemma3(
    t: usize,
    horizon: usize,
    delta: f64,
    d1: usize,
    d2: usize,
    r: usize,
    eps: f64,
) -> Result<f64> {
    check_round(t, horizon, delta, eps)?;
    let g = (2.0 * (2.0 * horizon as f64 / delta).ln()).sqrt();
    let cover = 2.0 * ((d1 + d2 + 1) * r) as f64 * (9.0 / eps).ln() * (2.0 + g).powi(2);
    Ok(cover + 2.0 * t as f64 * eps * (1.0 + g))
}

/// `(d1+d2+1) r log(9/ε) (sqrt(2R² log(2T/δ)) + 2c + 2L)² / κ + t (2c + 2L + sqrt(2R² log(2T/δ))) ε`.
#[allow(clippy::too_many_arguments)]
pub fn bt_lemma7(
    t: usize,
    horizon: usize,
    delta: f64,
    d1: usize,
    d2: usize,
    r: usize,
    eps: f64,
    link: &LinkSpec,
) -> Result<f64> {
    check_round(t, horizon, delta, eps)?;
    if !(link.kappa_mu > 0.0) {
        return Err(Error::InvalidArgument(
            "link kappa_mu must be positive".into(),
        ));
    }
    let rr = link.noise_scale;
    let g = (2.0 * rr * rr * (2.0 * horizon as f64 / delta).ln()).sqrt();
    let s = g + 2.0 * link.c_mu + 2.0 * link.l_mu;
    let cover = ((d1 + d2 + 1) * r) as f64 * (9.0 / eps).ln() * s * s / link.kappa_mu;
    Ok(cover + t as f64 * s * eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowLocConfig {
    pub horizon: usize,
    pub delta: f64,
    pub rank: usize,
    /// Net resolution; `None` means `1/T`.
    pub eps: Option<f64>,
    pub schedule: BtSchedule,
    pub mode: LowLocMode,
    pub net: NetConfig,
    /// Multiplies the confidence radius; 1 keeps the analysis constants.
    pub radius_scale: f64,
}

impl LowLocConfig {
    pub fn linear(horizon: usize, delta: f64, rank: usize) -> Self {
        LowLocConfig {
            horizon,
            delta,
            rank,
            eps: None,
            schedule: BtSchedule::Lemma3,
            mode: LowLocMode::Linear,
            net: NetConfig {
                strategy: NetStrategy::FactorGrid,
                ..NetConfig::default()
            },
            radius_scale: 1.0,
        }
    }

    pub fn glm(horizon: usize, delta: f64, rank: usize, link: LinkSpec) -> Self {
        LowLocConfig {
            schedule: BtSchedule::Lemma7,
            mode: LowLocMode::Glm(link),
            ..Self::linear(horizon, delta, rank)
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = Some(eps);
        self
    }

    pub fn with_schedule(mut self, schedule: BtSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_radius_scale(mut self, scale: f64) -> Self {
        self.radius_scale = scale;
        self
    }

    pub fn eps_value(&self) -> f64 {
        self.eps.unwrap_or(1.0 / self.horizon.max(1) as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 0.25) {
            return Err(Error::Config(format!(
                "delta {} must lie in (0, 0.25)",
                self.delta
            )));
        }
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(Error::Config("radius_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Checks that the configured net can be built under the cap, without building it.
pub fn lowloc_feasibility(d1: usize, d2: usize, config: &LowLocConfig) -> Result<()> {
    let eps = config.eps_value();
    if let NetStrategy::FactorGrid = config.net.strategy {
        let size = factor_grid_size(d1, d2, config.rank, eps);
        if size > config.net.cap as f64 {
            return Err(Error::Infeasible(format!(
                "LowLOC net at {d1}x{d2}, rank {}, eps {eps} needs {size:.3e} elements (cap {})",
                config.rank, config.net.cap
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LowLocAgent {
    d1: usize,
    d2: usize,
    config: LowLocConfig,
    pool: ExpertPool,
    ew: EwState,
    conv: ConversionState,
    radius: f64,
    b_t: f64,
    forecaster_loss: f64,
    pending: Option<(usize, ArmMatrix, f64)>,
    last_y_hat: Option<f64>,
    preds: Vec<f64>,
}

impl LowLocAgent {
    /// Builds the ε-net and the agent; fails with `Infeasible` when the net exceeds the cap.
    pub fn new(d1: usize, d2: usize, config: LowLocConfig) -> Result<Self> {
        config.validate()?;
        lowloc_feasibility(d1, d2, &config)?;
        let net =
            build_net_with(d1, d2, config.rank, config.eps_value(), &config.net).map_err(|e| {
                match e {
                    Error::NetCapExceeded { estimated, cap } => Error::Infeasible(format!(
                        "LowLOC net needs about {estimated:.3e} elements (cap {cap})"
                    )),
                    other => other,
                }
            })?;
        Self::with_net(Arc::new(net), config)
    }

    /// Agent over a caller-supplied expert pool.
    pub fn with_net(net: Arc<LowRankNet>, config: LowLocConfig) -> Result<Self> {
        config.validate()?;
        let (d1, d2) = net.dims();
        let (eta, kind) = match config.mode {
            LowLocMode::Linear => (
                eta_squared(config.horizon, config.delta)?,
                LossKind::Squared,
            ),
            LowLocMode::Glm(link) => (
                eta_nll(config.horizon, config.delta, &link)?,
                LossKind::Nll(link),
            ),
        };
        let pool = ExpertPool::new(net)?;
        let ew = EwState::new(pool.len(), eta, kind)?;
        Ok(LowLocAgent {
            d1,
            d2,
            config,
            pool,
            ew,
            conv: ConversionState::new(d1, d2),
            // C₀ is the unit Frobenius ball
            radius: 1.0,
            b_t: 0.0,
            forecaster_loss: 0.0,
            pending: None,
            last_y_hat: None,
            preds: Vec::new(),
        })
    }

    pub fn config(&self) -> &LowLocConfig {
        &self.config
    }

    pub fn net(&self) -> &LowRankNet {
        self.pool.net()
    }

    pub fn ew(&self) -> &EwState {
        &self.ew
    }

    pub fn conversion(&self) -> &ConversionState {
        &self.conv
    }

    /// Squared radius of the current enclosing ellipsoid.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn b_t(&self) -> f64 {
        self.b_t
    }

    pub fn round(&self) -> usize {
        self.conv.round()
    }

    /// `ŷ_t` from the latest [`observe`](Self::observe).
    pub fn last_prediction(&self) -> Option<f64> {
        self.last_y_hat
    }

    /// Optimism width `sqrt(radius) ‖vec(X_t)‖_{V⁻¹}` of the pending selection.
    pub fn pending_width(&self) -> Option<f64> {
        self.pending.as_ref().map(|p| p.2)
    }

    /// Largest realized regret of the forecaster against any expert so far.
    pub fn realized_regret(&self) -> f64 {
        self.forecaster_loss - self.ew.min_loss()
    }

    /// Arm maximizing `⟨X, θ̂⟩ + sqrt(radius) ‖vec(X)‖_{V⁻¹}`; ties go to the lowest index.
    pub fn select_arm(&mut self, arms: &ArmSet) -> Result<usize> {
        if arms.is_empty() {
            return Err(Error::EmptyArmSet);
        }
        if arms.dims() != (self.d1, self.d2) {
            return Err(Error::DimensionMismatch {
                expected: (self.d1, self.d2),
                found: arms.dims(),
            });
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, arm) in arms.arms().iter().enumerate() {
            let s = self.conv.ucb_score(arm, self.radius)?;
            if s > best.1 {
                best = (i, s);
            }
        }
        let arm = arms.arms()[best.0].clone();
        let lin = arm.inner(&self.conv.theta_hat());
        self.pending = Some((best.0, arm, best.1 - lin));
        Ok(best.0)
    }

    pub fn observe(&mut self, arm: &ArmMatrix, y: f64) -> Result<()> {
        match &self.pending {
            None => return Err(Error::OutOfOrder("observe called before select_arm")),
            Some((_, chosen, _)) if chosen != arm => {
                return Err(Error::OutOfOrder(
                    "observed arm differs from the selected arm",
                ))
            }
            Some(_) => {}
        }
        if !y.is_finite() {
            return Err(Error::InvalidArgument("reward must be finite".into()));
        }
        if self.conv.round() >= self.config.horizon {
            return Err(Error::InvalidArgument("horizon exhausted".into()));
        }
        self.pool.predictions_into(arm, &mut self.preds)?;
        // (a) losses still hold rounds 1..t-1
        let y_hat = self.ew.predict_from(&self.preds)?;
        // (b)
        self.conv.ingest(arm, y_hat)?;
        // (c)
        self.ew.update_from(&self.preds, y)?;
        self.forecaster_loss += self.ew.kind().loss(y_hat, y);
        // (d)
        let t = self.conv.round();
        self.b_t = self.budget(t)?;
        self.radius = self.config.radius_scale
            * match self.config.mode {
                LowLocMode::Linear => 1.0 + beta_linear(self.b_t, self.config.delta)?,
                LowLocMode::Glm(link) => beta_glb(self.b_t, self.config.delta, &link)?,
            };
        self.last_y_hat = Some(y_hat);
        self.pending = None;
        Ok(())
    }

    fn budget(&self, t: usize) -> Result<f64> {
        let c = &self.config;
        let eps = c.eps_value();
        match c.schedule {
            BtSchedule::Lemma3 => bt_lemma3(t, c.horizon, c.delta, self.d1, self.d2, c.rank, eps),
            BtSchedule::Lemma7 => {
                let link = match c.mode {
                    LowLocMode::Glm(link) => link,
                    LowLocMode::Linear => LinkSpec::identity(),
                };
                bt_lemma7(t, c.horizon, c.delta, self.d1, self.d2, c.rank, eps, &link)
            }
            BtSchedule::Empirical => Ok(self.b_t.max(self.realized_regret()).max(0.0)),
        }
    }
}

/// One LowLOC/LowGLOC run over `config.horizon` rounds on a shared net.
pub fn lowloc_run(
    instance: &BanditInstance,
    arms: &ArmSet,
    net: Arc<LowRankNet>,
    config: &LowLocConfig,
    seed: u64,
    run_id: usize,
) -> Result<RegretTrace> {
    let tag = match config.mode {
        LowLocMode::Linear => "lowloc",
        LowLocMode::Glm(_) => "lowgloc",
    };
    let mut agent = LowLocAgent::with_net(net, config.clone())?;
    let mut noise = rng_for(seed, REWARD_STREAM);
    let means = instance.mean_rewards(arms)?;
    let (_, best) = instance.optimal_value(arms)?;
    let mut trace = RegretTrace::with_capacity(tag, run_id, seed, config.horizon);
    for _ in 0..config.horizon {
        let i = agent.select_arm(arms)?;
        let arm = &arms.arms()[i];
        let y = instance.pull(arm, &mut noise)?;
        agent.observe(arm, y)?;
        trace.push(best - means[i]);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn arm(v: [f64; 4]) -> ArmMatrix {
        ArmMatrix::new(DMatrix::from_row_slice(2, 2, &v)).unwrap()
    }

    #[test]
    fn lemma3_direct_evaluation() {
        let got = bt_lemma3(100, 100, 0.01, 2, 2, 1, 0.01).unwrap();
        let g = (2.0 * 20000f64.ln()).sqrt();
        let expect = 2.0 * 5.0 * 900f64.ln() * (2.0 + g).powi(2) + 2.0 * (1.0 + g);
        assert!((got - expect).abs() < 1e-9 * expect);
        let mut prev = 0.0;
        for t in 0..=100 {
            let b = bt_lemma3(t, 100, 0.01, 2, 2, 1, 0.01).unwrap();
            assert!(b >= prev);
            prev = b;
        }
        assert!(bt_lemma3(101, 100, 0.01, 2, 2, 1, 0.01).is_err());
        assert!("bogus".parse::<BtSchedule>().is_err());
    }

    #[test]
    fn first_round_prefers_largest_norm_then_lowest_index() {
        let net = LowRankNet::from_elements(0.5, 1, &[DMatrix::from_element(2, 2, 0.1)]).unwrap();
        let mut agent =
            LowLocAgent::with_net(Arc::new(net), LowLocConfig::linear(10, 0.01, 1)).unwrap();
        let arms = ArmSet::new(vec![
            arm([0.5, 0.0, 0.0, 0.0]),
            arm([0.0, 1.0, 0.0, 0.0]),
            arm([0.0, 0.0, 1.0, 0.0]),
        ])
        .unwrap();
        assert_eq!(agent.select_arm(&arms).unwrap(), 1);
    }

    #[test]
    fn out_of_order_observe_is_rejected() {
        let net = LowRankNet::from_elements(0.5, 1, &[DMatrix::zeros(2, 2)]).unwrap();
        let mut agent =
            LowLocAgent::with_net(Arc::new(net), LowLocConfig::linear(10, 0.01, 1)).unwrap();
        let x = arm([1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(agent.observe(&x, 0.0), Err(Error::OutOfOrder(_))));
        let arms = ArmSet::new(vec![x.clone(), arm([0.0, 1.0, 0.0, 0.0])]).unwrap();
        let i = agent.select_arm(&arms).unwrap();
        let other = arms.arms()[1 - i].clone();
        assert!(matches!(
            agent.observe(&other, 0.0),
            Err(Error::OutOfOrder(_))
        ));
        agent.observe(&arms.arms()[i].clone(), 0.0).unwrap();
        assert!(matches!(agent.observe(&x, 0.0), Err(Error::OutOfOrder(_))));
    }

    #[test]
    fn infeasible_scale_is_refused() {
        let cfg = LowLocConfig::linear(3000, 0.01, 3);
        assert!(matches!(
            LowLocAgent::new(10, 10, cfg),
            Err(Error::Infeasible(_))
        ));
    }
}
