//! Domain types and bandit environments.
//!
//! An environment is a hidden low-rank matrix `Θ*` together with a link function.
//! Pulling an arm `X` returns `μ(⟨X, Θ*⟩) + η` with Gaussian noise `η ~ N(0, σ²)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, full_svd, numerical_rank};

/// Slack allowed on the unit Frobenius bound of arms and parameters.
pub const NORM_SLACK: f64 = 1e-9;
/// Tolerance below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-8;

/// Deterministic RNG used across the crate.
pub type SimRng = ChaCha8Rng;

/// RNG for a given seed and stream. Streams separate arm sampling, noise and exploration.
pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A `d1 × d2` action with `‖X‖_F ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmMatrix(DMatrix<f64>);

impl ArmMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("arm has non-finite entries".into()));
        }
        let norm = m.norm();
        if norm > 1.0 + NORM_SLACK {
            return Err(Error::InvalidArgument(format!(
                "arm Frobenius norm {norm} exceeds 1"
            )));
        }
        Ok(ArmMatrix(m))
    }

    pub fn zeros(d1: usize, d2: usize) -> Self {
        ArmMatrix(DMatrix::zeros(d1, d2))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Column-major vectorization `vec(X)`.
    pub fn vec(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn inner(&self, theta: &DMatrix<f64>) -> f64 {
        frobenius_inner(&self.0, theta)
    }
}

/// A finite, non-empty, indexable set of arms sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    arms: Vec<ArmMatrix>,
    dims: (usize, usize),
}

impl ArmSet {
    pub fn new(arms: Vec<ArmMatrix>) -> Result<Self> {
        let first = arms.first().ok_or(Error::EmptyArmSet)?;
        let dims = first.dims();
        if let Some(bad) = arms.iter().find(|a| a.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: bad.dims(),
            });
        }
        Ok(ArmSet { arms, dims })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn arms(&self) -> &[ArmMatrix] {
        &self.arms
    }

    pub fn get(&self, index: usize) -> Result<&ArmMatrix> {
        self.arms.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.arms.len(),
        })
    }
}

/// `n_arms` i.i.d. standard-normal matrices, each scaled to unit Frobenius norm.
pub fn sample_unit_arm_set(d1: usize, d2: usize, n_arms: usize, seed: u64) -> Result<ArmSet> {
    if n_arms == 0 {
        return Err(Error::InvalidArgument("n_arms must be at least 1".into()));
    }
    if d1 == 0 || d2 == 0 {
        return Err(Error::InvalidArgument(
            "arm dimensions must be positive".into(),
        ));
    }
    let mut rng = rng_for(seed, 0);
    let arms = (0..n_arms)
        .map(|_| {
            let mut m = DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = m.norm();
            m /= n;
            ArmMatrix(m)
        })
        .collect();
    ArmSet::new(arms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Identity,
    Logistic,
}

impl std::str::FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(LinkKind::Identity),
            "logistic" | "logit" => Ok(LinkKind::Logistic),
            other => Err(Error::Config(format!("unknown link `{other}`"))),
        }
    }
}

/// Link function `μ` with the constants the GLM confidence sets depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub kind: LinkKind,
    /// Lipschitz constant of `μ` on `[-1, 1]`.
    pub l_mu: f64,
    /// Lower bound of `μ'` on `(-1, 1)`.
    pub kappa_mu: f64,
    /// Bound on `|μ(0)|`.
    pub c_mu: f64,
    /// Sub-Gaussian scale of the reward noise, at most `sqrt(l_mu)`.
    pub noise_scale: f64,
}

impl LinkSpec {
    pub fn identity() -> Self {
        LinkSpec {
            kind: LinkKind::Identity,
            l_mu: 1.0,
            kappa_mu: 1.0,
            c_mu: 0.0,
            noise_scale: 1.0,
        }
    }

    pub fn logistic() -> Self {
        let e = std::f64::consts::E;
        LinkSpec {
            kind: LinkKind::Logistic,
            l_mu: 0.25,
            kappa_mu: e / ((1.0 + e) * (1.0 + e)),
            c_mu: 0.5,
            noise_scale: 0.5,
        }
    }

    pub fn from_kind(kind: LinkKind) -> Self {
        match kind {
            LinkKind::Identity => Self::identity(),
            LinkKind::Logistic => Self::logistic(),
        }
    }

    /// Overrides the noise scale `R`; it may not exceed `sqrt(L_μ)`.
    pub fn with_noise_scale(mut self, r: f64) -> Result<Self> {
        if !(r > 0.0) || r > self.l_mu.sqrt() + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "noise scale {r} must lie in (0, sqrt(L_mu) = {}]",
                self.l_mu.sqrt()
            )));
        }
        self.noise_scale = r;
        Ok(self)
    }

    /// Mean reward `μ(z)`.
    pub fn mean(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => z,
            LinkKind::Logistic => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// `μ'(z)`.
    pub fn derivative(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 1.0,
            LinkKind::Logistic => {
                let m = self.mean(z);
                m * (1.0 - m)
            }
        }
    }

    /// Cumulant `m(z)` with `m' = μ`.
    pub fn cumulant(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 0.5 * z * z,
            // log(1 + e^z) without overflow
            LinkKind::Logistic => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self::identity()
    }
}

/// Hidden parameter and reward model of one bandit problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    theta_star: DMatrix<f64>,
    rank: usize,
    omega_r: f64,
    sigma: f64,
    link: LinkSpec,
}

impl BanditInstance {
    pub fn new(
        theta_star: DMatrix<f64>,
        rank: usize,
        omega_r: f64,
        sigma: f64,
        link: LinkSpec,
    ) -> Result<Self> {
        let (d1, d2) = theta_star.shape();
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidInstance("empty parameter matrix".into()));
        }
        if theta_star.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInstance(
                "non-finite parameter entries".into(),
            ));
        }
        if rank == 0 || rank > d1.min(d2) {
            return Err(Error::InvalidInstance(format!(
                "rank {rank} outside 1..={}",
                d1.min(d2)
            )));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInstance(format!(
                "noise level {sigma} must be >= 0"
            )));
        }
        if !(omega_r > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "omega_r {omega_r} must be > 0"
            )));
        }
        let norm = theta_star.norm();
        if norm > 1.0 + NORM_SLACK {
            return Err(Error::InvalidInstance(format!("‖Θ*‖_F = {norm} exceeds 1")));
        }
        let sv = full_svd(&theta_star).singular_values;
        let num_rank = sv.iter().filter(|&&s| s > RANK_TOL).count();
        if num_rank > rank {
            return Err(Error::InvalidInstance(format!(
                "numerical rank {num_rank} exceeds declared rank {rank}"
            )));
        }
        if sv[rank - 1] < omega_r - NORM_SLACK {
            return Err(Error::InvalidInstance(format!(
                "σ_{rank}(Θ*) = {} is below omega_r = {omega_r}",
                sv[rank - 1]
            )));
        }
        Ok(BanditInstance {
            theta_star,
            rank,
            omega_r,
            sigma,
            link,
        })
    }

    pub fn theta_star(&self) -> &DMatrix<f64> {
        &self.theta_star
    }

    pub fn dims(&self) -> (usize, usize) {
        self.theta_star.shape()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn omega_r(&self) -> f64 {
        self.omega_r
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn link(&self) -> &LinkSpec {
        &self.link
    }

    /// Same parameter with a different noise level.
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInstance(format!(
                "noise level {sigma} must be >= 0"
            )));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Same parameter with a different link.
    pub fn with_link(mut self, link: LinkSpec) -> Self {
        self.link = link;
        self
    }

    fn check_dims(&self, arm: &ArmMatrix) -> Result<()> {
        if arm.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: arm.dims(),
            });
        }
        Ok(())
    }

    /// Linear score `⟨X, Θ*⟩`.
    pub fn score(&self, arm: &ArmMatrix) -> Result<f64> {
        self.check_dims(arm)?;
        Ok(arm.inner(&self.theta_star))
    }

    /// Expected reward `μ(⟨X, Θ*⟩)`.
    pub fn mean_reward(&self, arm: &ArmMatrix) -> Result<f64> {
        Ok(self.link.mean(self.score(arm)?))
    }

    /// Noisy reward `μ(⟨X, Θ*⟩) + η`, `η ~ N(0, σ²)`.
    pub fn pull<R: Rng + ?Sized>(&self, arm: &ArmMatrix, rng: &mut R) -> Result<f64> {
        let mean = self.mean_reward(arm)?;
        if self.sigma == 0.0 {
            return Ok(mean);
        }
        let noise: f64 = rng.sample(StandardNormal);
        Ok(mean + self.sigma * noise)
    }

    /// Index and mean reward of the best arm; ties go to the lowest index.
    pub fn optimal_value(&self, arms: &ArmSet) -> Result<(usize, f64)> {
        if arms.is_empty() {
            return Err(Error::EmptyArmSet);
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, arm) in arms.arms().iter().enumerate() {
            let s = self.score(arm)?;
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok((best.0, self.link.mean(best.1)))
    }

    /// `μ(⟨X*, Θ*⟩) − μ(⟨X_chosen, Θ*⟩)`.
    pub fn instant_regret(&self, arms: &ArmSet, chosen: usize) -> Result<f64> {
        let arm = arms.get(chosen)?;
        let (_, best) = self.optimal_value(arms)?;
        Ok((best - self.mean_reward(arm)?).max(0.0))
    }

    /// Mean rewards of every arm, in index order.
    pub fn mean_rewards(&self, arms: &ArmSet) -> Result<Vec<f64>> {
        arms.arms().iter().map(|a| self.mean_reward(a)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// JSON form of a [`BanditInstance`]; `theta_star` is row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub omega_r: f64,
    pub sigma: f64,
    pub link: LinkDoc,
    pub theta_star: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkDoc {
    pub kind: LinkKind,
    pub noise_scale: f64,
}

impl From<&BanditInstance> for InstanceDoc {
    fn from(inst: &BanditInstance) -> Self {
        let (d1, d2) = inst.dims();
        let mut theta = Vec::with_capacity(d1 * d2);
        for i in 0..d1 {
            for j in 0..d2 {
                theta.push(inst.theta_star[(i, j)]);
            }
        }
        InstanceDoc {
            d1,
            d2,
            r: inst.rank,
            omega_r: inst.omega_r,
            sigma: inst.sigma,
            link: LinkDoc {
                kind: inst.link.kind,
                noise_scale: inst.link.noise_scale,
            },
            theta_star: theta,
        }
    }
}

impl TryFrom<InstanceDoc> for BanditInstance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        if doc.theta_star.len() != doc.d1 * doc.d2 {
            return Err(Error::LengthMismatch {
                expected: doc.d1 * doc.d2,
                found: doc.theta_star.len(),
            });
        }
        let theta = DMatrix::from_row_slice(doc.d1, doc.d2, &doc.theta_star);
        let link = LinkSpec::from_kind(doc.link.kind).with_noise_scale(doc.link.noise_scale)?;
        BanditInstance::new(theta, doc.r, doc.omega_r, doc.sigma, link)
    }
}

/// Diagonal singular-value pattern used by the experiments.
///
/// `r = 1` gives `(0.5)`. For `r ≥ 2` the first `min(2, r − 1)` entries are `0.5`
/// and the rest equal `omega_r`, so `r = 3` gives `(0.5, 0.5, ω_r)`.
pub fn diag_pattern(r: usize, omega_r: f64) -> Vec<f64> {
    if r == 1 {
        return vec![0.5];
    }
    let leading = 2.min(r - 1);
    (0..r)
        .map(|i| if i < leading { 0.5 } else { omega_r })
        .collect()
}

/// Diagonal instance with identity link and the default noise level `σ = 0.01`.
pub fn make_diag_instance(d1: usize, d2: usize, r: usize, omega_r: f64) -> Result<BanditInstance> {
    if r == 0 || r > d1.min(d2) {
        return Err(Error::InvalidInstance(format!(
            "rank {r} outside 1..={}",
            d1.min(d2)
        )));
    }
    if !(omega_r > 0.0 && omega_r <= 0.5) {
        return Err(Error::InvalidInstance(format!(
            "omega_r {omega_r} must lie in (0, 0.5]"
        )));
    }
    let mut theta = DMatrix::zeros(d1, d2);
    for (i, v) in diag_pattern(r, omega_r).into_iter().enumerate() {
        theta[(i, i)] = v;
    }
    BanditInstance::new(theta, r, omega_r, DEFAULT_SIGMA, LinkSpec::identity())
}

pub const DEFAULT_SIGMA: f64 = 0.01;

/// One observed reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub arm_index: usize,
    pub reward: f64,
    pub round: usize,
}

/// `Σ_j φ_j varphi_jᵀ` without scaling.
pub fn causal_feature_sum(phi: &[DVector<f64>], varphi: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if phi.len() != varphi.len() {
        return Err(Error::LengthMismatch {
            expected: phi.len(),
            found: varphi.len(),
        });
    }
    let first_phi = phi.first().ok_or_else(|| {
        Error::InvalidArgument("causal features need at least one parent value".into())
    })?;
    let (d1, d2) = (first_phi.len(), varphi[0].len());
    let mut out = DMatrix::zeros(d1, d2);
    for (p, v) in phi.iter().zip(varphi) {
        if p.len() != d1 || v.len() != d2 {
            return Err(Error::DimensionMismatch {
                expected: (d1, d2),
                found: (p.len(), v.len()),
            });
        }
        if p.norm() > 1.0 + NORM_SLACK || v.norm() > 1.0 + NORM_SLACK {
            return Err(Error::InvalidArgument(
                "causal feature vectors must have norm at most 1".into(),
            ));
        }
        out += p * v.transpose();
    }
    Ok(out)
}

/// Arm feature of one action in the rank-one causal reduction, scaled by `1/|Z|`.
pub fn causal_rank1_features(phi: &[DVector<f64>], varphi: &[DVector<f64>]) -> Result<ArmMatrix> {
    let sum = causal_feature_sum(phi, varphi)?;
    ArmMatrix::new(sum / phi.len() as f64)
}

/// Builds arm features `[B₁ ⋯ B_K] / K` for the additive causal model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveFeatureFactory {
    pub groups: usize,
    pub d1: usize,
    pub d2: usize,
}

impl AdditiveFeatureFactory {
    pub fn assemble(&self, blocks: &[DMatrix<f64>]) -> Result<ArmMatrix> {
        if blocks.len() != self.groups {
            return Err(Error::LengthMismatch {
                expected: self.groups,
                found: blocks.len(),
            });
        }
        let mut out = DMatrix::zeros(self.d1, self.d2 * self.groups);
        for (g, b) in blocks.iter().enumerate() {
            if b.shape() != (self.d1, self.d2) {
                return Err(Error::DimensionMismatch {
                    expected: (self.d1, self.d2),
                    found: b.shape(),
                });
            }
            out.view_mut((0, g * self.d2), (self.d1, self.d2))
                .copy_from(b);
        }
        ArmMatrix::new(out / self.groups as f64)
    }

    /// Random arm set: each block is a causal feature sum over `n_values` parent values.
    pub fn sample_arm_set(&self, n_arms: usize, n_values: usize, seed: u64) -> Result<ArmSet> {
        if n_arms == 0 || n_values == 0 {
            return Err(Error::InvalidArgument(
                "need at least one arm and parent value".into(),
            ));
        }
        let mut rng = rng_for(seed, 3);
        let arms = (0..n_arms)
            .map(|_| {
                let blocks: Vec<DMatrix<f64>> = (0..self.groups)
                    .map(|_| {
                        let phi: Vec<_> = (0..n_values)
                            .map(|_| random_unit(self.d1, &mut rng))
                            .collect();
                        let varphi: Vec<_> = (0..n_values)
                            .map(|_| random_unit(self.d2, &mut rng))
                            .collect();
                        causal_feature_sum(&phi, &varphi).map(|m| m / n_values as f64)
                    })
                    .collect::<Result<_>>()?;
                self.assemble(&blocks)
            })
            .collect::<Result<Vec<_>>>()?;
        ArmSet::new(arms)
    }
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    v / n
}

/// Additive causal model with `groups` rank-one blocks `a_k b_kᵀ / sqrt(K)` side by side.
///
/// The declared rank is `min(K, d1)` and `omega_r` is read off the realized spectrum.
pub fn causal_additive_instance(
    groups: usize,
    d1: usize,
    d2: usize,
    seed: u64,
) -> Result<(BanditInstance, AdditiveFeatureFactory)> {
    if groups == 0 {
        return Err(Error::InvalidArgument("need at least one group".into()));
    }
    let mut rng = rng_for(seed, 4);
    let mut theta = DMatrix::zeros(d1, d2 * groups);
    let scale = 1.0 / (groups as f64).sqrt();
    for g in 0..groups {
        let a = random_unit(d1, &mut rng);
        let b = random_unit(d2, &mut rng);
        theta
            .view_mut((0, g * d2), (d1, d2))
            .copy_from(&(&a * b.transpose() * scale));
    }
    let rank = numerical_rank(&theta, RANK_TOL).max(1);
    let sv = full_svd(&theta).singular_values;
    let omega = sv[rank - 1] * (1.0 - 1e-12);
    let inst = BanditInstance::new(theta, rank, omega, DEFAULT_SIGMA, LinkSpec::identity())?;
    Ok((inst, AdditiveFeatureFactory { groups, d1, d2 }))
}
