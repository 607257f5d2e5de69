//! LowOFUL with split regularization, OFUL as its isotropic case, and the two-stage
//! LowESTR pipeline (explore, recover the subspaces, then refine with LowOFUL).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{full_svd, inverse_pd, log_det_pd, sherman_morrison_update};
use crate::model::{rng_for, ArmMatrix, ArmSet, BanditInstance};
use crate::recovery::{
    extract_subspace, lipschitz_step, solve_nuclear_ls, LambdaRule, RecoveredSubspace,
    RecoveryProblem, RecoveryReport, SolverConfig,
};
use crate::trace::RegretTrace;

/// Rounds between exact re-factorizations of `V_t`.
const REFRESH_EVERY: usize = 256;

/// Reward noise stream; stage-1 sampling uses its own stream.
pub const REWARD_STREAM: u64 = 1;
pub const EXPLORE_STREAM: u64 = 2;

/// `k = r(d1 + d2 − r)`, the number of coordinates aligned with the estimated subspaces.
pub fn low_dimension(d1: usize, d2: usize, r: usize) -> usize {
    r * (d1 + d2) - r * r
}

/// Orthogonal `[Û Û⊥]` and `[V̂ V̂⊥]` used to rotate arm features.
#[derive(Debug, Clone)]
pub struct RotationMap {
    u_full: DMatrix<f64>,
    v_full: DMatrix<f64>,
    r: usize,
}

impl RotationMap {
    pub fn new(u_full: DMatrix<f64>, v_full: DMatrix<f64>, r: usize) -> Result<Self> {
        for m in [&u_full, &v_full] {
            let n = m.nrows();
            if m.ncols() != n {
                return Err(Error::InvalidArgument(
                    "rotation factors must be square".into(),
                ));
            }
            if (m.transpose() * m - DMatrix::identity(n, n)).amax() > 1e-10 {
                return Err(Error::InvalidArgument(
                    "rotation factors must be orthogonal".into(),
                ));
            }
        }
        if r > u_full.nrows().min(v_full.nrows()) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} exceeds the dimensions"
            )));
        }
        Ok(RotationMap { u_full, v_full, r })
    }

    pub fn identity(d1: usize, d2: usize, r: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d1, d1), DMatrix::identity(d2, d2), r)
    }

    pub fn from_subspace(rec: &RecoveredSubspace) -> Result<Self> {
        Self::new(rec.u_full(), rec.v_full(), rec.rank())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.u_full.nrows(), self.v_full.nrows())
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn low_dimension(&self) -> usize {
        let (d1, d2) = self.dims();
        low_dimension(d1, d2, self.r)
    }

    /// `X′ = Uᵀ X V`, vectorized block by block so the complementary block comes last.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (d1, d2) = self.dims();
        if x.shape() != (d1, d2) {
            return Err(Error::DimensionMismatch {
                expected: (d1, d2),
                found: x.shape(),
            });
        }
        let xr = self.u_full.transpose() * x * &self.v_full;
        let r = self.r;
        let mut out = Vec::with_capacity(d1 * d2);
        for (rows, cols) in [(0..r, 0..r), (r..d1, 0..r), (0..r, r..d2), (r..d1, r..d2)] {
            for j in cols {
                for i in rows.clone() {
                    out.push(xr[(i, j)]);
                }
            }
        }
        Ok(DVector::from_vec(out))
    }
}

pub fn rotate_and_vectorize(x: &ArmMatrix, map: &RotationMap) -> Result<DVector<f64>> {
    map.apply(x.matrix())
}

/// Rotated feature vectors of every arm, as columns of a `d1·d2 × K` matrix.
pub fn rotate_arm_set(arms: &ArmSet, map: &RotationMap) -> Result<DMatrix<f64>> {
    let cols = arms
        .arms()
        .iter()
        .map(|a| rotate_and_vectorize(a, map))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowOfulParams {
    pub lambda: f64,
    pub lambda_perp: f64,
    pub b: f64,
    pub b_perp: f64,
    pub delta: f64,
    pub k: usize,
}

impl LowOfulParams {
    /// Isotropic OFUL: `λ⊥ = λ` and `B⊥ = B`, i.e. the usual OFUL radius with `S = 2B`.
    pub fn oful(lambda: f64, b: f64, delta: f64, dim: usize) -> Self {
        LowOfulParams {
            lambda,
            lambda_perp: lambda,
            b,
            b_perp: b,
            delta,
            k: dim,
        }
    }

    /// Stage-2 settings after `t1` exploration rounds out of `horizon`.
    #[allow(clippy::too_many_arguments)]
    pub fn lowestr(
        d1: usize,
        d2: usize,
        r: usize,
        horizon: usize,
        t1: usize,
        sigma: f64,
        omega_r: f64,
        delta: f64,
    ) -> Self {
        let k = low_dimension(d1, d2, r);
        let t2 = (horizon - t1) as f64;
        let lambda = 1.0;
        LowOfulParams {
            lambda,
            lambda_perp: t2 / (k as f64 * (1.0 + t2 / lambda).ln()),
            b: 1.0,
            b_perp: sigma * sigma * ((d1 + d2) as f64).powi(3) * r as f64
                / (t1 as f64 * omega_r * omega_r),
            delta,
            k,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LowOfulAgent {
    params: LowOfulParams,
    lambda_diag: DVector<f64>,
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    xty: DVector<f64>,
    theta_hat: DVector<f64>,
    log_det_v: f64,
    log_det_lambda: f64,
    round: usize,
}

impl LowOfulAgent {
    pub fn new(dim: usize, params: LowOfulParams) -> Result<Self> {
        if dim == 0 || params.k > dim {
            return Err(Error::InvalidArgument(format!(
                "k {} must not exceed dimension {dim}",
                params.k
            )));
        }
        if !(params.lambda > 0.0 && params.lambda_perp > 0.0) {
            return Err(Error::InvalidArgument(
                "regularizers must be positive".into(),
            ));
        }
        if !(params.b >= 0.0 && params.b_perp >= 0.0) {
            return Err(Error::InvalidArgument(
                "norm bounds must be non-negative".into(),
            ));
        }
        if !(params.delta > 0.0 && params.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta {} must lie in (0, 1)",
                params.delta
            )));
        }
        let lambda_diag = DVector::from_fn(dim, |i, _| {
            if i < params.k {
                params.lambda
            } else {
                params.lambda_perp
            }
        });
        let log_det_lambda = lambda_diag.iter().map(|x| x.ln()).sum();
        Ok(LowOfulAgent {
            params,
            v: DMatrix::from_diagonal(&lambda_diag),
            v_inv: DMatrix::from_diagonal(&lambda_diag.map(|x| 1.0 / x)),
            lambda_diag,
            xty: DVector::zeros(dim),
            theta_hat: DVector::zeros(dim),
            log_det_v: log_det_lambda,
            log_det_lambda,
            round: 0,
        })
    }

    pub fn params(&self) -> &LowOfulParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.lambda_diag.len()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn lambda_diag(&self) -> &DVector<f64> {
        &self.lambda_diag
    }

    /// `log |V_t| − log |Λ|`.
    pub fn log_det_ratio(&self) -> f64 {
        self.log_det_v - self.log_det_lambda
    }

    /// `β_t` with `sqrt(β_t) = sqrt(log(|V_t| / (|Λ| δ²))) + sqrt(λ) B + sqrt(λ⊥) B⊥`.
    pub fn beta(&self) -> f64 {
        let p = &self.params;
        let inner = (self.log_det_ratio() - 2.0 * p.delta.ln()).max(0.0);
        let s = inner.sqrt() + p.lambda.sqrt() * p.b + p.lambda_perp.sqrt() * p.b_perp;
        s * s
    }

    /// Index maximizing `⟨a, θ̂⟩ + sqrt(β) ‖a‖_{V⁻¹}` over the columns of `arms`; ties go low.
    pub fn select(&self, arms: &DMatrix<f64>) -> Result<usize> {
        if arms.ncols() == 0 {
            return Err(Error::EmptyArmSet);
        }
        if arms.nrows() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: arms.nrows(),
            });
        }
        let sb = self.beta().sqrt();
        let w = &self.v_inv * arms;
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..arms.ncols() {
            let a = arms.column(j);
            let score = a.dot(&self.theta_hat) + sb * a.dot(&w.column(j)).max(0.0).sqrt();
            if score > best.1 {
                best = (j, score);
            }
        }
        Ok(best.0)
    }

    pub fn update(&mut self, a: &[f64], y: f64) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: a.len(),
            });
        }
        if !y.is_finite() {
            return Err(Error::InvalidArgument("reward must be finite".into()));
        }
        let av = DVector::from_column_slice(a);
        self.v.ger(1.0, &av, &av, 1.0);
        self.xty.axpy(y, &av, 1.0);
        self.round += 1;
        if self.round.is_multiple_of(REFRESH_EVERY) {
            self.v_inv = inverse_pd(&self.v)?;
            self.log_det_v = log_det_pd(&self.v)?;
        } else {
            let q = sherman_morrison_update(&mut self.v_inv, a);
            self.log_det_v += q.ln_1p();
        }
        self.theta_hat = &self.v_inv * &self.xty;
        Ok(())
    }

    /// One round: choose, collect the reward for the chosen column, update.
    pub fn step(
        &mut self,
        arms: &DMatrix<f64>,
        mut reward: impl FnMut(usize) -> Result<f64>,
    ) -> Result<usize> {
        let i = self.select(arms)?;
        let y = reward(i)?;
        let a: Vec<f64> = arms.column(i).iter().copied().collect();
        self.update(&a, y)?;
        Ok(i)
    }
}

/// Exploration length from the regret bound, `(d1+d2)^{3/2} sqrt(rT) / ω_r`.
pub fn t1_theorem4(d1: usize, d2: usize, r: usize, horizon: usize, omega_r: f64) -> f64 {
    ((d1 + d2) as f64).powf(1.5) * ((r * horizon) as f64).sqrt() / omega_r
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowEstrConfig {
    pub horizon: usize,
    pub t1: usize,
    pub rank: usize,
    pub omega_r: f64,
    pub sigma: f64,
    pub delta: f64,
    pub lambda: LambdaRule,
    pub solver: SolverConfig,
    /// Replace `solver.step` with `1/L` from the stage-1 Gram matrix.
    pub lipschitz_step: bool,
    pub seed: u64,
}

impl LowEstrConfig {
    pub fn new(
        horizon: usize,
        t1: usize,
        rank: usize,
        omega_r: f64,
        sigma: f64,
        delta: f64,
        seed: u64,
    ) -> Self {
        LowEstrConfig {
            horizon,
            t1,
            rank,
            omega_r,
            sigma,
            delta,
            lambda: LambdaRule::Experiment,
            solver: SolverConfig::default(),
            lipschitz_step: false,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LowEstrOutcome {
    pub trace: RegretTrace,
    pub recovery: RecoveryReport,
    pub params: LowOfulParams,
    pub subspace: RecoveredSubspace,
}

/// Runs LowOFUL for `rounds` rounds on pre-rotated arms, appending regret to `trace`.
fn run_stage2<R: Rng>(
    agent: &mut LowOfulAgent,
    rotated: &DMatrix<f64>,
    arms: &ArmSet,
    instance: &BanditInstance,
    rounds: usize,
    rng: &mut R,
    trace: &mut RegretTrace,
) -> Result<()> {
    let regrets = regret_table(instance, arms)?;
    for _ in 0..rounds {
        let i = agent.step(rotated, |i| instance.pull(&arms.arms()[i], rng))?;
        trace.push(regrets[i]);
    }
    Ok(())
}

fn regret_table(instance: &BanditInstance, arms: &ArmSet) -> Result<Vec<f64>> {
    let means = instance.mean_rewards(arms)?;
    let (_, best) = instance.optimal_value(arms)?;
    Ok(means.iter().map(|m| (best - m).max(0.0)).collect())
}

/// Two-stage LowESTR; regret counts both stages.
pub fn lowestr_run(
    instance: &BanditInstance,
    arms: &ArmSet,
    config: &LowEstrConfig,
    run_id: usize,
) -> Result<LowEstrOutcome> {
    let (d1, d2) = instance.dims();
    if config.t1 == 0 || config.t1 >= config.horizon {
        return Err(Error::InvalidArgument(format!(
            "stage-1 length {} must lie in 1..{}",
            config.t1, config.horizon
        )));
    }
    if arms.dims() != (d1, d2) {
        return Err(Error::DimensionMismatch {
            expected: (d1, d2),
            found: arms.dims(),
        });
    }
    let mut trace = RegretTrace::with_capacity("lowestr", run_id, config.seed, config.horizon);
    let mut noise = rng_for(config.seed, REWARD_STREAM);
    let mut explore = rng_for(config.seed, EXPLORE_STREAM);
    let regrets = regret_table(instance, arms)?;

    let mut xs = Vec::with_capacity(config.t1);
    let mut ys = Vec::with_capacity(config.t1);
    for _ in 0..config.t1 {
        let i = explore.random_range(0..arms.len());
        let x = arms.arms()[i].clone();
        ys.push(instance.pull(&x, &mut noise)?);
        xs.push(x);
        trace.push(regrets[i]);
    }
    let problem = RecoveryProblem::with_rule(&xs, &ys, config.lambda)?;
    let solver = if config.lipschitz_step {
        SolverConfig {
            step: lipschitz_step(&problem),
            ..config.solver
        }
    } else {
        config.solver
    };
    let solved = solve_nuclear_ls(&problem, &solver)?;
    let subspace = extract_subspace(&solved.theta, config.rank)?;
    let recovery = RecoveryReport::new(&problem, &solved, &subspace, Some(instance))?;

    let map = RotationMap::from_subspace(&subspace)?;
    let rotated = rotate_arm_set(arms, &map)?;
    let params = LowOfulParams::lowestr(
        d1,
        d2,
        config.rank,
        config.horizon,
        config.t1,
        config.sigma,
        config.omega_r,
        config.delta,
    );
    let mut agent = LowOfulAgent::new(d1 * d2, params)?;
    run_stage2(
        &mut agent,
        &rotated,
        arms,
        instance,
        config.horizon - config.t1,
        &mut noise,
        &mut trace,
    )?;
    Ok(LowEstrOutcome {
        trace,
        recovery,
        params,
        subspace,
    })
}

/// Isotropic OFUL on the plainly vectorized arms.
#[allow(clippy::too_many_arguments)]
pub fn oful_run(
    instance: &BanditInstance,
    arms: &ArmSet,
    horizon: usize,
    lambda: f64,
    b: f64,
    delta: f64,
    seed: u64,
    run_id: usize,
) -> Result<RegretTrace> {
    let (d1, d2) = instance.dims();
    let map = RotationMap::identity(d1, d2, d1.min(d2))?;
    let rotated = rotate_arm_set(arms, &map)?;
    let mut agent = LowOfulAgent::new(d1 * d2, LowOfulParams::oful(lambda, b, delta, d1 * d2))?;
    let mut noise = rng_for(seed, REWARD_STREAM);
    let mut trace = RegretTrace::with_capacity("oful", run_id, seed, horizon);
    run_stage2(
        &mut agent, &rotated, arms, instance, horizon, &mut noise, &mut trace,
    )?;
    Ok(trace)
}

/// LowOFUL over all `horizon` rounds with the true subspaces of `Θ*` (`B⊥ = 0`).
pub fn lowoful_oracle_run(
    instance: &BanditInstance,
    arms: &ArmSet,
    horizon: usize,
    delta: f64,
    seed: u64,
    run_id: usize,
) -> Result<RegretTrace> {
    let (d1, d2) = instance.dims();
    let r = instance.rank();
    let svd = full_svd(instance.theta_star());
    let map = RotationMap::new(svd.u, svd.v, r)?;
    let rotated = rotate_arm_set(arms, &map)?;
    let k = low_dimension(d1, d2, r);
    let t = horizon as f64;
    let params = LowOfulParams {
        lambda: 1.0,
        lambda_perp: t / (k as f64 * (1.0 + t).ln()),
        b: 1.0,
        b_perp: 0.0,
        delta,
        k,
    };
    let mut agent = LowOfulAgent::new(d1 * d2, params)?;
    let mut noise = rng_for(seed, REWARD_STREAM);
    let mut trace = RegretTrace::with_capacity("lowoful", run_id, seed, horizon);
    run_stage2(
        &mut agent, &rotated, arms, instance, horizon, &mut noise, &mut trace,
    )?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_diag_instance, sample_unit_arm_set};

    #[test]
    fn block_order_identity_2x2() {
        let map = RotationMap::identity(2, 2, 1).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let v = map.apply(&x).unwrap();
        assert_eq!(v.as_slice(), &[0.1, 0.3, 0.2, 0.4]);
    }

    #[test]
    fn k_for_experiment_setting() {
        assert_eq!(low_dimension(10, 10, 3), 51);
        let p = LowOfulParams::lowestr(10, 10, 3, 3000, 200, 0.01, 0.5, 0.01);
        assert_eq!(p.k, 51);
        assert!((p.b_perp - 0.048).abs() < 1e-12);
        assert!((p.lambda_perp - 2800.0 / (51.0 * 2801f64.ln())).abs() < 1e-12);
        assert!((p.lambda_perp - 6.91).abs() < 0.01);
    }

    #[test]
    fn beta_at_start() {
        let agent = LowOfulAgent::new(4, LowOfulParams::oful(1.0, 1.0, 0.01, 4)).unwrap();
        let sb = agent.beta().sqrt();
        assert!((sb - ((2.0 * 100f64.ln()).sqrt() + 2.0)).abs() < 1e-12);
        let p = LowOfulParams {
            b_perp: 0.0,
            ..LowOfulParams::oful(1.0, 1.0, 0.01, 4)
        };
        let sb = LowOfulAgent::new(4, p).unwrap().beta().sqrt();
        assert!((sb - 4.035).abs() < 1e-3);
    }

    #[test]
    fn ridge_matches_batch_and_beta_grows() {
        let p = LowOfulParams {
            lambda: 1.0,
            lambda_perp: 3.0,
            b: 1.0,
            b_perp: 0.2,
            delta: 0.05,
            k: 2,
        };
        let mut agent = LowOfulAgent::new(4, p).unwrap();
        let arms = sample_unit_arm_set(2, 2, 6, 1).unwrap();
        let map = RotationMap::identity(2, 2, 1).unwrap();
        let rot = rotate_arm_set(&arms, &map).unwrap();
        let mut a_rows = Vec::new();
        let mut ys = Vec::new();
        let mut prev = agent.beta();
        for t in 0..5 {
            let y = 0.1 * t as f64 - 0.2;
            let i = agent.step(&rot, |_| Ok(y)).unwrap();
            a_rows.push(rot.column(i).into_owned());
            ys.push(y);
            assert!(agent.beta() >= prev - 1e-12);
            prev = agent.beta();
        }
        let mut v = DMatrix::from_diagonal(agent.lambda_diag());
        let mut aty = DVector::zeros(4);
        for (a, y) in a_rows.iter().zip(&ys) {
            v += a * a.transpose();
            aty += a * *y;
        }
        let batch = v.cholesky().unwrap().solve(&aty);
        assert!((agent.theta_hat() - batch).norm() < 1e-8);
    }

    #[test]
    fn lowestr_is_deterministic() {
        let inst = make_diag_instance(3, 3, 1, 0.5)
            .unwrap()
            .with_sigma(0.01)
            .unwrap();
        let arms = sample_unit_arm_set(3, 3, 20, 4).unwrap();
        let cfg = LowEstrConfig::new(150, 40, 1, 0.5, 0.01, 0.01, 4);
        let a = lowestr_run(&inst, &arms, &cfg, 0).unwrap();
        let b = lowestr_run(&inst, &arms, &cfg, 0).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 150);
        assert!(lowestr_run(&inst, &arms, &LowEstrConfig { t1: 150, ..cfg }, 0).is_err());
    }

    #[test]
    fn t1_helper_monotone() {
        assert!(t1_theorem4(10, 10, 3, 3000, 0.2) > t1_theorem4(10, 10, 3, 3000, 0.5));
        assert!(t1_theorem4(10, 10, 3, 4000, 0.5) > t1_theorem4(10, 10, 3, 3000, 0.5));
    }
}
