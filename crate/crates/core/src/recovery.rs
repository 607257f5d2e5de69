//! Stage-1 estimation: nuclear-norm penalized least squares and subspace extraction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{full_svd, nuclear_norm};
use crate::model::{rng_for, ArmMatrix, BanditInstance};

/// Proximal map of `τ‖·‖_nuc`: soft-thresholds the singular values of `m` by `τ`.
pub fn nuclear_prox(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau {tau} must be non-negative"
        )));
    }
    if tau == 0.0 {
        return Ok(m.clone());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let shrunk = svd.singular_values.map(|s| (s - tau).max(0.0));
    Ok(u * DMatrix::from_diagonal(&shrunk) * vt)
}

/// `(1/2)‖z − m‖_F² + τ‖z‖_nuc`.
pub fn prox_objective(z: &DMatrix<f64>, m: &DMatrix<f64>, tau: f64) -> f64 {
    0.5 * (z - m).norm_squared() + tau * nuclear_norm(z)
}

/// Rule for the nuclear-norm weight `λ` given the sample count `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum LambdaRule {
    /// `0.01 sqrt(1/n)`, the setting used in the experiments.
    #[default]
    Experiment,
    /// `λ² = C / (n min(d1, d2)) · log(n/δ) · log((d1+d2)/δ)`.
    Theoretical {
        c: f64,
        delta: f64,
    },
    Fixed(f64),
}

impl LambdaRule {
    pub fn value(&self, n: usize, d1: usize, d2: usize) -> f64 {
        let n = n.max(1) as f64;
        match *self {
            LambdaRule::Experiment => 0.01 * (1.0 / n).sqrt(),
            LambdaRule::Theoretical { c, delta } => {
                let sq = c / (n * d1.min(d2) as f64)
                    * (n / delta).ln().max(0.0)
                    * ((d1 + d2) as f64 / delta).ln();
                sq.max(0.0).sqrt()
            }
            LambdaRule::Fixed(v) => v,
        }
    }
}

/// Samples `(X_t, Y_t)` with the penalty weight, pre-reduced to `G = (1/n)Σ vec(X)vec(X)ᵀ`
/// and `c = (1/n)Σ Y vec(X)`.
#[derive(Debug, Clone)]
pub struct RecoveryProblem {
    d1: usize,
    d2: usize,
    n: usize,
    lambda: f64,
    gram: DMatrix<f64>,
    c: DVector<f64>,
    mean_y_sq: f64,
}

impl RecoveryProblem {
    pub fn new(xs: &[ArmMatrix], ys: &[f64], lambda: f64) -> Result<Self> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("recovery needs at least one sample".into()))?;
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                expected: xs.len(),
                found: ys.len(),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} must be non-negative"
            )));
        }
        let (d1, d2) = first.dims();
        let p = d1 * d2;
        let n = xs.len();
        let mut gram = DMatrix::zeros(p, p);
        let mut c = DVector::zeros(p);
        let mut mean_y_sq = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            if x.dims() != (d1, d2) {
                return Err(Error::DimensionMismatch {
                    expected: (d1, d2),
                    found: x.dims(),
                });
            }
            if !y.is_finite() {
                return Err(Error::InvalidArgument("rewards must be finite".into()));
            }
            let v = DVector::from_column_slice(x.vec());
            gram.ger(1.0, &v, &v, 1.0);
            c.axpy(y, &v, 1.0);
            mean_y_sq += y * y;
        }
        let inv_n = 1.0 / n as f64;
        Ok(RecoveryProblem {
            d1,
            d2,
            n,
            lambda,
            gram: gram * inv_n,
            c: c * inv_n,
            mean_y_sq: mean_y_sq * inv_n,
        })
    }

    pub fn with_rule(xs: &[ArmMatrix], ys: &[f64], rule: LambdaRule) -> Result<Self> {
        let (d1, d2) = xs.first().map(|x| x.dims()).unwrap_or((1, 1));
        Self::new(xs, ys, rule.value(xs.len(), d1, d2))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `(1/2n) Σ (Y − ⟨X, Θ⟩)²`.
    pub fn smooth_loss(&self, theta: &DMatrix<f64>) -> f64 {
        let v = DVector::from_column_slice(theta.as_slice());
        let gv = &self.gram * &v;
        0.5 * (v.dot(&gv) - 2.0 * self.c.dot(&v) + self.mean_y_sq).max(0.0)
    }

    pub fn objective(&self, theta: &DMatrix<f64>) -> f64 {
        self.smooth_loss(theta) + self.lambda * nuclear_norm(theta)
    }

    /// `−(1/n) Σ (Y − ⟨X, Θ⟩) X`.
    pub fn gradient(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let v = DVector::from_column_slice(theta.as_slice());
        let g = &self.gram * v - &self.c;
        DMatrix::from_column_slice(self.d1, self.d2, g.as_slice())
    }

    /// Largest eigenvalue of `G`, the Lipschitz constant of the smooth part's gradient.
    pub fn lipschitz(&self) -> f64 {
        self.gram
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step: 0.01,
            max_iters: 5000,
            tol: 1e-7,
        }
    }
}

impl SolverConfig {
    /// Default stopping rule with step `1/L`.
    pub fn lipschitz(problem: &RecoveryProblem) -> Self {
        SolverConfig {
            step: lipschitz_step(problem),
            ..Self::default()
        }
    }
}

/// `1/L` for the problem's smooth part (1 when the gradient is constant).
pub fn lipschitz_step(problem: &RecoveryProblem) -> f64 {
    let l = problem.lipschitz();
    if l > 0.0 {
        1.0 / l
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub theta: DMatrix<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    /// Step in force at the end, after any halvings.
    pub step: f64,
    /// Objective at the start and after every accepted iterate.
    pub objectives: Vec<f64>,
}

/// Proximal gradient from `Θ = 0`. A step that would raise the objective is halved and retried.
pub fn solve_nuclear_ls(problem: &RecoveryProblem, config: &SolverConfig) -> Result<SolveOutput> {
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step {} must be positive",
            config.step
        )));
    }
    let (d1, d2) = problem.dims();
    let mut theta = DMatrix::zeros(d1, d2);
    let mut obj = problem.objective(&theta);
    let mut objectives = vec![obj];
    let mut step = config.step;
    let mut converged = false;
    let mut iterations = 0;
    'outer: for it in 0..config.max_iters {
        let grad = problem.gradient(&theta);
        let (cand, cobj) = loop {
            let cand = nuclear_prox(&(&theta - &grad * step), step * problem.lambda)?;
            let cobj = problem.objective(&cand);
            if !cobj.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    step,
                });
            }
            if cobj <= obj + 1e-12 * obj.abs().max(1e-300) {
                break (cand, cobj);
            }
            step *= 0.5;
            if step < config.step * 1e-12 {
                converged = true;
                break 'outer;
            }
        };
        let change = (&cand - &theta).norm();
        theta = cand;
        obj = cobj;
        objectives.push(obj);
        iterations = it + 1;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(SolveOutput {
        theta,
        iterations,
        objective: obj,
        converged,
        step,
        objectives,
    })
}

/// Leading-`r` singular subspaces of an estimate and their orthogonal complements.
#[derive(Debug, Clone)]
pub struct RecoveredSubspace {
    pub theta_hat: DMatrix<f64>,
    pub u_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    pub u_perp: DMatrix<f64>,
    pub v_perp: DMatrix<f64>,
    pub singular_values: DVector<f64>,
}

impl RecoveredSubspace {
    pub fn rank(&self) -> usize {
        self.u_hat.ncols()
    }

    /// `[Û Û⊥]`.
    pub fn u_full(&self) -> DMatrix<f64> {
        hcat(&self.u_hat, &self.u_perp)
    }

    /// `[V̂ V̂⊥]`.
    pub fn v_full(&self) -> DMatrix<f64> {
        hcat(&self.v_hat, &self.v_perp)
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn extract_subspace(theta_hat: &DMatrix<f64>, r: usize) -> Result<RecoveredSubspace> {
    let (d1, d2) = theta_hat.shape();
    if r == 0 || r > d1.min(d2) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={}",
            d1.min(d2)
        )));
    }
    let svd = full_svd(theta_hat);
    Ok(RecoveredSubspace {
        theta_hat: theta_hat.clone(),
        u_hat: svd.u.columns(0, r).into_owned(),
        v_hat: svd.v.columns(0, r).into_owned(),
        u_perp: svd.u.columns(r, d1 - r).into_owned(),
        v_perp: svd.v.columns(r, d2 - r).into_owned(),
        singular_values: svd.singular_values,
    })
}

/// `‖Û⊥ᵀ U*‖_F · ‖V̂⊥ᵀ V*‖_F` with `U*`, `V*` the leading-`r` factors of `Θ*`.
pub fn subspace_error(rec: &RecoveredSubspace, instance: &BanditInstance) -> Result<f64> {
    if rec.theta_hat.shape() != instance.dims() {
        return Err(Error::DimensionMismatch {
            expected: instance.dims(),
            found: rec.theta_hat.shape(),
        });
    }
    let r = instance.rank();
    let svd = full_svd(instance.theta_star());
    let u_star = svd.u.columns(0, r);
    let v_star = svd.v.columns(0, r);
    Ok((rec.u_perp.transpose() * u_star).norm() * (rec.v_perp.transpose() * v_star).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RscReport {
    pub probes: usize,
    pub violations: usize,
    pub min_margin: f64,
}

/// Left minus right side of the restricted strong convexity inequality at `theta`.
pub fn rsc_margin(samples: &[ArmMatrix], theta: &DMatrix<f64>, c1: f64, c2: f64) -> Result<f64> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    let (d1, d2) = first.dims();
    if theta.shape() != (d1, d2) {
        return Err(Error::DimensionMismatch {
            expected: (d1, d2),
            found: theta.shape(),
        });
    }
    let n = samples.len() as f64;
    let lhs = samples.iter().map(|x| x.inner(theta).powi(2)).sum::<f64>() / n;
    let dd = (d1 * d2) as f64;
    let nuc = nuclear_norm(theta);
    let rhs = c1 / dd * theta.norm_squared() - c2 * (d1 + d2) as f64 / (n * dd) * nuc * nuc;
    Ok(lhs - rhs)
}

/// Probes the inequality with `n_probes` seeded unit-norm directions, alternating
/// random low-rank and dense draws. Diagnostic only.
pub fn rsc_check(
    samples: &[ArmMatrix],
    n_probes: usize,
    c1: f64,
    c2: f64,
    seed: u64,
) -> Result<RscReport> {
    if n_probes == 0 {
        return Err(Error::InvalidArgument("n_probes must be at least 1".into()));
    }
    let (d1, d2) = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples".into()))?
        .dims();
    let mut rng = rng_for(seed, 11);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for i in 0..n_probes {
        let theta = if i % 2 == 0 {
            let k = rng.random_range(1..=d1.min(d2));
            let a = DMatrix::from_fn(d1, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = DMatrix::from_fn(d2, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            a * b.transpose()
        } else {
            DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal))
        };
        let theta = &theta / theta.norm();
        let m = rsc_margin(samples, &theta, c1, c2)?;
        if m < 0.0 {
            violations += 1;
        }
        min_margin = min_margin.min(m);
    }
    Ok(RscReport {
        probes: n_probes,
        violations,
        min_margin,
    })
}

/// Serializable summary of one stage-1 recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub lambda: f64,
    pub iters: usize,
    pub objective: f64,
    pub frob_error: Option<f64>,
    pub subspace_error: Option<f64>,
}

impl RecoveryReport {
    pub fn new(
        problem: &RecoveryProblem,
        out: &SolveOutput,
        rec: &RecoveredSubspace,
        truth: Option<&BanditInstance>,
    ) -> Result<Self> {
        let (frob_error, subspace_error) = match truth {
            Some(inst) => (
                Some((&out.theta - inst.theta_star()).norm()),
                Some(subspace_error(rec, inst)?),
            ),
            None => (None, None),
        };
        Ok(RecoveryReport {
            lambda: problem.lambda(),
            iters: out.iterations,
            objective: out.objective,
            frob_error,
            subspace_error,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
