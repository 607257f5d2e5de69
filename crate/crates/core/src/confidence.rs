//! Confidence sets built from forecaster predictions, and optimistic arm scores.
//!
//! The exact set after `t` rounds is
//! `{Θ : ‖Θ‖_F² + Σ_s (ŷ_s − ⟨Θ, X_s⟩)² ≤ 1 + β}` in linear mode and
//! `{Θ : ‖Θ‖_F + Σ_s (ŷ_s − ⟨Θ, X_s⟩)² ≤ β^GLB}` in GLB mode. Arm selection works on
//! an enclosing ellipsoid centred at the ridge solution `θ̂ = V⁻¹ b`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inverse_pd, log_det_pd, quad_form, sherman_morrison_update};
use crate::model::{ArmMatrix, LinkSpec};

/// Rank-one updates between exact re-factorizations of `V`.
pub const REFRESH_EVERY: usize = 256;

fn check_budget(b_t: f64, delta: f64) -> Result<()> {
    if !(b_t >= 0.0 && b_t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "B_t {b_t} must be finite and non-negative"
        )));
    }
    if !(delta > 0.0 && delta <= 0.25) {
        return Err(Error::InvalidArgument(format!(
            "delta {delta} must lie in (0, 0.25]"
        )));
    }
    Ok(())
}

/// `1 + 2B + 32 log((sqrt(8) + sqrt(1 + B)) / δ)`.
pub fn beta_linear(b_t: f64, delta: f64) -> Result<f64> {
    check_budget(b_t, delta)?;
    Ok(1.0 + 2.0 * b_t + 32.0 * ((8f64.sqrt() + (1.0 + b_t).sqrt()) / delta).ln())
}

/// `2 + 4B/κ + (32R²/κ²) log((R sqrt(8/κ²) + sqrt(2B/κ + 1)) / δ)`.
pub fn beta_glb(b_t: f64, delta: f64, link: &LinkSpec) -> Result<f64> {
    check_budget(b_t, delta)?;
    let k = link.kappa_mu;
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(
            "link kappa_mu must be positive".into(),
        ));
    }
    let r = link.noise_scale;
    let arg = (r * (8.0 / (k * k)).sqrt() + (2.0 * b_t / k + 1.0).sqrt()) / delta;
    Ok(2.0 + 4.0 * b_t / k + 32.0 * r * r / (k * k) * arg.ln())
}

/// Running `V = I + Σ vec(X)vec(X)ᵀ`, `b = Σ ŷ vec(X)` and the ridge centre.
#[derive(Debug, Clone)]
pub struct ConversionState {
    d1: usize,
    d2: usize,
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    b: DVector<f64>,
    theta_hat: DVector<f64>,
    log_det: f64,
    round: usize,
}

impl ConversionState {
    pub fn new(d1: usize, d2: usize) -> Self {
        let p = d1 * d2;
        ConversionState {
            d1,
            d2,
            v: DMatrix::identity(p, p),
            v_inv: DMatrix::identity(p, p),
            b: DVector::zeros(p),
            theta_hat: DVector::zeros(p),
            log_det: 0.0,
            round: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn v_inv(&self) -> &DMatrix<f64> {
        &self.v_inv
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn theta_hat_vec(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn theta_hat(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d1, self.d2, self.theta_hat.as_slice())
    }

    /// `log det V`, tracked through the matrix determinant lemma.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn ingest(&mut self, x: &ArmMatrix, y_hat: f64) -> Result<()> {
        if x.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: x.dims(),
            });
        }
        if !y_hat.is_finite() {
            return Err(Error::InvalidArgument("prediction must be finite".into()));
        }
        let xv = DVector::from_column_slice(x.vec());
        self.v.ger(1.0, &xv, &xv, 1.0);
        self.b.axpy(y_hat, &xv, 1.0);
        self.round += 1;
        if self.round.is_multiple_of(REFRESH_EVERY) {
            self.refresh()?;
        } else {
            let q = sherman_morrison_update(&mut self.v_inv, x.vec());
            self.log_det += q.ln_1p();
            self.theta_hat = &self.v_inv * &self.b;
        }
        Ok(())
    }

    /// Recomputes `V⁻¹`, `θ̂` and `log det V` from `V` and `b`.
    pub fn refresh(&mut self) -> Result<()> {
        self.v_inv = inverse_pd(&self.v)?;
        self.log_det = log_det_pd(&self.v)?;
        self.theta_hat = &self.v_inv * &self.b;
        Ok(())
    }

    /// `(vec(Θ) − θ̂)ᵀ V (vec(Θ) − θ̂)`.
    pub fn mahalanobis_sq(&self, theta: &DMatrix<f64>) -> Result<f64> {
        if theta.shape() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: theta.shape(),
            });
        }
        let diff: Vec<f64> = theta
            .iter()
            .zip(self.theta_hat.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(quad_form(&self.v, &diff))
    }

    /// `⟨X, θ̂⟩ + sqrt(radius) ‖vec(X)‖_{V⁻¹}` without building a snapshot.
    pub fn ucb_score(&self, x: &ArmMatrix, radius: f64) -> Result<f64> {
        if x.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: x.dims(),
            });
        }
        Ok(ucb(&self.theta_hat, &self.v_inv, x.vec(), radius))
    }

    pub fn ellipsoid(&self, radius: f64) -> Result<EllipsoidSet> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius {radius} must be finite and non-negative"
            )));
        }
        Ok(EllipsoidSet {
            d1: self.d1,
            d2: self.d2,
            center: self.theta_hat.clone(),
            shape: self.v.clone(),
            shape_inv: self.v_inv.clone(),
            radius,
        })
    }
}

fn ucb(center: &DVector<f64>, shape_inv: &DMatrix<f64>, x: &[f64], radius: f64) -> f64 {
    let lin: f64 = center.iter().zip(x).map(|(a, b)| a * b).sum();
    lin + (radius * quad_form(shape_inv, x).max(0.0)).sqrt()
}

/// `{θ : (θ − c)ᵀ V (θ − c) ≤ radius}` over vectorized `d1×d2` matrices.
#[derive(Debug, Clone)]
pub struct EllipsoidSet {
    d1: usize,
    d2: usize,
    center: DVector<f64>,
    shape: DMatrix<f64>,
    shape_inv: DMatrix<f64>,
    radius: f64,
}

impl EllipsoidSet {
    pub fn new(
        d1: usize,
        d2: usize,
        center: DVector<f64>,
        shape: DMatrix<f64>,
        radius: f64,
    ) -> Result<Self> {
        let p = d1 * d2;
        if center.len() != p || shape.shape() != (p, p) {
            return Err(Error::LengthMismatch {
                expected: p,
                found: center.len(),
            });
        }
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius {radius} must be finite and non-negative"
            )));
        }
        let shape_inv = inverse_pd(&shape)?;
        Ok(EllipsoidSet {
            d1,
            d2,
            center,
            shape,
            shape_inv,
            radius,
        })
    }

    pub fn center(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d1, self.d2, self.center.as_slice())
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Exact maximum of `⟨X, Θ⟩` over the ellipsoid.
    pub fn ucb_score(&self, x: &ArmMatrix) -> Result<f64> {
        if x.dims() != (self.d1, self.d2) {
            return Err(Error::DimensionMismatch {
                expected: (self.d1, self.d2),
                found: x.dims(),
            });
        }
        Ok(ucb(&self.center, &self.shape_inv, x.vec(), self.radius))
    }

    pub fn contains(&self, theta: &DMatrix<f64>) -> bool {
        if theta.shape() != (self.d1, self.d2) {
            return false;
        }
        let diff: Vec<f64> = theta
            .iter()
            .zip(self.center.iter())
            .map(|(a, b)| a - b)
            .collect();
        quad_form(&self.shape, &diff) <= self.radius * (1.0 + 1e-12) + 1e-12
    }
}

fn residual_sum(theta: &DMatrix<f64>, xs: &[ArmMatrix], y_hats: &[f64]) -> Result<f64> {
    if xs.len() != y_hats.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            found: y_hats.len(),
        });
    }
    let mut s = 0.0;
    for (x, &yh) in xs.iter().zip(y_hats) {
        if x.dims() != theta.shape() {
            return Err(Error::DimensionMismatch {
                expected: theta.shape(),
                found: x.dims(),
            });
        }
        let d = yh - x.inner(theta);
        s += d * d;
    }
    Ok(s)
}

/// Literal membership in the linear-mode set: `‖Θ‖_F² + Σ (ŷ_s − ⟨Θ, X_s⟩)² ≤ 1 + β`.
pub fn contains_linear(
    theta: &DMatrix<f64>,
    xs: &[ArmMatrix],
    y_hats: &[f64],
    beta: f64,
) -> Result<bool> {
    Ok(theta.norm_squared() + residual_sum(theta, xs, y_hats)? <= 1.0 + beta)
}

/// Literal membership in the GLB-mode set: `‖Θ‖_F + Σ (ŷ_s − ⟨Θ, X_s⟩)² ≤ β`.
pub fn contains_glb(
    theta: &DMatrix<f64>,
    xs: &[ArmMatrix],
    y_hats: &[f64],
    beta: f64,
) -> Result<bool> {
    Ok(theta.norm() + residual_sum(theta, xs, y_hats)? <= beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rng_for, sample_unit_arm_set};
    use rand::Rng;

    #[test]
    fn beta_examples() {
        let b0 = beta_linear(0.0, 0.25).unwrap();
        assert!((b0 - 88.3199490423).abs() < 1e-9);
        assert!(beta_linear(1.0, 0.25).unwrap() > b0);
        let b10 = beta_linear(10.0, 0.01).unwrap();
        let exact = 21.0 + 32.0 * ((8f64.sqrt() + 11f64.sqrt()) / 0.01).ln();
        assert!((b10 - exact).abs() < 1e-12);
        assert!((b10 - 226.4661560742).abs() < 1e-9);
        let id = LinkSpec::identity();
        assert!((beta_glb(0.0, 0.25, &id).unwrap() - 89.3199490423).abs() < 1e-9);
        for b in [0.0f64, 0.7, 12.0] {
            let lit = 2.0 + 4.0 * b + 32.0 * ((8f64.sqrt() + (2.0 * b + 1.0).sqrt()) / 0.05).ln();
            assert!((beta_glb(b, 0.05, &id).unwrap() - lit).abs() < 1e-12);
        }
        let mut half = id;
        half.kappa_mu = 0.5;
        assert!(beta_glb(3.0, 0.05, &half).unwrap() > beta_glb(3.0, 0.05, &id).unwrap());
        assert!(beta_linear(-1.0, 0.1).is_err());
        assert!(beta_linear(1.0, 0.5).is_err());
    }

    #[test]
    fn ingest_examples() {
        let st = ConversionState::new(2, 2);
        assert_eq!(st.v(), &DMatrix::identity(4, 4));
        assert_eq!(st.theta_hat_vec().norm(), 0.0);
        let arms = sample_unit_arm_set(2, 2, 1, 3).unwrap();
        let x = &arms.arms()[0];
        let mut st = ConversionState::new(2, 2);
        st.ingest(x, 0.7).unwrap();
        let expect =
            DVector::from_column_slice(x.vec()) * (0.7 / (1.0 + x.frobenius_norm().powi(2)));
        assert!((st.theta_hat_vec() - expect).norm() < 1e-14);
    }

    #[test]
    fn incremental_matches_batch_across_refresh() {
        let arms = sample_unit_arm_set(2, 3, 7, 5).unwrap();
        let mut rng = rng_for(9, 0);
        let mut st = ConversionState::new(2, 3);
        let mut v = DMatrix::<f64>::identity(6, 6);
        let mut b = DVector::<f64>::zeros(6);
        for t in 0..600 {
            let x = &arms.arms()[t % 7];
            let yh: f64 = rng.random::<f64>() - 0.5;
            st.ingest(x, yh).unwrap();
            let xv = DVector::from_column_slice(x.vec());
            v += &xv * xv.transpose();
            b += xv * yh;
        }
        let theta = v.clone().cholesky().unwrap().solve(&b);
        assert!((st.theta_hat_vec() - &theta).norm() / theta.norm() < 1e-8);
        assert!((&v * st.theta_hat_vec() - &b).norm() / b.norm() < 1e-8);
        assert!((st.log_det() - log_det_pd(&v).unwrap()).abs() < 1e-8);
        let bound = 6.0 * (1.0 + 600.0 / 6.0f64).ln();
        assert!(st.log_det() <= bound);
    }

    #[test]
    fn ucb_examples() {
        let st = ConversionState::new(2, 2);
        let x = ArmMatrix::new(DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.0, 0.8])).unwrap();
        let set = st.ellipsoid(1.0).unwrap();
        assert!((set.ucb_score(&x).unwrap() - 1.0).abs() < 1e-15);
        let mut st = ConversionState::new(2, 2);
        st.ingest(&x, 0.5).unwrap();
        let set = st.ellipsoid(0.0).unwrap();
        let lin = x.inner(&st.theta_hat());
        assert!((set.ucb_score(&x).unwrap() - lin).abs() < 1e-15);
    }

    #[test]
    fn literal_membership() {
        let beta = 5.0;
        let theta = DMatrix::from_element(2, 2, 0.5);
        assert!(contains_linear(&theta, &[], &[], beta).unwrap());
        let big = DMatrix::from_element(2, 2, ((1.0 + beta + 0.1) / 4.0f64).sqrt());
        assert!(!contains_linear(&big, &[], &[], beta).unwrap());
        assert!(contains_glb(&theta, &[], &[], 1.0).unwrap());
        assert!(contains_linear(&theta, &[], &[0.1], beta).is_err());
    }
}
