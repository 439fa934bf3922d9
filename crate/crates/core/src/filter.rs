//! The optimal linear filter for a finite state observed through a field.
//!
//! ```text
//! x_{k+1}  = A x_k + w_k,            w_k ~ N(0, Q)
//! z_k(i)   = gamma(i) x_k + v_k(i),  E[v_k(i) v_j(i')^T] = R(i - i') [j = k]
//! ```
//!
//! Each step predicts, updates the covariance with the information matrix `S`,
//! and corrects the estimate with `P_k int f(i) (z_k(i) - gamma(i) x_{k|k-1}) di`.
//! The covariance path does not depend on the measurements, so it can be
//! computed ahead of time with [`covariance_trajectory`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gain::GainPrecomputation;
use crate::grid::{quadrature, GridSpec, RealField};
use crate::linalg::{is_positive_definite, relative_asymmetry, symmetrize, symmetrize_checked, SYMMETRY_TOLERANCE};
use crate::random_field::{FieldSample, StationaryKernel};

/// Dynamics, process noise and measurement model.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    gamma: RealField,
    kernel: Arc<dyn StationaryKernel>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, gamma: RealField, kernel: Arc<dyn StationaryKernel>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || q.shape() != (n, n) {
            return Err(Error::Shape(format!("A is {:?} and Q is {:?}", a.shape(), q.shape())));
        }
        if gamma.cols() != n || gamma.rows() != kernel.out_dim() {
            return Err(Error::Shape(format!(
                "gamma is {}x{} per point; expected {}x{n}",
                gamma.rows(),
                gamma.cols(),
                kernel.out_dim()
            )));
        }
        if !is_positive_definite(&q) {
            return Err(Error::InvalidModel("Q must be symmetric positive definite".into()));
        }
        if gamma.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("gamma has non-finite values".into()));
        }
        Ok(Self { a, q, gamma, kernel })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn gamma(&self) -> &RealField {
        &self.gamma
    }

    pub fn kernel(&self) -> &dyn StationaryKernel {
        self.kernel.as_ref()
    }

    pub fn kernel_arc(&self) -> Arc<dyn StationaryKernel> {
        Arc::clone(&self.kernel)
    }

    pub fn grid(&self) -> &GridSpec {
        self.gamma.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.gamma.rows()
    }

    /// Same model with a different measurement kernel.
    pub fn with_gamma(&self, gamma: RealField) -> Result<Self> {
        Self::new(self.a.clone(), self.q.clone(), gamma, Arc::clone(&self.kernel))
    }
}

/// Estimate after the update at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub k: usize,
    pub x_hat: DVector<f64>,
    /// Posterior covariance `P_k`.
    pub p: DMatrix<f64>,
    /// Prior covariance `P_{k|k-1}` used in the last update (equal to `p` at k = 0).
    pub p_prior: DMatrix<f64>,
}

impl FilterState {
    pub fn initial(x_hat: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        if p0.shape() != (x_hat.len(), x_hat.len()) {
            return Err(Error::Shape(format!("P0 is {:?} for a state of length {}", p0.shape(), x_hat.len())));
        }
        let p = symmetrize_checked(p0, SYMMETRY_TOLERANCE)?;
        Ok(Self { k: 0, x_hat, p_prior: p.clone(), p })
    }
}

/// Prior estimate for step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub k: usize,
    pub x_prior: DVector<f64>,
    pub p_prior: DMatrix<f64>,
}

/// `A P A^T + Q`, symmetrized.
pub fn predict_covariance(p_post: &DMatrix<f64>, a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(a * p_post * a.transpose() + q)
}

/// `x_{k|k-1} = A x_{k-1}`, `P_{k|k-1} = A P_{k-1} A^T + Q`.
pub fn predict(state: &FilterState, model: &SystemModel) -> Prediction {
    Prediction {
        k: state.k + 1,
        x_prior: model.a() * &state.x_hat,
        p_prior: predict_covariance(&state.p, model.a(), model.q()),
    }
}

/// `P = P^- (I + S P^-)^-1`, symmetrized after an asymmetry check.
pub fn update_covariance(p_prior: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p_prior.nrows();
    if !p_prior.is_square() || s.shape() != (n, n) {
        return Err(Error::Shape(format!("P is {:?}, S is {:?}", p_prior.shape(), s.shape())));
    }
    // P (I + S P)^-1 = ((I + S P)^T \ P^T)^T = ((I + P S) \ P)^T for symmetric P, S
    let lhs = DMatrix::identity(n, n) + p_prior * s;
    let solved = lhs.lu().solve(p_prior).ok_or(Error::Singular("I + S P_prior"))?;
    let p = solved.transpose();
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("I + S P_prior"));
    }
    symmetrize_checked(p, 1e3 * SYMMETRY_TOLERANCE)
}

/// `kappa_k(i) = P_k f(i)`.
pub fn gain_function(p_post: &DMatrix<f64>, precomp: &GainPrecomputation) -> Result<RealField> {
    precomp.f().left_mul(p_post)
}

/// `s(i) = z(i) - gamma(i) x`.
pub fn innovation(z: &FieldSample, gamma: &RealField, x: &DVector<f64>) -> Result<RealField> {
    z.check_same_grid(gamma)?;
    if z.rows() != gamma.rows() || z.cols() != 1 || x.len() != gamma.cols() {
        return Err(Error::Shape("measurement, gamma and state disagree in shape".into()));
    }
    let (m, n) = (gamma.rows(), gamma.cols());
    let mut s = z.clone();
    for p in 0..gamma.grid().len() {
        let g = gamma.at(p);
        for (r, v) in s.at_mut(p).iter_mut().enumerate() {
            *v -= (0..n).map(|c| g[r * n + c] * x[c]).sum::<f64>();
        }
    }
    debug_assert_eq!(s.rows(), m);
    Ok(s)
}

/// `int f(i) (z(i) - gamma(i) x) di` in one pass, without materializing the innovation.
fn integrate_innovation(
    f_weighted: &RealField,
    z: &FieldSample,
    gamma: &RealField,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    z.check_same_grid(gamma)?;
    let (m, n) = (gamma.rows(), gamma.cols());
    if z.rows() != m || z.cols() != 1 || x.len() != n || f_weighted.rows() != n || f_weighted.cols() != m {
        return Err(Error::Shape("measurement, gamma and state disagree in shape".into()));
    }
    let mut acc = DVector::zeros(n);
    let mut innov = vec![0.0; m];
    let points = f_weighted.data().chunks(n * m).zip(gamma.data().chunks(m * n)).zip(z.data().chunks(m));
    for ((fw, g), zp) in points {
        for (r, v) in innov.iter_mut().enumerate() {
            *v = zp[r] - (0..n).map(|c| g[r * n + c] * x[c]).sum::<f64>();
        }
        for (i, a) in acc.iter_mut().enumerate() {
            *a += (0..m).map(|r| fw[i * m + r] * innov[r]).sum::<f64>();
        }
    }
    Ok(acc)
}

/// Corrects a prediction with a measurement, given the posterior covariance of step `k`.
pub fn update_state(
    prediction: &Prediction,
    p_post: &DMatrix<f64>,
    z: &FieldSample,
    model: &SystemModel,
    precomp: &GainPrecomputation,
) -> Result<FilterState> {
    if z.grid() != model.grid() {
        return Err(Error::Shape("measurement is not on the model grid".into()));
    }
    let correction = p_post * integrate_innovation(precomp.f_weighted(), z, model.gamma(), &prediction.x_prior)?;
    Ok(FilterState {
        k: prediction.k,
        x_hat: &prediction.x_prior + correction.column(0),
        p: p_post.clone(),
        p_prior: prediction.p_prior.clone(),
    })
}

/// Full step: predict, update covariance, correct.
pub fn step(
    state: &FilterState,
    z: &FieldSample,
    model: &SystemModel,
    precomp: &GainPrecomputation,
) -> Result<FilterState> {
    let prediction = predict(state, model);
    let p_post = update_covariance(&prediction.p_prior, precomp.s())?;
    update_state(&prediction, &p_post, z, model, precomp)
}

/// Covariance pair at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStep {
    pub p_prior: DMatrix<f64>,
    pub p_post: DMatrix<f64>,
}

/// `horizon + 1` covariance pairs; entry 0 holds `(P0, P0)`.
pub fn covariance_trajectory(
    p0: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    s: &DMatrix<f64>,
    horizon: usize,
) -> Result<Vec<CovarianceStep>> {
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(CovarianceStep { p_prior: p0.clone(), p_post: p0.clone() });
    for _ in 0..horizon {
        let p_prior = predict_covariance(&out.last().unwrap().p_post, a, q);
        let p_post = update_covariance(&p_prior, s)?;
        out.push(CovarianceStep { p_prior, p_post });
    }
    Ok(out)
}

/// Filters a measurement sequence; the result starts with `init`.
pub fn run_filter(
    model: &SystemModel,
    precomp: &GainPrecomputation,
    measurements: &[FieldSample],
    init: FilterState,
) -> Result<Vec<FilterState>> {
    if measurements.is_empty() {
        return Err(Error::InvalidModel("no measurements to filter".into()));
    }
    let covs = covariance_trajectory(&init.p, model.a(), model.q(), precomp.s(), measurements.len())?;
    let mut states = Vec::with_capacity(measurements.len() + 1);
    states.push(init);
    for (z, cov) in measurements.iter().zip(&covs[1..]) {
        let prediction = predict(states.last().unwrap(), model);
        states.push(update_state(&prediction, &cov.p_post, z, model, precomp)?);
    }
    Ok(states)
}

/// `(I - int kappa gamma di) P^-`, the posterior written through the gain.
pub fn posterior_via_gain(kappa: &RealField, gamma: &RealField, p_prior: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p_prior.nrows();
    let kg = quadrature(&kappa.pointwise_product(gamma)?);
    let p = (DMatrix::identity(n, n) - kg) * p_prior;
    let asym = relative_asymmetry(&p);
    if !asym.is_finite() {
        return Err(Error::Singular("posterior via gain"));
    }
    Ok(p)
}
