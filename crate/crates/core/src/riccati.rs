//! Discrete-time algebraic Riccati equation in the square-root form
//!
//! ```text
//! P' = A P A^T - A P G (I + G^T P G)^-1 G^T P A^T + Q
//! ```
//!
//! together with the spectral-radius and PBH rank tests for its preconditions.

use nalgebra::{DMatrix, SVD};
use rustfft::num_complex::Complex64;

use crate::error::{Assumption, Error, Result};
use crate::filter::update_covariance;
use crate::linalg::{is_positive_definite, max_abs_diff, relative_asymmetry, symmetrize, SYMMETRY_TOLERANCE};

/// Relative singular-value threshold of the PBH rank test.
pub const PBH_RANK_TOLERANCE: f64 = 1e-10;

/// Eigenvalues with modulus above `1 - UNIT_CIRCLE_SLACK` count as unstable.
const UNIT_CIRCLE_SLACK: f64 = 1e-10;

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Data `(A, G, Q)` of the Riccati recursion; `G` is the principal square root
/// of the information matrix `S`.
#[derive(Debug, Clone)]
pub struct DareProblem {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl DareProblem {
    pub fn new(a: DMatrix<f64>, g: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || g.shape() != (n, n) || q.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "A {:?}, G {:?}, Q {:?} must all be {n}x{n}",
                a.shape(),
                g.shape(),
                q.shape()
            )));
        }
        if !is_positive_definite(&q) {
            return Err(Error::InvalidModel("Q must be symmetric positive definite".into()));
        }
        let asymmetry = relative_asymmetry(&g);
        if asymmetry > SYMMETRY_TOLERANCE {
            return Err(Error::Asymmetric { asymmetry, tolerance: SYMMETRY_TOLERANCE });
        }
        let s = symmetrize(&g * &g);
        Ok(Self { a, g, q, s })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `S = G G`.
    pub fn information(&self) -> &DMatrix<f64> {
        &self.s
    }
}

/// Converged prior/posterior covariances.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub p_prior_inf: DMatrix<f64>,
    pub p_post_inf: DMatrix<f64>,
    pub iterations: usize,
    /// `max |step(P) - P|` at the returned solution.
    pub residual: f64,
    /// `rho((I - P_post S) A)`.
    pub closed_loop_radius: f64,
    /// Entrywise max change of every iteration, in order.
    pub changes: Vec<f64>,
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().fold(0.0f64, |r, l| r.max(l.norm()))
}

fn numerical_rank(m: &DMatrix<Complex64>) -> usize {
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > PBH_RANK_TOLERANCE * max).count()
}

/// PBH test: `rank [A - lambda I | B] = n` for every eigenvalue with `|lambda| >= 1`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    assert!(a.is_square() && b.nrows() == n, "incompatible shapes for stabilizability");
    let p = b.ncols();
    a.complex_eigenvalues()
        .iter()
        .filter(|l| l.norm() >= 1.0 - UNIT_CIRCLE_SLACK)
        .all(|&lambda| {
            let mut pencil = DMatrix::<Complex64>::zeros(n, n + p);
            for r in 0..n {
                for c in 0..n {
                    pencil[(r, c)] = Complex64::new(a[(r, c)], 0.0);
                }
                pencil[(r, r)] -= lambda;
                for c in 0..p {
                    pencil[(r, n + c)] = Complex64::new(b[(r, c)], 0.0);
                }
            }
            numerical_rank(&pencil) == n
        })
}

/// `(A, B)` detectable iff `(A^T, B)` stabilizable.
pub fn is_detectable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    is_stabilizable(&a.transpose(), b)
}

/// One step of the square-root-form recursion.
pub fn riccati_step(p_prior: &DMatrix<f64>, problem: &DareProblem) -> DMatrix<f64> {
    let (a, g, q) = (&problem.a, &problem.g, &problem.q);
    let n = a.nrows();
    let ap = a * p_prior;
    let pg = p_prior * g;
    let inner = DMatrix::identity(n, n) + g.transpose() * &pg;
    let correction = match inner.clone().cholesky() {
        Some(ch) => &ap * g * ch.solve(&(pg.transpose() * a.transpose())),
        None => {
            let inv = inner.try_inverse().expect("I + G^T P G is invertible for PSD P");
            &ap * g * inv * pg.transpose() * a.transpose()
        }
    };
    symmetrize(&ap * a.transpose() - correction + q)
}

/// Fixed-point iteration from `P_0 = Q`.
pub fn solve_dare(problem: &DareProblem, tol: f64, max_iter: usize) -> Result<SteadyState> {
    check_preconditions(problem)?;
    solve_dare_from(problem, problem.q.clone(), tol, max_iter)
}

/// Checks the stabilizability of `(A, Q)` and detectability of `(A, G)`.
pub fn check_preconditions(problem: &DareProblem) -> Result<()> {
    if !is_stabilizable(&problem.a, &problem.q) {
        return Err(Error::precondition(Assumption::Stabilizable, "PBH rank test failed"));
    }
    if !is_detectable(&problem.a, &problem.g) {
        return Err(Error::precondition(
            Assumption::Detectable,
            format!("PBH rank test failed for (A^T, G); rho(A) = {:.6}", spectral_radius(&problem.a)),
        ));
    }
    Ok(())
}

/// Fixed-point iteration from a caller-chosen symmetric PSD start.
pub fn solve_dare_from(
    problem: &DareProblem,
    p0: DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyState> {
    let mut p = p0;
    let mut changes = Vec::new();
    for iteration in 1..=max_iter {
        let next = riccati_step(&p, problem);
        let change = max_abs_diff(&next, &p);
        if !change.is_finite() {
            return Err(Error::NoConvergence { iterations: iteration, change });
        }
        changes.push(change);
        p = next;
        if change <= tol {
            let p_post = update_covariance(&p, &problem.s)?;
            let n = p.nrows();
            let closed_loop = (DMatrix::identity(n, n) - &p_post * &problem.s) * &problem.a;
            let closed_loop_radius = spectral_radius(&closed_loop);
            if closed_loop_radius >= 1.0 {
                return Err(Error::precondition(
                    Assumption::Detectable,
                    format!("converged solution is not stabilizing (radius {closed_loop_radius:.6})"),
                ));
            }
            let residual = max_abs_diff(&riccati_step(&p, problem), &p);
            return Ok(SteadyState {
                p_prior_inf: p,
                p_post_inf: p_post,
                iterations: iteration,
                residual,
                closed_loop_radius,
                changes,
            });
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, change: changes.last().copied().unwrap_or(f64::NAN) })
}
