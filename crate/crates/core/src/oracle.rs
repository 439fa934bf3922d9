//! Brute-force finite-dimensional Kalman filter on a subsampled grid.
//!
//! Sampling the field at `N` points turns the measurement into an ordinary
//! `(N m)`-vector `z = Gamma x + v` with `v ~ N(0, R)`, `R` the Gram matrix of
//! the noise kernel. The textbook update
//! `K = P Gamma^T (R + Gamma P Gamma^T)^-1` then needs no Fourier transforms
//! and no regularization, which makes it an independent reference for the
//! continuum filter as the sampling gets denser.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{update_covariance, SystemModel};
use crate::gain::GainPrecomputation;
use crate::grid::{GridSpec, RealField};
use crate::linalg::{relative_frobenius, symmetrize, symmetrize_checked};
use crate::random_field::gram_matrix;

/// Largest `N m` accepted for a dense solve by default.
pub const DEFAULT_DENSE_CAP: usize = 4000;

/// Sampled model `z = Gamma x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// `(N m) x n`, rows grouped by point.
    pub gamma: DMatrix<f64>,
    /// `(N m) x (N m)`.
    pub rmat: DMatrix<f64>,
    /// Parent-grid indices of the sampled points.
    pub points: Vec<usize>,
    pub grid: GridSpec,
    pub stride: usize,
    /// Noise correlation between neighboring sampled points along the first axis.
    pub neighbor_correlation: f64,
}

impl DiscreteModel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Trapezoidal weights of the sampled grid.
    pub fn weights(&self) -> Vec<f64> {
        self.grid.trapezoid_weights()
    }
}

/// Samples `gamma` and the noise Gram matrix at every `stride`-th point per axis.
pub fn build_discrete(model: &SystemModel, stride: usize, cap: usize) -> Result<DiscreteModel> {
    let (grid, points) = model.grid().subsample(stride)?;
    let m = model.measurement_dim();
    let n = model.state_dim();
    let size = points.len() * m;
    if size > cap {
        return Err(Error::TooLarge { size, cap });
    }
    let mut gamma = DMatrix::zeros(size, n);
    for (j, &p) in points.iter().enumerate() {
        let block = model.gamma().at(p);
        for r in 0..m {
            for c in 0..n {
                gamma[(j * m + r, c)] = block[r * n + c];
            }
        }
    }
    let rmat = gram_matrix(model.kernel(), model.grid(), &points);
    let neighbor_correlation = {
        let mut offset = vec![0.0; grid.dim()];
        let zero = model.kernel().eval(&offset);
        offset[0] = grid.spacing()[0];
        let near = model.kernel().eval(&offset);
        let scale = zero.diagonal().max();
        if scale > 0.0 {
            near.diagonal().max() / scale
        } else {
            0.0
        }
    };
    Ok(DiscreteModel {
        a: model.a().clone(),
        q: model.q().clone(),
        gamma,
        rmat,
        points,
        grid,
        stride,
        neighbor_correlation,
    })
}

/// Gain and posterior of one update.
#[derive(Debug, Clone)]
pub struct DiscreteUpdate {
    /// `n x (N m)`.
    pub k: DMatrix<f64>,
    /// Joseph form.
    pub p_post: DMatrix<f64>,
    /// `(I - K Gamma) P`.
    pub p_post_standard: DMatrix<f64>,
}

/// `K = P Gamma^T (R + Gamma P Gamma^T)^-1` and the Joseph-form posterior.
pub fn discrete_kalman_step(p_prior: &DMatrix<f64>, dm: &DiscreteModel) -> Result<DiscreteUpdate> {
    let n = p_prior.nrows();
    if dm.gamma.ncols() != n {
        return Err(Error::Shape(format!("P is {n}x{n} but Gamma has {} columns", dm.gamma.ncols())));
    }
    let gp = &dm.gamma * p_prior; // (N m) x n
    let innovation = symmetrize(&dm.rmat + &gp * dm.gamma.transpose());
    let chol = innovation.cholesky().ok_or(Error::Singular("innovation covariance"))?;
    let k = chol.solve(&gp).transpose();
    let i_kg = DMatrix::identity(n, n) - &k * &dm.gamma;
    let p_post_standard = &i_kg * p_prior;
    let joseph = &i_kg * p_prior * i_kg.transpose() + &k * &dm.rmat * k.transpose();
    let p_post = symmetrize_checked(joseph, 1e-8)?;
    Ok(DiscreteUpdate { k, p_post, p_post_standard })
}

/// Discrete versus continuum comparison at one sampling level.
#[derive(Debug, Clone)]
pub struct GainComparison {
    pub stride: usize,
    pub points: usize,
    pub spacing: f64,
    /// `max_j |K[:, j] / w_j - kappa(i_j)|`, with `w_j` the trapezoidal weights of the sampled grid.
    pub gain_gap_max: f64,
    /// `gain_gap_max / max |kappa|`.
    pub gain_gap_rel: f64,
    /// `||P_discrete - P_continuum||_F / ||P_continuum||_F`.
    pub covariance_gap: f64,
    pub p_discrete: DMatrix<f64>,
    pub p_continuum: DMatrix<f64>,
    /// Neighbor noise correlation is below `exp(-1/2)`: the samples see nearly
    /// independent noise, far from the continuum limit, so the two filters
    /// are not expected to agree.
    pub non_comparable: bool,
}

/// Compares the continuum gain `kappa` and posterior with the discrete filter.
pub fn compare_gains(
    kappa: &RealField,
    p_post_continuum: &DMatrix<f64>,
    dm: &DiscreteModel,
    p_prior: &DMatrix<f64>,
) -> Result<GainComparison> {
    let update = discrete_kalman_step(p_prior, dm)?;
    let (n, m) = (kappa.rows(), kappa.cols());
    let weights = dm.weights();
    let mut gain_gap_max = 0.0f64;
    for (j, &p) in dm.points.iter().enumerate() {
        let cont = kappa.at(p);
        for r in 0..n {
            for c in 0..m {
                let disc = update.k[(r, j * m + c)] / weights[j];
                gain_gap_max = gain_gap_max.max((disc - cont[r * m + c]).abs());
            }
        }
    }
    let kmax = kappa.max_abs();
    Ok(GainComparison {
        stride: dm.stride,
        points: dm.len(),
        spacing: dm.grid.spacing()[0],
        gain_gap_max,
        gain_gap_rel: if kmax > 0.0 { gain_gap_max / kmax } else { gain_gap_max },
        covariance_gap: relative_frobenius(&update.p_post, p_post_continuum),
        p_discrete: update.p_post,
        p_continuum: p_post_continuum.clone(),
        non_comparable: dm.neighbor_correlation < (-0.5f64).exp(),
    })
}

/// Comparisons across several strides, finest last.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub levels: Vec<GainComparison>,
}

impl ConvergenceStudy {
    /// Covariance gap never grows as the stride shrinks.
    pub fn nonincreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].covariance_gap <= w[0].covariance_gap)
    }

    pub fn finest(&self) -> Option<&GainComparison> {
        self.levels.last()
    }
}

/// One update from `p_prior` compared at each stride; strides are sorted coarsest first.
pub fn convergence_study(
    model: &SystemModel,
    precomp: &GainPrecomputation,
    p_prior: &DMatrix<f64>,
    strides: &[usize],
    cap: usize,
) -> Result<ConvergenceStudy> {
    let p_post = update_covariance(p_prior, precomp.s())?;
    let kappa = precomp.f().left_mul(&p_post)?;
    let mut sorted = strides.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.dedup();
    let levels = sorted
        .par_iter()
        .map(|&stride| {
            let dm = build_discrete(model, stride, cap)?;
            compare_gains(&kappa, &p_post, &dm, p_prior)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceStudy { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_field::SquaredExponentialKernel;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn model(half_width: f64, spacing: f64, ell: f64) -> SystemModel {
        let grid = GridSpec::centered_cube(2, half_width, spacing).unwrap();
        let kernel = Arc::new(SquaredExponentialKernel::new(1.0, ell, 2, 1).unwrap());
        let gamma = RealField::from_fn(grid, 1, 2, |p, o| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            o[0] = (-r2 / 0.003).exp();
            o[1] = 10.0 * p[0] * (-r2 / 0.002).exp();
        });
        SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::identity(2, 2) * 0.01,
            gamma,
            kernel,
        )
        .unwrap()
    }

    #[test]
    fn single_point_model() {
        let m = model(0.1, 0.01, 0.03);
        let dm = build_discrete(&m, 1000, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(dm.len(), 1);
        assert_eq!(dm.rmat.shape(), (1, 1));
    }

    #[test]
    fn dense_construction_checks() {
        let m = model(0.1, 0.01, 0.03);
        let dm = build_discrete(&m, 1, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(dm.len(), 441);
        assert_eq!(dm.gamma.shape(), (441, 2));
        assert_eq!(dm.rmat, dm.rmat.transpose());
        let eig = nalgebra::SymmetricEigen::new(dm.rmat.clone()).eigenvalues;
        assert!(eig.min() >= -1e-8 * eig.max());
        // entries depend on the index offset only
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let side = 21;
        for _ in 0..200 {
            let (a0, a1, b0, b1) = (
                rng.random_range(0..side - 3),
                rng.random_range(0..side - 3),
                rng.random_range(0..side - 3),
                rng.random_range(0..side - 3),
            );
            let (d0, d1) = (rng.random_range(0..3), rng.random_range(0..3));
            let e1 = dm.rmat[(a0 * side + a1, b0 * side + b1)];
            let e2 = dm.rmat[((a0 + d0) * side + a1 + d1, (b0 + d0) * side + b1 + d1)];
            assert!((e1 - e2).abs() <= 1e-12 * dm.rmat[(0, 0)]);
        }
        assert!(matches!(build_discrete(&m, 1, 100), Err(Error::TooLarge { size: 441, cap: 100 })));
    }

    fn one_point(gamma: f64, r: f64) -> DiscreteModel {
        DiscreteModel {
            a: DMatrix::identity(1, 1),
            q: DMatrix::identity(1, 1),
            gamma: DMatrix::from_element(1, 1, gamma),
            rmat: DMatrix::from_element(1, 1, r),
            points: vec![0],
            grid: GridSpec::new(vec![0.0], vec![1.0], vec![2]).unwrap().subsample(5).unwrap().0,
            stride: 1,
            neighbor_correlation: 1.0,
        }
    }

    #[test]
    fn scalar_kalman() {
        let up = discrete_kalman_step(&DMatrix::from_element(1, 1, 1.0), &one_point(1.0, 1.0)).unwrap();
        assert!((up.k[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((up.p_post[(0, 0)] - 0.5).abs() < 1e-15);
        let up = discrete_kalman_step(&DMatrix::from_element(1, 1, 2.0), &one_point(0.0, 1.0)).unwrap();
        assert_eq!(up.k[(0, 0)], 0.0);
        assert_eq!(up.p_post[(0, 0)], 2.0);
    }

    #[test]
    fn single_point_matches_information_form() {
        let dm = one_point(0.7, 0.3);
        let p = DMatrix::from_element(1, 1, 1.4);
        let s = DMatrix::from_element(1, 1, 0.7 * 0.7 / 0.3);
        let a = discrete_kalman_step(&p, &dm).unwrap().p_post;
        let b = update_covariance(&p, &s).unwrap();
        assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn joseph_and_standard_agree() {
        let m = model(0.1, 0.01, 0.03);
        let dm = build_discrete(&m, 2, DEFAULT_DENSE_CAP).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[0.03, 0.01, 0.01, 0.02]);
        let up = discrete_kalman_step(&p, &dm).unwrap();
        assert!((&up.p_post - &up.p_post_standard).norm() <= 1e-8 * up.p_post.norm());
    }

    #[test]
    fn white_regime_is_flagged() {
        // kernel resolved on the base grid but far narrower than the sampled spacing
        let grid = GridSpec::centered_cube(2, 0.1, 0.002).unwrap();
        let kernel = Arc::new(SquaredExponentialKernel::new(1.0, 0.004, 2, 1).unwrap());
        let gamma = RealField::from_fn(grid, 1, 2, |p, o| {
            o[0] = (-(p[0] * p[0] + p[1] * p[1]) / 0.002).exp();
            o[1] = 0.0;
        });
        let m = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::identity(2, 2) * 0.01,
            gamma,
            kernel,
        )
        .unwrap();
        let pre = GainPrecomputation::new(&m, Default::default()).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[0.03, 0.01, 0.01, 0.02]);
        let study = convergence_study(&m, &pre, &p, &[10, 2], DEFAULT_DENSE_CAP).unwrap();
        assert!(study.levels[0].non_comparable);
        assert!(!study.levels[1].non_comparable);
    }

    #[test]
    fn resolved_kernel_converges() {
        let m = model(0.2, 0.005, 0.025);
        let pre = GainPrecomputation::new(&m, Default::default()).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[0.03, 0.01, 0.01, 0.02]);
        let study = convergence_study(&m, &pre, &p, &[4, 10, 5], DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(study.levels.iter().map(|l| l.stride).collect::<Vec<_>>(), vec![10, 5, 4]);
        assert!(study.nonincreasing(), "{:?}", study.levels.iter().map(|l| l.covariance_gap).collect::<Vec<_>>());
        assert!(study.finest().unwrap().covariance_gap < 0.05);
        assert!(!study.finest().unwrap().non_comparable);
    }
}
