//! Time-invariant part of the optimal gain.
//!
//! For a measurement kernel `gamma` (m x n per point) and stationary noise
//! spectrum `Rbar`, the gain at step k is `kappa_k(i) = P_k f(i)` with
//!
//! ```text
//! f(i) = F^-1{ gammabar(w)^T Rbar(w)^-1 }(i)          (n x m)
//! S    = int f(i) gamma(i) di                          (n x n, symmetric PSD)
//! G    = S^(1/2)                                       (principal root)
//! ```
//!
//! `Rbar^-1` grows without bound where the noise spectrum decays, so the
//! division is restricted to a band where `Rbar` is numerically invertible
//! (see [`RegularizationPolicy`]).

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;

use crate::error::{Assumption, Error, Result};
use crate::filter::SystemModel;
use crate::fourier::{forward_ct, inverse_ct, ComplexField};
use crate::grid::{quadrature, GridSpec, RealField};
use crate::linalg::{psd_sqrt, relative_asymmetry, symmetrize, SYMMETRY_TOLERANCE};
use crate::random_field::{kernel_spectrum, KernelSpectrum, StationaryKernel};

/// Maximum imaginary residue of `f`, relative to its real magnitude.
pub const IMAGINARY_TOLERANCE: f64 = 1e-8;
/// Relative asymmetry of the raw quadrature `int f gamma` that signals a broken `f`.
pub const S_ASYMMETRY_TOLERANCE: f64 = 1e-6;
/// Negative eigenvalues of `S` down to `-S_CLIP * lambda_max` are clipped to zero.
pub const S_CLIP: f64 = 1e-10;
/// Eigenvalues of `S` below `SQRT_FLOOR * lambda_max` are treated as zero in `G`.
pub const SQRT_FLOOR: f64 = 1e-12;
/// `gammabar` counts as carrying energy where its norm exceeds this fraction of its peak.
const SUPPORT_FRACTION: f64 = 1e-6;

/// How the spectral division by `Rbar(w)` is regularized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizationPolicy {
    /// Keep frequencies whose smallest `Rbar` eigenvalue is at least
    /// `eps_rel` times the global largest one; zero the rest.
    BandMask { eps_rel: f64 },
    /// Use `(Rbar + eps I)^-1` everywhere, `eps = eps_rel * max eigenvalue`.
    Tikhonov { eps_rel: f64 },
}

impl Default for RegularizationPolicy {
    fn default() -> Self {
        RegularizationPolicy::BandMask { eps_rel: 1e-12 }
    }
}

/// Output of [`compute_f`].
#[derive(Debug, Clone)]
pub struct SpectralGain {
    pub f: RealField,
    /// Frequencies retained in the division, one flag per dual-grid point.
    pub band_mask: Vec<bool>,
    /// `max |Im f| / max |Re f|` before the imaginary part was dropped.
    pub imaginary_residue: f64,
    /// Fraction of `gammabar` energy outside the retained band.
    pub discarded_energy: f64,
    /// `int gammabar^* Rbar^-1 gammabar dw` over the retained band.
    pub s_spectral: DMatrix<f64>,
    /// Largest `|gamma|` on the boundary of the grid relative to its overall
    /// maximum. The transform treats `gamma` as periodic, so a visible edge
    /// leaks into frequencies where `Rbar^-1` is huge; keep this far below
    /// `eps_rel^(1/2)`.
    pub edge_ratio: f64,
}

impl SpectralGain {
    pub fn retained_fraction(&self) -> f64 {
        self.band_mask.iter().filter(|&&b| b).count() as f64 / self.band_mask.len() as f64
    }
}

/// Index of `-w` on a dual grid, if present.
fn mirror_index(dual: &GridSpec, flat: usize, index: &mut [usize]) -> Option<usize> {
    dual.unravel(flat, index);
    for (a, k) in index.iter_mut().enumerate() {
        let n = dual.counts()[a];
        let twice_zero = 2 * (n / 2);
        if *k > twice_zero || twice_zero - *k >= n {
            return None;
        }
        *k = twice_zero - *k;
    }
    Some(dual.ravel(index))
}

/// Projects a transform of real data onto exact Hermitian symmetry `F(-w) = conj F(w)`.
fn enforce_real_symmetry(transform: &mut ComplexField) {
    let dual = transform.grid().clone();
    let mut index = vec![0usize; dual.dim()];
    let b = transform.block_len();
    let copy = transform.data().to_vec();
    for flat in 0..dual.len() {
        if let Some(mirror) = mirror_index(&dual, flat, &mut index) {
            let own = &copy[flat * b..(flat + 1) * b];
            let other = &copy[mirror * b..(mirror + 1) * b];
            for (dst, (x, y)) in transform.at_mut(flat).iter_mut().zip(own.iter().zip(other)) {
                *dst = 0.5 * (x + y.conj());
            }
        }
    }
}

/// `(Rbar + shift I)^-1` at one frequency.
fn inverse_at(spectrum: &KernelSpectrum, p: usize, shift: f64) -> Option<DMatrix<Complex64>> {
    let block = spectrum.values().at(p);
    if block.len() == 1 {
        let v = block[0] + shift;
        return (v.norm() > 0.0).then(|| DMatrix::from_element(1, 1, v.inv()));
    }
    let m = spectrum.out_dim();
    let mat = spectrum.matrix_at(p) + DMatrix::from_diagonal_element(m, m, Complex64::new(shift, 0.0));
    mat.try_inverse()
}

/// `f = F^-1{gammabar^T Rbar^-1}` restricted by `policy`, with the frequency-domain `S`.
pub fn compute_f(
    gamma: &RealField,
    spectrum: &KernelSpectrum,
    policy: RegularizationPolicy,
) -> Result<SpectralGain> {
    let grid = gamma.grid();
    let (m, n) = (gamma.rows(), gamma.cols());
    if spectrum.out_dim() != m {
        return Err(Error::Shape(format!(
            "gamma has {m} rows but the noise spectrum is {0}x{0}",
            spectrum.out_dim()
        )));
    }
    let dual = grid.dual();
    if *spectrum.grid() != dual {
        return Err(Error::Shape("noise spectrum is not on the dual of gamma's grid".into()));
    }

    let mut gamma_bar = forward_ct(gamma);
    enforce_real_symmetry(&mut gamma_bar);

    let (lo, hi) = (0..dual.len()).fold((Vec::with_capacity(dual.len()), 0.0f64), |(mut lo, hi), p| {
        let ev = spectrum.eigenvalues_at(p);
        lo.push(ev[0]);
        (lo, hi.max(*ev.last().unwrap()))
    });
    let (eps_rel, shift) = match policy {
        RegularizationPolicy::BandMask { eps_rel } => (eps_rel, 0.0),
        RegularizationPolicy::Tikhonov { eps_rel } => (eps_rel, eps_rel * hi),
    };
    let invertible: Vec<bool> = lo.iter().map(|&l| l >= eps_rel * hi && l > 0.0).collect();
    let band_mask: Vec<bool> = match policy {
        RegularizationPolicy::BandMask { .. } => invertible.clone(),
        RegularizationPolicy::Tikhonov { .. } => vec![true; dual.len()],
    };

    // energy bookkeeping for the invertibility/integrability preconditions
    let energy: Vec<f64> =
        (0..dual.len()).map(|p| gamma_bar.at(p).iter().map(|v| v.norm_sqr()).sum()).collect();
    let total_energy: f64 = energy.iter().sum();
    let peak = energy.iter().fold(0.0f64, |a, &e| a.max(e)).sqrt();
    let discarded: f64 = energy.iter().zip(&band_mask).filter(|(_, &keep)| !keep).map(|(e, _)| e).sum();
    let discarded_energy = if total_energy > 0.0 { discarded / total_energy } else { 0.0 };
    if peak > 0.0 {
        let support: Vec<usize> =
            (0..dual.len()).filter(|&p| energy[p].sqrt() >= SUPPORT_FRACTION * peak).collect();
        // Assumption 3 proper: the spectrum itself vanishes where the signal lives
        let singular = support.iter().filter(|&&p| !(lo[p] > 0.0)).count();
        if singular * 2 > support.len() {
            return Err(Error::precondition(
                Assumption::SpectrumInvertible,
                format!("noise spectrum singular on {singular} of {} measurement frequencies", support.len()),
            ));
        }
        if discarded_energy > 0.99 {
            return Err(Error::precondition(
                Assumption::GainIntegrable,
                format!("regularization discards {:.2}% of the measurement spectrum", 100.0 * discarded_energy),
            ));
        }
    }

    let mut quotient = ComplexField::zeros(dual.clone(), n, m);
    let mut s_acc = DMatrix::<Complex64>::zeros(n, n);
    for p in (0..dual.len()).filter(|&p| band_mask[p]) {
        let Some(r_inv) = inverse_at(spectrum, p, shift) else {
            continue;
        };
        let gb = gamma_bar.matrix_at(p); // m x n
        let h = gb.transpose() * &r_inv; // n x m
        for r in 0..n {
            for c in 0..m {
                quotient.at_mut(p)[r * m + c] = h[(r, c)];
            }
        }
        s_acc += gb.adjoint() * &r_inv * &gb;
    }
    let s_spectral = (s_acc * Complex64::new(dual.cell_volume(), 0.0)).map(|v| v.re);

    let f_complex = inverse_ct(&quotient, grid)?;
    let re_max = f_complex.data().iter().fold(0.0f64, |a, v| a.max(v.re.abs()));
    let im_max = f_complex.data().iter().fold(0.0f64, |a, v| a.max(v.im.abs()));
    let imaginary_residue = if re_max > 0.0 { im_max / re_max } else { im_max };
    if imaginary_residue > IMAGINARY_TOLERANCE {
        return Err(Error::Shape(format!(
            "gain kernel has imaginary residue {imaginary_residue:.3e} (limit {IMAGINARY_TOLERANCE:.0e})"
        )));
    }
    Ok(SpectralGain {
        edge_ratio: edge_ratio(gamma),
        f: f_complex.map(|v| v.re),
        band_mask,
        imaginary_residue,
        discarded_energy,
        s_spectral: symmetrize(s_spectral),
    })
}

fn edge_ratio(gamma: &RealField) -> f64 {
    let grid = gamma.grid();
    let peak = gamma.max_abs();
    if peak == 0.0 {
        return 0.0;
    }
    let mut index = vec![0usize; grid.dim()];
    let mut edge = 0.0f64;
    for p in 0..grid.len() {
        grid.unravel(p, &mut index);
        if index.iter().zip(grid.counts()).any(|(&k, &n)| k == 0 || k + 1 == n) {
            edge = gamma.at(p).iter().fold(edge, |a, v| a.max(v.abs()));
        }
    }
    edge / peak
}

/// Trapezoidal `int f(i) gamma(i) di`, symmetrized, with tiny negative eigenvalues clipped.
pub fn compute_s(f: &RealField, gamma: &RealField) -> Result<DMatrix<f64>> {
    let raw = quadrature(&f.pointwise_product(gamma)?);
    let asymmetry = relative_asymmetry(&raw);
    if asymmetry > S_ASYMMETRY_TOLERANCE {
        return Err(Error::Asymmetric { asymmetry, tolerance: S_ASYMMETRY_TOLERANCE });
    }
    let s = symmetrize(raw);
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(s);
    }
    if min < -S_CLIP * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { eigenvalue: min });
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(symmetrize(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()))
}

/// Unique symmetric PSD `G` with `G G = S`.
pub fn principal_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::Shape(format!("S is {}x{}", s.nrows(), s.ncols())));
    }
    let asymmetry = relative_asymmetry(s);
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(Error::Asymmetric { asymmetry, tolerance: SYMMETRY_TOLERANCE });
    }
    Ok(psd_sqrt(s, SQRT_FLOOR))
}

/// Everything about the gain that does not change between time steps.
#[derive(Debug, Clone)]
pub struct GainPrecomputation {
    f: RealField,
    /// `f` times the trapezoid weight of each point.
    f_weighted: RealField,
    s: DMatrix<f64>,
    g: DMatrix<f64>,
    spectral: SpectralGain,
    policy: RegularizationPolicy,
}

impl GainPrecomputation {
    pub fn new(model: &SystemModel, policy: RegularizationPolicy) -> Result<Self> {
        let spectrum = kernel_spectrum(model.kernel(), model.grid())?;
        Self::from_parts(model.gamma(), &spectrum, policy)
    }

    pub fn from_parts(gamma: &RealField, spectrum: &KernelSpectrum, policy: RegularizationPolicy) -> Result<Self> {
        let spectral = compute_f(gamma, spectrum, policy)?;
        let s = compute_s(&spectral.f, gamma)?;
        let g = principal_sqrt(&s)?;
        let mut f_weighted = spectral.f.clone();
        let b = f_weighted.block_len();
        for (chunk, w) in f_weighted.data_mut().chunks_mut(b).zip(gamma.grid().trapezoid_weights()) {
            chunk.iter_mut().for_each(|v| *v *= w);
        }
        Ok(Self { f: spectral.f.clone(), f_weighted, s, g, spectral, policy })
    }

    pub fn f(&self) -> &RealField {
        &self.f
    }

    /// `f` with the quadrature weights folded in, so that `sum_p f_weighted(p) s(p)`
    /// is the trapezoid rule for `int f s`.
    pub fn f_weighted(&self) -> &RealField {
        &self.f_weighted
    }

    /// Information matrix `S`.
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Principal square root of `S`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn band_mask(&self) -> &[bool] {
        &self.spectral.band_mask
    }

    pub fn retained_fraction(&self) -> f64 {
        self.spectral.retained_fraction()
    }

    pub fn spectral(&self) -> &SpectralGain {
        &self.spectral
    }

    /// `S` evaluated entirely in the frequency domain.
    pub fn s_spectral(&self) -> &DMatrix<f64> {
        &self.spectral.s_spectral
    }

    pub fn policy(&self) -> RegularizationPolicy {
        self.policy
    }
}

/// Flat indices of a `per_axis^d` lattice of cell midpoints spread across the grid.
pub fn probe_lattice(grid: &GridSpec, per_axis: usize) -> Vec<usize> {
    let dim = grid.dim();
    let total = per_axis.pow(dim as u32);
    let mut point = vec![0.0; dim];
    let mut out: Vec<usize> = (0..total)
        .map(|mut t| {
            for a in (0..dim).rev() {
                let k = t % per_axis;
                t /= per_axis;
                let frac = (k as f64 + 0.5) / per_axis as f64;
                point[a] = grid.lower()[a] + frac * (grid.upper(a) - grid.lower()[a]);
            }
            grid.nearest(&point)
        })
        .collect();
    out.dedup();
    out
}

/// Residual of the optimality condition at a set of probe points.
#[derive(Debug, Clone)]
pub struct OptimalityResidual {
    /// `max_i' || int kappa(i) (gamma(i) P gamma(i')^T + R(i - i')) di - P gamma(i')^T ||_F`.
    pub max_residual: f64,
    /// `max_i' || P gamma(i')^T ||_F` over the same probes.
    pub scale: f64,
    pub per_probe: Vec<f64>,
}

impl OptimalityResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_residual / self.scale
        } else {
            self.max_residual
        }
    }
}

/// Evaluates the orthogonality condition a gain must satisfy to be optimal,
/// by trapezoidal quadrature over the grid, at each probe point.
pub fn verify_optimality(
    kappa: &RealField,
    p_prior: &DMatrix<f64>,
    gamma: &RealField,
    kernel: &dyn StationaryKernel,
    probes: &[usize],
) -> Result<OptimalityResidual> {
    kappa.check_same_grid(gamma)?;
    let (n, m) = (kappa.rows(), kappa.cols());
    if gamma.rows() != m || gamma.cols() != n || p_prior.shape() != (n, n) {
        return Err(Error::Shape("kappa, gamma and P disagree in shape".into()));
    }
    let grid = gamma.grid();
    let weights = grid.trapezoid_weights();
    let kappa_gamma = quadrature(&kappa.pointwise_product(gamma)?);
    let mut offset = vec![0.0; grid.dim()];
    let mut x = vec![0.0; grid.dim()];
    let mut block = vec![0.0; m * m];
    let mut per_probe = Vec::with_capacity(probes.len());
    let mut scale = 0.0f64;
    for &probe in probes {
        let y = grid.point(probe);
        let target = p_prior * gamma.matrix_at(probe).transpose(); // n x m
        let mut conv = DMatrix::<f64>::zeros(n, m);
        for (p, w) in weights.iter().enumerate() {
            grid.point_into(p, &mut x);
            for a in 0..grid.dim() {
                offset[a] = x[a] - y[a];
            }
            kernel.eval_into(&offset, &mut block);
            let k = kappa.at(p);
            for r in 0..n {
                for c in 0..m {
                    conv[(r, c)] += w * (0..m).map(|t| k[r * m + t] * block[t * m + c]).sum::<f64>();
                }
            }
        }
        let lhs = &kappa_gamma * &target + conv;
        per_probe.push((lhs - &target).norm());
        scale = scale.max(target.norm());
    }
    let max_residual = per_probe.iter().fold(0.0f64, |a, &r| a.max(r));
    Ok(OptimalityResidual { max_residual, scale, per_probe })
}
