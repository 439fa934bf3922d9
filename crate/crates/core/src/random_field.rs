//! Stationary covariance kernels and exact sampling of stationary Gaussian fields.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{Error, Result};
use crate::fourier::{forward_ct, ComplexField, NdFft};
use crate::grid::{GridSpec, RealField};

/// One realization of an `m`-vector field on a grid (`m x 1` blocks).
pub type FieldSample = RealField;

/// Matrix-valued covariance `R(i - i')` of a wide-sense-stationary field.
pub trait StationaryKernel: Send + Sync + fmt::Debug {
    /// Dimension `m` of the field values.
    fn out_dim(&self) -> usize;

    /// Writes the row-major `m x m` value of `R(offset)` into `out`.
    fn eval_into(&self, offset: &[f64], out: &mut [f64]);

    /// Closed-form spectrum at `freq`, when known.
    fn analytic_spectrum(&self, _freq: &[f64]) -> Option<DMatrix<Complex64>> {
        None
    }

    fn eval(&self, offset: &[f64]) -> DMatrix<f64> {
        let m = self.out_dim();
        let mut out = vec![0.0; m * m];
        self.eval_into(offset, &mut out);
        DMatrix::from_row_slice(m, m, &out)
    }
}

/// `nu / (2 pi l^2)^(d/2) * exp(-|r|^2 / (2 l^2)) * I_m`.
///
/// The normalization gives total mass `nu` in any dimension `d`, and the
/// spectrum `nu * exp(-2 pi^2 l^2 |w|^2) * I_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredExponentialKernel {
    intensity: f64,
    length_scale: f64,
    dim: usize,
    out_dim: usize,
}

impl SquaredExponentialKernel {
    pub fn new(intensity: f64, length_scale: f64, dim: usize, out_dim: usize) -> Result<Self> {
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(Error::InvalidModel(format!("kernel intensity {intensity} must be positive")));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::InvalidModel(format!("length scale {length_scale} must be positive")));
        }
        if dim == 0 || out_dim == 0 {
            return Err(Error::InvalidModel("kernel dimensions must be positive".into()));
        }
        Ok(Self { intensity, length_scale, dim, out_dim })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `R(0)` on the diagonal.
    pub fn peak(&self) -> f64 {
        let l2 = self.length_scale * self.length_scale;
        self.intensity / (2.0 * PI * l2).powf(0.5 * self.dim as f64)
    }

    pub fn scalar(&self, r2: f64) -> f64 {
        self.peak() * (-r2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    pub fn scalar_spectrum(&self, w2: f64) -> f64 {
        self.intensity * (-2.0 * PI * PI * self.length_scale * self.length_scale * w2).exp()
    }
}

impl StationaryKernel for SquaredExponentialKernel {
    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn eval_into(&self, offset: &[f64], out: &mut [f64]) {
        let r2: f64 = offset.iter().map(|x| x * x).sum();
        let v = self.scalar(r2);
        let m = self.out_dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for k in 0..m {
            out[k * m + k] = v;
        }
    }

    fn analytic_spectrum(&self, freq: &[f64]) -> Option<DMatrix<Complex64>> {
        let w2: f64 = freq.iter().map(|x| x * x).sum();
        let v = Complex64::new(self.scalar_spectrum(w2), 0.0);
        Some(DMatrix::from_diagonal_element(self.out_dim, self.out_dim, v))
    }
}

/// Noise spectrum `R(w)` on the dual of a sampling grid.
#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    values: ComplexField,
    analytic: bool,
}

impl KernelSpectrum {
    pub fn values(&self) -> &ComplexField {
        &self.values
    }

    pub fn grid(&self) -> &GridSpec {
        self.values.grid()
    }

    pub fn is_analytic(&self) -> bool {
        self.analytic
    }

    pub fn out_dim(&self) -> usize {
        self.values.rows()
    }

    pub fn matrix_at(&self, p: usize) -> DMatrix<Complex64> {
        self.values.matrix_at(p)
    }

    /// Eigenvalues of the Hermitian matrix at frequency `p`, ascending.
    pub fn eigenvalues_at(&self, p: usize) -> Vec<f64> {
        let block = self.values.at(p);
        if block.len() == 1 {
            return vec![block[0].re];
        }
        let mut ev: Vec<f64> =
            SymmetricEigen::new(self.matrix_at(p)).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Largest eigenvalue over all frequencies and smallest eigenvalue over all frequencies.
    pub fn eigen_range(&self) -> (f64, f64) {
        (0..self.grid().len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let ev = self.eigenvalues_at(p);
            (lo.min(ev[0]), hi.max(*ev.last().unwrap()))
        })
    }

    /// Hermitian at every frequency, with `min eig >= -1e-12 * max eig`.
    pub fn check_hermitian_psd(&self) -> Result<()> {
        let m = self.out_dim();
        for p in 0..self.grid().len() {
            let b = self.values.at(p);
            let scale = b.iter().fold(0.0f64, |s, v| s.max(v.norm())).max(f64::MIN_POSITIVE);
            for r in 0..m {
                for c in 0..m {
                    let asym = (b[r * m + c] - b[c * m + r].conj()).norm();
                    if asym > 1e-12 * scale {
                        return Err(Error::Asymmetric { asymmetry: asym / scale, tolerance: 1e-12 });
                    }
                }
            }
        }
        let (lo, hi) = self.eigen_range();
        if lo < -1e-12 * hi.abs() {
            return Err(Error::NotPsd { eigenvalue: lo });
        }
        Ok(())
    }
}

/// Spectrum of `kernel` on the dual of `grid`.
///
/// Uses the kernel's closed form when it has one; otherwise transforms the
/// kernel sampled at the grid's offsets (centered on zero) and keeps the
/// Hermitian part.
pub fn kernel_spectrum(kernel: &dyn StationaryKernel, grid: &GridSpec) -> Result<KernelSpectrum> {
    let dual = grid.dual();
    let m = kernel.out_dim();
    if kernel.analytic_spectrum(&vec![0.0; dual.dim()]).is_some() {
        let values = ComplexField::from_fn(dual, m, m, |w, out| {
            let s = kernel.analytic_spectrum(w).expect("analytic spectrum");
            for r in 0..m {
                for c in 0..m {
                    out[r * m + c] = s[(r, c)];
                }
            }
        });
        return Ok(KernelSpectrum { values, analytic: true });
    }
    let lower: Vec<f64> = grid
        .counts()
        .iter()
        .zip(grid.spacing())
        .map(|(&n, &d)| -((n / 2) as f64) * d)
        .collect();
    let centered = GridSpec::new(lower, grid.spacing().to_vec(), grid.counts().to_vec())?;
    let sampled = RealField::from_fn(centered, m, m, |p, out| kernel.eval_into(p, out));
    let mut values = forward_ct(&sampled);
    for p in 0..dual.len() {
        let block = values.at_mut(p);
        let h: Vec<Complex64> = (0..m * m)
            .map(|k| {
                let (r, c) = (k / m, k % m);
                0.5 * (block[r * m + c] + block[c * m + r].conj())
            })
            .collect();
        block.copy_from_slice(&h);
    }
    Ok(KernelSpectrum { values, analytic: false })
}

/// How [`FieldSampler`] realizes the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMethod {
    /// Circulant embedding, falling back to dense factorization on small grids.
    #[default]
    Auto,
    CirculantEmbedding,
    DenseFactor,
}

/// Largest grid (in points) the dense fallback accepts.
pub const DENSE_FALLBACK_POINTS: usize = 40 * 40;

/// Relative tolerance for negative eigenvalues of the embedded spectrum.
const EMBEDDING_TOLERANCE: f64 = 1e-10;

/// Embedded modes below this fraction of the largest eigenvalue are not drawn;
/// together they carry less variance than double-precision rounding.
const NEGLIGIBLE_MODE: f64 = 1e-16;

enum Realizer {
    /// `active` lists the embedded frequencies with a nonzero root.
    Circulant { padded: Vec<usize>, fft: NdFft, root: Vec<Complex64>, active: Vec<u32> },
    Dense { factor: DMatrix<f64> },
}

/// Reusable sampler of a centered stationary Gaussian field on a fixed grid.
///
/// Construction factors the covariance once; every draw is then a function
/// of the seed alone.
pub struct FieldSampler {
    grid: GridSpec,
    out_dim: usize,
    realizer: Realizer,
}

impl fmt::Debug for FieldSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let method = match self.realizer {
            Realizer::Circulant { .. } => "circulant",
            Realizer::Dense { .. } => "dense",
        };
        f.debug_struct("FieldSampler")
            .field("counts", &self.grid.counts())
            .field("out_dim", &self.out_dim)
            .field("method", &method)
            .finish()
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
fn smooth_size(n: usize) -> usize {
    (n.max(1)..)
        .find(|&k| {
            let mut r = k;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("unbounded search")
}

impl FieldSampler {
    pub fn new(kernel: &dyn StationaryKernel, grid: &GridSpec, method: SamplingMethod) -> Result<Self> {
        let out_dim = kernel.out_dim();
        match method {
            SamplingMethod::DenseFactor => Self::dense(kernel, grid),
            SamplingMethod::CirculantEmbedding => Self::circulant(kernel, grid),
            SamplingMethod::Auto => match Self::circulant(kernel, grid) {
                Err(Error::Embedding { .. }) if grid.len() <= DENSE_FALLBACK_POINTS => {
                    Self::dense(kernel, grid)
                }
                other => other,
            },
        }
        .map(|realizer| Self { grid: grid.clone(), out_dim, realizer })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.realizer, Realizer::Circulant { .. })
    }

    fn circulant(kernel: &dyn StationaryKernel, grid: &GridSpec) -> Result<Realizer> {
        let m = kernel.out_dim();
        let padded: Vec<usize> = grid.counts().iter().map(|&n| smooth_size(2 * (n - 1))).collect();
        let total: usize = padded.iter().product();
        assert!(total <= u32::MAX as usize, "embedding too large");
        let dim = grid.dim();

        // first row of the block-circulant covariance, wrapped to signed offsets
        let mut rows: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); total]; m * m];
        let mut index = vec![0usize; dim];
        let mut offset = vec![0.0; dim];
        let mut block = vec![0.0; m * m];
        for flat in 0..total {
            let mut rem = flat;
            for a in (0..dim).rev() {
                index[a] = rem % padded[a];
                rem /= padded[a];
            }
            for a in 0..dim {
                let j = index[a] as f64;
                let wrapped = if 2 * index[a] <= padded[a] { j } else { j - padded[a] as f64 };
                offset[a] = wrapped * grid.spacing()[a];
            }
            kernel.eval_into(&offset, &mut block);
            for (k, v) in block.iter().enumerate() {
                rows[k][flat] = Complex64::new(*v, 0.0);
            }
        }
        let fft = NdFft::new(&padded, FftDirection::Forward);
        for row in rows.iter_mut() {
            fft.process(row);
        }

        // per-frequency Hermitian square root of the embedded spectrum
        let mut root = vec![Complex64::new(0.0, 0.0); total * m * m];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut eigs: Vec<(DVector<f64>, DMatrix<Complex64>)> = Vec::with_capacity(if m == 1 { 0 } else { total });
        for flat in 0..total {
            if m == 1 {
                let lam = rows[0][flat].re;
                lo = lo.min(lam);
                hi = hi.max(lam);
                continue;
            }
            let mat = DMatrix::from_fn(m, m, |r, c| {
                0.5 * (rows[r * m + c][flat] + rows[c * m + r][flat].conj())
            });
            let eig = SymmetricEigen::new(mat);
            lo = lo.min(eig.eigenvalues.min());
            hi = hi.max(eig.eigenvalues.max());
            eigs.push((eig.eigenvalues, eig.eigenvectors));
        }
        if lo < -EMBEDDING_TOLERANCE * hi.abs() {
            return Err(Error::Embedding { min: lo, max: hi });
        }
        let norm = 1.0 / (total as f64).sqrt();
        let floor = NEGLIGIBLE_MODE * hi;
        let keep = |v: f64| if v > floor { v.sqrt() * norm } else { 0.0 };
        if m == 1 {
            for (flat, r) in root.iter_mut().enumerate() {
                *r = Complex64::new(keep(rows[0][flat].re), 0.0);
            }
        } else {
            for (flat, (vals, vecs)) in eigs.into_iter().enumerate() {
                let sqrt_vals = DMatrix::from_diagonal(&vals.map(|v| Complex64::new(keep(v), 0.0)));
                let s = &vecs * sqrt_vals * vecs.adjoint();
                for r in 0..m {
                    for c in 0..m {
                        root[flat * m * m + r * m + c] = s[(r, c)];
                    }
                }
            }
        }
        let active = (0..total)
            .filter(|&flat| root[flat * m * m..(flat + 1) * m * m].iter().any(|v| v.norm() > 0.0))
            .map(|flat| flat as u32)
            .collect();
        let fft = NdFft::new(&padded, FftDirection::Inverse);
        Ok(Realizer::Circulant { padded, fft, root, active })
    }

    fn dense(kernel: &dyn StationaryKernel, grid: &GridSpec) -> Result<Realizer> {
        let gram = gram_matrix(kernel, grid, &(0..grid.len()).collect::<Vec<_>>());
        let factor = psd_factor(gram)?;
        Ok(Realizer::Dense { factor })
    }

    /// Draws two independent realizations from one seed.
    pub fn sample_pair(&self, seed: u64) -> (FieldSample, FieldSample) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.realizer {
            Realizer::Circulant { padded, fft, root, active } => {
                let m = self.out_dim;
                let total: usize = padded.iter().product();
                let mut comps: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); total]; m];
                let mut xi = vec![Complex64::new(0.0, 0.0); m];
                for &flat in active {
                    let flat = flat as usize;
                    for x in xi.iter_mut() {
                        *x = Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                    }
                    let blk = &root[flat * m * m..(flat + 1) * m * m];
                    for (r, comp) in comps.iter_mut().enumerate() {
                        comp[flat] = (0..m).map(|c| blk[r * m + c] * xi[c]).sum();
                    }
                }
                for comp in comps.iter_mut() {
                    fft.process(comp);
                }
                let counts = self.grid.counts();
                let dim = counts.len();
                let row = counts[dim - 1];
                let mut re = FieldSample::zeros(self.grid.clone(), m, 1);
                let mut im = FieldSample::zeros(self.grid.clone(), m, 1);
                let mut index = vec![0usize; dim];
                for line in 0..self.grid.len() / row {
                    self.grid.unravel(line * row, &mut index);
                    let src = index.iter().zip(padded.iter()).fold(0, |acc, (&k, &n)| acc * n + k);
                    let dst = line * row * m;
                    for k in 0..row {
                        for (r, comp) in comps.iter().enumerate() {
                            let v = comp[src + k];
                            re.data_mut()[dst + k * m + r] = v.re;
                            im.data_mut()[dst + k * m + r] = v.im;
                        }
                    }
                }
                (re, im)
            }
            Realizer::Dense { factor } => {
                let mut draw = || {
                    let xi = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(&mut rng));
                    let v = factor * xi;
                    FieldSample::from_values(self.grid.clone(), self.out_dim, 1, v.as_slice().to_vec())
                        .expect("dense factor matches grid")
                };
                let a = draw();
                let b = draw();
                (a, b)
            }
        }
    }

    /// One realization, a pure function of `seed`.
    pub fn sample(&self, seed: u64) -> FieldSample {
        self.sample_pair(seed).0
    }
}

/// Convenience wrapper: build a sampler and draw once.
pub fn sample_field(kernel: &dyn StationaryKernel, grid: &GridSpec, seed: u64) -> Result<FieldSample> {
    Ok(FieldSampler::new(kernel, grid, SamplingMethod::Auto)?.sample(seed))
}

/// `(N m) x (N m)` covariance of the field at the listed grid points.
pub fn gram_matrix(kernel: &dyn StationaryKernel, grid: &GridSpec, points: &[usize]) -> DMatrix<f64> {
    let m = kernel.out_dim();
    let n = points.len();
    let coords: Vec<Vec<f64>> = points.iter().map(|&p| grid.point(p)).collect();
    let mut gram = DMatrix::zeros(n * m, n * m);
    let mut offset = vec![0.0; grid.dim()];
    let mut block = vec![0.0; m * m];
    for a in 0..n {
        for b in 0..n {
            for (o, (x, y)) in offset.iter_mut().zip(coords[a].iter().zip(&coords[b])) {
                *o = x - y;
            }
            kernel.eval_into(&offset, &mut block);
            for r in 0..m {
                for c in 0..m {
                    gram[(a * m + r, b * m + c)] = block[r * m + c];
                }
            }
        }
    }
    gram
}

/// `L` with `L L^T = C` for symmetric PSD `C`: Cholesky, or eigen-square-root
/// when `C` is numerically singular.
fn psd_factor(c: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(c);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -1e-8 * max.abs() {
        return Err(Error::NotPsd { eigenvalue: min });
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::quadrature;

    fn table_kernel() -> SquaredExponentialKernel {
        SquaredExponentialKernel::new(10.0, 0.025, 2, 1).unwrap()
    }

    #[test]
    fn peak_value() {
        let k = table_kernel();
        let v = k.eval(&[0.0, 0.0])[(0, 0)];
        // 10 / (2 pi 0.000625)
        assert!((v - 2546.479089470325).abs() < 1e-9, "{v}");
    }

    #[test]
    fn decays_by_sqrt_e_at_one_length_scale() {
        let k = table_kernel();
        let r0 = k.eval(&[0.0, 0.0])[(0, 0)];
        let v = k.eval(&[0.025 * 0.6, 0.025 * 0.8])[(0, 0)];
        assert!((v - r0 * (-0.5f64).exp()).abs() < 1e-9 * r0);
    }

    #[test]
    fn even_in_offset() {
        use rand::Rng;
        let k = SquaredExponentialKernel::new(2.0, 0.3, 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let o: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
            let neg: Vec<f64> = o.iter().map(|x| -x).collect();
            assert_eq!(k.eval(&o), k.eval(&neg));
            assert_eq!(k.eval(&o), k.eval(&o).transpose());
        }
    }

    #[test]
    fn analytic_spectrum_values() {
        let k = table_kernel();
        let g = GridSpec::centered_cube(2, 0.5, 0.005).unwrap();
        let s = kernel_spectrum(&k, &g).unwrap();
        assert!(s.is_analytic());
        let zero = s.grid().nearest(&[0.0, 0.0]);
        assert!((s.values().at(zero)[0].re - 10.0).abs() < 1e-12);
        let w = k.analytic_spectrum(&[12.0, 16.0]).unwrap()[(0, 0)].re;
        assert!((w - 10.0 * (-4.934802200544679f64).exp()).abs() < 1e-12);
        s.check_hermitian_psd().unwrap();
        assert!(s.values().data().iter().all(|v| v.re > 0.0 && v.im == 0.0));
    }

    /// Kernel without a closed-form spectrum, forcing the numerical route.
    #[derive(Debug)]
    struct Numeric(SquaredExponentialKernel);

    impl StationaryKernel for Numeric {
        fn out_dim(&self) -> usize {
            self.0.out_dim()
        }
        fn eval_into(&self, offset: &[f64], out: &mut [f64]) {
            self.0.eval_into(offset, out)
        }
    }

    #[test]
    fn numerical_spectrum_matches_closed_form() {
        let k = table_kernel();
        let g = GridSpec::centered_cube(2, 0.5, 0.005).unwrap();
        let exact = kernel_spectrum(&k, &g).unwrap();
        let numeric = kernel_spectrum(&Numeric(k), &g).unwrap();
        assert!(!numeric.is_analytic());
        let dual = exact.grid().clone();
        let probe = dual.nearest(&[12.0, 16.0]);
        let diff = (numeric.values().at(probe)[0] - exact.values().at(probe)[0]).norm();
        assert!(diff < 1e-6, "{diff}");
        let worst = numeric
            .values()
            .data()
            .iter()
            .zip(exact.values().data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        assert!(worst < 1e-6, "{worst}");
        // total mass equals the quadrature of the kernel
        let sampled = RealField::from_fn(g, 1, 1, |p, o| k.eval_into(p, o));
        let mass = quadrature(&sampled)[(0, 0)];
        assert!((numeric.values().at(dual.nearest(&[0.0, 0.0]))[0].re - mass).abs() < 1e-6);
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(400), 400);
        assert_eq!(smooth_size(401), 405);
        assert_eq!(smooth_size(28), 30);
    }

    #[test]
    fn sampling_is_reproducible() {
        let k = table_kernel();
        let g = GridSpec::centered_cube(2, 0.1, 0.01).unwrap();
        let s = FieldSampler::new(&k, &g, SamplingMethod::Auto).unwrap();
        assert!(s.is_circulant());
        assert_eq!(s.sample(42), s.sample(42));
        assert_ne!(s.sample(42), s.sample(43));
        let (a, b) = s.sample_pair(42);
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_invalid_kernels() {
        assert!(SquaredExponentialKernel::new(0.0, 1.0, 2, 1).is_err());
        assert!(SquaredExponentialKernel::new(1.0, -1.0, 2, 1).is_err());
    }

    #[test]
    fn dense_factor_handles_singular_gram() {
        // two coincident points give a rank-one Gram matrix
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(c.clone()).unwrap();
        assert!((&l * l.transpose() - c).norm() < 1e-12);
    }

    /// Average of `v(x) v(x + offset)` over all in-grid pairs of a 2-D sample.
    fn lagged_product(sample: &FieldSample, di: usize, dj: usize) -> (f64, usize) {
        let counts = sample.grid().counts();
        let (nx, ny) = (counts[0], counts[1]);
        let v = sample.data();
        let mut acc = 0.0;
        let mut n = 0;
        for i in 0..nx - di {
            for j in 0..ny - dj {
                acc += v[i * ny + j] * v[(i + di) * ny + j + dj];
                n += 1;
            }
        }
        (acc, n)
    }

    #[test]
    fn sample_moments_match_kernel() {
        let kernel = table_kernel();
        let grid = GridSpec::centered_cube(2, 0.5, 0.005).unwrap();
        let sampler = FieldSampler::new(&kernel, &grid, SamplingMethod::Auto).unwrap();
        assert!(sampler.is_circulant());
        let r0 = kernel.peak();
        let pairs = 100;
        let probes = [grid.nearest(&[0.0, 0.0]), grid.nearest(&[0.3, -0.2]), grid.nearest(&[-0.45, 0.45])];
        let mut mean = [0.0; 3];
        let (mut var, mut var_n, mut lag, mut lag_n) = (0.0, 0, 0.0, 0);
        for seed in 0..pairs {
            let (a, b) = sampler.sample_pair(seed);
            for s in [&a, &b] {
                for (m, &p) in mean.iter_mut().zip(&probes) {
                    *m += s.at(p)[0] / (2 * pairs) as f64;
                }
                let (v, n) = lagged_product(s, 0, 0);
                var += v;
                var_n += n;
                // five grid steps is one length scale
                let (v, n) = lagged_product(s, 5, 0);
                lag += v;
                lag_n += n;
            }
        }
        let sd = (r0 / (2 * pairs) as f64).sqrt();
        for m in mean {
            assert!(m.abs() <= 4.0 * sd, "{m} vs {sd}");
        }
        let var = var / var_n as f64;
        let lag = lag / lag_n as f64;
        assert!((var / r0 - 1.0).abs() < 0.05, "{var} vs {r0}");
        let expect = r0 * (-0.5f64).exp();
        assert!((lag / expect - 1.0).abs() < 0.05, "{lag} vs {expect}");
    }

    #[test]
    fn short_kernel_decorrelates_neighbors() {
        let kernel = SquaredExponentialKernel::new(1.0, 0.002, 2, 1).unwrap();
        let grid = GridSpec::centered_cube(2, 0.5, 0.01).unwrap();
        let sampler = FieldSampler::new(&kernel, &grid, SamplingMethod::Auto).unwrap();
        let (a, b) = sampler.sample_pair(1);
        let mut zero = 0.0;
        let mut one = 0.0;
        for s in [&a, &b] {
            zero += lagged_product(s, 0, 0).0 / lagged_product(s, 0, 0).1 as f64;
            one += lagged_product(s, 1, 0).0 / lagged_product(s, 1, 0).1 as f64;
        }
        assert!((one / zero).abs() < 0.02, "{}", one / zero);
    }

    #[test]
    fn empirical_covariance_matches_gram_matrix() {
        let kernel = SquaredExponentialKernel::new(1.0, 0.02, 2, 1).unwrap();
        let grid = GridSpec::centered_cube(2, 0.07, 0.01).unwrap();
        assert_eq!(grid.len(), 225);
        let gram = gram_matrix(&kernel, &grid, &(0..grid.len()).collect::<Vec<_>>());
        let gram_norm = SymmetricEigen::new(gram.clone()).eigenvalues.max();
        for method in [SamplingMethod::CirculantEmbedding, SamplingMethod::DenseFactor] {
            let sampler = FieldSampler::new(&kernel, &grid, method).unwrap();
            let pairs = 10_000;
            let mut x = DMatrix::<f64>::zeros(grid.len(), 2 * pairs);
            for seed in 0..pairs {
                let (a, b) = sampler.sample_pair(seed as u64);
                x.column_mut(2 * seed).copy_from_slice(a.data());
                x.column_mut(2 * seed + 1).copy_from_slice(b.data());
            }
            let cov = &x * x.transpose() / (2 * pairs) as f64;
            let gap = SymmetricEigen::new(cov - &gram).eigenvalues.amax();
            assert!(gap < 0.05 * gram_norm, "{method:?}: {gap} vs {gram_norm}");
        }
    }
}
