//! Uniform rectangular grids and matrix-valued functions sampled on them.

use nalgebra::{DMatrix, Scalar};
use num_traits::Zero;

use crate::error::{Error, Result};

/// Uniform sampling of a box in `R^d`.
///
/// Axis `a` holds the points `lower[a] + k * spacing[a]` for `k in 0..counts[a]`.
/// Flat indices are row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lower: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, spacing: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let dim = counts.len();
        if dim == 0 || lower.len() != dim || spacing.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "lower/spacing/counts lengths {}/{}/{} must agree and be nonzero",
                lower.len(),
                spacing.len(),
                dim
            )));
        }
        if let Some(s) = spacing.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidGrid(format!("spacing {s} must be finite and positive")));
        }
        if let Some(x) = lower.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid(format!("lower bound {x} is not finite")));
        }
        if let Some(n) = counts.iter().find(|n| **n < 2) {
            return Err(Error::InvalidGrid(format!("axis count {n} must be at least 2")));
        }
        counts
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&total| total <= isize::MAX as usize)
            .ok_or_else(|| Error::InvalidGrid("total sample count overflows".into()))?;
        Ok(Self { lower, spacing, counts })
    }

    /// Grid covering `[lower, upper]` per axis, endpoints included.
    ///
    /// The count per axis is `round(extent / spacing) + 1`; the upper end is
    /// hit exactly when the extent is a multiple of the spacing.
    pub fn covering(lower: &[f64], upper: &[f64], spacing: f64) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidGrid("lower and upper bounds differ in dimension".into()));
        }
        let counts = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| {
                let extent = u - l;
                if !(extent > 0.0) || !(spacing > 0.0) {
                    return Err(Error::InvalidGrid(format!(
                        "extent {extent} and spacing {spacing} must be positive"
                    )));
                }
                Ok((extent / spacing).round() as usize + 1)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(lower.to_vec(), vec![spacing; lower.len()], counts)
    }

    /// `[-half_width, half_width]^dim` at the given spacing.
    pub fn centered_cube(dim: usize, half_width: f64, spacing: f64) -> Result<Self> {
        Self::covering(&vec![-half_width; dim], &vec![half_width; dim], spacing)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Largest coordinate on axis `a`.
    pub fn upper(&self, a: usize) -> f64 {
        self.lower[a] + (self.counts[a] - 1) as f64 * self.spacing[a]
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Product of the axis spacings.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        self.lower[axis] + k as f64 * self.spacing[axis]
    }

    pub fn unravel(&self, mut flat: usize, index: &mut [usize]) {
        for a in (0..self.dim()).rev() {
            index[a] = flat % self.counts[a];
            flat /= self.counts[a];
        }
    }

    pub fn ravel(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.counts).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Writes the coordinates of flat point `flat` into `out`.
    pub fn point_into(&self, mut flat: usize, out: &mut [f64]) {
        for a in (0..self.dim()).rev() {
            let k = flat % self.counts[a];
            flat /= self.counts[a];
            out[a] = self.coordinate(a, k);
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(flat, &mut p);
        p
    }

    /// Flat index of the grid point nearest to `p` (clamped to the grid).
    pub fn nearest(&self, p: &[f64]) -> usize {
        let index: Vec<usize> = (0..self.dim())
            .map(|a| {
                let k = ((p[a] - self.lower[a]) / self.spacing[a]).round();
                k.clamp(0.0, (self.counts[a] - 1) as f64) as usize
            })
            .collect();
        self.ravel(&index)
    }

    /// Frequency grid matching the discrete Fourier transform of this grid.
    ///
    /// Axis `a` has spacing `1 / (N_a * spacing_a)` and holds the frequencies
    /// `(k - floor(N_a / 2)) / (N_a * spacing_a)` in ascending order, so it
    /// spans `[-1/(2 spacing_a), 1/(2 spacing_a))`.
    pub fn dual(&self) -> GridSpec {
        let (lower, spacing) = self
            .counts
            .iter()
            .zip(&self.spacing)
            .map(|(&n, &d)| {
                let dw = 1.0 / (n as f64 * d);
                (-((n / 2) as f64) * dw, dw)
            })
            .unzip();
        GridSpec { lower, spacing, counts: self.counts.clone() }
    }

    /// Per-point weights of the tensor-product trapezoidal rule.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let axis_weights: Vec<Vec<f64>> = self
            .counts
            .iter()
            .zip(&self.spacing)
            .map(|(&n, &d)| {
                let mut w = vec![d; n];
                if n > 1 {
                    w[0] = 0.5 * d;
                    w[n - 1] = 0.5 * d;
                }
                w
            })
            .collect();
        let mut index = vec![0usize; self.dim()];
        (0..self.len())
            .map(|flat| {
                self.unravel(flat, &mut index);
                index.iter().enumerate().map(|(a, &k)| axis_weights[a][k]).product()
            })
            .collect()
    }

    /// Keeps every `stride`-th point along each axis, starting from the lower corner.
    pub fn subsample(&self, stride: usize) -> Result<(GridSpec, Vec<usize>)> {
        if stride == 0 {
            return Err(Error::InvalidGrid("stride must be at least 1".into()));
        }
        let counts: Vec<usize> = self.counts.iter().map(|&n| (n - 1) / stride + 1).collect();
        let spacing: Vec<f64> = self.spacing.iter().map(|d| d * stride as f64).collect();
        // May hold a single point per axis, which `new` would reject.
        let sub = GridSpec { lower: self.lower.clone(), spacing, counts };
        let mut index = vec![0usize; self.dim()];
        let parent: Vec<usize> = (0..sub.len())
            .map(|flat| {
                sub.unravel(flat, &mut index);
                index.iter_mut().for_each(|k| *k *= stride);
                self.ravel(&index)
            })
            .collect();
        Ok((sub, parent))
    }
}

/// A matrix-valued function sampled on a grid.
///
/// Values are stored point-major, each point holding a row-major `rows x cols` block.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedFunction<T> {
    grid: GridSpec,
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RealField = GriddedFunction<f64>;

impl<T: Copy + Zero> GriddedFunction<T> {
    pub fn zeros(grid: GridSpec, rows: usize, cols: usize) -> Self {
        let data = vec![T::zero(); grid.len() * rows * cols];
        Self { grid, rows, cols, data }
    }

    pub fn from_values(grid: GridSpec, rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("matrix shape must be nonempty".into()));
        }
        if data.len() != grid.len() * rows * cols {
            return Err(Error::Shape(format!(
                "{} values for {} points of shape {rows}x{cols}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, rows, cols, data })
    }

    /// Samples `f(point, out)` at every grid point; `out` is the row-major block.
    pub fn from_fn(
        grid: GridSpec,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(&[f64], &mut [T]),
    ) -> Self {
        let mut out = Self::zeros(grid, rows, cols);
        let mut p = vec![0.0; out.grid.dim()];
        let block = rows * cols;
        for (flat, chunk) in out.data.chunks_mut(block).enumerate() {
            out.grid.point_into(flat, &mut p);
            f(&p, chunk);
        }
        out
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major block at flat point `p`.
    pub fn at(&self, p: usize) -> &[T] {
        let b = self.block_len();
        &self.data[p * b..(p + 1) * b]
    }

    pub fn at_mut(&mut self, p: usize) -> &mut [T] {
        let b = self.block_len();
        &mut self.data[p * b..(p + 1) * b]
    }

    /// Entry `(r, c)` at every grid point.
    pub fn component(&self, r: usize, c: usize) -> Vec<T> {
        let b = self.block_len();
        let off = r * self.cols + c;
        self.data.iter().skip(off).step_by(b).copied().collect()
    }

    pub fn set_component(&mut self, r: usize, c: usize, values: &[T]) -> Result<()> {
        if values.len() != self.grid.len() {
            return Err(Error::Shape(format!(
                "component of length {} for grid of {} points",
                values.len(),
                self.grid.len()
            )));
        }
        let b = self.block_len();
        let off = r * self.cols + c;
        for (dst, v) in self.data.iter_mut().skip(off).step_by(b).zip(values) {
            *dst = *v;
        }
        Ok(())
    }

    pub fn map<U: Copy + Zero>(&self, f: impl Fn(T) -> U) -> GriddedFunction<U> {
        GriddedFunction {
            grid: self.grid.clone(),
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn check_same_grid<U>(&self, other: &GriddedFunction<U>) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape("functions live on different grids".into()));
        }
        Ok(())
    }
}

impl<T: Copy + Zero + Scalar> GriddedFunction<T> {
    pub fn matrix_at(&self, p: usize) -> DMatrix<T> {
        DMatrix::from_row_slice(self.rows, self.cols, self.at(p))
    }
}

impl GriddedFunction<f64> {
    /// Pointwise product `self(i) * rhs(i)`.
    pub fn pointwise_product(&self, rhs: &RealField) -> Result<RealField> {
        self.check_same_grid(rhs)?;
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = RealField::zeros(self.grid.clone(), n, m);
        for p in 0..self.grid.len() {
            let a = self.at(p);
            let b = rhs.at(p);
            let o = out.at_mut(p);
            for r in 0..n {
                for c in 0..m {
                    o[r * m + c] = (0..k).map(|t| a[r * k + t] * b[t * m + c]).sum();
                }
            }
        }
        Ok(out)
    }

    /// Left-multiplies every block by the constant matrix `lhs`.
    pub fn left_mul(&self, lhs: &DMatrix<f64>) -> Result<RealField> {
        if lhs.ncols() != self.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                lhs.nrows(),
                lhs.ncols(),
                self.rows,
                self.cols
            )));
        }
        let (n, k, m) = (lhs.nrows(), self.rows, self.cols);
        let mut out = RealField::zeros(self.grid.clone(), n, m);
        for p in 0..self.grid.len() {
            let b = self.at(p);
            let o = out.at_mut(p);
            for r in 0..n {
                for c in 0..m {
                    o[r * m + c] = (0..k).map(|t| lhs[(r, t)] * b[t * m + c]).sum();
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> RealField {
        self.map(|v| alpha * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Trapezoidal approximation of the integral of `f` over its grid, entrywise.
pub fn quadrature(f: &RealField) -> DMatrix<f64> {
    weighted_sum(f, &f.grid().trapezoid_weights())
}

/// `sum_p w[p] * f(p)` over grid points; `w` must have one weight per point.
pub fn weighted_sum(f: &RealField, weights: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(weights.len(), f.grid().len());
    let b = f.block_len();
    let mut acc = vec![0.0; b];
    for (chunk, w) in f.data().chunks(b).zip(weights) {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += w * v;
        }
    }
    DMatrix::from_row_slice(f.rows(), f.cols(), &acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_includes_endpoints() {
        let g = GridSpec::centered_cube(2, 0.5, 0.005).unwrap();
        assert_eq!(g.counts(), &[201, 201]);
        assert!((g.upper(0) - 0.5).abs() < 1e-12);
        assert_eq!(g.len(), 201 * 201);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(vec![0.0], vec![0.0], vec![4]).is_err());
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(GridSpec::new(vec![0.0, 1.0], vec![1.0], vec![3]).is_err());
        assert!(GridSpec::new(vec![0.0; 3], vec![1.0; 3], vec![usize::MAX / 2, 4, 4]).is_err());
    }

    #[test]
    fn dual_grid_spans_half_open_band() {
        for n in [200usize, 201] {
            let g = GridSpec::new(vec![-0.5], vec![0.005], vec![n]).unwrap();
            let d = g.dual();
            let nyq = 1.0 / (2.0 * 0.005);
            assert!((d.spacing()[0] - 1.0 / (n as f64 * 0.005)).abs() < 1e-12);
            assert!(d.lower()[0] >= -nyq - 1e-9);
            assert!(d.upper(0) < nyq);
            // zero frequency sits at index floor(n/2)
            assert!(d.coordinate(0, n / 2).abs() < 1e-12);
        }
    }

    #[test]
    fn ravel_roundtrip_and_points() {
        let g = GridSpec::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.25], vec![3, 4, 5]).unwrap();
        let mut idx = vec![0; 3];
        for flat in 0..g.len() {
            g.unravel(flat, &mut idx);
            assert_eq!(g.ravel(&idx), flat);
            let p = g.point(flat);
            assert_eq!(g.nearest(&p), flat);
        }
        assert_eq!(g.point(g.ravel(&[2, 3, 4])), vec![2.0, 2.5, 3.0]);
    }

    #[test]
    fn quadrature_of_constant_is_area() {
        let g = GridSpec::centered_cube(2, 0.5, 0.005).unwrap();
        let one = RealField::from_fn(g, 1, 1, |_, o| o[0] = 1.0);
        assert!((quadrature(&one)[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_of_odd_product_vanishes() {
        let g = GridSpec::centered_cube(2, 0.5, 0.005).unwrap();
        let xy = RealField::from_fn(g, 1, 1, |p, o| o[0] = p[0] * p[1]);
        assert!(quadrature(&xy)[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn gaussian_mass_by_quadrature() {
        let (nu, ell) = (10.0, 0.025);
        let g = GridSpec::centered_cube(2, 0.5, 0.005).unwrap();
        let k = RealField::from_fn(g, 1, 1, |p, o| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            o[0] = nu / (2.0 * std::f64::consts::PI * ell * ell) * (-r2 / (2.0 * ell * ell)).exp();
        });
        assert!((quadrature(&k)[(0, 0)] - nu).abs() < 1e-3);
    }

    #[test]
    fn quadrature_converges_at_second_order() {
        // smooth, non-periodic integrand on [0, 1]^2
        let exact = (1.0f64.exp() - 1.0) * (1.0 - 1.0f64.cos());
        let errs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&h| {
                let g = GridSpec::covering(&[0.0, 0.0], &[1.0, 1.0], h).unwrap();
                let f = RealField::from_fn(g, 1, 1, |p, o| o[0] = p[0].exp() * p[1].sin());
                (quadrature(&f)[(0, 0)] - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!(slope >= 1.9, "slope {slope}");
        }
    }

    #[test]
    fn subsample_picks_strided_points() {
        let g = GridSpec::centered_cube(2, 0.5, 0.05).unwrap();
        let (sub, parent) = g.subsample(5).unwrap();
        assert_eq!(sub.counts(), &[5, 5]);
        for (flat, &p) in parent.iter().enumerate() {
            let a = sub.point(flat);
            let b = g.point(p);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_product_shapes() {
        let g = GridSpec::centered_cube(1, 1.0, 0.5).unwrap();
        let a = RealField::from_fn(g.clone(), 2, 1, |p, o| {
            o[0] = p[0];
            o[1] = 1.0;
        });
        let b = RealField::from_fn(g, 1, 2, |p, o| {
            o[0] = 2.0;
            o[1] = p[0];
        });
        let ab = a.pointwise_product(&b).unwrap();
        assert_eq!((ab.rows(), ab.cols()), (2, 2));
        assert_eq!(ab.at(0), &[-2.0, 1.0, 2.0, -1.0]);
        assert!(b.pointwise_product(&b).is_err());
    }
}
