//! Continuous Fourier transform approximated on uniform grids.
//!
//! With `x_n = x0 + n * dx` and dual frequencies `w_k = (k - floor(N/2)) / (N dx)`,
//!
//! ```text
//! F(w_k) = dx * exp(-2 pi j w_k x0) * DFT[f][(k - floor(N/2)) mod N]
//! f(x_n) = dw * IDFT[exp(+2 pi j w x0) F][n]            (unnormalized IDFT)
//! ```
//!
//! applied separably on every axis, so `forward_ct` approximates
//! `int f(x) exp(-2 pi j w.x) dx` and `inverse_ct` undoes it exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, GriddedFunction};

pub type ComplexField = GriddedFunction<Complex64>;

/// Separable N-d FFT over a row-major array with fixed axis lengths.
pub struct NdFft {
    counts: Vec<usize>,
    plans: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub fn new(counts: &[usize], direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        let plans = counts.iter().map(|&n| planner.plan_fft(n, direction)).collect();
        Self { counts: counts.to_vec(), plans }
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized transform in place.
    pub fn process(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len(), "NdFft length mismatch");
        let dim = self.counts.len();
        let scratch_len = self.plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        let mut lines = Vec::new();
        for axis in 0..dim {
            let n = self.counts[axis];
            let plan = &self.plans[axis];
            let stride: usize = self.counts[axis + 1..].iter().product();
            if stride == 1 {
                // lines along the last axis are contiguous and batched by rustfft
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            // gather LINE_BATCH adjacent lines at a time so reads stay contiguous
            let block = n * stride;
            for chunk in data.chunks_mut(block) {
                for first in (0..stride).step_by(LINE_BATCH) {
                    let width = LINE_BATCH.min(stride - first);
                    lines.resize(width * n, Complex64::new(0.0, 0.0));
                    for k in 0..n {
                        let row = &chunk[k * stride + first..k * stride + first + width];
                        for (j, v) in row.iter().enumerate() {
                            lines[j * n + k] = *v;
                        }
                    }
                    plan.process_with_scratch(&mut lines, &mut scratch);
                    for k in 0..n {
                        let row = &mut chunk[k * stride + first..k * stride + first + width];
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = lines[j * n + k];
                        }
                    }
                }
            }
        }
    }
}

/// Lines transformed together along a strided axis.
const LINE_BATCH: usize = 16;

/// Cyclic shift of a row-major array: `out[i] = data[(i + shift) mod N]` per axis.
fn roll(data: &[Complex64], counts: &[usize], shift: &[usize]) -> Vec<Complex64> {
    let dim = counts.len();
    let maps: Vec<Vec<usize>> = counts
        .iter()
        .zip(shift)
        .map(|(&n, &s)| (0..n).map(|k| (k + s) % n).collect())
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    let mut index = vec![0usize; dim];
    for (flat, o) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for a in (0..dim).rev() {
            index[a] = rem % counts[a];
            rem /= counts[a];
        }
        let src = index.iter().enumerate().fold(0, |acc, (a, &k)| acc * counts[a] + maps[a][k]);
        *o = data[src];
    }
    out
}

/// `exp(sign * 2 pi j w.x0)` at every point of the dual grid.
fn origin_phase(dual: &GridSpec, origin: &[f64], sign: f64) -> Vec<Complex64> {
    let axis_phase: Vec<Vec<Complex64>> = (0..dual.dim())
        .map(|a| {
            (0..dual.counts()[a])
                .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * dual.coordinate(a, k) * origin[a]))
                .collect()
        })
        .collect();
    let mut index = vec![0usize; dual.dim()];
    (0..dual.len())
        .map(|flat| {
            dual.unravel(flat, &mut index);
            index.iter().enumerate().map(|(a, &k)| axis_phase[a][k]).product()
        })
        .collect()
}

/// Continuous-transform approximation of every matrix entry of `f`.
///
/// The result lives on `f.grid().dual()`, frequencies in ascending order.
pub fn forward_ct<T>(f: &GriddedFunction<T>) -> ComplexField
where
    T: Copy + Into<Complex64> + num_traits::Zero,
{
    let grid = f.grid();
    let dual = grid.dual();
    let counts = grid.counts();
    let fft = NdFft::new(counts, FftDirection::Forward);
    let half: Vec<usize> = counts.iter().map(|&n| n - n / 2).collect();
    let phase = origin_phase(&dual, grid.lower(), -1.0);
    let scale = grid.cell_volume();
    let mut out = ComplexField::zeros(dual, f.rows(), f.cols());
    for r in 0..f.rows() {
        for c in 0..f.cols() {
            let mut buf: Vec<Complex64> = f.component(r, c).into_iter().map(Into::into).collect();
            fft.process(&mut buf);
            // ascending index k reads DFT bin (k - floor(N/2)) mod N = (k + ceil(N/2)) mod N
            let mut shifted = roll(&buf, counts, &half);
            for (v, ph) in shifted.iter_mut().zip(&phase) {
                *v *= ph * scale;
            }
            out.set_component(r, c, &shifted).expect("component length matches grid");
        }
    }
    out
}

/// Inverse of [`forward_ct`]: maps a spectrum on `target.dual()` back onto `target`.
pub fn inverse_ct(transform: &ComplexField, target: &GridSpec) -> Result<ComplexField> {
    let dual = target.dual();
    if *transform.grid() != dual {
        return Err(Error::Shape("spectrum is not on the dual of the target grid".into()));
    }
    let counts = target.counts();
    let fft = NdFft::new(counts, FftDirection::Inverse);
    let half: Vec<usize> = counts.iter().map(|&n| n / 2).collect();
    let phase = origin_phase(&dual, target.lower(), 1.0);
    let scale = dual.cell_volume();
    let mut out = ComplexField::zeros(target.clone(), transform.rows(), transform.cols());
    for r in 0..transform.rows() {
        for c in 0..transform.cols() {
            let weighted: Vec<Complex64> =
                transform.component(r, c).iter().zip(&phase).map(|(v, ph)| v * ph).collect();
            // DFT bin m holds ascending index (m + floor(N/2)) mod N
            let mut buf = roll(&weighted, counts, &half);
            fft.process(&mut buf);
            buf.iter_mut().for_each(|v| *v *= scale);
            out.set_component(r, c, &buf).expect("component length matches grid");
        }
    }
    Ok(out)
}

/// Riemann sum over a dual grid, the quadrature consistent with the discrete transform.
pub fn spectral_sum(values: impl Iterator<Item = Complex64>, dual: &GridSpec) -> Complex64 {
    values.sum::<Complex64>() * dual.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RealField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_frob(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    /// Direct Riemann sum of the continuous transform at one frequency.
    fn direct_ct(f: &RealField, w: &[f64]) -> Complex64 {
        let g = f.grid();
        (0..g.len())
            .map(|p| {
                let x = g.point(p);
                let arg: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                Complex64::from_polar(f.at(p)[0], -2.0 * PI * arg)
            })
            .sum::<Complex64>()
            * g.cell_volume()
    }

    #[test]
    fn matches_direct_quadrature_on_offset_grid() {
        let g = GridSpec::new(vec![-0.3, 0.1], vec![0.05, 0.07], vec![9, 6]).unwrap();
        let f = RealField::from_fn(g.clone(), 1, 1, |p, o| o[0] = (3.0 * p[0]).sin() + p[1] * p[1]);
        let transform = forward_ct(&f);
        let dual = g.dual();
        for k in 0..dual.len() {
            let w = dual.point(k);
            let expect = direct_ct(&f, &w);
            assert!((transform.at(k)[0] - expect).norm() < 1e-12, "freq {w:?}");
        }
    }

    #[test]
    fn constant_maps_to_origin_spike() {
        // half-open periodic box so the DFT of the constant is a pure delta
        let g = GridSpec::new(vec![-0.5, -0.5], vec![0.01, 0.01], vec![100, 100]).unwrap();
        let one = RealField::from_fn(g.clone(), 1, 1, |_, o| o[0] = 1.0);
        let transform = forward_ct(&one);
        let zero = transform.grid().nearest(&[0.0, 0.0]);
        assert!((transform.at(zero)[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        for k in (0..g.len()).filter(|&k| k != zero) {
            assert!(transform.at(k)[0].norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let g = GridSpec::new(vec![-1.0, 0.25], vec![0.1, 0.03], vec![17, 24]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = ComplexField::from_fn(g.clone(), 2, 1, |_, o| {
            o[0] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            o[1] = Complex64::new(rng.random::<f64>(), 0.0);
        });
        let back = inverse_ct(&forward_ct(&f), &g).unwrap();
        assert!(rel_frob(back.data(), f.data()) < 1e-10);
    }

    #[test]
    fn zero_spectrum_gives_zero() {
        let g = GridSpec::centered_cube(2, 0.5, 0.1).unwrap();
        let transform = ComplexField::zeros(g.dual(), 1, 1);
        let f = inverse_ct(&transform, &g).unwrap();
        assert!(f.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rejects_foreign_spectrum() {
        let g = GridSpec::centered_cube(1, 0.5, 0.1).unwrap();
        let transform = ComplexField::zeros(g.clone(), 1, 1);
        assert!(inverse_ct(&transform, &g).is_err());
    }

    #[test]
    fn linearity() {
        let g = GridSpec::centered_cube(2, 0.5, 0.05).unwrap();
        let f = RealField::from_fn(g.clone(), 1, 1, |p, o| o[0] = (p[0] - p[1]).cos());
        let h = RealField::from_fn(g.clone(), 1, 1, |p, o| o[0] = p[0] * p[1].exp());
        let (a, b) = (1.7, -0.3);
        let mix = RealField::from_fn(g, 1, 1, |p, o| {
            o[0] = a * (p[0] - p[1]).cos() + b * p[0] * p[1].exp();
        });
        let lhs = forward_ct(&mix);
        let (fa, fb) = (forward_ct(&f), forward_ct(&h));
        let rhs: Vec<Complex64> = fa.data().iter().zip(fb.data()).map(|(x, y)| a * x + b * y).collect();
        assert!(rel_frob(lhs.data(), &rhs) < 1e-13);
    }

    #[test]
    fn sinusoid_peaks_at_its_frequency() {
        let w0 = 4.0;
        let g = GridSpec::new(vec![-0.5], vec![1.0 / 64.0], vec![64]).unwrap();
        let f = RealField::from_fn(g, 1, 1, |p, o| o[0] = (2.0 * PI * w0 * p[0]).cos());
        let transform = forward_ct(&f);
        let dual = transform.grid().clone();
        let plus = dual.nearest(&[w0]);
        let minus = dual.nearest(&[-w0]);
        for k in 0..dual.len() {
            let expect = direct_ct(&f, &dual.point(k));
            assert!((transform.at(k)[0] - expect).norm() < 1e-12);
        }
        assert!((transform.at(plus)[0].norm() - 0.5).abs() < 1e-12);
        assert!((transform.at(minus)[0].norm() - 0.5).abs() < 1e-12);
    }
}
