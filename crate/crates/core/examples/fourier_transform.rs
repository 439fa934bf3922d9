//! Continuous Fourier transform of a sampled Gaussian, checked against its
//! closed form, and the round trip back to the grid.
//!
//! cargo run --release --example fourier_transform

use std::f64::consts::PI;

use fieldkalman::fourier::{forward_ct, inverse_ct};
use fieldkalman::grid::{GridSpec, RealField};

fn main() -> fieldkalman::Result<()> {
    // off-center grid: the transform accounts for the lower corner as origin
    let grid = GridSpec::new(vec![-4.0, -3.5], vec![0.05, 0.05], vec![161, 151])?;
    let f = RealField::from_fn(grid.clone(), 1, 1, |p, out| {
        out[0] = (-PI * (p[0] * p[0] + p[1] * p[1])).exp();
    });

    let spectrum = forward_ct(&f);
    let dual = spectrum.grid();
    println!("grid {:?} -> dual spacing {:.4?}", grid.counts(), dual.spacing());
    for w in [[0.0, 0.0], [0.5, 0.0], [1.0, -1.0], [2.0, 1.5]] {
        let k = dual.nearest(&w);
        let at = dual.point(k);
        let exact = (-PI * (at[0] * at[0] + at[1] * at[1])).exp();
        let got = spectrum.at(k)[0];
        println!("F({:+.3}, {:+.3}) = {:.8} {:+.1e}i   exact {:.8}", at[0], at[1], got.re, got.im, exact);
    }

    let back = inverse_ct(&spectrum, &grid)?;
    let err = f.data().iter().zip(back.data()).map(|(a, b)| (a - b.re).abs().max(b.im.abs())).fold(0.0, f64::max);
    println!("round trip max error {err:.2e}");
    Ok(())
}
