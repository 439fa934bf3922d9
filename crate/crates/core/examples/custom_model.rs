//! Building a model by hand: a 1-D scalar field observing a constant-velocity
//! target through a Gaussian-bump sensitivity profile, filtered end to end.
//!
//! cargo run --release --example custom_model

use std::sync::Arc;

use fieldkalman::filter::{run_filter, FilterState, SystemModel};
use fieldkalman::gain::{GainPrecomputation, RegularizationPolicy};
use fieldkalman::grid::{GridSpec, RealField};
use fieldkalman::random_field::{FieldSampler, SamplingMethod, SquaredExponentialKernel};
use nalgebra::{DMatrix, DVector};

fn main() -> fieldkalman::Result<()> {
    let grid = GridSpec::centered_cube(1, 2.0, 0.01)?;
    // position shows up through a bump, velocity through its derivative
    let gamma = RealField::from_fn(grid.clone(), 1, 2, |p, out| {
        let bump = (-p[0] * p[0] / 0.05).exp();
        out[0] = bump;
        out[1] = -p[0] * bump;
    });
    let kernel = SquaredExponentialKernel::new(0.5, 0.05, 1, 1)?;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-3, 1e-2]));
    let model = SystemModel::new(a, q, gamma, Arc::new(kernel))?;
    let pre = GainPrecomputation::new(&model, RegularizationPolicy::default())?;
    println!("S = {:.5}", pre.s());

    let sampler = FieldSampler::new(&kernel, &grid, SamplingMethod::Auto)?;
    let mut x = DVector::from_vec(vec![0.0, 1.0]);
    let mut truth = Vec::new();
    let mut measurements = Vec::new();
    for k in 0..40 {
        x = model.a() * &x;
        let mut z = sampler.sample(k);
        for p in 0..grid.len() {
            let g = model.gamma().at(p);
            z.at_mut(p)[0] += g[0] * x[0] + g[1] * x[1];
        }
        truth.push(x.clone());
        measurements.push(z);
    }
    let init = FilterState::initial(DVector::zeros(2), DMatrix::identity(2, 2))?;
    let states = run_filter(&model, &pre, &measurements, init)?;
    for (k, (x, s)) in truth.iter().zip(&states[1..]).enumerate().step_by(8) {
        println!("k={k:>2} truth {:+.3} {:+.3}  estimate {:+.3} {:+.3}", x[0], x[1], s.x_hat[0], s.x_hat[1]);
    }
    Ok(())
}
