//! Stabilizability and detectability of the reference scenario and the
//! steady-state solution of its Riccati recursion.
//!
//! cargo run --release --example steady_state

use fieldkalman::experiment::{prepare, steady_state, ExperimentConfig};
use fieldkalman::riccati::{is_detectable, is_stabilizable};

fn main() -> fieldkalman::Result<()> {
    let cfg = ExperimentConfig::default();
    let prepared = prepare(&cfg.scenario)?;
    let (a, q, g) = (prepared.model.a(), prepared.model.q(), prepared.precomp.g());
    println!("(A, Q) stabilizable: {}", is_stabilizable(a, q));
    println!("(A, G) detectable:   {}", is_detectable(a, g));

    let report = steady_state(&cfg, &prepared)?;
    let ss = &report.steady;
    println!("S[0][0] = {:.8}", report.g1());
    println!("P-_inf = {:.6}", ss.p_prior_inf);
    println!("P_inf  = {:.6}", ss.p_post_inf);
    println!(
        "{} iterations, fixed-point residual {:.1e}, closed-loop radius {:.6}",
        ss.iterations, ss.residual, ss.closed_loop_radius
    );
    Ok(())
}
