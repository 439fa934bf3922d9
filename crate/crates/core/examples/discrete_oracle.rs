//! The continuum filter against an ordinary Kalman filter on subsampled
//! pixel grids. The gap closes as the pixels get denser.
//!
//! cargo run --release --example discrete_oracle

use fieldkalman::experiment::prepare;
use fieldkalman::filter::predict_covariance;
use fieldkalman::oracle::{convergence_study, DEFAULT_DENSE_CAP};
use fieldkalman::pinhole::PinholeScenario;

fn main() -> fieldkalman::Result<()> {
    let scenario = PinholeScenario::default();
    let prepared = prepare(&scenario)?;
    let p_prior = predict_covariance(&scenario.p0(), prepared.model.a(), prepared.model.q());
    let study = convergence_study(&prepared.model, &prepared.precomp, &p_prior, &[20, 10, 5, 4], DEFAULT_DENSE_CAP)?;
    for l in &study.levels {
        println!(
            "stride {:>2}: {:>5} pixels, spacing {:.3}, covariance gap {:.2e}{}",
            l.stride,
            l.points,
            l.spacing,
            l.covariance_gap,
            if l.non_comparable { "  (noise nearly white between pixels)" } else { "" }
        );
    }
    println!("nonincreasing: {}", study.nonincreasing());
    Ok(())
}
