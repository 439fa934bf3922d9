//! One trial of the pinhole camera tracking problem: truth, estimate and the
//! filter's predicted standard deviation at every step.
//!
//! cargo run --release --example pinhole_trial -- [seed]

use fieldkalman::pinhole::{PinholeScenario, PinholeSimulation};

fn main() -> fieldkalman::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let sim = PinholeSimulation::new(PinholeScenario::default())?;
    let run = sim.run_trial(sim.trial_seed(seed as usize))?;
    println!("{:>4} {:>9} {:>9} {:>7}", "k", "q", "q_hat", "sd");
    for (k, (x, est)) in run.truth.iter().zip(&run.estimates).enumerate().step_by(5) {
        println!("{k:>4} {:>9.4} {:>9.4} {:>7.4}", x[0], est.x_hat[0], est.p[(0, 0)].sqrt());
    }
    Ok(())
}
