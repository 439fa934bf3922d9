//! Monte-Carlo mean squared error of the filter against its own covariance.
//! Trials run on the rayon pool; the result does not depend on its size.
//!
//! cargo run --release --example monte_carlo -- [trials]

use fieldkalman::pinhole::{PinholeScenario, PinholeSimulation, STEADY_STATE_FROM};

fn main() -> fieldkalman::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let sim = PinholeSimulation::new(PinholeScenario { trials, ..Default::default() })?;
    let table = sim.monte_carlo_mse()?;
    println!("{:>4} {:>10} {:>10} {:>10}", "k", "emp q", "theory q", "stderr");
    for row in table.rows.iter().step_by(10) {
        println!("{:>4} {:>10.4} {:>10.4} {:>10.4}", row.step, row.emp_mse[0], row.theo_mse[0], row.stderr[0]);
    }
    let (emp, theo) = table.steady_state(STEADY_STATE_FROM);
    println!("steady state over {trials} trials: position {:.4} / {:.4}, velocity {:.4} / {:.4}", emp[0], theo[0], emp[1], theo[1]);
    Ok(())
}
