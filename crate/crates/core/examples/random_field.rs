//! Draws the measurement noise field of the reference scenario and compares
//! its sample variance and lag-one-length-scale covariance with the kernel.
//!
//! cargo run --release --example random_field -- [pairs]

use fieldkalman::pinhole::PinholeScenario;
use fieldkalman::random_field::{FieldSampler, SamplingMethod, StationaryKernel};

fn main() -> fieldkalman::Result<()> {
    let pairs: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let scenario = PinholeScenario::default();
    let grid = scenario.grid()?;
    let kernel = scenario.kernel()?;
    let sampler = FieldSampler::new(&kernel, &grid, SamplingMethod::Auto)?;
    println!("{} points, circulant embedding: {}", grid.len(), sampler.is_circulant());

    let lag = (scenario.ell / scenario.spacing).round() as usize;
    let ny = grid.counts()[1];
    let (mut var, mut cov, mut n0, mut n1) = (0.0, 0.0, 0usize, 0usize);
    for seed in 0..pairs {
        let (a, b) = sampler.sample_pair(seed);
        for v in [a.data(), b.data()] {
            for (p, x) in v.iter().enumerate() {
                var += x * x;
                n0 += 1;
                if p % ny + lag < ny {
                    cov += x * v[p + lag];
                    n1 += 1;
                }
            }
        }
    }
    let r = |d: f64| kernel.eval(&[d, 0.0])[(0, 0)];
    println!("variance   {:.2} (kernel {:.2})", var / n0 as f64, r(0.0));
    println!("cov at ell {:.2} (kernel {:.2})", cov / n1 as f64, r(lag as f64 * scenario.spacing));
    Ok(())
}
