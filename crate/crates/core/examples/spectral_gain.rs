//! Gain kernel `f`, information matrix `S` and its square root for the
//! reference pinhole scenario, with the band-mask diagnostics.
//!
//! cargo run --release --example spectral_gain

use fieldkalman::gain::GainPrecomputation;
use fieldkalman::pinhole::PinholeScenario;

fn main() -> fieldkalman::Result<()> {
    let scenario = PinholeScenario::default();
    let model = scenario.model()?;
    let pre = GainPrecomputation::new(&model, scenario.policy())?;
    let spectral = pre.spectral();

    println!("retained frequencies   {:.1}%", 100.0 * pre.retained_fraction());
    println!("discarded energy       {:.2e}", spectral.discarded_energy);
    println!("imaginary residue      {:.2e}", spectral.imaginary_residue);
    println!("boundary/peak of gamma {:.2e}", spectral.edge_ratio);
    println!("S (spatial)  = {:.8}", pre.s());
    println!("S (spectral) = {:.8}", pre.s_spectral());
    println!("G = S^(1/2)  = {:.8}", pre.g());

    let f = pre.f();
    let centre = model.grid().nearest(&[0.0, 0.0]);
    let edge = model.grid().nearest(&[0.3, 0.0]);
    println!("f(0, 0)   = {:?}", f.at(centre));
    println!("f(0.3, 0) = {:?}", f.at(edge));
    Ok(())
}
