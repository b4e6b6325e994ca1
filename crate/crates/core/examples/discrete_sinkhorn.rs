//! Log-domain Sinkhorn on a small bounded-cost instance, then the solved bridge.

use bridgelab::discrete::{run_iterates, solve_bridge, StoppingRule};
use bridgelab::divergences::relative_entropy;
use bridgelab::harness::{generate_instance, Instance};

fn main() -> bridgelab::Result<()> {
    let Instance::Discrete(model) = generate_instance("bounded", &[5, 7], 42, Some(1.5))? else { unreachable!() };
    println!("ε_W = {:.4}", model.epsilon_w());

    for it in run_iterates(&model, 8)? {
        let he = relative_entropy(model.eta().weights(), it.pi_even.weights());
        let hm = relative_entropy(model.mu().weights(), it.pi_odd.weights());
        println!("n = {}: H(η|π_2n) = {he:.3e}  H(μ|π_2n+1) = {hm:.3e}", it.step);
    }

    let bridge = solve_bridge(&model, StoppingRule::default())?;
    println!("bridge after {} sweeps, Schrödinger residual {:.2e}", bridge.iterations_used, bridge.residual);
    let rows: Vec<f64> = (0..model.nx).map(|x| bridge.bridge.row(x).sum()).collect();
    println!("row sums {rows:.4?}");
    println!("μ        {:.4?}", model.mu().weights());
    Ok(())
}
