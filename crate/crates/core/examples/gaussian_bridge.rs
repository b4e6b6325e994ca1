//! Closed-form Gaussian Schrödinger bridge, its transport check and the entropy formula.

use bridgelab::gaussian::{bridge_entropy, gaussian_trajectory, joint_entropy_oracle, push_forward, rate_report, schrodinger_bridge_gaussian};
use bridgelab::harness::{generate_instance, Instance};

fn main() -> bridgelab::Result<()> {
    let Instance::Gaussian(model) = generate_instance("gaussian-random-spd", &[3], 17, None)? else { unreachable!() };
    let bridge = schrodinger_bridge_gaussian(&model)?;
    println!("ς =\n{:.6}", bridge.varsigma.matrix());

    let pushed = push_forward(&model.mu, &bridge.kernel)?;
    println!("|μ-push mean − m̄| = {:.2e}", (&pushed.mean - &model.eta.mean).amax());
    println!("|μ-push cov − σ̄|_F = {:.2e}", (pushed.cov.matrix() - model.eta.cov.matrix()).norm());

    let traj = gaussian_trajectory(&model, 81)?;
    for s in traj.iter().filter(|s| s.is_even()).take(6) {
        let f = bridge_entropy(s, &bridge, &model)?;
        let o = joint_entropy_oracle(s, &bridge, &model)?;
        println!("n = {}: H(𝒫_2n|P) = {f:.6e} (joint KL {o:.6e})", s.step / 2);
    }

    let rates = rate_report(&traj, &bridge, &model)?;
    if let Some(f) = rates.fit {
        println!("log||τ_2n − ς|| slope {:.4}, bound {:.4}", f.slope, rates.theoretical_slope);
    }
    Ok(())
}
