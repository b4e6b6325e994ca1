//! Entropy and Wasserstein envelopes, the strongly convex covariance sandwich, and potential Hessians.

use bridgelab::gaussian::{envelope_report, gaussian_trajectory, potential_hessian, schrodinger_bridge_gaussian, strongly_convex_covariance_envelope, GaussianModel};
use bridgelab::harness::{generate_instance, Instance};

fn main() -> bridgelab::Result<()> {
    let Instance::Gaussian(base) = generate_instance("gaussian-random-spd", &[2], 3, None)? else { unreachable!() };
    // shrink β so that κ√(ρρ̄) < 1 and the Wasserstein decay applies too
    let mut inst = base.to_instance();
    inst.beta.iter_mut().for_each(|b| *b *= 0.3);
    let model = GaussianModel::from_instance(&inst)?;

    let bridge = schrodinger_bridge_gaussian(&model)?;
    let traj = gaussian_trajectory(&model, 41)?;
    let env = envelope_report(&model, &traj, &bridge)?;
    println!("κ = {:.4}, ρ = {:.4}, ρ̄ = {:.4}, ε = {:.4}", env.kappa, env.rho, env.rho_bar, env.epsilon);
    for n in 0..5 {
        println!("I_{} = {:.3e}   W2(π_2n, η) = {:.3e}", 2 * n, env.entropies[2 * n], env.w2_even[n]);
    }
    println!("{} envelope rows, all pass: {}", env.diagnostics.rows.len(), env.diagnostics.all_pass());

    let (s, sb) = (&model.mu.cov, &model.eta.cov);
    let s_minus = s.as_sym().scale(0.5).to_spd()?;
    let cov = strongly_convex_covariance_envelope(s, &s_minus, sb, sb, &model.kernel, 6)?;
    for n in 0..=6 {
        println!("step {n}: tr τ_n− = {:.4} ≤ tr τ_n = {:.4}", cov.lower[n].trace(), cov.upper[n].trace());
    }

    let h = potential_hessian(&traj[2], &model)?;
    println!("∇²U_2 =\n{:.5}", h.hess_u.matrix());
    println!("curvature bounds hold: {}", h.curvature_ok);
    Ok(())
}
