//! Gaussian Sinkhorn covariances follow a Riccati flow to the fixed point r.

use bridgelab::gaussian::{gaussian_trajectory, riccati_fixed_point, GaussianInstance, GaussianModel, RiccatiProblem};

fn main() -> bridgelab::Result<()> {
    // σ = σ̄ = τ = β = 1: ϖ = 1 and r solves r² + r = 1
    let golden = GaussianInstance { m: vec![0.0], sigma: vec![1.0], m_bar: vec![0.0], sigma_bar: vec![1.0], alpha: vec![0.0], beta: vec![1.0], tau: vec![1.0] };
    let model = GaussianModel::from_instance(&golden)?;
    let problem = RiccatiProblem::from_model(&model)?;
    let r = riccati_fixed_point(&problem.varpi);
    println!("ϖ = {:.6}, r = {:.12}", problem.varpi.matrix()[(0, 0)], r.matrix()[(0, 0)]);

    let traj = gaussian_trajectory(&model, 24)?;
    let mut v = traj[0].upsilon.clone();
    for s in traj.iter().filter(|s| s.is_even()).skip(1) {
        v = problem.apply(v.as_sym())?;
        println!("n = {:>2}: υ_2n = {:.12}  Ricc^n = {:.12}", s.step / 2, s.upsilon.matrix()[(0, 0)], v.matrix()[(0, 0)]);
    }
    Ok(())
}
