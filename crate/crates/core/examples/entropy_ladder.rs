//! The entropy ladder: H(Q|P) splits into H(Q|𝒫_2n) plus the marginal entropies paid so far.

use bridgelab::discrete::{entropy_ladder, run_iterates, solve_bridge, StoppingRule};
use bridgelab::harness::{generate_instance, Instance};

fn main() -> bridgelab::Result<()> {
    let Instance::Discrete(model) = generate_instance("quadratic-grid", &[6, 6], 1, Some(0.05))? else { unreachable!() };
    let iterates = run_iterates(&model, 12)?;
    let q = solve_bridge(&model, StoppingRule::default())?.bridge;
    let ladder = entropy_ladder(&model, &iterates, &q)?;

    println!("H(Q|P) = {:.6}", ladder.h_qp);
    println!("{:>3} {:>12} {:>12} {:>10}", "n", "H(Q|𝒫_2n)", "paid", "residual");
    for r in &ladder.rows {
        println!("{:>3} {:>12.6e} {:>12.6e} {:>10.1e}", r.n, r.h_q_even, r.partial_sum, r.residual);
    }
    println!("worst residual {:.2e}", ladder.max_residual());
    Ok(())
}
