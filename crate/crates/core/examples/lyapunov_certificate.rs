//! A uniform Lyapunov certificate (a, ϱ) for the Sinkhorn kernels of a bounded-cost instance.

use bridgelab::contraction::{default_grid, lyapunov_search, weighted_decay_varying};
use bridgelab::discrete::run_iterates;
use bridgelab::divergences::DiscreteMeasure;
use bridgelab::harness::{generate_instance, lyapunov_certificate_input, Instance};

fn main() -> bridgelab::Result<()> {
    let Instance::Discrete(model) = generate_instance("bounded", &[10, 10], 9, None)? else { unreachable!() };
    let iterates = run_iterates(&model, 21)?;
    let input = lyapunov_certificate_input(&model, &iterates, 0.25);

    let cert = match lyapunov_search(&input, &default_grid())? {
        Ok(c) => c,
        Err(f) => {
            println!("no certificate on the grid; best ϱ = {:.4}", f.best_rho);
            return Ok(());
        }
    };
    println!("a = {:.3e}, ϱ = {:.4}, drift c = {:.4}, verified: {}", cert.a, cert.rho, cert.c, cert.verify(&input)?);
    for row in cert.iota_table.rows.iter().take(4) {
        println!("level {:.3}: ι = {:.4}, mass {:.4}", row.level, row.iota, row.mass);
    }

    let g_a: Vec<f64> = input.g.iter().map(|g| 0.5 + cert.a * g).collect();
    let decay = weighted_decay_varying(&input.pairs[..10], &DiscreteMeasure::dirac(10, 0), &DiscreteMeasure::dirac(10, 9), &g_a)?;
    for (n, d) in decay.iter().enumerate() {
        println!("n = {n:>2}: ||δ_n||_g = {d:.3e}  ϱ^2n ||δ_0||_g = {:.3e}", cert.rho.powi(2 * n as i32) * decay[0]);
    }
    Ok(())
}
