//! Dobrushin coefficients, Φ-entropy contraction and weighted Lipschitz norms.

use bridgelab::contraction::{dobrushin, lip_norm, phi_contraction_probe, WeightPair};
use bridgelab::divergences::PhiFunction;
use nalgebra::DMatrix;

fn main() -> bridgelab::Result<()> {
    let k = DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.2, 0.7]);
    let dob = dobrushin(&k)?;
    println!("dob(K) = {dob:.4}, dob(K²) = {:.4} ≤ dob(K)² = {:.4}", dobrushin(&(&k * &k))?, dob * dob);

    for phi in PhiFunction::CATALOG {
        let probe = phi_contraction_probe(&k, &phi, 500, 7)?;
        println!("{:<10} worst ratio {:.4} over {} samples, violations {}", probe.phi, probe.max_ratio, probe.samples, probe.violations.len());
    }

    let w = WeightPair::new(vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 4.0], 0.5)?;
    println!("lip(K) with g_a = ½ + a g: {:.4}", lip_norm(&k, &w)?);
    Ok(())
}
