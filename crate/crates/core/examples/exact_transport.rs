//! Exact discrete optimal transport, and the weighted cost whose Kantorovich value is weighted TV.

use bridgelab::divergences::{kantorovich_discrete, weighted_discrete_cost, weighted_tv, DiscreteMeasure};
use nalgebra::DMatrix;

fn main() -> bridgelab::Result<()> {
    let a = DiscreteMeasure::new(vec![0.5, 0.3, 0.2])?;
    let b = DiscreteMeasure::new(vec![0.2, 0.2, 0.6])?;
    let cost = DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs());
    let t = kantorovich_discrete(&cost, &a, &b)?;
    println!("W1 on a line = {:.4}\nplan =\n{:.3}", t.value, t.plan);

    let g = [1.0, 2.0, 5.0];
    let t = kantorovich_discrete(&weighted_discrete_cost(&g), &a, &b)?;
    println!("weighted cost value {:.6} = weighted TV {:.6}", t.value, weighted_tv(&a, &b, &g)?);
    Ok(())
}
