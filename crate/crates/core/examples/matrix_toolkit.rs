//! SPD utilities: square roots, Löwner order, Gaussian KL and W2.

use bridgelab::divergences::{burg, gaussian_kl, gaussian_w2, Gaussian};
use bridgelab::matcore::{ando_hemmen_factor, loewner_leq, random_spd, spectral_norm};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bridgelab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random_spd(&mut rng, 3, 0.5, 2.0);
    let v = random_spd(&mut rng, 3, 0.5, 2.0);

    let lhs = spectral_norm(&(u.sqrt().matrix() - v.sqrt().matrix()));
    let rhs = ando_hemmen_factor(&u, &v) * spectral_norm(&(u.matrix() - v.matrix()));
    println!("||u^½ − v^½|| = {lhs:.4} ≤ {rhs:.4}");
    println!("u ≤ u + v: {}", loewner_leq(u.as_sym(), &u.as_sym().add(v.as_sym()), 1e-12)?);
    println!("burg(u, v) = {:.6}", burg(&u, &v)?);

    let p = Gaussian::new(DVector::zeros(3), u)?;
    let q = Gaussian::new(DVector::from_element(3, 0.1), v)?;
    println!("KL(p|q) = {:.6}, W2(p, q) = {:.6}", gaussian_kl(&p, &q)?, gaussian_w2(&p, &q)?);
    Ok(())
}
