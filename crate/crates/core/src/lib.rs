//! Exact Sinkhorn and Schrödinger bridges in two regimes, with the diagnostics
//! that certify their stability.
//!
//! * [`discrete`]: finite state spaces, log-domain potential recursions.
//! * [`gaussian`]: linear-Gaussian models, Riccati matrix recursions.
//! * [`contraction`]: Dobrushin coefficients, weighted Lipschitz norms, Lyapunov certificates.
//! * [`divergences`]: Φ-entropies, weighted total variation, Gaussian KL and W2, exact discrete OT.
//! * [`harness`] and [`cli`]: seeded experiments, CSV/JSON/SVG reports, the `bridgelab` binary.
//!
//! The runnable programs under `examples/` walk through each capability.

pub mod error;
pub mod matcore;
pub mod divergences;
pub mod diagnostics;
pub mod fit;
pub mod discrete;
pub mod contraction;
pub mod gaussian;
pub mod harness;
pub mod cli;

pub use error::{Error, Result};
