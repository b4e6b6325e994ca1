//! Linear-Gaussian Sinkhorn bridges.
//!
//! Marginals `μ = N(m, σ)`, `η = N(m̄, σ̄)` and reference kernel `K(x,·) = N(α + βx, τ)`.
//! Every Sinkhorn kernel stays linear-Gaussian, so an iterate is a mean, a gain and a
//! covariance. Even kernels map x to y as `N(m_{2n} + β_{2n}(x − m), τ_{2n})`, odd
//! kernels map y to x as `N(m_{2n+1} + β_{2n+1}(y − m̄), τ_{2n+1})`.
//!
//! With `χ = τ^{-1}β`, `γ = σ̄^½ χ σ^½` and `ϖ^{-1} = γγ'`, the rescaled covariances
//! `υ_{2n} = σ̄^{-½} τ_{2n} σ̄^{-½}` follow `υ_{2n} = Ricc_ϖ(υ_{2(n−1)})` where
//! `Ricc_ϖ(v) = (I + (ϖ + v)^{-1})^{-1}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticRow, DiagnosticsReport, Series};
use crate::divergences::{burg, gaussian_kl, gaussian_w2, Gaussian};
use crate::error::{domain, Error, Result};
use crate::fit::{fit_rate, RateFit};
use crate::matcore::{loewner_leq, spectral_norm, SpdMatrix, SymMatrix};

fn internal(step: usize, e: Error) -> Error {
    match e {
        Error::Domain(msg) => Error::Internal { step, msg },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianKernel {
    pub alpha: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub tau: SpdMatrix,
}

impl LinearGaussianKernel {
    pub fn new(alpha: DVector<f64>, beta: DMatrix<f64>, tau: SpdMatrix) -> Result<Self> {
        let d = tau.dim();
        if alpha.len() != d || beta.shape() != (d, d) {
            return domain(format!("kernel: alpha {} and beta {:?} do not match tau {d}x{d}", alpha.len(), beta.shape()));
        }
        let sv = beta.clone().svd(false, false).singular_values;
        let (lo, hi) = (sv.min(), sv.max());
        if !(lo > 1e-10 * hi.max(f64::MIN_POSITIVE)) {
            return domain(format!("kernel: beta is singular (smallest singular value {lo:e})"));
        }
        Ok(LinearGaussianKernel { alpha, beta, tau })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// `χ = τ^{-1}β`
    pub fn chi(&self) -> DMatrix<f64> {
        self.tau.inverse().matrix() * &self.beta
    }

    pub fn mean_at(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.alpha + &self.beta * x
    }
}

fn check_dims(mu: &Gaussian, k: &LinearGaussianKernel) -> Result<()> {
    if mu.dim() != k.dim() {
        return domain(format!("measure of dimension {} with kernel of dimension {}", mu.dim(), k.dim()));
    }
    Ok(())
}

/// `μK = N(α + βm, βσβ' + τ)`.
pub fn push_forward(mu: &Gaussian, k: &LinearGaussianKernel) -> Result<Gaussian> {
    check_dims(mu, k)?;
    let cov = mu.cov.as_sym().congruence(&k.beta).add(k.tau.as_sym()).to_spd()?;
    Gaussian::new(k.mean_at(&mu.mean), cov)
}

/// Bayes dual `K*_μ(y, ·) = N(m + β₁(y − m₀), τ₁)` with `β₁ = σβ'σ₀^{-1}`, `τ₁^{-1} = σ^{-1} + β'τ^{-1}β`.
pub fn conjugate_kernel(mu: &Gaussian, k: &LinearGaussianKernel) -> Result<LinearGaussianKernel> {
    let pushed = push_forward(mu, k)?;
    let tau_inv = k.tau.inverse();
    let prec = mu.cov.inverse().as_sym().add(&tau_inv.as_sym().congruence(&k.beta.transpose()));
    let tau1 = prec.to_spd().map_err(|e| internal(0, e))?.inverse();
    let beta1 = mu.cov.matrix() * k.beta.transpose() * pushed.cov.inverse().matrix();
    let alt = tau1.matrix() * k.beta.transpose() * tau_inv.matrix();
    let gap = (&beta1 - &alt).amax();
    if gap > 1e-8 * beta1.amax().max(1.0) {
        return Err(Error::Internal { step: 0, msg: format!("conjugate gain identity off by {gap:e}") });
    }
    let alpha1 = &mu.mean - &beta1 * &pushed.mean;
    LinearGaussianKernel::new(alpha1, beta1, tau1)
}

/// The law of `(X, Y)` with `X ~ base` and `Y | X ~ k(X)`, on `ℝ^{2d}`.
pub fn joint_gaussian(base: &Gaussian, k: &LinearGaussianKernel) -> Result<Gaussian> {
    check_dims(base, k)?;
    let d = base.dim();
    let s = base.cov.matrix();
    let sb = s * k.beta.transpose();
    let yy = &k.beta * &sb + k.tau.matrix();
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(s);
    cov.view_mut((0, d), (d, d)).copy_from(&sb);
    cov.view_mut((d, 0), (d, d)).copy_from(&sb.transpose());
    cov.view_mut((d, d), (d, d)).copy_from(&yy);
    let mut mean = DVector::zeros(2 * d);
    mean.rows_mut(0, d).copy_from(&base.mean);
    mean.rows_mut(d, d).copy_from(&k.mean_at(&base.mean));
    Gaussian::new(mean, SpdMatrix::new(cov)?)
}

/// Swaps the two d-blocks of a 2d-dimensional Gaussian.
pub fn swap_blocks(g: &Gaussian) -> Result<Gaussian> {
    let d = g.dim() / 2;
    let perm = |i: usize| if i < d { i + d } else { i - d };
    let n = 2 * d;
    let cov = DMatrix::from_fn(n, n, |i, j| g.cov.matrix()[(perm(i), perm(j))]);
    let mean = DVector::from_fn(n, |i, _| g.mean[perm(i)]);
    Gaussian::new(mean, SpdMatrix::new(cov)?)
}

/// `E_{x~base} ℋ(k1(x) | k2(x))` in closed form.
pub fn conditional_kl(base: &Gaussian, k1: &LinearGaussianKernel, k2: &LinearGaussianKernel) -> Result<f64> {
    check_dims(base, k1)?;
    check_dims(base, k2)?;
    let w = k2.tau.inv_sqrt();
    let db = &k1.beta - &k2.beta;
    let dm = k1.mean_at(&base.mean) - k2.mean_at(&base.mean);
    let spread = w.matrix() * db * base.cov.sqrt().matrix();
    Ok(0.5 * (burg(&k1.tau, &k2.tau)? + (w.matrix() * dm).norm_squared() + spread.norm_squared()))
}

/// Marginals and reference kernel of one linear-Gaussian problem.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    pub mu: Gaussian,
    pub eta: Gaussian,
    pub kernel: LinearGaussianKernel,
}

/// On-disk instance; matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianInstance {
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
    pub m_bar: Vec<f64>,
    pub sigma_bar: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
}

fn square(v: &[f64], d: usize, name: &str) -> Result<DMatrix<f64>> {
    if v.len() != d * d {
        return domain(format!("{name}: expected {} entries, got {}", d * d, v.len()));
    }
    Ok(DMatrix::from_row_slice(d, d, v))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl GaussianModel {
    pub fn new(mu: Gaussian, eta: Gaussian, kernel: LinearGaussianKernel) -> Result<Self> {
        check_dims(&mu, &kernel)?;
        check_dims(&eta, &kernel)?;
        Ok(GaussianModel { mu, eta, kernel })
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn from_instance(inst: &GaussianInstance) -> Result<Self> {
        let d = inst.m.len();
        if d == 0 || inst.m_bar.len() != d || inst.alpha.len() != d {
            return domain("instance: vectors m, m_bar, alpha must share a nonzero length");
        }
        let mu = Gaussian::new(DVector::from_column_slice(&inst.m), SpdMatrix::new(square(&inst.sigma, d, "sigma")?)?)?;
        let eta = Gaussian::new(DVector::from_column_slice(&inst.m_bar), SpdMatrix::new(square(&inst.sigma_bar, d, "sigma_bar")?)?)?;
        let k = LinearGaussianKernel::new(DVector::from_column_slice(&inst.alpha), square(&inst.beta, d, "beta")?, SpdMatrix::new(square(&inst.tau, d, "tau")?)?)?;
        GaussianModel::new(mu, eta, k)
    }

    pub fn to_instance(&self) -> GaussianInstance {
        GaussianInstance {
            m: self.mu.mean.as_slice().to_vec(),
            sigma: row_major(self.mu.cov.matrix()),
            m_bar: self.eta.mean.as_slice().to_vec(),
            sigma_bar: row_major(self.eta.cov.matrix()),
            alpha: self.kernel.alpha.as_slice().to_vec(),
            beta: row_major(&self.kernel.beta),
            tau: row_major(self.kernel.tau.matrix()),
        }
    }

    /// Same μ and K with target `η = μK`.
    pub fn self_bridged(mu: Gaussian, kernel: LinearGaussianKernel) -> Result<Self> {
        let eta = push_forward(&mu, &kernel)?;
        GaussianModel::new(mu, eta, kernel)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSinkhornState {
    pub step: usize,
    pub m: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub tau: SpdMatrix,
    /// `σ̄^{-½}τσ̄^{-½}` at even steps, `σ^{-½}τσ^{-½}` at odd steps
    pub upsilon: SpdMatrix,
}

impl GaussianSinkhornState {
    pub fn initial(model: &GaussianModel) -> Result<Self> {
        let k = &model.kernel;
        let upsilon = k.tau.congruence(model.eta.cov.inv_sqrt().matrix())?;
        Ok(GaussianSinkhornState { step: 0, m: k.mean_at(&model.mu.mean), beta: k.beta.clone(), tau: k.tau.clone(), upsilon })
    }

    pub fn is_even(&self) -> bool {
        self.step % 2 == 0
    }

    /// 𝒦_n as an affine-Gaussian map (x to y at even n, y to x at odd n).
    pub fn kernel(&self, model: &GaussianModel) -> Result<LinearGaussianKernel> {
        let center = if self.is_even() { &model.mu.mean } else { &model.eta.mean };
        LinearGaussianKernel::new(&self.m - &self.beta * center, self.beta.clone(), self.tau.clone())
    }

    /// π_n: `μ𝒦_{2n}` at even steps, `η𝒦_{2n+1}` at odd steps.
    pub fn marginal(&self, model: &GaussianModel) -> Result<Gaussian> {
        let base = if self.is_even() { &model.mu } else { &model.eta };
        push_forward(base, &self.kernel(model)?)
    }

    /// 𝒫_n as a Gaussian on `(x, y)`.
    pub fn joint(&self, model: &GaussianModel) -> Result<Gaussian> {
        if self.is_even() {
            joint_gaussian(&model.mu, &self.kernel(model)?)
        } else {
            swap_blocks(&joint_gaussian(&model.eta, &self.kernel(model)?)?)
        }
    }
}

/// One half-step: the Bayes dual of the current kernel against μ (even to odd) or η (odd to even).
pub fn sinkhorn_step(state: &GaussianSinkhornState, model: &GaussianModel) -> Result<GaussianSinkhornState> {
    let next = state.step + 1;
    let (base, other_center, other_mean) = if state.is_even() {
        (&model.mu, &model.eta.mean, &model.mu.mean)
    } else {
        (&model.eta, &model.mu.mean, &model.eta.mean)
    };
    let tau_inv = state.tau.inverse();
    let prec = base.cov.inverse().as_sym().add(&tau_inv.as_sym().congruence(&state.beta.transpose()));
    let tau = prec.to_spd().map_err(|e| internal(next, e))?.inverse();
    let beta = tau.matrix() * state.beta.transpose() * tau_inv.matrix();
    // the new kernel is centered at the marginal it maps from
    let m = other_mean + &beta * (other_center - &state.m);
    let upsilon = tau.congruence(base.cov.inv_sqrt().matrix()).map_err(|e| internal(next, e))?;
    if m.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Internal { step: next, msg: "non-finite mean or gain".into() });
    }
    Ok(GaussianSinkhornState { step: next, m, beta, tau, upsilon })
}

/// States at half-steps `0..=steps`.
pub fn gaussian_trajectory(model: &GaussianModel, steps: usize) -> Result<Vec<GaussianSinkhornState>> {
    let mut out = vec![GaussianSinkhornState::initial(model)?];
    for _ in 0..steps {
        let next = sinkhorn_step(out.last().unwrap(), model)?;
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiProblem {
    pub varpi: SpdMatrix,
    pub varpi_bar: SpdMatrix,
    pub gamma: DMatrix<f64>,
}

impl RiccatiProblem {
    pub fn from_model(model: &GaussianModel) -> Result<Self> {
        let gamma = model.eta.cov.sqrt().matrix() * model.kernel.chi() * model.mu.cov.sqrt().matrix();
        let ggt = SpdMatrix::new(&gamma * gamma.transpose())?;
        let gtg = SpdMatrix::new(gamma.transpose() * &gamma)?;
        Ok(RiccatiProblem { varpi: ggt.inverse(), varpi_bar: gtg.inverse(), gamma })
    }

    /// Problem with `γ = ϖ^{-½}`, so that `ϖ̄ = ϖ`.
    pub fn from_varpi(varpi: SpdMatrix) -> Self {
        let gamma = varpi.inv_sqrt().matrix().clone();
        RiccatiProblem { varpi_bar: varpi.clone(), varpi, gamma }
    }

    pub fn apply(&self, v: &SymMatrix) -> Result<SpdMatrix> {
        riccati_apply(&self.varpi, v)
    }

    pub fn apply_bar(&self, v: &SymMatrix) -> Result<SpdMatrix> {
        riccati_apply(&self.varpi_bar, v)
    }
}

/// `Ricc_ϖ(v) = (I + (ϖ + v)^{-1})^{-1} = A(I + A)^{-1}` with `A = ϖ + v`.
pub fn riccati_apply(varpi: &SpdMatrix, v: &SymMatrix) -> Result<SpdMatrix> {
    if v.dim() != varpi.dim() {
        return domain("riccati_apply: dimension mismatch");
    }
    let scale = v.max_eigenvalue().abs().max(1.0);
    if v.min_eigenvalue() < -1e-12 * scale {
        return domain(format!("riccati_apply: v is not PSD (eigenvalue {:e})", v.min_eigenvalue()));
    }
    let a = varpi.as_sym().add(v);
    let d = v.dim();
    let ia = a.add(&SymMatrix::identity(d)).to_spd()?;
    SpdMatrix::new(a.matrix() * ia.inverse().matrix())
}

/// `r = −ϖ/2 + (ϖ + ϖ²/4)^½`, evaluated as `ϖ(S + ϖ/2)^{-1}` with `S = (ϖ + ϖ²/4)^½`.
pub fn riccati_fixed_point(varpi: &SpdMatrix) -> SpdMatrix {
    let s = varpi.as_sym().map_spectrum(|l| (l + 0.25 * l * l).sqrt());
    let denom = s.add(&varpi.as_sym().scale(0.5)).to_spd().expect("S + ϖ/2 is SPD");
    SpdMatrix::new(varpi.matrix() * denom.inverse().matrix()).expect("fixed point is SPD")
}

/// The five equivalent forms of the fixed-point equation, as residuals at r.
pub fn fixed_point_residuals(varpi: &SpdMatrix, r: &SpdMatrix) -> Result<[f64; 5]> {
    let d = r.dim();
    let id = DMatrix::<f64>::identity(d, d);
    let (w, rm) = (varpi.matrix(), r.matrix());
    let ri = r.inverse();
    let wi = varpi.inverse();
    let wr_inv = SpdMatrix::new(w + rm)?.inverse();
    Ok([
        (riccati_apply(varpi, r.as_sym())?.matrix() - rm).amax(),
        (ri.matrix() - &id - wr_inv.matrix()).amax(),
        (w * ri.matrix() + &id - (w + rm) * ri.matrix()).amax() + ((w + rm) * ri.matrix() - (w + rm) - &id).amax(),
        (w * ri.matrix() - w - rm).amax() + (ri.matrix() - &id - wi.matrix() * rm).amax(),
        (&id - rm - rm * wi.matrix() * rm).amax(),
    ])
}

#[derive(Clone, Debug)]
pub struct GaussianBridge {
    pub r: SpdMatrix,
    /// `ς = σ̄^½ r σ̄^½`
    pub varsigma: SpdMatrix,
    /// `ςτ^{-1}β`
    pub drift: DMatrix<f64>,
    /// `m̄ − drift·m`
    pub intercept: DVector<f64>,
    pub kernel: LinearGaussianKernel,
    pub problem: RiccatiProblem,
}

pub fn schrodinger_bridge_gaussian(model: &GaussianModel) -> Result<GaussianBridge> {
    let problem = RiccatiProblem::from_model(model)?;
    let r = riccati_fixed_point(&problem.varpi);
    let varsigma = r.congruence(model.eta.cov.sqrt().matrix())?;
    let drift = varsigma.matrix() * model.kernel.chi();
    let intercept = &model.eta.mean - &drift * &model.mu.mean;
    let kernel = LinearGaussianKernel::new(intercept.clone(), drift.clone(), varsigma.clone())?;
    Ok(GaussianBridge { r, varsigma, drift, intercept, kernel, problem })
}

impl GaussianBridge {
    /// `P_{μ,η}` as a Gaussian on `(x, y)`.
    pub fn joint(&self, model: &GaussianModel) -> Result<Gaussian> {
        joint_gaussian(&model.mu, &self.kernel)
    }

    /// The bridge read backwards, y to x.
    pub fn dual_kernel(&self, model: &GaussianModel) -> Result<LinearGaussianKernel> {
        conjugate_kernel(&model.mu, &self.kernel)
    }
}

/// `ℋ(𝒫_{2n} | P_{μ,η})` from the closed-form expression in `(τ_{2n}, m_{2n}, ς)`.
pub fn bridge_entropy(state: &GaussianSinkhornState, bridge: &GaussianBridge, model: &GaussianModel) -> Result<f64> {
    if !state.is_even() {
        return domain("bridge_entropy expects an even step");
    }
    let w = bridge.varsigma.inv_sqrt();
    let dm = &state.m - &model.eta.mean;
    let dt = state.tau.matrix() - bridge.varsigma.matrix();
    let spread = w.matrix() * dt * model.kernel.chi() * model.mu.cov.sqrt().matrix();
    Ok(0.5 * (burg(&state.tau, &bridge.varsigma)? + (w.matrix() * dm).norm_squared() + spread.norm_squared()))
}

/// `ℋ(𝒫_n | P_{μ,η})` through the 2d-dimensional joint laws.
pub fn joint_entropy_oracle(state: &GaussianSinkhornState, bridge: &GaussianBridge, model: &GaussianModel) -> Result<f64> {
    gaussian_kl(&state.joint(model)?, &bridge.joint(model)?)
}

/// `ℋ(P_{μ,η} | 𝒫_n)`, through the conditional form (both sides share the base marginal).
pub fn reverse_bridge_entropy(state: &GaussianSinkhornState, bridge: &GaussianBridge, model: &GaussianModel) -> Result<f64> {
    if state.is_even() {
        conditional_kl(&model.mu, &bridge.kernel, &state.kernel(model)?)
    } else {
        conditional_kl(&model.eta, &bridge.dual_kernel(model)?, &state.kernel(model)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianRateRow {
    pub n: usize,
    /// ||τ_{2n} − ς||₂
    pub tau_err: f64,
    /// ||τ_{2n}^½ − ς^½||₂
    pub sqrt_err: f64,
    /// ||m_{2n} − m̄||
    pub mean_err: f64,
    /// ||σ̄^{-½} β°_{2n,0} σ̄^½||₂ (1 at n = 0)
    pub directed_norm: f64,
    /// ||σ_{2n} − σ̄||₂ with σ_{2n} the covariance of π_{2n}
    pub marginal_cov_err: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianRateReport {
    pub rows: Vec<GaussianRateRow>,
    /// `−2 log(1 + λ_min(r + ϖ))`
    pub theoretical_slope: f64,
    pub fit: Option<RateFit>,
    /// odd-index mirror: ||τ_{2n+1} − ς̄|| with `ς̄ = σ^½ r̄ σ^½`
    pub odd_series: Series,
    pub odd_fit: Option<RateFit>,
    pub diagnostics: DiagnosticsReport,
}

fn rel_tol(scale: f64) -> f64 {
    1e-10 * scale.max(1.0)
}

/// Slope check: the fitted slope of `log||τ_{2n} − ς||` must be at most `θ + 0.05|θ|`.
pub fn slope_within(fit: &RateFit, theoretical: f64) -> bool {
    fit.slope <= theoretical + 0.05 * theoretical.abs()
}

pub fn rate_report(trajectory: &[GaussianSinkhornState], bridge: &GaussianBridge, model: &GaussianModel) -> Result<GaussianRateReport> {
    let evens: Vec<&GaussianSinkhornState> = trajectory.iter().filter(|s| s.is_even()).collect();
    if evens.len() < 10 || trajectory[0].step != 0 {
        return domain("rate_report needs a trajectory from step 0 with at least 10 even steps");
    }
    let d = model.dim();
    let problem = &bridge.problem;
    let sb_half = model.eta.cov.sqrt();
    let sb_ihalf = model.eta.cov.inv_sqrt();
    let mut rep = DiagnosticsReport::default();
    let sigma0 = push_forward(&model.mu, &model.kernel)?.cov;
    let vs_sqrt = bridge.varsigma.sqrt();
    let mut rows = Vec::new();
    let mut directed = DMatrix::<f64>::identity(d, d);
    let id = SymMatrix::identity(d);
    let upper = problem.varpi.as_sym().add(&id).to_spd()?.inverse();
    let lower = SpdMatrix::new(&id.matrix().clone() + problem.varpi.inverse().matrix())?.inverse();
    for (i, s) in evens.iter().enumerate() {
        let n = i;
        if n >= 1 {
            let odd = &trajectory[s.step - 1];
            let prev = evens[i - 1];
            let bc = &s.beta * &odd.beta;
            directed = &bc * &directed;
            // mean recursion along β°
            let lhs = &s.m - &model.eta.mean;
            let rhs = &bc * (&prev.m - &model.eta.mean);
            rep.push(DiagnosticRow::residual("directed_mean", n, (&lhs - &rhs).amax(), rel_tol(rhs.amax())));
            // σ̄^{-½}β°σ̄^½ = I − υ_{2n}, between 0 and (I + ϖ)^{-1}
            let scaled = sb_ihalf.matrix() * &bc * sb_half.matrix();
            let target = id.matrix() - s.upsilon.matrix();
            rep.push(DiagnosticRow::residual("directed_identity", n, (&scaled - &target).amax(), 1e-10));
            let sym = SymMatrix::new(target)?;
            let ok = loewner_leq(&SymMatrix::zeros(d), &sym, 1e-12)? && loewner_leq(&sym, upper.as_sym(), 1e-12)?;
            rep.push(DiagnosticRow::residual("directed_bound", n, if ok { 0.0 } else { 1.0 }, 0.0));
            // uniform sandwich on τ_{2n} and τ_{2n+1}
            let lo = lower.congruence(sb_half.matrix())?;
            let ok = loewner_leq(lo.as_sym(), s.tau.as_sym(), 1e-12)? && loewner_leq(s.tau.as_sym(), model.eta.cov.as_sym(), 1e-12)?;
            rep.push(DiagnosticRow::residual("sandwich_even", n, if ok { 0.0 } else { 1.0 }, 0.0));
            let lower_bar = SpdMatrix::new(id.matrix() + problem.varpi_bar.inverse().matrix())?.inverse();
            let lo = lower_bar.congruence(model.mu.cov.sqrt().matrix())?;
            // τ_1 has no lower bound of this form unless τ ≤ σ̄, so the odd side starts at τ_{2n+1}, n ≥ 1
            if let Some(next) = trajectory.get(s.step + 1) {
                let ok = loewner_leq(lo.as_sym(), next.tau.as_sym(), 1e-12)? && loewner_leq(next.tau.as_sym(), model.mu.cov.as_sym(), 1e-12)?;
                rep.push(DiagnosticRow::residual("sandwich_odd", n, if ok { 0.0 } else { 1.0 }, 0.0));
            }
        }
        let sigma_n = s.marginal(model)?.cov;
        let cov_err = spectral_norm(&(sigma_n.matrix() - model.eta.cov.matrix()));
        // σ_{2n} − σ̄ = β°_{2n,0}(σ_0 − σ̄)β°_{2n,0}'
        let via = &directed * (sigma0.matrix() - model.eta.cov.matrix()) * directed.transpose();
        rep.push(DiagnosticRow::residual("directed_covariance", n, (&via - (sigma_n.matrix() - model.eta.cov.matrix())).amax(), rel_tol(sigma0.spectral_norm())));
        rows.push(GaussianRateRow {
            n,
            tau_err: spectral_norm(&(s.tau.matrix() - bridge.varsigma.matrix())),
            sqrt_err: spectral_norm(&(s.tau.sqrt().matrix() - vs_sqrt.matrix())),
            mean_err: (&s.m - &model.eta.mean).norm(),
            directed_norm: spectral_norm(&(sb_ihalf.matrix() * &directed * sb_half.matrix())),
            marginal_cov_err: cov_err,
        });
    }
    let theoretical_slope = -2.0 * (1.0 + problem.varpi.as_sym().add(bridge.r.as_sym()).min_eigenvalue()).ln();
    let series: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.tau_err)).collect();
    let fit = fit_rate(&series, None);
    match fit {
        Some(f) => rep.push(DiagnosticRow::le("riccati_slope", 0, f.slope, theoretical_slope + 0.05 * theoretical_slope.abs(), 0.0)),
        None => {}
    }
    // odd mirror, extrapolated by symmetry
    let r_bar = riccati_fixed_point(&problem.varpi_bar);
    let vs_bar = r_bar.congruence(model.mu.cov.sqrt().matrix())?;
    let mut odd_series = Series::new("odd.tau_err");
    for s in trajectory.iter().filter(|s| !s.is_even()) {
        odd_series.points.push((s.step / 2, spectral_norm(&(s.tau.matrix() - vs_bar.matrix()))));
    }
    let odd_fit = fit_rate(&odd_series.points, None);
    if let Some(f) = odd_fit {
        let th = -2.0 * (1.0 + problem.varpi_bar.as_sym().add(r_bar.as_sym()).min_eigenvalue()).ln();
        rep.push(DiagnosticRow::le("odd.riccati_slope", 0, f.slope, th + 0.05 * th.abs(), 0.0));
    }
    Ok(GaussianRateReport { rows, theoretical_slope, fit, odd_series, odd_fit, diagnostics: rep })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// ||τ^{-1}β||₂
    pub kappa: f64,
    /// ||σ||₂
    pub rho: f64,
    /// ||σ̄||₂
    pub rho_bar: f64,
    /// κ²ρρ̄
    pub epsilon: f64,
    /// `1 + 1/ε̄ = (1 + √(1 + 4/ε))/2`
    pub epsilon_bar: f64,
    pub vacuous: bool,
    /// I_n = ℋ(P_{μ,η} | 𝒫_n)
    pub entropies: Vec<f64>,
    /// 𝒟₂(π_{2n}, η)
    pub w2_even: Vec<f64>,
    /// 𝒟₂(π_{2n+1}, μ)
    pub w2_odd: Vec<f64>,
    pub diagnostics: DiagnosticsReport,
}

/// Below this, Wasserstein ratios are dominated by roundoff and are not checked.
pub const W2_FLOOR: f64 = 1e-12;

/// Absolute slack on entropy comparisons.
pub const ENTROPY_FLOOR: f64 = 1e-15;

pub fn envelope_report(model: &GaussianModel, trajectory: &[GaussianSinkhornState], bridge: &GaussianBridge) -> Result<EnvelopeReport> {
    if trajectory.is_empty() || trajectory[0].step != 0 {
        return domain("envelope_report needs a trajectory from step 0");
    }
    let kappa = spectral_norm(&model.kernel.chi());
    let rho = model.mu.cov.spectral_norm();
    let rho_bar = model.eta.cov.spectral_norm();
    let eps = kappa * kappa * rho * rho_bar;
    let vacuous = !(eps.is_finite() && eps > 0.0);
    let inv_bar = 0.5 * (1.0 + (1.0 + 4.0 / eps).sqrt()) - 1.0;
    let epsilon_bar = 1.0 / inv_bar;
    let entropies: Vec<f64> = trajectory.iter().map(|s| reverse_bridge_entropy(s, bridge, model)).collect::<Result<_>>()?;
    let mut w2_even = Vec::new();
    let mut w2_odd = Vec::new();
    for s in trajectory {
        let pi = s.marginal(model)?;
        if s.is_even() {
            w2_even.push(gaussian_w2(&pi, &model.eta)?);
        } else {
            w2_odd.push(gaussian_w2(&pi, &model.mu)?);
        }
    }
    let mut rep = DiagnosticsReport::default();
    let i0 = entropies[0];
    // entropies are computed to about 1e-16 absolute, so a fixed noise floor sits under the relative tolerance
    let tol = |rhs: f64| 1e-10 * rhs + 1e-14 * i0 + ENTROPY_FLOOR;
    if !vacuous {
        let q = 1.0 + 1.0 / eps;
        let q_ref = q + inv_bar;
        for (k, ik) in entropies.iter().enumerate() {
            let n = k / 2;
            let rhs = q.powi(-(n as i32)) * i0;
            let name = if k % 2 == 0 { "envelope_even" } else { "envelope_odd" };
            rep.push(DiagnosticRow::le(name, n, *ik, rhs, tol(rhs)));
            if k % 2 == 0 && n >= 1 {
                let rhs = q_ref.powi(-((n - 1) as i32)) * i0;
                rep.push(DiagnosticRow::le("envelope_refined", n, *ik, rhs, tol(rhs)));
            }
            if k + 2 < entropies.len() {
                let rhs = entropies[k + 1] + entropies[k + 2] / eps;
                rep.push(DiagnosticRow::le("entropy_recurrence", k, rhs, *ik, tol(*ik)));
            }
        }
        // per-parity Wasserstein contractions and their two-step geometric mean
        let (ce, co) = (kappa * rho_bar, kappa * rho);
        let floor = W2_FLOOR * (1.0 + rho.max(rho_bar).sqrt());
        for n in 1..w2_even.len() {
            if w2_odd.len() < n || w2_odd[n - 1] < floor || w2_even[n] < floor {
                break;
            }
            let re = w2_even[n] / w2_odd[n - 1];
            rep.push(DiagnosticRow::le("w2_even", n, re, ce, 1e-9));
            if n < w2_odd.len() && w2_odd[n] >= floor {
                let ro = w2_odd[n] / w2_even[n];
                rep.push(DiagnosticRow::le("w2_odd", n, ro, co, 1e-9));
                rep.push(DiagnosticRow::le("w2_two_step", n, (re * ro).sqrt(), kappa * (rho * rho_bar).sqrt(), 1e-9));
            }
        }
        if eps < 1.0 {
            for n in 0..w2_even.len() {
                if w2_even[n] < floor {
                    break;
                }
                rep.push(DiagnosticRow::le("w2_decay_even", n, w2_even[n], eps.powi(n as i32) * w2_even[0], 1e-10 * w2_even[0]));
            }
            for n in 0..w2_odd.len() {
                if w2_odd[n] < floor {
                    break;
                }
                rep.push(DiagnosticRow::le("w2_decay_odd", n, w2_odd[n], eps.powi(n as i32) * w2_odd[0], 1e-10 * w2_odd[0]));
            }
        }
    }
    Ok(EnvelopeReport { kappa, rho, rho_bar, epsilon: eps, epsilon_bar, vacuous, entropies, w2_even, w2_odd, diagnostics: rep })
}

#[derive(Clone, Debug)]
pub struct CovarianceEnvelope {
    /// τ_n
    pub upper: Vec<SpdMatrix>,
    /// τ_{n−}
    pub lower: Vec<SpdMatrix>,
    /// `τ̄_{2n} = σ̄^{-½}τ_{2n}σ̄^{-½}` from iterating `Ricc_{ϖ−}`
    pub rescaled: Vec<SpdMatrix>,
    /// max over n of the gap between `rescaled` and the rescaled `upper[2n]`
    pub rescaled_residual: f64,
}

/// Envelopes `τ_{n−} ≤ cov_{𝒦_n} ≤ τ_n` for strongly convex marginals with
/// `σ^{-1} ≤ ∇²U ≤ σ₋^{-1}` and `σ̄^{-1} ≤ ∇²V ≤ σ̄₋^{-1}`.
pub fn strongly_convex_covariance_envelope(
    sigma: &SpdMatrix,
    sigma_minus: &SpdMatrix,
    sigma_bar: &SpdMatrix,
    sigma_bar_minus: &SpdMatrix,
    kernel: &LinearGaussianKernel,
    n_max: usize,
) -> Result<CovarianceEnvelope> {
    if !loewner_leq(sigma_minus.as_sym(), sigma.as_sym(), 1e-12)? || !loewner_leq(sigma_bar_minus.as_sym(), sigma_bar.as_sym(), 1e-12)? {
        return domain("covariance envelope needs σ₋ ≤ σ and σ̄₋ ≤ σ̄");
    }
    let chi = kernel.chi();
    let chi_t = chi.transpose();
    let (si, smi, sbi, sbmi) = (sigma.inverse(), sigma_minus.inverse(), sigma_bar.inverse(), sigma_bar_minus.inverse());
    let mut upper = vec![kernel.tau.clone()];
    let mut lower = vec![kernel.tau.clone()];
    for k in 0..n_max {
        let (u, l) = (&upper[k], &lower[k]);
        let step = k + 1;
        let (nu, nl) = if k % 2 == 0 {
            // τ_{2n+1}^{-1} = σ^{-1} + χ'τ_{(2n)−}χ and τ_{(2n+1)−}^{-1} = σ₋^{-1} + χ'τ_{2n}χ
            (si.as_sym().add(&l.as_sym().congruence(&chi_t)), smi.as_sym().add(&u.as_sym().congruence(&chi_t)))
        } else {
            (sbi.as_sym().add(&l.as_sym().congruence(&chi)), sbmi.as_sym().add(&u.as_sym().congruence(&chi)))
        };
        upper.push(nu.to_spd().map_err(|e| internal(step, e))?.inverse());
        lower.push(nl.to_spd().map_err(|e| internal(step, e))?.inverse());
    }
    let gamma_minus = sigma_bar.sqrt().matrix() * &chi * sigma_minus.sqrt().matrix();
    let varpi_minus = SpdMatrix::new(&gamma_minus * gamma_minus.transpose())?.inverse();
    let ihalf = sigma_bar.inv_sqrt();
    let mut rescaled = vec![upper[0].congruence(ihalf.matrix())?];
    let mut residual = 0.0f64;
    for n in 1..=n_max / 2 {
        let next = riccati_apply(&varpi_minus, rescaled[n - 1].as_sym())?;
        let direct = upper[2 * n].congruence(ihalf.matrix())?;
        residual = residual.max((next.matrix() - direct.matrix()).amax());
        rescaled.push(next);
    }
    Ok(CovarianceEnvelope { upper, lower, rescaled, rescaled_residual: residual })
}

#[derive(Clone, Debug)]
pub struct PotentialHessians {
    /// ∇²U_{2n} = σ^{-1} − χ'β + χ'τ_{2n}χ
    pub hess_u: SymMatrix,
    /// ∇²V_{2n+1} = σ̄^{-1} − τ^{-1} + χτ_{2n+1}χ'
    pub hess_v: SymMatrix,
    /// ∇²₂W♭_{2n+1} = σ^{-1} + χ'τ_{2n}χ
    pub hess_w_flat: SymMatrix,
    /// ∇²₂W_{2n} = τ_{2n}^{-1}
    pub hess_w: SymMatrix,
    /// largest gap between the closed forms above and `τ_{2n+1}^{-1}`, `τ_{2n}^{-1}`
    pub decomposition_residual: f64,
    /// ∇²₂W♭_{2n+1} ≥ ∇²U and (for n ≥ 1) ∇²₂W_{2n} ≥ ∇²V
    pub curvature_ok: bool,
}

pub fn potential_hessian(state: &GaussianSinkhornState, model: &GaussianModel) -> Result<PotentialHessians> {
    if !state.is_even() {
        return domain("potential_hessian expects an even step");
    }
    let k = &model.kernel;
    let chi = k.chi();
    let chi_t = chi.transpose();
    let odd = sinkhorn_step(state, model)?;
    let si = model.mu.cov.inverse();
    let sbi = model.eta.cov.inverse();
    let hess_w_flat = si.as_sym().add(&state.tau.as_sym().congruence(&chi_t));
    let hess_u = SymMatrix::new(hess_w_flat.matrix() - &chi_t * &k.beta)?;
    let hess_v = SymMatrix::new(sbi.matrix() - k.tau.inverse().matrix() + &chi * odd.tau.matrix() * &chi_t)?;
    let hess_w = state.tau.inverse().into_sym();
    let mut residual = (hess_w_flat.matrix() - odd.tau.inverse().matrix()).amax();
    if state.step >= 2 {
        // τ_{2n}^{-1} = σ̄^{-1} + χτ_{2n−1}χ' needs the previous odd covariance; rebuild it from τ_{2n}
        let from_prev = SymMatrix::new(hess_w.matrix() - sbi.matrix())?;
        residual = residual.max(if from_prev.min_eigenvalue() >= -1e-12 * hess_w.max_eigenvalue() { 0.0 } else { -from_prev.min_eigenvalue() });
    }
    let mut ok = loewner_leq(si.as_sym(), &hess_w_flat, 1e-12)?;
    if state.step >= 2 {
        ok &= loewner_leq(sbi.as_sym(), &hess_w, 1e-12)?;
    }
    Ok(PotentialHessians { hess_u, hess_v, hess_w_flat, hess_w, decomposition_residual: residual, curvature_ok: ok })
}

/// `−log N(y; mean, cov)` up to the normalizing constant.
pub(crate) fn neg_log_density(y: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> f64 {
    0.5 * (cov.inv_sqrt().matrix() * (y - mean)).norm_squared()
}

/// The potential `U_{2n}(x)` up to an additive constant, assembled from the kernels:
/// `U(x) − log 𝒦_{2n}(x, 0) − W(x, 0)`.
pub fn potential_u(state: &GaussianSinkhornState, model: &GaussianModel, x: &DVector<f64>) -> Result<f64> {
    let kn = state.kernel(model)?;
    let zero = DVector::zeros(model.dim());
    let u = neg_log_density(x, &model.mu.mean, &model.mu.cov);
    Ok(u + neg_log_density(&zero, &kn.mean_at(x), &kn.tau) - neg_log_density(&zero, &model.kernel.mean_at(x), &model.kernel.tau))
}

/// The potential `V_{2n+1}(y)` up to an additive constant, for an odd state:
/// `V(y) − log 𝒦_{2n+1}(y, 0) − W(0, y)`.
pub fn potential_v(state: &GaussianSinkhornState, model: &GaussianModel, y: &DVector<f64>) -> Result<f64> {
    if state.is_even() {
        return domain("potential_v expects an odd step");
    }
    let kn = state.kernel(model)?;
    let zero = DVector::zeros(model.dim());
    let v = neg_log_density(y, &model.eta.mean, &model.eta.cov);
    Ok(v + neg_log_density(&zero, &kn.mean_at(y), &kn.tau) - neg_log_density(y, &model.kernel.alpha, &model.kernel.tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{random_orthogonal, random_spd};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> SpdMatrix {
        SpdMatrix::from_diagonal(&[v]).unwrap()
    }

    fn g1(m: f64, s: f64) -> Gaussian {
        Gaussian::new(DVector::from_element(1, m), scalar(s)).unwrap()
    }

    fn k1(a: f64, b: f64, t: f64) -> LinearGaussianKernel {
        LinearGaussianKernel::new(DVector::from_element(1, a), DMatrix::from_element(1, 1, b), scalar(t)).unwrap()
    }

    fn golden() -> GaussianModel {
        GaussianModel::new(g1(0.0, 1.0), g1(0.0, 1.0), k1(0.0, 1.0, 1.0)).unwrap()
    }

    pub(crate) fn seeded(d: usize, seed: u64) -> GaussianModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_spd(&mut rng, d, 0.5, 2.0);
        let sigma_bar = random_spd(&mut rng, d, 0.5, 2.0);
        let tau = random_spd(&mut rng, d, 0.3, 1.0);
        let q = random_orthogonal(&mut rng, d);
        let diag: Vec<f64> = (0..d).map(|_| 0.8 + 0.7 * rng.random::<f64>()).collect();
        let beta = q * DMatrix::from_diagonal(&DVector::from_vec(diag));
        let v = |rng: &mut ChaCha8Rng| DVector::from_fn(d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let mu = Gaussian::new(v(&mut rng), sigma).unwrap();
        let eta = Gaussian::new(v(&mut rng), sigma_bar).unwrap();
        GaussianModel::new(mu, eta, LinearGaussianKernel::new(v(&mut rng), beta, tau).unwrap()).unwrap()
    }

    #[test]
    fn push_forward_examples() {
        let p = push_forward(&g1(1.0, 2.0), &k1(0.5, 3.0, 4.0)).unwrap();
        assert!((p.mean[0] - 3.5).abs() < 1e-15);
        assert!((p.cov.matrix()[(0, 0)] - 22.0).abs() < 1e-14);
        let m = seeded(3, 1);
        let id = LinearGaussianKernel::new(DVector::zeros(3), DMatrix::identity(3, 3), m.kernel.tau.clone()).unwrap();
        let p = push_forward(&m.mu, &id).unwrap();
        assert_eq!(p.mean, m.mu.mean);
        assert!((p.cov.matrix() - m.mu.cov.matrix() - m.kernel.tau.matrix()).amax() < 1e-15);
        assert!(push_forward(&g1(0.0, 1.0), &m.kernel).is_err());
    }

    #[test]
    fn conjugate_examples() {
        let c = conjugate_kernel(&g1(0.0, 1.0), &k1(0.0, 1.0, 1.0)).unwrap();
        assert!((c.tau.matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c.beta[(0, 0)] - 0.5).abs() < 1e-15);
        for d in [1, 2, 3] {
            let m = seeded(d, 10 + d as u64);
            let c = conjugate_kernel(&m.mu, &m.kernel).unwrap();
            let pushed = push_forward(&m.mu, &m.kernel).unwrap();
            // (μ×K)♭ = (μK)×K*_μ
            let forward = swap_blocks(&joint_gaussian(&m.mu, &m.kernel).unwrap()).unwrap();
            let backward = joint_gaussian(&pushed, &c).unwrap();
            assert!((&forward.mean - &backward.mean).amax() < 1e-10);
            assert!((forward.cov.matrix() - backward.cov.matrix()).amax() < 1e-10);
            // μKK*_μ = μ
            let back = push_forward(&pushed, &c).unwrap();
            assert!((&back.mean - &m.mu.mean).amax() < 1e-10);
            assert!((back.cov.matrix() - m.mu.cov.matrix()).amax() < 1e-10);
        }
    }

    #[test]
    fn kernel_rejects_singular_beta() {
        let r = LinearGaussianKernel::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), SpdMatrix::identity(2));
        assert!(r.is_err());
    }

    #[test]
    fn self_bridge_is_stationary() {
        let m0 = seeded(2, 2);
        let m = GaussianModel::self_bridged(m0.mu.clone(), m0.kernel.clone()).unwrap();
        let traj = gaussian_trajectory(&m, 12).unwrap();
        let b = schrodinger_bridge_gaussian(&m).unwrap();
        assert!((&b.drift - &m.kernel.beta).amax() < 1e-10);
        assert!((b.varsigma.matrix() - m.kernel.tau.matrix()).amax() < 1e-10);
        assert!((&b.intercept - &m.kernel.alpha).amax() < 1e-10);
        for s in traj.iter().filter(|s| s.is_even()) {
            assert!((&s.m - &m.eta.mean).amax() < 1e-10);
            assert!((s.tau.matrix() - m.kernel.tau.matrix()).amax() < 1e-10);
            assert!(bridge_entropy(s, &b, &m).unwrap() < 1e-18);
        }
        let rr = rate_report(&gaussian_trajectory(&m, 21).unwrap(), &b, &m).unwrap();
        assert!(rr.rows.iter().all(|r| r.tau_err < 1e-10 && r.mean_err < 1e-10));
    }

    #[test]
    fn scalar_upsilon_flow() {
        let m = golden();
        let traj = gaussian_trajectory(&m, 40).unwrap();
        let mut v = 1.0;
        for s in traj.iter().filter(|s| s.is_even()).skip(1) {
            v = 1.0 / (1.0 + 1.0 / (1.0 + v));
            assert!((s.upsilon.matrix()[(0, 0)] - v).abs() < 1e-14);
        }
        assert!((v - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gain_identities_and_fixed_points() {
        for d in [1, 2, 3] {
            let m = seeded(d, 20 + d as u64);
            let chi = m.kernel.chi();
            let traj = gaussian_trajectory(&m, 20).unwrap();
            for w in traj.windows(2) {
                let (s, t) = (&w[0], &w[1]);
                let expect = if s.is_even() { s.tau.matrix() * &chi } else { s.tau.matrix() * chi.transpose() };
                assert!((&s.beta - expect).amax() < 1e-10);
                // π_{2n}𝒦_{2n+1} = μ and π_{2n+1}𝒦_{2(n+1)} = η
                let target = if s.is_even() { &m.mu } else { &m.eta };
                let p = push_forward(&s.marginal(&m).unwrap(), &t.kernel(&m).unwrap()).unwrap();
                assert!((&p.mean - &target.mean).amax() < 1e-10);
                assert!((p.cov.matrix() - target.cov.matrix()).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn riccati_examples() {
        let p = RiccatiProblem::from_varpi(scalar(1.0));
        assert!((p.apply(&SymMatrix::zeros(1)).unwrap().matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        let r = riccati_fixed_point(&scalar(1.0));
        assert!((r.matrix()[(0, 0)] - 0.6180339887498949).abs() < 1e-15);
        assert!((p.apply(r.as_sym()).unwrap().matrix() - r.matrix()).amax() < 1e-15);
        let r100 = riccati_fixed_point(&scalar(100.0)).matrix()[(0, 0)];
        assert!((r100 - 0.990195135927848).abs() < 1e-12);
        assert!(r100 >= 100.0 / 101.0);
        assert!(p.apply(&SymMatrix::from_diagonal(&[-1.0]).unwrap()).is_err());
    }

    #[test]
    fn matrix_fixed_point_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for d in [2, 3, 5] {
            let q = random_orthogonal(&mut rng, d);
            let lam: Vec<f64> = (0..d).map(|_| 0.05 + 20.0 * rng.random::<f64>()).collect();
            let w = SpdMatrix::new(&q * DMatrix::from_diagonal(&DVector::from_vec(lam.clone())) * q.transpose()).unwrap();
            let r = riccati_fixed_point(&w);
            let rd: Vec<f64> = lam.iter().map(|l| -l / 2.0 + (l + l * l / 4.0).sqrt()).collect();
            let expect = &q * DMatrix::from_diagonal(&DVector::from_vec(rd)) * q.transpose();
            assert!((r.matrix() - expect).amax() < 1e-12);
            let scale = lam.iter().cloned().fold(1.0, f64::max);
            for res in fixed_point_residuals(&w, &r).unwrap() {
                assert!(res < 1e-12 * scale, "{res}");
            }
            let lo = SpdMatrix::new(DMatrix::identity(d, d) + w.inverse().matrix()).unwrap().inverse();
            assert!(loewner_leq(lo.as_sym(), r.as_sym(), 1e-12).unwrap());
            assert!(loewner_leq(r.as_sym(), &SymMatrix::identity(d), 1e-12).unwrap());
        }
    }

    #[test]
    fn riccati_sandwich_chain() {
        let m = seeded(3, 31);
        let p = RiccatiProblem::from_model(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let v = random_spd(&mut rng, 3, 0.0, 3.0).into_sym();
        let iterate = |start: SymMatrix, n: usize| {
            let mut x = start;
            for _ in 0..n {
                x = p.apply(&x).unwrap().into_sym();
            }
            x
        };
        let id = SymMatrix::identity(3);
        for n in 1..6 {
            for pp in 1..=n {
                let chain = [
                    iterate(SymMatrix::zeros(3), pp),
                    iterate(SymMatrix::zeros(3), n),
                    iterate(v.clone(), n),
                    iterate(id.clone(), n - 1),
                    iterate(id.clone(), pp - 1),
                    id.clone(),
                ];
                for w in chain.windows(2) {
                    assert!(loewner_leq(&w[0], &w[1], 1e-12).unwrap());
                }
            }
        }
    }

    #[test]
    fn sinkhorn_matches_riccati() {
        for d in [1, 2, 3, 8] {
            let m = seeded(d, 40 + d as u64);
            let p = RiccatiProblem::from_model(&m).unwrap();
            let wi = p.varpi.inverse();
            assert!((&p.gamma * p.gamma.transpose() - wi.matrix()).amax() < 1e-10);
            let traj = gaussian_trajectory(&m, 60).unwrap();
            let (mut ve, mut vo) = (traj[0].upsilon.clone(), traj[1].upsilon.clone());
            for s in &traj[2..] {
                if s.is_even() {
                    ve = p.apply(ve.as_sym()).unwrap();
                    assert!((s.upsilon.matrix() - ve.matrix()).amax() < 1e-10);
                } else {
                    vo = p.apply_bar(vo.as_sym()).unwrap();
                    assert!((s.upsilon.matrix() - vo.matrix()).amax() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bridge_examples() {
        let m = golden();
        let b = schrodinger_bridge_gaussian(&m).unwrap();
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        assert!((b.varsigma.matrix()[(0, 0)] - phi).abs() < 1e-15);
        assert!((b.drift[(0, 0)] - phi).abs() < 1e-15);
        for d in [1, 2, 3] {
            let m = seeded(d, 50 + d as u64);
            let b = schrodinger_bridge_gaussian(&m).unwrap();
            let p = push_forward(&m.mu, &b.kernel).unwrap();
            assert!((&p.mean - &m.eta.mean).amax() < 1e-10);
            assert!((p.cov.matrix() - m.eta.cov.matrix()).norm() < 1e-10);
            let traj = gaussian_trajectory(&m, 200).unwrap();
            let last = &traj[200];
            assert!((last.tau.matrix() - b.varsigma.matrix()).amax() < 1e-10);
            assert!((&last.m - &m.eta.mean).amax() < 1e-9);
            // odd mirror: the dual bridge has covariance σ^½ r̄ σ^½
            let r_bar = riccati_fixed_point(&b.problem.varpi_bar);
            let vs_bar = r_bar.congruence(m.mu.cov.sqrt().matrix()).unwrap();
            assert!((b.dual_kernel(&m).unwrap().tau.matrix() - vs_bar.matrix()).amax() < 1e-10);
        }
    }

    #[test]
    fn entropy_formula_matches_joint_oracle() {
        for d in [1, 2, 3] {
            let m = seeded(d, 60 + d as u64);
            let b = schrodinger_bridge_gaussian(&m).unwrap();
            let traj = gaussian_trajectory(&m, 40).unwrap();
            let mut last = f64::INFINITY;
            for s in traj.iter().filter(|s| s.is_even()) {
                let f = bridge_entropy(s, &b, &m).unwrap();
                let o = joint_entropy_oracle(s, &b, &m).unwrap();
                assert!((f - o).abs() < 1e-9, "d={d} n={}: {f} vs {o}", s.step);
                assert!(f <= last + 1e-15);
                last = f;
            }
        }
        assert!(bridge_entropy(&gaussian_trajectory(&golden(), 1).unwrap()[1], &schrodinger_bridge_gaussian(&golden()).unwrap(), &golden()).is_err());
    }

    #[test]
    fn conditional_kl_matches_joint() {
        let m = seeded(2, 70);
        let b = schrodinger_bridge_gaussian(&m).unwrap();
        let s = &gaussian_trajectory(&m, 6).unwrap()[4];
        let a = conditional_kl(&m.mu, &b.kernel, &s.kernel(&m).unwrap()).unwrap();
        let o = gaussian_kl(&b.joint(&m).unwrap(), &s.joint(&m).unwrap()).unwrap();
        assert!((a - o).abs() < 1e-12);
        let s = &gaussian_trajectory(&m, 6).unwrap()[5];
        let a = reverse_bridge_entropy(s, &b, &m).unwrap();
        let o = gaussian_kl(&b.joint(&m).unwrap(), &s.joint(&m).unwrap()).unwrap();
        assert!((a - o).abs() < 1e-12);
    }

    #[test]
    fn rate_report_scalar_and_seeded() {
        let m = golden();
        let b = schrodinger_bridge_gaussian(&m).unwrap();
        let rr = rate_report(&gaussian_trajectory(&m, 60).unwrap(), &b, &m).unwrap();
        let f = rr.fit.unwrap();
        assert!(slope_within(&f, rr.theoretical_slope), "{} vs {}", f.slope, rr.theoretical_slope);
        assert!(rr.diagnostics.all_pass(), "{:?}", rr.diagnostics.failures().collect::<Vec<_>>());
        for seed in 0..5 {
            let m = seeded(1 + seed as usize % 3, 80 + seed);
            let b = schrodinger_bridge_gaussian(&m).unwrap();
            let rr = rate_report(&gaussian_trajectory(&m, 80).unwrap(), &b, &m).unwrap();
            assert!(rr.fit.is_some());
            assert!(rr.diagnostics.all_pass(), "{:?}", rr.diagnostics.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn envelopes_hold() {
        for seed in 0..6 {
            let m = seeded(1 + seed as usize % 3, 90 + seed);
            let b = schrodinger_bridge_gaussian(&m).unwrap();
            let env = envelope_report(&m, &gaussian_trajectory(&m, 201).unwrap(), &b).unwrap();
            assert!(!env.vacuous);
            assert!(env.diagnostics.all_pass(), "{:?}", env.diagnostics.failures().collect::<Vec<_>>());
            assert!(env.diagnostics.checks().iter().any(|c| c == "w2_even"));
        }
        // a contracting scalar instance exercises the ε < 1 decay rows
        let m = GaussianModel::new(g1(0.0, 0.5), g1(2.0, 0.6), k1(0.3, 0.5, 1.0)).unwrap();
        let b = schrodinger_bridge_gaussian(&m).unwrap();
        let env = envelope_report(&m, &gaussian_trajectory(&m, 60).unwrap(), &b).unwrap();
        assert!(env.epsilon < 1.0);
        assert!(env.diagnostics.all_pass(), "{:?}", env.diagnostics.failures().collect::<Vec<_>>());
        assert!(env.diagnostics.checks().iter().any(|c| c == "w2_decay_even"));
        let sb = GaussianModel::self_bridged(g1(0.0, 1.0), k1(0.0, 1.0, 1.0)).unwrap();
        let b = schrodinger_bridge_gaussian(&sb).unwrap();
        let env = envelope_report(&sb, &gaussian_trajectory(&sb, 10).unwrap(), &b).unwrap();
        assert!(env.entropies.iter().all(|v| *v < 1e-20));
        assert!(env.diagnostics.all_pass(), "{:?}", env.diagnostics.failures().collect::<Vec<_>>());
    }

    #[test]
    fn covariance_envelope_collapse_and_gap() {
        let m = seeded(2, 100);
        let (s, sb) = (&m.mu.cov, &m.eta.cov);
        let env = strongly_convex_covariance_envelope(s, s, sb, sb, &m.kernel, 20).unwrap();
        let traj = gaussian_trajectory(&m, 20).unwrap();
        for (n, st) in traj.iter().enumerate() {
            assert!((env.upper[n].matrix() - st.tau.matrix()).amax() < 1e-10);
            assert!((env.lower[n].matrix() - st.tau.matrix()).amax() < 1e-10);
        }
        assert!(env.rescaled_residual < 1e-10);
        let tau1 = (s.inverse().matrix() + m.kernel.chi().transpose() * m.kernel.tau.matrix() * m.kernel.chi()).try_inverse().unwrap();
        assert!((env.upper[1].matrix() - tau1).amax() < 1e-12);
        let half = s.as_sym().scale(0.5).to_spd().unwrap();
        let env = strongly_convex_covariance_envelope(s, &half, sb, sb, &m.kernel, 20).unwrap();
        for n in 1..=20 {
            let gap = env.upper[n].as_sym().sub(env.lower[n].as_sym());
            assert!(gap.min_eigenvalue() > 0.0, "step {n}");
        }
        assert!(env.rescaled_residual < 1e-10);
        assert!(strongly_convex_covariance_envelope(&half, s, sb, sb, &m.kernel, 3).is_err());
    }

    #[test]
    fn hessians_match_finite_differences() {
        let m = GaussianModel::new(g1(0.3, 1.7), g1(-0.4, 0.8), k1(0.2, 1.3, 0.6)).unwrap();
        let traj = gaussian_trajectory(&m, 9).unwrap();
        let h = 1e-3;
        for s in traj.iter().filter(|s| s.is_even()).take(4) {
            let hs = potential_hessian(s, &m).unwrap();
            let odd = &traj[s.step + 1];
            let f = |x: f64| potential_u(s, &m, &DVector::from_element(1, x)).unwrap();
            let fd = (f(0.5 + h) - 2.0 * f(0.5) + f(0.5 - h)) / (h * h);
            assert!((fd - hs.hess_u.matrix()[(0, 0)]).abs() < 1e-6, "U at {}: {fd}", s.step);
            let g = |y: f64| potential_v(odd, &m, &DVector::from_element(1, y)).unwrap();
            let fd = (g(-0.2 + h) - 2.0 * g(-0.2) + g(-0.2 - h)) / (h * h);
            assert!((fd - hs.hess_v.matrix()[(0, 0)]).abs() < 1e-6, "V at {}: {fd}", s.step);
            assert!(hs.decomposition_residual < 1e-12);
            assert!(hs.curvature_ok);
        }
        // at n = 0 the decomposition uses cov = τ
        let h0 = potential_hessian(&traj[0], &m).unwrap();
        let chi = m.kernel.chi()[(0, 0)];
        assert!((h0.hess_w_flat.matrix()[(0, 0)] - (1.0 / 1.7 + chi * chi * 0.6)).abs() < 1e-14);
    }

    #[test]
    fn instance_roundtrip() {
        let m = seeded(3, 110);
        let s = serde_json::to_string(&m.to_instance()).unwrap();
        let back = GaussianModel::from_instance(&serde_json::from_str(&s).unwrap()).unwrap();
        assert_eq!(back.kernel.beta, m.kernel.beta);
        assert_eq!(back.eta.cov.matrix(), m.eta.cov.matrix());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn riccati_monotone(seed in any::<u64>(), d in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_spd(&mut rng, d, 0.05, 10.0);
            let v1 = random_spd(&mut rng, d, 0.0, 2.0).into_sym();
            let v2 = v1.add(&random_spd(&mut rng, d, 0.0, 2.0).into_sym());
            let (a, b) = (riccati_apply(&w, &v1).unwrap(), riccati_apply(&w, &v2).unwrap());
            prop_assert!(loewner_leq(a.as_sym(), b.as_sym(), 1e-12).unwrap());
        }

        #[test]
        fn bridge_feasible(seed in any::<u64>(), d in 1usize..4) {
            let m = seeded(d, seed);
            let b = schrodinger_bridge_gaussian(&m).unwrap();
            let p = push_forward(&m.mu, &b.kernel).unwrap();
            prop_assert!((p.cov.matrix() - m.eta.cov.matrix()).norm() < 1e-10);
            let t = &b.drift * m.mu.cov.matrix() * b.drift.transpose() + b.varsigma.matrix();
            prop_assert!((t - m.eta.cov.matrix()).amax() < 1e-10);
        }

        #[test]
        fn sandwich_every_step(seed in any::<u64>(), d in 1usize..4) {
            let m = seeded(d, seed);
            let b = schrodinger_bridge_gaussian(&m).unwrap();
            let rr = rate_report(&gaussian_trajectory(&m, 30).unwrap(), &b, &m).unwrap();
            for c in ["sandwich_even", "sandwich_odd", "directed_bound", "directed_covariance"] {
                prop_assert_eq!(rr.diagnostics.worst(c).unwrap(), 0.0f64.max(rr.diagnostics.worst(c).unwrap()));
                prop_assert!(rr.diagnostics.rows.iter().filter(|r| r.check == c).all(|r| r.pass));
            }
        }
    }
}
