//! Finite-state Sinkhorn bridges.
//!
//! The reference coupling is `P(dx,dy) = μ(dx) K(x,dy)` with `K(x,y) = e^{-W(x,y)} ν(y)`,
//! `μ ∝ λ e^{-U}` and target `η ∝ ν e^{-V}`. Potentials `(U_n, V_n)` start at `(U, 0)` and
//! alternate
//!
//! ```text
//! V_{2n+1}   = V + log K♭(e^{-U_{2n}})        U_{2n+1}   = U_{2n}
//! U_{2(n+1)} = U + log K(e^{-V_{2n+1}})       V_{2(n+1)} = V_{2n+1}
//! ```
//!
//! with `K♭(y,x) = e^{-W(x,y)} λ(x)`. Everything is done with log-sum-exp; matrices are
//! exponentiated only when an iterate is materialized.
//!
//! W is row-normalized on construction so that `K` is Markov; this changes no
//! kernel, marginal or bridge downstream.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticRow, DiagnosticsReport, Series};
use crate::divergences::{phi_entropy, relative_entropy, relative_entropy_matrix, DiscreteMeasure, PhiFunction};
use crate::error::{domain, Error, Result};
use crate::fit::{fit_rate_above, RateFit};

pub(crate) fn lse(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn osc(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// On-disk layout of a model: `W` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    #[serde(rename = "U")]
    pub u: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DiscreteModel {
    pub nx: usize,
    pub ny: usize,
    cost: DMatrix<f64>,
    log_k: DMatrix<f64>,
    lambda: Vec<f64>,
    nu: Vec<f64>,
    ln_lambda: Vec<f64>,
    ln_nu: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    mu: DiscreteMeasure,
    eta: DiscreteMeasure,
}

pub fn build_model(w: &DMatrix<f64>, lambda: &[f64], nu: &[f64], u: &[f64], v: &[f64]) -> Result<DiscreteModel> {
    let (nx, ny) = (w.nrows(), w.ncols());
    if nx == 0 || ny == 0 {
        return domain("empty cost matrix");
    }
    if lambda.len() != nx || u.len() != nx || nu.len() != ny || v.len() != ny {
        return domain(format!(
            "dimension mismatch: W is {nx}x{ny}, lambda {}, U {}, nu {}, V {}",
            lambda.len(),
            u.len(),
            nu.len(),
            v.len()
        ));
    }
    if let Some(bad) = lambda.iter().chain(nu).find(|x| !(**x > 0.0) || !x.is_finite()) {
        return domain(format!("reference weights must be strictly positive, got {bad}"));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return domain("cost matrix has non-finite entries (zero kernel entries are not supported)");
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return domain("potentials must be finite");
    }
    let ln_lambda: Vec<f64> = lambda.iter().map(|x| x.ln()).collect();
    let ln_nu: Vec<f64> = nu.iter().map(|x| x.ln()).collect();
    let zu = lse((0..nx).map(|x| ln_lambda[x] - u[x]));
    let zv = lse((0..ny).map(|y| ln_nu[y] - v[y]));
    let u: Vec<f64> = u.iter().map(|x| x + zu).collect();
    let v: Vec<f64> = v.iter().map(|y| y + zv).collect();
    let mut log_k = DMatrix::from_fn(nx, ny, |x, y| -w[(x, y)]);
    for x in 0..nx {
        let z = lse((0..ny).map(|y| log_k[(x, y)] + ln_nu[y]));
        for y in 0..ny {
            log_k[(x, y)] -= z;
        }
    }
    let mu = DiscreteMeasure::new((0..nx).map(|x| (ln_lambda[x] - u[x]).exp()).collect())?;
    let eta = DiscreteMeasure::new((0..ny).map(|y| (ln_nu[y] - v[y]).exp()).collect())?;
    Ok(DiscreteModel {
        nx,
        ny,
        cost: w.clone(),
        log_k,
        lambda: lambda.to_vec(),
        nu: nu.to_vec(),
        ln_lambda,
        ln_nu,
        u,
        v,
        mu,
        eta,
    })
}

impl DiscreteModel {
    pub fn from_file(f: &ModelFile) -> Result<Self> {
        if f.w.len() != f.nx * f.ny {
            return domain(format!("W has {} entries, expected {}x{}", f.w.len(), f.nx, f.ny));
        }
        build_model(&DMatrix::from_row_slice(f.nx, f.ny, &f.w), &f.lambda, &f.nu, &f.u, &f.v)
    }

    /// Round-trips through `from_file` to an equivalent model (normalized potentials).
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            nx: self.nx,
            ny: self.ny,
            w: self.cost.transpose().as_slice().to_vec(),
            lambda: self.lambda.clone(),
            nu: self.nu.clone(),
            u: self.u.clone(),
            v: self.v.clone(),
        }
    }

    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    pub fn mu(&self) -> &DiscreteMeasure {
        &self.mu
    }

    pub fn eta(&self) -> &DiscreteMeasure {
        &self.eta
    }

    pub fn potentials_uv(&self) -> (&[f64], &[f64]) {
        (&self.u, &self.v)
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// The Markov reference kernel `K(x,y) = e^{-W(x,y)} ν(y)`.
    pub fn reference_kernel(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nx, self.ny, |x, y| (self.log_k[(x, y)] + self.ln_nu[y]).exp())
    }

    /// `exp(−2 osc(W))` for the cost as supplied.
    pub fn epsilon_w(&self) -> f64 {
        (-2.0 * osc(self.cost.as_slice())).exp()
    }

    /// Same model with a different target potential `V`.
    pub fn with_target(&self, v: &[f64]) -> Result<DiscreteModel> {
        build_model(&self.cost, &self.lambda, &self.nu, &self.u, v)
    }

    /// `log K(e^{-v})(x)` for every x.
    fn log_k_apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.nx).map(|x| lse((0..self.ny).map(|y| self.log_k[(x, y)] + self.ln_nu[y] - v[y]))).collect()
    }

    /// `log K♭(e^{-u})(y)` for every y.
    fn log_kflat_apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.ny).map(|y| lse((0..self.nx).map(|x| self.log_k[(x, y)] + self.ln_lambda[x] - u[x]))).collect()
    }

    /// Joint density `e^{-u(x)} k(x,y) e^{-v(y)}` against `λ⊗ν`, as a probability matrix.
    pub fn joint(&self, u: &[f64], v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.nx, self.ny, |x, y| {
            (self.ln_lambda[x] - u[x] + self.log_k[(x, y)] + self.ln_nu[y] - v[y]).exp()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornPotentials {
    pub step: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SinkhornPotentials {
    pub fn initial(model: &DiscreteModel) -> Self {
        SinkhornPotentials { step: 0, u: model.u.clone(), v: vec![0.0; model.ny] }
    }
}

pub fn half_step(model: &DiscreteModel, p: &SinkhornPotentials) -> Result<SinkhornPotentials> {
    let next = if p.step % 2 == 0 {
        let lk = model.log_kflat_apply(&p.u);
        let v = model.v.iter().zip(&lk).map(|(a, b)| a + b).collect();
        SinkhornPotentials { step: p.step + 1, u: p.u.clone(), v }
    } else {
        let lk = model.log_k_apply(&p.v);
        let u = model.u.iter().zip(&lk).map(|(a, b)| a + b).collect();
        SinkhornPotentials { step: p.step + 1, u, v: p.v.clone() }
    };
    if next.u.iter().chain(&next.v).any(|x| x.is_nan()) {
        return Err(Error::Internal { step: next.step, msg: "NaN in potentials".into() });
    }
    Ok(next)
}

/// Potentials at half-steps `0..=steps`.
pub fn potentials_trajectory(model: &DiscreteModel, steps: usize) -> Result<Vec<SinkhornPotentials>> {
    let mut out = vec![SinkhornPotentials::initial(model)];
    for _ in 0..steps {
        let next = half_step(model, out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

/// Kernels, marginals and joints of one even/odd pair of steps `(2n, 2n+1)`.
#[derive(Clone, Debug)]
pub struct SinkhornIterate {
    /// pair index n
    pub step: usize,
    pub potentials: SinkhornPotentials,
    /// 𝒦_{2n}, nx×ny
    pub kernel_even: DMatrix<f64>,
    /// 𝒦_{2n+1}, ny×nx
    pub kernel_odd: DMatrix<f64>,
    pub pi_even: DiscreteMeasure,
    pub pi_odd: DiscreteMeasure,
    /// 𝒫_{2n}
    pub joint_even: DMatrix<f64>,
    /// 𝒫_{2n+1}
    pub joint_odd: DMatrix<f64>,
}

fn row_normalize_log(mut a: DMatrix<f64>) -> DMatrix<f64> {
    for r in 0..a.nrows() {
        let z = lse(a.row(r).iter().copied());
        for c in 0..a.ncols() {
            a[(r, c)] = (a[(r, c)] - z).exp();
        }
    }
    a
}

/// Materializes the iterate at an even step `2n` (the odd half is derived from it).
pub fn materialize(model: &DiscreteModel, p: &SinkhornPotentials) -> Result<SinkhornIterate> {
    if p.step % 2 != 0 {
        return domain(format!("materialize expects an even step, got {}", p.step));
    }
    let (nx, ny) = (model.nx, model.ny);
    let kernel_even = row_normalize_log(DMatrix::from_fn(nx, ny, |x, y| model.log_k[(x, y)] + model.ln_nu[y] - p.v[y]));
    let kernel_odd = row_normalize_log(DMatrix::from_fn(ny, nx, |y, x| model.log_k[(x, y)] + model.ln_lambda[x] - p.u[x]));
    let pi_even = model.mu.push(&kernel_even)?;
    let pi_odd = model.eta.push(&kernel_odd)?;
    let joint_even = model.joint(&p.u, &p.v);
    let eta = model.eta.weights();
    let joint_odd = DMatrix::from_fn(nx, ny, |x, y| eta[y] * kernel_odd[(y, x)]);
    Ok(SinkhornIterate { step: p.step / 2, potentials: p.clone(), kernel_even, kernel_odd, pi_even, pi_odd, joint_even, joint_odd })
}

/// Iterates for pair indices `0..count`.
pub fn run_iterates(model: &DiscreteModel, count: usize) -> Result<Vec<SinkhornIterate>> {
    let mut p = SinkhornPotentials::initial(model);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(materialize(model, &p)?);
        p = half_step(model, &half_step(model, &p)?)?;
    }
    Ok(out)
}

/// Bayes dual `K*_μ(y,x) = μ(x) K(x,y) / (μK)(y)`.
pub fn dual_kernel(kernel: &DMatrix<f64>, mu: &DiscreteMeasure) -> Result<DMatrix<f64>> {
    if kernel.nrows() != mu.len() {
        return domain("dual_kernel: kernel rows and measure support differ");
    }
    let w = mu.weights();
    let col: Vec<f64> = (0..kernel.ncols()).map(|y| (0..kernel.nrows()).map(|x| w[x] * kernel[(x, y)]).sum()).collect();
    if let Some(y) = col.iter().position(|m| !(*m > 0.0)) {
        return domain(format!("dual_kernel: μK has zero mass at state {y}"));
    }
    Ok(DMatrix::from_fn(kernel.ncols(), kernel.nrows(), |y, x| w[x] * kernel[(x, y)] / col[y]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub n: usize,
    /// ℋ(Q|𝒫_{2n})
    pub h_q_even: f64,
    /// ℋ(Q|𝒫_{2n+1})
    pub h_q_odd: f64,
    /// ℋ(η|π_{2n})
    pub h_eta_pi_even: f64,
    /// ℋ(μ|π_{2n+1})
    pub h_mu_pi_odd: f64,
    /// Σ_{l<n} [ℋ(η|π_{2l}) + ℋ(μ|π_{2l+1})]
    pub partial_sum: f64,
    /// |ℋ(Q|P) − ℋ(Q|𝒫_{2n}) − partial_sum|
    pub residual: f64,
    /// |ℋ(Q|𝒫_{2n}) − ℋ(Q|𝒫_{2n+1}) − ℋ(η|π_{2n})|
    pub half_residual: f64,
    pub infinite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    /// ℋ(Q|P)
    pub h_qp: f64,
    pub rows: Vec<LadderRow>,
}

impl LadderReport {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().filter(|r| !r.infinite).map(|r| r.residual.max(r.half_residual)).fold(0.0, f64::max)
    }
}

fn check_coupling(q: &DMatrix<f64>, mu: &DiscreteMeasure, eta: &DiscreteMeasure, tol: f64) -> Result<()> {
    if q.nrows() != mu.len() || q.ncols() != eta.len() {
        return domain("coupling has the wrong shape");
    }
    let rows = (0..q.nrows()).map(|x| (q.row(x).sum() - mu.weights()[x]).abs()).fold(0.0, f64::max);
    let cols = (0..q.ncols()).map(|y| (q.column(y).sum() - eta.weights()[y]).abs()).fold(0.0, f64::max);
    if rows.max(cols) > tol {
        return domain(format!("coupling marginals off by {:e}", rows.max(cols)));
    }
    Ok(())
}

fn check_consecutive(iterates: &[SinkhornIterate]) -> Result<()> {
    if iterates.iter().enumerate().any(|(i, it)| it.step != i) {
        return domain("iterates must be consecutive and start at step 0");
    }
    Ok(())
}

pub fn entropy_ladder(model: &DiscreteModel, iterates: &[SinkhornIterate], q: &DMatrix<f64>) -> Result<LadderReport> {
    check_consecutive(iterates)?;
    if iterates.is_empty() {
        return domain("entropy_ladder needs at least one iterate");
    }
    check_coupling(q, &model.mu, &model.eta, 1e-10)?;
    let h_qp = relative_entropy_matrix(q, &iterates[0].joint_even);
    let mut partial = 0.0;
    let mut rows = Vec::with_capacity(iterates.len());
    for it in iterates {
        let h_q_even = relative_entropy_matrix(q, &it.joint_even);
        let h_q_odd = relative_entropy_matrix(q, &it.joint_odd);
        let he = relative_entropy(model.eta.weights(), it.pi_even.weights());
        let hm = relative_entropy(model.mu.weights(), it.pi_odd.weights());
        let infinite = ![h_qp, h_q_even, h_q_odd, he, hm].iter().all(|v| v.is_finite());
        let (residual, half_residual) = if infinite {
            (f64::NAN, f64::NAN)
        } else {
            ((h_qp - h_q_even - partial).abs(), (h_q_even - h_q_odd - he).abs())
        };
        rows.push(LadderRow { n: it.step, h_q_even, h_q_odd, h_eta_pi_even: he, h_mu_pi_odd: hm, partial_sum: partial, residual, half_residual, infinite });
        partial += he + hm;
    }
    Ok(LadderReport { h_qp, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule { tol: 1e-12, max_sweeps: 10_000 }
    }
}

#[derive(Clone, Debug)]
pub struct BridgeSolution {
    pub uu: Vec<f64>,
    pub vv: Vec<f64>,
    pub bridge: DMatrix<f64>,
    pub iterations_used: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Max-norm violation of `𝕌 = U + log K(e^{-𝕍})` and `𝕍 = V + log K♭(e^{-𝕌})`.
pub fn schrodinger_residual(model: &DiscreteModel, uu: &[f64], vv: &[f64]) -> f64 {
    let a = model.log_k_apply(vv);
    let b = model.log_kflat_apply(uu);
    let r1 = (0..model.nx).map(|x| (uu[x] - model.u[x] - a[x]).abs()).fold(0.0, f64::max);
    let r2 = (0..model.ny).map(|y| (vv[y] - model.v[y] - b[y]).abs()).fold(0.0, f64::max);
    r1.max(r2)
}

pub fn solve_bridge(model: &DiscreteModel, stop: StoppingRule) -> Result<BridgeSolution> {
    let mut p = SinkhornPotentials::initial(model);
    let mut sweeps = 0;
    let mut residual = schrodinger_residual(model, &p.u, &p.v);
    while residual > stop.tol && sweeps < stop.max_sweeps {
        p = half_step(model, &half_step(model, &p)?)?;
        sweeps += 1;
        residual = schrodinger_residual(model, &p.u, &p.v);
    }
    Ok(BridgeSolution {
        bridge: model.joint(&p.u, &p.v),
        uu: p.u,
        vv: p.v,
        iterations_used: sweeps,
        residual,
        converged: residual <= stop.tol,
    })
}

const ID_TOL: f64 = 1e-12;

fn ratio(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x / y).collect()
}

fn apply(k: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (0..k.nrows()).map(|r| (0..k.ncols()).map(|c| k[(r, c)] * f[c]).sum()).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn vec_row(name: &str, n: usize, lhs: &[f64], rhs: &[f64], tol: f64) -> DiagnosticRow {
    DiagnosticRow::residual(name, n, max_diff(lhs, rhs), tol * (1.0 + max_abs(rhs)))
}

/// The monotone entropy chains, commutation and semigroup formulae, fixed-point and
/// marginal contracts, potential series, and (on supports up to 4×4) the half-bridge
/// variational characterizations by direct numerical minimization.
pub fn identity_suite(model: &DiscreteModel, iterates: &[SinkhornIterate]) -> Result<DiagnosticsReport> {
    check_consecutive(iterates)?;
    if iterates.len() < 2 {
        return domain("identity_suite needs at least two consecutive iterates");
    }
    let mu = model.mu.weights();
    let eta = model.eta.weights();
    let h = |a: &DiscreteMeasure, b: &DiscreteMeasure| relative_entropy(a.weights(), b.weights());
    let mut rep = DiagnosticsReport::default();
    let n_it = iterates.len();

    for (n, it) in iterates.iter().enumerate() {
        let (pe, po) = (&it.pi_even, &it.pi_odd);
        // contracts of the joints
        let xm: Vec<f64> = (0..model.nx).map(|x| it.joint_even.row(x).sum()).collect();
        let ym: Vec<f64> = (0..model.ny).map(|y| it.joint_odd.column(y).sum()).collect();
        rep.push(vec_row("joint_even_x_marginal", n, &xm, mu, ID_TOL));
        rep.push(vec_row("joint_odd_y_marginal", n, &ym, eta, ID_TOL));
        let direct = DMatrix::from_fn(model.nx, model.ny, |x, y| mu[x] * it.kernel_even[(x, y)]);
        rep.push(DiagnosticRow::residual("joint_even_product_form", n, (&direct - &it.joint_even).amax(), ID_TOL));
        // fixed points π_{2n}𝒦_{2n+1} = μ and π_{2n+1}𝒦_{2(n+1)} = η
        rep.push(vec_row("fixed_point_mu", n, pe.push(&it.kernel_odd)?.weights(), mu, ID_TOL));
        if n + 1 < n_it {
            let nx = &iterates[n + 1];
            rep.push(vec_row("fixed_point_eta", n, po.push(&nx.kernel_even)?.weights(), eta, ID_TOL));
        }

        // monotone chains
        if n + 1 < n_it {
            let pe2 = &iterates[n + 1].pi_even;
            let a = h(&model.eta, pe2);
            let b = h(po, &model.mu);
            let c = h(&model.eta, pe);
            rep.push(DiagnosticRow::le("chain_eta_even", n, a, b, ID_TOL));
            rep.push(DiagnosticRow::le("chain_eta_even", n, b, c, ID_TOL));
            let a = h(pe2, &model.eta);
            let b = h(&model.mu, po);
            let c = h(pe, &model.eta);
            rep.push(DiagnosticRow::le("chain_mu_odd", n, a, b, ID_TOL));
            rep.push(DiagnosticRow::le("chain_mu_odd", n, b, c, ID_TOL));
        }
        if n >= 1 {
            let pm = &iterates[n - 1].pi_odd;
            let a = h(po, &model.mu);
            let b = h(&model.eta, pe);
            let c = h(pm, &model.mu);
            rep.push(DiagnosticRow::le("chain_pi_odd_mu", n, a, b, ID_TOL));
            rep.push(DiagnosticRow::le("chain_pi_odd_mu", n, b, c, ID_TOL));
            let a = h(&model.mu, po);
            let b = h(pe, &model.eta);
            let c = h(&model.mu, pm);
            rep.push(DiagnosticRow::le("chain_mu_pi_odd", n, a, b, ID_TOL));
            rep.push(DiagnosticRow::le("chain_mu_pi_odd", n, b, c, ID_TOL));
        }

        // commutation formulae
        let d_eta_pe = ratio(eta, pe.weights());
        let d_pe_eta = ratio(pe.weights(), eta);
        let d_po_mu = ratio(po.weights(), mu);
        let d_mu_po = ratio(mu, po.weights());
        rep.push(vec_row("commute_even", n, &apply(&it.kernel_even, &d_eta_pe), &d_po_mu, ID_TOL));
        if n + 1 < n_it {
            rep.push(vec_row("commute_even_next", n, &apply(&iterates[n + 1].kernel_even, &d_pe_eta), &d_mu_po, ID_TOL));
        }
        if n >= 1 {
            let prev = &iterates[n - 1];
            let d_mu_pm = ratio(mu, prev.pi_odd.weights());
            let d_pm_mu = ratio(prev.pi_odd.weights(), mu);
            rep.push(vec_row("commute_odd_prev", n, &apply(&prev.kernel_odd, &d_mu_pm), &d_pe_eta, ID_TOL));
            rep.push(vec_row("commute_odd", n, &apply(&it.kernel_odd, &d_pm_mu), &d_eta_pe, ID_TOL));
            // semigroups 𝒮_{2n} = 𝒦_{2n−1}𝒦_{2n}, 𝒮_{2n+1} = 𝒦_{2n}𝒦_{2n+1}
            let s_even = &prev.kernel_odd * &it.kernel_even;
            let s_odd = &it.kernel_even * &it.kernel_odd;
            let d_prev_eta = ratio(prev.pi_even.weights(), eta);
            rep.push(vec_row("semigroup_even", n, &apply(&s_even, &d_prev_eta), &d_pe_eta, ID_TOL));
            rep.push(vec_row("semigroup_odd", n, &apply(&s_odd, &d_pm_mu), &d_po_mu, ID_TOL));
        }

        // potential series and mean monotonicity
        let p = &it.potentials;
        let mut su = model.u.clone();
        let mut sv = vec![0.0; model.ny];
        for prev in &iterates[..n] {
            for x in 0..model.nx {
                su[x] -= (mu[x] / prev.pi_odd.weights()[x]).ln();
            }
            for y in 0..model.ny {
                sv[y] -= (eta[y] / prev.pi_even.weights()[y]).ln();
            }
        }
        rep.push(vec_row("potential_series_u", n, &p.u, &su, 1e-10));
        rep.push(vec_row("potential_series_v", n, &p.v, &sv, 1e-10));
        let ev = model.eta.integrate(&p.v);
        let mu_u = model.mu.integrate(&p.u);
        if n == 0 {
            rep.push(DiagnosticRow::le("potential_mean_v", n, ev, 0.0, ID_TOL));
            rep.push(DiagnosticRow::le("potential_mean_u", n, mu_u, model.mu.integrate(&model.u), ID_TOL));
        }
        if n + 1 < n_it {
            let q = &iterates[n + 1].potentials;
            rep.push(DiagnosticRow::le("potential_mean_v", n + 1, model.eta.integrate(&q.v), ev, ID_TOL));
            rep.push(DiagnosticRow::le("potential_mean_u", n + 1, model.mu.integrate(&q.u), mu_u, ID_TOL));
        }
    }

    if model.nx <= 4 && model.ny <= 4 {
        for n in 0..n_it.min(3) {
            half_bridge_rows(model, iterates, n, &mut rep);
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy)]
enum Objective {
    /// ℋ(Q|target)
    Forward,
    /// ℋ(target|Q)
    Reverse,
}

fn objective(obj: Objective, q: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match obj {
        Objective::Forward => relative_entropy_matrix(q, p),
        Objective::Reverse => relative_entropy_matrix(p, q),
    }
}

/// Minimizes ℋ(Q|p) or ℋ(p|Q) over matrices with prescribed column sums by
/// exponentiated-gradient descent from a random interior start.
fn minimize_columns(obj: Objective, p: &DMatrix<f64>, cols: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (r, c) = (p.nrows(), p.ncols());
    let mut q = DMatrix::from_fn(r, c, |_, _| 0.2 + rng.random::<f64>());
    let normalize = |q: &mut DMatrix<f64>| {
        for j in 0..c {
            let s = q.column(j).sum();
            for i in 0..r {
                q[(i, j)] *= cols[j] / s;
            }
        }
    };
    normalize(&mut q);
    for _ in 0..4000 {
        let grad = match obj {
            Objective::Forward => DMatrix::from_fn(r, c, |i, j| (q[(i, j)] / p[(i, j)]).ln()),
            Objective::Reverse => DMatrix::from_fn(r, c, |i, j| -p[(i, j)] / q[(i, j)]),
        };
        let scale = grad.amax().max(1.0);
        let t = 0.5 / scale;
        for j in 0..c {
            for i in 0..r {
                q[(i, j)] *= (-t * grad[(i, j)]).exp();
            }
        }
        normalize(&mut q);
    }
    q
}

fn random_coupling_columns(r: usize, cols: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut q = DMatrix::from_fn(r, cols.len(), |_, _| -rng.random::<f64>().max(1e-300).ln());
    for j in 0..cols.len() {
        let s = q.column(j).sum();
        for i in 0..r {
            q[(i, j)] *= cols[j] / s;
        }
    }
    q
}

fn half_bridge_rows(model: &DiscreteModel, iterates: &[SinkhornIterate], n: usize, rep: &mut DiagnosticsReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a1f_b12d ^ n as u64);
    let it = &iterates[n];
    // over Π(·, η): constrain columns; target 𝒫_{2n+1}
    let cases: Vec<(&str, Objective, DMatrix<f64>, Vec<f64>, DMatrix<f64>)> = {
        let mut v = vec![
            ("half_bridge_forward_eta", Objective::Forward, it.joint_even.clone(), model.eta.weights().to_vec(), it.joint_odd.clone()),
            ("half_bridge_reverse_eta", Objective::Reverse, it.joint_even.clone(), model.eta.weights().to_vec(), it.joint_odd.clone()),
        ];
        // over Π(μ, ·): transpose so that rows become columns; target 𝒫_{2(n+1)}
        if n + 1 < iterates.len() {
            let target = iterates[n + 1].joint_even.transpose();
            v.push(("half_bridge_reverse_mu", Objective::Reverse, it.joint_odd.transpose(), model.mu.weights().to_vec(), target.clone()));
            v.push(("half_bridge_forward_mu", Objective::Forward, it.joint_odd.transpose(), model.mu.weights().to_vec(), target));
        }
        v
    };
    for (name, obj, p, cols, target) in cases {
        let q = minimize_columns(obj, &p, &cols, &mut rng);
        rep.push(DiagnosticRow::residual(name, n, (&q - &target).amax(), 1e-8));
        let best = objective(obj, &target, &p);
        let sampled = (0..400)
            .map(|_| objective(obj, &random_coupling_columns(p.nrows(), &cols, &mut rng), &p))
            .fold(f64::INFINITY, f64::min);
        rep.push(DiagnosticRow::le(&format!("{name}_no_better_sample"), n, best, sampled, ID_TOL));
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateReport {
    pub epsilon_w: f64,
    /// (1 − ε_W)²
    pub bound: f64,
    pub series: Vec<Series>,
    /// fitted geometric rate of ||dπ_{2n}/dη − 1||_∞ (n ≥ 1)
    pub sup_norm_fit: Option<RateFit>,
    pub diagnostics: DiagnosticsReport,
}

const RATE_PHIS: [PhiFunction; 3] = [PhiFunction::Kl, PhiFunction::Tv, PhiFunction::Hellinger];

pub fn geometric_rate_report(model: &DiscreteModel, iterates: &[SinkhornIterate]) -> Result<RateReport> {
    check_consecutive(iterates)?;
    let eps = model.epsilon_w();
    let bound = (1.0 - eps).powi(2);
    let eta = model.eta.weights();
    let mu = model.mu.weights();
    let mut rep = DiagnosticsReport::default();
    let mut series = Vec::new();
    for phi in RATE_PHIS {
        for (label, odd) in [("even", false), ("odd", true)] {
            let vals: Vec<f64> = iterates
                .iter()
                .map(|it| if odd { phi_entropy(&phi, &it.pi_odd, &model.mu) } else { phi_entropy(&phi, &it.pi_even, &model.eta) })
                .collect::<Result<_>>()?;
            let name = format!("phi_{}_{}", phi.name(), label);
            let mut ratios = Series::new(&format!("ratio_{}_{}", phi.name(), label));
            for n in 0..vals.len().saturating_sub(1) {
                if vals[n] < crate::fit::SATURATION_FLOOR {
                    break;
                }
                let r = vals[n + 1] / vals[n];
                ratios.points.push((n, r));
                rep.push(DiagnosticRow::le(&format!("geometric_{}", phi.name()), n, r, bound, 1e-10));
            }
            series.push(Series::from_values(&name, &vals));
            series.push(ratios);
        }
    }
    let mut sup = Series::new("sup_density_gap");
    for it in iterates.iter().skip(1) {
        let n = it.step;
        let pe = it.pi_even.weights();
        let po = it.pi_odd.weights();
        let lo = (0..eta.len()).map(|y| pe[y] - eps * eta[y]).fold(f64::INFINITY, f64::min);
        let hi = (0..eta.len()).map(|y| pe[y] - eta[y] / eps).fold(f64::NEG_INFINITY, f64::max);
        rep.push(DiagnosticRow::le("sandwich_even", n, -lo, 0.0, 1e-15));
        rep.push(DiagnosticRow::le("sandwich_even", n, hi, 0.0, 1e-15));
        let lo = (0..mu.len()).map(|x| po[x] - eps * mu[x]).fold(f64::INFINITY, f64::min);
        let hi = (0..mu.len()).map(|x| po[x] - mu[x] / eps).fold(f64::NEG_INFINITY, f64::max);
        rep.push(DiagnosticRow::le("sandwich_odd", n, -lo, 0.0, 1e-15));
        rep.push(DiagnosticRow::le("sandwich_odd", n, hi, 0.0, 1e-15));
        sup.points.push((n, (0..eta.len()).map(|y| (pe[y] / eta[y] - 1.0).abs()).fold(0.0, f64::max)));
    }
    let sup_norm_fit = fit_rate_above(&sup.points, None, 1e-12);
    if let Some(f) = sup_norm_fit {
        rep.push(DiagnosticRow::le("sup_density_rate", 0, f.factor(), bound, 1e-9));
    }
    series.push(sup);
    Ok(RateReport { epsilon_w: eps, bound, series, sup_norm_fit, diagnostics: rep })
}

/// Checks tied to the solved bridge: linear entropy decay, the entropic series,
/// the potential formula for ℋ(P_{μ,η}|𝒫_{2n}), and the potential convergence rate.
pub fn bridge_series_report(model: &DiscreteModel, iterates: &[SinkhornIterate], bridge: &BridgeSolution) -> Result<(DiagnosticsReport, Vec<Series>, Option<RateFit>)> {
    check_consecutive(iterates)?;
    let mut rep = DiagnosticsReport::default();
    let p0 = &iterates[0].joint_even;
    let h_bp = relative_entropy_matrix(&bridge.bridge, p0);
    let terms: Vec<f64> = iterates
        .iter()
        .map(|it| relative_entropy(model.eta.weights(), it.pi_even.weights()) + relative_entropy(model.mu.weights(), it.pi_odd.weights()))
        .collect();
    for (n, t) in terms.iter().enumerate() {
        rep.push(DiagnosticRow::le("linear_decay", n, (n + 1) as f64 * t, h_bp, 1e-8));
    }
    // tail Σ_{l≥n} terms, valid once the last computed term is negligible
    let tail_ok = terms.last().is_some_and(|t| *t < 1e-15);
    let mut tail = 0.0;
    let mut tails = vec![0.0; terms.len()];
    for n in (0..terms.len()).rev() {
        tail += terms[n];
        tails[n] = tail;
    }
    let mut gap_v = Series::new("potential_gap_v");
    let mut gap_u = Series::new("potential_gap_u");
    for (n, it) in iterates.iter().enumerate() {
        let h = relative_entropy_matrix(&bridge.bridge, &it.joint_even);
        if tail_ok {
            rep.push(DiagnosticRow::eq("entropy_series", n, h, tails[n], 1e-8));
        }
        let p = &it.potentials;
        let du: Vec<f64> = p.u.iter().zip(&bridge.uu).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = p.v.iter().zip(&bridge.vv).map(|(a, b)| a - b).collect();
        let via_potentials = model.mu.integrate(&du) + model.eta.integrate(&dv);
        rep.push(DiagnosticRow::eq("entropy_potential_formula", n, h, via_potentials, 1e-10));
        gap_v.points.push((n, max_abs(&dv)));
        gap_u.points.push((n, max_abs(&du)));
    }
    let bound = (1.0 - model.epsilon_w()).powi(2);
    let fit = fit_rate_above(&gap_v.points, None, 1e-10);
    if let Some(f) = fit {
        rep.push(DiagnosticRow::le("potential_rate", 0, f.factor(), bound, 1e-9));
    }
    Ok((rep, vec![gap_v, gap_u], fit))
}

/// `c = max_n ||V_{2n} − 𝕍||_∞ / (1−ε_W)^{2n}` over the computed range.
pub fn fitted_series_constant(model: &DiscreteModel, gap: &Series) -> f64 {
    let b = (1.0 - model.epsilon_w()).powi(2);
    gap.points.iter().map(|(n, v)| v / b.powi(*n as i32)).fold(0.0, f64::max)
}
