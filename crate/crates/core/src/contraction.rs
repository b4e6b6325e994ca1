//! Contraction coefficients of finite Markov kernels: Dobrushin, weighted
//! Kantorovich–Lipschitz norms, drift/minorization checks and the `(a, ϱ)` search.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergences::{phi_entropy, stochastic_defect, tv_distance, DiscreteMeasure, PhiFunction};
use crate::error::{domain, Result};

fn check_kernel(k: &DMatrix<f64>) -> Result<()> {
    match stochastic_defect(k) {
        Some(d) if d <= 1e-9 => Ok(()),
        Some(d) => domain(format!("kernel rows deviate from 1 by {d:e}")),
        None => domain("kernel has negative or NaN entries"),
    }
}

fn row_tv(k: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    0.5 * (0..k.ncols()).map(|c| (k[(i, c)] - k[(j, c)]).abs()).sum::<f64>()
}

/// `max_{x1,x2} ||δ_{x1}K − δ_{x2}K||_tv`.
pub fn dobrushin(kernel: &DMatrix<f64>) -> Result<f64> {
    check_kernel(kernel)?;
    let n = kernel.nrows();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            best = best.max(row_tv(kernel, i, j));
        }
    }
    Ok(best)
}

fn dobrushin_argmax(kernel: &DMatrix<f64>) -> (usize, usize) {
    let n = kernel.nrows();
    let mut arg = (0, n.min(2) - 1);
    let mut best = -1.0;
    for i in 0..n {
        for j in i + 1..n {
            let t = row_tv(kernel, i, j);
            if t > best {
                best = t;
                arg = (i, j);
            }
        }
    }
    arg
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub phi: String,
    pub dobrushin: f64,
    pub samples: usize,
    /// largest observed ℋ_Φ(μ1K, μ2K) / ℋ_Φ(μ1, μ2)
    pub max_ratio: f64,
    /// (sample index, ratio) for every ratio above dobrushin + 1e-12
    pub violations: Vec<(usize, f64)>,
}

fn random_measure(n: usize, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
    // Dirichlet(1/2) style spread, so that some samples sit near the boundary
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(2) + 1e-9).collect();
    DiscreteMeasure::new(w).expect("positive weights")
}

/// Probes the universal bound `ℋ_Φ(μ1K, μ2K) ≤ dob(K) ℋ_Φ(μ1, μ2)` on random pairs.
/// The first sample is the Dirac pair at the rows realizing `dob(K)` (skipped when
/// its Φ-entropy is infinite).
pub fn phi_contraction_probe(kernel: &DMatrix<f64>, phi: &PhiFunction, samples: usize, seed: u64) -> Result<ProbeReport> {
    let dob = dobrushin(kernel)?;
    let n = kernel.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    let mut violations = Vec::new();
    for s in 0..samples {
        let (m1, m2) = if s == 0 && n >= 2 {
            let (i, j) = dobrushin_argmax(kernel);
            (DiscreteMeasure::dirac(n, i), DiscreteMeasure::dirac(n, j))
        } else {
            (random_measure(n, &mut rng), random_measure(n, &mut rng))
        };
        let before = phi_entropy(phi, &m1, &m2)?;
        if !before.is_finite() || before <= 1e-300 {
            continue;
        }
        let after = phi_entropy(phi, &m1.push(kernel)?, &m2.push(kernel)?)?;
        let r = after / before;
        max_ratio = max_ratio.max(r);
        if r > dob + 1e-12 {
            violations.push((s, r));
        }
    }
    Ok(ProbeReport { phi: phi.name().to_string(), dobrushin: dob, samples, max_ratio, violations })
}

/// Lyapunov weights `(g, h)` and scale `a`, giving `g_a = ½ + a g`, `h_a = ½ + a h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub a: f64,
}

impl WeightPair {
    pub fn new(g: Vec<f64>, h: Vec<f64>, a: f64) -> Result<Self> {
        if g.iter().chain(&h).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return domain("Lyapunov weights must be positive and finite");
        }
        if !(a >= 0.0) || !a.is_finite() {
            return domain(format!("scale a must be nonnegative, got {a}"));
        }
        Ok(WeightPair { g, h, a })
    }

    pub fn g_a(&self) -> Vec<f64> {
        self.g.iter().map(|v| 0.5 + self.a * v).collect()
    }

    pub fn h_a(&self) -> Vec<f64> {
        self.h.iter().map(|v| 0.5 + self.a * v).collect()
    }

    /// `(h, g)` at the same scale, for kernels running from 𝕐 back to 𝕏.
    pub fn swapped(&self) -> Self {
        WeightPair { g: self.h.clone(), h: self.g.clone(), a: self.a }
    }

    pub fn with_scale(&self, a: f64) -> Self {
        WeightPair { a, ..self.clone() }
    }
}

/// `sup_{x1≠x2} Σ_y h(y)|K(x1,y) − K(x2,y)| / (g(x1) + g(x2))`.
pub fn lip_norm_weights(kernel: &DMatrix<f64>, g: &[f64], h: &[f64]) -> Result<f64> {
    if g.len() != kernel.nrows() || h.len() != kernel.ncols() {
        return domain("lip_norm: weight lengths do not match the kernel");
    }
    let mut best = 0.0f64;
    for i in 0..kernel.nrows() {
        for j in i + 1..kernel.nrows() {
            let num: f64 = (0..kernel.ncols()).map(|c| h[c] * (kernel[(i, c)] - kernel[(j, c)]).abs()).sum();
            best = best.max(num / (g[i] + g[j]));
        }
    }
    Ok(best)
}

/// `lip_{g_a,h_a}(K)`.
pub fn lip_norm(kernel: &DMatrix<f64>, weights: &WeightPair) -> Result<f64> {
    lip_norm_weights(kernel, &weights.g_a(), &weights.h_a())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub pass: bool,
    /// max of `K(h) − εg − c` and `L(g) − εh − c`; ≤ 0 when the drift holds
    pub worst_slack: f64,
    /// ("K", x) or ("L", y) at the worst slack
    pub worst_state: (String, usize),
    /// `K(h̄) ≤ εḡ + ½` and `L(ḡ) ≤ εh̄ + ½` with `ḡ = ½ + ε g/(2c)`
    pub rescaled_pass: bool,
    pub rescaled_worst_slack: f64,
}

fn apply(k: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (0..k.nrows()).map(|r| (0..k.ncols()).map(|c| k[(r, c)] * f[c]).sum()).collect()
}

fn drift_slack(k: &DMatrix<f64>, l: &DMatrix<f64>, g: &[f64], h: &[f64], eps: f64, c: f64) -> (f64, (String, usize)) {
    let mut worst = (f64::NEG_INFINITY, ("K".to_string(), 0));
    for (x, v) in apply(k, h).iter().enumerate() {
        let s = v - eps * g[x] - c;
        if s > worst.0 {
            worst = (s, ("K".to_string(), x));
        }
    }
    for (y, v) in apply(l, g).iter().enumerate() {
        let s = v - eps * h[y] - c;
        if s > worst.0 {
            worst = (s, ("L".to_string(), y));
        }
    }
    worst
}

pub fn drift_check(kernel_k: &DMatrix<f64>, kernel_l: &DMatrix<f64>, weights: &WeightPair, epsilon: f64, c: f64) -> Result<DriftReport> {
    check_kernel(kernel_k)?;
    check_kernel(kernel_l)?;
    if !(epsilon > 0.0 && epsilon < 1.0) || !(c > 0.0) {
        return domain(format!("drift_check needs ε in (0,1) and c > 0, got ε = {epsilon}, c = {c}"));
    }
    let (g, h) = (&weights.g, &weights.h);
    if g.len() != kernel_k.nrows() || h.len() != kernel_k.ncols() || kernel_l.nrows() != h.len() || kernel_l.ncols() != g.len() {
        return domain("drift_check: kernel shapes do not match (g, h)");
    }
    let (worst_slack, worst_state) = drift_slack(kernel_k, kernel_l, g, h, epsilon, c);
    let s = epsilon / (2.0 * c);
    let gb: Vec<f64> = g.iter().map(|v| 0.5 + s * v).collect();
    let hb: Vec<f64> = h.iter().map(|v| 0.5 + s * v).collect();
    let (rescaled_worst_slack, _) = drift_slack(kernel_k, kernel_l, &gb, &hb, epsilon, 0.5);
    let tol = 1e-12;
    Ok(DriftReport {
        pass: worst_slack <= tol,
        worst_slack,
        worst_state,
        rescaled_pass: rescaled_worst_slack <= tol,
        rescaled_worst_slack,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinorizationRow {
    pub level: f64,
    /// largest ι with `K(x,·) ≥ ι ref_y` on `{h ≤ l}` for `g(x) ≤ l`, and likewise for L
    pub iota: f64,
    /// ι times the smaller reference mass of the sublevel sets: the minorization
    /// constant against the normalized restricted reference
    pub mass: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MinorizationTable {
    pub rows: Vec<MinorizationRow>,
    /// levels with an empty sublevel set, with the reason
    pub skipped: Vec<(f64, String)>,
}

impl MinorizationTable {
    pub fn at(&self, level: f64) -> Option<&MinorizationRow> {
        self.rows.iter().find(|r| r.level == level)
    }
}

fn block_iota(k: &DMatrix<f64>, rows: &[usize], cols: &[usize], reference: &[f64]) -> f64 {
    let mut iota = f64::INFINITY;
    for &x in rows {
        for &y in cols {
            if reference[y] > 0.0 {
                iota = iota.min(k[(x, y)] / reference[y]);
            }
        }
    }
    iota
}

/// `ref_y` is the reference on 𝕐 for rows of K, `ref_x` the one on 𝕏 for rows of L.
pub fn minorization_table(
    kernel_k: &DMatrix<f64>,
    kernel_l: &DMatrix<f64>,
    weights: &WeightPair,
    ref_x: &DiscreteMeasure,
    ref_y: &DiscreteMeasure,
    levels: &[f64],
) -> Result<MinorizationTable> {
    let (g, h) = (&weights.g, &weights.h);
    if kernel_k.shape() != (g.len(), h.len()) || kernel_l.shape() != (h.len(), g.len()) || ref_x.len() != g.len() || ref_y.len() != h.len() {
        return domain("minorization_table: shapes do not match");
    }
    let mut out = MinorizationTable::default();
    for &level in levels {
        let sx: Vec<usize> = (0..g.len()).filter(|&x| g[x] <= level).collect();
        let sy: Vec<usize> = (0..h.len()).filter(|&y| h[y] <= level).collect();
        if sx.is_empty() || sy.is_empty() {
            let side = if sx.is_empty() { "{g <= l}" } else { "{h <= l}" };
            out.skipped.push((level, format!("empty sublevel set {side}")));
            continue;
        }
        let mass_y: f64 = sy.iter().map(|&y| ref_y.weights()[y]).sum();
        let mass_x: f64 = sx.iter().map(|&x| ref_x.weights()[x]).sum();
        let ik = block_iota(kernel_k, &sx, &sy, ref_y.weights());
        let il = block_iota(kernel_l, &sy, &sx, ref_x.weights());
        let mass = (ik * mass_y).min(il * mass_x).min(1.0);
        out.rows.push(MinorizationRow { level, iota: ik.min(il), mass });
    }
    Ok(out)
}

/// One or more kernel pairs `(K, L)` with Lyapunov data.
///
/// With several pairs the search certifies all of them at a common `(a, ϱ)`, as
/// needed for the time-varying Sinkhorn kernels.
#[derive(Clone, Debug)]
pub struct LyapunovInput {
    pub pairs: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub ref_x: DiscreteMeasure,
    pub ref_y: DiscreteMeasure,
    /// drift rate used to report `c`
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub a: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub c: f64,
    pub lip_k: f64,
    pub lip_l: f64,
    /// max over pairs of `lip_{g_a,g_a}(KL) ∨ lip_{h_a,h_a}(LK)`
    pub lip_product: f64,
    pub iota_table: MinorizationTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchFailure {
    pub best_a: f64,
    pub best_rho: f64,
    pub grid_size: usize,
}

/// Log-spaced grid of 50 points over `[1e-4, 1e4]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-4, 1e4, 50)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    v[0] = lo;
    v[n - 1] = hi;
    v
}

fn rho_at(input: &LyapunovInput, a: f64) -> Result<(f64, f64, f64)> {
    let w = WeightPair { g: input.g.clone(), h: input.h.clone(), a };
    let ws = w.swapped();
    let (mut lk, mut ll) = (0.0f64, 0.0f64);
    for (k, l) in &input.pairs {
        lk = lk.max(lip_norm(k, &w)?);
        ll = ll.max(lip_norm(l, &ws)?);
    }
    Ok((lk.max(ll), lk, ll))
}

impl LyapunovInput {
    pub fn single(k: DMatrix<f64>, l: DMatrix<f64>, g: Vec<f64>, h: Vec<f64>, ref_x: DiscreteMeasure, ref_y: DiscreteMeasure) -> Self {
        LyapunovInput { pairs: vec![(k, l)], g, h, ref_x, ref_y, epsilon: 0.5 }
    }

    fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return domain("lyapunov_search needs at least one kernel pair");
        }
        for (k, l) in &self.pairs {
            check_kernel(k)?;
            check_kernel(l)?;
            if k.shape() != (self.g.len(), self.h.len()) || l.shape() != (self.h.len(), self.g.len()) {
                return domain("lyapunov_search: kernel shapes do not match (g, h)");
            }
        }
        WeightPair::new(self.g.clone(), self.h.clone(), 0.0).map(|_| ())
    }

    /// Smallest `c` making the drift hold at rate ε for every pair.
    fn drift_constant(&self) -> f64 {
        let mut c = 0.0f64;
        for (k, l) in &self.pairs {
            c = c.max(drift_slack(k, l, &self.g, &self.h, self.epsilon, 0.0).0);
        }
        c.max(f64::MIN_POSITIVE)
    }

    fn levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.g.iter().chain(&self.h).copied().collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Scans the grid for the smallest `ϱ = max(lip_{g_a,h_a}(K), lip_{h_a,g_a}(L))`,
/// ties to the smaller `a`. Fails when no grid point gives `ϱ < 1`.
pub fn lyapunov_search(input: &LyapunovInput, grid: &[f64]) -> Result<std::result::Result<ContractionCertificate, SearchFailure>> {
    input.validate()?;
    if grid.is_empty() {
        return domain("lyapunov_search: empty grid");
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &a in grid {
        let (rho, lk, ll) = rho_at(input, a)?;
        if best.is_none_or(|b| rho < b.1) {
            best = Some((a, rho, lk, ll));
        }
    }
    let (a, rho, lip_k, lip_l) = best.unwrap();
    if !(rho < 1.0) {
        return Ok(Err(SearchFailure { best_a: a, best_rho: rho, grid_size: grid.len() }));
    }
    let w = WeightPair { g: input.g.clone(), h: input.h.clone(), a };
    let mut lip_product = 0.0f64;
    for (k, l) in &input.pairs {
        let kl = k * l;
        let lk = l * k;
        lip_product = lip_product.max(lip_norm_weights(&kl, &w.g_a(), &w.g_a())?).max(lip_norm_weights(&lk, &w.h_a(), &w.h_a())?);
    }
    let (k0, l0) = &input.pairs[0];
    let iota_table = minorization_table(k0, l0, &w, &input.ref_x, &input.ref_y, &input.levels())?;
    Ok(Ok(ContractionCertificate { a, rho, epsilon: input.epsilon, c: input.drift_constant(), lip_k, lip_l, lip_product, iota_table }))
}

impl ContractionCertificate {
    /// Recomputes the lip norms at `a` and checks `ϱ`, the product bound and the drift.
    pub fn verify(&self, input: &LyapunovInput) -> Result<bool> {
        let (rho, _, _) = rho_at(input, self.a)?;
        let mut ok = rho <= self.rho + 1e-12 && self.rho < 1.0 && self.lip_product <= self.rho * self.rho + 1e-12;
        let w = WeightPair::new(input.g.clone(), input.h.clone(), self.a)?;
        for (k, l) in &input.pairs {
            ok &= drift_check(k, l, &w, self.epsilon, self.c * (1.0 + 1e-12) + 1e-300)?.pass;
        }
        Ok(ok)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// `||μ1 − μ2||_{g}` after `n` applications of `KL`, for the decay check.
pub fn weighted_decay(k: &DMatrix<f64>, l: &DMatrix<f64>, m1: &DiscreteMeasure, m2: &DiscreteMeasure, g: &[f64], n: usize) -> Result<Vec<f64>> {
    let kl = k * l;
    let (mut a, mut b) = (m1.clone(), m2.clone());
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        out.push(crate::divergences::weighted_tv(&a, &b, g)?);
        if i < n {
            a = a.push(&kl)?;
            b = b.push(&kl)?;
        }
    }
    Ok(out)
}

/// `||μ1𝒮_n − μ2𝒮_n||_{g}` with `𝒮_n = K_0L_0⋯K_{n−1}L_{n−1}`, for `n = 0..=pairs.len()`.
pub fn weighted_decay_varying(pairs: &[(DMatrix<f64>, DMatrix<f64>)], m1: &DiscreteMeasure, m2: &DiscreteMeasure, g: &[f64]) -> Result<Vec<f64>> {
    let (mut a, mut b) = (m1.clone(), m2.clone());
    let mut out = vec![crate::divergences::weighted_tv(&a, &b, g)?];
    for (k, l) in pairs {
        a = a.push(k)?.push(l)?;
        b = b.push(k)?.push(l)?;
        out.push(crate::divergences::weighted_tv(&a, &b, g)?);
    }
    Ok(out)
}

/// TV between two measures after pushing both through `kernel`; used by examples.
pub fn pushed_tv(kernel: &DMatrix<f64>, m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<f64> {
    tv_distance(&m1.push(kernel)?, &m2.push(kernel)?)
}
