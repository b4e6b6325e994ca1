//! Divergences and distances between probability measures.
//!
//! | function               | what                                             |
//! |------------------------|--------------------------------------------------|
//! | `phi_entropy`          | Σ Φ(μ1(x), μ2(x)) for a 1-homogeneous convex Φ   |
//! | `weighted_tv`          | Σ g(x) |μ1(x) − μ2(x)|                           |
//! | `relative_entropy`     | KL between two nonnegative arrays of equal mass  |
//! | `gaussian_kl`, `burg`  | closed-form Gaussian relative entropy            |
//! | `gaussian_w2`          | Bures–Wasserstein distance                       |
//! | `kantorovich_discrete` | exact optimal transport by transportation simplex|

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::matcore::{principal_sqrt, SpdMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Normalizes `weights` to unit mass.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return domain("empty measure");
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return domain("measure weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return domain("measure has zero total mass");
        }
        Ok(DiscreteMeasure { weights: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn uniform(n: usize) -> Self {
        DiscreteMeasure { weights: vec![1.0 / n as f64; n] }
    }

    pub fn dirac(n: usize, at: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        DiscreteMeasure { weights }
    }

    pub fn from_dvector(v: &DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    /// `μK` for a row-stochastic `kernel`.
    pub fn push(&self, kernel: &DMatrix<f64>) -> Result<DiscreteMeasure> {
        if kernel.nrows() != self.len() {
            return domain(format!("kernel has {} rows, measure has {} atoms", kernel.nrows(), self.len()));
        }
        let out = kernel.tr_mul(&self.to_dvector());
        Self::new(out.iter().copied().collect())
    }

    /// Integral of a function against the measure.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// Maximum deviation of a row sum from 1 (and `None` if an entry is negative).
pub fn stochastic_defect(kernel: &DMatrix<f64>) -> Option<f64> {
    if kernel.iter().any(|v| !(*v >= 0.0)) {
        return None;
    }
    Some(kernel.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max))
}

/// A convex, positively 1-homogeneous Φ with Φ(1,1) = 0.
#[derive(Clone, Copy, Debug)]
pub enum PhiFunction {
    /// u log(u/v)
    Kl,
    /// |u − v| / 2
    Tv,
    /// (√u − √v)² / 2
    Hellinger,
    /// (u − v)² / v
    ChiSquare,
    Custom { name: &'static str, f: fn(f64, f64) -> f64 },
}

impl PhiFunction {
    pub const CATALOG: [PhiFunction; 4] = [PhiFunction::Kl, PhiFunction::Tv, PhiFunction::Hellinger, PhiFunction::ChiSquare];

    pub fn name(&self) -> &'static str {
        match self {
            PhiFunction::Kl => "kl",
            PhiFunction::Tv => "tv",
            PhiFunction::Hellinger => "hellinger",
            PhiFunction::ChiSquare => "chi2",
            PhiFunction::Custom { name, .. } => name,
        }
    }

    pub fn evaluate(&self, u: f64, v: f64) -> f64 {
        match self {
            PhiFunction::Kl => {
                if u == 0.0 {
                    0.0
                } else if v == 0.0 {
                    f64::INFINITY
                } else {
                    u * (u / v).ln()
                }
            }
            PhiFunction::Tv => 0.5 * (u - v).abs(),
            PhiFunction::Hellinger => 0.5 * (u.sqrt() - v.sqrt()).powi(2),
            PhiFunction::ChiSquare => {
                if v == 0.0 {
                    if u == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (u - v).powi(2) / v
                }
            }
            PhiFunction::Custom { f, .. } => f(u, v),
        }
    }
}

/// `u log(u/v) − u + v ≥ 0`, accurate when u ≈ v.
pub fn kl_term(u: f64, v: f64) -> f64 {
    if u == 0.0 {
        return v;
    }
    if v == 0.0 {
        return f64::INFINITY;
    }
    let d = u / v - 1.0;
    if d.abs() < 1e-3 {
        // (1+d)log(1+d) − d = Σ_{k≥2} (−d)^k / (k(k−1))
        let mut s = 0.0;
        let mut p = -d;
        for k in 2..10 {
            p *= -d;
            s += p / (k * (k - 1)) as f64;
        }
        v * s
    } else {
        v * ((1.0 + d) * (1.0 + d).ln() - d)
    }
}

/// Relative entropy `Σ q log(q/p)` for arrays of equal total mass, summed as Σ kl_term
/// so that it stays nonnegative and accurate near zero.
pub fn relative_entropy(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(a, b)| kl_term(*a, *b)).sum()
}

pub fn relative_entropy_matrix(q: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    relative_entropy(q.as_slice(), p.as_slice())
}

pub fn phi_entropy(phi: &PhiFunction, mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<f64> {
    if mu1.len() != mu2.len() {
        return domain(format!("phi_entropy: supports of size {} and {}", mu1.len(), mu2.len()));
    }
    Ok(match phi {
        PhiFunction::Kl => relative_entropy(mu1.weights(), mu2.weights()),
        _ => mu1.weights().iter().zip(mu2.weights()).map(|(u, v)| phi.evaluate(*u, *v)).sum(),
    })
}

pub fn tv_distance(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<f64> {
    phi_entropy(&PhiFunction::Tv, mu1, mu2)
}

pub fn weighted_tv(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, g: &[f64]) -> Result<f64> {
    weighted_tv_raw(mu1.weights(), mu2.weights(), g)
}

/// Same as `weighted_tv` on raw vectors (rows of a kernel, signed differences, ...).
pub fn weighted_tv_raw(a: &[f64], b: &[f64], g: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != g.len() {
        return domain("weighted_tv: length mismatch");
    }
    if let Some(bad) = g.iter().find(|w| !(**w > 0.0)) {
        return domain(format!("weighted_tv: nonpositive weight {bad}"));
    }
    Ok(a.iter().zip(b).zip(g).map(|((x, y), w)| w * (x - y).abs()).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return domain(format!("gaussian: mean of length {} with {}x{} covariance", mean.len(), cov.dim(), cov.dim()));
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `tr(a b^{-1} − I) − log det(a b^{-1})`.
pub fn burg(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return domain("burg: dimension mismatch");
    }
    let bi = b.inv_sqrt();
    let m = a.as_sym().congruence(bi.matrix());
    let (vals, _) = m.eigen();
    Ok(vals.iter().map(|l| (l - 1.0) - (l - 1.0).ln_1p()).sum())
}

pub fn gaussian_kl(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return domain("gaussian_kl: dimension mismatch");
    }
    let dm = &p.mean - &q.mean;
    let quad = (q.cov.inv_sqrt().matrix() * dm).norm_squared();
    Ok(0.5 * (burg(&p.cov, &q.cov)? + quad))
}

/// Bures–Wasserstein distance. The covariance part is evaluated as
/// `tr(a^{-1} X²)` with `X = (a^½ b a^½)^½ − a`, which equals
/// `tr(a + b − 2(a^½ b a^½)^½)` without its cancellation for nearby covariances.
pub fn gaussian_w2(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return domain("gaussian_w2: dimension mismatch");
    }
    let s1 = p.cov.sqrt();
    let cross = principal_sqrt(&q.cov.as_sym().congruence(s1.matrix()))?;
    let x = cross.matrix() - p.cov.matrix();
    let bures = (p.cov.inv_sqrt().matrix() * x).norm_squared();
    let d2 = (&p.mean - &q.mean).norm_squared() + bures;
    Ok(d2.sqrt())
}

#[derive(Clone, Debug)]
pub struct Transport {
    pub value: f64,
    pub plan: DMatrix<f64>,
}

/// Exact `min Q(cost)` over couplings of `mu1` and `mu2` (transportation simplex).
pub fn kantorovich_discrete(cost: &DMatrix<f64>, mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<Transport> {
    let (m, n) = (mu1.len(), mu2.len());
    if cost.nrows() != m || cost.ncols() != n {
        return domain(format!("cost is {}x{}, supports are {m} and {n}", cost.nrows(), cost.ncols()));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return domain("cost must be finite and nonnegative");
    }
    let plan = TransportSimplex::new(cost, mu1.weights(), mu2.weights()).solve()?;
    let value = plan.iter().zip(cost.iter()).map(|(x, c)| x * c).sum();
    Ok(Transport { value, plan })
}

struct TransportSimplex<'a> {
    cost: &'a DMatrix<f64>,
    m: usize,
    n: usize,
    // basic cells (i, j) with their flow
    basis: Vec<(usize, usize)>,
    flow: DMatrix<f64>,
}

impl<'a> TransportSimplex<'a> {
    fn new(cost: &'a DMatrix<f64>, a: &[f64], b: &[f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut ar = a.to_vec();
        let mut br = b.to_vec();
        let mut flow = DMatrix::zeros(m, n);
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        while i < m && j < n {
            let x = if i == m - 1 {
                br[j]
            } else if j == n - 1 {
                ar[i]
            } else {
                ar[i].min(br[j])
            };
            let x = x.max(0.0);
            flow[(i, j)] = x;
            basis.push((i, j));
            ar[i] -= x;
            br[j] -= x;
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || ar[i] <= br[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        TransportSimplex { cost, m, n, basis, flow }
    }

    fn duals(&self) -> (Vec<f64>, Vec<f64>) {
        // nodes 0..m are rows, m..m+n columns; u_0 = 0
        let mut u = vec![f64::NAN; self.m];
        let mut v = vec![f64::NAN; self.n];
        u[0] = 0.0;
        let mut changed = true;
        while changed {
            changed = false;
            for &(i, j) in &self.basis {
                let c = self.cost[(i, j)];
                if !u[i].is_nan() && v[j].is_nan() {
                    v[j] = c - u[i];
                    changed = true;
                } else if u[i].is_nan() && !v[j].is_nan() {
                    u[i] = c - v[j];
                    changed = true;
                }
            }
        }
        (u, v)
    }

    /// Path of basic cells from column node `j` to row node `i` in the basis tree.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let nodes = self.m + self.n;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (k, &(r, c)) in self.basis.iter().enumerate() {
            adj[r].push((self.m + c, k));
            adj[self.m + c].push((r, k));
        }
        let start = self.m + j;
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
        let mut seen = vec![false; nodes];
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    prev[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = i;
        while let Some((p, k)) = prev[node] {
            path.push(k);
            node = p;
        }
        path.reverse();
        path
    }

    fn solve(mut self) -> Result<DMatrix<f64>> {
        let scale = self.cost.iter().fold(0.0f64, |a, c| a.max(*c)).max(1.0);
        let tol = 1e-13 * scale;
        let max_iter = 50 * (self.m + self.n) * (self.m + self.n) + 100;
        let mut degenerate_run = 0;
        for _ in 0..max_iter {
            let (u, v) = self.duals();
            let bland = degenerate_run > self.m + self.n;
            let mut enter: Option<(usize, usize, f64)> = None;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    let r = self.cost[(i, j)] - u[i] - v[j];
                    if r < -tol && !self.basis.contains(&(i, j)) {
                        if bland {
                            enter = Some((i, j, r));
                            break 'scan;
                        }
                        if enter.map_or(true, |(_, _, best)| r < best) {
                            enter = Some((i, j, r));
                        }
                    }
                }
            }
            let Some((ei, ej, _)) = enter else {
                return Ok(self.flow);
            };
            // the path from column ej back to row ei alternates −, +, −, ...
            let path = self.tree_path(ei, ej);
            let mut leave = path[0];
            for &k in path.iter().step_by(2).skip(1) {
                let (x, best) = (self.flow[self.basis[k]], self.flow[self.basis[leave]]);
                if x < best || (bland && x == best && self.basis[k] < self.basis[leave]) {
                    leave = k;
                }
            }
            let (lr, lc) = self.basis[leave];
            let theta = self.flow[(lr, lc)];
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
            for (pos, &k) in path.iter().enumerate() {
                let (r, c) = self.basis[k];
                if pos % 2 == 0 {
                    self.flow[(r, c)] -= theta;
                } else {
                    self.flow[(r, c)] += theta;
                }
            }
            self.flow[(lr, lc)] = 0.0;
            self.flow[(ei, ej)] = theta;
            self.basis[leave] = (ei, ej);
        }
        domain("kantorovich_discrete: simplex iteration cap reached")
    }
}

/// The discrete metric weighted by `g`: `1_{x≠y}(g(x) + g(y))`.
pub fn weighted_discrete_cost(g: &[f64]) -> DMatrix<f64> {
    let n = g.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { g[i] + g[j] })
}
