//! Dense symmetric and SPD matrices.
//!
//! Everything goes through the symmetric eigensolver: square roots, inverses,
//! log-determinants and Löwner comparisons.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{domain, Result};

/// Smallest admissible eigenvalue of an SPD matrix, relative to its spectral norm.
pub const SPD_TOLERANCE: f64 = 1e-10;
/// Frobenius tolerance for `principal_sqrt(v)^2 == v`.
pub const SQRT_TOLERANCE: f64 = 1e-10;
/// Eigenvalues in `[-CLAMP, 0)` are treated as roundoff and clamped to zero.
const CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix(SymMatrix);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixNorms {
    pub frobenius: f64,
    pub spectral: f64,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        domain("matrix has non-finite entries")
    }
}

/// `(m + m') / 2`, exactly symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return domain(format!("expected a nonempty square matrix, got {}x{}", m.nrows(), m.ncols()));
        }
        check_finite(&m)?;
        Ok(SymMatrix(symmetrize(&m)))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues (ascending) and matching orthonormal eigenvectors as columns.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let e = SymmetricEigen::new(self.0.clone());
        let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
        let vals = DVector::from_iterator(idx.len(), idx.iter().map(|&i| e.eigenvalues[i]));
        let vecs = DMatrix::from_fn(self.dim(), idx.len(), |r, c| e.eigenvectors[(r, idx[c])]);
        (vals, vecs)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let (v, _) = self.eigen();
        v[v.len() - 1]
    }

    /// Spectral calculus: `Q f(D) Q'`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let (vals, vecs) = self.eigen();
        let d = DMatrix::from_diagonal(&vals.map(f));
        SymMatrix(symmetrize(&(&vecs * d * vecs.transpose())))
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    /// `a · self · a'`
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix(symmetrize(&(a * &self.0 * a.transpose())))
    }

    pub fn to_spd(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.0.clone())
    }

    pub fn norms(&self) -> MatrixNorms {
        matrix_norms(&self.0)
    }
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let s = SymMatrix::new(m)?;
        let (vals, _) = s.eigen();
        let lmin = vals[0];
        let lmax = vals[vals.len() - 1].abs();
        if !(lmin > SPD_TOLERANCE * lmax.max(f64::MIN_POSITIVE)) {
            return domain(format!("matrix is not SPD: smallest eigenvalue {lmin:e}"));
        }
        Ok(SpdMatrix(s))
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix(SymMatrix::identity(d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        self.0.matrix()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn into_sym(self) -> SymMatrix {
        self.0
    }

    fn spectral_spd(&self, f: impl Fn(f64) -> f64) -> SpdMatrix {
        SpdMatrix(self.0.map_spectrum(f))
    }

    pub fn inverse(&self) -> SpdMatrix {
        self.spectral_spd(|l| 1.0 / l)
    }

    pub fn sqrt(&self) -> SpdMatrix {
        self.spectral_spd(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        self.spectral_spd(|l| 1.0 / l.sqrt())
    }

    pub fn log_det(&self) -> f64 {
        self.0.eigen().0.iter().map(|l| l.ln()).sum()
    }

    pub fn trace(&self) -> f64 {
        self.matrix().trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.min_eigenvalue()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.0.max_eigenvalue()
    }

    /// `a · self · a'`, checked to stay SPD.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<SpdMatrix> {
        self.0.congruence(a).to_spd()
    }
}

/// Principal symmetric square root. Eigenvalues slightly below zero (roundoff)
/// are clamped; anything more negative is a domain error.
pub fn principal_sqrt(v: &SymMatrix) -> Result<SymMatrix> {
    let (vals, _) = v.eigen();
    if vals[0] < -CLAMP {
        return domain(format!("principal_sqrt of a non-PSD matrix: eigenvalue {:e}", vals[0]));
    }
    let root = v.map_spectrum(|l| l.max(0.0).sqrt());
    let err = (root.matrix() * root.matrix() - v.matrix()).norm();
    if err > SQRT_TOLERANCE * v.matrix().norm().max(1.0) {
        return domain(format!("principal_sqrt failed to reproduce its input (residual {err:e})"));
    }
    Ok(root)
}

/// `a ≤ b` in Löwner order: smallest eigenvalue of `b − a` is at least `−tol`.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return domain(format!("loewner_leq: dimensions {} and {} differ", a.dim(), b.dim()));
    }
    Ok(b.sub(a).min_eigenvalue() >= -tol)
}

pub fn matrix_norms(v: &DMatrix<f64>) -> MatrixNorms {
    let spectral = if v.is_empty() {
        0.0
    } else {
        v.clone().svd(false, false).singular_values.max()
    };
    MatrixNorms { frobenius: v.norm(), spectral }
}

pub fn spectral_norm(v: &DMatrix<f64>) -> f64 {
    matrix_norms(v).spectral
}

/// Right-hand side of the Ando–Hemmen estimate
/// `||u^½ − v^½|| ≤ (λmin(u)^½ + λmin(v)^½)^{-1} ||u − v||` (same norm on both sides).
pub fn ando_hemmen_factor(u: &SpdMatrix, v: &SpdMatrix) -> f64 {
    1.0 / (u.min_eigenvalue().sqrt() + v.min_eigenvalue().sqrt())
}

/// Random SPD matrix `Q diag(λ) Q'` with eigenvalues drawn uniformly in `[lo, hi]`.
pub fn random_spd<R: rand::Rng + ?Sized>(rng: &mut R, d: usize, lo: f64, hi: f64) -> SpdMatrix {
    let q = random_orthogonal(rng, d);
    let lam: Vec<f64> = (0..d).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let m = &q * DMatrix::from_diagonal(&DVector::from_vec(lam)) * q.transpose();
    SpdMatrix(SymMatrix(symmetrize(&m)))
}

/// Orthogonal factor of the QR decomposition of a matrix with uniform entries in [-1, 1].
pub fn random_orthogonal<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    a.qr().q()
}
