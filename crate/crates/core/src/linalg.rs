//! Dense matrix kernels: symmetric eigendecomposition, spectral norms, SPD
//! square roots, Riccati and Lyapunov fixed points, and the matrix exponential.
//!
//! Storage is `nalgebra`'s `DMatrix<f64>`; the numerical algorithms here are
//! written out directly so their stopping rules are explicit.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::tolerance;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Hard cap on cyclic Jacobi sweeps; quadratic convergence needs far fewer.
const MAX_JACOBI_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (eigenvalues in [{min:.6e}, {max:.6e}])")]
    NotSpd { min: f64, max: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },
    #[error("matrix is not Schur stable (spectral radius {radius:.6})")]
    NotSchur { radius: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix must be non-empty")]
    Empty,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(LinalgError::Empty);
    }
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn ensure_square(m: &Matrix, name: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(LinalgError::Dimension(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Returns `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    pub vectors: Matrix,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Rebuilds `V·diag(f(λ))·Vᵀ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let scaled = Vector::from_iterator(self.values.len(), self.values.iter().map(|&l| f(l)));
        let mut vd = self.vectors.clone();
        for (j, s) in scaled.iter().enumerate() {
            vd.column_mut(j).scale_mut(*s);
        }
        symmetrize(&(vd * self.vectors.transpose()))
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(m: &Matrix) -> Result<SymEig> {
    ensure_finite(m)?;
    ensure_square(m, "symmetric eigenproblem input")?;
    let tol = tolerance::current();
    let scale = max_abs(m);
    let asymmetry = max_abs(&(m - m.transpose()));
    if asymmetry > tol.symmetry * scale.max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }

    let n = m.nrows();
    let mut a = symmetrize(m);
    let mut v = Matrix::identity(n, n);
    let threshold = tol.jacobi_off_diagonal * a.norm();

    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            return Ok(sorted(a, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    Err(LinalgError::NonConvergence {
        what: "Jacobi eigensolver",
        iterations: MAX_JACOBI_SWEEPS,
    })
}

// A ← JᵀAJ, V ← VJ for the plane rotation acting on (p, q).
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn sorted(a: Matrix, v: Matrix) -> SymEig {
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    SymEig { values, vectors }
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    ensure_finite(m)?;
    let gram = if m.nrows() < m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let eig = sym_eig(&symmetrize(&gram))?;
    Ok(eig.max().max(0.0).sqrt())
}

/// Square root and inverse square root of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub original: Matrix,
    pub sqrt: Matrix,
    pub inv_sqrt: Matrix,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl SpdFactor {
    pub fn condition_number(&self) -> f64 {
        self.max_eigenvalue / self.min_eigenvalue
    }

    /// `‖x‖_M = √(xᵀMx)`.
    pub fn norm_of(&self, x: &Vector) -> f64 {
        (&self.sqrt * x).norm()
    }

    /// `‖x‖_{M⁻¹}`.
    pub fn inv_norm_of(&self, x: &Vector) -> f64 {
        (&self.inv_sqrt * x).norm()
    }
}

pub fn spd_factor(m: &Matrix) -> Result<SpdFactor> {
    let eig = sym_eig(m)?;
    let (min, max) = (eig.min(), eig.max());
    if !(max > 0.0) || min <= tolerance::current().spd_ratio * max {
        return Err(LinalgError::NotSpd { min, max });
    }
    Ok(SpdFactor {
        original: symmetrize(m),
        sqrt: eig.map_values(f64::sqrt),
        inv_sqrt: eig.map_values(|l| 1.0 / l.sqrt()),
        min_eigenvalue: min,
        max_eigenvalue: max,
    })
}

/// Extreme eigenvalues of `√W⁻¹ M √W⁻¹`, so that
/// `λ⁻‖x‖²_W ≤ ‖x‖²_M ≤ λ⁺‖x‖²_W`.
pub fn weighted_eig_bounds(m: &Matrix, w: &Matrix) -> Result<(f64, f64)> {
    if m.shape() != w.shape() {
        return Err(LinalgError::Dimension(format!(
            "weighted eigenvalues: M is {:?}, W is {:?}",
            m.shape(),
            w.shape()
        )));
    }
    weighted_eig_bounds_with(m, &spd_factor(w)?)
}

pub fn weighted_eig_bounds_with(m: &Matrix, w: &SpdFactor) -> Result<(f64, f64)> {
    if m.shape() != w.original.shape() {
        return Err(LinalgError::Dimension(format!(
            "weighted eigenvalues: M is {:?}, W is {:?}",
            m.shape(),
            w.original.shape()
        )));
    }
    let scaled = symmetrize(&(&w.inv_sqrt * m * &w.inv_sqrt));
    let eig = sym_eig(&scaled)?;
    Ok((eig.min(), eig.max()))
}

/// Spectral radius via the (complex) eigenvalues of a general square matrix.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    ensure_finite(a)?;
    ensure_square(a, "spectral radius input")?;
    Ok(a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max))
}

fn riccati_step(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let pa = p * a;
    let btpa = b.transpose() * &pa;
    let s = r + b.transpose() * p * b;
    let gain = s
        .cholesky()
        .ok_or(LinalgError::NotSpd {
            min: f64::NAN,
            max: f64::NAN,
        })?
        .solve(&btpa);
    Ok(symmetrize(&(q + a.transpose() * pa - btpa.transpose() * gain)))
}

fn check_lqr_dims(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<()> {
    for m in [a, b, q, r] {
        ensure_finite(m)?;
    }
    ensure_square(a, "A")?;
    let (n, m) = (a.nrows(), b.ncols());
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(LinalgError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// Stabilizing solution of `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` by the
/// Riccati value iteration started at `P₀ = Q`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    check_lqr_dims(a, b, q, r)?;
    let tol = tolerance::current();
    let mut p = symmetrize(q);
    for _ in 0..tol.fixed_point_max_iters {
        // Divergence to non-finite values means no stabilizing solution.
        let next = match riccati_step(a, b, q, r, &p) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => next,
            _ => break,
        };
        let change = (&next - &p).norm();
        p = next;
        let size = p.norm();
        if !size.is_finite() {
            break;
        }
        if change <= tol.fixed_point_change * size {
            if spd_factor(&p).is_err() {
                break;
            }
            return Ok(p);
        }
    }
    Err(LinalgError::NonConvergence {
        what: "Riccati iteration",
        iterations: tol.fixed_point_max_iters,
    })
}

/// `‖P − Q − AᵀPA + AᵀPB(R+BᵀPB)⁻¹BᵀPA‖ / ‖P‖` (Frobenius).
pub fn riccati_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    check_lqr_dims(a, b, q, r)?;
    if p.shape() != q.shape() {
        return Err(LinalgError::Dimension(format!("P is {:?}", p.shape())));
    }
    Ok((p - riccati_step(a, b, q, r, p)?).norm() / p.norm())
}

/// LQR gain `K̄ = (R + BᵀPB)⁻¹BᵀPA`.
pub fn lqr_gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let s = r + b.transpose() * p * b;
    s.cholesky()
        .map(|c| c.solve(&(b.transpose() * p * a)))
        .ok_or(LinalgError::NotSpd {
            min: f64::NAN,
            max: f64::NAN,
        })
}

/// Solution of the discrete Lyapunov equation `U = Q + AᵀUA` for Schur `A`.
pub fn solve_dlyap(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    ensure_finite(a)?;
    ensure_finite(q)?;
    ensure_square(a, "A")?;
    if q.shape() != a.shape() {
        return Err(LinalgError::Dimension(format!(
            "A {:?}, Q {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let radius = spectral_radius(a)?;
    if radius >= 1.0 {
        return Err(LinalgError::NotSchur { radius });
    }
    let tol = tolerance::current();
    let q = symmetrize(q);
    let mut u = q.clone();
    for _ in 0..tol.fixed_point_max_iters {
        let next = symmetrize(&(&q + a.transpose() * &u * a));
        let change = (&next - &u).norm();
        u = next;
        if change <= tol.fixed_point_change * u.norm() {
            return Ok(u);
        }
    }
    Err(LinalgError::NonConvergence {
        what: "Lyapunov iteration",
        iterations: tol.fixed_point_max_iters,
    })
}

/// Order of the diagonal Padé approximant used by [`expm`].
const PADE_ORDER: usize = 6;

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    ensure_finite(m)?;
    ensure_square(m, "matrix exponential input")?;
    let n = m.nrows();
    let norm = m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = m / 2f64.powi(squarings);

    let mut coeff = 1.0;
    let mut power = Matrix::identity(n, n);
    let mut numer = Matrix::identity(n, n);
    let mut denom = Matrix::identity(n, n);
    for k in 1..=PADE_ORDER {
        coeff *= (PADE_ORDER - k + 1) as f64 / (k * (2 * PADE_ORDER - k + 1)) as f64;
        power = &power * &x;
        numer += &power * coeff;
        if k % 2 == 0 {
            denom += &power * coeff;
        } else {
            denom -= &power * coeff;
        }
    }
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or(LinalgError::NonConvergence {
            what: "Padé denominator solve",
            iterations: 0,
        })?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Block-diagonal assembly of square blocks.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
