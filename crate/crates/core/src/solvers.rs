//! Iteration-budgeted first-order solvers for the condensed QP and a
//! high-accuracy reference solver for the solution map `S(x)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Matrix, Vector};
use crate::ocp::CondensedQp;
use crate::tolerance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Projected gradient method.
    Pgm,
    /// Accelerated projected gradient method.
    Apgm,
}

impl SolverKind {
    pub const ALL: [SolverKind; 2] = [SolverKind::Pgm, SolverKind::Apgm];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Pgm => "pgm",
            SolverKind::Apgm => "apgm",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = SolverError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(SolverKind::Pgm),
            "apgm" => Ok(SolverKind::Apgm),
            other => Err(SolverError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iteration budget must be at least 1")]
    ZeroIterations,
    #[error("initial iterate lies outside the constraint box")]
    OutsideBox,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("oracle failed to reach residual {tol:.3e} (got {residual:.3e} after {iterations} iterations)")]
    OracleFailure {
        residual: f64,
        tol: f64,
        iterations: usize,
    },
    #[error("unknown solver kind `{0}` (expected pgm or apgm)")]
    UnknownKind(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub iterate: Vector,
    pub iterations_used: usize,
    pub fixed_point_residual: f64,
}

fn check_dims(qp: &CondensedQp, z: &Vector, x: &Vector) -> Result<()> {
    if z.len() != qp.dim() || x.len() != qp.state_dim() {
        return Err(SolverError::Dimension(format!(
            "QP has {} variables and {} states; got z of length {} and x of length {}",
            qp.dim(),
            qp.state_dim(),
            z.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Step applied to `Hz + Gx`; equals `α·2` with `α = 1/(λ⁺ + λ⁻)`.
fn pgm_step(qp: &CondensedQp) -> f64 {
    2.0 / (qp.lambda_max() + qp.lambda_min())
}

/// `‖z − Π[z − α∇f(z, x)]‖` with the PGM step size.
pub fn fixed_point_residual(qp: &CondensedQp, z: &Vector, x: &Vector) -> f64 {
    residual_with_linear(qp, z, &qp.linear_term(x))
}

fn residual_with_linear(qp: &CondensedQp, z: &Vector, linear: &Vector) -> f64 {
    let step = pgm_step(qp);
    let mut trial = qp.h() * z + linear;
    trial *= -step;
    trial += z;
    qp.bounds().project_mut(&mut trial);
    (z - trial).norm()
}

// One PGM iteration in place: z ← Π[z − step(Hz + c)], `buf` is scratch.
#[inline]
fn pgm_iterate(h: &Matrix, linear: &Vector, step: f64, qp: &CondensedQp, z: &mut Vector, buf: &mut Vector) {
    buf.copy_from(linear);
    buf.gemv(1.0, h, z, 1.0);
    z.axpy(-step, buf, 1.0);
    qp.bounds().project_mut(z);
}

/// `ℓ` iterations of the projected gradient method from `z0`.
pub fn pgm_run(qp: &CondensedQp, z0: &Vector, x: &Vector, ell: usize) -> Result<SolveOutcome> {
    check_dims(qp, z0, x)?;
    if ell == 0 {
        return Err(SolverError::ZeroIterations);
    }
    let linear = qp.linear_term(x);
    let step = pgm_step(qp);
    let mut z = z0.clone();
    let mut buf = Vector::zeros(z.len());
    for _ in 0..ell {
        pgm_iterate(qp.h(), &linear, step, qp, &mut z, &mut buf);
    }
    let fixed_point_residual = residual_with_linear(qp, &z, &linear);
    Ok(SolveOutcome {
        iterate: z,
        iterations_used: ell,
        fixed_point_residual,
    })
}

/// `ℓ` iterations of the accelerated projected gradient method from `z0 ∈ 𝒵`.
///
/// Constant-momentum scheme for strongly convex objectives with
/// `m = 2λ⁻(H)`, `L = 2λ⁺(H)`: `y = z_k + ((√κ−1)/(√κ+1))(z_k − z_{k−1})`,
/// `z_{k+1} = Π[y − ∇f(y)/L]`. The first iteration is a plain projected
/// gradient step with step `1/L`; the momentum sequence then starts afresh
/// from its output. With that opening step the `ℓ`-step contraction in the
/// `H`-norm is `√κ (1 − κ^{−1/2})^{(ℓ−1)/2}` even when constraints are active.
pub fn apgm_run(qp: &CondensedQp, z0: &Vector, x: &Vector, ell: usize) -> Result<SolveOutcome> {
    check_dims(qp, z0, x)?;
    if ell == 0 {
        return Err(SolverError::ZeroIterations);
    }
    if !qp.bounds().contains(z0) {
        return Err(SolverError::OutsideBox);
    }
    let linear = qp.linear_term(x);
    let root_kappa = qp.kappa().sqrt();
    let momentum = (root_kappa - 1.0) / (root_kappa + 1.0);
    let inv_lipschitz = 1.0 / qp.lambda_max(); // ∇f/L = (Hy + c)/λ⁺

    let mut z = z0.clone();
    let mut prev = z0.clone();
    let mut y = z0.clone();
    let mut buf = Vector::zeros(z.len());
    for it in 0..ell {
        // y = z + momentum (z − prev)
        y.copy_from(&z);
        y *= 1.0 + momentum;
        y.axpy(-momentum, &prev, 1.0);
        buf.copy_from(&linear);
        buf.gemv(1.0, qp.h(), &y, 1.0);
        y.axpy(-inv_lipschitz, &buf, 1.0);
        qp.bounds().project_mut(&mut y);
        std::mem::swap(&mut prev, &mut z);
        std::mem::swap(&mut z, &mut y);
        if it == 0 {
            prev.copy_from(&z);
        }
    }
    let fixed_point_residual = residual_with_linear(qp, &z, &linear);
    Ok(SolveOutcome {
        iterate: z,
        iterations_used: ell,
        fixed_point_residual,
    })
}

/// Runs `ell` iterations of `kind`. For APGM an infeasible `z0` is first
/// projected onto the box.
pub fn run(kind: SolverKind, qp: &CondensedQp, z0: &Vector, x: &Vector, ell: usize) -> Result<SolveOutcome> {
    match kind {
        SolverKind::Pgm => pgm_run(qp, z0, x, ell),
        SolverKind::Apgm => {
            check_dims(qp, z0, x)?;
            apgm_run(qp, &qp.bounds().project(z0), x, ell)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Reference solution `S(x)` certified by the fixed-point residual.
///
/// A primal active-set method yields the exact minimizer of the box QP up to
/// rounding; the result is then polished with projected gradient steps until
/// the residual is at most `tol · max(1, ‖z‖∞)`.
pub fn oracle_solve(qp: &CondensedQp, x: &Vector, tol: f64) -> Result<Vector> {
    if !(tol > 0.0) {
        return Err(SolverError::BadTolerance(tol));
    }
    if x.len() != qp.state_dim() {
        return Err(SolverError::Dimension(format!(
            "QP has {} states, x has length {}",
            qp.state_dim(),
            x.len()
        )));
    }
    let linear = qp.linear_term(x);
    let mut z = active_set(qp, &linear);
    let threshold = |z: &Vector| tol * z.amax().max(1.0);

    let cap = tolerance::current().oracle_max_iters;
    let step = pgm_step(qp);
    let mut buf = Vector::zeros(z.len());
    let mut residual = residual_with_linear(qp, &z, &linear);
    let mut iterations = 0;
    while residual > threshold(&z) {
        if iterations >= cap {
            return Err(SolverError::OracleFailure {
                residual,
                tol,
                iterations,
            });
        }
        for _ in 0..64 {
            pgm_iterate(qp.h(), &linear, step, qp, &mut z, &mut buf);
        }
        iterations += 64;
        residual = residual_with_linear(qp, &z, &linear);
    }
    Ok(z)
}

// Primal active-set method for min ½zᵀHz + cᵀz over the box, started at z = 0.
fn active_set(qp: &CondensedQp, linear: &Vector) -> Vector {
    let n = qp.dim();
    let h = qp.h();
    let (lower, upper) = (qp.bounds().lower(), qp.bounds().upper());
    let mut z = Vector::zeros(n);
    let mut state = vec![Bound::Free; n];

    for _ in 0..(50 * n + 100) {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let candidate = match free_minimizer(h, linear, &z, &free) {
            Some(c) => c,
            None => break,
        };
        // Largest step toward the candidate that keeps the free block feasible.
        let mut t = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let dz = candidate[k] - z[i];
            if dz > 0.0 && z[i] + dz > upper[i] {
                let ti = (upper[i] - z[i]) / dz;
                if ti < t {
                    t = ti;
                    blocking = Some((i, Bound::Upper));
                }
            } else if dz < 0.0 && z[i] + dz < lower[i] {
                let ti = (lower[i] - z[i]) / dz;
                if ti < t {
                    t = ti;
                    blocking = Some((i, Bound::Lower));
                }
            }
        }
        for (k, &i) in free.iter().enumerate() {
            z[i] += t * (candidate[k] - z[i]);
        }
        if let Some((i, side)) = blocking {
            state[i] = side;
            z[i] = if side == Bound::Upper { upper[i] } else { lower[i] };
            continue;
        }
        // Stationary on the working set: release the bound with the most
        // negative multiplier, if any.
        let grad = h * &z + linear;
        let release = (0..n)
            .filter_map(|i| match state[i] {
                Bound::Lower if grad[i] < 0.0 => Some((i, -grad[i])),
                Bound::Upper if grad[i] > 0.0 => Some((i, grad[i])),
                _ => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match release {
            Some((i, _)) => state[i] = Bound::Free,
            None => return z,
        }
    }
    qp.bounds().project(&z)
}

// Minimizer of the QP over the free coordinates with the others held fixed,
// refined once against the residual.
fn free_minimizer(h: &Matrix, linear: &Vector, z: &Vector, free: &[usize]) -> Option<Vector> {
    if free.is_empty() {
        return Some(Vector::zeros(0));
    }
    let k = free.len();
    let h_ff = Matrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
    let mut fixed = z.clone();
    for &i in free {
        fixed[i] = 0.0;
    }
    let coupling = h * &fixed;
    let rhs = Vector::from_fn(k, |a, _| -(linear[free[a]] + coupling[free[a]]));
    let chol = Cholesky::new(h_ff.clone())?;
    let mut sol = chol.solve(&rhs);
    let correction = chol.solve(&(&rhs - &h_ff * &sol));
    sol += correction;
    Some(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{condense, InputBox, OcpSpec, PlantModel};
    use nalgebra::{dmatrix, dvector};

    // A = 0, B = 1, N = 1 gives P = Q, H = Q + R and G = 0.
    fn scalar_qp(h_value: f64) -> CondensedQp {
        let plant = PlantModel::new(dmatrix![0.0], dmatrix![1.0]).unwrap();
        let spec = OcpSpec::new(
            dmatrix![h_value / 2.0],
            dmatrix![h_value / 2.0],
            1,
            InputBox::symmetric(1, 1.0).unwrap(),
        );
        condense(&plant, &spec).unwrap()
    }

    // Scalar QP with G ≠ 0; returns the state x for which Gx = target_gx.
    fn scalar_qp_with_linear(target_gx: f64) -> (CondensedQp, Vector) {
        let plant = PlantModel::new(dmatrix![0.5], dmatrix![1.0]).unwrap();
        let spec = OcpSpec::new(dmatrix![1.0], dmatrix![1.0], 1, InputBox::symmetric(1, 1.0).unwrap());
        let qp = condense(&plant, &spec).unwrap();
        let x = dvector![target_gx / qp.g()[(0, 0)]];
        (qp, x)
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("PGM".parse::<SolverKind>().unwrap(), SolverKind::Pgm);
        assert_eq!("apgm".parse::<SolverKind>().unwrap(), SolverKind::Apgm);
        assert!("newton".parse::<SolverKind>().is_err());
        assert_eq!(SolverKind::Apgm.to_string(), "apgm");
    }

    #[test]
    fn pgm_is_exact_when_kappa_is_one() {
        // Any 1x1 Hessian has κ = 1, so η = 0 and one step lands on S(x).
        let (qp, x) = scalar_qp_with_linear(-2.0 * 0.5);
        let h = qp.h()[(0, 0)];
        let expected = (1.0_f64 / h).clamp(-1.0, 1.0);
        let out = pgm_run(&qp, &dvector![0.0], &x, 1).unwrap();
        assert!((out.iterate[0] - expected).abs() < 1e-14);
        assert!(out.fixed_point_residual < 1e-14);
    }

    #[test]
    fn pgm_saturates_at_the_clamp() {
        let (qp, x) = scalar_qp_with_linear(-5.0);
        let out = pgm_run(&qp, &dvector![0.0], &x, 3).unwrap();
        assert_eq!(out.iterate[0], 1.0);
    }

    #[test]
    fn apgm_exact_for_identity_like_hessian() {
        let plant = PlantModel::new(Matrix::zeros(2, 2), Matrix::identity(2, 2)).unwrap();
        let spec = OcpSpec::new(
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            1,
            InputBox::symmetric(2, 1.0).unwrap(),
        );
        let qp = condense(&plant, &spec).unwrap();
        // H = 2I, G = 0, so S(x) = 0 for every x.
        let out = apgm_run(&qp, &dvector![0.7, -0.2], &dvector![1.0, 1.0], 1).unwrap();
        assert!(out.iterate.norm() < 1e-15);
    }

    #[test]
    fn apgm_requires_feasible_start() {
        let qp = scalar_qp(2.0);
        assert_eq!(
            apgm_run(&qp, &dvector![3.0], &dvector![0.0], 1).unwrap_err(),
            SolverError::OutsideBox
        );
        // The convenience entry point projects instead.
        assert!(run(SolverKind::Apgm, &qp, &dvector![3.0], &dvector![0.0], 1).is_ok());
    }

    #[test]
    fn zero_budget_rejected() {
        let qp = scalar_qp(2.0);
        assert_eq!(
            pgm_run(&qp, &dvector![0.0], &dvector![0.0], 0).unwrap_err(),
            SolverError::ZeroIterations
        );
        assert!(matches!(
            pgm_run(&qp, &dvector![0.0, 0.0], &dvector![0.0], 1),
            Err(SolverError::Dimension(_))
        ));
    }

    #[test]
    fn oracle_zero_when_unforced() {
        let qp = scalar_qp(2.0);
        assert_eq!(oracle_solve(&qp, &dvector![3.0], 1e-12).unwrap(), dvector![0.0]);
        assert!(oracle_solve(&qp, &dvector![3.0], 0.0).is_err());
    }

    #[test]
    fn oracle_matches_clamp_for_diagonal_hessian() {
        for target in [-5.0, -0.3, 0.0, 0.4, 7.0] {
            let (qp, x) = scalar_qp_with_linear(target);
            let h = qp.h()[(0, 0)];
            let expected = (-target / h).clamp(-1.0, 1.0);
            let z = oracle_solve(&qp, &x, 1e-13).unwrap();
            assert!((z[0] - expected).abs() < 1e-13, "target {target}");
        }
    }
}
