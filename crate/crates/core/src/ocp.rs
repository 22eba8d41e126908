//! Condensed optimal control problem.
//!
//! Predicted states are eliminated through the dynamics so that the MPC cost
//! becomes `f(z, x) = zᵀHz + 2zᵀGx + xᵀWx` over the stacked input sequence
//! `z = (μ₀, …, μ_{N−1})`, constrained to a box.

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, SpdFactor, Vector};
use crate::tolerance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem data: {0}")]
    Invalid(String),
    #[error("{which} must be symmetric positive definite: {source}")]
    NotSpd {
        which: &'static str,
        source: LinalgError,
    },
    #[error("(A, B) appears not to be stabilizable: {0}")]
    Stabilizability(LinalgError),
    #[error("terminal weight violates the Riccati equation (relative residual {residual:.3e})")]
    TerminalWeight { residual: f64 },
    #[error("condensed Hessian is numerically indefinite: {0}")]
    Conditioning(LinalgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, OcpError>;

/// Discrete-time LTI plant `x⁺ = Ax + Bu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: Matrix,
    b: Matrix,
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(OcpError::Dimension(format!("A must be square, got {:?}", a.shape())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(OcpError::Dimension(format!(
                "B must have {} rows and at least one column, got {:?}",
                a.nrows(),
                b.shape()
            )));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(LinalgError::NonFinite.into());
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
}

/// Per-input interval bounds `lower ≤ u ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputBox {
    /// Each interval must contain the origin in its interior.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(OcpError::Dimension(format!(
                "input bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || !(*lo < 0.0 && 0.0 < *hi) {
                return Err(OcpError::Invalid(format!(
                    "input {i}: interval [{lo}, {hi}] must contain 0 in its interior"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-bound, bound]` on every one of `m` inputs.
    pub fn symmetric(m: usize, bound: f64) -> Result<Self> {
        Self::new(vec![-bound; m], vec![bound; m])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, u: &Vector) -> bool {
        u.len() == self.len()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

/// Box over the stacked decision vector, stage-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vector,
    upper: Vector,
}

impl BoxSet {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(OcpError::Dimension(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(upper.iter()).any(|(lo, hi)| !(*lo < 0.0 && 0.0 < *hi)) {
            return Err(OcpError::Invalid("every box interval must contain 0 in its interior".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `𝒰 × ⋯ × 𝒰` over `horizon` stages.
    pub fn replicate(input_box: &InputBox, horizon: usize) -> Self {
        let m = input_box.len();
        Self {
            lower: Vector::from_fn(m * horizon, |i, _| input_box.lower[i % m]),
            upper: Vector::from_fn(m * horizon, |i, _| input_box.upper[i % m]),
        }
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, z: &Vector) -> bool {
        z.len() == self.dim()
            && z.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Euclidean projection, i.e. a componentwise clamp.
    pub fn project(&self, z: &Vector) -> Vector {
        let mut out = z.clone();
        self.project_mut(&mut out);
        out
    }

    pub fn project_mut(&self, z: &mut Vector) {
        for ((v, lo), hi) in z.iter_mut().zip(self.lower.iter()).zip(self.upper.iter()) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Image of the box under `z ↦ D⁻¹z` for a positive diagonal `D`.
    fn scaled_inverse(&self, d: &Vector) -> Self {
        Self {
            lower: self.lower.component_div(d),
            upper: self.upper.component_div(d),
        }
    }
}

/// Euclidean projection of `z` onto `bounds`.
pub fn project(z: &Vector, bounds: &BoxSet) -> Result<Vector> {
    if z.len() != bounds.dim() {
        return Err(OcpError::Dimension(format!(
            "vector of length {} projected onto a box of dimension {}",
            z.len(),
            bounds.dim()
        )));
    }
    Ok(bounds.project(z))
}

/// Cost weights, horizon and input constraints of the MPC problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub q: Matrix,
    pub r: Matrix,
    pub horizon: usize,
    pub input_box: InputBox,
    /// Terminal weight; the Riccati solution is used when absent.
    pub terminal: Option<Matrix>,
}

impl OcpSpec {
    pub fn new(q: Matrix, r: Matrix, horizon: usize, input_box: InputBox) -> Self {
        Self {
            q,
            r,
            horizon,
            input_box,
            terminal: None,
        }
    }

    pub fn with_terminal(mut self, p: Matrix) -> Self {
        self.terminal = Some(p);
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    /// Multiplies `R` by `factor`.
    pub fn with_r_scale(mut self, factor: f64) -> Self {
        self.r *= factor;
        self
    }
}

/// Stacked prediction matrices: `ξ = Âx + B̂z` with `ξ = (ξ₀, …, ξ_N)`.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub a_hat: Matrix,
    pub b_hat: Matrix,
}

impl Prediction {
    pub fn new(plant: &PlantModel, horizon: usize) -> Self {
        let (n, m) = (plant.state_dim(), plant.input_dim());
        let mut powers = vec![Matrix::identity(n, n)];
        for k in 1..=horizon {
            powers.push(&powers[k - 1] * plant.a());
        }
        let mut a_hat = Matrix::zeros((horizon + 1) * n, n);
        for (k, pk) in powers.iter().enumerate() {
            a_hat.view_mut((k * n, 0), (n, n)).copy_from(pk);
        }
        let mut b_hat = Matrix::zeros((horizon + 1) * n, horizon * m);
        for i in 1..=horizon {
            for j in 0..i {
                let block = &powers[i - 1 - j] * plant.b();
                b_hat.view_mut((i * n, j * m), (n, m)).copy_from(&block);
            }
        }
        Self { a_hat, b_hat }
    }
}

/// `W = ÂᵀĤÂ` with `Ĥ = blkdiag(I_N ⊗ Q, P)`.
pub fn value_weight_assembled(plant: &PlantModel, q: &Matrix, p: &Matrix, horizon: usize) -> Matrix {
    let pred = Prediction::new(plant, horizon);
    let stage_weight = stage_weight(q, p, horizon);
    linalg::symmetrize(&(pred.a_hat.transpose() * stage_weight * &pred.a_hat))
}

/// `W = Σ_{k<N} (Aᵏ)ᵀQAᵏ + (Aᴺ)ᵀPAᴺ`.
pub fn value_weight_stage_sum(plant: &PlantModel, q: &Matrix, p: &Matrix, horizon: usize) -> Matrix {
    let n = plant.state_dim();
    let mut power = Matrix::identity(n, n);
    let mut w = Matrix::zeros(n, n);
    for _ in 0..horizon {
        w += power.transpose() * q * &power;
        power = &power * plant.a();
    }
    w += power.transpose() * p * &power;
    linalg::symmetrize(&w)
}

/// `W = P + Σ_{k=1}^{N} (Aᵏ)ᵀPB(R + BᵀPB)⁻¹BᵀPAᵏ`, valid when `P` solves the Riccati equation.
pub fn value_weight_riccati_form(
    plant: &PlantModel,
    r: &Matrix,
    p: &Matrix,
    horizon: usize,
) -> Result<Matrix> {
    let b = plant.b();
    let s = r + b.transpose() * p * b;
    let chol = s.cholesky().ok_or(OcpError::NotSpd {
        which: "R + BᵀPB",
        source: LinalgError::NotSpd {
            min: f64::NAN,
            max: f64::NAN,
        },
    })?;
    let n = plant.state_dim();
    let mut power = Matrix::identity(n, n);
    let mut w = p.clone();
    for _ in 0..horizon {
        power = &power * plant.a();
        let btpa = b.transpose() * p * &power;
        w += btpa.transpose() * chol.solve(&btpa);
    }
    Ok(linalg::symmetrize(&w))
}

fn stage_weight(q: &Matrix, p: &Matrix, horizon: usize) -> Matrix {
    let mut blocks: Vec<&Matrix> = vec![q; horizon];
    blocks.push(p);
    linalg::block_diag(&blocks)
}

/// Spectral data cached at construction.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    pub h: SpdFactor,
    pub w: SpdFactor,
    pub p: SpdFactor,
}

/// Box-constrained QP `min_{z ∈ 𝒵} zᵀHz + 2zᵀGx + xᵀWx`.
///
/// After diagonal preconditioning the decision variable is `z̃ = D⁻¹z`;
/// `scaling` stores the diagonal of `D` (all ones when unscaled) so that the
/// physical input sequence is always `D·z̃`.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    plant: PlantModel,
    q: Matrix,
    r: Matrix,
    p: Matrix,
    horizon: usize,
    input_box: InputBox,
    h: Matrix,
    hbar: Matrix,
    g: Matrix,
    w: Matrix,
    bounds: BoxSet,
    scaling: Vector,
    terminal_input_map: Matrix,
    terminal_state_map: Matrix,
    lqr_gain: Matrix,
    spectral: SpectralCache,
}

/// Builds the condensed QP for `plant` and `spec`.
pub fn condense(plant: &PlantModel, spec: &OcpSpec) -> Result<CondensedQp> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if spec.horizon == 0 {
        return Err(OcpError::Invalid("horizon must be at least 1".into()));
    }
    if spec.q.shape() != (n, n) || spec.r.shape() != (m, m) || spec.input_box.len() != m {
        return Err(OcpError::Dimension(format!(
            "plant has n={n}, m={m}; Q is {:?}, R is {:?}, input box has {} entries",
            spec.q.shape(),
            spec.r.shape(),
            spec.input_box.len()
        )));
    }
    linalg::spd_factor(&spec.q).map_err(|source| OcpError::NotSpd { which: "Q", source })?;
    linalg::spd_factor(&spec.r).map_err(|source| OcpError::NotSpd { which: "R", source })?;

    let p = match &spec.terminal {
        Some(p) => {
            if p.shape() != (n, n) {
                return Err(OcpError::Dimension(format!("P is {:?}", p.shape())));
            }
            let residual = linalg::riccati_residual(plant.a(), plant.b(), &spec.q, &spec.r, p)?;
            if !(residual <= tolerance::current().riccati_residual) {
                return Err(OcpError::TerminalWeight { residual });
            }
            linalg::symmetrize(p)
        }
        None => linalg::solve_dare(plant.a(), plant.b(), &spec.q, &spec.r)
            .map_err(OcpError::Stabilizability)?,
    };

    let horizon = spec.horizon;
    let pred = Prediction::new(plant, horizon);
    let stage = stage_weight(&spec.q, &p, horizon);
    let bt_stage = pred.b_hat.transpose() * &stage;
    let hbar = linalg::symmetrize(&(&bt_stage * &pred.b_hat));
    let mut h = hbar.clone();
    for k in 0..horizon {
        let mut block = h.view_mut((k * m, k * m), (m, m));
        block += &spec.r;
    }
    let g = bt_stage * &pred.a_hat;
    let w = value_weight_stage_sum(plant, &spec.q, &p, horizon);

    let terminal_state_map = pred.a_hat.rows(horizon * n, n).into_owned();
    let terminal_input_map = pred.b_hat.rows(horizon * n, n).into_owned();
    let lqr_gain = linalg::lqr_gain(plant.a(), plant.b(), &spec.r, &p)?;

    let spectral = SpectralCache {
        h: linalg::spd_factor(&h).map_err(OcpError::Conditioning)?,
        w: linalg::spd_factor(&w).map_err(|source| OcpError::NotSpd { which: "W", source })?,
        p: linalg::spd_factor(&p).map_err(|source| OcpError::NotSpd { which: "P", source })?,
    };

    Ok(CondensedQp {
        plant: plant.clone(),
        q: spec.q.clone(),
        r: spec.r.clone(),
        p,
        horizon,
        input_box: spec.input_box.clone(),
        h,
        hbar,
        g,
        w,
        bounds: BoxSet::replicate(&spec.input_box, horizon),
        scaling: Vector::repeat(horizon * m, 1.0),
        terminal_input_map,
        terminal_state_map,
        lqr_gain,
        spectral,
    })
}

impl CondensedQp {
    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// Terminal weight.
    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    /// `B̂ᵀĤB̂`, the part of `H` independent of `R` (scaled along with `H`).
    pub fn hbar(&self) -> &Matrix {
        &self.hbar
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn bounds(&self) -> &BoxSet {
        &self.bounds
    }

    /// Diagonal of the preconditioner `D`.
    pub fn scaling(&self) -> &Vector {
        &self.scaling
    }

    pub fn is_preconditioned(&self) -> bool {
        self.scaling.iter().any(|&d| d != 1.0)
    }

    pub fn spectral(&self) -> &SpectralCache {
        &self.spectral
    }

    /// LQR gain `K̄ = (R + BᵀPB)⁻¹BᵀPA`.
    pub fn lqr_gain(&self) -> &Matrix {
        &self.lqr_gain
    }

    /// Number of decision variables `Nm`.
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    pub fn lambda_min(&self) -> f64 {
        self.spectral.h.min_eigenvalue
    }

    pub fn lambda_max(&self) -> f64 {
        self.spectral.h.max_eigenvalue
    }

    /// `κ(H) = λ⁺(H)/λ⁻(H)`.
    pub fn kappa(&self) -> f64 {
        self.spectral.h.condition_number()
    }

    pub fn linear_term(&self, x: &Vector) -> Vector {
        &self.g * x
    }

    /// `∇_z f(z, x) = 2(Hz + Gx)`.
    pub fn gradient(&self, z: &Vector, x: &Vector) -> Vector {
        (&self.h * z + &self.g * x) * 2.0
    }

    pub fn cost(&self, z: &Vector, x: &Vector) -> f64 {
        z.dot(&(&self.h * z)) + 2.0 * z.dot(&(&self.g * x)) + x.dot(&(&self.w * x))
    }

    /// Physical input sequence `D·z`.
    pub fn unscale(&self, z: &Vector) -> Vector {
        z.component_mul(&self.scaling)
    }

    /// Applied input `u = ΞDz` (the first stage of the physical sequence).
    pub fn first_input(&self, z: &Vector) -> Vector {
        let m = self.input_dim();
        Vector::from_fn(m, |i, _| z[i] * self.scaling[i])
    }

    /// `ΞD`, an `m × Nm` selector of the (unscaled) first stage.
    pub fn input_selector(&self) -> Matrix {
        let m = self.input_dim();
        Matrix::from_fn(m, self.dim(), |i, j| if i == j { self.scaling[j] } else { 0.0 })
    }

    /// `B̄ = BΞD`.
    pub fn b_bar(&self) -> Matrix {
        self.plant.b() * self.input_selector()
    }

    /// Terminal predicted state `ξ_N` for initial state `x` and decision `z`.
    pub fn terminal_state(&self, x: &Vector, z: &Vector) -> Vector {
        &self.terminal_state_map * x + &self.terminal_input_map * self.unscale(z)
    }

    /// Diagonal rescaling `z = D z̃`: `H ← DHD`, `G ← DG`, `𝒵 ← D⁻¹𝒵`.
    pub fn precondition_with(&self, d: &Vector) -> Result<CondensedQp> {
        if d.len() != self.dim() {
            return Err(OcpError::Dimension(format!(
                "preconditioner has {} entries, QP has {} variables",
                d.len(),
                self.dim()
            )));
        }
        if !d.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(OcpError::Invalid("preconditioner entries must be positive and finite".into()));
        }
        let scale_sym = |m: &Matrix| {
            linalg::symmetrize(&Matrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)] * d[j]))
        };
        let h = scale_sym(&self.h);
        let mut out = self.clone();
        out.spectral.h = linalg::spd_factor(&h).map_err(OcpError::Conditioning)?;
        out.hbar = scale_sym(&self.hbar);
        out.h = h;
        out.g = Matrix::from_fn(self.g.nrows(), self.g.ncols(), |i, j| d[i] * self.g[(i, j)]);
        out.bounds = self.bounds.scaled_inverse(d);
        out.scaling = self.scaling.component_mul(d);
        Ok(out)
    }
}

/// Jacobi scaling `D_ii = H_ii^{-1/2}`.
///
/// Jacobi scaling does not always lower `κ(H)`; when it would raise it the QP
/// is returned unchanged with `D = I`.
pub fn jacobi_precondition(qp: &CondensedQp) -> Result<(CondensedQp, Vector)> {
    let d = Vector::from_fn(qp.dim(), |i, _| 1.0 / qp.h[(i, i)].sqrt());
    let scaled = qp.precondition_with(&d)?;
    if scaled.kappa() <= qp.kappa() {
        Ok((scaled, d))
    } else {
        Ok((qp.clone(), Vector::repeat(qp.dim(), 1.0)))
    }
}

/// `∇_z f(z, x) = 2(Hz + Gx)`.
pub fn gradient(qp: &CondensedQp, z: &Vector, x: &Vector) -> Result<Vector> {
    if z.len() != qp.dim() || x.len() != qp.state_dim() {
        return Err(OcpError::Dimension(format!(
            "gradient at z of length {} and x of length {}",
            z.len(),
            x.len()
        )));
    }
    Ok(qp.gradient(z, x))
}
