//! The two reference problems: a stable 4-state, 2-input system and a
//! cart-pole linearized about the upright equilibrium.

use nalgebra::{dmatrix, dvector};

use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::ocp::{self, CondensedQp, InputBox, OcpSpec, PlantModel};
use crate::solvers::SolverKind;

#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub name: &'static str,
    pub plant: PlantModel,
    pub spec: OcpSpec,
    pub x0: Vector,
    pub nominal_ell_pgm: usize,
    pub nominal_ell_apgm: usize,
    /// Sampling period in seconds, for cases discretized from continuous time.
    pub sampling_period: Option<f64>,
}

impl BenchmarkCase {
    pub fn nominal_ell(&self, kind: SolverKind) -> usize {
        match kind {
            SolverKind::Pgm => self.nominal_ell_pgm,
            SolverKind::Apgm => self.nominal_ell_apgm,
        }
    }

    pub fn condense(&self) -> ocp::Result<CondensedQp> {
        ocp::condense(&self.plant, &self.spec)
    }
}

pub const BENCHMARK_NAMES: [&str; 2] = ["jones", "pendulum"];

pub fn by_name(name: &str) -> Option<BenchmarkCase> {
    match name {
        "jones" => Some(jones_system()),
        "pendulum" => Some(pendulum_case()),
        _ => None,
    }
}

/// Stable system with `Q = 10I`, `R = I`, `N = 5`, `𝒰 = [−1, 1]²`.
pub fn jones_system() -> BenchmarkCase {
    let a = dmatrix![
        0.7, -0.1, 0.0, 0.0;
        0.2, -0.5, 0.1, 0.0;
        0.0, 0.1, 0.1, 0.0;
        0.5, 0.0, 0.5, 0.5
    ];
    let b = dmatrix![
        0.0, 0.1;
        0.1, 1.0;
        0.1, 0.0;
        0.0, 0.0
    ];
    let plant = PlantModel::new(a, b).expect("constant benchmark data");
    let spec = OcpSpec::new(
        Matrix::identity(4, 4) * 10.0,
        Matrix::identity(2, 2),
        5,
        InputBox::symmetric(2, 1.0).expect("constant benchmark data"),
    );
    BenchmarkCase {
        name: "jones",
        plant,
        spec,
        x0: dvector![10.0, -10.0, 10.0, -10.0],
        nominal_ell_pgm: 10,
        nominal_ell_apgm: 10,
        sampling_period: None,
    }
}

/// Physical parameters of the cart-pole (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub damping: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            damping: 0.1,
            length: 1.0,
            gravity: 9.81,
        }
    }
}

impl PendulumParams {
    /// Determinant of the mass matrix `[[J, −ml], [−ml, M + m]]`, `J = 4/3·ml²`.
    pub fn mass_determinant(&self) -> f64 {
        let (mc, mp, l) = (self.cart_mass, self.pole_mass, self.length);
        let inertia = 4.0 / 3.0 * mp * l * l;
        inertia * (mc + mp) - mp * mp * l * l
    }
}

/// Linearized cart-pole `ẋ = A_c x + B_c F` with `x = (y, ẏ, φ, φ̇)`.
///
/// From `J φ̈ − ml ÿ = mglφ` and `(M + m) ÿ − ml φ̈ = −bẏ + F`, solved for the
/// accelerations by inverting the mass matrix.
pub fn pendulum_continuous(params: &PendulumParams) -> (Matrix, Matrix) {
    let PendulumParams {
        cart_mass: mc,
        pole_mass: mp,
        damping: b,
        length: l,
        gravity: g,
    } = *params;
    let inertia = 4.0 / 3.0 * mp * l * l;
    let det = params.mass_determinant();
    let ac = dmatrix![
        0.0, 1.0, 0.0, 0.0;
        0.0, -inertia * b / det, mp * mp * l * l * g / det, 0.0;
        0.0, 0.0, 0.0, 1.0;
        0.0, -mp * l * b / det, (mc + mp) * mp * g * l / det, 0.0
    ];
    let bc = dmatrix![0.0; inertia / det; 0.0; mp * l / det];
    (ac, bc)
}

/// Zero-order-hold discretization via the exponential of `[[A_c, B_c], [0, 0]]·τ`.
pub fn zoh_discretize(ac: &Matrix, bc: &Matrix, tau: f64) -> Result<(Matrix, Matrix), LinalgError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(LinalgError::Dimension(format!("sampling period must be positive, got {tau}")));
    }
    let (n, m) = (ac.nrows(), bc.ncols());
    if !ac.is_square() || bc.nrows() != n {
        return Err(LinalgError::Dimension(format!(
            "A_c is {:?}, B_c is {:?}",
            ac.shape(),
            bc.shape()
        )));
    }
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(ac);
    aug.view_mut((0, n), (n, m)).copy_from(bc);
    let e = linalg::expm(&(aug * tau))?;
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

pub const PENDULUM_SAMPLING_PERIOD: f64 = 0.2;

/// Cart-pole sampled at 0.2 s with `Q = I`, `R = I`, `N = 7`, `𝒰 = [−1, 1]`.
pub fn pendulum_case() -> BenchmarkCase {
    let (ac, bc) = pendulum_continuous(&PendulumParams::default());
    let (a, b) = zoh_discretize(&ac, &bc, PENDULUM_SAMPLING_PERIOD).expect("constant benchmark data");
    let plant = PlantModel::new(a, b).expect("constant benchmark data");
    let spec = OcpSpec::new(
        Matrix::identity(4, 4),
        Matrix::identity(1, 1),
        7,
        InputBox::symmetric(1, 1.0).expect("constant benchmark data"),
    );
    BenchmarkCase {
        name: "pendulum",
        plant,
        spec,
        x0: dvector![2.0, 0.0, 0.0, 0.0],
        nominal_ell_pgm: 100_000,
        nominal_ell_apgm: 8_000,
        sampling_period: Some(PENDULUM_SAMPLING_PERIOD),
    }
}
