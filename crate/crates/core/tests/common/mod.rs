//! Seeded random problem instances shared by the integration targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use tdo_core::linalg::{self, Matrix, Vector};
use tdo_core::ocp::{self, CondensedQp, InputBox, OcpSpec, PlantModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vector {
    Vector::from_fn(len, |_, _| scale * rng.gen_range(-1.0..1.0))
}

/// `LLᵀ + floor·I` with uniform `L`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let l = uniform_matrix(rng, n, n);
    &l * l.transpose() + Matrix::identity(n, n) * floor
}

#[derive(Debug, Clone)]
pub struct RandomProblem {
    pub plant: PlantModel,
    pub spec: OcpSpec,
}

impl RandomProblem {
    pub fn condense(&self) -> CondensedQp {
        ocp::condense(&self.plant, &self.spec).expect("random instance condenses")
    }
}

/// Plant with `n ≤ 4`, `m ≤ 3`, `Nm ≤ 12`, spectral radius in `[0.3, 1.2]`,
/// random SPD weights and an asymmetric box around the origin.
pub fn random_problem(rng: &mut ChaCha8Rng) -> RandomProblem {
    loop {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let horizon = rng.gen_range(1..=(12 / m).min(6));
        let mut a = uniform_matrix(rng, n, n);
        let radius = linalg::spectral_radius(&a).expect("finite matrix");
        if radius < 1e-3 {
            continue;
        }
        a *= rng.gen_range(0.3..1.2) / radius;
        let b = uniform_matrix(rng, n, m);
        let q = random_spd(rng, n, 0.1);
        let r = random_spd(rng, m, 0.1);
        let lower: Vec<f64> = (0..m).map(|_| -rng.gen_range(0.2..2.0)).collect();
        let upper: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..2.0)).collect();
        let input_box = InputBox::new(lower, upper).expect("box contains the origin");
        let plant = PlantModel::new(a, b).expect("consistent dimensions");
        let spec = OcpSpec::new(q, r, horizon, input_box);
        if ocp::condense(&plant, &spec).is_ok() {
            return RandomProblem { plant, spec };
        }
    }
}

/// Uniform point of the QP's box.
pub fn point_in_box(rng: &mut ChaCha8Rng, qp: &CondensedQp) -> Vector {
    let (lo, hi) = (qp.bounds().lower(), qp.bounds().upper());
    Vector::from_fn(qp.dim(), |i, _| rng.gen_range(lo[i]..=hi[i]))
}
