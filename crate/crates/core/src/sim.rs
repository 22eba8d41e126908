//! Closed-loop simulation of the coupled plant/optimizer system and of the
//! ideal optimal-MPC loop, the empirical iteration-budget search, value
//! function sampling and stepwise ISS audits.
//!
//! Event order per step: measure `x_k`, run `ℓ` iterations warmstarted from
//! `z_{k−1}` (no shift), apply `u_k = ΞDz_k`, propagate the plant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{self, CertifyError};
use crate::linalg::Vector;
use crate::ocp::CondensedQp;
use crate::solvers::{self, SolverError, SolverKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("initial iterate lies outside the box")]
    InfeasibleStart,
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error("invalid stability test: {0}")]
    BadStabilityTest(String),
    #[error("trajectory was recorded without oracle references")]
    MissingReference,
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Solve the reference problem `S(x_k)` at every step to log `e_k` and `ψ(x_k)`.
    pub oracle_logging: bool,
    pub oracle_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            oracle_logging: true,
            oracle_tol: 1e-12,
        }
    }
}

impl SimOptions {
    pub fn without_oracle() -> Self {
        Self {
            oracle_logging: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Tdo,
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: RunMode,
    pub kind: Option<SolverKind>,
    pub ell: Option<usize>,
    pub steps: usize,
    pub preconditioned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x: Vector,
    pub u: Vector,
    pub z: Vector,
    /// `S(x_k)` when oracle logging is on.
    pub reference: Option<Vector>,
    /// `‖z_k − S(x_k)‖`.
    pub e_norm: Option<f64>,
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub meta: RunMeta,
    pub records: Vec<StepRecord>,
    pub final_state: Vector,
    pub final_psi: Option<f64>,
}

impl TrajectoryLog {
    pub fn states(&self) -> impl Iterator<Item = &Vector> {
        self.records.iter().map(|r| &r.x).chain(std::iter::once(&self.final_state))
    }

    pub fn csv_header(&self) -> String {
        let n = self.final_state.len();
        let m = self.records.first().map_or(0, |r| r.u.len());
        let mut cols = vec!["k".to_string()];
        cols.extend((1..=n).map(|i| format!("x_{i}")));
        cols.extend((1..=m).map(|i| format!("u_{i}")));
        cols.push("e_norm".into());
        cols.push("psi".into());
        cols.join(",")
    }

    /// `# {metadata json}` line, header, one row per step and a final row
    /// carrying `x_K` with empty input and error cells.
    pub fn to_csv(&self) -> String {
        let fmt = certify::format_real;
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        let m = self.records.first().map_or(0, |r| r.u.len());
        let mut out = format!(
            "# {}\n{}\n",
            serde_json::to_string(&self.meta).expect("metadata serializes"),
            self.csv_header()
        );
        for (k, r) in self.records.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(r.x.iter().map(|&v| fmt(v)));
            row.extend(r.u.iter().map(|&v| fmt(v)));
            row.push(opt(r.e_norm));
            row.push(opt(r.psi));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let mut row = vec![self.records.len().to_string()];
        row.extend(self.final_state.iter().map(|&v| fmt(v)));
        row.extend(std::iter::repeat_n(String::new(), m + 1));
        row.push(opt(self.final_psi));
        out.push_str(&row.join(","));
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSample {
    pub value: f64,
    pub psi: f64,
    pub solution: Vector,
}

/// `V(x) = f(S(x), x)` and `ψ(x) = √V(x)` with `S` from the oracle.
pub fn evaluate_value_function(qp: &CondensedQp, x: &Vector, tol: f64) -> Result<ValueSample> {
    let solution = solvers::oracle_solve(qp, x, tol)?;
    let value = qp.cost(&solution, x);
    Ok(ValueSample {
        value,
        psi: value.max(0.0).sqrt(),
        solution,
    })
}

/// Membership of `x` in the terminal region: `−K̄ξ_N ∈ 𝒰`, with `ξ_N` the
/// terminal prediction under the optimal sequence `s = S(x)`.
pub fn in_terminal_region(qp: &CondensedQp, x: &Vector, s: &Vector) -> bool {
    let xi = qp.terminal_state(x, s);
    let u = -(qp.lqr_gain() * xi);
    qp.input_box().contains(&u)
}

fn check_state(qp: &CondensedQp, x0: &Vector) -> Result<()> {
    if x0.len() != qp.state_dim() {
        return Err(SimError::Dimension(format!(
            "QP has {} states, x0 has length {}",
            qp.state_dim(),
            x0.len()
        )));
    }
    Ok(())
}

fn reference_fields(
    qp: &CondensedQp,
    x: &Vector,
    z: &Vector,
    opts: &SimOptions,
) -> Result<(Option<Vector>, Option<f64>, Option<f64>)> {
    if !opts.oracle_logging || !x.iter().all(|v| v.is_finite()) {
        return Ok((None, None, None));
    }
    let sample = evaluate_value_function(qp, x, opts.oracle_tol)?;
    let e = (z - &sample.solution).norm();
    Ok((Some(sample.solution), Some(e), Some(sample.psi)))
}

fn final_psi(qp: &CondensedQp, x: &Vector, opts: &SimOptions) -> Result<Option<f64>> {
    if !opts.oracle_logging || !x.iter().all(|v| v.is_finite()) {
        return Ok(None);
    }
    Ok(Some(evaluate_value_function(qp, x, opts.oracle_tol)?.psi))
}

/// Coupled plant/optimizer loop `z_k = 𝒯^ℓ(z_{k−1}, x_k)`, `x_{k+1} = Ax_k + BΞDz_k`.
///
/// `z0` defaults to the origin, which the box always contains.
pub fn simulate_tdo(
    qp: &CondensedQp,
    kind: SolverKind,
    ell: usize,
    x0: &Vector,
    z0: Option<&Vector>,
    steps: usize,
    opts: &SimOptions,
) -> Result<TrajectoryLog> {
    check_state(qp, x0)?;
    if steps == 0 {
        return Err(SimError::ZeroSteps);
    }
    if ell == 0 {
        return Err(SolverError::ZeroIterations.into());
    }
    let mut z = match z0 {
        Some(z0) => {
            if z0.len() != qp.dim() {
                return Err(SimError::Dimension(format!(
                    "QP has {} decision variables, z0 has length {}",
                    qp.dim(),
                    z0.len()
                )));
            }
            if !qp.bounds().contains(z0) {
                return Err(SimError::InfeasibleStart);
            }
            z0.clone()
        }
        None => Vector::zeros(qp.dim()),
    };
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(steps);
    for _ in 0..steps {
        z = solvers::run(kind, qp, &z, &x, ell)?.iterate;
        let u = qp.first_input(&z);
        let (reference, e_norm, psi) = reference_fields(qp, &x, &z, opts)?;
        let next = qp.plant().step(&x, &u);
        records.push(StepRecord {
            x,
            u,
            z: z.clone(),
            reference,
            e_norm,
            psi,
        });
        x = next;
    }
    let final_psi = final_psi(qp, &x, opts)?;
    Ok(TrajectoryLog {
        meta: RunMeta {
            mode: RunMode::Tdo,
            kind: Some(kind),
            ell: Some(ell),
            steps,
            preconditioned: qp.is_preconditioned(),
        },
        records,
        final_state: x,
        final_psi,
    })
}

/// Ideal MPC loop `x_{k+1} = Ax_k + BΞD·S(x_k)`.
pub fn simulate_optimal(qp: &CondensedQp, x0: &Vector, steps: usize, opts: &SimOptions) -> Result<TrajectoryLog> {
    check_state(qp, x0)?;
    if steps == 0 {
        return Err(SimError::ZeroSteps);
    }
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(steps);
    for _ in 0..steps {
        let sample = evaluate_value_function(qp, &x, opts.oracle_tol)?;
        let u = qp.first_input(&sample.solution);
        let next = qp.plant().step(&x, &u);
        let (reference, e_norm, psi) = if opts.oracle_logging {
            (Some(sample.solution.clone()), Some(0.0), Some(sample.psi))
        } else {
            (None, None, None)
        };
        records.push(StepRecord {
            x,
            u,
            z: sample.solution,
            reference,
            e_norm,
            psi,
        });
        x = next;
    }
    let final_psi = final_psi(qp, &x, opts)?;
    Ok(TrajectoryLog {
        meta: RunMeta {
            mode: RunMode::Optimal,
            kind: None,
            ell: None,
            steps,
            preconditioned: qp.is_preconditioned(),
        },
        records,
        final_state: x,
        final_psi,
    })
}

/// Operational stability criterion: `‖x_K‖ ≤ ε·‖x₀‖` at `K = horizon_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityTest {
    pub horizon_steps: usize,
    pub shrink_tolerance: f64,
}

impl Default for StabilityTest {
    fn default() -> Self {
        Self {
            horizon_steps: 400,
            shrink_tolerance: 1e-4,
        }
    }
}

impl StabilityTest {
    pub fn new(horizon_steps: usize, shrink_tolerance: f64) -> Result<Self> {
        let test = Self {
            horizon_steps,
            shrink_tolerance,
        };
        test.validate()?;
        Ok(test)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(SimError::BadStabilityTest("horizon_steps must be at least 1".into()));
        }
        if !(self.shrink_tolerance > 0.0 && self.shrink_tolerance < 1.0) {
            return Err(SimError::BadStabilityTest(format!(
                "shrink tolerance {} is not in (0, 1)",
                self.shrink_tolerance
            )));
        }
        Ok(())
    }

    pub fn passes(&self, x0: &Vector, x_final: &Vector) -> bool {
        let last = x_final.norm();
        last.is_finite() && last <= self.shrink_tolerance * x0.norm()
    }

    /// Applies the test to a log of at least `horizon_steps` steps.
    pub fn check(&self, log: &TrajectoryLog) -> bool {
        let x0 = match log.records.first() {
            Some(r) => &r.x,
            None => return false,
        };
        match log.states().nth(self.horizon_steps) {
            Some(x) => self.passes(x0, x),
            None => false,
        }
    }
}

// States beyond this magnitude are treated as divergent.
const DIVERGENCE_LIMIT: f64 = 1e150;

/// `‖x_K‖` after `K = test.horizon_steps` closed-loop steps, without logging.
/// Stops early (returning infinity) once the state diverges.
pub fn closed_loop_final_norm(
    qp: &CondensedQp,
    kind: SolverKind,
    ell: usize,
    x0: &Vector,
    test: &StabilityTest,
) -> Result<f64> {
    check_state(qp, x0)?;
    let mut z = Vector::zeros(qp.dim());
    let mut x = x0.clone();
    for _ in 0..test.horizon_steps {
        z = solvers::run(kind, qp, &z, &x, ell)?.iterate;
        x = qp.plant().step(&x, &qp.first_input(&z));
        let size = x.amax();
        if !size.is_finite() || size > DIVERGENCE_LIMIT {
            return Ok(f64::INFINITY);
        }
    }
    Ok(x.norm())
}

pub fn stabilizes(qp: &CondensedQp, kind: SolverKind, ell: usize, x0: &Vector, test: &StabilityTest) -> Result<bool> {
    let last = closed_loop_final_norm(qp, kind, ell, x0, test)?;
    Ok(last.is_finite() && last <= test.shrink_tolerance * x0.norm())
}

/// Smallest budget in `[1, ell_max]` passing `test`, located by doubling
/// and then bisecting. The bisection assumes the pass/fail outcome is
/// monotone in `ℓ` between the last failing and first passing budgets.
pub fn empirical_min_iterations(
    qp: &CondensedQp,
    kind: SolverKind,
    x0: &Vector,
    ell_max: usize,
    test: &StabilityTest,
) -> Result<Option<usize>> {
    if ell_max == 0 {
        return Err(SolverError::ZeroIterations.into());
    }
    test.validate()?;
    let passes = |ell: usize| stabilizes(qp, kind, ell, x0, test);

    let mut failing = 0usize;
    let mut ell = 1usize;
    let passing = loop {
        if passes(ell)? {
            break ell;
        }
        failing = ell;
        if ell == ell_max {
            return Ok(None);
        }
        ell = (ell * 2).min(ell_max);
    };
    let (mut lo, mut hi) = (failing, passing);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// One step of a stepwise inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditStep {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Whether the inequality's hypothesis holds at this step.
    pub applies: bool,
}

impl AuditStep {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Smallest slack over the steps where the audit applies (`+∞` if none).
pub fn min_slack(steps: &[AuditStep]) -> f64 {
    steps
        .iter()
        .filter(|s| s.applies)
        .map(AuditStep::slack)
        .fold(f64::INFINITY, f64::min)
}

fn require_references(log: &TrajectoryLog) -> Result<()> {
    let complete = log.final_psi.is_some()
        && log.records.iter().all(|r| r.reference.is_some() && r.psi.is_some());
    if complete {
        Ok(())
    } else {
        Err(SimError::MissingReference)
    }
}

/// Plant-side ISS recursion `ψ(x_{k+1}) ≤ βψ(x_k) + ‖B̄e_k‖_W`, applicable
/// at steps where `x_k` is in the terminal region. On optimal runs
/// `e_k = 0` and this is the value-function decrease.
pub fn plant_iss_audit(qp: &CondensedQp, log: &TrajectoryLog) -> Result<Vec<AuditStep>> {
    require_references(log)?;
    let (beta, _) = certify::mpc_gain(qp)?;
    let b_bar = qp.b_bar();
    let w = &qp.spectral().w;
    let psi_next = |k: usize| -> f64 {
        match log.records.get(k + 1) {
            Some(r) => r.psi.unwrap_or(f64::NAN),
            None => log.final_psi.unwrap_or(f64::NAN),
        }
    };
    Ok(log
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let s = r.reference.as_ref().expect("checked above");
            let e = &r.z - s;
            AuditStep {
                k,
                lhs: psi_next(k),
                rhs: beta * r.psi.unwrap_or(f64::NAN) + w.norm_of(&(&b_bar * e)),
                applies: in_terminal_region(qp, &r.x, s),
            }
        })
        .collect())
}

/// Optimizer-side ISS recursion on a TDO run with `kind` and budget `ell`.
///
/// PGM, Euclidean norm: `‖e_{k+1}‖ ≤ η^ℓ‖e_k‖ + η^ℓ·b·‖GΔx_k‖_{H⁻¹}`.
/// APGM, `H`-norm: `‖e_{k+1}‖_H ≤ η_a(ℓ)(‖e_k‖_H + ‖GΔx_k‖_{H⁻¹})`.
pub fn optimizer_iss_audit(
    qp: &CondensedQp,
    log: &TrajectoryLog,
    kind: SolverKind,
    ell: usize,
) -> Result<Vec<AuditStep>> {
    require_references(log)?;
    let h = &qp.spectral().h;
    let b = 1.0 / qp.lambda_min().sqrt();
    let rate = match kind {
        SolverKind::Pgm => certify::pgm_rate(qp).powi(ell.min(i32::MAX as usize) as i32),
        SolverKind::Apgm => certify::apgm_rate(qp, ell),
    };
    let mut steps = Vec::with_capacity(log.records.len().saturating_sub(1));
    for (k, pair) in log.records.windows(2).enumerate() {
        let (now, next) = (&pair[0], &pair[1]);
        let e_now = &now.z - now.reference.as_ref().expect("checked above");
        let e_next = &next.z - next.reference.as_ref().expect("checked above");
        let drift = h.inv_norm_of(&(qp.g() * (&next.x - &now.x)));
        let (lhs, rhs) = match kind {
            SolverKind::Pgm => (e_next.norm(), rate * e_now.norm() + rate * b * drift),
            SolverKind::Apgm => (h.norm_of(&e_next), rate * (h.norm_of(&e_now) + drift)),
        };
        steps.push(AuditStep {
            k,
            lhs,
            rhs,
            applies: true,
        });
    }
    Ok(steps)
}
