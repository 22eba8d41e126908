//! Problem-definition documents and benchmark lookup.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tdo_core::bench;
use tdo_core::ocp::{self, InputBox, OcpSpec, PlantModel};
use tdo_core::solvers::SolverKind;
use tdo_core::{Matrix, Vector};

use crate::CliError;

/// JSON schema: matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    pub x0: Vec<f64>,
}

fn to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Problem(format!("{name} must be a nonempty rectangular array")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
}

fn from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Problem(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_problem(problem: &Problem) -> Self {
        Self {
            a: from_matrix(problem.plant.a()),
            b: from_matrix(problem.plant.b()),
            q: from_matrix(&problem.spec.q),
            r: from_matrix(&problem.spec.r),
            horizon: problem.spec.horizon,
            box_lower: problem.spec.input_box.lower().to_vec(),
            box_upper: problem.spec.input_box.upper().to_vec(),
            x0: problem.x0.iter().copied().collect(),
        }
    }

    pub fn into_problem(self, label: String) -> Result<Problem, CliError> {
        let plant = PlantModel::new(to_matrix("A", &self.a)?, to_matrix("B", &self.b)?)?;
        let input_box = InputBox::new(self.box_lower, self.box_upper)?;
        let spec = OcpSpec::new(to_matrix("Q", &self.q)?, to_matrix("R", &self.r)?, self.horizon, input_box);
        if self.x0.len() != plant.state_dim() {
            return Err(CliError::Problem(format!(
                "x0 has {} entries, A has {} states",
                self.x0.len(),
                plant.state_dim()
            )));
        }
        Ok(Problem {
            label,
            plant,
            spec,
            x0: Vector::from_vec(self.x0),
            nominal_ell: None,
        })
    }
}

/// A plant, cost and initial state, from a benchmark or a problem file.
#[derive(Debug, Clone)]
pub struct Problem {
    pub label: String,
    pub plant: PlantModel,
    pub spec: OcpSpec,
    pub x0: Vector,
    /// Default budgets `(pgm, apgm)` for benchmarks.
    pub nominal_ell: Option<(usize, usize)>,
}

impl Problem {
    pub fn benchmark(name: &str) -> Result<Self, CliError> {
        let case = bench::by_name(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown benchmark {name:?}; expected one of {}",
                bench::BENCHMARK_NAMES.join(", ")
            ))
        })?;
        Ok(Self {
            label: case.name.to_string(),
            plant: case.plant,
            spec: case.spec,
            x0: case.x0,
            nominal_ell: Some((case.nominal_ell_pgm, case.nominal_ell_apgm)),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        ProblemFile::load(path)?.into_problem(path.display().to_string())
    }

    pub fn nominal_ell(&self, kind: SolverKind) -> Option<usize> {
        self.nominal_ell.map(|(pgm, apgm)| match kind {
            SolverKind::Pgm => pgm,
            SolverKind::Apgm => apgm,
        })
    }

    /// Applies horizon and `R`-scale overrides.
    pub fn with_overrides(mut self, horizon: Option<usize>, r_scale: Option<f64>) -> Result<Self, CliError> {
        if let Some(n) = horizon {
            self.spec = self.spec.with_horizon(n);
        }
        if let Some(s) = r_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::Usage(format!("R scale must be positive, got {s}")));
            }
            self.spec = self.spec.with_r_scale(s);
        }
        Ok(self)
    }

    pub fn condense(&self) -> Result<ocp::CondensedQp, CliError> {
        Ok(ocp::condense(&self.plant, &self.spec)?)
    }
}
