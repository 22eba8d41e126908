//! Closed-form convergence rates, ISS gains and small-gain iteration bounds
//! for the coupled plant/optimizer loop.
//!
//! Plant side: `ψ(x⁺) ≤ βψ(x) + ‖B̄e‖_W` gives the gain `γ₁ = β/(1−β)`.
//! Optimizer side: PGM has gain `γ₂(ℓ) = bη^ℓ/(1−η^ℓ)`, APGM (for `ℓ > ℓ̄`)
//! has `γ₂ᵃ(ℓ) = η_a(ℓ)/(1−η_a(ℓ))`. The loop is certified when
//! `ζγ₁γ₂(ℓ) < 1` (PGM) or `ζ_aγ₁γ₂ᵃ(ℓ) < 1` (APGM).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Vector};
use crate::ocp::{self, CondensedQp};
use crate::solvers::SolverKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("certification assumption violated: {0}")]
    Assumption(String),
    #[error("APGM with {ell} iterations is not yet contractive (needs ℓ > {ell_bar:.4})")]
    NotYetContractive { ell: usize, ell_bar: f64 },
    #[error("iteration budget must be at least 1")]
    ZeroIterations,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Problem(#[from] ocp::OcpError),
}

pub type Result<T> = std::result::Result<T, CertifyError>;

/// PGM contraction factor `η = (κ − 1)/(κ + 1)`.
pub fn rate_from_kappa(kappa: f64) -> f64 {
    (kappa - 1.0) / (kappa + 1.0)
}

/// APGM `ℓ`-step factor `η_a(ℓ) = √κ (1 − κ^{−1/2})^{(ℓ−1)/2}`.
pub fn accelerated_rate_from_kappa(kappa: f64, ell: f64) -> f64 {
    let base = 1.0 - 1.0 / kappa.sqrt();
    kappa.sqrt() * base.max(0.0).powf((ell - 1.0) / 2.0)
}

/// `ℓ̄ = 1 − log κ / log(1 − κ^{−1/2})`; `1` in the `κ = 1` limit.
pub fn min_contractive_iters_from_kappa(kappa: f64) -> f64 {
    let base = 1.0 - 1.0 / kappa.sqrt();
    if base <= 0.0 || kappa.ln() <= 0.0 {
        1.0
    } else {
        1.0 - kappa.ln() / base.ln()
    }
}

pub fn pgm_rate(qp: &CondensedQp) -> f64 {
    rate_from_kappa(qp.kappa())
}

pub fn apgm_rate(qp: &CondensedQp, ell: usize) -> f64 {
    accelerated_rate_from_kappa(qp.kappa(), ell as f64)
}

pub fn apgm_min_iters(qp: &CondensedQp) -> f64 {
    min_contractive_iters_from_kappa(qp.kappa())
}

/// `β = √(1 − λ_W⁻(Q))` and `γ₁ = β/(1 − β)`.
pub fn mpc_gain(qp: &CondensedQp) -> Result<(f64, f64)> {
    let (lambda, _) = linalg::weighted_eig_bounds_with(qp.q(), &qp.spectral().w)?;
    // W = Q exactly when A = 0; allow rounding above 1.
    if !(lambda > 0.0) || lambda > 1.0 + 1e-12 {
        return Err(CertifyError::Assumption(format!(
            "λ_W⁻(Q) = {lambda:.6e} must lie in (0, 1]"
        )));
    }
    let beta = (1.0 - lambda.min(1.0)).sqrt();
    Ok((beta, beta / (1.0 - beta)))
}

/// Interconnection constants `(ζ, ζ_a)`:
/// `ζ = 2‖H^{−1/2}GP^{−1/2}‖·‖W^{1/2}B̄‖`, `ζ_a = 2‖H^{−1/2}GP^{−1/2}‖·‖W^{1/2}B̄H^{−1/2}‖`.
pub fn interconnection_gains(qp: &CondensedQp) -> Result<(f64, f64)> {
    let sp = qp.spectral();
    let coupling = linalg::spectral_norm(&(&sp.h.inv_sqrt * qp.g() * &sp.p.inv_sqrt))?;
    let w_bbar = &sp.w.sqrt * qp.b_bar();
    let zeta = 2.0 * coupling * linalg::spectral_norm(&w_bbar)?;
    let zeta_a = 2.0 * coupling * linalg::spectral_norm(&(w_bbar * &sp.h.inv_sqrt))?;
    Ok((zeta, zeta_a))
}

pub fn interconnection_gain(qp: &CondensedQp, kind: SolverKind) -> Result<f64> {
    let (zeta, zeta_a) = interconnection_gains(qp)?;
    Ok(match kind {
        SolverKind::Pgm => zeta,
        SolverKind::Apgm => zeta_a,
    })
}

/// Every certification scalar of a condensed QP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub kappa: f64,
    pub eta: f64,
    pub ell_bar: f64,
    /// `‖H^{−1/2}‖`.
    pub b: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub zeta: f64,
    pub zeta_a: f64,
    /// PGM bound `ℓ*`.
    pub ell_star: f64,
    /// APGM bound `ℓ_a*` (before taking the maximum with `ℓ̄`).
    pub ell_star_a: f64,
}

impl GainReport {
    pub fn new(qp: &CondensedQp) -> Result<Self> {
        let kappa = qp.kappa();
        let eta = rate_from_kappa(kappa);
        let ell_bar = min_contractive_iters_from_kappa(kappa);
        let b = 1.0 / qp.lambda_min().sqrt();
        let (beta, gamma1) = mpc_gain(qp)?;
        let (zeta, zeta_a) = interconnection_gains(qp)?;

        let ell_star = if eta <= 0.0 {
            0.0
        } else {
            -(zeta * gamma1 * b + 1.0).ln() / eta.ln()
        };
        let base = 1.0 - 1.0 / kappa.sqrt();
        let ell_star_a = if base <= 0.0 {
            1.0
        } else {
            1.0 - 2.0 * (kappa.sqrt() * (1.0 + zeta_a * gamma1)).ln() / base.ln()
        };
        Ok(Self {
            kappa,
            eta,
            ell_bar,
            b,
            beta,
            gamma1,
            zeta,
            zeta_a,
            ell_star,
            ell_star_a,
        })
    }

    pub fn eta_a(&self, ell: usize) -> f64 {
        accelerated_rate_from_kappa(self.kappa, ell as f64)
    }

    /// PGM optimizer gain `γ₂(ℓ) = bη^ℓ/(1 − η^ℓ)`.
    pub fn gamma2(&self, ell: usize) -> Result<f64> {
        if ell == 0 {
            return Err(CertifyError::ZeroIterations);
        }
        let rate = self.eta.powi(ell.min(i32::MAX as usize) as i32);
        Ok(self.b * rate / (1.0 - rate))
    }

    /// APGM optimizer gain `γ₂ᵃ(ℓ) = η_a(ℓ)/(1 − η_a(ℓ))`, defined for `ℓ > ℓ̄`.
    pub fn gamma2a(&self, ell: usize) -> Result<f64> {
        if ell == 0 {
            return Err(CertifyError::ZeroIterations);
        }
        let rate = self.eta_a(ell);
        if (ell as f64) <= self.ell_bar || rate >= 1.0 {
            return Err(CertifyError::NotYetContractive {
                ell,
                ell_bar: self.ell_bar,
            });
        }
        Ok(rate / (1.0 - rate))
    }

    pub fn optimizer_gain(&self, ell: usize, kind: SolverKind) -> Result<f64> {
        match kind {
            SolverKind::Pgm => self.gamma2(ell),
            SolverKind::Apgm => self.gamma2a(ell),
        }
    }

    /// Loop gain `ζγ₁γ₂(ℓ)` or `ζ_aγ₁γ₂ᵃ(ℓ)`; infinite while APGM is not contractive.
    pub fn smallgain(&self, ell: usize, kind: SolverKind) -> Result<f64> {
        let (zeta, gain) = match kind {
            SolverKind::Pgm => (self.zeta, self.gamma2(ell)),
            SolverKind::Apgm => (self.zeta_a, self.gamma2a(ell)),
        };
        match gain {
            Ok(g) => Ok(zeta * self.gamma1 * g),
            Err(CertifyError::NotYetContractive { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Real-valued threshold: `ℓ*` for PGM, `max(ℓ_a*, ℓ̄)` for APGM.
    /// Any integer strictly above it certifies the loop.
    pub fn iteration_bound(&self, kind: SolverKind) -> f64 {
        match kind {
            SolverKind::Pgm => self.ell_star,
            SolverKind::Apgm => self.ell_star_a.max(self.ell_bar),
        }
    }

    /// Smallest integer budget strictly above [`Self::iteration_bound`], at least 1.
    pub fn certified_budget(&self, kind: SolverKind) -> usize {
        let bound = self.iteration_bound(kind);
        let next = bound.floor() + 1.0;
        next.max(1.0) as usize
    }
}

pub fn gain_report(qp: &CondensedQp) -> Result<GainReport> {
    GainReport::new(qp)
}

pub fn optimizer_gain(qp: &CondensedQp, ell: usize, kind: SolverKind) -> Result<f64> {
    GainReport::new(qp)?.optimizer_gain(ell, kind)
}

pub fn iteration_bound(qp: &CondensedQp, kind: SolverKind) -> Result<f64> {
    Ok(GainReport::new(qp)?.iteration_bound(kind))
}

/// Jacobi scaling kept only when it worsens none of `κ(H)`, `ℓ*` and the
/// APGM bound; otherwise the QP is returned unchanged with `D = I`.
///
/// Lowering `κ` alone does not guarantee a smaller certificate, because
/// the scaling also moves `b`, `ζ` and `ζ_a`.
pub fn certified_precondition(qp: &CondensedQp) -> Result<(CondensedQp, Vector)> {
    let identity = || Vector::repeat(qp.dim(), 1.0);
    let (scaled, d) = ocp::jacobi_precondition(qp)?;
    if d.iter().all(|&v| v == 1.0) {
        return Ok((scaled, d));
    }
    let before = GainReport::new(qp)?;
    let after = GainReport::new(&scaled)?;
    let no_worse = after.kappa <= before.kappa
        && SolverKind::ALL
            .iter()
            .all(|&k| after.iteration_bound(k) <= before.iteration_bound(k));
    if no_worse {
        Ok((scaled, d))
    } else {
        Ok((qp.clone(), identity()))
    }
}

/// Report plus the verdict at a specific budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: SolverKind,
    pub ell: usize,
    #[serde(flatten)]
    pub report: GainReport,
    pub smallgain_at_ell: f64,
    pub certified: bool,
}

impl Certificate {
    pub const CSV_HEADER: [&'static str; 12] = [
        "kappa",
        "eta",
        "ell_bar",
        "b",
        "beta",
        "gamma1",
        "zeta",
        "zeta_a",
        "ell_star",
        "ell_star_a",
        "smallgain_at_ell",
        "verdict",
    ];

    pub fn verdict(&self) -> &'static str {
        if self.certified {
            "stable"
        } else {
            "not-certified"
        }
    }

    pub fn csv_header() -> String {
        Self::CSV_HEADER.join(",")
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let r = &self.report;
        let mut fields: Vec<String> = [
            r.kappa,
            r.eta,
            r.ell_bar,
            r.b,
            r.beta,
            r.gamma1,
            r.zeta,
            r.zeta_a,
            r.ell_star,
            r.ell_star_a,
            self.smallgain_at_ell,
        ]
        .iter()
        .map(|&v| format_real(v))
        .collect();
        fields.push(self.verdict().to_string());
        fields
    }

    pub fn csv_row(&self) -> String {
        self.csv_fields().join(",")
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("certificate serializes");
        value["verdict"] = self.verdict().into();
        serde_json::to_string_pretty(&value).expect("certificate serializes")
    }
}

/// Evaluates the small-gain condition at budget `ell`.
pub fn certify(qp: &CondensedQp, ell: usize, kind: SolverKind) -> Result<Certificate> {
    if ell == 0 {
        return Err(CertifyError::ZeroIterations);
    }
    let report = GainReport::new(qp)?;
    let smallgain_at_ell = report.smallgain(ell, kind)?;
    let contractive = match kind {
        SolverKind::Pgm => true,
        SolverKind::Apgm => (ell as f64) > report.ell_bar,
    };
    Ok(Certificate {
        kind,
        ell,
        report,
        smallgain_at_ell,
        certified: contractive && smallgain_at_ell < 1.0,
    })
}

/// Fixed 12-significant-digit scientific notation; `inf`, `-inf`, `nan` spelled out.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.11e}")
    }
}
