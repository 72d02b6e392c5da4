//! Computable optimality certificates for a candidate final-time law.

use serde::Serialize;

use crate::alm::ControlProblem;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityCertificate {
    pub vi_residual: f64,
    pub constraint_values: Vec<f64>,
    pub multiplier: Vec<f64>,
    pub complementarity_defects: Vec<f64>,
    /// Upper bound on `F(m̂) - Val(P)`; present only when its preconditions hold.
    pub gap_bound: Option<f64>,
    pub gap_bound_refusal: Option<String>,
}

/// `-min_{m ∈ cl(R)} DL(m̂,λ)(m - m̂)`, with the minimum realized by one
/// standard solve on the chain.
pub fn vi_residual(
    problem: &ControlProblem,
    m_hat: &DiscreteMeasure,
    lambda: &[f64],
) -> Result<f64> {
    let rep = problem.objective.lagrangian_rep(m_hat, lambda)?;
    let best = problem.solve_standard(&rep)?;
    Ok(m_hat.moment(&rep)? - best.value)
}

/// `defect_i = |λ_i|` where `G_i < -tol`, else 0.
pub fn complementarity_check(g: &[f64], lambda: &[f64], tol: f64) -> Vec<f64> {
    g.iter()
        .zip(lambda)
        .map(|(&gi, &li)| if gi < -tol { li.abs() } else { 0.0 })
        .collect()
}

/// Bound on the loss of optimality of `m̂` for convex problems. Refuses
/// unless every functional is declared convex, `λ ≥ -tol`, `G(m̂) ≤ tol`
/// and all complementarity defects are within `tol`.
pub fn gap_bound(
    problem: &ControlProblem,
    m_hat: &DiscreteMeasure,
    lambda: &[f64],
    tol: f64,
) -> Result<f64> {
    let objective = &problem.objective;
    if !objective.cost.is_convex() || !objective.constraints.is_convex() {
        return Err(Error::CertificateRefused(
            "cost or constraints are not declared convex".into(),
        ));
    }
    if lambda.len() != objective.n_constraints() {
        return Err(Error::Shape(
            "multiplier length does not match the constraints".into(),
        ));
    }
    if let Some(l) = lambda.iter().find(|l| **l < -tol) {
        return Err(Error::CertificateRefused(format!(
            "negative multiplier {l}"
        )));
    }
    let g = objective.constraint_values(m_hat)?;
    if let Some(v) = g.iter().find(|v| **v > tol) {
        return Err(Error::CertificateRefused(format!(
            "constraint violated: G = {v}"
        )));
    }
    let defects = complementarity_check(&g, lambda, tol);
    if let Some(d) = defects.iter().find(|d| **d > tol) {
        return Err(Error::CertificateRefused(format!(
            "complementarity defect {d}"
        )));
    }
    vi_residual(problem, m_hat, lambda)
}

pub fn certify(
    problem: &ControlProblem,
    m_hat: &DiscreteMeasure,
    lambda: &[f64],
    tol: f64,
) -> Result<OptimalityCertificate> {
    let constraint_values = problem.objective.constraint_values(m_hat)?;
    let vi = vi_residual(problem, m_hat, lambda)?;
    let (gap_bound, gap_bound_refusal) = match gap_bound(problem, m_hat, lambda, tol) {
        Ok(b) => (Some(b), None),
        Err(Error::CertificateRefused(why)) => (None, Some(why)),
        Err(e) => return Err(e),
    };
    Ok(OptimalityCertificate {
        vi_residual: vi,
        complementarity_defects: complementarity_check(&constraint_values, lambda, tol),
        constraint_values,
        multiplier: lambda.to_vec(),
        gap_bound,
        gap_bound_refusal,
    })
}
