//! Augmented-Lagrangian method over the reachable set of final-time laws.
//!
//! The inner loop minimizes `L_A(·,·,λ,c)` over `cl(R) × R^N_{≥0}`. Each step
//! linearizes `L_A` in the measure, solves the resulting standard problem to
//! get a target law `m̃`, and moves along the segment `[m, m̃]` jointly with a
//! projected gradient step on the slack. The outer loop updates the multiplier
//! when the constraint residual is small enough, and otherwise raises the
//! penalty and resets the tolerances.

use serde::Serialize;

use crate::diagnostics;
use crate::dp::{self, ControlField, StandardSolution};
use crate::error::{Error, Result};
use crate::functionals::{aug_lagrangian_value, slack_gradient_from, Objective};
use crate::lattice::StencilTable;
use crate::measure::DiscreteMeasure;

/// Chain, initial law and functionals of one constrained problem.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub stencils: StencilTable,
    pub initial: DiscreteMeasure,
    pub objective: Objective,
}

impl ControlProblem {
    pub fn new(
        stencils: StencilTable,
        initial: DiscreteMeasure,
        objective: Objective,
    ) -> Result<Self> {
        if initial.grid() != stencils.grid() {
            return Err(Error::Shape(
                "initial law and stencils live on different grids".into(),
            ));
        }
        let n = stencils.grid().len();
        let objective_len = objective
            .cost
            .integrands()
            .iter()
            .chain(objective.constraints.integrands())
            .all(|f| f.len() == n);
        if !objective_len {
            return Err(Error::Shape(
                "functional integrands do not match the grid".into(),
            ));
        }
        Ok(Self {
            stencils,
            initial,
            objective,
        })
    }

    pub fn n_constraints(&self) -> usize {
        self.objective.n_constraints()
    }

    pub fn solve_standard(&self, phi: &[f64]) -> Result<StandardSolution> {
        dp::solve_standard(&self.stencils, phi, &self.initial)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlmConfig {
    pub eta_star: f64,
    pub omega_star: f64,
    /// Initial penalty `c₀`.
    pub initial_penalty: f64,
    /// Factor applied to `c` when the residual is too large.
    pub penalty_growth: f64,
    /// `η = c^{-eta_exponent}` after a penalty (re)set.
    pub eta_exponent: f64,
    /// `ω = c^{-omega_exponent}` after a penalty (re)set.
    pub omega_exponent: f64,
    /// Divisor of `η` after a multiplier update.
    pub eta_decay: f64,
    /// Divisor of `ω` after a multiplier update.
    pub omega_decay: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Resolution of the step-length grid `{0, δθ, ..., 1}`.
    pub theta_step: f64,
    pub branch_test: BranchTest,
    /// Never tighten `ω_k` below `ω_*` after a multiplier update; the
    /// termination test only needs `ε ≤ ω_*`.
    pub omega_floor: bool,
}

/// Tolerance the outer residual `|G + s|` is compared with to choose
/// between a multiplier update and a penalty increase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchTest {
    /// `|G + s| ≤ η_k` updates the multiplier.
    #[default]
    Eta,
    /// `|G + s| ≤ ω_k` updates the multiplier.
    Omega,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            eta_star: 1e-5,
            omega_star: 1e-5,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            eta_exponent: 0.1,
            omega_exponent: 1.0,
            eta_decay: 10f64.powf(0.1),
            omega_decay: 10.0,
            max_outer: 100,
            max_inner: 5000,
            theta_step: 1e-6,
            branch_test: BranchTest::Eta,
            omega_floor: true,
        }
    }
}

impl AlmConfig {
    /// Defaults with `η_* = ω_* = tolerance`.
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            eta_star: tolerance,
            omega_star: tolerance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta_star", self.eta_star),
            ("omega_star", self.omega_star),
            ("initial_penalty", self.initial_penalty),
            ("penalty_growth", self.penalty_growth),
            ("eta_exponent", self.eta_exponent),
            ("omega_exponent", self.omega_exponent),
            ("eta_decay", self.eta_decay),
            ("omega_decay", self.omega_decay),
            ("theta_step", self.theta_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive (got {v})")));
            }
        }
        if self.initial_penalty < 1.0 {
            return Err(Error::Config("initial_penalty must be at least 1".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        theta_grid_size(self.theta_step)?;
        Ok(())
    }

    fn eta_for(&self, penalty: f64) -> f64 {
        penalty.powf(-self.eta_exponent)
    }

    fn omega_for(&self, penalty: f64) -> f64 {
        penalty.powf(-self.omega_exponent)
    }
}

fn theta_grid_size(theta_step: f64) -> Result<usize> {
    let n = (1.0 / theta_step).round();
    if !(n >= 1.0) || (n * theta_step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "theta_step {theta_step} does not divide [0, 1] into an integer grid"
        )));
    }
    Ok(n as usize)
}

/// Iterate of the outer loop.
#[derive(Debug, Clone)]
pub struct AlmState {
    pub m: DiscreteMeasure,
    pub slack: Vec<f64>,
    pub lambda: Vec<f64>,
    pub penalty: f64,
    pub eta: f64,
    pub omega: f64,
    pub k: usize,
}

/// Result of linearizing `L_A` at `(m, s)` and solving the standard problem.
#[derive(Debug, Clone)]
pub struct LinearizedStep {
    /// Minimizer `m̃` of `DL_A(m,s,λ,c)(· - m)` over reachable laws.
    pub target: DiscreteMeasure,
    /// `min_{m'} DL_A(m'-m)`, non-positive up to rounding.
    pub gap: f64,
    pub representative: Vec<f64>,
}

pub fn linearized_step(
    problem: &ControlProblem,
    m: &DiscreteMeasure,
    slack: &[f64],
    lambda: &[f64],
    penalty: f64,
) -> Result<LinearizedStep> {
    let representative = problem
        .objective
        .aug_lagrangian_rep(m, slack, lambda, penalty)?;
    let solution = problem.solve_standard(&representative)?;
    let gap = solution.value - m.moment(&representative)?;
    Ok(LinearizedStep {
        target: solution.terminal,
        gap,
        representative,
    })
}

/// Minimizes `θ ↦ L_A((1-θ)m + θm̃, max(s + θδs, 0), λ, c)` over the grid
/// `{0, δθ, ..., 1}`; ties go to the smallest `θ`.
///
/// Moments are affine in `θ`, so only their two endpoint values are computed
/// from the measures.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    objective: &Objective,
    m: &DiscreteMeasure,
    target: &DiscreteMeasure,
    slack: &[f64],
    slack_step: &[f64],
    lambda: &[f64],
    penalty: f64,
    theta_step: f64,
) -> Result<f64> {
    let n = theta_grid_size(theta_step)?;
    let cost_a = objective.cost.moments(m)?;
    let cost_b = objective.cost.moments(target)?;
    let cons_a = objective.constraints.moments(m)?;
    let cons_b = objective.constraints.moments(target)?;
    let nc = objective.n_constraints();
    if slack.len() != nc || slack_step.len() != nc || lambda.len() != nc {
        return Err(Error::Shape(
            "slack, step and multiplier lengths disagree".into(),
        ));
    }

    let mut cost_y = cost_a.clone();
    let mut cons_y = cons_a.clone();
    let mut f = [0.0];
    let mut g = vec![0.0; nc];
    let mut s = vec![0.0; nc];
    let mut best = f64::INFINITY;
    let mut best_theta = 0.0;
    for i in 0..=n {
        let theta = if i == n { 1.0 } else { i as f64 / n as f64 };
        for ((y, a), b) in cost_y.iter_mut().zip(&cost_a).zip(&cost_b) {
            *y = a + theta * (b - a);
        }
        for ((y, a), b) in cons_y.iter_mut().zip(&cons_a).zip(&cons_b) {
            *y = a + theta * (b - a);
        }
        objective.cost.eval_into(&cost_y, &mut f);
        objective.constraints.eval_into(&cons_y, &mut g);
        for ((si, s0), ds) in s.iter_mut().zip(slack).zip(slack_step) {
            *si = (s0 + theta * ds).max(0.0);
        }
        let value = aug_lagrangian_value(f[0], &g, &s, lambda, penalty);
        if value < best {
            best = value;
            best_theta = theta;
        }
    }
    if !best.is_finite() {
        return Err(Error::Evaluation(
            "augmented Lagrangian is not finite along the segment".into(),
        ));
    }
    Ok(best_theta)
}

/// One recorded inner iteration.
#[derive(Debug, Clone, Serialize)]
pub struct InnerStep {
    /// `L_A(m_ℓ, s_ℓ)`.
    pub aug_lagrangian: f64,
    pub epsilon: f64,
    /// `DL_A(m_ℓ)(m_ℓ - m̃_ℓ)`, i.e. minus the linearized gap.
    pub measure_criterion: f64,
    /// `|s_ℓ - max(s_ℓ + δs_ℓ, 0)|_∞`.
    pub slack_criterion: f64,
    /// Step taken from this iterate; `None` on the last record.
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InnerStatus {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub m: DiscreteMeasure,
    pub slack: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub standard_solves: usize,
    pub trace: Vec<InnerStep>,
    pub status: InnerStatus,
}

/// Projected-gradient minimization of `L_A(·,·,λ,c)`; stops once `ε ≤ ω` or
/// after `config.max_inner` steps (reported through `status`).
pub fn inner_loop(
    problem: &ControlProblem,
    m0: &DiscreteMeasure,
    s0: &[f64],
    lambda: &[f64],
    penalty: f64,
    omega: f64,
    config: &AlmConfig,
) -> Result<InnerResult> {
    if s0.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Input("initial slack must be non-negative".into()));
    }
    if !(penalty > 0.0) || !(omega > 0.0) {
        return Err(Error::Input(
            "penalty and tolerance must be positive".into(),
        ));
    }
    let objective = &problem.objective;
    let mut m = m0.clone();
    let mut slack = s0.to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut standard_solves = 0;

    loop {
        let cost = objective.cost_value(&m)?;
        let g = objective.constraint_values(&m)?;
        let aug = aug_lagrangian_value(cost, &g, &slack, lambda, penalty);
        let step = linearized_step(problem, &m, &slack, lambda, penalty)?;
        standard_solves += 1;

        let slack_step: Vec<f64> = slack_gradient_from(&g, &slack, lambda, penalty)
            .into_iter()
            .map(|d| -d)
            .collect();
        let slack_criterion = slack
            .iter()
            .zip(&slack_step)
            .map(|(s, ds)| (s - (s + ds).max(0.0)).abs())
            .fold(0.0, f64::max);
        let measure_criterion = -step.gap;
        let epsilon = measure_criterion.max(slack_criterion).max(0.0);

        let status = if epsilon <= omega {
            Some(InnerStatus::Converged)
        } else if iterations >= config.max_inner {
            Some(InnerStatus::IterationCap)
        } else {
            None
        };
        if let Some(status) = status {
            trace.push(InnerStep {
                aug_lagrangian: aug,
                epsilon,
                measure_criterion,
                slack_criterion,
                theta: None,
            });
            return Ok(InnerResult {
                m,
                slack,
                epsilon,
                iterations,
                standard_solves,
                trace,
                status,
            });
        }

        let theta = line_search(
            objective,
            &m,
            &step.target,
            &slack,
            &slack_step,
            lambda,
            penalty,
            config.theta_step,
        )?;
        trace.push(InnerStep {
            aug_lagrangian: aug,
            epsilon,
            measure_criterion,
            slack_criterion,
            theta: Some(theta),
        });
        m = m.mixture(&step.target, theta)?;
        for (s, ds) in slack.iter_mut().zip(&slack_step) {
            *s = (*s + theta * ds).max(0.0);
        }
        iterations += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OuterBranch {
    /// Residual within `η_k`: multiplier updated, tolerances tightened.
    Multiplier,
    /// Residual within `η_k` and `η_*`, `ε ≤ ω_*`: stop.
    Terminated,
    /// Residual above `η_k`: penalty raised, tolerances reset.
    Penalty,
}

#[derive(Debug, Clone, Serialize)]
pub struct OuterRecord {
    pub k: usize,
    /// `|G(m_{k+1}) + s_{k+1}|`.
    pub residual: f64,
    pub epsilon: f64,
    /// Parameters the inner loop ran with.
    pub penalty: f64,
    pub eta: f64,
    pub omega: f64,
    /// Multiplier after this iteration's update.
    pub lambda: Vec<f64>,
    pub inner_iterations: usize,
    pub branch: OuterBranch,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlmReport {
    pub eta_star: f64,
    pub omega_star: f64,
    pub outer: Vec<OuterRecord>,
    #[serde(skip)]
    pub inner_traces: Vec<Vec<InnerStep>>,
    /// Standard problems solved by the method, the final recovery solve included.
    pub standard_solves: usize,
    pub converged: bool,
    pub final_penalty: f64,
    pub lambda: Vec<f64>,
    /// `G` at the law generated by the recovered feedback.
    pub constraint_at_control: Vec<f64>,
    pub cost_at_control: f64,
    pub vi_residual: f64,
}

impl AlmReport {
    fn new(config: &AlmConfig) -> Self {
        Self {
            eta_star: config.eta_star,
            omega_star: config.omega_star,
            outer: Vec::new(),
            inner_traces: Vec::new(),
            standard_solves: 0,
            converged: false,
            final_penalty: config.initial_penalty,
            lambda: Vec::new(),
            constraint_at_control: Vec::new(),
            cost_at_control: f64::NAN,
            vi_residual: f64::NAN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlmSolution {
    pub feedback: ControlField,
    pub lambda: Vec<f64>,
    pub report: AlmReport,
    /// Last relaxed iterate `m_k` and its slack.
    pub state: AlmState,
    /// Recovery solve with terminal cost `DL(m_k, λ_k, ·)`.
    pub recovery: StandardSolution,
}

/// Runs the outer loop from `δ_{x0}`-style initial data already in `problem`,
/// with `s = 0` and `λ = 0`.
pub fn outer_loop(problem: &ControlProblem, config: &AlmConfig) -> Result<AlmSolution> {
    config.validate()?;
    let nc = problem.n_constraints();
    let c0 = config.initial_penalty;
    let mut state = AlmState {
        m: problem.initial.clone(),
        slack: vec![0.0; nc],
        lambda: vec![0.0; nc],
        penalty: c0,
        eta: config.eta_for(c0),
        omega: config.omega_for(c0),
        k: 0,
    };
    let mut report = AlmReport::new(config);

    loop {
        if state.k >= config.max_outer {
            report.lambda = state.lambda.clone();
            report.final_penalty = state.penalty;
            return Err(Error::NotConverged {
                reason: format!("outer loop reached {} iterations", config.max_outer),
                report: Box::new(report),
            });
        }
        let inner = inner_loop(
            problem,
            &state.m,
            &state.slack,
            &state.lambda,
            state.penalty,
            state.omega,
            config,
        )?;
        report.standard_solves += inner.standard_solves;
        report.inner_traces.push(inner.trace.clone());
        if inner.status == InnerStatus::IterationCap {
            report.lambda = state.lambda.clone();
            report.final_penalty = state.penalty;
            return Err(Error::NotConverged {
                reason: format!(
                    "inner loop reached {} iterations at outer iteration {} (ε = {:e}, ω = {:e})",
                    config.max_inner, state.k, inner.epsilon, state.omega
                ),
                report: Box::new(report),
            });
        }

        let g = problem.objective.constraint_values(&inner.m)?;
        let residual_vec: Vec<f64> = g.iter().zip(&inner.slack).map(|(g, s)| g + s).collect();
        let residual = residual_vec.iter().map(|r| r * r).sum::<f64>().sqrt();
        let (penalty, eta, omega) = (state.penalty, state.eta, state.omega);

        let threshold = match config.branch_test {
            BranchTest::Eta => eta,
            BranchTest::Omega => omega,
        };
        let branch = if residual <= threshold {
            for (l, r) in state.lambda.iter_mut().zip(&residual_vec) {
                *l += penalty * r;
            }
            if residual <= config.eta_star && inner.epsilon <= config.omega_star {
                OuterBranch::Terminated
            } else {
                state.eta = eta / config.eta_decay;
                state.omega = omega / config.omega_decay;
                if config.omega_floor {
                    state.omega = state.omega.max(config.omega_star);
                }
                OuterBranch::Multiplier
            }
        } else {
            state.penalty = penalty * config.penalty_growth;
            state.eta = config.eta_for(state.penalty);
            state.omega = config.omega_for(state.penalty);
            OuterBranch::Penalty
        };
        report.outer.push(OuterRecord {
            k: state.k,
            residual,
            epsilon: inner.epsilon,
            penalty,
            eta,
            omega,
            lambda: state.lambda.clone(),
            inner_iterations: inner.iterations,
            branch,
        });
        state.m = inner.m;
        state.slack = inner.slack;
        state.k += 1;
        if branch == OuterBranch::Terminated {
            break;
        }
    }

    let phi = problem.objective.lagrangian_rep(&state.m, &state.lambda)?;
    let recovery = problem.solve_standard(&phi)?;
    report.standard_solves += 1;
    report.converged = true;
    report.final_penalty = state.penalty;
    report.lambda = state.lambda.clone();
    report.constraint_at_control = problem.objective.constraint_values(&recovery.terminal)?;
    report.cost_at_control = problem.objective.cost_value(&recovery.terminal)?;
    report.vi_residual = diagnostics::vi_residual(problem, &recovery.terminal, &state.lambda)?;

    Ok(AlmSolution {
        feedback: recovery.feedback.clone(),
        lambda: state.lambda.clone(),
        report,
        state,
        recovery,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{AffineMap, MomentFunctional};
    use crate::lattice::{build_stencils, ControlledDrift, Grid, Lattice};
    use std::sync::Arc;

    fn problem(objective: impl Fn(&Grid) -> Objective) -> ControlProblem {
        problem_on(3.0, 0.4, objective)
    }

    fn problem_on(
        width: f64,
        horizon: f64,
        objective: impl Fn(&Grid) -> Objective,
    ) -> ControlProblem {
        let grid = Grid::with_spacing(-width, width, 0.02).unwrap();
        let lattice = Lattice::from_steps(grid, 0.02, horizon, -2.0, 2.0, 0.5).unwrap();
        let stencils = build_stencils(&lattice, &ControlledDrift::default()).unwrap();
        let initial = DiscreteMeasure::dirac(&grid, 0.0).unwrap();
        ControlProblem::new(stencils, initial, objective(&grid)).unwrap()
    }

    fn tc2(grid: &Grid) -> Objective {
        Objective::new(
            MomentFunctional::mean(grid),
            MomentFunctional::expectation_floor(grid, 0.4),
        )
        .unwrap()
    }

    /// `G ≡ 0` through a zero-weight affine map.
    fn unconstrained(grid: &Grid) -> Objective {
        let zero = MomentFunctional::new(
            vec![grid.sample(|_| 0.0)],
            Arc::new(AffineMap::new(vec![0.0], vec![0.0]).unwrap()),
            true,
        )
        .unwrap();
        Objective::new(MomentFunctional::mean(grid), zero).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(AlmConfig::default().validate().is_ok());
        let bad = AlmConfig {
            theta_step: 0.3,
            ..AlmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlmConfig {
            max_inner: 0,
            ..AlmConfig::default()
        };
        assert!(bad.validate().is_err());
        let c = AlmConfig::default();
        assert!((c.eta_for(10.0) - 10f64.powf(-0.1)).abs() < 1e-15);
        assert!((c.omega_for(10.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn line_search_grid_cases() {
        let grid = Grid::new(-1.0, 2.0, 4).unwrap();
        let d0 = DiscreteMeasure::dirac(&grid, 0.0).unwrap();
        let d1 = DiscreteMeasure::dirac(&grid, 1.0).unwrap();
        let none = MomentFunctional::new(
            vec![grid.sample(|_| 0.0)],
            Arc::new(AffineMap::new(vec![0.0], vec![0.0]).unwrap()),
            true,
        )
        .unwrap();

        // flat: tie broken towards θ = 0
        let flat = Objective::new(
            MomentFunctional::new(
                vec![grid.sample(|x| x)],
                Arc::new(AffineMap::new(vec![0.0], vec![1.0]).unwrap()),
                true,
            )
            .unwrap(),
            none.clone(),
        )
        .unwrap();
        let theta = line_search(&flat, &d0, &d1, &[0.0], &[0.0], &[0.0], 1.0, 0.1).unwrap();
        assert_eq!(theta, 0.0);

        // decreasing: mean moves from 0 to -1
        let dm = DiscreteMeasure::dirac(&grid, -1.0).unwrap();
        let mean = Objective::new(MomentFunctional::mean(&grid), none.clone()).unwrap();
        let theta = line_search(&mean, &d0, &dm, &[0.0], &[0.0], &[0.0], 1.0, 0.1).unwrap();
        assert_eq!(theta, 1.0);

        // c/2 (θ - 0.3)^2 through a constraint residual with zero slack
        let shifted = MomentFunctional::new(
            vec![grid.sample(|x| x)],
            Arc::new(AffineMap::new(vec![1.0], vec![-0.3]).unwrap()),
            true,
        )
        .unwrap();
        let quad = Objective::new(
            MomentFunctional::new(
                vec![grid.sample(|_| 0.0)],
                Arc::new(AffineMap::new(vec![0.0], vec![0.0]).unwrap()),
                true,
            )
            .unwrap(),
            shifted,
        )
        .unwrap();
        let theta = line_search(&quad, &d0, &d1, &[0.0], &[0.0], &[0.0], 10.0, 0.1).unwrap();
        assert!((theta - 0.3).abs() < 1e-12);
    }

    #[test]
    fn constant_representative_has_zero_gap() {
        // F ≡ mean, λ = 0 and c → G ≡ 0: representative x, but use a constant cost
        let p = problem(|grid| {
            let constant = MomentFunctional::new(
                vec![grid.sample(|_| 1.0)],
                Arc::new(AffineMap::new(vec![2.0], vec![0.0]).unwrap()),
                true,
            )
            .unwrap();
            Objective::new(constant, unconstrained(grid).constraints).unwrap()
        });
        let step = linearized_step(&p, &p.initial, &[0.0], &[0.0], 10.0).unwrap();
        assert!(step.gap.abs() < 1e-12);
    }

    #[test]
    fn optimal_point_has_zero_gap() {
        let p = problem(unconstrained);
        let first = linearized_step(&p, &p.initial, &[0.0], &[0.0], 10.0).unwrap();
        assert!(first.gap < -0.1);
        let again = linearized_step(&p, &first.target, &[0.0], &[0.0], 10.0).unwrap();
        assert!(again.gap.abs() < 1e-9);
    }

    #[test]
    fn linear_cost_converges_in_two_steps() {
        let p = problem(unconstrained);
        let config = AlmConfig::default();
        let res = inner_loop(&p, &p.initial, &[0.0], &[0.0], 10.0, 1e-8, &config).unwrap();
        assert_eq!(res.status, InnerStatus::Converged);
        assert!(res.iterations <= 2, "{} iterations", res.iterations);
        assert_eq!(res.trace[0].theta, Some(1.0));
    }

    #[test]
    fn immediate_return_when_already_optimal() {
        let p = problem(unconstrained);
        let config = AlmConfig::default();
        let first = linearized_step(&p, &p.initial, &[0.0], &[0.0], 10.0).unwrap();
        let res = inner_loop(&p, &first.target, &[0.0], &[0.0], 10.0, 1e-6, &config).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.standard_solves, 1);
        assert!(res.trace[0].theta.is_none());
    }

    #[test]
    fn inner_loop_descends_with_feasible_slack() {
        let p = problem(tc2);
        let config = AlmConfig::default();
        let res = inner_loop(&p, &p.initial, &[0.0], &[0.0], 10.0, 1e-4, &config).unwrap();
        assert_eq!(res.status, InnerStatus::Converged);
        for pair in res.trace.windows(2) {
            assert!(pair[1].aug_lagrangian <= pair[0].aug_lagrangian);
            assert!(pair[1].aug_lagrangian < pair[0].aug_lagrangian);
        }
        for step in &res.trace {
            assert!(
                (step.epsilon - step.measure_criterion.max(step.slack_criterion)).abs() < 1e-15
            );
        }
        assert!(res.slack.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let p = problem(tc2);
        let config = AlmConfig {
            max_inner: 1,
            ..AlmConfig::default()
        };
        let res = inner_loop(&p, &p.initial, &[0.0], &[0.0], 10.0, 1e-12, &config).unwrap();
        assert_eq!(res.status, InnerStatus::IterationCap);
        assert_eq!(res.iterations, 1);

        let err = outer_loop(&p, &config).unwrap_err();
        match err {
            Error::NotConverged { report, .. } => assert!(!report.inner_traces.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_slack_rejected() {
        let p = problem(tc2);
        let config = AlmConfig::default();
        assert!(inner_loop(&p, &p.initial, &[-1.0], &[0.0], 10.0, 1e-3, &config).is_err());
    }

    #[test]
    fn outer_loop_small_tc2() {
        // at T = 1 the floor binds: u ≡ -2 would leave E[exp(-X²)] near 0.15
        let p = problem_on(5.0, 1.0, tc2);
        let sol = outer_loop(&p, &AlmConfig::with_tolerance(1e-4)).unwrap();
        let report = &sol.report;
        assert!(report.converged);
        assert!(report.vi_residual.abs() < 1e-9);
        let last = report.outer.last().unwrap();
        assert_eq!(last.branch, OuterBranch::Terminated);
        assert!(last.residual <= 1e-4 && last.epsilon <= 1e-4);
        assert!(sol.lambda[0] > 0.0);
        for w in report.outer.windows(2) {
            assert!(w[1].penalty >= w[0].penalty);
        }
        for rec in &report.outer {
            if rec.branch == OuterBranch::Penalty {
                assert!(rec.residual > rec.eta);
            }
        }
        assert!(sol.state.slack.iter().all(|s| *s >= 0.0));
    }
}
