//! Functionals of the form `F(m) = Ψ(∫φ₁ dm, ..., ∫φ_K dm)`, their derivative
//! representatives, and the (augmented) Lagrangian built from a cost and
//! a vector of inequality constraints `G(m) ≤ 0`.
//!
//! A derivative representative is the grid function
//! `x ↦ DΨ(y(m)) · φ(x)`, defined up to an additive constant. It is used raw;
//! every consumer (moment differences, argmin of a standard problem) is
//! invariant under constant shifts.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::measure::{dot, DiscreteMeasure};

/// The outer map `Ψ: R^K → R^q` with its Jacobian.
pub trait MomentMap: Send + Sync {
    fn inputs(&self) -> usize;
    fn outputs(&self) -> usize;
    fn eval(&self, moments: &[f64], out: &mut [f64]);
    /// Row-major `q × K` Jacobian.
    fn jacobian(&self, moments: &[f64], out: &mut [f64]);
}

/// `Ψ(y) = A y + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    inputs: usize,
}

impl AffineMap {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let q = offset.len();
        if q == 0 || !matrix.len().is_multiple_of(q) || matrix.is_empty() {
            return Err(Error::Shape("affine map dimensions do not agree".into()));
        }
        let inputs = matrix.len() / q;
        Ok(Self {
            matrix,
            offset,
            inputs,
        })
    }
}

impl MomentMap for AffineMap {
    fn inputs(&self) -> usize {
        self.inputs
    }

    fn outputs(&self) -> usize {
        self.offset.len()
    }

    fn eval(&self, moments: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * self.inputs..(i + 1) * self.inputs];
            *o = dot(row, moments) + self.offset[i];
        }
    }

    fn jacobian(&self, _moments: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }
}

/// `Ψ(y₁, y₂) = y₂ - y₁² - α`: variance minus a cap, from moments of `x` and `x²`.
#[derive(Debug, Clone, Copy)]
pub struct VarianceMinus {
    pub alpha: f64,
}

impl MomentMap for VarianceMinus {
    fn inputs(&self) -> usize {
        2
    }

    fn outputs(&self) -> usize {
        1
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[1] - y[0] * y[0] - self.alpha;
    }

    fn jacobian(&self, y: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * y[0];
        out[1] = 1.0;
    }
}

/// `Ψ(∫φ dm)` with node-sampled integrands.
#[derive(Clone)]
pub struct MomentFunctional {
    integrands: Vec<Vec<f64>>,
    map: Arc<dyn MomentMap>,
    convex: bool,
}

impl fmt::Debug for MomentFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentFunctional")
            .field("inputs", &self.integrands.len())
            .field("outputs", &self.map.outputs())
            .field("convex", &self.convex)
            .finish()
    }
}

impl MomentFunctional {
    /// `convex` declares that every output component is convex in `m`.
    pub fn new(integrands: Vec<Vec<f64>>, map: Arc<dyn MomentMap>, convex: bool) -> Result<Self> {
        if integrands.len() != map.inputs() {
            return Err(Error::Shape(format!(
                "{} integrands for a map with {} inputs",
                integrands.len(),
                map.inputs()
            )));
        }
        if let Some(first) = integrands.first() {
            if integrands.iter().any(|f| f.len() != first.len()) {
                return Err(Error::Shape("integrands have different lengths".into()));
            }
        }
        if integrands.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(
                "integrand is not finite on the grid".into(),
            ));
        }
        Ok(Self {
            integrands,
            map,
            convex,
        })
    }

    /// Samples integrand closures on the grid.
    pub fn sampled(
        grid: &Grid,
        integrands: &[&dyn Fn(f64) -> f64],
        map: Arc<dyn MomentMap>,
        convex: bool,
    ) -> Result<Self> {
        let sampled = integrands.iter().map(|f| grid.sample(f)).collect();
        Self::new(sampled, map, convex)
    }

    /// `m ↦ ∫ x dm`.
    pub fn mean(grid: &Grid) -> Self {
        let map = AffineMap::new(vec![1.0], vec![0.0]).expect("1x1 map");
        Self::new(vec![grid.sample(|x| x)], Arc::new(map), true).expect("valid mean functional")
    }

    /// `m ↦ Var(m) - α`. Concave in `m`, so not declared convex.
    pub fn variance_cap(grid: &Grid, alpha: f64) -> Self {
        Self::new(
            vec![grid.sample(|x| x), grid.sample(|x| x * x)],
            Arc::new(VarianceMinus { alpha }),
            false,
        )
        .expect("valid variance functional")
    }

    /// `m ↦ α - ∫ e^{-x²} dm`.
    pub fn expectation_floor(grid: &Grid, alpha: f64) -> Self {
        let map = AffineMap::new(vec![-1.0], vec![alpha]).expect("1x1 map");
        Self::new(vec![grid.sample(|x| (-x * x).exp())], Arc::new(map), true)
            .expect("valid expectation functional")
    }

    pub fn inputs(&self) -> usize {
        self.integrands.len()
    }

    pub fn outputs(&self) -> usize {
        self.map.outputs()
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn integrands(&self) -> &[Vec<f64>] {
        &self.integrands
    }

    pub fn moments(&self, m: &DiscreteMeasure) -> Result<Vec<f64>> {
        self.integrands.iter().map(|phi| m.moment(phi)).collect()
    }

    /// `Ψ` at a precomputed moment vector.
    pub fn eval_moments(&self, moments: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.outputs()];
        self.map.eval(moments, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "functional is not finite: {out:?}"
            )));
        }
        Ok(out)
    }

    /// Allocation-free evaluation for hot loops; no finiteness check.
    pub(crate) fn eval_into(&self, moments: &[f64], out: &mut [f64]) {
        self.map.eval(moments, out);
    }

    pub fn eval(&self, m: &DiscreteMeasure) -> Result<Vec<f64>> {
        self.eval_moments(&self.moments(m)?)
    }

    /// One grid function per output component.
    pub fn derivative_rep(&self, m: &DiscreteMeasure) -> Result<Vec<Vec<f64>>> {
        let moments = self.moments(m)?;
        let k = self.inputs();
        let q = self.outputs();
        let mut jac = vec![0.0; q * k];
        self.map.jacobian(&moments, &mut jac);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("derivative is not finite".into()));
        }
        let n = m.weights().len();
        Ok((0..q)
            .map(|i| {
                let mut rep = vec![0.0; n];
                for (coef, phi) in jac[i * k..(i + 1) * k].iter().zip(&self.integrands) {
                    if *coef != 0.0 {
                        rep.iter_mut().zip(phi).for_each(|(r, p)| *r += coef * p);
                    }
                }
                rep
            })
            .collect())
    }
}

/// Cost `F` (one output) and constraints `G` (N outputs), `G(m) ≤ 0`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub cost: MomentFunctional,
    pub constraints: MomentFunctional,
}

impl Objective {
    pub fn new(cost: MomentFunctional, constraints: MomentFunctional) -> Result<Self> {
        if cost.outputs() != 1 {
            return Err(Error::Shape(format!(
                "cost must be scalar, has {} outputs",
                cost.outputs()
            )));
        }
        Ok(Self { cost, constraints })
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.outputs()
    }

    pub fn cost_value(&self, m: &DiscreteMeasure) -> Result<f64> {
        Ok(self.cost.eval(m)?[0])
    }

    pub fn constraint_values(&self, m: &DiscreteMeasure) -> Result<Vec<f64>> {
        self.constraints.eval(m)
    }

    /// `DF(m,·) + Σ λᵢ DGᵢ(m,·)`.
    pub fn lagrangian_rep(&self, m: &DiscreteMeasure, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check_len(lambda, "multiplier")?;
        let mut rep = self.cost.derivative_rep(m)?.swap_remove(0);
        if lambda.iter().any(|&l| l != 0.0) {
            for (l, dg) in lambda.iter().zip(self.constraints.derivative_rep(m)?) {
                rep.iter_mut().zip(&dg).for_each(|(r, g)| *r += l * g);
            }
        }
        Ok(rep)
    }

    /// `F(m) + ⟨λ, G(m)+s⟩ + (c/2)|G(m)+s|²`.
    pub fn aug_lagrangian(
        &self,
        m: &DiscreteMeasure,
        slack: &[f64],
        lambda: &[f64],
        penalty: f64,
    ) -> Result<f64> {
        let f = self.cost_value(m)?;
        let g = self.constraint_values(m)?;
        self.check_len(slack, "slack")?;
        self.check_len(lambda, "multiplier")?;
        Ok(aug_lagrangian_value(f, &g, slack, lambda, penalty))
    }

    /// `λ + c(G(m)+s)`, the multiplier seen by the derivative of `L_A`.
    pub fn effective_multiplier(
        &self,
        m: &DiscreteMeasure,
        slack: &[f64],
        lambda: &[f64],
        penalty: f64,
    ) -> Result<Vec<f64>> {
        self.slack_gradient(m, slack, lambda, penalty)
    }

    /// `DL(m, λ + c(G(m)+s), ·)`.
    pub fn aug_lagrangian_rep(
        &self,
        m: &DiscreteMeasure,
        slack: &[f64],
        lambda: &[f64],
        penalty: f64,
    ) -> Result<Vec<f64>> {
        let effective = self.effective_multiplier(m, slack, lambda, penalty)?;
        self.lagrangian_rep(m, &effective)
    }

    /// `∇_s L_A = λ + c(G(m)+s)`.
    pub fn slack_gradient(
        &self,
        m: &DiscreteMeasure,
        slack: &[f64],
        lambda: &[f64],
        penalty: f64,
    ) -> Result<Vec<f64>> {
        self.check_len(slack, "slack")?;
        self.check_len(lambda, "multiplier")?;
        let g = self.constraint_values(m)?;
        Ok(slack_gradient_from(&g, slack, lambda, penalty))
    }

    fn check_len(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.n_constraints() {
            return Err(Error::Shape(format!(
                "{what} has {} entries for {} constraints",
                v.len(),
                self.n_constraints()
            )));
        }
        Ok(())
    }
}

pub(crate) fn aug_lagrangian_value(
    cost: f64,
    g: &[f64],
    slack: &[f64],
    lambda: &[f64],
    penalty: f64,
) -> f64 {
    let mut linear = 0.0;
    let mut square = 0.0;
    for ((gi, si), li) in g.iter().zip(slack).zip(lambda) {
        let r = gi + si;
        linear += li * r;
        square += r * r;
    }
    cost + linear + 0.5 * penalty * square
}

pub(crate) fn slack_gradient_from(
    g: &[f64],
    slack: &[f64],
    lambda: &[f64],
    penalty: f64,
) -> Vec<f64> {
    g.iter()
        .zip(slack)
        .zip(lambda)
        .map(|((gi, si), li)| li + penalty * (gi + si))
        .collect()
}
