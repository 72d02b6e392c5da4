//! Space/time/control discretization of a scalar controlled SDE
//! `dX = b(X,u) dt + σ(X,u) dW` into a controlled Markov chain.
//!
//! Each (node, control) pair gets a two-branch stencil: the successor points
//! `x + b·dt ± σ·√dt` carry probability ½ each, are folded back into the domain
//! at the reflecting boundaries, and are then split onto their two neighbouring
//! nodes by linear interpolation. The result is monotone and row-stochastic.

use crate::error::{Error, Result};

/// Fractional offsets closer than this (in units of `dx`) to a node snap onto it.
const SNAP: f64 = 1e-10;

/// Uniform 1-D spatial grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    nx: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, nx: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::Config(format!(
                "grid bounds must satisfy x_min < x_max (got {x_min}, {x_max})"
            )));
        }
        if nx < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 nodes (got {nx})"
            )));
        }
        Ok(Self { x_min, x_max, nx })
    }

    /// Builds a grid from a spacing, requiring `(x_max - x_min)/dx` to be integral.
    pub fn with_spacing(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::Config(format!("dx must be positive (got {dx})")));
        }
        let cells = (x_max - x_min) / dx;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::Config(format!(
                "(x_max - x_min)/dx = {cells} is not an integer"
            )));
        }
        Self::new(x_min, x_max, rounded as usize + 1)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.nx == 0
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + j as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.node(j)).collect()
    }

    /// Samples `f` on every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.nx).map(|j| f(self.node(j))).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Left node index and interpolation weight of the right neighbour for a
    /// point inside the grid. A point on a node returns weight 0.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let pos = (x - self.x_min) / self.dx();
        let mut i = pos.floor();
        let mut frac = pos - i;
        if frac < SNAP {
            frac = 0.0;
        } else if frac > 1.0 - SNAP {
            i += 1.0;
            frac = 0.0;
        }
        let last = (self.nx - 1) as f64;
        if i >= last {
            return (self.nx - 1, 0.0);
        }
        if i < 0.0 {
            return (0, 0.0);
        }
        (i as usize, frac)
    }

    /// Nearest node index, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let pos = ((x - self.x_min) / self.dx()).round();
        pos.clamp(0.0, (self.nx - 1) as f64) as usize
    }

    /// Folds a point back into `[x_min, x_max]` once at either boundary.
    /// Returns `None` if a single fold is not enough.
    pub fn reflect(&self, y: f64) -> Option<f64> {
        let folded = if y < self.x_min {
            2.0 * self.x_min - y
        } else if y > self.x_max {
            2.0 * self.x_max - y
        } else {
            y
        };
        self.contains(folded).then_some(folded)
    }
}

/// Full discretization: spatial grid, time step, horizon and control set.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    grid: Grid,
    dt: f64,
    nt: usize,
    controls: Vec<f64>,
}

impl Lattice {
    pub fn new(grid: Grid, dt: f64, nt: usize, mut controls: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive (got {dt})")));
        }
        if nt == 0 {
            return Err(Error::Config("need at least one time step".into()));
        }
        if controls.is_empty() {
            return Err(Error::Config("control set is empty".into()));
        }
        if controls.iter().any(|u| !u.is_finite()) {
            return Err(Error::Config("control values must be finite".into()));
        }
        controls.sort_by(f64::total_cmp);
        controls.dedup();
        Ok(Self {
            grid,
            dt,
            nt,
            controls,
        })
    }

    /// Lattice from step sizes: horizon `t_final` must be a multiple of `dt`
    /// and the control interval a multiple of `du`.
    pub fn from_steps(
        grid: Grid,
        dt: f64,
        t_final: f64,
        u_min: f64,
        u_max: f64,
        du: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive (got {dt})")));
        }
        if !(t_final > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive (got {t_final})"
            )));
        }
        let steps = t_final / dt;
        let nt = steps.round();
        if (steps - nt).abs() > 1e-9 * nt.max(1.0) || nt < 1.0 {
            return Err(Error::Config(format!(
                "horizon/dt = {steps} is not a positive integer"
            )));
        }
        Self::new(grid, dt, nt as usize, control_grid(u_min, u_max, du)?)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }
}

/// `{u_min, u_min + du, ..., u_max}`.
pub fn control_grid(u_min: f64, u_max: f64, du: f64) -> Result<Vec<f64>> {
    if u_max < u_min {
        return Err(Error::Config(format!(
            "u_min {u_min} exceeds u_max {u_max}"
        )));
    }
    if u_max == u_min {
        return Ok(vec![u_min]);
    }
    if !(du > 0.0) {
        return Err(Error::Config(format!("du must be positive (got {du})")));
    }
    let cells = (u_max - u_min) / du;
    let n = cells.round();
    if (cells - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::Config(format!(
            "(u_max - u_min)/du = {cells} is not an integer"
        )));
    }
    let n = n as usize;
    Ok((0..=n)
        .map(|i| {
            if i == n {
                u_max
            } else {
                // Round off representation noise so that e.g. -2 + 20*0.1 is 0.
                let u = u_min + i as f64 * du;
                (u * 1e12).round() / 1e12
            }
        })
        .collect())
}

/// Drift and volatility of a scalar controlled diffusion.
pub trait Dynamics: Send + Sync {
    fn drift(&self, x: f64, u: f64) -> f64;
    fn volatility(&self, x: f64, u: f64) -> f64;
}

/// `dX = u dt + σ dW`.
#[derive(Debug, Clone, Copy)]
pub struct ControlledDrift {
    pub sigma: f64,
}

impl Default for ControlledDrift {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

impl Dynamics for ControlledDrift {
    fn drift(&self, _x: f64, u: f64) -> f64 {
        u
    }

    fn volatility(&self, _x: f64, _u: f64) -> f64 {
        self.sigma
    }
}

/// Dynamics given by two closures.
pub struct FnDynamics<B, S> {
    pub drift: B,
    pub volatility: S,
}

impl<B, S> Dynamics for FnDynamics<B, S>
where
    B: Fn(f64, f64) -> f64 + Send + Sync,
    S: Fn(f64, f64) -> f64 + Send + Sync,
{
    fn drift(&self, x: f64, u: f64) -> f64 {
        (self.drift)(x, u)
    }

    fn volatility(&self, x: f64, u: f64) -> f64 {
        (self.volatility)(x, u)
    }
}

/// Largest sampled Lipschitz ratio of `b` and `σ` over neighbouring nodes
/// (in `x`) and neighbouring controls (in `u`). Errors if it exceeds `k`.
pub fn check_lipschitz(dynamics: &dyn Dynamics, lattice: &Lattice, k: f64) -> Result<f64> {
    let grid = lattice.grid();
    let controls = lattice.controls();
    let mut worst: f64 = 0.0;
    for &u in controls {
        for j in 0..grid.len() - 1 {
            let (x, y) = (grid.node(j), grid.node(j + 1));
            let diff = (dynamics.drift(x, u) - dynamics.drift(y, u)).abs()
                + (dynamics.volatility(x, u) - dynamics.volatility(y, u)).abs();
            worst = worst.max(diff / (y - x));
        }
    }
    for pair in controls.windows(2) {
        for j in 0..grid.len() {
            let x = grid.node(j);
            let diff = (dynamics.drift(x, pair[0]) - dynamics.drift(x, pair[1])).abs()
                + (dynamics.volatility(x, pair[0]) - dynamics.volatility(x, pair[1])).abs();
            worst = worst.max(diff / (pair[1] - pair[0]));
        }
    }
    if !worst.is_finite() || worst > k {
        return Err(Error::Config(format!(
            "dynamics are not Lipschitz with modulus {k} on the grid (sampled ratio {worst})"
        )));
    }
    Ok(worst)
}

/// Number of (node, probability) entries per stencil row.
pub const STENCIL_WIDTH: usize = 4;

/// Precomputed transition rows for every (node, control) pair.
///
/// Rows are laid out node-major: row `j * n_controls + a` holds
/// [`STENCIL_WIDTH`] successor entries. Unused entries carry probability 0.
#[derive(Debug, Clone)]
pub struct StencilTable {
    lattice: Lattice,
    index: Vec<u32>,
    prob: Vec<f64>,
}

impl StencilTable {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn grid(&self) -> &Grid {
        self.lattice.grid()
    }

    pub fn n_controls(&self) -> usize {
        self.lattice.controls().len()
    }

    /// Successor entries of node `j` under control index `a`.
    pub fn row(&self, j: usize, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = (j * self.n_controls() + a) * STENCIL_WIDTH;
        self.index[start..start + STENCIL_WIDTH]
            .iter()
            .zip(&self.prob[start..start + STENCIL_WIDTH])
            .map(|(&i, &p)| (i as usize, p))
    }

    /// `Σ p · values[succ]` for one row.
    #[inline]
    pub fn expectation(&self, j: usize, a: usize, values: &[f64]) -> f64 {
        let start = (j * self.n_controls() + a) * STENCIL_WIDTH;
        let idx = &self.index[start..start + STENCIL_WIDTH];
        let p = &self.prob[start..start + STENCIL_WIDTH];
        p[0] * values[idx[0] as usize]
            + p[1] * values[idx[1] as usize]
            + p[2] * values[idx[2] as usize]
            + p[3] * values[idx[3] as usize]
    }
}

/// Builds the transition table of the controlled Markov chain.
pub fn build_stencils(lattice: &Lattice, dynamics: &dyn Dynamics) -> Result<StencilTable> {
    let grid = *lattice.grid();
    let nx = grid.len();
    let na = lattice.controls().len();
    if nx > u32::MAX as usize {
        return Err(Error::Config(format!("grid of {nx} nodes is too large")));
    }
    let width = grid.x_max() - grid.x_min();
    let dt = lattice.dt();
    let sqrt_dt = dt.sqrt();
    let mut index = vec![0u32; nx * na * STENCIL_WIDTH];
    let mut prob = vec![0f64; nx * na * STENCIL_WIDTH];

    for j in 0..nx {
        let x = grid.node(j);
        for (a, &u) in lattice.controls().iter().enumerate() {
            let b = dynamics.drift(x, u);
            let sigma = dynamics.volatility(x, u);
            if !b.is_finite() || !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::Config(format!(
                    "invalid coefficients at x={x}, u={u}: b={b}, sigma={sigma}"
                )));
            }
            if b.abs() * dt + sigma * sqrt_dt > width {
                return Err(Error::Config(format!(
                    "one step at x={x}, u={u} spans more than the domain; reflection would fold twice"
                )));
            }
            let base = (j * na + a) * STENCIL_WIDTH;
            for (branch, sign) in [-1.0, 1.0].into_iter().enumerate() {
                let y = x + b * dt + sign * sigma * sqrt_dt;
                let y = grid.reflect(y).ok_or_else(|| {
                    Error::Config(format!(
                        "successor {y} of x={x}, u={u} cannot be reflected into the grid"
                    ))
                })?;
                let (i, frac) = grid.locate(y);
                let e = base + 2 * branch;
                index[e] = i as u32;
                prob[e] = 0.5 * (1.0 - frac);
                index[e + 1] = if frac > 0.0 { (i + 1) as u32 } else { i as u32 };
                prob[e + 1] = 0.5 * frac;
            }
        }
    }
    Ok(StencilTable {
        lattice: lattice.clone(),
        index,
        prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_drift_lattice(x_min: f64, x_max: f64, dx: f64) -> Lattice {
        let grid = Grid::with_spacing(x_min, x_max, dx).unwrap();
        Lattice::from_steps(grid, 0.01, 1.0, -2.0, 2.0, 0.1).unwrap()
    }

    #[test]
    fn control_grid_is_clean() {
        let u = control_grid(-2.0, 2.0, 0.1).unwrap();
        assert_eq!(u.len(), 41);
        assert_eq!(u[0], -2.0);
        assert_eq!(u[20], 0.0);
        assert_eq!(u[40], 2.0);
        assert!(control_grid(-2.0, 2.0, 0.3).is_err());
    }

    #[test]
    fn lattice_rejects_bad_steps() {
        let grid = Grid::with_spacing(-1.0, 1.0, 0.5).unwrap();
        assert!(Lattice::from_steps(grid, 0.0, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(Lattice::from_steps(grid, 0.3, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(Grid::with_spacing(-1.0, 1.0, 0.3).is_err());
        assert!(Grid::with_spacing(1.0, -1.0, 0.5).is_err());
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let lattice = unit_drift_lattice(-1.0, 1.0, 0.1);
        let frozen = FnDynamics {
            drift: |_, _| 0.0,
            volatility: |_, _| 0.0,
        };
        let table = build_stencils(&lattice, &frozen).unwrap();
        for j in 0..lattice.grid().len() {
            for a in 0..table.n_controls() {
                let mass: f64 = table
                    .row(j, a)
                    .filter(|&(i, _)| i == j)
                    .map(|(_, p)| p)
                    .sum();
                assert_eq!(mass, 1.0);
            }
        }
    }

    #[test]
    fn successors_land_on_nodes() {
        // x=0, u=2: y± = 0.02 ± 0.1, i.e. nodes 0.12 and -0.08 on the δx=1e-3 grid
        let lattice = unit_drift_lattice(-5.0, 5.0, 1e-3);
        let table = build_stencils(&lattice, &ControlledDrift::default()).unwrap();
        let grid = lattice.grid();
        let j = grid.nearest(0.0);
        assert_eq!(grid.node(j), 0.0);
        let a = lattice.controls().iter().position(|&u| u == 2.0).unwrap();
        let mut hits: Vec<(f64, f64)> = table
            .row(j, a)
            .filter(|&(_, p)| p > 0.0)
            .map(|(i, p)| (grid.node(i), p))
            .collect();
        hits.sort_by(|l, r| l.0.total_cmp(&r.0));
        assert_eq!(hits.len(), 2);
        assert!((hits[0].0 + 0.08).abs() < 1e-12);
        assert!((hits[1].0 - 0.12).abs() < 1e-12);
        assert_eq!(hits[0].1, 0.5);
        assert_eq!(hits[1].1, 0.5);
    }

    #[test]
    fn boundary_rows_stay_inside() {
        let lattice = unit_drift_lattice(-5.0, 5.0, 1e-2);
        let table = build_stencils(&lattice, &ControlledDrift::default()).unwrap();
        let a = 0; // u = -2
        let mut total = 0.0;
        for (i, p) in table.row(0, a) {
            assert!(i < lattice.grid().len());
            total += p;
        }
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rows_are_stochastic_and_consistent() {
        let lattice = unit_drift_lattice(-3.0, 3.0, 0.0125);
        let dynamics = FnDynamics {
            drift: |x: f64, u: f64| u - 0.3 * x,
            volatility: |x: f64, _| 0.8 + 0.1 * x.sin(),
        };
        let table = build_stencils(&lattice, &dynamics).unwrap();
        let grid = lattice.grid();
        let dx = grid.dx();
        let dt = lattice.dt();
        for j in 0..grid.len() {
            let x = grid.node(j);
            for (a, &u) in lattice.controls().iter().enumerate() {
                let total: f64 = table.row(j, a).map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-14);
                let reach = (u - 0.3 * x).abs() * dt + 0.9 * dt.sqrt() + dx;
                if x - reach <= grid.x_min() || x + reach >= grid.x_max() {
                    continue;
                }
                let mean: f64 = table.row(j, a).map(|(i, p)| p * grid.node(i)).sum();
                let var: f64 = table
                    .row(j, a)
                    .map(|(i, p)| p * (grid.node(i) - mean).powi(2))
                    .sum();
                let b = dynamics.drift(x, u);
                let s = dynamics.volatility(x, u);
                assert!((mean - (x + b * dt)).abs() < 1e-12, "mean at x={x}, u={u}");
                assert!(
                    (var - s * s * dt).abs() <= 2.0 * dx * dx,
                    "variance at x={x}, u={u}"
                );
            }
        }
    }

    #[test]
    fn oversized_steps_are_rejected() {
        let grid = Grid::with_spacing(-0.1, 0.1, 0.05).unwrap();
        let lattice = Lattice::from_steps(grid, 0.25, 0.5, -1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            build_stencils(&lattice, &ControlledDrift::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn lipschitz_check() {
        let lattice = unit_drift_lattice(-1.0, 1.0, 0.1);
        let ratio = check_lipschitz(&ControlledDrift::default(), &lattice, 2.0).unwrap();
        assert!((ratio - 1.0).abs() < 1e-9);
        let steep = FnDynamics {
            drift: |x: f64, _| 50.0 * x,
            volatility: |_, _| 1.0,
        };
        assert!(check_lipschitz(&steep, &lattice, 10.0).is_err());
    }

    #[test]
    fn reflection_folds_once() {
        let grid = Grid::new(-1.0, 1.0, 21).unwrap();
        assert_eq!(grid.reflect(-1.25), Some(-0.75));
        assert_eq!(grid.reflect(1.5), Some(0.5));
        assert_eq!(grid.reflect(3.5), None);
    }
}
