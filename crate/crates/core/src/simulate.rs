//! Monte-Carlo paths of the controlled SDE and the delay-and-branch
//! construction showing that mixtures of reachable laws are (nearly) reachable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dp::ControlField;
use crate::error::{Error, Result};
use crate::lattice::{Dynamics, Grid, Lattice};
use crate::measure::empirical_wasserstein1;

const BATCH: usize = 1024;

/// Terminal samples of an Euler-Maruyama ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub terminal_samples: Vec<f64>,
    /// Empirical `E[sup_t |X_t|²]`.
    pub sup_second_moment: f64,
}

impl PathEnsemble {
    pub fn sorted_samples(&self) -> Vec<f64> {
        let mut s = self.terminal_samples.clone();
        s.sort_by(f64::total_cmp);
        s
    }

    pub fn mean(&self) -> f64 {
        self.terminal_samples.iter().sum::<f64>() / self.n_paths as f64
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.terminal_samples
            .iter()
            .map(|x| (x - mu) * (x - mu))
            .sum::<f64>()
            / self.n_paths as f64
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x")?;
        for x in &self.terminal_samples {
            writeln!(out, "{x}")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn batch_rng(seed: u64, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch as u64);
    rng
}

/// Reflects into the grid; a second fold (only possible for huge steps) clamps.
fn reflect(grid: &Grid, y: f64) -> f64 {
    grid.reflect(y)
        .unwrap_or_else(|| y.clamp(grid.x_min(), grid.x_max()))
}

fn euler_step(dynamics: &dyn Dynamics, grid: &Grid, x: f64, u: f64, h: f64, z: f64) -> f64 {
    let y = x + dynamics.drift(x, u) * h + dynamics.volatility(x, u) * h.sqrt() * z;
    reflect(grid, y)
}

/// Paths under `feedback`, reading the control at the nearest node.
pub fn simulate_feedback(
    dynamics: &dyn Dynamics,
    lattice: &Lattice,
    feedback: &ControlField,
    x0: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::Input("need at least one path".into()));
    }
    let grid = *lattice.grid();
    if feedback.grid() != &grid || feedback.steps() != lattice.steps() {
        return Err(Error::Shape("feedback does not match the lattice".into()));
    }
    if !grid.contains(x0) {
        return Err(Error::Domain(format!(
            "initial point {x0} is outside the grid"
        )));
    }
    let dt = lattice.dt();
    let batches: Vec<(Vec<f64>, f64)> = (0..n_paths.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut rng = batch_rng(seed, b);
            let size = BATCH.min(n_paths - b * BATCH);
            let mut terminal = Vec::with_capacity(size);
            let mut sup_sq = 0.0;
            for _ in 0..size {
                let mut x = x0;
                let mut sup = x.abs();
                for t in 0..lattice.steps() {
                    let u = feedback.value(t, grid.nearest(x));
                    let z: f64 = rng.sample(StandardNormal);
                    x = euler_step(dynamics, &grid, x, u, dt, z);
                    sup = sup.max(x.abs());
                }
                terminal.push(x);
                sup_sq += sup * sup;
            }
            (terminal, sup_sq)
        })
        .collect();
    let mut terminal_samples = Vec::with_capacity(n_paths);
    let mut sup_sq = 0.0;
    for (t, s) in batches {
        terminal_samples.extend(t);
        sup_sq += s;
    }
    Ok(PathEnsemble {
        n_paths,
        dt_sim: dt,
        seed,
        terminal_samples,
        sup_second_moment: sup_sq / n_paths as f64,
    })
}

/// Branch of the delay-and-branch control for a given scaled increment.
#[derive(Debug, Clone)]
struct BranchCells {
    upper: Vec<f64>,
}

impl BranchCells {
    /// Standard-normal quantiles `r_k` with `P[r_{k-1} < Z < r_k] = θ_k`.
    fn new(weights: &[f64]) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let mut acc = 0.0;
        let mut upper = Vec::with_capacity(weights.len());
        for (k, w) in weights.iter().enumerate() {
            acc += w;
            upper.push(if k + 1 == weights.len() {
                f64::INFINITY
            } else {
                normal.inverse_cdf(acc)
            });
        }
        Self { upper }
    }

    fn branch(&self, z: f64) -> usize {
        self.upper
            .iter()
            .position(|&r| z < r)
            .unwrap_or(self.upper.len() - 1)
    }
}

#[derive(Debug, Clone)]
pub struct BranchingOutcome {
    pub epsilon: f64,
    /// Empirical W1 between the delay-and-branch law and the θ-mixture.
    pub d1: f64,
    pub branch_counts: Vec<usize>,
    pub n_paths: usize,
}

/// Delay-and-branch control `u^ε`: constant `u0` on `[0, ε]`, then the
/// feedback of branch `k` delayed by `ε`, where `k` is the cell of
/// `W_ε/√ε` under standard-normal quantiles of the weights.
///
/// The reference mixture is sampled on the same paths after `ε` but with
/// branch-independent increments, so both samples are coupled and the
/// distance estimate has low variance.
#[allow(clippy::too_many_arguments)]
pub fn branching_demo(
    dynamics: &dyn Dynamics,
    lattice: &Lattice,
    controls: &[ControlField],
    weights: &[f64],
    epsilon: f64,
    u0: f64,
    x0: f64,
    n_paths: usize,
    seed: u64,
) -> Result<BranchingOutcome> {
    if controls.is_empty() || controls.len() != weights.len() {
        return Err(Error::Input("need one weight per branch control".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Input("branch weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!(
            "branch weights sum to {total}, not 1"
        )));
    }
    let horizon = lattice.horizon();
    if !(epsilon > 0.0 && epsilon < horizon) {
        return Err(Error::Input(format!(
            "delay {epsilon} must lie in (0, {horizon})"
        )));
    }
    if n_paths == 0 {
        return Err(Error::Input("need at least one path".into()));
    }
    let grid = *lattice.grid();
    if controls
        .iter()
        .any(|c| c.grid() != &grid || c.steps() != lattice.steps())
    {
        return Err(Error::Shape(
            "branch control does not match the lattice".into(),
        ));
    }
    if !grid.contains(x0) {
        return Err(Error::Domain(format!(
            "initial point {x0} is outside the grid"
        )));
    }

    let dt = lattice.dt();
    let nt = lattice.steps();
    let cells = BranchCells::new(weights);
    let first_steps = ((epsilon / dt) - 1e-9).ceil().max(1.0) as usize;
    let first_h = epsilon / first_steps as f64;
    let rest = horizon - epsilon;
    let rest_steps = ((rest / dt) - 1e-9).ceil().max(1.0) as usize;

    let batches: Vec<Vec<(f64, f64, usize)>> = (0..n_paths.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut rng = batch_rng(seed, b);
            let size = BATCH.min(n_paths - b * BATCH);
            let mut out = Vec::with_capacity(size);
            let mut z_rest = vec![0.0; rest_steps];
            for _ in 0..size {
                let mut x = x0;
                let mut w = 0.0;
                for _ in 0..first_steps {
                    let z: f64 = rng.sample(StandardNormal);
                    x = euler_step(dynamics, &grid, x, u0, first_h, z);
                    w += first_h.sqrt() * z;
                }
                let k = cells.branch(w / epsilon.sqrt());
                for z in z_rest.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
                for (i, z) in z_rest.iter().enumerate() {
                    let h = dt.min(rest - i as f64 * dt);
                    let u = controls[k].value(i.min(nt - 1), grid.nearest(x));
                    x = euler_step(dynamics, &grid, x, u, h, *z);
                }
                let mut y = x0;
                for t in 0..nt {
                    let z = match z_rest.get(t) {
                        Some(z) => *z,
                        None => rng.sample(StandardNormal),
                    };
                    let u = controls[k].value(t, grid.nearest(y));
                    y = euler_step(dynamics, &grid, y, u, dt, z);
                }
                out.push((x, y, k));
            }
            out
        })
        .collect();

    let mut delayed = Vec::with_capacity(n_paths);
    let mut mixture = Vec::with_capacity(n_paths);
    let mut branch_counts = vec![0; weights.len()];
    for (x, y, k) in batches.into_iter().flatten() {
        delayed.push(x);
        mixture.push(y);
        branch_counts[k] += 1;
    }
    delayed.sort_by(f64::total_cmp);
    mixture.sort_by(f64::total_cmp);
    Ok(BranchingOutcome {
        epsilon,
        d1: empirical_wasserstein1(&delayed, &mixture)?,
        branch_counts,
        n_paths,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input("need at least two matching points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Input("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
