//! Probability measures on a uniform grid.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::Grid;

/// Weights are renormalized when their total drifts further than this from 1.
const RENORMALIZE_ABOVE: f64 = 1e-13;
const MASS_TOLERANCE: f64 = 1e-12;

/// A probability vector over the nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    grid: Grid,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates non-negativity, length and unit mass (within 1e-12).
    pub fn from_weights(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} weights for a grid of {} nodes",
                weights.len(),
                grid.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Input(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Input(format!("weights sum to {total}, not 1")));
        }
        Ok(Self::normalized(grid, weights))
    }

    /// Wraps weights known to be non-negative with mass close to 1,
    /// rescaling when the mass has drifted.
    pub(crate) fn normalized(grid: Grid, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > RENORMALIZE_ABOVE {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Self { grid, weights }
    }

    /// Unit mass at `x0`, split linearly between the two bracketing nodes.
    pub fn dirac(grid: &Grid, x0: f64) -> Result<Self> {
        if !grid.contains(x0) {
            return Err(Error::Domain(format!(
                "{x0} lies outside [{}, {}]",
                grid.x_min(),
                grid.x_max()
            )));
        }
        let mut weights = vec![0.0; grid.len()];
        let (i, frac) = grid.locate(x0);
        weights[i] = 1.0 - frac;
        if frac > 0.0 {
            weights[i + 1] = frac;
        }
        Ok(Self {
            grid: *grid,
            weights,
        })
    }

    pub fn uniform(grid: &Grid) -> Self {
        let n = grid.len();
        Self {
            grid: *grid,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(1-θ)·self + θ·other`.
    pub fn mixture(&self, other: &Self, theta: f64) -> Result<Self> {
        self.same_grid(other)?;
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Input(format!(
                "mixture weight {theta} outside [0, 1]"
            )));
        }
        if theta == 0.0 {
            return Ok(self.clone());
        }
        if theta == 1.0 {
            return Ok(other.clone());
        }
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        Ok(Self::normalized(self.grid, weights))
    }

    /// `Σ_j φ(x_j) w_j` for a node-sampled `φ`.
    pub fn moment(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "grid function of length {} against {} nodes",
                phi.len(),
                self.weights.len()
            )));
        }
        Ok(dot(&self.weights, phi))
    }

    /// Integral of a function evaluated at the nodes.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * f(self.grid.node(j)))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.expect(|x| (x - mu) * (x - mu))
    }

    /// Cumulative mass at each node.
    pub fn cdf(&self) -> Vec<f64> {
        self.weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect()
    }

    /// `n` sorted points at the mid-quantiles `(i + ½)/n`, a deterministic
    /// sample to compare against Monte-Carlo output.
    pub fn quantile_samples(&self, n: usize) -> Vec<f64> {
        let cdf = self.cdf();
        let mut j = 0;
        (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                while j + 1 < cdf.len() && cdf[j] < p {
                    j += 1;
                }
                self.grid.node(j)
            })
            .collect()
    }

    /// Wasserstein-1 distance via `δx · Σ |F₁ - F₂|`.
    pub fn wasserstein1(&self, other: &Self) -> Result<f64> {
        self.same_grid(other)?;
        let mut acc = 0.0;
        let mut cdf_a = 0.0;
        let mut cdf_b = 0.0;
        let n = self.weights.len();
        for j in 0..n - 1 {
            cdf_a += self.weights[j];
            cdf_b += other.weights[j];
            acc += (cdf_a - cdf_b).abs();
        }
        Ok(acc * self.grid.dx())
    }

    /// Writes `x,weight` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,weight")?;
        for (j, w) in self.weights.iter().enumerate() {
            writeln!(out, "{},{}", self.grid.node(j), w)?;
        }
        out.flush()?;
        Ok(())
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape("measures live on different grids".into()));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// W1 between two equally sized, sorted samples: mean gap of order statistics.
pub fn empirical_wasserstein1(sorted_a: &[f64], sorted_b: &[f64]) -> Result<f64> {
    if sorted_a.len() != sorted_b.len() {
        return Err(Error::Shape(format!(
            "sample sizes differ ({} vs {})",
            sorted_a.len(),
            sorted_b.len()
        )));
    }
    if sorted_a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = sorted_a
        .iter()
        .zip(sorted_b)
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(total / sorted_a.len() as f64)
}
