//! Standard problems `min_u E[φ(X_T)]` on the controlled Markov chain.
//!
//! The backward pass is discrete dynamic programming,
//! `V_t(j) = min_a Σ p(j,a → i) V_{t+1}(i)`, with the minimum taken by
//! enumerating the control set; ties go to the smallest control. The forward
//! pass pushes a distribution through the kernel selected by the feedback.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Grid, StencilTable};
use crate::measure::{dot, DiscreteMeasure};

/// Below this many nodes the backward sweep runs serially.
const PARALLEL_MIN_NODES: usize = 2048;

/// `V(t, x_j)` for `t = 0..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: Grid,
    dt: f64,
    values: Vec<Vec<f64>>,
}

impl ValueField {
    pub fn at(&self, step: usize) -> &[f64] {
        &self.values[step]
    }

    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.values[self.values.len() - 1]
    }

    pub fn slices(&self) -> usize {
        self.values.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix(
            path,
            &self.grid,
            self.dt,
            self.values.iter().map(|r| r.as_slice()),
        )
    }
}

/// Feedback `u(t, x_j)` for `t = 0..nt-1`, stored as control indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: Grid,
    dt: f64,
    controls: Vec<f64>,
    choice: Vec<Vec<u16>>,
}

impl ControlField {
    /// The same control index at every (t, j).
    pub fn constant(stencils: &StencilTable, control_index: usize) -> Result<Self> {
        let lattice = stencils.lattice();
        if control_index >= lattice.controls().len() {
            return Err(Error::Input(format!(
                "no control with index {control_index}"
            )));
        }
        Ok(Self {
            grid: *lattice.grid(),
            dt: lattice.dt(),
            controls: lattice.controls().to_vec(),
            choice: vec![vec![control_index as u16; lattice.grid().len()]; lattice.steps()],
        })
    }

    /// Builds a field from explicit per-step control indices.
    pub fn from_indices(stencils: &StencilTable, choice: Vec<Vec<u16>>) -> Result<Self> {
        let lattice = stencils.lattice();
        let na = lattice.controls().len();
        if choice.len() != lattice.steps() || choice.iter().any(|r| r.len() != lattice.grid().len())
        {
            return Err(Error::Shape(
                "control field does not match the lattice".into(),
            ));
        }
        if choice.iter().flatten().any(|&a| a as usize >= na) {
            return Err(Error::Input("control index out of range".into()));
        }
        Ok(Self {
            grid: *lattice.grid(),
            dt: lattice.dt(),
            controls: lattice.controls().to_vec(),
            choice,
        })
    }

    pub fn steps(&self) -> usize {
        self.choice.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn index(&self, step: usize, node: usize) -> usize {
        self.choice[step][node] as usize
    }

    pub fn value(&self, step: usize, node: usize) -> f64 {
        self.controls[self.index(step, node)]
    }

    pub fn row_values(&self, step: usize) -> Vec<f64> {
        self.choice[step]
            .iter()
            .map(|&a| self.controls[a as usize])
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.steps()).map(|t| self.row_values(t)).collect();
        write_matrix(path, &self.grid, self.dt, rows.iter().map(|r| r.as_slice()))
    }
}

/// Distribution evolution, one row of weights per time slice.
pub fn write_distribution(path: &Path, slices: &[DiscreteMeasure], dt: f64) -> Result<()> {
    let grid = match slices.first() {
        Some(m) => *m.grid(),
        None => return Err(Error::Input("no distribution slices to write".into())),
    };
    write_matrix(path, &grid, dt, slices.iter().map(|m| m.weights()))
}

/// Header `t,x_0,...,x_n`, then one row per time step.
fn write_matrix<'a>(
    path: &Path,
    grid: &Grid,
    dt: f64,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "t")?;
    for x in grid.nodes() {
        write!(out, ",{x}")?;
    }
    writeln!(out)?;
    for (t, row) in rows.enumerate() {
        write!(out, "{}", t as f64 * dt)?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// One backward step: the minimizing control and value at every node.
fn backward_step(stencils: &StencilTable, next: &[f64], values: &mut [f64], choice: &mut [u16]) {
    let na = stencils.n_controls();
    let node = |j: usize| {
        let mut best = f64::INFINITY;
        let mut arg = 0u16;
        for a in 0..na {
            let v = stencils.expectation(j, a, next);
            if v < best {
                best = v;
                arg = a as u16;
            }
        }
        (best, arg)
    };
    if values.len() >= PARALLEL_MIN_NODES {
        values
            .par_iter_mut()
            .zip(choice.par_iter_mut())
            .enumerate()
            .for_each(|(j, (v, c))| (*v, *c) = node(j));
    } else {
        for (j, (v, c)) in values.iter_mut().zip(choice.iter_mut()).enumerate() {
            (*v, *c) = node(j);
        }
    }
}

/// Backward dynamic programming for terminal cost `phi`.
pub fn hjb_backward(stencils: &StencilTable, phi: &[f64]) -> Result<(ValueField, ControlField)> {
    let lattice = stencils.lattice();
    let grid = *lattice.grid();
    let nx = grid.len();
    if phi.len() != nx {
        return Err(Error::Shape(format!(
            "terminal cost has {} values for {nx} nodes",
            phi.len()
        )));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("terminal cost is not finite".into()));
    }
    let nt = lattice.steps();
    let mut values = vec![Vec::new(); nt + 1];
    let mut choice = vec![Vec::new(); nt];
    values[nt] = phi.to_vec();
    for t in (0..nt).rev() {
        let mut v = vec![0.0; nx];
        let mut c = vec![0u16; nx];
        backward_step(stencils, &values[t + 1], &mut v, &mut c);
        values[t] = v;
        choice[t] = c;
    }
    Ok((
        ValueField {
            grid,
            dt: lattice.dt(),
            values,
        },
        ControlField {
            grid,
            dt: lattice.dt(),
            controls: lattice.controls().to_vec(),
            choice,
        },
    ))
}

fn forward_step(stencils: &StencilTable, choice: &[u16], from: &[f64]) -> Vec<f64> {
    let mut to = vec![0.0; from.len()];
    for (j, &w) in from.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (i, p) in stencils.row(j, choice[j] as usize) {
            to[i] += p * w;
        }
    }
    to
}

fn check_inputs(
    m0: &DiscreteMeasure,
    feedback: &ControlField,
    stencils: &StencilTable,
) -> Result<()> {
    let lattice = stencils.lattice();
    if m0.grid() != lattice.grid() || feedback.grid() != lattice.grid() {
        return Err(Error::Shape(
            "measure, feedback and stencils disagree on the grid".into(),
        ));
    }
    if feedback.steps() != lattice.steps() {
        return Err(Error::Shape(format!(
            "feedback has {} steps, lattice has {}",
            feedback.steps(),
            lattice.steps()
        )));
    }
    Ok(())
}

/// Chapman-Kolmogorov push of `m0`; returns all `nt + 1` slices.
pub fn push_forward(
    m0: &DiscreteMeasure,
    feedback: &ControlField,
    stencils: &StencilTable,
) -> Result<Vec<DiscreteMeasure>> {
    check_inputs(m0, feedback, stencils)?;
    let grid = *m0.grid();
    let mut slices = Vec::with_capacity(feedback.steps() + 1);
    slices.push(m0.clone());
    for t in 0..feedback.steps() {
        let next = forward_step(stencils, &feedback.choice[t], slices[t].weights());
        slices.push(DiscreteMeasure::normalized(grid, next));
    }
    Ok(slices)
}

/// Final-time law only.
pub fn push_terminal(
    m0: &DiscreteMeasure,
    feedback: &ControlField,
    stencils: &StencilTable,
) -> Result<DiscreteMeasure> {
    check_inputs(m0, feedback, stencils)?;
    let grid = *m0.grid();
    let mut current = m0.clone();
    for t in 0..feedback.steps() {
        let next = forward_step(stencils, &feedback.choice[t], current.weights());
        current = DiscreteMeasure::normalized(grid, next);
    }
    Ok(current)
}

/// Solution of a standard problem from a given initial law.
#[derive(Debug, Clone)]
pub struct StandardSolution {
    /// `∫ V(0, x) dm0(x)`.
    pub value: f64,
    pub terminal: DiscreteMeasure,
    pub feedback: ControlField,
    pub values: ValueField,
}

pub fn solve_standard(
    stencils: &StencilTable,
    phi: &[f64],
    m0: &DiscreteMeasure,
) -> Result<StandardSolution> {
    let (values, feedback) = hjb_backward(stencils, phi)?;
    let value = dot(m0.weights(), values.initial());
    let terminal = push_terminal(m0, &feedback, stencils)?;
    Ok(StandardSolution {
        value,
        terminal,
        feedback,
        values,
    })
}
