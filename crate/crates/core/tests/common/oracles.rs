//! Brute-force references that share no code with the library routines
//! they check.

use mfcontrol::dp::push_terminal;
use mfcontrol::{ControlField, DiscreteMeasure, StencilTable};
use minilp::{ComparisonOp, OptimizationDirection, Problem};

/// Optimal transport cost `min Σ π_ij |x_i - x_j|` over couplings.
pub fn coupling_lp(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let grid = a.grid();
    let n = grid.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| lp.add_var((grid.node(i) - grid.node(j)).abs(), (0.0, f64::INFINITY)))
                .collect()
        })
        .collect();
    for (row, &w) in vars.iter().zip(a.weights()) {
        let terms: Vec<_> = row.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, w);
    }
    for (j, &w) in b.weights().iter().enumerate() {
        let terms: Vec<_> = vars.iter().map(|row| (row[j], 1.0)).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, w);
    }
    lp.solve().expect("transport LP is feasible").objective()
}

/// Minimum of `E[φ(X_T)]` over every Markov feedback policy on the lattice.
pub fn enumerate_policies(stencils: &StencilTable, phi: &[f64], m0: &DiscreteMeasure) -> f64 {
    let nx = stencils.grid().len();
    let nt = stencils.lattice().steps();
    let na = stencils.n_controls();
    let cells = nx * nt;
    let mut best = f64::INFINITY;
    let mut code = vec![0u16; cells];
    loop {
        let choice: Vec<Vec<u16>> = code.chunks(nx).map(|c| c.to_vec()).collect();
        let fb = ControlField::from_indices(stencils, choice).unwrap();
        let m_t = push_terminal(m0, &fb, stencils).unwrap();
        best = best.min(m_t.moment(phi).unwrap());
        // odometer increment
        let mut i = 0;
        while i < cells {
            code[i] += 1;
            if (code[i] as usize) < na {
                break;
            }
            code[i] = 0;
            i += 1;
        }
        if i == cells {
            return best;
        }
    }
}
