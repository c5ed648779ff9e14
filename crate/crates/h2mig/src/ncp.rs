//! Complementarity functions, active sets, generalized-Jacobian row
//! selection, and the semi-smooth Newton loop over an abstract residual
//! provider.
//!
//! A problem supplies equality residuals H (2 per cell for the flow model,
//! possibly none for pure complementarity systems) plus the complementarity
//! pair (F, G) with F >= 0, G >= 0, F.G = 0 encoded through a C-function.

use crate::linalg::{BlockTridiagMatrix, LinalgError, LinearSolver, ZERO_BLOCK};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NcpError {
    #[error("no convergence after {} iterations (residual {:.3e})",
            report.iterations, report.residual_history.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { report: NewtonReport },
    #[error(transparent)]
    Linear(#[from] LinalgError),
    #[error("residual evaluation failed at cell {cell}: {message}")]
    EvaluationFailure { cell: usize, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// C-function choice for the complementarity rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CFunction {
    #[default]
    Min,
    FischerBurmeister,
}

impl fmt::Display for CFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CFunction::Min => write!(f, "min"),
            CFunction::FischerBurmeister => write!(f, "fischer-burmeister"),
        }
    }
}

impl FromStr for CFunction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "min" => Ok(CFunction::Min),
            "fischer-burmeister" | "fb" => Ok(CFunction::FischerBurmeister),
            other => Err(format!(
                "unknown C-function '{other}' (expected min or fischer-burmeister)"
            )),
        }
    }
}

/// Component-wise min(a, b); zero exactly when a >= 0, b >= 0, a.b = 0 holds
/// component-wise.
pub fn cfun_min(a: &[f64], b: &[f64]) -> Result<Vec<f64>, NcpError> {
    if a.len() != b.len() {
        return Err(NcpError::Dimension(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.min(*y)).collect())
}

/// Component-wise Fischer-Burmeister sqrt(a^2 + b^2) - a - b.
pub fn cfun_fischer_burmeister(a: &[f64], b: &[f64]) -> Result<Vec<f64>, NcpError> {
    if a.len() != b.len() {
        return Err(NcpError::Dimension(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.hypot(*y) - x - y).collect())
}

pub fn cfun_apply(cfun: CFunction, a: &[f64], b: &[f64]) -> Result<Vec<f64>, NcpError> {
    match cfun {
        CFunction::Min => cfun_min(a, b),
        CFunction::FischerBurmeister => cfun_fischer_burmeister(a, b),
    }
}

/// Complementary index sets: A = {i : G_i < F_i} (constraint active, gas
/// present), I = {i : G_i >= F_i}. Ties go to I.
pub fn active_sets(f_val: &[f64], g_val: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut a = Vec::new();
    let mut i_set = Vec::new();
    for (i, (f, g)) in f_val.iter().zip(g_val).enumerate() {
        if g < f {
            a.push(i);
        } else {
            i_set.push(i);
        }
    }
    (a, i_set)
}

/// Weights (alpha, beta) such that the selected generalized-Jacobian row of
/// the C-function is alpha * F'_i + beta * G'_i.
///
/// min rule: F row when F_i <= G_i (ties take the F row), G row otherwise.
/// Fischer-Burmeister: the smooth gradient away from (0,0); at the kink the
/// limiting element (-1, 0) is used so the F row carries the step.
pub fn phi_row_weights(cfun: CFunction, f: f64, g: f64) -> (f64, f64) {
    match cfun {
        CFunction::Min => {
            if f <= g {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
        CFunction::FischerBurmeister => {
            let r = f.hypot(g);
            if r == 0.0 {
                (-1.0, 0.0)
            } else {
                (f / r - 1.0, g / r - 1.0)
            }
        }
    }
}

/// Dense row selection for the min C-function: row i of the result is F' row
/// i when F_i <= G_i, else G' row i.
pub fn select_jacobian_rows(
    fp: &[Vec<f64>],
    gp: &[Vec<f64>],
    f_val: &[f64],
    g_val: &[f64],
) -> Result<Vec<Vec<f64>>, NcpError> {
    let n = f_val.len();
    if g_val.len() != n || fp.len() != n || gp.len() != n {
        return Err(NcpError::Dimension(format!(
            "f {}, g {}, fp {}, gp {}",
            n,
            g_val.len(),
            fp.len(),
            gp.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            if f_val[i] <= g_val[i] {
                fp[i].clone()
            } else {
                gp[i].clone()
            }
        })
        .collect())
}

/// Max norm of the stacked residual (H; phi) with each entry divided by its
/// equation scale.
pub fn residual_norm(h: &[f64], phi: &[f64], eq_scales: &[f64], comp_scales: &[f64]) -> f64 {
    debug_assert_eq!(h.len(), eq_scales.len());
    debug_assert_eq!(phi.len(), comp_scales.len());
    let mut res: f64 = 0.0;
    for (v, s) in h.iter().zip(eq_scales) {
        res = res.max((v / s).abs());
    }
    for (v, s) in phi.iter().zip(comp_scales) {
        res = res.max((v / s).abs());
    }
    res
}

/// Jacobian blocks of one residual evaluation.
///
/// `Tridiag` is the flow-model layout: per cell, two mass-balance rows
/// coupling the cell to its neighbours, and cell-local F/G rows over the
/// cell's own three unknowns. Entry 0 of `h_lower` and the last entry of
/// `h_upper` are unused and stay zero.
#[derive(Clone, Debug)]
pub enum JacobianParts {
    Dense {
        hp: Vec<Vec<f64>>,
        fp: Vec<Vec<f64>>,
        gp: Vec<Vec<f64>>,
    },
    Tridiag {
        h_lower: Vec<[[f64; 3]; 2]>,
        h_diag: Vec<[[f64; 3]; 2]>,
        h_upper: Vec<[[f64; 3]; 2]>,
        f_rows: Vec<[f64; 3]>,
        g_rows: Vec<[f64; 3]>,
    },
}

/// One evaluation of the residual system at a point.
#[derive(Clone, Debug)]
pub struct NcpEval {
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub jac: JacobianParts,
}

/// Abstract residual provider for the Newton solver.
pub trait NcpProblem {
    /// Number of equality residual rows (2N for the flow model).
    fn n_eq(&self) -> usize;
    /// Number of complementarity pairs (N for the flow model).
    fn n_comp(&self) -> usize;
    /// Number of unknowns; must equal n_eq + n_comp.
    fn n_unknowns(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<NcpEval, NcpError>;
    fn eq_scales(&self) -> Vec<f64> {
        vec![1.0; self.n_eq()]
    }
    fn comp_scales(&self) -> Vec<f64> {
        vec![1.0; self.n_comp()]
    }
}

#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub converged: bool,
    /// Number of linear solves performed.
    pub iterations: usize,
    /// Scaled residual per iterate, starting with the initial one
    /// (length = iterations + 1 when the loop ran to completion).
    pub residual_history: Vec<f64>,
    /// |A| per iterate, aligned with `residual_history`.
    pub active_set_history: Vec<usize>,
    /// Active set at the final iterate.
    pub final_active_set: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub eps: f64,
    pub max_iter: usize,
    pub cfun: CFunction,
    pub solver: LinearSolver,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            eps: 1e-10,
            max_iter: 50,
            cfun: CFunction::Min,
            solver: LinearSolver::BlockThomas,
        }
    }
}

/// Semi-smooth Newton: at each iterate select one generalized-Jacobian row
/// per complementarity pair, solve the single linear system
/// [H'; J_phi] dx = -(H; phi), and step with no damping. Convergence is
/// declared when the scaled max-norm residual drops to eps.
pub fn newton_min_solve(
    problem: &dyn NcpProblem,
    x0: &[f64],
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonReport), NcpError> {
    let n = problem.n_unknowns();
    if problem.n_eq() + problem.n_comp() != n {
        return Err(NcpError::Dimension(format!(
            "{} equality + {} complementarity rows for {} unknowns",
            problem.n_eq(),
            problem.n_comp(),
            n
        )));
    }
    if x0.len() != n {
        return Err(NcpError::Dimension(format!(
            "x0 has {} entries, problem has {} unknowns",
            x0.len(),
            n
        )));
    }
    if !opts.eps.is_finite() || opts.eps <= 0.0 || opts.max_iter == 0 {
        return Err(NcpError::Dimension(
            "eps must be positive and max_iter at least 1".into(),
        ));
    }

    let eq_scales = problem.eq_scales();
    let comp_scales = problem.comp_scales();
    let mut x = x0.to_vec();
    let mut report = NewtonReport {
        converged: false,
        iterations: 0,
        residual_history: Vec::new(),
        active_set_history: Vec::new(),
        final_active_set: Vec::new(),
    };

    loop {
        let eval = problem.eval(&x)?;
        let phi = cfun_apply(opts.cfun, &eval.f, &eval.g)?;
        let res = residual_norm(&eval.h, &phi, &eq_scales, &comp_scales);
        let (active, _) = active_sets(&eval.f, &eval.g);
        report.residual_history.push(res);
        report.active_set_history.push(active.len());

        if res <= opts.eps {
            report.converged = true;
            report.final_active_set = active;
            return Ok((x, report));
        }
        if report.iterations >= opts.max_iter {
            report.final_active_set = active;
            return Err(NcpError::NonConvergence { report });
        }

        let weights: Vec<(f64, f64)> = eval
            .f
            .iter()
            .zip(&eval.g)
            .map(|(&f, &g)| phi_row_weights(opts.cfun, f, g))
            .collect();
        let dx = solve_newton_system(&eval, &phi, &weights, opts.solver)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        report.iterations += 1;
    }
}

fn solve_newton_system(
    eval: &NcpEval,
    phi: &[f64],
    weights: &[(f64, f64)],
    solver: LinearSolver,
) -> Result<Vec<f64>, NcpError> {
    match &eval.jac {
        JacobianParts::Tridiag {
            h_lower,
            h_diag,
            h_upper,
            f_rows,
            g_rows,
        } => {
            let n_cells = f_rows.len();
            let mut a = BlockTridiagMatrix::zeros(n_cells);
            let mut rhs = vec![0.0; 3 * n_cells];
            for i in 0..n_cells {
                let mut d = ZERO_BLOCK;
                d[..2].copy_from_slice(&h_diag[i]);
                let (alpha, beta) = weights[i];
                for c in 0..3 {
                    d[2][c] = alpha * f_rows[i][c] + beta * g_rows[i][c];
                }
                a.diag[i] = d;
                if i > 0 {
                    let mut l = ZERO_BLOCK;
                    l[..2].copy_from_slice(&h_lower[i]);
                    a.lower[i - 1] = l;
                }
                if i + 1 < n_cells {
                    let mut u = ZERO_BLOCK;
                    u[..2].copy_from_slice(&h_upper[i]);
                    a.upper[i] = u;
                }
                rhs[3 * i] = -eval.h[2 * i];
                rhs[3 * i + 1] = -eval.h[2 * i + 1];
                rhs[3 * i + 2] = -phi[i];
            }
            Ok(solver.solve(&a, &rhs)?)
        }
        JacobianParts::Dense { hp, fp, gp } => {
            let n_eq = hp.len();
            let n_comp = fp.len();
            let n = n_eq + n_comp;
            let mut a = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for (r, row) in hp.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    a[(r, c)] = *v;
                }
                rhs[r] = -eval.h[r];
            }
            for i in 0..n_comp {
                let (alpha, beta) = weights[i];
                for c in 0..n {
                    a[(n_eq + i, c)] = alpha * fp[i][c] + beta * gp[i][c];
                }
                rhs[n_eq + i] = -phi[i];
            }
            let x = a
                .full_piv_lu()
                .solve(&rhs)
                .ok_or(LinalgError::SingularLinearSystem { block: 0 })?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(NcpError::Linear(LinalgError::SingularLinearSystem {
                    block: 0,
                }));
            }
            Ok(x.as_slice().to_vec())
        }
    }
}
