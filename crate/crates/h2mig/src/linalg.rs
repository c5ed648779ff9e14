//! Direct solver for the 3x3-block tridiagonal systems produced by Newton
//! iterations on the 1-D three-unknowns-per-cell discretization.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Block = [[f64; 3]; 3];

pub const ZERO_BLOCK: Block = [[0.0; 3]; 3];

/// Pivot-ratio bound above which a system is declared numerically singular.
pub const COND_LIMIT: f64 = 1e14;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("singular linear system near block row {block}")]
    SingularLinearSystem { block: usize },
    #[error("non-finite matrix or rhs entry in block row {block}")]
    NonFiniteEntry { block: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Block tridiagonal matrix with N diagonal blocks and N-1 off-diagonal
/// block bands. Block row i couples cells i-1, i, i+1.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTridiagMatrix {
    pub diag: Vec<Block>,
    pub lower: Vec<Block>,
    pub upper: Vec<Block>,
}

impl BlockTridiagMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "need at least one block row");
        Self {
            diag: vec![ZERO_BLOCK; n],
            lower: vec![ZERO_BLOCK; n.saturating_sub(1)],
            upper: vec![ZERO_BLOCK; n.saturating_sub(1)],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn check_shape(&self) -> Result<(), LinalgError> {
        let n = self.diag.len();
        if self.lower.len() + 1 != n || self.upper.len() + 1 != n {
            return Err(LinalgError::Dimension(format!(
                "{} diagonal, {} lower, {} upper blocks",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        Ok(())
    }

    /// y = A x, for residual checks.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_blocks();
        assert_eq!(x.len(), 3 * n);
        let mut y = vec![0.0; 3 * n];
        for i in 0..n {
            for r in 0..3 {
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += self.diag[i][r][c] * x[3 * i + c];
                    if i > 0 {
                        acc += self.lower[i - 1][r][c] * x[3 * (i - 1) + c];
                    }
                    if i + 1 < n {
                        acc += self.upper[i][r][c] * x[3 * (i + 1) + c];
                    }
                }
                y[3 * i + r] = acc;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_blocks();
        let mut a = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            for r in 0..3 {
                for c in 0..3 {
                    a[(3 * i + r, 3 * i + c)] = self.diag[i][r][c];
                    if i > 0 {
                        a[(3 * i + r, 3 * (i - 1) + c)] = self.lower[i - 1][r][c];
                    }
                    if i + 1 < n {
                        a[(3 * i + r, 3 * (i + 1) + c)] = self.upper[i][r][c];
                    }
                }
            }
        }
        a
    }
}

/// Solver backend. `BlockThomas` is the production path; `DenseLu` expands
/// the band to a dense matrix and is retained as a verification oracle and a
/// fallback for systems the banded elimination rejects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LinearSolver {
    #[default]
    BlockThomas,
    DenseLu,
}

impl LinearSolver {
    pub fn solve(&self, a: &BlockTridiagMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            LinearSolver::BlockThomas => block_thomas_solve(a, b),
            LinearSolver::DenseLu => dense_lu_solve(a, b),
        }
    }
}

/// Block Thomas elimination with partial pivoting inside each 3x3 pivot
/// block. Scalar rows are equilibrated (divided by their max-abs entry)
/// before elimination so the pivot-ratio singularity test is meaningful for
/// systems whose equations live on wildly different physical scales.
pub fn block_thomas_solve(a: &BlockTridiagMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    a.check_shape()?;
    let n = a.n_blocks();
    if b.len() != 3 * n {
        return Err(LinalgError::Dimension(format!(
            "rhs has {} entries, matrix has {} rows",
            b.len(),
            3 * n
        )));
    }

    let mut diag = a.diag.clone();
    let mut lower = a.lower.clone();
    let mut upper = a.upper.clone();
    let mut rhs = b.to_vec();

    // Row equilibration over the whole block row (lower | diag | upper | rhs).
    for i in 0..n {
        for r in 0..3 {
            let mut m: f64 = 0.0;
            for c in 0..3 {
                let mut entries = [diag[i][r][c], 0.0, 0.0];
                if i > 0 {
                    entries[1] = lower[i - 1][r][c];
                }
                if i + 1 < n {
                    entries[2] = upper[i][r][c];
                }
                for v in entries {
                    if !v.is_finite() {
                        return Err(LinalgError::NonFiniteEntry { block: i });
                    }
                    m = m.max(v.abs());
                }
            }
            if m == 0.0 {
                return Err(LinalgError::SingularLinearSystem { block: i });
            }
            let inv = 1.0 / m;
            for c in 0..3 {
                diag[i][r][c] *= inv;
                if i > 0 {
                    lower[i - 1][r][c] *= inv;
                }
                if i + 1 < n {
                    upper[i][r][c] *= inv;
                }
            }
            rhs[3 * i + r] *= inv;
        }
    }

    let mut pivot_max: f64 = 0.0;
    let mut pivot_min = f64::INFINITY;

    // Forward elimination: factor the running pivot block, transform the
    // upper band and rhs, then fold the result into the next block row.
    let mut carried_upper = vec![ZERO_BLOCK; n.saturating_sub(1)];
    let mut carried_rhs = vec![[0.0; 3]; n];
    for i in 0..n {
        let mut piv = diag[i];
        if i > 0 {
            // piv -= L_{i-1} * carried_upper[i-1]
            for r in 0..3 {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += lower[i - 1][r][k] * carried_upper[i - 1][k][c];
                    }
                    piv[r][c] -= acc;
                }
            }
        }
        let mut rhs_i = [rhs[3 * i], rhs[3 * i + 1], rhs[3 * i + 2]];
        if i > 0 {
            for r in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += lower[i - 1][r][k] * carried_rhs[i - 1][k];
                }
                rhs_i[r] -= acc;
            }
        }

        let lu = factor3(&piv, &mut pivot_max, &mut pivot_min)
            .ok_or(LinalgError::SingularLinearSystem { block: i })?;
        if pivot_min <= 0.0 || pivot_max / pivot_min > COND_LIMIT {
            return Err(LinalgError::SingularLinearSystem { block: i });
        }

        carried_rhs[i] = lu_solve3(&lu, rhs_i);
        if i + 1 < n {
            let u = upper[i];
            let mut cu = ZERO_BLOCK;
            for c in 0..3 {
                let col = lu_solve3(&lu, [u[0][c], u[1][c], u[2][c]]);
                for r in 0..3 {
                    cu[r][c] = col[r];
                }
            }
            carried_upper[i] = cu;
        }
    }

    // Back substitution.
    let mut x = vec![0.0; 3 * n];
    for r in 0..3 {
        x[3 * (n - 1) + r] = carried_rhs[n - 1][r];
    }
    for i in (0..n - 1).rev() {
        for r in 0..3 {
            let mut acc = carried_rhs[i][r];
            for c in 0..3 {
                acc -= carried_upper[i][r][c] * x[3 * (i + 1) + c];
            }
            x[3 * i + r] = acc;
        }
    }

    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::SingularLinearSystem { block: 0 });
    }
    Ok(x)
}

/// LU factorization of a 3x3 block with partial pivoting. Returns the packed
/// factors and the row permutation, tracking global pivot magnitudes for the
/// caller's condition estimate. None when a pivot column is exactly zero.
struct Lu3 {
    lu: Block,
    perm: [usize; 3],
}

fn factor3(a: &Block, pivot_max: &mut f64, pivot_min: &mut f64) -> Option<Lu3> {
    let mut lu = *a;
    let mut perm = [0usize, 1, 2];
    for k in 0..3 {
        let mut best = k;
        for r in k + 1..3 {
            if lu[r][k].abs() > lu[best][k].abs() {
                best = r;
            }
        }
        if best != k {
            lu.swap(best, k);
            perm.swap(best, k);
        }
        let p = lu[k][k];
        if p == 0.0 || !p.is_finite() {
            return None;
        }
        *pivot_max = pivot_max.max(p.abs());
        *pivot_min = pivot_min.min(p.abs());
        for r in k + 1..3 {
            let f = lu[r][k] / p;
            lu[r][k] = f;
            // c touches two rows of lu; an iterator would double-borrow
            #[allow(clippy::needless_range_loop)]
            for c in k + 1..3 {
                lu[r][c] -= f * lu[k][c];
            }
        }
    }
    Some(Lu3 { lu, perm })
}

fn lu_solve3(f: &Lu3, b: [f64; 3]) -> [f64; 3] {
    let mut y = [b[f.perm[0]], b[f.perm[1]], b[f.perm[2]]];
    y[1] -= f.lu[1][0] * y[0];
    y[2] -= f.lu[2][0] * y[0] + f.lu[2][1] * y[1];
    let mut x = [0.0; 3];
    x[2] = y[2] / f.lu[2][2];
    x[1] = (y[1] - f.lu[1][2] * x[2]) / f.lu[1][1];
    x[0] = (y[0] - f.lu[0][1] * x[1] - f.lu[0][2] * x[2]) / f.lu[0][0];
    x
}

/// Dense LU on the expanded band. Oracle and fallback path.
pub fn dense_lu_solve(a: &BlockTridiagMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    a.check_shape()?;
    let n = a.n_blocks();
    if b.len() != 3 * n {
        return Err(LinalgError::Dimension(format!(
            "rhs has {} entries, matrix has {} rows",
            b.len(),
            3 * n
        )));
    }
    let dense = a.to_dense();
    if dense.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFiniteEntry { block: 0 });
    }
    let lu = dense.full_piv_lu();
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(LinalgError::SingularLinearSystem { block: 0 })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::SingularLinearSystem { block: 0 });
    }
    Ok(x.as_slice().to_vec())
}
