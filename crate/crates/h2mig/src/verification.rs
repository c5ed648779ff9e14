//! Independent oracles: finite-difference Jacobians, brute-force active-set
//! enumeration for small complementarity systems, and admissible-state
//! sampling for Jacobian checks.

use crate::constitutive::{capillary_pressure, FluidParams, MediumParams, S_REG_WET};
use crate::discretization::{
    assemble_system_sequential, component_masses, BoundarySpec, CellState, Grid,
};
use crate::ncp::{JacobianParts, NcpError, NcpEval, NcpProblem};
use crate::simulation::RunResult;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference Jacobian with one step size for every variable.
pub fn fd_jacobian<F>(residual_fn: F, x: &[f64], h: f64) -> Result<Vec<Vec<f64>>, NcpError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, NcpError>,
{
    fd_jacobian_scaled(residual_fn, x, &vec![h; x.len()])
}

/// Central-difference Jacobian with a per-variable step size; needed when
/// unknowns differ by many orders of magnitude (pressure vs saturation).
pub fn fd_jacobian_scaled<F>(
    residual_fn: F,
    x: &[f64],
    h: &[f64],
) -> Result<Vec<Vec<f64>>, NcpError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, NcpError>,
{
    assert_eq!(x.len(), h.len());
    let n = x.len();
    let base = residual_fn(x)?;
    let n_out = base.len();
    let mut jac = vec![vec![0.0; n]; n_out];
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h[j];
        xm[j] -= h[j];
        let fp = residual_fn(&xp)?;
        let fm = residual_fn(&xm)?;
        for r in 0..n_out {
            jac[r][j] = (fp[r] - fm[r]) / (2.0 * h[j]);
        }
    }
    Ok(jac)
}

/// Worst disagreement between two Jacobians. Relative errors are measured
/// against the max-magnitude entry of the row (either matrix), so rows whose
/// entries span many scales are judged by their dominant term; all-zero rows
/// are skipped.
#[derive(Clone, Copy, Debug)]
pub struct JacobianDiff {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub location: (usize, usize),
    pub analytic: f64,
    pub fd: f64,
}

impl std::fmt::Display for JacobianDiff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel error {:.3e} at row {}, col {} (analytic {:.6e}, fd {:.6e}); max abs error {:.3e}",
            self.max_rel_error, self.location.0, self.location.1, self.analytic, self.fd,
            self.max_abs_error
        )
    }
}

pub fn compare_jacobians(analytic: &[Vec<f64>], fd: &[Vec<f64>]) -> JacobianDiff {
    assert_eq!(analytic.len(), fd.len());
    let mut out = JacobianDiff {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        location: (0, 0),
        analytic: 0.0,
        fd: 0.0,
    };
    for (r, (ra, rf)) in analytic.iter().zip(fd).enumerate() {
        assert_eq!(ra.len(), rf.len());
        let row_scale = ra
            .iter()
            .chain(rf.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if row_scale == 0.0 {
            continue;
        }
        for (c, (a, b)) in ra.iter().zip(rf).enumerate() {
            let abs = (a - b).abs();
            out.max_abs_error = out.max_abs_error.max(abs);
            let rel = abs / row_scale;
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.location = (r, c);
                out.analytic = *a;
                out.fd = *b;
            }
        }
    }
    out
}

/// Dense Jacobian rows for one equation family, one row per equation.
pub type DenseRows = Vec<Vec<f64>>;

/// Expand an evaluation's Jacobian into dense row sets (H', F', G').
pub fn eval_dense_rows(eval: &NcpEval, n_cols: usize) -> (DenseRows, DenseRows, DenseRows) {
    match &eval.jac {
        JacobianParts::Dense { hp, fp, gp } => (hp.clone(), fp.clone(), gp.clone()),
        JacobianParts::Tridiag {
            h_lower,
            h_diag,
            h_upper,
            f_rows,
            g_rows,
        } => {
            let n = f_rows.len();
            assert_eq!(n_cols, 3 * n);
            let mut hp = vec![vec![0.0; n_cols]; 2 * n];
            for i in 0..n {
                for r in 0..2 {
                    for c in 0..3 {
                        hp[2 * i + r][3 * i + c] = h_diag[i][r][c];
                        if i > 0 {
                            hp[2 * i + r][3 * (i - 1) + c] = h_lower[i][r][c];
                        }
                        if i + 1 < n {
                            hp[2 * i + r][3 * (i + 1) + c] = h_upper[i][r][c];
                        }
                    }
                }
            }
            let local = |rows: &Vec<[f64; 3]>| -> Vec<Vec<f64>> {
                rows.iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let mut r = vec![0.0; n_cols];
                        r[3 * i..3 * i + 3].copy_from_slice(row);
                        r
                    })
                    .collect()
            };
            (hp, local(f_rows), local(g_rows))
        }
    }
}

/// Random states inside the constitutive domains, away from the capillary
/// singularity, the wet-band edge (the curve slope switches there), and
/// upwind-switch manifolds (faces with near-equal phase pressures are
/// resampled, as is a near-tie against the right boundary). About a fifth of
/// the cells land inside the wet band so both curve branches get exercised.
pub fn sample_admissible_states(
    grid: &Grid,
    medium: &MediumParams,
    bc: &BoundarySpec,
    n_states: usize,
    seed: u64,
) -> Vec<Vec<CellState>> {
    let band_edge = medium.s_lr + S_REG_WET * medium.mobile_span();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_states);
    'state: for _ in 0..n_states {
        for _attempt in 0..1000 {
            let cells: Vec<CellState> = (0..grid.n_cells)
                .map(|_| CellState {
                    s_l: if rng.gen_bool(0.2) {
                        rng.gen_range(band_edge + 1.5e-3..1.0 - 1.5e-3)
                    } else {
                        rng.gen_range(0.55..band_edge - 1.5e-3)
                    },
                    p_l: rng.gen_range(5e5..5e6),
                    chi_h_l: rng.gen_range(0.0..3e-5),
                })
                .collect();
            let pg: Vec<f64> = cells
                .iter()
                .map(|c| c.p_l + capillary_pressure(c.s_l, medium).val)
                .collect();
            let min_gap = 10.0;
            let mut ok = true;
            for i in 0..grid.n_cells - 1 {
                if (cells[i].p_l - cells[i + 1].p_l).abs() < min_gap
                    || (pg[i] - pg[i + 1]).abs() < min_gap
                {
                    ok = false;
                    break;
                }
            }
            let last = grid.n_cells - 1;
            if (cells[last].p_l - bc.right_p_l).abs() < min_gap
                || (pg[last] - bc.right_p_l).abs() < min_gap
            {
                ok = false;
            }
            if ok {
                out.push(cells);
                continue 'state;
            }
        }
        panic!("could not sample a switch-free state");
    }
    out
}

/// FD steps per the per-variable scaling rule: 1e-6 times a characteristic
/// magnitude of 1e-3 for saturation and molar fraction, 1 Pa for pressure.
pub fn fd_steps(n_cells: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(3 * n_cells);
    for _ in 0..n_cells {
        h.push(1e-9);
        h.push(1e-6);
        h.push(1e-9);
    }
    h
}

/// Compare the analytic Jacobian of the assembled residual against central
/// differences at `n_states` sampled states; returns one diff per state.
pub fn jacobian_check(
    grid: &Grid,
    medium: &MediumParams,
    fluid: &FluidParams,
    bc: &BoundarySpec,
    dt: f64,
    n_states: usize,
    seed: u64,
) -> Result<Vec<JacobianDiff>, NcpError> {
    let states = sample_admissible_states(grid, medium, bc, n_states, seed);
    let state_old: Vec<CellState> = vec![
        CellState {
            s_l: 1.0,
            p_l: bc.right_p_l,
            chi_h_l: 0.0,
        };
        grid.n_cells
    ];
    let residual_fn = |x: &[f64]| -> Result<Vec<f64>, NcpError> {
        let asm = assemble_system_sequential(x, &state_old, dt, grid, medium, fluid, bc, None)?;
        let mut r = asm.h;
        r.extend(asm.f);
        r.extend(asm.g);
        Ok(r)
    };
    let h = fd_steps(grid.n_cells);
    let mut diffs = Vec::with_capacity(n_states);
    for cells in &states {
        let x = crate::discretization::flatten(cells);
        let asm = assemble_system_sequential(&x, &state_old, dt, grid, medium, fluid, bc, None)?;
        let eval = asm.into_eval();
        let (hp, fp, gp) = eval_dense_rows(&eval, x.len());
        let mut analytic = hp;
        analytic.extend(fp);
        analytic.extend(gp);
        let fd = fd_jacobian_scaled(residual_fn, &x, &h)?;
        diffs.push(compare_jacobians(&analytic, &fd));
    }
    Ok(diffs)
}

/// Linear complementarity problem min(x, Mx + q) = 0 as an NcpProblem.
#[derive(Clone, Debug)]
pub struct LcpProblem {
    pub m: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

impl NcpProblem for LcpProblem {
    fn n_eq(&self) -> usize {
        0
    }
    fn n_comp(&self) -> usize {
        self.q.len()
    }
    fn n_unknowns(&self) -> usize {
        self.q.len()
    }
    fn eval(&self, x: &[f64]) -> Result<NcpEval, NcpError> {
        let n = self.q.len();
        let g: Vec<f64> = (0..n)
            .map(|i| {
                self.q[i]
                    + self.m[i]
                        .iter()
                        .zip(x)
                        .map(|(mij, xj)| mij * xj)
                        .sum::<f64>()
            })
            .collect();
        let fp: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                row
            })
            .collect();
        Ok(NcpEval {
            h: vec![],
            f: x.to_vec(),
            g,
            jac: JacobianParts::Dense {
                hp: vec![],
                fp,
                gp: self.m.clone(),
            },
        })
    }
}

/// Solve the smooth system picked by one active-set pattern with a damped
/// Newton iteration. Bit i of `pattern` set means F_i = 0 is enforced,
/// otherwise G_i = 0.
fn solve_pattern(problem: &dyn NcpProblem, pattern: u64, x0: &[f64]) -> Option<Vec<f64>> {
    let n_eq = problem.n_eq();
    let n_comp = problem.n_comp();
    let n = problem.n_unknowns();
    let sub_tol = 1e-10;

    let selected = |eval: &NcpEval| -> Vec<f64> {
        let mut r = eval.h.clone();
        for i in 0..n_comp {
            r.push(if pattern >> i & 1 == 1 {
                eval.f[i]
            } else {
                eval.g[i]
            });
        }
        r
    };
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));

    let mut x = x0.to_vec();
    for _ in 0..50 {
        let eval = problem.eval(&x).ok()?;
        let r = selected(&eval);
        if norm_inf(&r) <= sub_tol {
            return Some(x);
        }
        let (hp, fp, gp) = eval_dense_rows(&eval, n);
        let mut a = DMatrix::zeros(n, n);
        for (row, src) in hp.iter().enumerate() {
            for c in 0..n {
                a[(row, c)] = src[c];
            }
        }
        for i in 0..n_comp {
            let src = if pattern >> i & 1 == 1 {
                &fp[i]
            } else {
                &gp[i]
            };
            for c in 0..n {
                a[(n_eq + i, c)] = src[c];
            }
        }
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let dx = a.full_piv_lu().solve(&rhs)?;
        if dx.iter().any(|v| !v.is_finite()) {
            return None;
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let xt: Vec<f64> = x
                .iter()
                .zip(dx.iter())
                .map(|(xi, di)| xi + alpha * di)
                .collect();
            if let Ok(et) = problem.eval(&xt) {
                let rt = selected(&et);
                if norm_inf(&rt) <= sub_tol || norm2(&rt) < norm2(&r) {
                    x = xt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    let eval = problem.eval(&x).ok()?;
    if norm_inf(&selected(&eval)) <= sub_tol {
        Some(x)
    } else {
        None
    }
}

fn keep_feasible(problem: &dyn NcpProblem, candidate: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let eval = problem.eval(&candidate).ok()?;
    let feasible = eval.f.iter().all(|v| *v >= -tol)
        && eval.g.iter().all(|v| *v >= -tol)
        && eval.h.iter().all(|v| v.abs() <= tol);
    feasible.then_some(candidate)
}

/// Enumerate all 2^n_comp active-set patterns, solve each smooth subsystem,
/// and return the de-duplicated feasible solutions in pattern order.
/// Subproblem failures are silently skipped; an empty result means the
/// problem has no solution the enumeration could certify.
pub fn brute_force_ncp(problem: &(dyn NcpProblem + Sync), x0: &[f64], tol: f64) -> Vec<Vec<f64>> {
    let n_comp = problem.n_comp();
    assert!(
        n_comp <= 12,
        "enumeration limited to 12 complementarity pairs"
    );
    let n_patterns = 1u64 << n_comp;

    #[cfg(feature = "parallel")]
    let candidates: Vec<Option<Vec<f64>>> = {
        use rayon::prelude::*;
        // SAFETY of determinism: output is indexed by pattern, merged below
        // in pattern order regardless of completion order.
        (0..n_patterns)
            .into_par_iter()
            .map(|p| solve_pattern(problem, p, x0).and_then(|x| keep_feasible(problem, x, tol)))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let candidates: Vec<Option<Vec<f64>>> = (0..n_patterns)
        .map(|p| solve_pattern(problem, p, x0).and_then(|x| keep_feasible(problem, x, tol)))
        .collect();

    let mut out: Vec<Vec<f64>> = Vec::new();
    for cand in candidates.into_iter().flatten() {
        let dup = out.iter().any(|kept| {
            kept.iter()
                .zip(&cand)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
                <= 1e-8
        });
        if !dup {
            out.push(cand);
        }
    }
    out
}

/// Fixed corpus of small complementarity problems: the worked scalar and
/// 2-variable examples, an infeasible instance, and seeded random
/// diagonally-dominant (hence uniquely solvable) LCPs up to dimension 8.
pub fn lcp_corpus() -> Vec<(String, LcpProblem)> {
    let mut corpus: Vec<(String, LcpProblem)> = vec![
        (
            "scalar-positive-root".into(),
            LcpProblem {
                m: vec![vec![1.0]],
                q: vec![-2.0],
            },
        ),
        (
            "scalar-zero-root".into(),
            LcpProblem {
                m: vec![vec![2.0]],
                q: vec![1.0],
            },
        ),
        (
            "two-var-interior".into(),
            LcpProblem {
                m: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
                q: vec![-3.0, -3.0],
            },
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    for k in 0..21 {
        let n = 1 + k % 8;
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rng.gen_range(-1.0_f64..1.0);
                if i == j {
                    *v = (*v).abs() + n as f64;
                }
            }
        }
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        corpus.push((format!("random-dd-{k:02}-n{n}"), LcpProblem { m, q }));
    }
    corpus
}

/// An LCP with no solution: G = -1 independent of x.
pub fn infeasible_lcp() -> LcpProblem {
    LcpProblem {
        m: vec![vec![0.0]],
        q: vec![-1.0],
    }
}

/// Outcome of a whole-run mass-balance audit. Errors are signed
/// (stored-mass change minus net boundary influx, kg/m^2); relative errors
/// are normalized by the total injected hydrogen mass, falling back to the
/// initial water inventory for a zero-injection run.
#[derive(Clone, Copy, Debug)]
pub struct MassAudit {
    pub water_error: f64,
    pub hydrogen_error: f64,
    pub water_rel_error: f64,
    pub hydrogen_rel_error: f64,
    pub total_injected_hydrogen: f64,
}

/// Telescoped balance over a completed run: the stored-mass change of each
/// component must equal the time integral of its net boundary influx. Final
/// stored masses are recomputed from the final state rather than read from
/// the last step record, so the records themselves are audited too.
pub fn mass_audit(result: &RunResult, medium: &MediumParams, fluid: &FluidParams) -> MassAudit {
    let (w0, h0) = result.initial_masses;
    let (w1, h1) = component_masses(&result.final_state, &result.grid, medium, fluid);
    let mut net_w = 0.0;
    let mut net_h = 0.0;
    let mut injected = 0.0;
    for rec in &result.steps {
        net_w += (rec.left_face.0 - rec.right_face.0) * rec.dt;
        net_h += (rec.left_face.1 - rec.right_face.1) * rec.dt;
        injected += rec.applied_injection * rec.dt;
    }
    let norm = if injected > 0.0 { injected } else { w0 };
    let water_error = (w1 - w0) - net_w;
    let hydrogen_error = (h1 - h0) - net_h;
    MassAudit {
        water_error,
        hydrogen_error,
        water_rel_error: water_error.abs() / norm,
        hydrogen_rel_error: hydrogen_error.abs() / norm,
        total_injected_hydrogen: injected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncp::{newton_min_solve, NewtonOptions};

    #[test]
    fn fd_of_square_function() {
        let f = |x: &[f64]| -> Result<Vec<f64>, NcpError> { Ok(vec![x[0] * x[0]]) };
        let jac = fd_jacobian(f, &[3.0], 1e-5).unwrap();
        assert!((jac[0][0] - 6.0).abs() < 1e-9, "{}", jac[0][0]);
    }

    #[test]
    fn fd_recovers_linear_maps_exactly() {
        let a = [
            [2.0, -1.0, 0.5],
            [0.0, 3.0, 1.0],
            [1e-6, 1e6, -2.0],
            [4.0, 4.0, 4.0],
        ];
        let f = |x: &[f64]| -> Result<Vec<f64>, NcpError> {
            Ok(a.iter()
                .map(|row| row.iter().zip(x).map(|(r, xi)| r * xi).sum())
                .collect())
        };
        for h in [1e-6, 1e-3, 0.37] {
            let jac = fd_jacobian(f, &[1.0, -2.0, 0.5], h).unwrap();
            for r in 0..4 {
                // cancellation noise scales with the row's dominant entry
                let scale = a[r].iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                for c in 0..3 {
                    assert!(
                        (jac[r][c] - a[r][c]).abs() <= 1e-9 * scale,
                        "h = {h}: ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn assembled_jacobian_matches_central_differences() {
        let medium = MediumParams::new(5e-20, 0.15, 2e6, 1.49, 0.4, 0.0).unwrap();
        let fluid =
            FluidParams::new(1e-3, 9e-6, 1e3, 7.65e-6, 1e-2, 2e-3, 3e-9, 303.0, 8e-2).unwrap();
        let grid = Grid::new(10, 10.0);
        let bc = BoundarySpec {
            left_water_flux: 0.0,
            left_hydrogen_flux: 1.766e-13,
            right_p_l: 1e6,
        };
        let dt = 5000.0 * crate::discretization::YEAR_SECONDS;
        let diffs = jacobian_check(&grid, &medium, &fluid, &bc, dt, 20, 99).unwrap();
        for (k, d) in diffs.iter().enumerate() {
            assert!(d.max_rel_error <= 1e-6, "state {k}: {d}");
        }
    }

    #[test]
    fn brute_force_scalar_examples() {
        let sols = brute_force_ncp(
            &LcpProblem {
                m: vec![vec![1.0]],
                q: vec![-2.0],
            },
            &[1.0],
            1e-9,
        );
        assert_eq!(sols.len(), 1);
        assert!((sols[0][0] - 2.0).abs() < 1e-9);

        let sols = brute_force_ncp(
            &LcpProblem {
                m: vec![vec![2.0]],
                q: vec![1.0],
            },
            &[1.0],
            1e-9,
        );
        assert_eq!(sols.len(), 1);
        assert!(sols[0][0].abs() < 1e-9);
    }

    #[test]
    fn brute_force_two_variable_lcp() {
        let sols = brute_force_ncp(
            &LcpProblem {
                m: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
                q: vec![-3.0, -3.0],
            },
            &[0.0, 0.0],
            1e-9,
        );
        assert_eq!(sols.len(), 1);
        assert!((sols[0][0] - 1.0).abs() < 1e-9);
        assert!((sols[0][1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn brute_force_finds_nothing_for_infeasible_lcp() {
        let sols = brute_force_ncp(&infeasible_lcp(), &[0.5], 1e-9);
        assert!(sols.is_empty());
    }

    #[test]
    fn corpus_agreement_between_solver_and_enumeration() {
        for (name, p) in lcp_corpus() {
            let n = p.q.len();
            let x0 = vec![0.0; n];
            let brute = brute_force_ncp(&p, &x0, 1e-9);
            assert_eq!(brute.len(), 1, "{name}: expected a unique solution");
            let (x, rep) = newton_min_solve(&p, &x0, &NewtonOptions::default())
                .unwrap_or_else(|e| panic!("{name}: solver failed: {e}"));
            assert!(rep.converged);
            for (a, b) in x.iter().zip(&brute[0]) {
                assert!(
                    (a - b).abs() <= 1e-8,
                    "{name}: solver {a} vs enumeration {b}"
                );
            }
        }
    }

    #[test]
    fn jacobian_comparison_reports_worst_row_entry() {
        let analytic = vec![vec![1.0, 1000.0], vec![0.0, 0.0]];
        let fd = vec![vec![1.5, 1000.0], vec![0.0, 0.0]];
        let d = compare_jacobians(&analytic, &fd);
        // error 0.5 normalized by the row max 1000
        assert!((d.max_rel_error - 5e-4).abs() < 1e-15);
        assert_eq!(d.location, (0, 0));
        assert_eq!(d.max_abs_error, 0.5);
    }

    fn audit_spec(total_years: f64, injection: f64) -> crate::simulation::RunSpec {
        use crate::discretization::YEAR_SECONDS;
        crate::simulation::RunSpec {
            grid: Grid::new(40, 200.0),
            medium: MediumParams::new(5e-20, 0.15, 2e6, 1.49, 0.4, 0.0).unwrap(),
            fluid: FluidParams::new(1e-3, 9e-6, 1e3, 7.65e-6, 1e-2, 2e-3, 3e-9, 303.0, 8e-2)
                .unwrap(),
            schedule: crate::simulation::Schedule {
                injection_flux: injection,
                injection_end: total_years * YEAR_SECONDS,
                total_time: total_years * YEAR_SECONDS,
                dt: 5000.0 * YEAR_SECONDS,
                snapshot_times: vec![],
            },
            initial: CellState {
                s_l: 1.0,
                p_l: 1e6,
                chi_h_l: 0.0,
            },
            right_p_l: 1e6,
            newton: NewtonOptions::default(),
            grad_tol: 1.0,
            stat_tol: 1e-8,
            delta_s_scale: 1e-3,
        }
    }

    #[test]
    fn mass_audit_zero_injection_run_balances_to_roundoff() {
        let spec = audit_spec(10000.0, 0.0);
        let (result, failure) = crate::simulation::run(&spec);
        assert!(failure.is_none());
        let audit = mass_audit(&result, &spec.medium, &spec.fluid);
        assert_eq!(audit.total_injected_hydrogen, 0.0);
        // normalized by the (large) initial water inventory
        assert!(audit.water_rel_error < 1e-14, "{audit:?}");
        assert!(audit.hydrogen_rel_error < 1e-14, "{audit:?}");
    }

    #[test]
    fn mass_audit_early_injection_stores_what_was_injected() {
        use crate::discretization::YEAR_SECONDS;
        let q = 5.57e-6 / YEAR_SECONDS;
        let mut spec = audit_spec(4000.0, q);
        // gas-free early window, short enough that the dissolved front
        // measurably does not reach the outflow boundary; dt must be small
        // too, since each implicit step spreads mass with a resolvent kernel
        // of tail length sqrt(D dt) (measured leak here: 3e-10 relative)
        spec.grid = Grid::new(200, 200.0);
        spec.schedule.dt = 250.0 * YEAR_SECONDS;
        let (result, failure) = crate::simulation::run(&spec);
        assert!(failure.is_none());
        let audit = mass_audit(&result, &spec.medium, &spec.fluid);
        assert!(
            (audit.total_injected_hydrogen - q * spec.schedule.total_time).abs()
                < 1e-12 * audit.total_injected_hydrogen
        );
        assert!(audit.hydrogen_rel_error <= 1e-8, "{audit:?}");
        assert!(audit.water_rel_error <= 1e-8, "{audit:?}");
        // hydrogen has not reached the outflow boundary yet, so the stored
        // change alone accounts for the injection
        let (_, h0) = result.initial_masses;
        let (_, h1) =
            component_masses(&result.final_state, &result.grid, &spec.medium, &spec.fluid);
        assert!(
            ((h1 - h0) - audit.total_injected_hydrogen).abs()
                <= 1e-8 * audit.total_injected_hydrogen,
            "stored {} vs injected {}",
            h1 - h0,
            audit.total_injected_hydrogen
        );
    }
}
