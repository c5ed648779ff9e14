//! Cell-centered finite-volume discretization of two-phase (liquid/gas)
//! two-component (water/hydrogen) flow on a uniform 1-D grid: two-point flux
//! approximation, full phase-potential upwinding, implicit Euler in time, and
//! the analytic block-tridiagonal Jacobian.
//!
//! Unknown layout per cell: (s_l, p_l, chi_h_l). Residual layout per cell:
//! water mass balance, hydrogen mass balance, and the complementarity pair
//! F = 1 - s_l, G = H (p_l + p_c) - M_h c_l chi. All residuals are per unit
//! volume, kg/(m^3 s). Fluxes are positive rightward.

use crate::constitutive::{capillary_pressure, mobility, FluidParams, MediumParams, Phase, ValDer};
use crate::ncp::{JacobianParts, NcpError, NcpEval, NcpProblem};

/// Julian year in seconds; configs and outputs use years, internals seconds.
pub const YEAR_SECONDS: f64 = 3.15576e7;

/// Uniform 1-D grid. Single-cell grids are allowed for reduction tests;
/// simulation configs require at least two cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n_cells: usize,
    pub length: f64,
    pub dx: f64,
}

impl Grid {
    pub fn new(n_cells: usize, length: f64) -> Self {
        assert!(n_cells >= 1, "grid needs at least one cell");
        assert!(
            length.is_finite() && length > 0.0,
            "grid length must be positive"
        );
        Self {
            n_cells,
            length,
            dx: length / n_cells as f64,
        }
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.n_cells)
            .map(|i| (i as f64 + 0.5) * self.dx)
            .collect()
    }
}

/// Primary unknowns of one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellState {
    pub s_l: f64,
    pub p_l: f64,
    pub chi_h_l: f64,
}

impl CellState {
    /// Gas pressure p_l + p_c(s_l).
    pub fn gas_pressure(&self, medium: &MediumParams) -> f64 {
        self.p_l + capillary_pressure(self.s_l, medium).val
    }
}

pub fn flatten(cells: &[CellState]) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * cells.len());
    for c in cells {
        x.push(c.s_l);
        x.push(c.p_l);
        x.push(c.chi_h_l);
    }
    x
}

pub fn unflatten(x: &[f64]) -> Vec<CellState> {
    assert_eq!(
        x.len() % 3,
        0,
        "state vector length must be a multiple of 3"
    );
    x.chunks_exact(3)
        .map(|c| CellState {
            s_l: c[0],
            p_l: c[1],
            chi_h_l: c[2],
        })
        .collect()
}

/// Boundary data: prescribed component mass fluxes on the left (kg/(m^2 s),
/// positive into the domain), Dirichlet liquid state on the right
/// (fully saturated, fixed pressure, hydrogen-free far field on inflow).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySpec {
    pub left_water_flux: f64,
    pub left_hydrogen_flux: f64,
    pub right_p_l: f64,
}

/// Per-cell volumetric source terms, kg/(m^3 s). Zero in the benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct Sources {
    pub water: Vec<f64>,
    pub hydrogen: Vec<f64>,
}

/// Characteristic scale of each equation class, used to normalize residuals
/// so convergence thresholds are unit-independent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquationScales {
    pub water: f64,
    pub hydrogen: f64,
    pub complementarity: f64,
}

impl EquationScales {
    pub fn unit() -> Self {
        Self {
            water: 1.0,
            hydrogen: 1.0,
            complementarity: 1.0,
        }
    }

    /// Scales from the initial state: mass equations scale with the
    /// accumulation-rate magnitude over one step (a saturation swing
    /// `delta_s` for water, the dissolved-at-p_init inventory for hydrogen),
    /// the complementarity class with the Henry-law magnitude H p_init.
    pub fn from_initial(
        medium: &MediumParams,
        fluid: &FluidParams,
        dt: f64,
        p_init: f64,
        delta_s: f64,
    ) -> Self {
        let comp = fluid.henry_mass * p_init;
        Self {
            water: medium.porosity * fluid.liquid_density * delta_s / dt,
            hydrogen: medium.porosity * comp / dt,
            complementarity: comp,
        }
    }
}

/// Component mass flux through one face with its derivatives w.r.t. the
/// (s_l, p_l, chi_h_l) of the two adjacent cells. Boundary faces leave the
/// missing side zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct FaceFlux {
    water: f64,
    hydrogen: f64,
    d_water: [[f64; 3]; 2],
    d_hydrogen: [[f64; 3]; 2],
}

/// Fully assembled residual system at one state: values, analytic Jacobian
/// blocks, and the boundary fluxes for mass accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembly {
    /// Interleaved (water_i, hydrogen_i), length 2N.
    pub h: Vec<f64>,
    /// F_i = 1 - s_l,i.
    pub f: Vec<f64>,
    /// G_i = H (p_l,i + p_c(s_l,i)) - M_h c_l chi_i.
    pub g: Vec<f64>,
    pub h_lower: Vec<[[f64; 3]; 2]>,
    pub h_diag: Vec<[[f64; 3]; 2]>,
    pub h_upper: Vec<[[f64; 3]; 2]>,
    pub f_rows: Vec<[f64; 3]>,
    pub g_rows: Vec<[f64; 3]>,
    /// (water, hydrogen) mass flux through the left boundary, kg/(m^2 s).
    pub left_face: (f64, f64),
    /// Same through the right boundary.
    pub right_face: (f64, f64),
}

impl Assembly {
    pub fn into_eval(self) -> NcpEval {
        NcpEval {
            h: self.h,
            f: self.f,
            g: self.g,
            jac: JacobianParts::Tridiag {
                h_lower: self.h_lower,
                h_diag: self.h_diag,
                h_upper: self.h_upper,
                f_rows: self.f_rows,
                g_rows: self.g_rows,
            },
        }
    }
}

/// Upwind volumetric Darcy flux of one phase through the face between `left`
/// and `right`, positive rightward: q = -(K/dx) lambda_up (P_R - P_L) with
/// the phase pressure P and the mobility taken from the higher-pressure cell
/// (ties upwind left). Returns the flux, its six derivatives, and the upwind
/// side (0 = left). Upwind direction is frozen for differentiation.
fn darcy_volumetric(
    phase: Phase,
    left: &CellState,
    right: &CellState,
    dx: f64,
    medium: &MediumParams,
    fluid: &FluidParams,
) -> (f64, [[f64; 3]; 2], usize) {
    let t = medium.permeability / dx;
    let (p_left, p_right, dpl_ds, dpr_ds) = match phase {
        Phase::Liquid => (left.p_l, right.p_l, 0.0, 0.0),
        Phase::Gas => {
            let pc_l = capillary_pressure(left.s_l, medium);
            let pc_r = capillary_pressure(right.s_l, medium);
            (
                left.p_l + pc_l.val,
                right.p_l + pc_r.val,
                pc_l.der,
                pc_r.der,
            )
        }
    };
    let up = if p_left >= p_right { 0 } else { 1 };
    let s_up = if up == 0 { left.s_l } else { right.s_l };
    let lam = mobility(phase, s_up, medium, fluid);
    let dp = p_right - p_left;
    let q = -t * lam.val * dp;

    let mut d = [[0.0; 3]; 2];
    // pressure-difference part, including the capillary contribution for gas
    d[0][0] += t * lam.val * dpl_ds;
    d[0][1] += t * lam.val;
    d[1][0] -= t * lam.val * dpr_ds;
    d[1][1] -= t * lam.val;
    // upwind mobility part
    d[up][0] += -t * lam.der * dp;
    (q, d, up)
}

/// Mass flux of one phase (volumetric flux times the upwind phase density)
/// with derivatives w.r.t. the six adjacent unknowns.
pub fn phase_darcy_flux(
    phase: Phase,
    left: &CellState,
    right: &CellState,
    dx: f64,
    medium: &MediumParams,
    fluid: &FluidParams,
) -> (f64, [[f64; 3]; 2]) {
    let (q, dq, up) = darcy_volumetric(phase, left, right, dx, medium, fluid);
    match phase {
        Phase::Liquid => {
            let rho = fluid.liquid_density;
            let mut d = [[0.0; 3]; 2];
            for side in 0..2 {
                for k in 0..3 {
                    d[side][k] = rho * dq[side][k];
                }
            }
            (rho * q, d)
        }
        Phase::Gas => {
            let up_cell = if up == 0 { left } else { right };
            let pc_up = capillary_pressure(up_cell.s_l, medium);
            let pg_up = up_cell.p_l + pc_up.val;
            let rho = fluid.gas_compressibility * pg_up;
            let mut d = [[0.0; 3]; 2];
            for side in 0..2 {
                for k in 0..3 {
                    d[side][k] = rho * dq[side][k];
                }
            }
            d[up][0] += fluid.gas_compressibility * pc_up.der * q;
            d[up][1] += fluid.gas_compressibility * q;
            (rho * q, d)
        }
    }
}

/// Diffusive hydrogen mass flux j = -phi M_h c_l D s_face (chi_R - chi_L)/dx
/// with the arithmetic-mean face saturation, plus derivatives.
pub fn diffusive_flux(
    left: &CellState,
    right: &CellState,
    dx: f64,
    medium: &MediumParams,
    fluid: &FluidParams,
) -> (f64, [[f64; 3]; 2]) {
    let dfac = medium.porosity * fluid.chi_mass_factor * fluid.diffusion_coeff / dx;
    let s_face = 0.5 * (left.s_l + right.s_l);
    let dchi = right.chi_h_l - left.chi_h_l;
    let j = -dfac * s_face * dchi;
    let mut d = [[0.0; 3]; 2];
    d[0][0] = -dfac * 0.5 * dchi;
    d[1][0] = -dfac * 0.5 * dchi;
    d[0][2] = dfac * s_face;
    d[1][2] = -dfac * s_face;
    (j, d)
}

/// Component fluxes through an interior face: water rides the liquid phase
/// and counter-diffuses against hydrogen; hydrogen moves as dissolved mass in
/// the liquid, as gas, and by diffusion.
fn interior_face(
    left: &CellState,
    right: &CellState,
    dx: f64,
    medium: &MediumParams,
    fluid: &FluidParams,
) -> FaceFlux {
    let (q_l, dq_l, up_l) = darcy_volumetric(Phase::Liquid, left, right, dx, medium, fluid);
    let (fg, dfg) = phase_darcy_flux(Phase::Gas, left, right, dx, medium, fluid);
    let (j, dj) = diffusive_flux(left, right, dx, medium, fluid);

    let rho_w = fluid.liquid_density;
    let mc = fluid.chi_mass_factor;
    let chi_up = if up_l == 0 {
        left.chi_h_l
    } else {
        right.chi_h_l
    };

    let mut out = FaceFlux {
        water: rho_w * q_l - j,
        hydrogen: mc * chi_up * q_l + fg + j,
        ..Default::default()
    };
    for side in 0..2 {
        for k in 0..3 {
            out.d_water[side][k] = rho_w * dq_l[side][k] - dj[side][k];
            out.d_hydrogen[side][k] = mc * chi_up * dq_l[side][k] + dfg[side][k] + dj[side][k];
        }
    }
    out.d_hydrogen[up_l][2] += mc * q_l;
    out
}

/// Right-boundary face against a Dirichlet ghost cell: a saturated,
/// hydrogen-free liquid reservoir at fixed pressure. The advective dissolved
/// fraction is upwinded as usual (outflow exports the interior value, inflow
/// imports none), and diffusion always drains toward the zero far-field
/// fraction, so hydrogen can never enter from the right. The flux stays
/// continuous when the face flips between outflow and inflow because the
/// upwind jump multiplies a vanishing volumetric flux; the ghost's zero gas
/// mobility blocks any gas inflow. Ghost-side derivatives are dropped (not
/// unknowns).
fn right_boundary_face(
    interior: &CellState,
    bc: &BoundarySpec,
    dx: f64,
    medium: &MediumParams,
    fluid: &FluidParams,
) -> FaceFlux {
    let ghost = CellState {
        s_l: 1.0,
        p_l: bc.right_p_l,
        chi_h_l: 0.0,
    };
    let mut face = interior_face(interior, &ghost, dx, medium, fluid);
    face.d_water[1] = [0.0; 3];
    face.d_hydrogen[1] = [0.0; 3];
    face
}

/// Storage per unit bulk volume of each component in one cell, with
/// derivatives of the (water, hydrogen) pair w.r.t. the cell unknowns.
fn accumulation(
    cell: &CellState,
    pc: &ValDer,
    medium: &MediumParams,
    fluid: &FluidParams,
) -> ([f64; 2], [[f64; 3]; 2]) {
    let phi = medium.porosity;
    let mc = fluid.chi_mass_factor;
    let cg = fluid.gas_compressibility;
    let p_g = cell.p_l + pc.val;

    let water = phi * fluid.liquid_density * cell.s_l;
    let hydrogen = phi * (cell.s_l * mc * cell.chi_h_l + (1.0 - cell.s_l) * cg * p_g);
    let d = [
        [phi * fluid.liquid_density, 0.0, 0.0],
        [
            phi * (mc * cell.chi_h_l - cg * p_g + (1.0 - cell.s_l) * cg * pc.der),
            phi * (1.0 - cell.s_l) * cg,
            phi * cell.s_l * mc,
        ],
    ];
    ([water, hydrogen], d)
}

/// Total (water, hydrogen) inventory per unit cross-section, kg/m^2.
pub fn component_masses(
    cells: &[CellState],
    grid: &Grid,
    medium: &MediumParams,
    fluid: &FluidParams,
) -> (f64, f64) {
    let mut water = 0.0;
    let mut hydrogen = 0.0;
    for c in cells {
        let pc = capillary_pressure(c.s_l, medium);
        let (a, _) = accumulation(c, &pc, medium, fluid);
        water += a[0] * grid.dx;
        hydrogen += a[1] * grid.dx;
    }
    (water, hydrogen)
}

fn check_admissible(i: usize, c: &CellState, p_g: f64) -> Result<(), NcpError> {
    if !(c.s_l.is_finite() && c.p_l.is_finite() && c.chi_h_l.is_finite()) {
        return Err(NcpError::EvaluationFailure {
            cell: i,
            message: format!(
                "non-finite state (s_l = {}, p_l = {}, chi_h_l = {})",
                c.s_l, c.p_l, c.chi_h_l
            ),
        });
    }
    if !(p_g.is_finite() && p_g > 0.0) {
        return Err(NcpError::EvaluationFailure {
            cell: i,
            message: format!("non-positive gas pressure {p_g}"),
        });
    }
    Ok(())
}

struct CellPre {
    pc: ValDer,
    p_g: f64,
}

fn cell_pre(i: usize, c: &CellState, medium: &MediumParams) -> Result<CellPre, NcpError> {
    let pc = capillary_pressure(c.s_l, medium);
    let p_g = c.p_l + pc.val;
    check_admissible(i, c, p_g)?;
    Ok(CellPre { pc, p_g })
}

fn face_at(
    k: usize,
    cells: &[CellState],
    grid: &Grid,
    medium: &MediumParams,
    fluid: &FluidParams,
    bc: &BoundarySpec,
) -> FaceFlux {
    let n = cells.len();
    if k == 0 {
        FaceFlux {
            water: bc.left_water_flux,
            hydrogen: bc.left_hydrogen_flux,
            ..Default::default()
        }
    } else if k == n {
        right_boundary_face(&cells[n - 1], bc, grid.dx, medium, fluid)
    } else {
        interior_face(&cells[k - 1], &cells[k], grid.dx, medium, fluid)
    }
}

#[allow(clippy::too_many_arguments)]
fn cell_row(
    i: usize,
    cells: &[CellState],
    pre: &[CellPre],
    faces: &[FaceFlux],
    state_old: &[CellState],
    dt: f64,
    grid: &Grid,
    medium: &MediumParams,
    fluid: &FluidParams,
    sources: Option<&Sources>,
) -> CellRow {
    let c = &cells[i];
    let inv_dx = 1.0 / grid.dx;
    let (acc_new, d_acc) = accumulation(c, &pre[i].pc, medium, fluid);
    let pc_old = capillary_pressure(state_old[i].s_l, medium);
    let (acc_old, _) = accumulation(&state_old[i], &pc_old, medium, fluid);
    let (q_w, q_h) = match sources {
        Some(s) => (s.water[i], s.hydrogen[i]),
        None => (0.0, 0.0),
    };
    let fl = &faces[i];
    let fr = &faces[i + 1];

    let mut row = CellRow {
        h: [
            (acc_new[0] - acc_old[0]) / dt + (fr.water - fl.water) * inv_dx - q_w,
            (acc_new[1] - acc_old[1]) / dt + (fr.hydrogen - fl.hydrogen) * inv_dx - q_h,
        ],
        f: 1.0 - c.s_l,
        g: fluid.henry_mass * pre[i].p_g - fluid.chi_mass_factor * c.chi_h_l,
        f_row: [-1.0, 0.0, 0.0],
        g_row: [
            fluid.henry_mass * pre[i].pc.der,
            fluid.henry_mass,
            -fluid.chi_mass_factor,
        ],
        lower: [[0.0; 3]; 2],
        diag: [[0.0; 3]; 2],
        upper: [[0.0; 3]; 2],
    };
    // k indexes the same unknown column across four arrays at once
    #[allow(clippy::needless_range_loop)]
    for k in 0..3 {
        // water row r = 0, hydrogen row r = 1
        for (r, d_faces) in [
            (0, (&fl.d_water, &fr.d_water)),
            (1, (&fl.d_hydrogen, &fr.d_hydrogen)),
        ] {
            row.diag[r][k] = d_acc[r][k] / dt + (d_faces.1[0][k] - d_faces.0[1][k]) * inv_dx;
            row.lower[r][k] = -d_faces.0[0][k] * inv_dx;
            row.upper[r][k] = d_faces.1[1][k] * inv_dx;
        }
    }
    row
}

struct CellRow {
    h: [f64; 2],
    f: f64,
    g: f64,
    f_row: [f64; 3],
    g_row: [f64; 3],
    lower: [[f64; 3]; 2],
    diag: [[f64; 3]; 2],
    upper: [[f64; 3]; 2],
}

fn gather(cells_n: usize, faces: Vec<FaceFlux>, rows: Vec<CellRow>) -> Assembly {
    let n = cells_n;
    let mut asm = Assembly {
        h: Vec::with_capacity(2 * n),
        f: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        h_lower: Vec::with_capacity(n),
        h_diag: Vec::with_capacity(n),
        h_upper: Vec::with_capacity(n),
        f_rows: Vec::with_capacity(n),
        g_rows: Vec::with_capacity(n),
        left_face: (faces[0].water, faces[0].hydrogen),
        right_face: (faces[n].water, faces[n].hydrogen),
    };
    for r in rows {
        asm.h.push(r.h[0]);
        asm.h.push(r.h[1]);
        asm.f.push(r.f);
        asm.g.push(r.g);
        asm.h_lower.push(r.lower);
        asm.h_diag.push(r.diag);
        asm.h_upper.push(r.upper);
        asm.f_rows.push(r.f_row);
        asm.g_rows.push(r.g_row);
    }
    asm
}

/// Sequential reference assembly. The parallel variant must match it
/// bitwise; each output slot is computed by exactly one task with a fixed
/// internal summation order.
#[allow(clippy::too_many_arguments)]
pub fn assemble_system_sequential(
    x_new: &[f64],
    state_old: &[CellState],
    dt: f64,
    grid: &Grid,
    medium: &MediumParams,
    fluid: &FluidParams,
    bc: &BoundarySpec,
    sources: Option<&Sources>,
) -> Result<Assembly, NcpError> {
    let cells = unflatten(x_new);
    let n = cells.len();
    assert_eq!(n, grid.n_cells);
    assert_eq!(state_old.len(), n);
    assert!(dt > 0.0 && dt.is_finite());
    if let Some(s) = sources {
        assert_eq!(s.water.len(), n);
        assert_eq!(s.hydrogen.len(), n);
    }

    let pre = (0..n)
        .map(|i| cell_pre(i, &cells[i], medium))
        .collect::<Result<Vec<_>, _>>()?;
    let faces: Vec<FaceFlux> = (0..=n)
        .map(|k| face_at(k, &cells, grid, medium, fluid, bc))
        .collect();
    let rows: Vec<CellRow> = (0..n)
        .map(|i| {
            cell_row(
                i, &cells, &pre, &faces, state_old, dt, grid, medium, fluid, sources,
            )
        })
        .collect();
    Ok(gather(n, faces, rows))
}

/// Assembly entry point; runs cell and face passes in parallel when the
/// `parallel` feature is enabled, producing bitwise-identical output to the
/// sequential reference.
#[allow(clippy::too_many_arguments)]
#[cfg(feature = "parallel")]
pub fn assemble_system(
    x_new: &[f64],
    state_old: &[CellState],
    dt: f64,
    grid: &Grid,
    medium: &MediumParams,
    fluid: &FluidParams,
    bc: &BoundarySpec,
    sources: Option<&Sources>,
) -> Result<Assembly, NcpError> {
    use rayon::prelude::*;

    let cells = unflatten(x_new);
    let n = cells.len();
    assert_eq!(n, grid.n_cells);
    assert_eq!(state_old.len(), n);
    assert!(dt > 0.0 && dt.is_finite());
    if let Some(s) = sources {
        assert_eq!(s.water.len(), n);
        assert_eq!(s.hydrogen.len(), n);
    }

    let pre = (0..n)
        .into_par_iter()
        .map(|i| cell_pre(i, &cells[i], medium))
        .collect::<Result<Vec<_>, _>>()?;
    let faces: Vec<FaceFlux> = (0..=n)
        .into_par_iter()
        .map(|k| face_at(k, &cells, grid, medium, fluid, bc))
        .collect();
    let rows: Vec<CellRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            cell_row(
                i, &cells, &pre, &faces, state_old, dt, grid, medium, fluid, sources,
            )
        })
        .collect();
    Ok(gather(n, faces, rows))
}

#[allow(clippy::too_many_arguments)]
#[cfg(not(feature = "parallel"))]
pub fn assemble_system(
    x_new: &[f64],
    state_old: &[CellState],
    dt: f64,
    grid: &Grid,
    medium: &MediumParams,
    fluid: &FluidParams,
    bc: &BoundarySpec,
    sources: Option<&Sources>,
) -> Result<Assembly, NcpError> {
    assemble_system_sequential(x_new, state_old, dt, grid, medium, fluid, bc, sources)
}

/// One implicit-Euler time step as a nonlinear complementarity problem over
/// the new state.
pub struct TimeStepProblem<'a> {
    pub grid: &'a Grid,
    pub medium: &'a MediumParams,
    pub fluid: &'a FluidParams,
    pub bc: BoundarySpec,
    pub state_old: &'a [CellState],
    pub dt: f64,
    pub sources: Option<&'a Sources>,
    pub scales: EquationScales,
}

impl NcpProblem for TimeStepProblem<'_> {
    fn n_eq(&self) -> usize {
        2 * self.grid.n_cells
    }
    fn n_comp(&self) -> usize {
        self.grid.n_cells
    }
    fn n_unknowns(&self) -> usize {
        3 * self.grid.n_cells
    }
    fn eval(&self, x: &[f64]) -> Result<NcpEval, NcpError> {
        let asm = assemble_system(
            x,
            self.state_old,
            self.dt,
            self.grid,
            self.medium,
            self.fluid,
            &self.bc,
            self.sources,
        )?;
        Ok(asm.into_eval())
    }
    fn eq_scales(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.grid.n_cells);
        for _ in 0..self.grid.n_cells {
            v.push(self.scales.water);
            v.push(self.scales.hydrogen);
        }
        v
    }
    fn comp_scales(&self) -> Vec<f64> {
        vec![self.scales.complementarity; self.grid.n_cells]
    }
}
