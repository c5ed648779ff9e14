//! Implicit-Euler time loop: injection schedule, per-step Newton solves with
//! a bounded step-halving fallback, snapshot capture, event detection, and
//! per-step diagnostics for mass auditing.

use crate::constitutive::{capillary_pressure, FluidParams, MediumParams};
use crate::discretization::{
    assemble_system, component_masses, flatten, unflatten, BoundarySpec, CellState, EquationScales,
    Grid, TimeStepProblem, YEAR_SECONDS,
};
use crate::ncp::{newton_min_solve, NcpError, NewtonOptions, NewtonReport};
use thiserror::Error;

/// A cell counts as holding gas when s_g exceeds this.
pub const GAS_PRESENCE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step failed at t = {t_years:.1} years after {attempts} attempts (dt down to {dt_final_years:.3} years): {source}")]
    StepFailure {
        t_years: f64,
        attempts: usize,
        dt_final_years: f64,
        source: NcpError,
    },
}

/// Injection and stepping schedule, all in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    /// Prescribed total hydrogen mass flux at the left boundary, kg/(m^2 s).
    pub injection_flux: f64,
    pub injection_end: f64,
    pub total_time: f64,
    pub dt: f64,
    pub snapshot_times: Vec<f64>,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt = {} must be positive", self.dt));
        }
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(format!("total_time = {} must be positive", self.total_time));
        }
        if !(self.injection_end >= 0.0 && self.injection_end <= self.total_time) {
            return Err(format!(
                "injection_end = {} must lie in [0, total_time]",
                self.injection_end
            ));
        }
        if !(self.injection_flux >= 0.0 && self.injection_flux.is_finite()) {
            return Err(format!(
                "injection_flux = {} must be non-negative",
                self.injection_flux
            ));
        }
        let mut prev = 0.0;
        for &t in &self.snapshot_times {
            if t < prev || t > self.total_time {
                return Err(format!(
                    "snapshot times must be sorted and within [0, {}]",
                    self.total_time
                ));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Injection flux at time t: the prescribed value while t < injection_end
/// (right-open), zero afterward. Steps sample it at their start time.
pub fn injection_flux_at(t: f64, schedule: &Schedule) -> f64 {
    if t < schedule.injection_end {
        schedule.injection_flux
    } else {
        0.0
    }
}

/// Uniform initial state; the default benchmark starts fully saturated and
/// hydrogen-free.
pub fn initial_state(grid: &Grid, init: CellState) -> Vec<CellState> {
    vec![init; grid.n_cells]
}

/// Everything one run needs besides file I/O.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub grid: Grid,
    pub medium: MediumParams,
    pub fluid: FluidParams,
    pub schedule: Schedule,
    /// Uniform initial cell state; its pressure also sets the scaling and
    /// stationarity reference magnitudes.
    pub initial: CellState,
    pub right_p_l: f64,
    pub newton: NewtonOptions,
    /// Stationarity: max |grad p_l| below this (Pa/m) ...
    pub grad_tol: f64,
    /// ... and max scaled per-step state change below this.
    pub stat_tol: f64,
    /// Characteristic saturation swing per step for the water-equation scale.
    pub delta_s_scale: f64,
}

impl RunSpec {
    pub fn scales(&self) -> EquationScales {
        EquationScales::from_initial(
            &self.medium,
            &self.fluid,
            self.schedule.dt,
            self.initial.p_l,
            self.delta_s_scale,
        )
    }
}

/// Spatial profile at one captured time.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub time_years: f64,
    pub x: Vec<f64>,
    pub s_l: Vec<f64>,
    pub s_g: Vec<f64>,
    pub p_l: Vec<f64>,
    pub p_g: Vec<f64>,
    pub chi_h_l: Vec<f64>,
    /// Total hydrogen mass per bulk volume, phi (s_l rho_h_l + s_g rho_g).
    pub rho_h_total: Vec<f64>,
}

impl Snapshot {
    pub fn capture(
        time_s: f64,
        cells: &[CellState],
        grid: &Grid,
        medium: &MediumParams,
        fluid: &FluidParams,
    ) -> Self {
        let n = cells.len();
        let mut snap = Snapshot {
            time_years: time_s / YEAR_SECONDS,
            x: grid.cell_centers(),
            s_l: Vec::with_capacity(n),
            s_g: Vec::with_capacity(n),
            p_l: Vec::with_capacity(n),
            p_g: Vec::with_capacity(n),
            chi_h_l: Vec::with_capacity(n),
            rho_h_total: Vec::with_capacity(n),
        };
        let phi = medium.porosity;
        for c in cells {
            let p_g = c.p_l + capillary_pressure(c.s_l, medium).val;
            snap.s_l.push(c.s_l);
            snap.s_g.push(1.0 - c.s_l);
            snap.p_l.push(c.p_l);
            snap.p_g.push(p_g);
            snap.chi_h_l.push(c.chi_h_l);
            snap.rho_h_total.push(
                phi * (c.s_l * fluid.chi_mass_factor * c.chi_h_l
                    + (1.0 - c.s_l) * fluid.gas_compressibility * p_g),
            );
        }
        snap
    }
}

/// Diagnostics for one accepted step, evaluated at the converged state.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    /// End of the step, seconds.
    pub t_end: f64,
    /// Step size actually used (the scheduled dt unless halving kicked in).
    pub dt: f64,
    /// Injection flux applied during this step, kg/(m^2 s).
    pub applied_injection: f64,
    pub report: NewtonReport,
    pub gas_cells: usize,
    pub rightmost_gas_cell: Option<usize>,
    pub min_s_l: f64,
    pub max_s_l: f64,
    pub max_p_l: f64,
    pub min_chi: f64,
    pub max_chi: f64,
    /// Stored (water, hydrogen) inventory, kg/m^2.
    pub masses: (f64, f64),
    /// Component mass fluxes through the boundaries at the converged state.
    pub left_face: (f64, f64),
    pub right_face: (f64, f64),
    /// Feasibility diagnostics in complementarity-scale units.
    pub f_min_scaled: f64,
    pub g_min_scaled: f64,
    pub comp_max_scaled: f64,
    pub max_grad_p: f64,
    /// Max per-step state change, scaled per field.
    pub max_rel_change: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EventLog {
    /// t_end (years) of the first step that produced gas anywhere.
    pub first_gas_appearance: Option<f64>,
    /// Scheduled injection cutoff, years.
    pub injection_end: f64,
    /// t_end (years) of the step at which the domain last returned gas-free.
    pub last_gas_disappearance: Option<f64>,
    /// Time (years) at which the stationarity test fired, ending the run.
    pub stationarity: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepRecord>,
    pub events: EventLog,
    pub final_state: Vec<CellState>,
    pub initial_masses: (f64, f64),
    pub scales: EquationScales,
    pub grid: Grid,
}

/// One implicit-Euler step, warm-started from the previous converged state.
/// On solver failure the step is retried with dt halved, up to four times;
/// the returned dt is what was actually advanced.
pub fn advance_step(
    state: &[CellState],
    t: f64,
    dt_scheduled: f64,
    spec: &RunSpec,
    scales: &EquationScales,
) -> Result<(Vec<CellState>, NewtonReport, f64), SimError> {
    let q = injection_flux_at(t, &spec.schedule);
    let mut dt = dt_scheduled;
    let mut last_err: Option<NcpError> = None;
    for attempt in 0..5 {
        let bc = BoundarySpec {
            left_water_flux: 0.0,
            left_hydrogen_flux: q,
            right_p_l: spec.right_p_l,
        };
        let problem = TimeStepProblem {
            grid: &spec.grid,
            medium: &spec.medium,
            fluid: &spec.fluid,
            bc,
            state_old: state,
            dt,
            sources: None,
            scales: *scales,
        };
        let x0 = flatten(state);
        match newton_min_solve(&problem, &x0, &spec.newton) {
            Ok((x, report)) => return Ok((unflatten(&x), report, dt)),
            Err(e) => {
                last_err = Some(e);
                if attempt < 4 {
                    dt *= 0.5;
                }
            }
        }
    }
    Err(SimError::StepFailure {
        t_years: t / YEAR_SECONDS,
        attempts: 5,
        dt_final_years: dt / YEAR_SECONDS,
        source: last_err.expect("at least one attempt ran"),
    })
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    step: usize,
    t_end: f64,
    dt: f64,
    q: f64,
    report: NewtonReport,
    state_new: &[CellState],
    state_prev: &[CellState],
    spec: &RunSpec,
    scales: &EquationScales,
) -> StepRecord {
    let grid = &spec.grid;
    let bc = BoundarySpec {
        left_water_flux: 0.0,
        left_hydrogen_flux: q,
        right_p_l: spec.right_p_l,
    };
    // converged-state diagnostics come from one extra assembly
    let asm = assemble_system(
        &flatten(state_new),
        state_prev,
        dt,
        grid,
        &spec.medium,
        &spec.fluid,
        &bc,
        None,
    )
    .expect("converged state must assemble");

    let sc = scales.complementarity;
    let mut f_min = f64::INFINITY;
    let mut g_min = f64::INFINITY;
    let mut comp_max: f64 = 0.0;
    for (f, g) in asm.f.iter().zip(&asm.g) {
        f_min = f_min.min(f / sc);
        g_min = g_min.min(g / sc);
        comp_max = comp_max.max((f.min(*g) / sc).abs());
    }

    let mut gas_cells = 0;
    let mut rightmost = None;
    let mut min_s = f64::INFINITY;
    let mut max_s = f64::NEG_INFINITY;
    let mut max_p = f64::NEG_INFINITY;
    let mut min_chi = f64::INFINITY;
    let mut max_chi = f64::NEG_INFINITY;
    for (i, c) in state_new.iter().enumerate() {
        if 1.0 - c.s_l > GAS_PRESENCE_TOL {
            gas_cells += 1;
            rightmost = Some(i);
        }
        min_s = min_s.min(c.s_l);
        max_s = max_s.max(c.s_l);
        max_p = max_p.max(c.p_l);
        min_chi = min_chi.min(c.chi_h_l);
        max_chi = max_chi.max(c.chi_h_l);
    }

    let mut max_grad = 0.0_f64;
    for w in state_new.windows(2) {
        max_grad = max_grad.max((w[1].p_l - w[0].p_l).abs() / grid.dx);
    }

    let p_ref = spec.initial.p_l;
    let chi_char = spec.fluid.henry_mass * p_ref / spec.fluid.chi_mass_factor;
    let mut max_change = 0.0_f64;
    for (n, p) in state_new.iter().zip(state_prev) {
        max_change = max_change
            .max((n.s_l - p.s_l).abs())
            .max((n.p_l - p.p_l).abs() / p_ref)
            .max((n.chi_h_l - p.chi_h_l).abs() / chi_char);
    }

    StepRecord {
        step,
        t_end,
        dt,
        applied_injection: q,
        report,
        gas_cells,
        rightmost_gas_cell: rightmost,
        min_s_l: min_s,
        max_s_l: max_s,
        max_p_l: max_p,
        min_chi,
        max_chi,
        masses: component_masses(state_new, grid, &spec.medium, &spec.fluid),
        left_face: asm.left_face,
        right_face: asm.right_face,
        f_min_scaled: f_min,
        g_min_scaled: g_min,
        comp_max_scaled: comp_max,
        max_grad_p: max_grad,
        max_rel_change: max_change,
    }
}

/// Execute the schedule. Always returns the (possibly partial) result;
/// a step failure is reported alongside it with everything up to the failed
/// step intact.
pub fn run(spec: &RunSpec) -> (RunResult, Option<SimError>) {
    let scales = spec.scales();
    let grid = spec.grid.clone();
    let mut state = initial_state(&grid, spec.initial);
    let initial_masses = component_masses(&state, &grid, &spec.medium, &spec.fluid);

    let mut result = RunResult {
        snapshots: Vec::new(),
        steps: Vec::new(),
        events: EventLog {
            injection_end: spec.schedule.injection_end / YEAR_SECONDS,
            ..Default::default()
        },
        final_state: state.clone(),
        initial_masses,
        scales,
        grid: grid.clone(),
    };

    let total = spec.schedule.total_time;
    let time_eps = 1e-6 * spec.schedule.dt;
    let mut t = 0.0;
    let mut step = 0;
    let mut snap_idx = 0;
    let mut had_gas = false;
    let mut failure = None;

    while t < total - time_eps {
        let dt_sched = spec.schedule.dt.min(total - t);
        let q = injection_flux_at(t, &spec.schedule);
        let (state_new, report, dt_used) = match advance_step(&state, t, dt_sched, spec, &scales) {
            Ok(ok) => ok,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let t_new = t + dt_used;
        step += 1;
        let record = build_record(
            step, t_new, dt_used, q, report, &state_new, &state, spec, &scales,
        );

        // events
        if record.gas_cells > 0 {
            if !had_gas && result.events.first_gas_appearance.is_none() {
                result.events.first_gas_appearance = Some(t_new / YEAR_SECONDS);
            }
            had_gas = true;
        } else if had_gas {
            result.events.last_gas_disappearance = Some(t_new / YEAR_SECONDS);
            had_gas = false;
        }

        // snapshots: capture each requested time at the nearer of the two
        // completed steps bracketing it
        while snap_idx < spec.schedule.snapshot_times.len()
            && spec.schedule.snapshot_times[snap_idx] <= t_new + time_eps
        {
            let want = spec.schedule.snapshot_times[snap_idx];
            let (cells, at) = if (want - t).abs() < (t_new - want).abs() {
                (&state, t)
            } else {
                (&state_new, t_new)
            };
            result.snapshots.push(Snapshot::capture(
                at,
                cells,
                &grid,
                &spec.medium,
                &spec.fluid,
            ));
            snap_idx += 1;
        }

        let stationary = record.max_grad_p < spec.grad_tol && record.max_rel_change < spec.stat_tol;
        result.steps.push(record);
        state = state_new;
        t = t_new;

        if stationary {
            result.events.stationarity = Some(t / YEAR_SECONDS);
            break;
        }
    }

    // run end is always captured
    let end_captured = result
        .snapshots
        .last()
        .is_some_and(|s| (s.time_years * YEAR_SECONDS - t).abs() <= time_eps);
    if !end_captured {
        result.snapshots.push(Snapshot::capture(
            t,
            &state,
            &grid,
            &spec.medium,
            &spec.fluid,
        ));
    }
    result.final_state = state;
    (result, failure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncp::CFunction;
    use approx::assert_relative_eq;

    fn small_spec(n: usize, total_years: f64, injection: f64) -> RunSpec {
        let medium = MediumParams::new(5e-20, 0.15, 2e6, 1.49, 0.4, 0.0).unwrap();
        let fluid =
            FluidParams::new(1e-3, 9e-6, 1e3, 7.65e-6, 1e-2, 2e-3, 3e-9, 303.0, 8e-2).unwrap();
        let dt = 5000.0 * YEAR_SECONDS;
        RunSpec {
            grid: Grid::new(n, 200.0),
            medium,
            fluid,
            schedule: Schedule {
                injection_flux: injection,
                injection_end: (total_years / 2.0) * YEAR_SECONDS,
                total_time: total_years * YEAR_SECONDS,
                dt,
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
    fn schedule_validation() {
        let mut s = Schedule {
            injection_flux: 1e-13,
            injection_end: 10.0,
            total_time: 20.0,
            dt: 1.0,
            snapshot_times: vec![5.0, 15.0],
        };
        assert!(s.validate().is_ok());
        s.injection_end = 30.0;
        assert!(s.validate().is_err());
        s.injection_end = 10.0;
        s.snapshot_times = vec![15.0, 5.0];
        assert!(s.validate().is_err());
        s.snapshot_times = vec![5.0, 25.0];
        assert!(s.validate().is_err());
        s.snapshot_times.clear();
        s.dt = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn injection_is_a_right_open_step_function() {
        let s = Schedule {
            injection_flux: 2.0,
            injection_end: 100.0,
            total_time: 200.0,
            dt: 1.0,
            snapshot_times: vec![],
        };
        assert_eq!(injection_flux_at(0.0, &s), 2.0);
        assert_eq!(injection_flux_at(99.999, &s), 2.0);
        assert_eq!(injection_flux_at(100.0, &s), 0.0);
        assert_eq!(injection_flux_at(150.0, &s), 0.0);
    }

    #[test]
    fn initial_state_is_saturated_and_hydrogen_free() {
        let grid = Grid::new(5, 10.0);
        let init = CellState {
            s_l: 1.0,
            p_l: 1e6,
            chi_h_l: 0.0,
        };
        let cells = initial_state(&grid, init);
        assert_eq!(cells.len(), 5);
        for c in cells {
            assert_eq!(c.s_l, 1.0);
            assert_eq!(c.p_l, 1e6);
            assert_eq!(c.chi_h_l, 0.0);
        }
    }

    #[test]
    fn equilibrium_step_converges_immediately() {
        let spec = small_spec(10, 1e5, 0.0);
        let scales = spec.scales();
        let state = initial_state(&spec.grid, spec.initial);
        let (new_state, report, dt) =
            advance_step(&state, 0.0, spec.schedule.dt, &spec, &scales).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2, "{} iterations", report.iterations);
        assert_eq!(dt, spec.schedule.dt);
        assert_eq!(new_state, state);
    }

    #[test]
    fn zero_injection_run_is_immediately_stationary() {
        let spec = small_spec(10, 1e6, 0.0);
        let (result, failure) = run(&spec);
        assert!(failure.is_none());
        // the very first step already satisfies both stationarity tests
        assert_eq!(result.steps.len(), 1);
        assert!(result.events.stationarity.is_some());
        assert!(result.events.first_gas_appearance.is_none());
        for c in &result.final_state {
            assert_eq!(c.s_l, 1.0);
        }
        let (w0, h0) = result.initial_masses;
        let (w1, h1) = result.steps.last().unwrap().masses;
        assert_relative_eq!(w0, w1, max_relative = 1e-14);
        assert_eq!(h0, 0.0);
        assert_eq!(h1, 0.0);
    }

    #[test]
    fn short_injection_run_dissolves_hydrogen_first() {
        // 40 cells, 10 steps of injection at the benchmark rate: hydrogen
        // dissolves, no gas yet, pressure stays near hydrostatic
        let q = 5.57e-6 / YEAR_SECONDS;
        let mut spec = small_spec(40, 5e4, q);
        spec.schedule.injection_end = 5e4 * YEAR_SECONDS;
        let (result, failure) = run(&spec);
        assert!(failure.is_none());
        assert_eq!(result.steps.len(), 10);
        for rec in &result.steps {
            assert!(rec.report.converged);
            assert_eq!(rec.dt, spec.schedule.dt, "no halving expected");
            assert!(rec.max_chi > 0.0);
        }
        // mass audit by telescoping the per-step records
        let injected: f64 = result
            .steps
            .iter()
            .map(|r| r.applied_injection * r.dt)
            .sum();
        let outflow: f64 = result.steps.iter().map(|r| r.right_face.1 * r.dt).sum();
        let (_, h_end) = result.steps.last().unwrap().masses;
        let h_balance = h_end - result.initial_masses.1 - injected + outflow;
        assert!(
            h_balance.abs() <= 1e-8 * injected,
            "hydrogen balance error {h_balance} vs injected {injected}"
        );
    }

    #[test]
    fn snapshots_are_captured_at_nearest_steps_plus_run_end() {
        let q = 5.57e-6 / YEAR_SECONDS;
        let mut spec = small_spec(10, 5e4, q);
        spec.schedule.snapshot_times = vec![
            12_000.0 * YEAR_SECONDS, // nearest completed step: 10000
            24_000.0 * YEAR_SECONDS, // nearest: 25000
        ];
        let (result, failure) = run(&spec);
        assert!(failure.is_none());
        let times: Vec<f64> = result.snapshots.iter().map(|s| s.time_years).collect();
        assert_eq!(times.len(), 3);
        assert_relative_eq!(times[0], 10_000.0, max_relative = 1e-12);
        assert_relative_eq!(times[1], 25_000.0, max_relative = 1e-12);
        assert_relative_eq!(times[2], 50_000.0, max_relative = 1e-12);
        for s in &result.snapshots {
            for i in 0..10 {
                assert_relative_eq!(s.s_l[i] + s.s_g[i], 1.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn fischer_burmeister_matches_min_on_a_liquid_only_stretch() {
        let q = 5.57e-6 / YEAR_SECONDS;
        let mut spec_min = small_spec(20, 2e4, q);
        spec_min.schedule.injection_end = 2e4 * YEAR_SECONDS;
        let mut spec_fb = spec_min.clone();
        spec_fb.newton = NewtonOptions {
            cfun: CFunction::FischerBurmeister,
            ..NewtonOptions::default()
        };
        let (r_min, f1) = run(&spec_min);
        let (r_fb, f2) = run(&spec_fb);
        assert!(f1.is_none() && f2.is_none());
        for (a, b) in r_min.final_state.iter().zip(&r_fb.final_state) {
            assert_relative_eq!(a.p_l, b.p_l, max_relative = 1e-8);
            assert_relative_eq!(a.s_l, b.s_l, max_relative = 1e-8);
            assert!((a.chi_h_l - b.chi_h_l).abs() <= 1e-12);
        }
    }
}
