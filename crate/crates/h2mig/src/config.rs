//! Run configuration in a flat, diff-friendly `section.key = value` format.
//!
//! A file selects a base profile (first non-comment line, optional) and then
//! overrides individual keys. Two profiles are built in: `benchmark`, the
//! default parameter set with physical viscosities, and `table1-as-printed`,
//! identical except for the literal (typo-suspect) viscosity values it
//! preserves. All physical validation of the underlying parameter types is
//! re-applied at parse time, and unknown keys are rejected.

use crate::constitutive::{FluidParams, MediumParams};
use crate::discretization::{CellState, Grid, YEAR_SECONDS};
use crate::ncp::{CFunction, NewtonOptions};
use crate::simulation::{RunSpec, Schedule};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{key}: {message}")]
    Validation { key: String, message: String },
}

/// A fully validated run configuration. Times and the injection rate use
/// years at this surface; `to_run_spec` converts to SI seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub profile: String,
    pub n_cells: usize,
    pub length: f64,
    pub medium: MediumParams,
    pub fluid: FluidParams,
    pub dt_years: f64,
    pub injection_end_years: f64,
    pub total_years: f64,
    pub snapshot_years: Vec<f64>,
    pub eps: f64,
    pub max_iter: usize,
    pub c_function: CFunction,
    pub grad_tol: f64,
    pub stat_tol: f64,
    pub initial: CellState,
    /// Injected hydrogen mass flux at the left boundary, kg/(m^2 year).
    pub q_h_in: f64,
    pub p_right: f64,
}

/// Raw key values before cross-field validation.
#[derive(Clone)]
struct Raw {
    profile: String,
    grid_n: usize,
    grid_length: f64,
    permeability: f64,
    porosity: f64,
    pr: f64,
    n: f64,
    s_lr: f64,
    s_gr: f64,
    mu_l: f64,
    mu_g: f64,
    rho_l: f64,
    henry: f64,
    m_w: f64,
    m_h: f64,
    diffusion: f64,
    temperature: f64,
    rho_g_ref: f64,
    dt_years: f64,
    injection_end_years: f64,
    total_years: f64,
    snapshot_years: Vec<f64>,
    eps: f64,
    max_iter: usize,
    c_function: CFunction,
    grad_tol: f64,
    stat_tol: f64,
    init_s_l: f64,
    init_p_l: f64,
    init_chi: f64,
    q_h_in: f64,
    p_right: f64,
}

fn profile_raw(name: &str) -> Option<Raw> {
    let benchmark = Raw {
        profile: "benchmark".into(),
        grid_n: 200,
        grid_length: 200.0,
        permeability: 5e-20,
        porosity: 0.15,
        pr: 2e6,
        n: 1.49,
        s_lr: 0.4,
        s_gr: 0.0,
        mu_l: 1e-3,
        mu_g: 9e-6,
        rho_l: 1e3,
        henry: 7.65e-6,
        m_w: 1e-2,
        m_h: 2e-3,
        diffusion: 3e-9,
        temperature: 303.0,
        rho_g_ref: 8e-2,
        dt_years: 5000.0,
        injection_end_years: 5e5,
        total_years: 1e6,
        snapshot_years: vec![1e4, 2e4, 5e4, 1e5, 1.5e5, 3e5, 5e5, 6e5, 8e5, 1e6],
        eps: 1e-10,
        max_iter: 50,
        c_function: CFunction::Min,
        grad_tol: 1.0,
        stat_tol: 1e-8,
        init_s_l: 1.0,
        init_p_l: 1e6,
        init_chi: 0.0,
        q_h_in: 5.57e-6,
        p_right: 1e6,
    };
    match name {
        "benchmark" => Some(benchmark),
        "table1-as-printed" => Some(Raw {
            profile: name.into(),
            mu_l: 1e-9,
            mu_g: 9e-9,
            ..benchmark
        }),
        _ => None,
    }
}

fn strip_line(raw: &str) -> &str {
    let t = raw.trim();
    if t.starts_with('#') {
        ""
    } else {
        t
    }
}

fn split_kv(line: &str, lineno: usize) -> Result<(&str, &str), ConfigError> {
    match line.split_once('=') {
        Some((k, v)) => Ok((k.trim(), v.trim())),
        None => Err(ConfigError::Parse {
            line: lineno,
            message: format!("expected `key = value`, got `{line}`"),
        }),
    }
}

fn parse_f64(value: &str, lineno: usize) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::Parse {
        line: lineno,
        message: format!("expected a number, got `{value}`"),
    })
}

fn parse_usize(value: &str, lineno: usize) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::Parse {
        line: lineno,
        message: format!("expected a non-negative integer, got `{value}`"),
    })
}

fn parse_list(value: &str, lineno: usize) -> Result<Vec<f64>, ConfigError> {
    if value.is_empty() {
        return Ok(vec![]);
    }
    value
        .split(',')
        .map(|v| parse_f64(v.trim(), lineno))
        .collect()
}

fn apply(raw: &mut Raw, key: &str, value: &str, lineno: usize) -> Result<(), ConfigError> {
    match key {
        "grid.n" => raw.grid_n = parse_usize(value, lineno)?,
        "grid.length" => raw.grid_length = parse_f64(value, lineno)?,
        "medium.permeability" => raw.permeability = parse_f64(value, lineno)?,
        "medium.porosity" => raw.porosity = parse_f64(value, lineno)?,
        "medium.pr" => raw.pr = parse_f64(value, lineno)?,
        "medium.n" => raw.n = parse_f64(value, lineno)?,
        "medium.s_lr" => raw.s_lr = parse_f64(value, lineno)?,
        "medium.s_gr" => raw.s_gr = parse_f64(value, lineno)?,
        "fluid.mu_l" => raw.mu_l = parse_f64(value, lineno)?,
        "fluid.mu_g" => raw.mu_g = parse_f64(value, lineno)?,
        "fluid.rho_l" => raw.rho_l = parse_f64(value, lineno)?,
        "fluid.henry" => raw.henry = parse_f64(value, lineno)?,
        "fluid.m_w" => raw.m_w = parse_f64(value, lineno)?,
        "fluid.m_h" => raw.m_h = parse_f64(value, lineno)?,
        "fluid.diffusion" => raw.diffusion = parse_f64(value, lineno)?,
        "fluid.temperature" => raw.temperature = parse_f64(value, lineno)?,
        "fluid.rho_g_ref" => raw.rho_g_ref = parse_f64(value, lineno)?,
        "schedule.dt_years" => raw.dt_years = parse_f64(value, lineno)?,
        "schedule.injection_end_years" => raw.injection_end_years = parse_f64(value, lineno)?,
        "schedule.total_years" => raw.total_years = parse_f64(value, lineno)?,
        "schedule.snapshot_years" => raw.snapshot_years = parse_list(value, lineno)?,
        "solver.eps" => raw.eps = parse_f64(value, lineno)?,
        "solver.max_iter" => raw.max_iter = parse_usize(value, lineno)?,
        "solver.c_function" => {
            raw.c_function = match value {
                "min" => CFunction::Min,
                "fischer_burmeister" => CFunction::FischerBurmeister,
                other => {
                    return Err(ConfigError::Parse {
                        line: lineno,
                        message: format!("expected `min` or `fischer_burmeister`, got `{other}`"),
                    })
                }
            }
        }
        "solver.grad_tol" => raw.grad_tol = parse_f64(value, lineno)?,
        "solver.stat_tol" => raw.stat_tol = parse_f64(value, lineno)?,
        "initial.s_l" => raw.init_s_l = parse_f64(value, lineno)?,
        "initial.p_l" => raw.init_p_l = parse_f64(value, lineno)?,
        "initial.chi_h_l" => raw.init_chi = parse_f64(value, lineno)?,
        "boundary.q_h_in" => raw.q_h_in = parse_f64(value, lineno)?,
        "boundary.p_right" => raw.p_right = parse_f64(value, lineno)?,
        other => {
            return Err(ConfigError::Parse {
                line: lineno,
                message: format!("unknown key `{other}`"),
            })
        }
    }
    Ok(())
}

/// Translate a parameter-constructor failure to the config key that set it.
fn param_key(section: &str, what: &str) -> String {
    let field = match what {
        "vg_pressure" => "pr",
        "vg_n" => "n",
        "s_lr + s_gr" => "s_lr",
        "viscosity_liquid" => "mu_l",
        "viscosity_gas" => "mu_g",
        "liquid_density" => "rho_l",
        "henry_molar" => "henry",
        "molar_mass_water" => "m_w",
        "molar_mass_hydrogen" => "m_h",
        "diffusion_coeff" => "diffusion",
        "reference_gas_density" | "gas_compressibility * 1e5 Pa" => "rho_g_ref",
        other => other,
    };
    format!("{section}.{field}")
}

fn validation(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.into(),
        message: message.into(),
    }
}

fn validate(raw: Raw) -> Result<Config, ConfigError> {
    if raw.grid_n < 2 {
        return Err(validation("grid.n", "at least 2 cells required"));
    }
    if !(raw.grid_length.is_finite() && raw.grid_length > 0.0) {
        return Err(validation("grid.length", "must be > 0"));
    }
    let medium = MediumParams::new(
        raw.permeability,
        raw.porosity,
        raw.pr,
        raw.n,
        raw.s_lr,
        raw.s_gr,
    )
    .map_err(|e| match e {
        crate::constitutive::ConstitutiveError::Parameter { what, why, .. } => {
            validation(&param_key("medium", what), why)
        }
        other => validation("medium", other.to_string()),
    })?;
    let fluid = FluidParams::new(
        raw.mu_l,
        raw.mu_g,
        raw.rho_l,
        raw.henry,
        raw.m_w,
        raw.m_h,
        raw.diffusion,
        raw.temperature,
        raw.rho_g_ref,
    )
    .map_err(|e| match e {
        crate::constitutive::ConstitutiveError::Parameter { what, why, .. } => {
            validation(&param_key("fluid", what), why)
        }
        other => validation("fluid", other.to_string()),
    })?;
    let schedule = Schedule {
        injection_flux: raw.q_h_in / YEAR_SECONDS,
        injection_end: raw.injection_end_years * YEAR_SECONDS,
        total_time: raw.total_years * YEAR_SECONDS,
        dt: raw.dt_years * YEAR_SECONDS,
        snapshot_times: raw
            .snapshot_years
            .iter()
            .map(|t| t * YEAR_SECONDS)
            .collect(),
    };
    schedule
        .validate()
        .map_err(|msg| validation("schedule", msg))?;
    if !(raw.eps.is_finite() && raw.eps > 0.0) {
        return Err(validation("solver.eps", "must be > 0"));
    }
    if raw.max_iter == 0 {
        return Err(validation("solver.max_iter", "must be >= 1"));
    }
    if !(raw.grad_tol.is_finite() && raw.grad_tol > 0.0) {
        return Err(validation("solver.grad_tol", "must be > 0"));
    }
    if !(raw.stat_tol.is_finite() && raw.stat_tol > 0.0) {
        return Err(validation("solver.stat_tol", "must be > 0"));
    }
    if !(raw.init_s_l.is_finite() && raw.init_s_l >= medium.s_lr && raw.init_s_l <= 1.0) {
        return Err(validation(
            "initial.s_l",
            format!(
                "must lie in [{}, 1] (residual to full saturation)",
                medium.s_lr
            ),
        ));
    }
    if !(raw.init_p_l.is_finite() && raw.init_p_l > 0.0) {
        return Err(validation("initial.p_l", "must be > 0"));
    }
    if !(raw.init_chi.is_finite() && (0.0..1.0).contains(&raw.init_chi)) {
        return Err(validation("initial.chi_h_l", "must lie in [0, 1)"));
    }
    if !(raw.q_h_in.is_finite() && raw.q_h_in >= 0.0) {
        return Err(validation("boundary.q_h_in", "must be >= 0"));
    }
    if !(raw.p_right.is_finite() && raw.p_right > 0.0) {
        return Err(validation("boundary.p_right", "must be > 0"));
    }
    Ok(Config {
        profile: raw.profile,
        n_cells: raw.grid_n,
        length: raw.grid_length,
        medium,
        fluid,
        dt_years: raw.dt_years,
        injection_end_years: raw.injection_end_years,
        total_years: raw.total_years,
        snapshot_years: raw.snapshot_years,
        eps: raw.eps,
        max_iter: raw.max_iter,
        c_function: raw.c_function,
        grad_tol: raw.grad_tol,
        stat_tol: raw.stat_tol,
        initial: CellState {
            s_l: raw.init_s_l,
            p_l: raw.init_p_l,
            chi_h_l: raw.init_chi,
        },
        q_h_in: raw.q_h_in,
        p_right: raw.p_right,
    })
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    parse_config_with_profile(text, None)
}

/// Parse with an externally chosen base profile (e.g. a CLI flag), which
/// wins over a `profile` line in the text.
pub fn parse_config_with_profile(
    text: &str,
    profile_override: Option<&str>,
) -> Result<Config, ConfigError> {
    // first pass: locate the profile selection, which must precede all
    // other keys so overrides are never silently re-baselined
    let mut profile_line: Option<String> = None;
    let mut saw_other_key = false;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = strip_line(raw_line);
        if line.is_empty() {
            continue;
        }
        let (key, value) = split_kv(line, idx + 1)?;
        if key == "profile" {
            if profile_line.is_some() {
                return Err(ConfigError::Parse {
                    line: idx + 1,
                    message: "duplicate `profile` key".into(),
                });
            }
            if saw_other_key {
                return Err(ConfigError::Parse {
                    line: idx + 1,
                    message: "`profile` must come before all other keys".into(),
                });
            }
            profile_line = Some(value.to_string());
        } else {
            saw_other_key = true;
        }
    }
    let name = profile_override
        .map(str::to_string)
        .or(profile_line)
        .unwrap_or_else(|| "benchmark".into());
    let mut raw = profile_raw(&name).ok_or_else(|| {
        validation(
            "profile",
            format!("unknown profile `{name}` (expected `benchmark` or `table1-as-printed`)"),
        )
    })?;
    raw.profile = name;

    for (idx, raw_line) in text.lines().enumerate() {
        let line = strip_line(raw_line);
        if line.is_empty() {
            continue;
        }
        let (key, value) = split_kv(line, idx + 1)?;
        if key == "profile" {
            continue;
        }
        apply(&mut raw, key, value, idx + 1)?;
    }
    validate(raw)
}

/// Emit every key explicitly, in a fixed order, with shortest-round-trip
/// float formatting; `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(c: &Config) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    line("profile", c.profile.clone());
    line("grid.n", c.n_cells.to_string());
    line("grid.length", format!("{:?}", c.length));
    line(
        "medium.permeability",
        format!("{:?}", c.medium.permeability),
    );
    line("medium.porosity", format!("{:?}", c.medium.porosity));
    line("medium.pr", format!("{:?}", c.medium.vg_pressure));
    line("medium.n", format!("{:?}", c.medium.vg_n));
    line("medium.s_lr", format!("{:?}", c.medium.s_lr));
    line("medium.s_gr", format!("{:?}", c.medium.s_gr));
    line("fluid.mu_l", format!("{:?}", c.fluid.viscosity_liquid));
    line("fluid.mu_g", format!("{:?}", c.fluid.viscosity_gas));
    line("fluid.rho_l", format!("{:?}", c.fluid.liquid_density));
    line("fluid.henry", format!("{:?}", c.fluid.henry_molar));
    line("fluid.m_w", format!("{:?}", c.fluid.molar_mass_water));
    line("fluid.m_h", format!("{:?}", c.fluid.molar_mass_hydrogen));
    line("fluid.diffusion", format!("{:?}", c.fluid.diffusion_coeff));
    line("fluid.temperature", format!("{:?}", c.fluid.temperature));
    line(
        "fluid.rho_g_ref",
        format!("{:?}", c.fluid.reference_gas_density),
    );
    line("schedule.dt_years", format!("{:?}", c.dt_years));
    line(
        "schedule.injection_end_years",
        format!("{:?}", c.injection_end_years),
    );
    line("schedule.total_years", format!("{:?}", c.total_years));
    line(
        "schedule.snapshot_years",
        c.snapshot_years
            .iter()
            .map(|t| format!("{t:?}"))
            .collect::<Vec<_>>()
            .join(", "),
    );
    line("solver.eps", format!("{:?}", c.eps));
    line("solver.max_iter", c.max_iter.to_string());
    line(
        "solver.c_function",
        match c.c_function {
            CFunction::Min => "min".into(),
            CFunction::FischerBurmeister => "fischer_burmeister".into(),
        },
    );
    line("solver.grad_tol", format!("{:?}", c.grad_tol));
    line("solver.stat_tol", format!("{:?}", c.stat_tol));
    line("initial.s_l", format!("{:?}", c.initial.s_l));
    line("initial.p_l", format!("{:?}", c.initial.p_l));
    line("initial.chi_h_l", format!("{:?}", c.initial.chi_h_l));
    line("boundary.q_h_in", format!("{:?}", c.q_h_in));
    line("boundary.p_right", format!("{:?}", c.p_right));
    s
}

impl Config {
    pub fn to_run_spec(&self) -> RunSpec {
        RunSpec {
            grid: Grid::new(self.n_cells, self.length),
            medium: self.medium,
            fluid: self.fluid,
            schedule: Schedule {
                injection_flux: self.q_h_in / YEAR_SECONDS,
                injection_end: self.injection_end_years * YEAR_SECONDS,
                total_time: self.total_years * YEAR_SECONDS,
                dt: self.dt_years * YEAR_SECONDS,
                snapshot_times: self
                    .snapshot_years
                    .iter()
                    .map(|t| t * YEAR_SECONDS)
                    .collect(),
            },
            initial: self.initial,
            right_p_l: self.p_right,
            newton: NewtonOptions {
                eps: self.eps,
                max_iter: self.max_iter,
                cfun: self.c_function,
                ..NewtonOptions::default()
            },
            grad_tol: self.grad_tol,
            stat_tol: self.stat_tol,
            delta_s_scale: 1e-3,
        }
    }
}
