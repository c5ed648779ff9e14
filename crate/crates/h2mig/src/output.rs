//! Deterministic result files: snapshot CSVs, the per-iteration convergence
//! log, the event log, a per-step summary, and a gnuplot script that plots
//! them. Two runs with identical configs produce byte-identical files.

use crate::discretization::YEAR_SECONDS;
use crate::simulation::{EventLog, RunResult, Snapshot, StepRecord};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

fn write_file(path: &Path, text: &str) -> Result<(), OutputError> {
    fs::write(path, text).map_err(|source| OutputError {
        path: path.to_path_buf(),
        source,
    })
}

/// C-style `%.12e`: twelve fractional digits, explicit exponent sign,
/// at least two exponent digits.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponential form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Times that are whole years keep an integer-valued name; fractional ones
/// keep three decimals. Width is fixed so names sort chronologically.
pub fn snapshot_filename(time_years: f64) -> String {
    if (time_years - time_years.round()).abs() < 1e-6 {
        format!("snapshot_{:010}y.csv", time_years.round() as i64)
    } else {
        format!("snapshot_{time_years:014.3}y.csv")
    }
}

pub fn snapshot_csv(snap: &Snapshot) -> String {
    let mut out = String::from("x_m,s_l,s_g,p_l_Pa,p_g_Pa,chi_h_l,rho_h_total_kg_m3\n");
    for i in 0..snap.x.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            format_sci(snap.x[i]),
            format_sci(snap.s_l[i]),
            format_sci(snap.s_g[i]),
            format_sci(snap.p_l[i]),
            format_sci(snap.p_g[i]),
            format_sci(snap.chi_h_l[i]),
            format_sci(snap.rho_h_total[i]),
        );
    }
    out
}

pub fn write_snapshot_csv(snap: &Snapshot, path: &Path) -> Result<(), OutputError> {
    write_file(path, &snapshot_csv(snap))
}

/// One row per Newton iteration of every accepted step. `residual` is the
/// scaled norm after that iteration's update; `active_cells` the size of
/// the inactive-complementarity set at the same iterate.
pub fn convergence_log_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from("step,time_years,iter,residual,active_cells\n");
    for rec in steps {
        let t_years = rec.t_end / YEAR_SECONDS;
        let hist = &rec.report.residual_history;
        let active = &rec.report.active_set_history;
        for iter in 1..=rec.report.iterations {
            let _ = writeln!(
                out,
                "{},{:?},{},{},{}",
                rec.step,
                t_years,
                iter,
                format_sci(hist[iter]),
                active[iter],
            );
        }
    }
    out
}

pub fn write_convergence_log(steps: &[StepRecord], path: &Path) -> Result<(), OutputError> {
    write_file(path, &convergence_log_csv(steps))
}

/// Event times in years; an event that never fired keeps an empty field.
pub fn event_log_csv(events: &EventLog) -> String {
    let fmt = |t: Option<f64>| t.map(|v| format!("{v:?}")).unwrap_or_default();
    format!(
        "event,time_years\n\
         first_gas_appearance,{}\n\
         injection_end,{:?}\n\
         last_gas_disappearance,{}\n\
         stationarity,{}\n",
        fmt(events.first_gas_appearance),
        events.injection_end,
        fmt(events.last_gas_disappearance),
        fmt(events.stationarity),
    )
}

pub fn write_event_log(events: &EventLog, path: &Path) -> Result<(), OutputError> {
    write_file(path, &event_log_csv(events))
}

/// Per-step summary consumed by the iterations chart and handy for eyeballing
/// a run without parsing the full convergence log.
pub fn step_summary_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from("step,time_years,iterations,dt_years,gas_cells,max_p_l_Pa\n");
    for rec in steps {
        let _ = writeln!(
            out,
            "{},{:?},{},{:?},{},{}",
            rec.step,
            rec.t_end / YEAR_SECONDS,
            rec.report.iterations,
            rec.dt / YEAR_SECONDS,
            rec.gas_cells,
            format_sci(rec.max_p_l),
        );
    }
    out
}

/// Three stacked profile panels (one curve per snapshot) plus an
/// iterations-per-step chart. References only the file names it is given.
pub fn plot_script_text(snapshot_files: &[(String, f64)], steps_file: &str) -> String {
    let mut s = String::new();
    s.push_str("# Generated plotting script; run with: gnuplot plot.gp\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    s.push_str("set terminal pngcairo size 1000,1200\n");
    s.push_str("set output 'profiles.png'\n");
    s.push_str("set multiplot layout 3,1\n");
    s.push_str("set xlabel 'x (m)'\n");
    let panels = [
        ("total H2 density (kg/m^3)", 7),
        ("gas saturation", 3),
        ("liquid pressure (Pa)", 4),
    ];
    for (label, col) in panels {
        let _ = writeln!(s, "set ylabel '{label}'");
        s.push_str("plot \\\n");
        for (i, (file, t_years)) in snapshot_files.iter().enumerate() {
            let sep = if i + 1 == snapshot_files.len() {
                "\n"
            } else {
                ", \\\n"
            };
            let _ = write!(
                s,
                "  '{file}' using 1:{col} with lines title '{t_years:?} y'{sep}"
            );
        }
    }
    s.push_str("unset multiplot\n");
    s.push_str("set output 'iterations.png'\n");
    s.push_str("set xlabel 'time (years)'\n");
    s.push_str("set ylabel 'Newton iterations per step'\n");
    let _ = writeln!(
        s,
        "plot '{steps_file}' using 2:3 with steps title 'iterations'"
    );
    s
}

/// Write every result file into `out_dir` (created if missing) and return
/// the paths written, in a fixed order.
pub fn write_run_outputs(result: &RunResult, out_dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(out_dir).map_err(|source| OutputError {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut snapshot_files = Vec::new();
    for snap in &result.snapshots {
        let name = snapshot_filename(snap.time_years);
        let path = out_dir.join(&name);
        write_snapshot_csv(snap, &path)?;
        snapshot_files.push((name, snap.time_years));
        written.push(path);
    }
    let conv = out_dir.join("convergence.csv");
    write_convergence_log(&result.steps, &conv)?;
    written.push(conv);
    let events = out_dir.join("events.csv");
    write_event_log(&result.events, &events)?;
    written.push(events);
    let steps = out_dir.join("steps.csv");
    write_file(&steps, &step_summary_csv(&result.steps))?;
    written.push(steps);
    let plot = out_dir.join("plot.gp");
    write_file(&plot, &plot_script_text(&snapshot_files, "steps.csv"))?;
    written.push(plot);
    Ok(written)
}
