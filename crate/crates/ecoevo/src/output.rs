//! Run orchestration and artifact emission: audits, the simulation itself,
//! the theory overlay, and the CSV/manifest/plot-script files of a run
//! directory. CSV numbers carry 17 significant digits and are written in a
//! fixed order, so identical inputs reproduce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{audit_initial, audit_predator_prey, audit_single, require_pass, AuditReport};
use crate::config::BuiltScenario;
use crate::error::{EvoError, Result};
use crate::models::averaged_contact;
use crate::moments::{central_moment, MomentRecord};
use crate::stepper::{run_to_horizon, ModelSpec, SimulationRun, Snapshot};
use crate::theory::{
    integrate_canonical_prey, integrate_canonical_single, solve_equilibrium, TheoryTrajectory,
};

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Compact number for file names: `2` rather than `2.0`, `0.5` as is.
pub fn fmt_time_label(t: f64) -> String {
    if t == t.trunc() && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Everything a finished scenario produced in memory.
#[derive(Debug)]
pub struct ExecutedScenario {
    pub run: SimulationRun,
    pub audit: AuditReport,
    pub theory: Option<TheoryTrajectory>,
    pub x_star: Option<f64>,
}

/// Audit, simulate, and integrate the theory overlay for one built
/// scenario. Audit failures abort unless forced; a theory overlay that is
/// unavailable (for example a forced run outside the equilibrium band)
/// degrades to `None` rather than failing the run.
pub fn execute_scenario(built: &BuiltScenario, force: bool) -> Result<ExecutedScenario> {
    let audit = match &built.model {
        ModelSpec::Single(spec) => {
            let mut report = audit_single(spec, &built.grid, &built.audit);
            let q0 = built.initial.build(&built.grid, built.epsilon)?;
            audit_initial(&q0, built.epsilon, built.audit.k0, &mut report)?;
            report
        }
        ModelSpec::PredatorPrey(spec) => {
            let mut report = audit_predator_prey(spec, &built.grid, &built.audit);
            let q0 = built.initial.build(&built.grid, built.epsilon)?;
            audit_initial(&q0, built.epsilon, built.audit.k0, &mut report)?;
            report
        }
    };
    require_pass(&audit, force)?;

    let run = run_to_horizon(built.model, &built.scheme, built.grid, &built.initial, &built.options)?;

    let q0 = built.initial.build(&built.grid, built.epsilon)?;
    let z0_eps = central_moment(&q0, 1, false)?;
    let horizon = built.scheme.horizon;
    let theory = match &built.model {
        ModelSpec::Single(spec) => {
            integrate_canonical_single(spec, z0_eps, built.z0_limit, horizon, built.theory_dt).ok()
        }
        ModelSpec::PredatorPrey(spec) => integrate_canonical_prey(
            spec,
            z0_eps,
            built.z0_limit,
            horizon,
            built.theory_dt,
            audit.band,
        )
        .ok(),
    };

    Ok(ExecutedScenario { run, audit: audit.clone(), theory, x_star: audit.x_star })
}

/// Manifest of one run directory: the emitted files, audit outcomes and run
/// metadata. Every CSV listed here is byte-reproducible from the resolved
/// configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub tool_version: String,
    pub created_unix: u64,
    pub epsilon: f64,
    pub seed: u64,
    pub files: Vec<String>,
    pub steps_executed: usize,
    pub wall_seconds: f64,
    pub total_boundary_leak: f64,
    pub max_mass_defect: f64,
    pub extinction: Option<f64>,
    pub x_star: Option<f64>,
    pub audit: AuditReport,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}

fn write_atomic(dir: &Path, name: &str, contents: &str, files: &mut Vec<String>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    files.push(name.to_string());
    Ok(())
}

fn moments_csv(records: &[MomentRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 200);
    out.push_str(MomentRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn theory_csv(theory: &TheoryTrajectory) -> String {
    let mut out = String::new();
    out.push_str(TheoryTrajectory::CSV_HEADER);
    out.push('\n');
    // thin long integrations to at most ~4000 rows
    let stride = (theory.times.len() / 4000).max(1);
    for k in (0..theory.times.len()).step_by(stride) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_float(theory.times[k]),
            fmt_float(theory.zbar_eps[k]),
            fmt_float(theory.zbar_0[k]),
            fmt_float(theory.i_of_z[k]),
            fmt_float(theory.rho_limit[k]),
        ));
    }
    out
}

/// Mortality landscape at a snapshot, for plotting against the density.
fn snapshot_mortality(model: &ModelSpec, snap: &Snapshot) -> Result<Vec<f64>> {
    let grid = snap.state.grid;
    match model {
        ModelSpec::Single(spec) => Ok((0..grid.n_nodes)
            .map(|i| spec.mortality_at(grid.node(i), snap.state.time))
            .collect()),
        ModelSpec::PredatorPrey(spec) => {
            let fbar = averaged_contact(&snap.state, &spec.contact)?;
            match snap.rho2 {
                Some(rho2) => {
                    let response = 1.0 + spec.h * fbar * snap.rho1;
                    Ok((0..grid.n_nodes)
                        .map(|i| {
                            let x = grid.node(i);
                            spec.contact.eval(x) * rho2 / response
                                - spec.relief.eval(x) * snap.rho1
                        })
                        .collect())
                }
                None => Ok((0..grid.n_nodes)
                    .map(|i| spec.eval_mortality(grid.node(i), snap.rho1, fbar))
                    .collect()),
            }
        }
    }
}

fn density_csv(model: &ModelSpec, snap: &Snapshot) -> Result<String> {
    let mortality = snapshot_mortality(model, snap)?;
    let grid = snap.state.grid;
    let mut out = String::from("x,density,mortality\n");
    for i in 0..grid.n_nodes {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_float(grid.node(i)),
            fmt_float(snap.state.values[i]),
            fmt_float(mortality[i]),
        ));
    }
    Ok(out)
}

fn plot_script(density_files: &[String], x_star: Option<f64>) -> String {
    let snapshots = density_files
        .iter()
        .map(|f| format!("\"{f}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let x_star_literal = match x_star {
        Some(x) => format!("{x}"),
        None => "None".to_string(),
    };
    format!(
        r#"#!/usr/bin/env python3
"""Render the run figures from the CSVs next to this script."""
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
DENSITY_FILES = [{snapshots}]
X_STAR = {x_star_literal}


def read_csv(name):
    with open(os.path.join(HERE, name)) as fh:
        rows = list(csv.DictReader(fh))
    return {{k: [float(r[k]) for r in rows] for k in rows[0]}}


def fig_density():
    if not DENSITY_FILES:
        return
    fig, axes = plt.subplots(1, len(DENSITY_FILES), figsize=(6 * len(DENSITY_FILES), 4.5))
    if len(DENSITY_FILES) == 1:
        axes = [axes]
    for ax, name in zip(axes, DENSITY_FILES):
        data = read_csv(name)
        ax.plot(data["x"], data["density"], color="goldenrod", label="trait distribution")
        twin = ax.twinx()
        twin.plot(data["x"], data["mortality"], color="black", label="mortality")
        ax.set_xlabel("trait x")
        ax.set_ylabel("density")
        twin.set_ylabel("mortality")
        ax.set_title(name.replace("density_", "").replace(".csv", ""))
        ax.legend(loc="upper left")
        twin.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, "fig_density_mortality.png"), dpi=150)


def fig_trajectories():
    moments = read_csv("moments.csv")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(12, 4.5))
    ax1.plot(moments["time"], moments["m1"], color="tab:blue", label="mean trait")
    ax2.plot(moments["time"], moments["rho"], color="tab:blue", label="population")
    try:
        theory = read_csv("theory.csv")
        ax1.plot(theory["times"], theory["zbar_eps"], color="tab:red", ls="--",
                 label="canonical ODE")
        overlay = theory["i_of_z"] if theory["i_of_z"][0] == theory["i_of_z"][0] \
            else theory["rho_limit"]
        ax2.plot(theory["times"], overlay, color="tab:red", ls="--", label="theory")
    except (FileNotFoundError, IndexError):
        pass
    if X_STAR is not None:
        ax1.axhline(X_STAR, color="black", ls=":", label="fixed point")
    ax1.set_xlabel("time")
    ax1.set_ylabel("mean trait")
    ax2.set_xlabel("time")
    ax2.set_ylabel("population")
    ax1.legend()
    ax2.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, "fig_mean_population.png"), dpi=150)


if __name__ == "__main__":
    fig_density()
    fig_trajectories()
    print("figures written next to", sys.argv[0])
"#
    )
}

/// Write the full artifact set of one executed run. Returns the manifest
/// (also written as `manifest.toml`).
pub fn write_run_artifacts(
    dir: &Path,
    built: &BuiltScenario,
    executed: &ExecutedScenario,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    write_atomic(dir, "config_resolved.toml", &built.resolved.to_toml(), &mut files)?;
    write_atomic(dir, "moments.csv", &moments_csv(&executed.run.records), &mut files)?;

    match &executed.theory {
        Some(theory) => write_atomic(dir, "theory.csv", &theory_csv(theory), &mut files)?,
        None => write_atomic(
            dir,
            "theory.csv",
            &format!("{}\n", TheoryTrajectory::CSV_HEADER),
            &mut files,
        )?,
    }

    let mut density_files = Vec::new();
    for snap in &executed.run.snapshots {
        let name = format!("density_t{}.csv", fmt_time_label(snap.requested_time));
        write_atomic(dir, &name, &density_csv(&built.model, snap)?, &mut files)?;
        density_files.push(name);
    }

    write_atomic(dir, "plot.py", &plot_script(&density_files, executed.x_star), &mut files)?;

    let manifest = RunManifest {
        name: built.resolved.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        epsilon: built.epsilon,
        seed: built.seed,
        files: {
            let mut all = files.clone();
            all.push("manifest.toml".to_string());
            all
        },
        steps_executed: executed.run.steps_executed,
        wall_seconds: executed.run.wall_seconds,
        total_boundary_leak: executed.run.total_boundary_leak,
        max_mass_defect: executed.run.max_mass_defect,
        extinction: executed.run.extinction,
        x_star: executed.x_star,
        audit: executed.audit.clone(),
    };
    fs::write(dir.join("manifest.toml"), manifest.to_toml())?;
    Ok(manifest)
}

/// Terminal comparison of one sweep member against the theory.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub status: String,
    /// |M1(T) - zbar_eps(T)|
    pub m1_gap: f64,
    /// Predator-prey: |rho1(T) - I(zbar_eps(T))|; single species:
    /// |rho(T) - rho_limit(T)|.
    pub rho_gap: f64,
    /// sup over records of the distance to the Gaussian ansatz.
    pub sup_w1: f64,
    /// |M2c(T) - eps^2|
    pub m2c_gap: f64,
}

pub const SCALING_CSV_HEADER: &str = "epsilon,status,m1_gap,rho_gap,sup_w1,m2c_gap";

impl ScalingRow {
    pub fn from_executed(
        built: &BuiltScenario,
        executed: &ExecutedScenario,
    ) -> Result<ScalingRow> {
        let terminal = executed.run.terminal();
        let eps = built.epsilon;
        let theory = executed
            .theory
            .as_ref()
            .ok_or_else(|| EvoError::Assumption("no theory overlay for scaling row".into()))?;
        let t_end = terminal.time;
        let zbar = theory.nearest(t_end, &theory.zbar_eps);
        let m1_gap = (terminal.m1 - zbar).abs();
        let rho_gap = match &built.model {
            ModelSpec::PredatorPrey(spec) => {
                let i_star = solve_equilibrium(spec, zbar)?;
                (terminal.rho - i_star).abs()
            }
            ModelSpec::Single(_) => {
                let rho_limit = theory.nearest(t_end, &theory.rho_limit);
                (terminal.rho - rho_limit).abs()
            }
        };
        let sup_w1 = executed
            .run
            .records
            .iter()
            .map(|r| r.w1_to_gaussian)
            .fold(0.0, f64::max);
        let m2c_gap = (terminal.m2c - eps * eps).abs();
        Ok(ScalingRow {
            epsilon: eps,
            status: "ok".to_string(),
            m1_gap,
            rho_gap,
            sup_w1,
            m2c_gap,
        })
    }

    pub fn failed(epsilon: f64, err: &EvoError) -> ScalingRow {
        ScalingRow {
            epsilon,
            status: format!("error: {err}").replace(',', ";"),
            m1_gap: f64::NAN,
            rho_gap: f64::NAN,
            sup_w1: f64::NAN,
            m2c_gap: f64::NAN,
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            fmt_float(self.epsilon),
            self.status,
            fmt_float(self.m1_gap),
            fmt_float(self.rho_gap),
            fmt_float(self.sup_w1),
            fmt_float(self.m2c_gap),
        )
    }
}

/// Least-squares slope of `log(gap)` against `log(eps)` over the surviving
/// rows. `None` with fewer than two usable points.
pub fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(e, g)| *e > 0.0 && *g > 0.0 && g.is_finite())
        .map(|(e, g)| (e.ln(), g.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|(x, _)| x).sum();
    let sy: f64 = usable.iter().map(|(_, y)| y).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Fitted log-log slopes of the four gap columns.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingSlopes {
    pub m1: Option<f64>,
    pub rho: Option<f64>,
    pub w1: Option<f64>,
    pub m2c: Option<f64>,
}

pub fn scaling_slopes(rows: &[ScalingRow]) -> ScalingSlopes {
    let ok: Vec<&ScalingRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let col = |f: fn(&ScalingRow) -> f64| -> Option<f64> {
        fitted_slope(&ok.iter().map(|r| (r.epsilon, f(r))).collect::<Vec<_>>())
    };
    ScalingSlopes {
        m1: col(|r| r.m1_gap),
        rho: col(|r| r.rho_gap),
        w1: col(|r| r.sup_w1),
        m2c: col(|r| r.m2c_gap),
    }
}

/// Emit `scaling.csv`: one row per epsilon plus, when at least two runs
/// survived, a trailing `slope` row with the fitted exponents.
pub fn write_scaling_csv(dir: &Path, rows: &[ScalingRow]) -> Result<PathBuf> {
    let mut out = String::from(SCALING_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    let slopes = scaling_slopes(rows);
    if rows.iter().filter(|r| r.status == "ok").count() >= 2 {
        let fmt_opt = |s: Option<f64>| s.map(fmt_float).unwrap_or_else(|| "NaN".to_string());
        out.push_str(&format!(
            "slope,fitted,{},{},{},{}\n",
            fmt_opt(slopes.m1),
            fmt_opt(slopes.rho),
            fmt_opt(slopes.w1),
            fmt_opt(slopes.m2c),
        ));
    }
    let path = dir.join("scaling.csv");
    fs::write(&path, out)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_scenario;

    #[test]
    fn slope_fit_recovers_power_laws() {
        let pts: Vec<(f64, f64)> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&e: &f64| (e, 3.0 * e.powf(1.7)))
            .collect();
        let slope = fitted_slope(&pts).unwrap();
        assert!((slope - 1.7).abs() < 1e-12);
        assert!(fitted_slope(&pts[..1]).is_none());
        // zero or negative gaps are skipped
        let with_zero = vec![(0.4, 0.0), (0.2, 1.0), (0.1, 0.5)];
        assert!(fitted_slope(&with_zero).is_some());
    }

    #[test]
    fn run_artifacts_are_complete_and_reproducible() {
        let config = load_scenario("paper_fig12_eps02").unwrap();
        let mut built = config.build(0.2).unwrap();
        built.scheme.horizon = 1.0; // short smoke run
        built.scheme.snapshot_times = vec![0.5, 1.0];
        let executed = execute_scenario(&built, false).unwrap();

        let tmp = tempfile::tempdir().unwrap();
        let dir_a = tmp.path().join("a");
        let dir_b = tmp.path().join("b");
        let manifest = write_run_artifacts(&dir_a, &built, &executed).unwrap();
        assert!(manifest.audit.passed());

        // every listed file exists
        for f in &manifest.files {
            assert!(dir_a.join(f).exists(), "missing {f}");
        }
        // schema of the moments file
        let moments = fs::read_to_string(dir_a.join("moments.csv")).unwrap();
        assert!(moments.starts_with(MomentRecord::CSV_HEADER));
        // the plot script references only listed csvs
        let plot = fs::read_to_string(dir_a.join("plot.py")).unwrap();
        for token in plot.split('"').filter(|t| t.ends_with(".csv") && t.len() > 4) {
            assert!(manifest.files.iter().any(|f| f == token), "unlisted {token}");
        }

        // byte-identical rerun
        let executed2 = execute_scenario(&built, false).unwrap();
        write_run_artifacts(&dir_b, &built, &executed2).unwrap();
        for f in ["moments.csv", "theory.csv", "density_t1.csv", "config_resolved.toml"] {
            let a = fs::read(dir_a.join(f)).unwrap();
            let b = fs::read(dir_b.join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between reruns");
        }
    }

    #[test]
    fn snapshot_labels_avoid_trailing_zeros() {
        assert_eq!(fmt_time_label(2.0), "2");
        assert_eq!(fmt_time_label(16.0), "16");
        assert_eq!(fmt_time_label(0.5), "0.5");
    }
}
