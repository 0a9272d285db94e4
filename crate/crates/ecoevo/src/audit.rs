//! Runtime audits of the scenario hypotheses: the mortality-shape and
//! birth-rate conditions for the single-species model, and the
//! equilibrium/convexity conditions for the predator-prey model. Every
//! check reports a measured margin so a failing scenario explains itself.

use serde::{Deserialize, Serialize};

use crate::error::{EvoError, Result};
use crate::grid::{DensityState, Grid1D};
use crate::models::{PredatorPreySpec, SingleSpeciesSpec};
use crate::moments::central_moment;
use crate::theory::{
    discover_band, exp_kernel_integral, find_fixed_point, growth_slope_at_equilibrium,
    landscape_convexity, solve_equilibrium,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    /// Distance to the failure boundary; positive means pass.
    pub margin: f64,
    pub detail: String,
}

impl AuditCheck {
    fn new(name: &str, passed: bool, margin: f64, detail: String) -> Self {
        Self { name: name.to_string(), passed, margin, detail }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
    /// Dissipation rate of the high-moment envelope, when positive.
    pub eta: Option<f64>,
    /// Working band around the trait fixed point (predator-prey).
    pub band: Option<(f64, f64)>,
    pub x_star: Option<f64>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&AuditCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {:<28} margin {:+.3e}  {}\n",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.margin,
                c.detail
            ));
        }
        if let Some(eta) = self.eta {
            out.push_str(&format!("  eta = {eta:.6}\n"));
        }
        if let (Some(x), Some((lo, hi))) = (self.x_star, self.band) {
            out.push_str(&format!("  x* = {x:.8}, band = [{lo:.3}, {hi:.3}]\n"));
        }
        out
    }
}

/// Tunable audit inputs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Window (in shifted coordinates) on which the birth rate must beat
    /// the mortality.
    pub window: (f64, f64),
    /// Time horizon sampled for the time-dependent checks.
    pub horizon: f64,
    /// Half-order of the controlled high moment.
    pub k0: u32,
    /// Declared constant of the moving-optimum integral condition.
    pub l_x: f64,
    /// Search interval for the trait fixed point (predator-prey).
    pub fixed_point_band: (f64, f64),
    /// Smallest acceptable second difference of the mortality landscape.
    pub convexity_floor: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            window: (-1.0, 1.0),
            horizon: 16.0,
            k0: 2,
            l_x: 1.0,
            fixed_point_band: (0.12, 1.5),
            convexity_floor: 1e-3,
        }
    }
}

fn sample_times(horizon: f64) -> Vec<f64> {
    (0..=8).map(|k| horizon * k as f64 / 8.0).collect()
}

/// Audit the single-species hypotheses on the grid.
pub fn audit_single(
    spec: &SingleSpeciesSpec,
    grid: &Grid1D,
    config: &AuditConfig,
) -> AuditReport {
    let mut report = AuditReport::default();
    let times = sample_times(config.horizon);
    let h = grid.spacing;

    // mortality nonnegative with an attained zero minimum (shifted family)
    let mut min_m = f64::INFINITY;
    for &t in &times {
        for i in 0..grid.n_nodes {
            min_m = min_m.min(spec.mortality.eval(grid.node(i), t));
        }
    }
    report.checks.push(AuditCheck::new(
        "mortality nonnegative",
        min_m >= -1e-14,
        min_m,
        format!("min m = {min_m:.3e}"),
    ));
    let reach = spec.mortality.second_derivative(0.0).abs().max(1.0) * h * h;
    report.checks.push(AuditCheck::new(
        "mortality minimum attained",
        min_m <= reach,
        reach - min_m,
        format!("min m = {min_m:.3e} vs grid resolution {reach:.3e}"),
    ));

    // flat gradient at the optimum, convex on the interior
    let mut max_grad0 = 0.0_f64;
    let mut min_curv = f64::INFINITY;
    for &t in &times {
        let g0 = (spec.mortality.eval(h, t) - spec.mortality.eval(-h, t)) / (2.0 * h);
        max_grad0 = max_grad0.max(g0.abs());
        for i in 1..grid.n_nodes - 1 {
            let x = grid.node(i);
            let d2 = (spec.mortality.eval(x + h, t) - 2.0 * spec.mortality.eval(x, t)
                + spec.mortality.eval(x - h, t))
                / (h * h);
            min_curv = min_curv.min(d2);
        }
    }
    report.checks.push(AuditCheck::new(
        "optimum is stationary",
        max_grad0 <= 1e-8,
        1e-8 - max_grad0,
        format!("|grad m(0)| = {max_grad0:.3e}"),
    ));
    report.checks.push(AuditCheck::new(
        "mortality convex",
        min_curv >= config.convexity_floor,
        min_curv - config.convexity_floor,
        format!("min second difference = {min_curv:.3e}"),
    ));

    // birth beats mortality on the declared window
    let r_low = spec.birth.lower_bound();
    let (w_lo, w_hi) = config.window;
    let mut max_m_window = f64::NEG_INFINITY;
    for &t in &times {
        let mut x = w_lo;
        while x <= w_hi + 1e-12 {
            max_m_window = max_m_window.max(spec.mortality.eval(x, t));
            x += h;
        }
    }
    report.checks.push(AuditCheck::new(
        "birth exceeds window mortality",
        r_low > max_m_window,
        r_low - max_m_window,
        format!("r_L = {r_low:.4} vs max m = {max_m_window:.4}"),
    ));

    // third-derivative growth bound
    let (a_m, p) = spec.mortality.growth_bound();
    let mut worst = f64::NEG_INFINITY;
    for &t in &times {
        for i in 2..grid.n_nodes - 2 {
            let x = grid.node(i);
            let d3 = (spec.mortality.eval(x + 2.0 * h, t) - 2.0 * spec.mortality.eval(x + h, t)
                + 2.0 * spec.mortality.eval(x - h, t)
                - spec.mortality.eval(x - 2.0 * h, t))
                / (2.0 * h * h * h);
            worst = worst.max(d3.abs() - a_m * (1.0 + x.abs().powi(p - 1)));
        }
    }
    report.checks.push(AuditCheck::new(
        "third-derivative growth bound",
        worst <= 1e-9,
        -worst,
        format!("max excess over declared bound = {worst:.3e}"),
    ));

    // dissipation rate of the high-moment envelope
    let eta = r_low * (1.0 - 0.25_f64.powi(config.k0 as i32)) - max_m_window;
    report.checks.push(AuditCheck::new(
        "moment dissipation rate",
        eta > 0.0,
        eta,
        format!("eta = {eta:.4} with k0 = {}", config.k0),
    ));
    if eta > 0.0 {
        report.eta = Some(eta);

        // moving-optimum integral condition
        let eps = spec.epsilon;
        let n = 4000;
        let dt = config.horizon / n as f64;
        let xdot: Vec<f64> = (0..=n)
            .map(|k| spec.optimum.derivative(k as f64 * dt).abs())
            .collect();
        let integral = exp_kernel_integral(&xdot, eta / (eps * eps), dt);
        let sup = integral.iter().cloned().fold(0.0, f64::max);
        let bound = eps * config.l_x;
        report.checks.push(AuditCheck::new(
            "optimum drift integrable",
            sup < bound,
            bound - sup,
            format!("sup drift integral = {sup:.3e} vs eps L_X = {bound:.3e}"),
        ));
    }

    report
}

/// Initial-state checks shared by both models: concentration of the trait
/// distribution and a mean inside the domain.
pub fn audit_initial(
    q0: &DensityState,
    epsilon: f64,
    k0: u32,
    report: &mut AuditReport,
) -> Result<()> {
    let m1 = central_moment(q0, 1, false)?;
    let inside = q0.grid.x_min < m1 && m1 < q0.grid.x_max;
    report.checks.push(AuditCheck::new(
        "initial mean inside domain",
        inside,
        (m1 - q0.grid.x_min).min(q0.grid.x_max - m1),
        format!("M1(0) = {m1:.4}"),
    ));
    let high = central_moment(q0, 2 * k0, false)?;
    let ratio = high / epsilon.powi(2 * k0 as i32);
    report.checks.push(AuditCheck::new(
        "initial concentration",
        ratio.is_finite() && ratio < 1e3,
        1e3 - ratio,
        format!("M_2k0(0)/eps^2k0 = {ratio:.3e}"),
    ));
    Ok(())
}

/// Audit the predator-prey assumptions on the grid.
pub fn audit_predator_prey(
    spec: &PredatorPreySpec,
    grid: &Grid1D,
    config: &AuditConfig,
) -> AuditReport {
    let mut report = AuditReport::default();

    // residual competition stays positive on the whole domain
    let mut min_residual = f64::INFINITY;
    for i in 0..grid.n_nodes {
        min_residual = min_residual.min(spec.kappa1 - spec.relief.eval(grid.node(i)));
    }
    report.checks.push(AuditCheck::new(
        "competition dominates relief",
        min_residual > 0.0,
        min_residual,
        format!("min (kappa1 - delta) = {min_residual:.4}"),
    ));

    // trait fixed point with a stable, unique equilibrium around it
    let (b_lo, b_hi) = config.fixed_point_band;
    match find_fixed_point(spec, b_lo, b_hi) {
        Ok(fp) => {
            report.x_star = Some(fp.x_star);
            report.checks.push(AuditCheck::new(
                "trait fixed point exists",
                true,
                fp.convexity,
                format!("x* = {:.6}, I(x*) = {:.6}", fp.x_star, fp.i_star),
            ));
            report.checks.push(AuditCheck::new(
                "landscape convex at fixed point",
                fp.convexity > 0.0,
                fp.convexity,
                format!("second difference = {:.4}", fp.convexity),
            ));

            let band = discover_band(spec, fp.x_star, grid.x_min + grid.spacing, grid.x_max - grid.spacing);
            report.band = Some(band);
            let mut max_slope = f64::NEG_INFINITY;
            let samples = 41;
            for k in 0..samples {
                let x = band.0 + (band.1 - band.0) * k as f64 / (samples - 1) as f64;
                if let Ok(i) = solve_equilibrium(spec, x) {
                    max_slope = max_slope.max(growth_slope_at_equilibrium(spec, x, i));
                } else {
                    max_slope = f64::INFINITY;
                }
            }
            // mortality ceiling over the declared band of interest, with
            // the ecology frozen at the fixed point
            let mut max_m_band = f64::NEG_INFINITY;
            for k in 0..samples {
                let x = b_lo + (b_hi - b_lo) * k as f64 / (samples - 1) as f64;
                max_m_band =
                    max_m_band.max(spec.eval_mortality(x, fp.i_star, spec.contact.eval(fp.x_star)));
            }
            report.checks.push(AuditCheck::new(
                "population equilibrium stable",
                max_slope < 0.0,
                -max_slope,
                format!("max dG/dI over band = {max_slope:.4}"),
            ));

            let eta = spec.r1 * (1.0 - 0.25_f64.powi(config.k0 as i32)) - max_m_band.max(0.0);
            report.checks.push(AuditCheck::new(
                "moment dissipation rate",
                eta > 0.0,
                eta,
                format!("eta = {eta:.4} with k0 = {}", config.k0),
            ));
            if eta > 0.0 {
                report.eta = Some(eta);
            }

            // smoothness proxy on the band interior: finite second
            // differences of the landscape
            let h = grid.spacing;
            let mut max_d2 = 0.0_f64;
            let mut x = band.0 + h;
            while x < band.1 - h {
                max_d2 = max_d2.max(landscape_convexity(spec, x, fp.i_star).abs());
                x += h;
            }
            report.checks.push(AuditCheck::new(
                "landscape twice differentiable",
                max_d2.is_finite(),
                1.0,
                format!("max |second difference| on band = {max_d2:.4}"),
            ));
        }
        Err(err) => {
            report.checks.push(AuditCheck::new(
                "trait fixed point exists",
                false,
                -1.0,
                format!("{err}"),
            ));
        }
    }

    report
}

/// Audit entry point used by runners: errors with the failure list unless
/// forced.
pub fn require_pass(report: &AuditReport, force: bool) -> Result<()> {
    if report.passed() || force {
        return Ok(());
    }
    let failures: Vec<String> = report
        .failures()
        .iter()
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    Err(EvoError::Audit(failures.join("; ")))
}
