//! Reference solutions from the asymptotic theory: the canonical mean-trait
//! ODE, the equilibrium population manifold `I(x)` and its fixed point
//! `x*`, the limiting population size, the moment-envelope fixed point, and
//! the fast logistic tracker. Simulations are compared against these.

use crate::error::{EvoError, Result};
use crate::models::{PredatorPreySpec, PreyMortalityFamily, SingleSpeciesSpec};

/// Reference trajectories of the asymptotic theory on a shared time grid.
/// Columns that do not apply hold NaN.
#[derive(Debug, Clone)]
pub struct TheoryTrajectory {
    pub times: Vec<f64>,
    /// Mean-trait ODE started from the finite-eps initial mean.
    pub zbar_eps: Vec<f64>,
    /// Mean-trait ODE started from the limiting initial mean.
    pub zbar_0: Vec<f64>,
    /// Equilibrium population I(zbar_eps) (predator-prey).
    pub i_of_z: Vec<f64>,
    /// Limiting population (r0(t) - m0(zbar_0 - X0, t)) / kappa
    /// (single species).
    pub rho_limit: Vec<f64>,
}

impl TheoryTrajectory {
    pub const CSV_HEADER: &'static str = "times,zbar_eps,zbar_0,i_of_z,rho_limit";

    /// Value of a column at the sample nearest to `t`.
    pub fn nearest(&self, t: f64, column: &[f64]) -> f64 {
        if self.times.is_empty() {
            return f64::NAN;
        }
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, &ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        column[best]
    }
}

/// Classical fourth-order one-step integration of `z' = field(t, z)`.
/// The field may fail (equilibrium solver errors, band exits); failures
/// abort the integration.
pub fn integrate_mean_field(
    field: &dyn Fn(f64, f64) -> Result<f64>,
    z0: f64,
    horizon: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(EvoError::Contract("need dt > 0 and horizon >= 0".into()));
    }
    let n_steps = (horizon / dt).ceil() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut zs = Vec::with_capacity(n_steps + 1);
    let mut t = 0.0;
    let mut z = z0;
    times.push(t);
    zs.push(z);
    for step in 0..n_steps {
        let h = dt.min(horizon - t);
        if h <= 0.0 {
            break;
        }
        let k1 = field(t, z)?;
        let k2 = field(t + 0.5 * h, z + 0.5 * h * k1)?;
        let k3 = field(t + 0.5 * h, z + 0.5 * h * k2)?;
        let k4 = field(t + h, z + h * k3)?;
        z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = if step + 1 == n_steps { horizon } else { t + h };
        if !z.is_finite() {
            return Err(EvoError::NoConvergence(format!(
                "mean-trait integration diverged at t = {t}"
            )));
        }
        times.push(t);
        zs.push(z);
    }
    Ok((times, zs))
}

/// Canonical mean-trait equation for the single-species model:
/// `zdot = -grad m(z - X(t), t)`, integrated from both the finite-eps and
/// the limiting initial mean.
pub fn integrate_canonical_single(
    spec: &SingleSpeciesSpec,
    z0_eps: f64,
    z0_limit: f64,
    horizon: f64,
    dt: f64,
) -> Result<TheoryTrajectory> {
    let field = |t: f64, z: f64| -> Result<f64> { Ok(-spec.mortality_gradient_at(z, t)) };
    let (times, zbar_eps) = integrate_mean_field(&field, z0_eps, horizon, dt)?;
    let (_, zbar_0) = integrate_mean_field(&field, z0_limit, horizon, dt)?;
    let rho_limit: Vec<f64> = times
        .iter()
        .zip(&zbar_0)
        .map(|(&t, &z)| (spec.birth.eval(t) - spec.mortality_at(z, t)) / spec.kappa)
        .collect();
    let n = times.len();
    Ok(TheoryTrajectory { times, zbar_eps, zbar_0, i_of_z: vec![f64::NAN; n], rho_limit })
}

/// Limiting population of the single-species model along `zbar_0`, together
/// with the times at which the theory predicts extinction (nonpositive
/// values).
#[derive(Debug, Clone)]
pub struct LimitingPopulation {
    pub values: Vec<f64>,
    pub nonpositive_times: Vec<f64>,
}

pub fn limiting_population_single(
    spec: &SingleSpeciesSpec,
    traj: &TheoryTrajectory,
) -> LimitingPopulation {
    let mut values = Vec::with_capacity(traj.times.len());
    let mut nonpositive_times = Vec::new();
    for (&t, &z) in traj.times.iter().zip(&traj.zbar_0) {
        let rho = (spec.birth.eval(t) - spec.mortality_at(z, t)) / spec.kappa;
        if rho <= 0.0 {
            nonpositive_times.push(t);
        }
        values.push(rho);
    }
    LimitingPopulation { values, nonpositive_times }
}

/// Bracketed scalar root finder: bisection to a coarse interval, then
/// safeguarded Newton with a finite-difference derivative.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumSolver {
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Sample count of the sign scan used to detect multiple roots.
    pub scan_points: usize,
}

impl EquilibriumSolver {
    pub fn new(bracket_lo: f64, bracket_hi: f64) -> Self {
        Self { bracket_lo, bracket_hi, tolerance: 1e-12, max_iter: 200, scan_points: 200 }
    }

    pub fn solve(&self, g: &dyn Fn(f64) -> f64, what: &str) -> Result<f64> {
        let (mut lo, mut hi) = (self.bracket_lo, self.bracket_hi);
        let (g_lo, g_hi) = (g(lo), g(hi));
        if g_lo == 0.0 {
            return Ok(lo);
        }
        if g_hi == 0.0 {
            return Ok(hi);
        }
        if g_lo * g_hi > 0.0 {
            return Err(EvoError::Assumption(format!(
                "{what}: no sign change on [{lo}, {hi}] (g = {g_lo} .. {g_hi})"
            )));
        }
        // multiple-root detection by sign scan
        let mut changes = 0;
        let mut prev = g_lo;
        for k in 1..=self.scan_points {
            let x = lo + (hi - lo) * k as f64 / self.scan_points as f64;
            let v = g(x);
            if prev != 0.0 && v != 0.0 && prev.signum() != v.signum() {
                changes += 1;
            }
            if v != 0.0 {
                prev = v;
            }
        }
        if changes > 1 {
            return Err(EvoError::Assumption(format!(
                "{what}: {changes} sign changes on [{lo}, {hi}], root is ambiguous"
            )));
        }
        // bisection to a short interval
        let mut f_lo = g_lo;
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            let f_mid = g(mid);
            if f_mid == 0.0 {
                return Ok(mid);
            }
            if f_lo.signum() * f_mid.signum() < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                f_lo = f_mid;
            }
        }
        // Newton polish, kept inside the bracket
        let mut x = 0.5 * (lo + hi);
        let scale = g(self.bracket_lo).abs().max(1.0);
        for _ in 0..self.max_iter {
            let fx = g(x);
            if fx.abs() <= self.tolerance * scale {
                return Ok(x);
            }
            let h = 1e-7 * (1.0 + x.abs());
            let d = (g(x + h) - g(x - h)) / (2.0 * h);
            let next = if d != 0.0 { x - fx / d } else { 0.5 * (lo + hi) };
            x = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if fx.signum() == f_lo.signum() {
                lo = lo.max(x.min(hi));
            }
        }
        Err(EvoError::NoConvergence(format!("{what}: Newton polish stalled near {x}")))
    }
}

/// Closed-form equilibrium for the scheme mortality family:
/// the zero of `r1 - (I f(x)^2 - delta(x)) - kappa1 I`.
pub fn closed_form_equilibrium(spec: &PredatorPreySpec, x: f64) -> Option<f64> {
    match spec.family {
        PreyMortalityFamily::Section5Scheme => {
            let f = spec.contact.eval(x);
            Some((spec.r1 + spec.relief.eval(x)) / (f * f + spec.kappa1))
        }
        PreyMortalityFamily::HollingReduced => None,
    }
}

/// Equilibrium population `I(x)` of a prey population concentrated at trait
/// `x`: closed form for the scheme family, bracketed root of `G(x, .)`
/// otherwise.
pub fn solve_equilibrium(spec: &PredatorPreySpec, x: f64) -> Result<f64> {
    if let Some(i) = closed_form_equilibrium(spec, x) {
        return Ok(i);
    }
    solve_equilibrium_bracketed(spec, x)
}

/// Always use the generic bracketed root finder, regardless of family.
/// Cross-checks the closed form in tests.
pub fn solve_equilibrium_bracketed(spec: &PredatorPreySpec, x: f64) -> Result<f64> {
    let ceiling = spec.population_ceiling(x - 1.0, x + 1.0).unwrap_or(spec.r1 / spec.kappa1 * 4.0);
    let solver = EquilibriumSolver::new(1e-9, 2.0 * ceiling + 1.0);
    let root = solver.solve(&|i| spec.growth(x, i), "equilibrium population")?;
    if !(root > 0.0) {
        return Err(EvoError::Assumption(format!("equilibrium at x = {x} is not positive")));
    }
    Ok(root)
}

/// Slope of `G(x, .)` at the equilibrium, by central differences. Negative
/// values certify a stable population equilibrium.
pub fn growth_slope_at_equilibrium(spec: &PredatorPreySpec, x: f64, i: f64) -> f64 {
    let h = 1e-6 * (1.0 + i.abs());
    (spec.growth(x, i + h) - spec.growth(x, i - h)) / (2.0 * h)
}

/// Selection gradient felt by a population concentrated at trait `z` with
/// population `i`: the trait derivative of the per-capita mortality.
pub fn selection_gradient(spec: &PredatorPreySpec, z: f64, i: f64) -> f64 {
    spec.mortality_gradient(z, i, spec.contact.eval(z))
}

/// Fixed point of the autonomous mean-trait dynamics together with its
/// convexity certificate.
#[derive(Debug, Clone, Copy)]
pub struct FixedPoint {
    pub x_star: f64,
    pub i_star: f64,
    /// Second difference (in the trait slot, ecology frozen at the fixed
    /// point) of the effective mortality landscape; positive values certify
    /// a strict minimum.
    pub convexity: f64,
}

/// Root of the selection gradient `x -> grad m(x, I(x))` on a band, by
/// bisection plus Newton polish on the sampled gradient.
pub fn find_fixed_point(spec: &PredatorPreySpec, band_lo: f64, band_hi: f64) -> Result<FixedPoint> {
    let psi = |x: f64| -> f64 {
        match solve_equilibrium(spec, x) {
            Ok(i) => selection_gradient(spec, x, i),
            Err(_) => f64::NAN,
        }
    };
    let probe = psi(band_lo);
    if !probe.is_finite() {
        return Err(EvoError::Assumption(format!(
            "no equilibrium population at band edge {band_lo}"
        )));
    }
    let solver = EquilibriumSolver::new(band_lo, band_hi);
    let x_star = solver.solve(&psi, "trait fixed point")?;
    let i_star = solve_equilibrium(spec, x_star)?;
    Ok(FixedPoint { x_star, i_star, convexity: landscape_convexity(spec, x_star, i_star) })
}

/// Second difference of the per-capita mortality landscape in its trait
/// slot, with population and averaged contact frozen at `(i, f(x))`.
pub fn landscape_convexity(spec: &PredatorPreySpec, x: f64, i: f64) -> f64 {
    let c = spec.contact.eval(x);
    let h = 1e-3;
    let m = |xi: f64| -> f64 {
        match spec.family {
            PreyMortalityFamily::Section5Scheme => {
                i * c * spec.contact.eval(xi) - spec.relief.eval(xi)
            }
            PreyMortalityFamily::HollingReduced => {
                (spec.holling_f(xi, i, c) - spec.relief.eval(xi)) * i
            }
        }
    };
    (m(x + h) - 2.0 * m(x) + m(x - h)) / (h * h)
}

/// Expand a band around `x*` while the equilibrium stays solvable, stable
/// and the landscape stays convex; mirrors how the working neighbourhood of
/// the fixed point is discovered rather than assumed.
pub fn discover_band(
    spec: &PredatorPreySpec,
    x_star: f64,
    max_lo: f64,
    max_hi: f64,
) -> (f64, f64) {
    let step = 0.05;
    let healthy = |x: f64| -> bool {
        match solve_equilibrium(spec, x) {
            Ok(i) => {
                growth_slope_at_equilibrium(spec, x, i) < 0.0
                    && landscape_convexity(spec, x, i) > 0.0
            }
            Err(_) => false,
        }
    };
    let mut lo = x_star;
    while lo - step >= max_lo && healthy(lo - step) {
        lo -= step;
    }
    let mut hi = x_star;
    while hi + step <= max_hi && healthy(hi + step) {
        hi += step;
    }
    (lo, hi)
}

/// Autonomous mean-trait equation of the predator-prey model:
/// `zdot = -grad m(z, I(z))`, evaluated through the equilibrium manifold at
/// every stage. Exits with an error if `z` leaves the given band.
pub fn integrate_canonical_prey(
    spec: &PredatorPreySpec,
    z0_eps: f64,
    z0_limit: f64,
    horizon: f64,
    dt: f64,
    band: Option<(f64, f64)>,
) -> Result<TheoryTrajectory> {
    let field = |_t: f64, z: f64| -> Result<f64> {
        if let Some((lo, hi)) = band {
            if z < lo || z > hi {
                return Err(EvoError::Assumption(format!(
                    "mean trait {z} left the equilibrium band [{lo}, {hi}]"
                )));
            }
        }
        let i = solve_equilibrium(spec, z)?;
        Ok(-selection_gradient(spec, z, i))
    };
    let (times, zbar_eps) = integrate_mean_field(&field, z0_eps, horizon, dt)?;
    let (_, zbar_0) = integrate_mean_field(&field, z0_limit, horizon, dt)?;
    let i_of_z: Vec<f64> = zbar_eps
        .iter()
        .map(|&z| solve_equilibrium(spec, z).unwrap_or(f64::NAN))
        .collect();
    let n = times.len();
    Ok(TheoryTrajectory { times, zbar_eps, zbar_0, i_of_z, rho_limit: vec![f64::NAN; n] })
}

/// Parameters of the moment-envelope fixed-point equation
///
/// ```text
/// H(t) = 1 + exp(-eta t / eps^2)
///        + eta2 eps^-2 Int_0^t H(s)^2 exp(-eta (t-s)/eps^2) ds
///        + eta2 eps^-1 Int_0^t H(s) |Xdot(s)| exp(-eta (t-s)/eps^2) ds
/// ```
///
/// solved by Picard iteration. The iteration contracts when
/// `eta2 <= eta / (9 + 3 L_X eta)`.
#[derive(Debug, Clone, Copy)]
pub struct HbarParams {
    pub eta: f64,
    pub eta2: f64,
    pub l_x: f64,
    pub epsilon: f64,
    pub horizon: f64,
    /// Time-grid size override; resolved from the boundary layer otherwise.
    pub n_steps: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct HbarSolution {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm defect of the converged iterate under the defining map.
    pub residual: f64,
}

impl HbarSolution {
    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Exponentially weighted running integral `Int_0^t g(s) e^{-a(t-s)} ds`
/// on a uniform grid, exact for piecewise-linear `g`.
pub(crate) fn exp_kernel_integral(g: &[f64], a: f64, h: f64) -> Vec<f64> {
    let decay = (-a * h).exp();
    // E = int_0^h e^{-a(h-u)} du, W = (1/h) int_0^h u e^{-a(h-u)} du
    let e = -(-a * h).exp_m1() / a;
    let w = 1.0 / a - e / (a * h);
    let mut out = Vec::with_capacity(g.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..g.len() {
        acc = decay * acc + g[i - 1] * (e - w) + g[i] * w;
        out.push(acc);
    }
    out
}

/// Solve the moment-envelope equation by Picard iteration from the constant
/// 2, stopping at sup-difference 1e-10.
pub fn solve_hbar(params: &HbarParams, xdot_abs: &dyn Fn(f64) -> f64) -> Result<HbarSolution> {
    let HbarParams { eta, eta2, l_x, epsilon, horizon, n_steps } = *params;
    if !(eta > 0.0) || !(epsilon > 0.0) || !(horizon > 0.0) || eta2 < 0.0 || l_x < 0.0 {
        return Err(EvoError::Contract("envelope parameters out of range".into()));
    }
    let bound = eta / (9.0 + 3.0 * l_x * eta);
    if eta2 > bound * (1.0 + 1e-12) {
        return Err(EvoError::Contract(format!(
            "contraction condition violated: eta2 = {eta2} > eta/(9 + 3 L_X eta) = {bound}"
        )));
    }
    let eps2 = epsilon * epsilon;
    let a = eta / eps2;
    let n = n_steps.unwrap_or_else(|| {
        let layer_step = eps2 / (20.0 * eta);
        ((horizon / layer_step).ceil() as usize).clamp(500, 400_000)
    });
    let h = horizon / n as f64;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    let xdot: Vec<f64> = times.iter().map(|&t| xdot_abs(t).abs()).collect();
    let forcing: Vec<f64> = times.iter().map(|&t| 1.0 + (-a * t).exp()).collect();

    let apply = |hv: &[f64]| -> Vec<f64> {
        let sq: Vec<f64> = hv.iter().map(|v| v * v).collect();
        let drift: Vec<f64> = hv.iter().zip(&xdot).map(|(v, x)| v * x).collect();
        let i1 = exp_kernel_integral(&sq, a, h);
        let i2 = exp_kernel_integral(&drift, a, h);
        (0..hv.len())
            .map(|k| forcing[k] + eta2 / eps2 * i1[k] + eta2 / epsilon * i2[k])
            .collect()
    };

    let mut current = vec![2.0; n + 1];
    for iter in 0..500 {
        let next = apply(&current);
        let diff = next
            .iter()
            .zip(&current)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        current = next;
        if diff <= 1e-10 {
            let mapped = apply(&current);
            let residual = mapped
                .iter()
                .zip(&current)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            return Ok(HbarSolution { times, values: current, iterations: iter + 1, residual });
        }
    }
    Err(EvoError::NoConvergence("envelope Picard iteration did not reach 1e-10 in 500 sweeps".into()))
}

/// Fast logistic tracker `eps^2 y' = alpha(t) (H(t) - y) y`, integrated with
/// the implicit midpoint rule (Newton inner solve). The default step is
/// `eps^2/4`; smaller steps may be requested, larger ones are rejected.
pub fn logistic_tracker(
    alpha: &dyn Fn(f64) -> f64,
    h_fn: &dyn Fn(f64) -> f64,
    y0: f64,
    epsilon: f64,
    horizon: f64,
    dt: Option<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(epsilon > 0.0) || !(horizon >= 0.0) {
        return Err(EvoError::Contract("tracker needs positive epsilon and horizon".into()));
    }
    let eps2 = epsilon * epsilon;
    let max_dt = 0.25 * eps2;
    let step = match dt {
        None => max_dt,
        Some(d) if d > 0.0 && d <= max_dt * (1.0 + 1e-12) => d,
        Some(d) => {
            return Err(EvoError::Config(format!(
                "tracker step {d} exceeds the stiffness bound eps^2/4 = {max_dt}"
            )))
        }
    };
    if y0 <= 0.0 {
        return Err(EvoError::Extinction { time: 0.0, what: "tracker population".into() });
    }
    let n = (horizon / step).ceil() as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    let mut t = 0.0;
    let mut y = y0;
    times.push(t);
    ys.push(y);
    for k in 0..n {
        let h = step.min(horizon - t);
        if h <= 0.0 {
            break;
        }
        let tm = t + 0.5 * h;
        let (am, hm) = (alpha(tm), h_fn(tm));
        let phi = |v: f64| am * (hm - v) * v / eps2;
        let dphi = |v: f64| am * (hm - 2.0 * v) / eps2;
        // Newton for z = y + h*phi((y+z)/2)
        let mut z = y;
        let mut converged = false;
        for _ in 0..100 {
            let mid = 0.5 * (y + z);
            let g = z - y - h * phi(mid);
            if g.abs() <= 1e-14 * (1.0 + z.abs()) {
                converged = true;
                break;
            }
            let dg = 1.0 - 0.5 * h * dphi(mid);
            z -= g / dg;
        }
        if !converged {
            return Err(EvoError::NoConvergence(format!(
                "tracker Newton solve stalled at t = {t}"
            )));
        }
        y = z;
        if y <= 0.0 {
            return Err(EvoError::Extinction { time: t + h, what: "tracker population".into() });
        }
        t = if k + 1 == n { horizon } else { t + h };
        times.push(t);
        ys.push(y);
    }
    Ok((times, ys))
}
