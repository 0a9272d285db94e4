//! Scenario definitions: birth rates, mortality families, optimum
//! trajectories and the predator-prey ecological functions. Specs are
//! declarative values; evaluation is pure.

use serde::{Deserialize, Serialize};

use crate::error::{EvoError, Result};
use crate::grid::{trapezoid, DensityState};

/// Time-dependent birth rate `r(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BirthRate {
    Constant { rate: f64 },
    /// `base + amplitude * sin(2 pi t / period)`; keeps `r(t)` positive when
    /// `amplitude < base`.
    Modulated { base: f64, amplitude: f64, period: f64 },
}

impl BirthRate {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            BirthRate::Constant { rate } => rate,
            BirthRate::Modulated { base, amplitude, period } => {
                base + amplitude * (2.0 * std::f64::consts::PI * t / period).sin()
            }
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match *self {
            BirthRate::Constant { rate } => rate,
            BirthRate::Modulated { base, amplitude, .. } => base - amplitude.abs(),
        }
    }
}

/// Mortality families `m(x, t)` in shifted coordinates (minimum at x = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MortalityFamily {
    /// `(strength/2) x^2`
    Quadratic { strength: f64 },
    /// `(strength/4) x^4`; its second derivative vanishes at the minimum,
    /// so the convexity audit rejects it. Kept as a negative control.
    Quartic { strength: f64 },
}

impl MortalityFamily {
    pub fn eval(&self, x: f64, _t: f64) -> f64 {
        match *self {
            MortalityFamily::Quadratic { strength } => 0.5 * strength * x * x,
            MortalityFamily::Quartic { strength } => 0.25 * strength * x.powi(4),
        }
    }

    pub fn gradient(&self, x: f64, _t: f64) -> f64 {
        match *self {
            MortalityFamily::Quadratic { strength } => strength * x,
            MortalityFamily::Quartic { strength } => strength * x.powi(3),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            MortalityFamily::Quadratic { strength } => strength,
            MortalityFamily::Quartic { strength } => 3.0 * strength * x * x,
        }
    }

    /// Declared growth-bound parameters `(A_m, p)` for the third derivative:
    /// `|m'''(x)| <= A_m (1 + |x|^{p-1})`.
    pub fn growth_bound(&self) -> (f64, i32) {
        match *self {
            MortalityFamily::Quadratic { .. } => (1e-9, 2),
            MortalityFamily::Quartic { strength } => (6.0 * strength, 2),
        }
    }
}

/// Trajectory of the mortality minimum (the moving optimum), with
/// `value(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimumTrajectory {
    Constant,
    LinearRamp { speed: f64 },
    /// `amplitude * sin(2 pi t / period)`; with `period ~ epsilon` this is a
    /// rapidly oscillating optimum.
    Sinusoidal { amplitude: f64, period: f64 },
}

impl OptimumTrajectory {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            OptimumTrajectory::Constant => 0.0,
            OptimumTrajectory::LinearRamp { speed } => speed * t,
            OptimumTrajectory::Sinusoidal { amplitude, period } => {
                amplitude * (2.0 * std::f64::consts::PI * t / period).sin()
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            OptimumTrajectory::Constant => 0.0,
            OptimumTrajectory::LinearRamp { speed } => speed,
            OptimumTrajectory::Sinusoidal { amplitude, period } => {
                let w = 2.0 * std::f64::consts::PI / period;
                amplitude * w * (w * t).cos()
            }
        }
    }

    pub fn max_speed(&self) -> f64 {
        match *self {
            OptimumTrajectory::Constant => 0.0,
            OptimumTrajectory::LinearRamp { speed } => speed.abs(),
            OptimumTrajectory::Sinusoidal { amplitude, period } => {
                (amplitude * 2.0 * std::f64::consts::PI / period).abs()
            }
        }
    }
}

/// Scenario for the single-species model: birth, shifted mortality,
/// optimum trajectory and uniform competition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleSpeciesSpec {
    pub epsilon: f64,
    pub birth: BirthRate,
    pub mortality: MortalityFamily,
    pub optimum: OptimumTrajectory,
    pub kappa: f64,
}

impl SingleSpeciesSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(EvoError::Config("epsilon must be positive".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(EvoError::Config("kappa must be positive".into()));
        }
        if self.birth.lower_bound() < 0.0 {
            return Err(EvoError::Config("birth rate must stay nonnegative".into()));
        }
        Ok(())
    }

    /// Mortality in lab coordinates, `m(x - X(t), t)`.
    pub fn mortality_at(&self, x: f64, t: f64) -> f64 {
        self.mortality.eval(x - self.optimum.value(t), t)
    }

    pub fn mortality_gradient_at(&self, x: f64, t: f64) -> f64 {
        self.mortality.gradient(x - self.optimum.value(t), t)
    }
}

/// Trait-dependent contact rate `f(x)`: nonnegative and nondecreasing on
/// the region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContactFunction {
    /// `max(x, floor)^2`: the riskier the foraging, the higher the contact.
    ClampedSquare { floor: f64 },
    /// `1 + x^2`, symmetric; used for fixed-point tests.
    OnePlusSquare,
    Zero,
}

impl ContactFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ContactFunction::ClampedSquare { floor } => x.max(floor).powi(2),
            ContactFunction::OnePlusSquare => 1.0 + x * x,
            ContactFunction::Zero => 0.0,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ContactFunction::ClampedSquare { floor } => {
                if x > floor {
                    2.0 * x
                } else {
                    0.0
                }
            }
            ContactFunction::OnePlusSquare => 2.0 * x,
            ContactFunction::Zero => 0.0,
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            ContactFunction::ClampedSquare { floor } => {
                if x > floor {
                    2.0
                } else {
                    0.0
                }
            }
            ContactFunction::OnePlusSquare => 2.0,
            ContactFunction::Zero => 0.0,
        }
    }
}

/// Competition relief `delta(x)`: resources gained by risky foraging reduce
/// intraspecific competition. Must stay below `kappa1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReliefFunction {
    /// `slope * min(cap, max(x, 0))`
    ClampedLinear { slope: f64, cap: f64 },
    /// `coeff * x^2`, symmetric; used for fixed-point tests.
    Quadratic { coeff: f64 },
    Zero,
}

impl ReliefFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ReliefFunction::ClampedLinear { slope, cap } => slope * x.clamp(0.0, cap),
            ReliefFunction::Quadratic { coeff } => coeff * x * x,
            ReliefFunction::Zero => 0.0,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ReliefFunction::ClampedLinear { slope, cap } => {
                if x > 0.0 && x < cap {
                    slope
                } else {
                    0.0
                }
            }
            ReliefFunction::Quadratic { coeff } => 2.0 * coeff * x,
            ReliefFunction::Zero => 0.0,
        }
    }

    pub fn second_derivative(&self, _x: f64) -> f64 {
        match *self {
            ReliefFunction::ClampedLinear { .. } => 0.0,
            ReliefFunction::Quadratic { coeff } => 2.0 * coeff,
            ReliefFunction::Zero => 0.0,
        }
    }

    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            ReliefFunction::ClampedLinear { slope, cap } => slope * hi.clamp(0.0, cap),
            ReliefFunction::Quadratic { coeff } => coeff * lo.abs().max(hi.abs()).powi(2),
            ReliefFunction::Zero => 0.0,
        }
    }
}

/// Which prey mortality is simulated.
///
/// The two families differ: the scheme family multiplies only the predation
/// term by the population and leaves the relief per capita, while the
/// reduced Holling family multiplies the whole bracket by the population and
/// keeps the saturating denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreyMortalityFamily {
    /// `m(x) = rho1 * fbar * f(x) - delta(x)`
    Section5Scheme,
    /// `m(x) = (F(x, rho1, fbar) - delta(x)) * rho1` with
    /// `F(x, I, C) = f(x) C / (1 + h C I)^2`
    HollingReduced,
}

/// Scenario for the predator-prey model. `tau = 0` selects the reduced
/// single-equation model; `tau > 0` keeps the predator ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredatorPreySpec {
    pub epsilon: f64,
    /// Prey birth rate.
    pub r1: f64,
    pub contact: ContactFunction,
    pub relief: ReliefFunction,
    /// Handling time of the functional response.
    pub h: f64,
    /// Baseline prey competition; must exceed the relief everywhere.
    pub kappa1: f64,
    /// Conversion factor of prey into predator (coupled mode).
    pub gamma: f64,
    /// Predator carrying-capacity coefficient (coupled mode).
    pub kappa2: f64,
    /// Predator timescale; 0 means reduced model.
    pub tau: f64,
    pub family: PreyMortalityFamily,
    /// Exponent on `F` inside the per-capita growth `G`; 1 matches the
    /// simulated mortality, 2 mirrors the squared variant.
    pub g_exponent: u32,
}

impl PredatorPreySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(EvoError::Config("epsilon must be positive".into()));
        }
        for (name, v) in [("r1", self.r1), ("kappa1", self.kappa1)] {
            if !(v > 0.0) {
                return Err(EvoError::Config(format!("{name} must be positive")));
            }
        }
        if self.h < 0.0 || self.tau < 0.0 {
            return Err(EvoError::Config("h and tau must be nonnegative".into()));
        }
        if self.tau > 0.0 && (!(self.gamma > 0.0) || !(self.kappa2 > 0.0)) {
            return Err(EvoError::Config(
                "coupled mode needs positive gamma and kappa2".into(),
            ));
        }
        if self.g_exponent != 1 && self.g_exponent != 2 {
            return Err(EvoError::Config("g_exponent must be 1 or 2".into()));
        }
        Ok(())
    }

    /// The saturating response `F(x, I, C) = f(x) C / (1 + h C I)^2`.
    pub fn holling_f(&self, x: f64, i: f64, c: f64) -> f64 {
        self.contact.eval(x) * c / (1.0 + self.h * c * i).powi(2)
    }

    /// Partial derivative of `F` in its first slot.
    pub fn holling_f_dx(&self, x: f64, i: f64, c: f64) -> f64 {
        self.contact.derivative(x) * c / (1.0 + self.h * c * i).powi(2)
    }

    pub fn holling_f_dxx(&self, x: f64, i: f64, c: f64) -> f64 {
        self.contact.second_derivative(x) * c / (1.0 + self.h * c * i).powi(2)
    }

    /// Per-capita prey mortality (competition term `kappa1 * rho1` excluded).
    pub fn eval_mortality(&self, x: f64, rho1: f64, fbar: f64) -> f64 {
        match self.family {
            PreyMortalityFamily::Section5Scheme => {
                rho1 * fbar * self.contact.eval(x) - self.relief.eval(x)
            }
            PreyMortalityFamily::HollingReduced => {
                (self.holling_f(x, rho1, fbar) - self.relief.eval(x)) * rho1
            }
        }
    }

    /// Trait gradient of the per-capita mortality at fixed `rho1`, `fbar`.
    pub fn mortality_gradient(&self, x: f64, rho1: f64, fbar: f64) -> f64 {
        match self.family {
            PreyMortalityFamily::Section5Scheme => {
                rho1 * fbar * self.contact.derivative(x) - self.relief.derivative(x)
            }
            PreyMortalityFamily::HollingReduced => {
                (self.holling_f_dx(x, rho1, fbar) - self.relief.derivative(x)) * rho1
            }
        }
    }

    /// Approximate per-capita growth `G(x, I)` of a population concentrated
    /// at trait `x` with size `I` (so the averaged contact is `f(x)`).
    pub fn growth(&self, x: f64, i: f64) -> f64 {
        match self.family {
            PreyMortalityFamily::Section5Scheme => {
                self.r1 - (i * self.contact.eval(x).powi(2) - self.relief.eval(x)) - self.kappa1 * i
            }
            PreyMortalityFamily::HollingReduced => {
                let f = self.holling_f(x, i, self.contact.eval(x));
                self.r1 - (f.powi(self.g_exponent as i32) + self.kappa1 - self.relief.eval(x)) * i
            }
        }
    }

    /// Upper bound `r1 / kappa*` on the prey population, from the minimum
    /// residual competition `kappa* = kappa1 - max delta`.
    pub fn population_ceiling(&self, x_lo: f64, x_hi: f64) -> Result<f64> {
        let kappa_star = self.kappa1 - self.relief.max_on(x_lo, x_hi);
        if !(kappa_star > 0.0) {
            return Err(EvoError::Assumption(format!(
                "competition must dominate relief: kappa1 - max delta = {kappa_star}"
            )));
        }
        Ok(self.r1 / kappa_star)
    }
}

/// The standard lab configuration of the predator-prey scenario:
/// `f(x) = max(x, 0.1)^2`, `delta(x) = (2/5) min(kappa1, max(x, 0))`,
/// `r1 = 1`, `kappa1 = 1`, `h = 0`, scheme mortality family.
pub fn lab_predator_prey(epsilon: f64) -> PredatorPreySpec {
    PredatorPreySpec {
        epsilon,
        r1: 1.0,
        contact: ContactFunction::ClampedSquare { floor: 0.1 },
        relief: ReliefFunction::ClampedLinear { slope: 0.4, cap: 1.0 },
        h: 0.0,
        kappa1: 1.0,
        gamma: 1.0,
        kappa2: 1.0,
        tau: 0.0,
        family: PreyMortalityFamily::Section5Scheme,
        g_exponent: 1,
    }
}

/// Average of the contact rate against a normalized trait distribution.
pub fn averaged_contact(q: &DensityState, contact: &ContactFunction) -> Result<f64> {
    averaged(q, |x| contact.eval(x))
}

/// Average of the competition relief against a normalized trait
/// distribution.
pub fn averaged_relief(q: &DensityState, relief: &ReliefFunction) -> Result<f64> {
    averaged(q, |x| relief.eval(x))
}

fn averaged(q: &DensityState, f: impl Fn(f64) -> f64) -> Result<f64> {
    if !q.is_normalized(1e-9) {
        return Err(EvoError::Contract(format!(
            "averaging requires a normalized density, mass is {}",
            q.mass()
        )));
    }
    let vals: Vec<f64> = (0..q.grid.n_nodes)
        .map(|i| f(q.grid.node(i)) * q.values[i])
        .collect();
    trapezoid(&vals, &q.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{normalize, DensityMode, Grid1D};
    use crate::moments::gaussian_ansatz;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_mortality_examples() {
        let spec = SingleSpeciesSpec {
            epsilon: 0.1,
            birth: BirthRate::Constant { rate: 1.0 },
            mortality: MortalityFamily::Quadratic { strength: 1.0 },
            optimum: OptimumTrajectory::Constant,
            kappa: 1.0,
        };
        assert!((spec.mortality_at(0.3, 5.0) - 0.045).abs() < 1e-15);

        let ramp = SingleSpeciesSpec {
            optimum: OptimumTrajectory::LinearRamp { speed: 0.1 },
            ..spec
        };
        assert!((ramp.mortality_at(0.5, 2.0) - 0.045).abs() < 1e-15);
    }

    #[test]
    fn mortality_minimum_tracks_the_optimum() {
        let spec = SingleSpeciesSpec {
            epsilon: 0.1,
            birth: BirthRate::Constant { rate: 1.0 },
            mortality: MortalityFamily::Quadratic { strength: 2.0 },
            optimum: OptimumTrajectory::Sinusoidal { amplitude: 0.3, period: 4.0 },
            kappa: 1.0,
        };
        let grid = Grid1D::default_lab();
        for t in [0.0, 0.7, 1.9] {
            let (mut best_x, mut best) = (0.0, f64::INFINITY);
            for i in 0..grid.n_nodes {
                let x = grid.node(i);
                let m = spec.mortality_at(x, t);
                assert!(m >= 0.0);
                if m < best {
                    best = m;
                    best_x = x;
                }
            }
            assert!((best_x - spec.optimum.value(t)).abs() <= grid.spacing);
        }
    }

    #[test]
    fn scheme_family_mortality_matches_printed_numbers() {
        let spec = lab_predator_prey(0.2);
        let m = spec.eval_mortality(0.8, 1.0, 0.64);
        assert!((m - 0.0896).abs() < 1e-12, "m={m}");
    }

    #[test]
    fn scheme_family_matches_independent_expression() {
        // rho * fbar * f(x) - delta(x), coded from scratch with the lab
        // functions, compared on random inputs.
        let spec = lab_predator_prey(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: f64 = rng.random_range(-2.0..2.0);
            let rho: f64 = rng.random_range(0.1..3.0);
            let fbar: f64 = rng.random_range(0.0..2.0);
            let f = if x > 0.1 { x * x } else { 0.01 };
            let delta = 0.4 * x.clamp(0.0, 1.0);
            let expect = rho * fbar * f - delta;
            let got = spec.eval_mortality(x, rho, fbar);
            assert!((got - expect).abs() < 1e-14 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn holling_family_degenerate_cases() {
        let mut spec = lab_predator_prey(0.2);
        spec.family = PreyMortalityFamily::HollingReduced;
        // h = 0: F = f(x) * fbar, so mortality is (f fbar - delta) rho.
        let (x, rho, fbar) = (0.8, 1.3, 0.5);
        let expect = (0.64 * fbar - 0.32) * rho;
        assert!((spec.eval_mortality(x, rho, fbar) - expect).abs() < 1e-14);
        // fbar = 0: pure competition relief.
        assert!((spec.eval_mortality(x, rho, 0.0) + 0.32 * rho).abs() < 1e-14);
        // h > 0 saturates the response.
        spec.h = 0.5;
        let saturated = spec.eval_mortality(x, rho, fbar);
        assert!(saturated < expect);
        let denom = (1.0 + 0.5 * fbar * rho).powi(2);
        assert!((saturated - (0.64 * fbar / denom - 0.32) * rho).abs() < 1e-14);
    }

    #[test]
    fn averaged_contact_point_mass_and_gaussian() {
        let grid = Grid1D::new(-2.0, 2.0, 801).unwrap();
        let contact = ContactFunction::OnePlusSquare;
        // point mass at a -> f(a)
        let mut vals = vec![0.0; grid.n_nodes];
        vals[600] = 1.0;
        let pm = normalize(&DensityState::new(grid, vals, 0.0, DensityMode::Population).unwrap()).unwrap();
        let a = grid.node(600);
        assert!((averaged_contact(&pm, &contact).unwrap() - contact.eval(a)).abs() < 1e-12);
        // E[1 + X^2] = 1 + m^2 + sigma^2 for a Gaussian
        let q = gaussian_ansatz(0.3, 0.2, &grid).unwrap();
        let got = averaged_contact(&q, &contact).unwrap();
        assert!((got - (1.0 + 0.09 + 0.04)).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn averaged_contact_indicator_matches_adaptive_oracle() {
        // Indicator initial condition at m0 = 0.9, eps = 0.2, lab contact
        // rate; reference value from Simpson quadrature of the underlying
        // piecewise-linear interpolant. Fine grid: the two quadratures
        // differ at O(dx^2) inside the indicator's ramp cells.
        let grid = Grid1D::new(-2.0, 2.0, 8001).unwrap();
        let (m0, eps) = (0.9, 0.2);
        let vals: Vec<f64> = (0..grid.n_nodes)
            .map(|i| if (grid.node(i) - m0).abs() < eps { 0.5 / eps } else { 0.0 })
            .collect();
        let q = normalize(&DensityState::new(grid, vals, 0.0, DensityMode::Population).unwrap()).unwrap();
        let contact = ContactFunction::ClampedSquare { floor: 0.1 };
        let got = averaged_contact(&q, &contact).unwrap();

        let interp = |x: f64| -> f64 {
            if x <= grid.x_min || x >= grid.x_max {
                return 0.0;
            }
            let s = (x - grid.x_min) / grid.spacing;
            let i = (s.floor() as usize).min(grid.n_nodes - 2);
            let frac = s - i as f64;
            q.values[i] * (1.0 - frac) + q.values[i + 1] * frac
        };
        let f = |x: f64| contact.eval(x) * interp(x);
        let mut oracle = 0.0;
        for i in 0..grid.n_nodes - 1 {
            let (a, b) = (grid.node(i), grid.node(i + 1));
            let m = 0.5 * (a + b);
            oracle += (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
        }
        assert!((got - oracle).abs() < 1e-6, "got {got} oracle {oracle}");
    }

    #[test]
    fn contact_zero_decouples() {
        let grid = Grid1D::default_lab();
        let q = gaussian_ansatz(0.5, 0.2, &grid).unwrap();
        assert_eq!(averaged_contact(&q, &ContactFunction::Zero).unwrap(), 0.0);
    }

    #[test]
    fn population_ceiling_requires_dominant_competition() {
        let spec = lab_predator_prey(0.2);
        let ceiling = spec.population_ceiling(-2.0, 2.0).unwrap();
        assert!((ceiling - 1.0 / 0.6).abs() < 1e-12);
        let mut bad = spec;
        bad.relief = ReliefFunction::ClampedLinear { slope: 1.2, cap: 1.0 };
        assert!(matches!(bad.population_ceiling(-2.0, 2.0), Err(EvoError::Assumption(_))));
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut spec = lab_predator_prey(0.2);
        assert!(spec.validate().is_ok());
        spec.g_exponent = 3;
        assert!(spec.validate().is_err());
        let mut spec = lab_predator_prey(0.2);
        spec.epsilon = 0.0;
        assert!(spec.validate().is_err());
    }
}
