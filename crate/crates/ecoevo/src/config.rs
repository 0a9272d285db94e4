//! Declarative scenario files: parsing, defaulting, and the bundled
//! scenario catalog. A scenario file is flat TOML with one section per
//! concern; every omitted field takes the documented default and the fully
//! resolved configuration is echoed next to the run outputs.

use serde::{Deserialize, Serialize};

use crate::audit::AuditConfig;
use crate::error::{EvoError, Result};
use crate::grid::Grid1D;
use crate::models::{
    BirthRate, ContactFunction, MortalityFamily, OptimumTrajectory, PredatorPreySpec,
    PreyMortalityFamily, ReliefFunction, SingleSpeciesSpec,
};
use crate::stepper::{InitialCondition, ModelSpec, RunOptions, SchemeConfig, SimulationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SingleSpecies,
    PredatorPreyReduced,
    PredatorPreyCoupled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { x_min: -2.0, x_max: 2.0, n_nodes: 201 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    /// Defaults to eps^2/2.
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub record_stride: Option<usize>,
    pub snapshot_times: Option<Vec<f64>>,
    pub safety_factor: Option<f64>,
    pub allow_unstable_dt: Option<bool>,
    pub renormalize_each_step: Option<bool>,
    pub k0: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Indicator,
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    /// Defaults to 0.8 + eps/2.
    pub center: Option<f64>,
    /// Gaussian width; defaults to eps.
    pub std: Option<f64>,
    /// Initial populations; on-manifold equilibria when absent.
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    /// Advance the raw population density instead of the normalized
    /// distribution (single-species only).
    pub population_mode: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleSection {
    pub kappa: f64,
    pub birth: BirthRate,
    pub mortality: MortalityFamily,
    pub optimum: OptimumTrajectory,
}

impl Default for SingleSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            birth: BirthRate::Constant { rate: 1.0 },
            mortality: MortalityFamily::Quadratic { strength: 1.0 },
            optimum: OptimumTrajectory::Constant,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreySection {
    pub r1: f64,
    pub h: f64,
    pub kappa1: f64,
    pub gamma: f64,
    pub kappa2: f64,
    pub tau: f64,
    pub family: PreyMortalityFamily,
    pub g_exponent: u32,
    pub contact: ContactFunction,
    pub relief: ReliefFunction,
}

impl Default for PreySection {
    fn default() -> Self {
        Self {
            r1: 1.0,
            h: 0.0,
            kappa1: 1.0,
            gamma: 1.0,
            kappa2: 1.0,
            tau: 0.0,
            family: PreyMortalityFamily::Section5Scheme,
            g_exponent: 1,
            contact: ContactFunction::ClampedSquare { floor: 0.1 },
            relief: ReliefFunction::ClampedLinear { slope: 0.4, cap: 1.0 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub window: Option<(f64, f64)>,
    pub horizon: Option<f64>,
    pub k0: Option<u32>,
    pub l_x: Option<f64>,
    pub fixed_point_band: Option<(f64, f64)>,
    pub convexity_floor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    /// Step of the reference ODE integrations.
    pub dt: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self { dt: 1e-3 }
    }
}

/// One scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelKind,
    /// Single-run segregational deviation.
    pub epsilon: Option<f64>,
    /// Sweep list; takes precedence for the sweep command.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub initial: InitialSection,
    pub single_species: Option<SingleSection>,
    pub predator_prey: Option<PreySection>,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub theory: TheorySection,
}

fn default_seed() -> u64 {
    42
}

/// A scenario resolved at one epsilon, ready to run.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub epsilon: f64,
    pub grid: Grid1D,
    pub model: ModelSpec,
    pub scheme: SchemeConfig,
    pub initial: InitialCondition,
    pub options: RunOptions,
    pub audit: AuditConfig,
    pub theory_dt: f64,
    pub seed: u64,
    /// Start of the limiting mean-trait ODE: the epsilon-free part of the
    /// default initial mean, or the explicit center.
    pub z0_limit: f64,
    /// Fully defaulted copy of the configuration, for the echo file.
    pub resolved: ScenarioConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EvoError::Config(format!("scenario parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario configs serialize")
    }

    /// The epsilon values a sweep visits.
    pub fn epsilon_list(&self) -> Result<Vec<f64>> {
        if !self.epsilons.is_empty() {
            return Ok(self.epsilons.clone());
        }
        self.epsilon
            .map(|e| vec![e])
            .ok_or_else(|| EvoError::Config("scenario sets neither epsilon nor epsilons".into()))
    }

    /// Resolve every default at the given epsilon.
    pub fn build(&self, epsilon: f64) -> Result<BuiltScenario> {
        if !(epsilon > 0.0) {
            return Err(EvoError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        let grid = Grid1D::new(self.grid.x_min, self.grid.x_max, self.grid.n_nodes)?;

        let model = match self.model {
            ModelKind::SingleSpecies => {
                let s = self.single_species.clone().unwrap_or_default();
                if self.predator_prey.is_some() {
                    return Err(EvoError::Config(
                        "single_species model with a [predator_prey] section".into(),
                    ));
                }
                ModelSpec::Single(SingleSpeciesSpec {
                    epsilon,
                    birth: s.birth,
                    mortality: s.mortality,
                    optimum: s.optimum,
                    kappa: s.kappa,
                })
            }
            ModelKind::PredatorPreyReduced | ModelKind::PredatorPreyCoupled => {
                let p = self.predator_prey.clone().unwrap_or_default();
                if self.single_species.is_some() {
                    return Err(EvoError::Config(
                        "predator_prey model with a [single_species] section".into(),
                    ));
                }
                let tau = match self.model {
                    ModelKind::PredatorPreyReduced => 0.0,
                    _ => {
                        if !(p.tau > 0.0) {
                            return Err(EvoError::Config(
                                "coupled model needs predator_prey.tau > 0".into(),
                            ));
                        }
                        p.tau
                    }
                };
                ModelSpec::PredatorPrey(PredatorPreySpec {
                    epsilon,
                    r1: p.r1,
                    contact: p.contact,
                    relief: p.relief,
                    h: p.h,
                    kappa1: p.kappa1,
                    gamma: p.gamma,
                    kappa2: p.kappa2,
                    tau,
                    family: p.family,
                    g_exponent: p.g_exponent,
                })
            }
        };

        let defaults = SchemeConfig::default();
        let safety = self.scheme.safety_factor.unwrap_or(defaults.safety_factor);
        let scheme = SchemeConfig {
            dt: Some(
                self.scheme
                    .dt
                    .unwrap_or(0.5 * epsilon * epsilon * safety.min(1.0)),
            ),
            horizon: self.scheme.horizon.unwrap_or(defaults.horizon),
            safety_factor: safety,
            allow_unstable_dt: self.scheme.allow_unstable_dt.unwrap_or(false),
            renormalize_each_step: self
                .scheme
                .renormalize_each_step
                .unwrap_or(defaults.renormalize_each_step),
            record_stride: self.scheme.record_stride.unwrap_or(defaults.record_stride),
            snapshot_times: self
                .scheme
                .snapshot_times
                .clone()
                .unwrap_or_else(|| defaults.snapshot_times.clone()),
            k0: self.scheme.k0.unwrap_or(defaults.k0),
        };
        scheme.resolved_dt(epsilon)?;

        let z0_limit = self.initial.center.unwrap_or(0.8);
        let center = self.initial.center.unwrap_or(0.8 + 0.5 * epsilon);
        let initial = match self.initial.kind {
            InitialKind::Indicator => InitialCondition::Indicator { center },
            InitialKind::Gaussian => InitialCondition::Gaussian {
                center,
                std: self.initial.std.unwrap_or(epsilon),
            },
        };
        let options = RunOptions {
            mode: match self.initial.population_mode {
                Some(true) => Some(SimulationMode::Population),
                _ => Some(SimulationMode::Distribution),
            },
            rho1_init: self.initial.rho1,
            rho2_init: self.initial.rho2,
        };

        let audit_defaults = AuditConfig::default();
        let audit = AuditConfig {
            window: self.audit.window.unwrap_or(audit_defaults.window),
            horizon: self.audit.horizon.unwrap_or(scheme.horizon.max(1.0)),
            k0: self.audit.k0.unwrap_or(scheme.k0),
            l_x: self.audit.l_x.unwrap_or(audit_defaults.l_x),
            fixed_point_band: self
                .audit
                .fixed_point_band
                .unwrap_or(audit_defaults.fixed_point_band),
            convexity_floor: self.audit.convexity_floor.unwrap_or(audit_defaults.convexity_floor),
        };

        // echo with every default applied
        let mut resolved = self.clone();
        resolved.epsilon = Some(epsilon);
        resolved.scheme = SchemeSection {
            dt: scheme.dt,
            horizon: Some(scheme.horizon),
            record_stride: Some(scheme.record_stride),
            snapshot_times: Some(scheme.snapshot_times.clone()),
            safety_factor: Some(scheme.safety_factor),
            allow_unstable_dt: Some(scheme.allow_unstable_dt),
            renormalize_each_step: Some(scheme.renormalize_each_step),
            k0: Some(scheme.k0),
        };
        resolved.initial.center = Some(center);
        if self.initial.kind == InitialKind::Gaussian {
            resolved.initial.std = Some(self.initial.std.unwrap_or(epsilon));
        }
        resolved.audit = AuditSection {
            window: Some(audit.window),
            horizon: Some(audit.horizon),
            k0: Some(audit.k0),
            l_x: Some(audit.l_x),
            fixed_point_band: Some(audit.fixed_point_band),
            convexity_floor: Some(audit.convexity_floor),
        };
        match self.model {
            ModelKind::SingleSpecies => {
                resolved.single_species =
                    Some(self.single_species.clone().unwrap_or_default());
            }
            _ => {
                resolved.predator_prey = Some(self.predator_prey.clone().unwrap_or_default());
            }
        }

        Ok(BuiltScenario {
            epsilon,
            grid,
            model,
            scheme,
            initial,
            options,
            audit,
            theory_dt: self.theory.dt,
            seed: self.seed,
            z0_limit,
            resolved,
        })
    }
}

/// Bundled scenarios compiled into the binary.
pub const BUNDLED_SCENARIOS: &[(&str, &str)] = &[
    ("paper_fig12_eps02", include_str!("../scenarios/paper_fig12_eps02.toml")),
    ("paper_fig12_eps01", include_str!("../scenarios/paper_fig12_eps01.toml")),
    ("sweep_prey", include_str!("../scenarios/sweep_prey.toml")),
    ("sweep_single", include_str!("../scenarios/sweep_single.toml")),
    ("coupled_tau_eps02", include_str!("../scenarios/coupled_tau_eps02.toml")),
    ("single_moving_optimum", include_str!("../scenarios/single_moving_optimum.toml")),
];

pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    BUNDLED_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Load a scenario from a path, falling back to the bundled catalog when
/// the argument names one.
pub fn load_scenario(path_or_name: &str) -> Result<ScenarioConfig> {
    if std::path::Path::new(path_or_name).exists() {
        let text = std::fs::read_to_string(path_or_name)?;
        return ScenarioConfig::from_toml(&text);
    }
    if let Some(text) = bundled_scenario(path_or_name) {
        return ScenarioConfig::from_toml(text);
    }
    Err(EvoError::Config(format!(
        "no scenario file or bundled scenario named '{path_or_name}'"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse_and_build() {
        for (name, text) in BUNDLED_SCENARIOS {
            let config = ScenarioConfig::from_toml(text).unwrap_or_else(|e| {
                panic!("bundled scenario {name} failed to parse: {e}");
            });
            assert_eq!(&config.name, name);
            for eps in config.epsilon_list().unwrap() {
                config
                    .build(eps)
                    .unwrap_or_else(|e| panic!("bundled scenario {name} at eps={eps}: {e}"));
            }
        }
    }

    #[test]
    fn defaults_are_filled_into_the_echo() {
        let config = load_scenario("paper_fig12_eps02").unwrap();
        let built = config.build(0.2).unwrap();
        assert!((built.scheme.dt.unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(built.scheme.horizon, 16.0);
        let echo = built.resolved.to_toml();
        let parsed = ScenarioConfig::from_toml(&echo).unwrap();
        assert!((parsed.scheme.dt.unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(parsed.initial.center, Some(0.9));
    }

    #[test]
    fn epsilon_dependent_defaults_follow_the_sweep() {
        let config = load_scenario("sweep_prey").unwrap();
        let list = config.epsilon_list().unwrap();
        assert_eq!(list, vec![0.4, 0.2, 0.1]);
        let b = config.build(0.1).unwrap();
        assert!((b.scheme.dt.unwrap() - 0.005).abs() < 1e-15);
        match b.initial {
            InitialCondition::Indicator { center } => assert!((center - 0.85).abs() < 1e-15),
            _ => panic!("expected indicator"),
        }
    }

    #[test]
    fn malformed_and_contradictory_configs_error() {
        assert!(matches!(ScenarioConfig::from_toml("nonsense = ["), Err(EvoError::Config(_))));
        let text = r#"
name = "bad"
model = "predator_prey_coupled"
epsilon = 0.2
[predator_prey]
r1 = 1.0
h = 0.0
kappa1 = 1.0
gamma = 1.0
kappa2 = 1.0
tau = 0.0
family = "section5_scheme"
g_exponent = 1
contact = { kind = "clamped_square", floor = 0.1 }
relief = { kind = "clamped_linear", slope = 0.4, cap = 1.0 }
"#;
        let config = ScenarioConfig::from_toml(text).unwrap();
        assert!(matches!(config.build(0.2), Err(EvoError::Config(_))));
        assert!(matches!(load_scenario("no_such_scenario"), Err(EvoError::Config(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"
name = "x"
model = "single_species"
epsilon = 0.2
[scheme]
horison = 16.0
"#;
        assert!(matches!(ScenarioConfig::from_toml(text), Err(EvoError::Config(_))));
    }
}
