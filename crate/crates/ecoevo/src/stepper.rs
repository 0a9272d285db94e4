//! Explicit forward-in-time scheme for the trait-structured models.
//!
//! The trait distribution is advanced on the slow clock of the population
//! equations: one step of size `dt` multiplies the right-hand side by
//! `dt / eps^2`, so the default step `dt = eps^2/2` applies the operator
//! with weight one half. Every step optionally renormalizes the
//! distribution and re-imposes Dirichlet zeros at the boundary nodes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{EvoError, Result};
use crate::grid::{normalize, trapezoid, DensityMode, DensityState, Grid1D};
use crate::models::{averaged_contact, averaged_relief, PredatorPreySpec, SingleSpeciesSpec};
use crate::moments::{central_moment, gaussian_ansatz, wasserstein, MomentRecord};
use crate::operator::{InfinitesimalOp, SegregationKernel};
use crate::theory::EquilibriumSolver;

/// Scheme parameters. The stability guard rejects steps above
/// `safety_factor * eps^2 / 2` unless explicitly overridden.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Time step; `eps^2/2` when absent.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub safety_factor: f64,
    pub allow_unstable_dt: bool,
    pub renormalize_each_step: bool,
    /// Diagnostics cadence in steps.
    pub record_stride: usize,
    /// Times at which full density snapshots are kept.
    pub snapshot_times: Vec<f64>,
    /// Half-order of the high central moment recorded as `m2k0c`.
    pub k0: u32,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: None,
            horizon: 16.0,
            safety_factor: 1.0,
            allow_unstable_dt: false,
            renormalize_each_step: true,
            record_stride: 5,
            snapshot_times: vec![2.0, 16.0],
            k0: 2,
        }
    }
}

impl SchemeConfig {
    pub fn resolved_dt(&self, epsilon: f64) -> Result<f64> {
        let stable = 0.5 * epsilon * epsilon * self.safety_factor.min(1.0);
        let dt = self.dt.unwrap_or(stable);
        if !(dt > 0.0) {
            return Err(EvoError::Config(format!("time step must be positive, got {dt}")));
        }
        if dt > stable * (1.0 + 1e-12) && !self.allow_unstable_dt {
            return Err(EvoError::Config(format!(
                "dt = {dt} exceeds the stability guard {stable}; set allow_unstable_dt to force"
            )));
        }
        if self.record_stride == 0 {
            return Err(EvoError::Config("record_stride must be at least 1".into()));
        }
        if self.k0 == 0 {
            return Err(EvoError::Config("k0 must be at least 1".into()));
        }
        Ok(dt)
    }
}

/// Which model a simulation advances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Single(SingleSpeciesSpec),
    PredatorPrey(PredatorPreySpec),
}

impl ModelSpec {
    pub fn epsilon(&self) -> f64 {
        match self {
            ModelSpec::Single(s) => s.epsilon,
            ModelSpec::PredatorPrey(s) => s.epsilon,
        }
    }
}

/// Storage mode of the advancing state: normalized trait distribution with
/// a companion population ODE, or the raw population density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    Distribution,
    Population,
}

/// Initial trait distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `(1/2 eps) 1_{|x - center| < eps}`, normalized on the grid.
    Indicator { center: f64 },
    Gaussian { center: f64, std: f64 },
}

impl InitialCondition {
    pub fn build(&self, grid: &Grid1D, epsilon: f64) -> Result<DensityState> {
        let state = match *self {
            InitialCondition::Indicator { center } => {
                let values: Vec<f64> = (0..grid.n_nodes)
                    .map(|i| {
                        if (grid.node(i) - center).abs() < epsilon {
                            0.5 / epsilon
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut raw = DensityState::new(*grid, values, 0.0, DensityMode::Population)?;
                raw.apply_dirichlet();
                normalize(&raw)?
            }
            InitialCondition::Gaussian { center, std } => {
                let mut g = gaussian_ansatz(center, std, grid)?;
                g.apply_dirichlet();
                normalize(&g)?
            }
        };
        Ok(state)
    }
}

/// Extra run inputs besides the scheme itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub mode: Option<SimulationMode>,
    /// Initial population; the on-manifold equilibrium of the initial state
    /// when absent.
    pub rho1_init: Option<f64>,
    /// Initial predator population (coupled mode); its quasi-static
    /// equilibrium when absent.
    pub rho2_init: Option<f64>,
}

/// Full state captured at a requested time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub requested_time: f64,
    pub state: DensityState,
    pub rho1: f64,
    pub rho2: Option<f64>,
}

/// A completed (or gracefully halted) run.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub records: Vec<MomentRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: DensityState,
    pub final_rho1: f64,
    pub final_rho2: Option<f64>,
    /// Time of a population-extinction event, if the run halted early.
    pub extinction: Option<f64>,
    pub total_boundary_leak: f64,
    pub max_mass_defect: f64,
    pub steps_executed: usize,
    pub wall_seconds: f64,
}

impl SimulationRun {
    pub fn terminal(&self) -> &MomentRecord {
        self.records.last().expect("runs always hold the initial record")
    }
}

/// One live simulation. Owns its state and transform buffers; independent
/// runs can execute in parallel.
pub struct Simulation {
    model: ModelSpec,
    mode: SimulationMode,
    op: InfinitesimalOp,
    nodes: Vec<f64>,
    pub state: DensityState,
    pub rho1: f64,
    pub rho2: Option<f64>,
    pub time: f64,
    pub step_index: usize,
    dt: f64,
    lambda: f64,
    renormalize: bool,
    k0: u32,
    last_leak: f64,
    total_leak: f64,
    max_mass_defect: f64,
}

impl Simulation {
    pub fn new(
        model: ModelSpec,
        scheme: &SchemeConfig,
        grid: Grid1D,
        initial: &InitialCondition,
        options: &RunOptions,
    ) -> Result<Self> {
        match &model {
            ModelSpec::Single(s) => s.validate()?,
            ModelSpec::PredatorPrey(s) => s.validate()?,
        }
        let epsilon = model.epsilon();
        let dt = scheme.resolved_dt(epsilon)?;
        let kernel = SegregationKernel::new(epsilon)?;
        let op = InfinitesimalOp::new(grid, kernel)?;
        let q0 = initial.build(&grid, epsilon)?;

        let mode = options.mode.unwrap_or(SimulationMode::Distribution);
        if mode == SimulationMode::Population {
            if let ModelSpec::PredatorPrey(_) = model {
                return Err(EvoError::Config(
                    "population-mode stepping is only wired for the single-species model".into(),
                ));
            }
        }

        let rho1 = match options.rho1_init {
            Some(r) if r > 0.0 => r,
            Some(r) => {
                return Err(EvoError::Config(format!("initial population must be positive, got {r}")))
            }
            None => equilibrium_rho_for_state(&model, &q0)?,
        };

        let rho2 = match &model {
            ModelSpec::PredatorPrey(spec) if spec.tau > 0.0 => {
                let fbar = averaged_contact(&q0, &spec.contact)?;
                let default = spec.gamma * fbar * rho1
                    / (spec.kappa2 * (1.0 + spec.h * fbar * rho1));
                Some(options.rho2_init.unwrap_or(default))
            }
            _ => None,
        };

        let state = match mode {
            SimulationMode::Distribution => q0,
            SimulationMode::Population => {
                let values = q0.values.iter().map(|v| v * rho1).collect();
                DensityState::new(grid, values, 0.0, DensityMode::Population)?
            }
        };

        let nodes = grid.nodes();
        Ok(Self {
            model,
            mode,
            op,
            nodes,
            state,
            rho1,
            rho2,
            time: 0.0,
            step_index: 0,
            dt,
            lambda: dt / (epsilon * epsilon),
            renormalize: scheme.renormalize_each_step,
            k0: scheme.k0,
            last_leak: 0.0,
            total_leak: 0.0,
            max_mass_defect: 0.0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance one step. Returns the extinction time if a population hit
    /// zero (the caller should stop stepping).
    pub fn step(&mut self) -> Result<Option<f64>> {
        let out = match self.model {
            ModelSpec::Single(spec) => match self.mode {
                SimulationMode::Distribution => self.step_single_distribution(&spec),
                SimulationMode::Population => self.step_single_population(&spec),
            },
            ModelSpec::PredatorPrey(spec) => self.step_prey(&spec),
        }?;
        self.step_index += 1;
        self.time += self.dt;
        self.state.time = self.time;
        Ok(out)
    }

    fn step_single_distribution(&mut self, spec: &SingleSpeciesSpec) -> Result<Option<f64>> {
        let t = self.time;
        let r = spec.birth.eval(t);
        let mortality: Vec<f64> = self.nodes.iter().map(|&x| spec.mortality_at(x, t)).collect();
        let mbar = self.weighted_average(&mortality)?;
        self.advance_distribution(r, &mortality, mbar)?;
        self.rho1 += self.lambda * (r - mbar - spec.kappa * self.rho1) * self.rho1;
        if self.rho1 <= 0.0 {
            return Ok(Some(t + self.dt));
        }
        Ok(None)
    }

    fn step_single_population(&mut self, spec: &SingleSpeciesSpec) -> Result<Option<f64>> {
        let t = self.time;
        let r = spec.birth.eval(t);
        let rho = self.state.mass();
        if !(rho > 0.0) {
            return Ok(Some(t));
        }
        let q_values: Vec<f64> = self.state.values.iter().map(|v| v / rho).collect();
        let t_raw = self.op.apply_raw(&q_values)?;
        self.last_leak = (1.0 - trapezoid(&t_raw, &self.state.grid)?).abs();
        self.total_leak += self.last_leak;
        let lambda = self.lambda;
        for (i, v) in self.state.values.iter_mut().enumerate() {
            let m = spec.mortality_at(self.nodes[i], t);
            // eps^2 dn/dt = r T[n] - (m + kappa rho) n, with T[n] = rho T~[q]
            *v += lambda * (r * rho * t_raw[i] - (m + spec.kappa * rho) * *v);
        }
        self.state.apply_dirichlet();
        self.check_positivity()?;
        self.rho1 = self.state.mass();
        if self.rho1 <= 0.0 {
            return Ok(Some(t + self.dt));
        }
        Ok(None)
    }

    fn step_prey(&mut self, spec: &PredatorPreySpec) -> Result<Option<f64>> {
        let t = self.time;
        let fbar = averaged_contact(&self.state, &spec.contact)?;
        let rho1 = self.rho1;

        let mortality: Vec<f64> = match self.rho2 {
            // coupled mode: explicit predator pressure
            Some(rho2) => {
                let response = 1.0 + spec.h * fbar * rho1;
                self.nodes
                    .iter()
                    .map(|&x| {
                        spec.contact.eval(x) * rho2 / response - spec.relief.eval(x) * rho1
                    })
                    .collect()
            }
            None => self
                .nodes
                .iter()
                .map(|&x| spec.eval_mortality(x, rho1, fbar))
                .collect(),
        };
        let mbar = self.weighted_average(&mortality)?;
        self.advance_distribution(spec.r1, &mortality, mbar)?;

        self.rho1 += self.lambda * (spec.r1 - mbar - spec.kappa1 * rho1) * rho1;
        if self.rho1 <= 0.0 {
            return Ok(Some(t + self.dt));
        }

        if let Some(rho2) = self.rho2.as_mut() {
            if *rho2 <= 0.0 {
                return Ok(Some(t));
            }
            // predator ODE on its own fast clock; explicit substeps of
            // at most tau/10
            let n_sub = (self.dt / (spec.tau / 10.0)).ceil().max(1.0) as usize;
            let h_sub = self.dt / n_sub as f64;
            let saturation = 1.0 + spec.h * fbar * rho1;
            let intake = spec.gamma * fbar * rho1 / saturation;
            for _ in 0..n_sub {
                *rho2 += h_sub / spec.tau * (intake - spec.kappa2 * *rho2) * *rho2;
                if *rho2 <= 0.0 {
                    return Ok(Some(t + self.dt));
                }
            }
        }
        Ok(None)
    }

    /// Shared distribution update
    /// `q += lambda (r (T q - q) - (m - mbar) q)`, Dirichlet zeros,
    /// positivity check, optional renormalization.
    fn advance_distribution(&mut self, r: f64, mortality: &[f64], mbar: f64) -> Result<()> {
        let t_raw = self.op.apply_raw(&self.state.values)?;
        self.last_leak = (1.0 - trapezoid(&t_raw, &self.state.grid)?).abs();
        self.total_leak += self.last_leak;
        let lambda = self.lambda;
        for (i, v) in self.state.values.iter_mut().enumerate() {
            *v += lambda * (r * (t_raw[i] - *v) - (mortality[i] - mbar) * *v);
        }
        self.state.apply_dirichlet();
        self.check_positivity()?;
        let mass = self.state.mass();
        self.max_mass_defect = self.max_mass_defect.max((mass - 1.0).abs());
        if self.renormalize {
            if !(mass > 0.0) {
                return Err(EvoError::Degenerate(format!(
                    "distribution mass {mass} at step {}",
                    self.step_index
                )));
            }
            for v in self.state.values.iter_mut() {
                *v /= mass;
            }
        }
        Ok(())
    }

    /// Negative nodes abort the run; magnitudes below 1e-12 of the peak are
    /// tail roundoff of the explicit update and are zeroed instead.
    fn check_positivity(&mut self) -> Result<()> {
        let peak = self.state.values.iter().cloned().fold(0.0, f64::max);
        let floor = -1e-12 * peak.max(f64::MIN_POSITIVE);
        let step = self.step_index;
        for (i, v) in self.state.values.iter_mut().enumerate() {
            if v.is_nan() {
                return Err(EvoError::Instability {
                    step,
                    reason: format!("NaN at node {i}"),
                });
            }
            if *v < 0.0 {
                if *v >= floor {
                    *v = 0.0;
                } else {
                    return Err(EvoError::Instability {
                        step,
                        reason: format!("negative density {v} at node {i} (x = {})", self.nodes[i]),
                    });
                }
            }
        }
        Ok(())
    }

    fn weighted_average(&self, values: &[f64]) -> Result<f64> {
        let weighted: Vec<f64> = values
            .iter()
            .zip(&self.state.values)
            .map(|(m, q)| m * q)
            .collect();
        trapezoid(&weighted, &self.state.grid)
    }

    /// Diagnostics of the current state.
    pub fn record(&self) -> Result<MomentRecord> {
        let epsilon = self.model.epsilon();
        let q = match self.mode {
            SimulationMode::Distribution => self.state.clone(),
            SimulationMode::Population => normalize(&self.state)?,
        };
        let m1 = central_moment(&q, 1, false)?;
        let m2c = central_moment(&q, 2, false)?;
        let m2k0c = central_moment(&q, 2 * self.k0, false)?;
        let m_abs_3 = central_moment(&q, 3, true)?;
        let (fbar, dbar) = match &self.model {
            ModelSpec::PredatorPrey(spec) => (
                averaged_contact(&q, &spec.contact)?,
                averaged_relief(&q, &spec.relief)?,
            ),
            ModelSpec::Single(_) => (f64::NAN, f64::NAN),
        };
        let w1_to_gaussian = if q.grid.contains(m1) {
            let ansatz = gaussian_ansatz(m1, epsilon, &q.grid)?;
            wasserstein(1, &q, &ansatz)?
        } else {
            f64::NAN
        };
        Ok(MomentRecord {
            time: self.time,
            rho: self.rho1,
            m1,
            m2c,
            m2k0c,
            m_abs_3,
            fbar,
            dbar,
            w1_to_gaussian,
            leaked_mass: self.last_leak,
        })
    }
}

/// On-manifold initial population: the zero of
/// `r - mbar(rho, q) - kappa rho` for the given initial distribution.
pub fn equilibrium_rho_for_state(model: &ModelSpec, q: &DensityState) -> Result<f64> {
    match model {
        ModelSpec::Single(spec) => {
            let mortality: Vec<f64> = (0..q.grid.n_nodes)
                .map(|i| spec.mortality_at(q.grid.node(i), 0.0) * q.values[i])
                .collect();
            let mbar = trapezoid(&mortality, &q.grid)?;
            let rho = (spec.birth.eval(0.0) - mbar) / spec.kappa;
            if !(rho > 0.0) {
                return Err(EvoError::Degenerate(format!(
                    "no positive initial population: (r - mbar)/kappa = {rho}"
                )));
            }
            Ok(rho)
        }
        ModelSpec::PredatorPrey(spec) => {
            let fbar = averaged_contact(q, &spec.contact)?;
            let dbar = averaged_relief(q, &spec.relief)?;
            let growth = |rho: f64| -> f64 {
                let mbar = match spec.family {
                    crate::models::PreyMortalityFamily::Section5Scheme => rho * fbar * fbar - dbar,
                    crate::models::PreyMortalityFamily::HollingReduced => {
                        let sat = (1.0 + spec.h * fbar * rho).powi(2);
                        (fbar * fbar / sat - dbar) * rho
                    }
                };
                spec.r1 - mbar - spec.kappa1 * rho
            };
            let hi = 2.0 * spec.population_ceiling(q.grid.x_min, q.grid.x_max)? + 1.0;
            EquilibriumSolver::new(1e-9, hi).solve(&growth, "initial population")
        }
    }
}

/// Execute a full run: audit-free entry point (callers audit separately),
/// recording diagnostics every `record_stride` steps plus the initial and
/// final states, and capturing snapshots at the requested times.
pub fn run_to_horizon(
    model: ModelSpec,
    scheme: &SchemeConfig,
    grid: Grid1D,
    initial: &InitialCondition,
    options: &RunOptions,
) -> Result<SimulationRun> {
    let started = Instant::now();
    let mut sim = Simulation::new(model, scheme, grid, initial, options)?;
    let dt = sim.dt();
    let n_steps = if scheme.horizon <= 0.0 {
        0
    } else {
        (scheme.horizon / dt - 1e-9).ceil() as usize
    };

    let mut records = vec![sim.record()?];
    let mut pending: Vec<f64> = scheme.snapshot_times.clone();
    pending.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut capture = |sim: &Simulation, pending: &mut Vec<f64>| {
        while let Some(&t_req) = pending.first() {
            if sim.time + 1e-12 >= t_req {
                snapshots.push(Snapshot {
                    requested_time: t_req,
                    state: sim.state.clone(),
                    rho1: sim.rho1,
                    rho2: sim.rho2,
                });
                pending.remove(0);
            } else {
                break;
            }
        }
    };
    capture(&sim, &mut pending);

    let mut extinction = None;
    for step in 0..n_steps {
        let event = sim.step()?;
        if step % scheme.record_stride == scheme.record_stride - 1 || step + 1 == n_steps {
            records.push(sim.record()?);
        }
        capture(&sim, &mut pending);
        if let Some(t) = event {
            extinction = Some(t);
            break;
        }
    }
    if extinction.is_some() && records.last().map(|r| r.time) != Some(sim.time) {
        records.push(sim.record()?);
    }

    Ok(SimulationRun {
        records,
        snapshots,
        final_state: sim.state.clone(),
        final_rho1: sim.rho1,
        final_rho2: sim.rho2,
        extinction,
        total_boundary_leak: sim.total_leak,
        max_mass_defect: sim.max_mass_defect,
        steps_executed: sim.step_index,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
