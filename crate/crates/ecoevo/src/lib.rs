//! Trait-structured eco-evolutionary dynamics under the infinitesimal model
//! of sexual reproduction.
//!
//! The crate simulates nonlocal integro-differential population models in
//! which offspring traits are normally distributed around the parental
//! midpoint with a small segregational variance, and checks the simulated
//! dynamics against asymptotic reference solutions: a Gaussian trait
//! distribution of fixed width, a canonical ODE for the mean trait, and an
//! equilibrium manifold for the population size. A predator-prey system with
//! trait-structured prey is included both in reduced form and as a coupled
//! ODE-PDE system.
//!
//! Module map:
//! - [`grid`]: uniform grids, trapezoid quadrature, densities, cdf
//! - [`operator`]: the reproduction operator (reference and fast paths)
//! - [`models`]: scenario definitions and mortality families
//! - [`stepper`]: the explicit forward-in-time scheme with diagnostics
//! - [`moments`]: central moments and 1-D Wasserstein distances
//! - [`theory`]: asymptotic reference solutions and equilibrium solvers
//! - [`audit`]: runtime checks of the scenario hypotheses
//! - [`config`] / [`output`]: scenario files, CSV and manifest emission
//! - [`acceptance`]: the end-to-end verification suite run by the CLI

pub mod acceptance;
pub mod audit;
pub mod config;
pub mod error;
pub mod grid;
pub mod models;
pub mod moments;
pub mod operator;
pub mod output;
pub mod stepper;
pub mod synthetic;
pub mod theory;

pub use error::{EvoError, Result};
pub use grid::{cdf, normalize, trapezoid, DensityMode, DensityState, Grid1D};
pub use moments::{central_moment, gaussian_ansatz, wasserstein, MomentRecord};
pub use operator::{
    midpoint_density, reproduce_fast, reproduce_reference, reproduce_unnormalized,
    InfinitesimalOp, SegregationKernel,
};
