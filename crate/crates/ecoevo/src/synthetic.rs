//! Gaussian-mixture test densities with known moments, used by the
//! acceptance suite and by randomized tests.

use rand::{Rng, RngExt};

use crate::error::Result;
use crate::grid::{normalize, DensityMode, DensityState, Grid1D};

#[derive(Debug, Clone, Copy)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

/// A finite Gaussian mixture with normalized weights.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(mut components: Vec<MixtureComponent>) -> Self {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Self { components }
    }

    pub fn random<R: Rng>(rng: &mut R, max_components: usize) -> Self {
        let n = rng.random_range(1..=max_components.max(1));
        let components = (0..n)
            .map(|_| MixtureComponent {
                weight: rng.random_range(0.2..1.0),
                mean: rng.random_range(-0.6..0.6),
                sigma: rng.random_range(0.08..0.25),
            })
            .collect();
        Self::new(components)
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.sigma * c.sigma + (c.mean - m).powi(2)))
            .sum()
    }

    /// Shift all component means so the mixture mean is exactly zero.
    pub fn centered(mut self) -> Self {
        let m = self.mean();
        for c in &mut self.components {
            c.mean -= m;
        }
        self
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let z = (x - c.mean) / c.sigma;
                c.weight * (-0.5 * z * z).exp() / (c.sigma * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    /// Sample the mixture on a grid and renormalize.
    pub fn on_grid(&self, grid: &Grid1D) -> Result<DensityState> {
        let values: Vec<f64> = (0..grid.n_nodes).map(|i| self.density(grid.node(i))).collect();
        normalize(&DensityState::new(*grid, values, 0.0, DensityMode::Population)?)
    }
}

/// A random normalized mixture density on the grid.
pub fn random_density<R: Rng>(rng: &mut R, grid: &Grid1D) -> DensityState {
    GaussianMixture::random(rng, 3)
        .on_grid(grid)
        .expect("mixture density is strictly positive")
}

/// A pair of distinct random mixture densities with exactly equal (zero)
/// means, as needed by the reproduction-contraction property: the operator
/// halves the centered transport cost but translates means unchanged.
pub fn random_centered_pair<R: Rng>(rng: &mut R, grid: &Grid1D) -> (DensityState, DensityState) {
    loop {
        let a = GaussianMixture::random(rng, 3).centered();
        let b = GaussianMixture::random(rng, 3).centered();
        if (a.variance().sqrt() - b.variance().sqrt()).abs() > 0.02 {
            let qa = a.on_grid(grid).expect("positive density");
            let qb = b.on_grid(grid).expect("positive density");
            return (qa, qb);
        }
    }
}
