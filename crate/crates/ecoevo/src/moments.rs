//! Central-moment diagnostics and one-dimensional Wasserstein distances.

use serde::{Deserialize, Serialize};

use crate::error::{EvoError, Result};
use crate::grid::{cdf, normalize, trapezoid, DensityMode, DensityState, Grid1D};

/// Number of quantile levels used for `W_p`, `p > 1`.
pub const DEFAULT_QUANTILE_LEVELS: usize = 4096;

/// Time-stamped diagnostics of one simulation state. Fields that do not
/// apply to a model (for example `fbar` for the single-species model) hold
/// NaN so every CSV row has the same schema.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentRecord {
    pub time: f64,
    /// Total population size.
    pub rho: f64,
    /// Mean trait.
    pub m1: f64,
    /// Second central moment.
    pub m2c: f64,
    /// 2k0-th central moment (k0 = 2 by default, so the fourth).
    pub m2k0c: f64,
    /// Third absolute central moment.
    pub m_abs_3: f64,
    /// Averaged contact rate (predator-prey runs).
    pub fbar: f64,
    /// Averaged competition relief (predator-prey runs).
    pub dbar: f64,
    /// W1 distance between the trait distribution and the Gaussian of the
    /// same mean with standard deviation epsilon.
    pub w1_to_gaussian: f64,
    /// Mass lost to the domain boundary in the reproduction step.
    pub leaked_mass: f64,
}

impl MomentRecord {
    pub const CSV_HEADER: &'static str =
        "time,rho,m1,m2c,m2k0c,m_abs_3,fbar,dbar,w1_to_gaussian,leaked_mass";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.time,
            self.rho,
            self.m1,
            self.m2c,
            self.m2k0c,
            self.m_abs_3,
            self.fbar,
            self.dbar,
            self.w1_to_gaussian,
            self.leaked_mass
        )
    }
}

fn require_normalized(state: &DensityState, what: &str) -> Result<()> {
    if !state.is_normalized(1e-9) {
        return Err(EvoError::Contract(format!(
            "{what} requires a normalized density, mass is {}",
            state.mass()
        )));
    }
    Ok(())
}

/// `k`-th central moment of a normalized density; `k = 1` returns the mean
/// itself (uncentered). With `absolute` the integrand is `|x - M1|^k`.
pub fn central_moment(q: &DensityState, k: u32, absolute: bool) -> Result<f64> {
    require_normalized(q, "central_moment")?;
    if k == 0 {
        return Err(EvoError::Contract("moment order must be >= 1".into()));
    }
    let nodes = q.grid.nodes();
    if k == 1 && !absolute {
        let vals: Vec<f64> = nodes.iter().zip(&q.values).map(|(x, v)| x * v).collect();
        return trapezoid(&vals, &q.grid);
    }
    let m1 = central_moment(q, 1, false)?;
    let vals: Vec<f64> = nodes
        .iter()
        .zip(&q.values)
        .map(|(x, v)| {
            let d = x - m1;
            let p = if absolute { d.abs().powi(k as i32) } else { d.powi(k as i32) };
            p * v
        })
        .collect();
    trapezoid(&vals, &q.grid)
}

/// Mean trait of a normalized density.
pub fn mean(q: &DensityState) -> Result<f64> {
    central_moment(q, 1, false)
}

/// Second central moment of a normalized density.
pub fn variance(q: &DensityState) -> Result<f64> {
    central_moment(q, 2, false)
}

/// Strictly increasing copy of a cdf: plateaus are broken with 1e-15 slopes
/// so quantiles are well defined on flat segments.
fn repaired_cdf(f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut prev = f64::NEG_INFINITY;
    for &v in f {
        let w = if v <= prev { prev + 1e-15 } else { v };
        out.push(w);
        prev = w;
    }
    out
}

/// Piecewise-linear quantile function built from a density's cdf.
#[derive(Debug, Clone)]
pub struct QuantileFunction {
    nodes: Vec<f64>,
    levels: Vec<f64>,
}

impl QuantileFunction {
    pub fn from_density(q: &DensityState) -> Result<Self> {
        let f = cdf(q)?;
        Ok(Self { nodes: q.grid.nodes(), levels: repaired_cdf(&f) })
    }

    /// Trait value at probability level `p` (clamped to the grid).
    pub fn eval(&self, p: f64) -> f64 {
        let lv = &self.levels;
        if p <= lv[0] {
            return self.nodes[0];
        }
        if p >= lv[lv.len() - 1] {
            return self.nodes[self.nodes.len() - 1];
        }
        // partition_point returns the first index with level > p
        let hi = lv.partition_point(|&l| l <= p).min(lv.len() - 1);
        let lo = hi - 1;
        let span = lv[hi] - lv[lo];
        let s = if span > 0.0 { (p - lv[lo]) / span } else { 0.5 };
        self.nodes[lo] + s * (self.nodes[hi] - self.nodes[lo])
    }
}

/// `W_p` distance between two normalized densities on the same grid.
///
/// `p = 1` uses the cdf-difference integral; `p > 1` uses the quantile
/// formula on a uniform level grid (midpoint rule).
pub fn wasserstein(p: u32, a: &DensityState, b: &DensityState) -> Result<f64> {
    wasserstein_with_levels(p, a, b, DEFAULT_QUANTILE_LEVELS)
}

pub fn wasserstein_with_levels(
    p: u32,
    a: &DensityState,
    b: &DensityState,
    levels: usize,
) -> Result<f64> {
    if p == 0 {
        return Err(EvoError::Contract("wasserstein order must be >= 1".into()));
    }
    if a.grid != b.grid {
        return Err(EvoError::Contract("wasserstein requires a common grid".into()));
    }
    require_normalized(a, "wasserstein")?;
    require_normalized(b, "wasserstein")?;
    if p == 1 {
        let fa = cdf(a)?;
        let fb = cdf(b)?;
        let diff: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).collect();
        return trapezoid(&diff, &a.grid);
    }
    let qa = QuantileFunction::from_density(a)?;
    let qb = QuantileFunction::from_density(b)?;
    let mut acc = 0.0;
    for k in 0..levels {
        let lvl = (k as f64 + 0.5) / levels as f64;
        acc += (qa.eval(lvl) - qb.eval(lvl)).abs().powi(p as i32);
    }
    Ok((acc / levels as f64).powf(1.0 / p as f64))
}

/// Normalized Gaussian grid density with mean `mean` and variance
/// `epsilon^2`. The mass is pinned to one by trapezoid normalization.
pub fn gaussian_ansatz(mean: f64, epsilon: f64, grid: &Grid1D) -> Result<DensityState> {
    if !grid.contains(mean) {
        return Err(EvoError::Contract(format!(
            "gaussian mean {mean} outside grid [{}, {}]",
            grid.x_min, grid.x_max
        )));
    }
    if !(epsilon > 0.0) {
        return Err(EvoError::Contract("gaussian width must be positive".into()));
    }
    let values: Vec<f64> = (0..grid.n_nodes)
        .map(|i| {
            let z = (grid.node(i) - mean) / epsilon;
            (-0.5 * z * z).exp()
        })
        .collect();
    let raw = DensityState::new(*grid, values, 0.0, DensityMode::Population)?;
    normalize(&raw)
}

/// True when a Gaussian of width `epsilon` is resolved by the grid
/// (at least two nodes per standard deviation).
pub fn gaussian_is_resolved(epsilon: f64, grid: &Grid1D) -> bool {
    epsilon >= 2.0 * grid.spacing
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(grid: &Grid1D, mean: f64, sigma: f64) -> DensityState {
        gaussian_ansatz(mean, sigma, grid).unwrap()
    }

    #[test]
    fn gaussian_moments_match_closed_forms() {
        let g = Grid1D::new(-2.0, 2.0, 801).unwrap();
        let q = gaussian(&g, 0.3, 0.2);
        let m1 = central_moment(&q, 1, false).unwrap();
        let m2 = central_moment(&q, 2, false).unwrap();
        let m4 = central_moment(&q, 4, false).unwrap();
        assert!((m1 - 0.3).abs() < 1e-6);
        assert!((m2 - 0.04).abs() < 1e-6);
        assert!((m4 - 3.0 * 0.04 * 0.04).abs() < 1e-6, "m4={m4}");
    }

    #[test]
    fn odd_moments_of_symmetric_density_vanish() {
        let g = Grid1D::symmetric(2.0, 401).unwrap();
        let q = gaussian(&g, 0.0, 0.3);
        for k in [3, 5] {
            assert!(central_moment(&q, k, false).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn indicator_variance_is_eps_squared_over_three() {
        // Uniform of half-width eps: variance eps^2/3. Fine grid so the
        // discrete indicator resolves the edges.
        let eps = 0.2_f64;
        let g = Grid1D::new(-2.0, 2.0, 8001).unwrap();
        let vals: Vec<f64> = (0..g.n_nodes)
            .map(|i| if (g.node(i) - 0.9).abs() <= eps * (1.0 + 1e-12) { 0.5 / eps } else { 0.0 })
            .collect();
        let q = normalize(&DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap()).unwrap();
        let m2 = central_moment(&q, 2, false).unwrap();
        assert!((m2 - eps * eps / 3.0).abs() < 1e-4, "m2={m2}");
    }

    #[test]
    fn translated_gaussians_have_translation_distance() {
        let g = Grid1D::new(-2.0, 2.0, 801).unwrap();
        let a = gaussian(&g, 0.0, 0.1);
        let b = gaussian(&g, 1.0, 0.1);
        let w1 = wasserstein(1, &a, &b).unwrap();
        let w2 = wasserstein(2, &a, &b).unwrap();
        assert!((w1 - 1.0).abs() < 1e-4, "w1={w1}");
        assert!((w2 - 1.0).abs() < 1e-4, "w2={w2}");
    }

    #[test]
    fn identical_densities_have_zero_distance() {
        let g = Grid1D::new(-2.0, 2.0, 401).unwrap();
        let a = gaussian(&g, 0.2, 0.15);
        assert!(wasserstein(1, &a, &a).unwrap() < 1e-12);
        assert!(wasserstein(2, &a, &a).unwrap() < 1e-12);
    }

    /// Brute-force minimum-cost matching between two equal-size atom lists.
    /// In one dimension the optimum is the sorted pairing; this oracle
    /// verifies that by trying every permutation of the second list.
    fn matching_oracle(p: u32, xs: &[f64], ys: &[f64]) -> f64 {
        fn permutations(v: &mut Vec<f64>, k: usize, out: &mut Vec<Vec<f64>>) {
            if k == v.len() {
                out.push(v.clone());
                return;
            }
            for i in k..v.len() {
                v.swap(k, i);
                permutations(v, k + 1, out);
                v.swap(k, i);
            }
        }
        let mut perms = Vec::new();
        permutations(&mut ys.to_vec(), 0, &mut perms);
        let mut best = f64::INFINITY;
        for perm in perms {
            let cost: f64 = xs
                .iter()
                .zip(&perm)
                .map(|(x, y)| (x - y).abs().powi(p as i32))
                .sum::<f64>()
                / xs.len() as f64;
            best = best.min(cost);
        }
        best.powf(1.0 / p as f64)
    }

    #[test]
    fn atoms_match_sorted_matching_oracle() {
        let g = Grid1D::new(-2.0, 2.0, 401).unwrap();
        let place = |atoms: &[f64]| {
            let mut vals = vec![0.0; g.n_nodes];
            for &a in atoms {
                let i = ((a - g.x_min) / g.spacing).round() as usize;
                vals[i] += 1.0;
            }
            normalize(&DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap()).unwrap()
        };
        let xs = [-1.5, -0.4, 0.1, 0.9, 1.6];
        let ys = [-1.2, -0.9, 0.3, 0.5, 1.8];
        let a = place(&xs);
        let b = place(&ys);
        for p in [1u32, 2] {
            let ours = wasserstein(p, &a, &b).unwrap();
            let oracle = matching_oracle(p, &xs, &ys);
            assert!(
                (ours - oracle).abs() <= 2.0 * g.spacing,
                "p={p}: {ours} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn gaussian_ansatz_examples() {
        let g = Grid1D::default_lab();
        let q = gaussian_ansatz(0.0, 0.1, &g).unwrap();
        assert!((q.mass() - 1.0).abs() < 1e-10);
        assert!((central_moment(&q, 2, false).unwrap() - 0.01).abs() < 1e-6);
        let a = gaussian_ansatz(0.3, 0.1, &g).unwrap();
        let b = gaussian_ansatz(0.35, 0.1, &g).unwrap();
        assert!((wasserstein(1, &a, &b).unwrap() - 0.05).abs() < 1e-4);
        assert!(gaussian_is_resolved(0.1, &g));
        assert!(!gaussian_is_resolved(0.03, &g));
    }

    #[test]
    fn parallel_axis_identity() {
        let g = Grid1D::new(-2.0, 2.0, 401).unwrap();
        let q = gaussian(&g, 0.4, 0.25);
        let m1 = central_moment(&q, 1, false).unwrap();
        let m2c = central_moment(&q, 2, false).unwrap();
        let raw2: Vec<f64> = g.nodes().iter().zip(&q.values).map(|(x, v)| x * x * v).collect();
        let raw2 = trapezoid(&raw2, &g).unwrap();
        assert!((m2c + m1 * m1 - raw2).abs() < 1e-10);
    }

    fn random_density(rng: &mut ChaCha8Rng, grid: &Grid1D) -> DensityState {
        let n_comp = rng.random_range(1..4usize);
        let mut vals = vec![0.0; grid.n_nodes];
        for _ in 0..n_comp {
            let mu = rng.random_range(-1.0..1.0);
            let sigma = rng.random_range(0.08..0.4);
            let w = rng.random_range(0.2..1.0);
            for (i, v) in vals.iter_mut().enumerate() {
                let z = (grid.node(i) - mu) / sigma;
                *v += w * (-0.5 * z * z).exp();
            }
        }
        normalize(&DensityState::new(*grid, vals, 0.0, DensityMode::Population).unwrap()).unwrap()
    }

    #[test]
    fn w1_triangle_inequality_and_symmetry() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let a = random_density(&mut rng, &g);
            let b = random_density(&mut rng, &g);
            let c = random_density(&mut rng, &g);
            let ab = wasserstein(1, &a, &b).unwrap();
            let ba = wasserstein(1, &b, &a).unwrap();
            let bc = wasserstein(1, &b, &c).unwrap();
            let ac = wasserstein(1, &a, &c).unwrap();
            assert!((ab - ba).abs() < 1e-10);
            assert!(ac <= ab + bc + 1e-10);
        }
    }

    #[test]
    fn w2_dominates_w1() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..25 {
            let a = random_density(&mut rng, &g);
            let b = random_density(&mut rng, &g);
            let w1 = wasserstein(1, &a, &b).unwrap();
            let w2 = wasserstein(2, &a, &b).unwrap();
            // small slack: W1 uses the cdf integral, W2 the quantile grid
            assert!(w2 >= w1 * (1.0 - 1e-3) - 1e-6, "w1={w1} w2={w2}");
        }
    }

    #[test]
    fn holder_consistency_of_absolute_third_moment() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let q = random_density(&mut rng, &g);
            let m2 = central_moment(&q, 2, false).unwrap();
            let m4 = central_moment(&q, 4, false).unwrap();
            let m3a = central_moment(&q, 3, true).unwrap();
            assert!(m3a <= (m2 * m4).sqrt() * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn wasserstein_rejects_unnormalized_input() {
        let g = Grid1D::new(-2.0, 2.0, 101).unwrap();
        let a = gaussian(&g, 0.0, 0.2);
        let raw = DensityState::new(g, vec![1.0; 101], 0.0, DensityMode::Population).unwrap();
        assert!(matches!(wasserstein(1, &a, &raw), Err(EvoError::Contract(_))));
    }
}
