//! Uniform 1-D trait grids, trapezoid quadrature, cumulative distribution
//! functions and density normalization. Every other module builds on these.

use serde::{Deserialize, Serialize};

use crate::error::{EvoError, Result};

/// Uniform discretization of a trait interval `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
    pub spacing: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self> {
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(EvoError::Contract(format!(
                "grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_nodes < 3 {
            return Err(EvoError::Contract(format!(
                "grid needs at least 3 nodes, got {n_nodes}"
            )));
        }
        let spacing = (x_max - x_min) / (n_nodes - 1) as f64;
        Ok(Self { x_min, x_max, n_nodes, spacing })
    }

    /// Symmetric grid `[-l, l]`.
    pub fn symmetric(l: f64, n_nodes: usize) -> Result<Self> {
        Self::new(-l, l, n_nodes)
    }

    /// The default grid used by the reference numerical experiments:
    /// `[-2, 2]` with spacing 0.02 (201 nodes).
    pub fn default_lab() -> Self {
        Self::symmetric(2.0, 201).expect("static grid parameters")
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Trapezoid weight of node `i`: spacing/2 at both ends, spacing inside.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_nodes - 1 {
            0.5 * self.spacing
        } else {
            self.spacing
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

/// Composite trapezoid rule over the grid.
///
/// Exact for grid functions whose underlying continuous function is linear
/// between adjacent nodes.
pub fn trapezoid(values: &[f64], grid: &Grid1D) -> Result<f64> {
    if values.len() != grid.n_nodes {
        return Err(EvoError::Contract(format!(
            "trapezoid: expected {} values, got {}",
            grid.n_nodes,
            values.len()
        )));
    }
    let mut sum = 0.0;
    for v in &values[1..values.len() - 1] {
        sum += v;
    }
    sum += 0.5 * (values[0] + values[values.len() - 1]);
    Ok(sum * grid.spacing)
}

/// Whether a grid density is stored as a raw population density `n` or as a
/// probability distribution `q` (mass one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityMode {
    /// Unnormalized population density; total mass is the population size.
    Population,
    /// Normalized trait distribution; total mass is one.
    Distribution,
}

/// A nonnegative grid function together with the simulation time it belongs
/// to. Holds either `n(x, t)` (population mode) or `q(x, t)` (distribution
/// mode).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub time: f64,
    pub mode: DensityMode,
}

impl DensityState {
    pub fn new(grid: Grid1D, values: Vec<f64>, time: f64, mode: DensityMode) -> Result<Self> {
        if values.len() != grid.n_nodes {
            return Err(EvoError::Contract(format!(
                "density needs {} nodes, got {}",
                grid.n_nodes,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EvoError::Contract(
                "density values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { grid, values, time, mode })
    }

    /// Total mass under trapezoid quadrature.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, &self.grid).expect("values match grid by construction")
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() <= tol
    }

    /// Force zero values at both boundary nodes (Dirichlet mode).
    pub fn apply_dirichlet(&mut self) {
        self.values[0] = 0.0;
        let last = self.values.len() - 1;
        self.values[last] = 0.0;
    }
}

/// Rescale a density to unit mass. Fails on nonpositive total mass, which
/// signals extinction or numerical blow-up.
pub fn normalize(state: &DensityState) -> Result<DensityState> {
    let mass = state.mass();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(EvoError::Degenerate(format!(
            "cannot normalize density with total mass {mass}"
        )));
    }
    let values = state.values.iter().map(|v| v / mass).collect();
    Ok(DensityState {
        grid: state.grid,
        values,
        time: state.time,
        mode: DensityMode::Distribution,
    })
}

/// Cumulative distribution function of a normalized density, computed by
/// cumulative trapezoid quadrature. Entry `i` holds `F(node(i))`; the first
/// entry is 0 and the last is 1 up to quadrature roundoff.
pub fn cdf(state: &DensityState) -> Result<Vec<f64>> {
    if !state.is_normalized(1e-9) {
        return Err(EvoError::Contract(format!(
            "cdf requires a normalized density, mass is {}",
            state.mass()
        )));
    }
    let n = state.values.len();
    let half_dx = 0.5 * state.grid.spacing;
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..n {
        acc += half_dx * (state.values[i - 1] + state.values[i]);
        out.push(acc.min(1.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson quadrature, used as an independent oracle against the
    /// trapezoid rule. Recursive bisection with the usual 15x error estimate.
    pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        }
        fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth > 40 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            recurse(f, a, m, left, 0.5 * tol, depth + 1)
                + recurse(f, m, b, right, 0.5 * tol, depth + 1)
        }
        recurse(f, a, b, simpson(f, a, b), tol, 0)
    }

    fn sample(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..grid.n_nodes).map(|i| f(grid.node(i))).collect()
    }

    #[test]
    fn grid_nodes_hit_endpoints() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        assert_eq!(g.spacing, 0.02);
        assert_eq!(g.node(0), -2.0);
        assert!((g.node(200) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(Grid1D::new(1.0, -1.0, 11).is_err());
        assert!(Grid1D::new(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn trapezoid_constant_is_exact() {
        for n in [3, 51, 200, 201] {
            let g = Grid1D::new(-2.0, 2.0, n).unwrap();
            let total = trapezoid(&vec![1.0; n], &g).unwrap();
            assert!((total - 4.0).abs() < 1e-13, "n={n}: {total}");
        }
    }

    #[test]
    fn trapezoid_odd_function_cancels() {
        let g = Grid1D::symmetric(2.0, 201).unwrap();
        let vals = g.nodes();
        assert!(trapezoid(&vals, &g).unwrap().abs() < 1e-12);
    }

    #[test]
    fn trapezoid_gaussian_matches_adaptive_oracle() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let sigma = 0.1_f64;
        let f = |x: f64| (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let vals = sample(&g, f);
        let ours = trapezoid(&vals, &g).unwrap();
        let oracle = adaptive_simpson(&f, -2.0, 2.0, 1e-12);
        assert!((ours - oracle).abs() < 1e-6, "trapz={ours} oracle={oracle}");
    }

    #[test]
    fn trapezoid_length_mismatch_is_contract_error() {
        let g = Grid1D::new(-1.0, 1.0, 11).unwrap();
        assert!(matches!(trapezoid(&[1.0; 10], &g), Err(EvoError::Contract(_))));
    }

    #[test]
    fn trapezoid_exact_for_piecewise_linear() {
        // Random piecewise-linear functions with breakpoints on grid nodes;
        // the exact integral follows from the breakpoint trapezoids.
        use rand::{Rng, RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = Grid1D::new(-2.0, 2.0, 161).unwrap();
        for _ in 0..50 {
            let n_break = rng.random_range(2..8usize);
            let mut idx: Vec<usize> = (0..n_break).map(|_| rng.random_range(0..g.n_nodes)).collect();
            idx.push(0);
            idx.push(g.n_nodes - 1);
            idx.sort_unstable();
            idx.dedup();
            let heights: Vec<f64> = idx.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut vals = vec![0.0; g.n_nodes];
            let mut exact = 0.0;
            for w in 0..idx.len() - 1 {
                let (i0, i1) = (idx[w], idx[w + 1]);
                let (h0, h1) = (heights[w], heights[w + 1]);
                for i in i0..=i1 {
                    let s = (i - i0) as f64 / (i1 - i0) as f64;
                    vals[i] = h0 + s * (h1 - h0);
                }
                exact += 0.5 * (h0 + h1) * (g.node(i1) - g.node(i0));
            }
            let got = trapezoid(&vals, &g).unwrap();
            assert!((got - exact).abs() <= 1e-12 * (1.0 + exact.abs()), "{got} vs {exact}");
        }
    }

    #[test]
    fn normalize_recovers_unit_mass() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let vals = sample(&g, |x| 7.0 * (-x * x).exp());
        let st = DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap();
        let q = normalize(&st).unwrap();
        assert!((q.mass() - 1.0).abs() < 1e-14);
        // Shape preserved up to the common factor.
        let ratio = st.values[100] / q.values[100];
        assert!((st.values[60] / q.values[60] - ratio).abs() < 1e-12 * ratio);
    }

    #[test]
    fn normalize_grid_clipped_indicator() {
        // Indicator initial condition at the domain edge: part of the support
        // is cut off, normalization still restores unit mass.
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let eps = 0.2;
        let m0 = 1.95;
        let vals = sample(&g, |x| if (x - m0).abs() < eps { 0.5 / eps } else { 0.0 });
        let st = DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap();
        assert!(st.mass() < 1.0);
        let q = normalize(&st).unwrap();
        assert!((q.mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normalize_zero_density_fails() {
        let g = Grid1D::new(-2.0, 2.0, 11).unwrap();
        let st = DensityState::new(g, vec![0.0; 11], 0.0, DensityMode::Population).unwrap();
        assert!(matches!(normalize(&st), Err(EvoError::Degenerate(_))));
    }

    #[test]
    fn normalize_is_idempotent() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let vals = sample(&g, |x| (1.2 - x).abs().min(1.0));
        let st = DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap();
        let once = normalize(&st).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn cdf_symmetric_density_hits_half() {
        let g = Grid1D::symmetric(2.0, 201).unwrap();
        let st = DensityState::new(g, sample(&g, |x| (-x * x / 0.08).exp()), 0.0, DensityMode::Population).unwrap();
        let q = normalize(&st).unwrap();
        let f = cdf(&q).unwrap();
        assert!((f[100] - 0.5).abs() < 1e-10);
        assert_eq!(f[0], 0.0);
        assert!((f[200] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_point_mass_is_step() {
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let mut vals = vec![0.0; 201];
        vals[120] = 1.0 / g.spacing;
        let q = normalize(&DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap()).unwrap();
        let f = cdf(&q).unwrap();
        assert!(f[119] < 1e-12);
        assert!((f[121] - 1.0).abs() < 1e-12);
        assert!((f[120] - 0.5).abs() < 1e-12); // trapezoid splits the jump
    }

    #[test]
    fn cdf_uniform_is_linear_ramp() {
        // Uniform with jumps at cell midpoints, so the trapezoid rule
        // integrates it exactly: support [-a, a] with a = 1 + dx/2.
        let g = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let a = 1.0 + 0.5 * g.spacing;
        let v = 1.0 / (2.0 * a);
        let vals = sample(&g, |x| if x.abs() <= 1.0 { v } else { 0.0 });
        let q = DensityState::new(g, vals, 0.0, DensityMode::Distribution).unwrap();
        assert!((q.mass() - 1.0).abs() < 1e-14);
        let f = cdf(&q).unwrap();
        for i in 0..201 {
            let x = g.node(i);
            let expected = (v * (x + a)).clamp(0.0, 1.0);
            assert!((f[i] - expected).abs() < 1e-10, "x={x}: {} vs {expected}", f[i]);
        }
    }

    #[test]
    fn cdf_requires_normalized_input() {
        let g = Grid1D::new(-2.0, 2.0, 11).unwrap();
        let st = DensityState::new(g, vec![1.0; 11], 0.0, DensityMode::Population).unwrap();
        assert!(matches!(cdf(&st), Err(EvoError::Contract(_))));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cdf_of_normalized_is_monotone(vals in proptest::collection::vec(0.0f64..1.0, 41)) {
                let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
                let st = DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap();
                if let Ok(q) = normalize(&st) {
                    let f = cdf(&q).unwrap();
                    for w in f.windows(2) {
                        prop_assert!(w[1] >= w[0] - 1e-15);
                    }
                }
            }

            #[test]
            fn normalize_idempotent_random(vals in proptest::collection::vec(0.0f64..5.0, 41)) {
                let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
                let st = DensityState::new(g, vals, 0.0, DensityMode::Population).unwrap();
                if let Ok(once) = normalize(&st) {
                    let twice = normalize(&once).unwrap();
                    for (a, b) in once.values.iter().zip(&twice.values) {
                        prop_assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
                    }
                }
            }
        }
    }
}
