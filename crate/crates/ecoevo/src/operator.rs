//! The sexual-reproduction operator of the infinitesimal model.
//!
//! Offspring traits are Gaussian around the parental midpoint `(y + y')/2`
//! with segregational variance `eps^2`:
//!
//! ```text
//! T[q](x) = ∫∫ Gamma_eps(x - (y + y')/2) q(y) q(y') dy dy'
//! Gamma_eps(x) = exp(-x^2/eps^2) / (eps sqrt(pi))
//! ```
//!
//! Two implementations are provided: a direct nested-quadrature reference,
//! O(N^2) per output node, and a transform-based fast path that factors the
//! double integral through the parental-midpoint density and runs in
//! O(N log N). Both evaluate the same trapezoid double sum; tests pin their
//! node-wise agreement to 1e-10.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{EvoError, Result};
use crate::grid::{normalize, trapezoid, DensityMode, DensityState, Grid1D};

const SQRT_PI: f64 = 1.772453850905516;

/// Gaussian segregation kernel with standard deviation `eps/sqrt(2)`
/// (variance `eps^2/2`); integrates to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegregationKernel {
    pub epsilon: f64,
}

impl SegregationKernel {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(EvoError::Contract(format!(
                "segregational deviation must be positive, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        let z = x / self.epsilon;
        (-z * z).exp() / (self.epsilon * SQRT_PI)
    }

    /// Kernel variance, `eps^2/2`.
    pub fn variance(&self) -> f64 {
        0.5 * self.epsilon * self.epsilon
    }

    /// Trapezoid mass of the kernel sampled on a grid, centered on the grid
    /// midpoint. Should be one up to quadrature and tail truncation error.
    pub fn grid_mass(&self, grid: &Grid1D) -> f64 {
        let center = 0.5 * (grid.x_min + grid.x_max);
        let vals: Vec<f64> = (0..grid.n_nodes).map(|i| self.density(grid.node(i) - center)).collect();
        trapezoid(&vals, grid).expect("lengths match")
    }
}

/// Distribution of the parental midpoint `(Y + Y')/2` for `Y, Y'` i.i.d.
/// with law `q`, restricted to the grid of `q`.
#[derive(Debug, Clone)]
pub struct MidpointDensity {
    pub state: DensityState,
    /// Mass of the raw grid convolution falling outside unit total.
    pub boundary_leak: f64,
    /// Distance from the effective support of `q` to the domain boundary.
    pub support_margin: f64,
}

impl MidpointDensity {
    /// True when kernel tails of the follow-up convolution would be clipped
    /// by the domain boundary.
    pub fn near_boundary(&self, kernel: &SegregationKernel) -> bool {
        self.support_margin < 8.0 * kernel.epsilon
    }
}

fn require_normalized(q: &DensityState, what: &str) -> Result<()> {
    if !q.is_normalized(1e-9) {
        return Err(EvoError::Contract(format!(
            "{what} requires a normalized density, mass is {}",
            q.mass()
        )));
    }
    Ok(())
}

/// Effective support margin: distance from the outermost node carrying
/// non-negligible mass to the domain boundary.
fn support_margin(q: &DensityState) -> f64 {
    let peak = q.values.iter().cloned().fold(0.0, f64::max);
    let cut = 1e-12 * peak;
    let mut lo = q.grid.n_nodes - 1;
    let mut hi = 0;
    for (i, v) in q.values.iter().enumerate() {
        if *v > cut {
            lo = lo.min(i);
            hi = hi.max(i);
        }
    }
    if hi < lo {
        return q.grid.x_max - q.grid.x_min;
    }
    let left = q.grid.node(lo) - q.grid.x_min;
    let right = q.grid.x_max - q.grid.node(hi);
    left.min(right)
}

/// Law of the parental midpoint, `h(s) = 2 (q * q)(2s)`, evaluated on the
/// grid by trapezoid self-convolution and renormalized.
pub fn midpoint_density(q: &DensityState) -> Result<MidpointDensity> {
    require_normalized(q, "midpoint_density")?;
    let n = q.grid.n_nodes;
    // c_l = sum_j w_j q_j q_{l-j} approximates (q*q) at 2 x_min + l dx;
    // the midpoint law at node i reads the even entry l = 2i.
    let weighted: Vec<f64> = (0..n).map(|j| q.grid.weight(j) * q.values[j]).collect();
    let mut values = vec![0.0; n];
    for (i, out) in values.iter_mut().enumerate() {
        let l = 2 * i;
        let j_lo = l.saturating_sub(n - 1);
        let j_hi = l.min(n - 1);
        let mut acc = 0.0;
        for j in j_lo..=j_hi {
            acc += weighted[j] * q.values[l - j];
        }
        *out = 2.0 * acc;
    }
    let raw = DensityState::new(q.grid, values, q.time, DensityMode::Population)?;
    let state = normalize(&raw)?;
    Ok(MidpointDensity {
        state,
        boundary_leak: (1.0 - raw.mass()).abs(),
        support_margin: support_margin(q),
    })
}

/// Result of one application of the reproduction operator.
#[derive(Debug, Clone)]
pub struct Reproduction {
    /// Renormalized output distribution.
    pub state: DensityState,
    /// Mass missing from the raw grid output (boundary clipping plus
    /// quadrature error); recorded, never silently dropped.
    pub leaked_mass: f64,
}

/// Transform-based evaluation of the reproduction operator on a fixed grid.
///
/// The double integral factors through the midpoint law on the half-spacing
/// grid: with `a_j = w_j q_j`,
///
/// ```text
/// T_i = sum_l (a ⊛ a)_l Gamma((2i - l) dx/2)
/// ```
///
/// which is two linear convolutions, done with zero-padded FFTs. Plans and
/// the kernel spectrum are cached so a simulation can reapply the operator
/// every step.
pub struct InfinitesimalOp {
    grid: Grid1D,
    kernel: SegregationKernel,
    fft_len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl InfinitesimalOp {
    /// Smallest transform length with no wrap-around: the linear convolution
    /// of the midpoint law (2N-1) with the kernel samples (4N-3).
    pub fn min_fft_len(n_nodes: usize) -> usize {
        6 * n_nodes - 5
    }

    pub fn new(grid: Grid1D, kernel: SegregationKernel) -> Result<Self> {
        let len = Self::min_fft_len(grid.n_nodes).next_power_of_two();
        Self::with_fft_len(grid, kernel, len)
    }

    /// Build with an explicit transform length. Lengths below
    /// [`Self::min_fft_len`] would alias the convolution and are rejected.
    pub fn with_fft_len(grid: Grid1D, kernel: SegregationKernel, fft_len: usize) -> Result<Self> {
        let min_len = Self::min_fft_len(grid.n_nodes);
        if fft_len < min_len {
            return Err(EvoError::Config(format!(
                "fft length {fft_len} aliases the reproduction convolution; need at least {min_len}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_len);
        let inv = planner.plan_fft_inverse(fft_len);

        let n = grid.n_nodes;
        let half_dx = 0.5 * grid.spacing;
        let mut kernel_buf = vec![Complex::new(0.0, 0.0); fft_len];
        for (m, slot) in kernel_buf.iter_mut().enumerate().take(4 * n - 3) {
            let offset = m as isize - (2 * n as isize - 2);
            slot.re = kernel.density(offset as f64 * half_dx);
        }
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(0.0, 0.0); scratch_len];
        fwd.process_with_scratch(&mut kernel_buf, &mut scratch);

        Ok(Self {
            grid,
            kernel,
            fft_len,
            fwd,
            inv,
            kernel_hat: kernel_buf,
            buf: vec![Complex::new(0.0, 0.0); fft_len],
            scratch,
        })
    }

    pub fn kernel(&self) -> &SegregationKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// Raw operator values at the grid nodes (not renormalized).
    pub fn apply_raw(&mut self, q_values: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_nodes;
        if q_values.len() != n {
            return Err(EvoError::Contract(format!(
                "operator expects {n} values, got {}",
                q_values.len()
            )));
        }
        self.buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for j in 0..n {
            self.buf[j].re = self.grid.weight(j) * q_values[j];
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (c, k) in self.buf.iter_mut().zip(&self.kernel_hat) {
            *c = *c * *c * *k;
        }
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.fft_len as f64;
        let base = 2 * n - 2;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            // clamp tiny negative FFT roundoff; the operator is positive
            out.push((self.buf[base + 2 * i].re * scale).max(0.0));
        }
        Ok(out)
    }

    /// Apply the normalized operator and renormalize the output.
    pub fn apply(&mut self, q: &DensityState) -> Result<Reproduction> {
        require_normalized(q, "reproduce")?;
        let raw_values = self.apply_raw(&q.values)?;
        let raw = DensityState::new(self.grid, raw_values, q.time, DensityMode::Population)?;
        let leaked_mass = 1.0 - raw.mass();
        let state = normalize(&raw)?;
        Ok(Reproduction { state, leaked_mass })
    }
}

/// Fast reproduction: normalized output of the transform pipeline.
pub fn reproduce_fast(q: &DensityState, kernel: &SegregationKernel) -> Result<DensityState> {
    let mut op = InfinitesimalOp::new(q.grid, *kernel)?;
    Ok(op.apply(q)?.state)
}

/// Direct nested-quadrature evaluation of the reproduction operator at every
/// node, with kernel tails truncated at `8 eps`. O(N^2) per output node;
/// intended for test sizes. Raw values, not renormalized.
pub fn reproduce_reference_raw(q: &DensityState, kernel: &SegregationKernel) -> Result<Vec<f64>> {
    require_normalized(q, "reproduce_reference")?;
    let n = q.grid.n_nodes;
    let nodes = q.grid.nodes();
    let weighted: Vec<f64> = (0..n).map(|j| q.grid.weight(j) * q.values[j]).collect();
    let eps = kernel.epsilon;
    let cut = 8.0 * eps;
    let inv_eps2 = 1.0 / (eps * eps);
    let norm = 1.0 / (eps * SQRT_PI);
    let mut out = vec![0.0; n];
    for (i, out_i) in out.iter_mut().enumerate() {
        let xi = nodes[i];
        let mut acc = 0.0;
        for j in 0..n {
            let aj = weighted[j];
            if aj == 0.0 {
                continue;
            }
            let half_yj = 0.5 * nodes[j];
            for k in 0..n {
                let ak = weighted[k];
                if ak == 0.0 {
                    continue;
                }
                let arg = xi - (half_yj + 0.5 * nodes[k]);
                if arg.abs() <= cut {
                    acc += aj * ak * (-arg * arg * inv_eps2).exp();
                }
            }
        }
        *out_i = acc * norm;
    }
    Ok(out)
}

/// Reference reproduction with renormalized output.
pub fn reproduce_reference(q: &DensityState, kernel: &SegregationKernel) -> Result<Reproduction> {
    let raw_values = reproduce_reference_raw(q, kernel)?;
    let raw = DensityState::new(q.grid, raw_values, q.time, DensityMode::Population)?;
    let leaked_mass = 1.0 - raw.mass();
    let state = normalize(&raw)?;
    Ok(Reproduction { state, leaked_mass })
}

/// Unnormalized operator: `T[n] = rho * T~[n / rho]`, preserving the total
/// mass `rho` of the input.
pub fn reproduce_unnormalized(n: &DensityState, kernel: &SegregationKernel) -> Result<DensityState> {
    let rho = n.mass();
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(EvoError::Degenerate(format!(
            "reproduce_unnormalized needs positive mass, got {rho}"
        )));
    }
    let q = normalize(n)?;
    let repro = reproduce_fast(&q, kernel)?;
    let values = repro.values.iter().map(|v| rho * v).collect();
    DensityState::new(n.grid, values, n.time, DensityMode::Population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{central_moment, gaussian_ansatz, wasserstein};
    use crate::synthetic::{random_centered_pair, random_density, GaussianMixture, MixtureComponent};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_mass(grid: &Grid1D, at: usize) -> DensityState {
        let mut vals = vec![0.0; grid.n_nodes];
        vals[at] = 1.0 / grid.weight(at);
        normalize(&DensityState::new(*grid, vals, 0.0, DensityMode::Population).unwrap()).unwrap()
    }

    #[test]
    fn kernel_mass_and_variance() {
        let grid = Grid1D::default_lab();
        for eps in [0.05, 0.1, 0.2] {
            let k = SegregationKernel::new(eps).unwrap();
            assert!((k.grid_mass(&grid) - 1.0).abs() < 5e-3, "eps={eps}");
            assert!((k.variance() - eps * eps / 2.0).abs() < 1e-15);
        }
        assert!(SegregationKernel::new(0.0).is_err());
        assert!(SegregationKernel::new(-0.1).is_err());
    }

    #[test]
    fn midpoint_of_point_mass_is_point_mass() {
        let grid = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let q = point_mass(&grid, 130);
        let mid = midpoint_density(&q).unwrap();
        let peak = mid.state.values.iter().cloned().fold(0.0, f64::max);
        assert_eq!(mid.state.values[130], peak);
        let off: f64 = mid
            .state
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 130)
            .map(|(_, v)| v.abs())
            .sum();
        assert!(off < 1e-14 * peak);
        assert!((mid.state.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn midpoint_of_gaussian_halves_variance() {
        let grid = Grid1D::new(-2.0, 2.0, 1025).unwrap();
        let (m, sigma) = (0.25_f64, 0.2_f64);
        let q = gaussian_ansatz(m, sigma, &grid).unwrap();
        let mid = midpoint_density(&q).unwrap();
        let expect = gaussian_ansatz(m, sigma / 2.0_f64.sqrt(), &grid).unwrap();
        let max_err = mid
            .state
            .values
            .iter()
            .zip(&expect.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "max node error {max_err}");
        let m1 = central_moment(&mid.state, 1, false).unwrap();
        assert!((m1 - m).abs() < 1e-10, "mean shift {}", m1 - m);
    }

    #[test]
    fn midpoint_of_uniform_is_triangle() {
        // Uniform with jumps at cell midpoints (support half-width
        // a = 1 + dx/2) so the trapezoid double sum is exact; its midpoint
        // law is the triangle of half-width a.
        let grid = Grid1D::new(-2.0, 2.0, 1025).unwrap();
        let a = 1.0 + 0.5 * grid.spacing;
        let v = 1.0 / (2.0 * a);
        let vals: Vec<f64> =
            (0..grid.n_nodes).map(|i| if grid.node(i).abs() <= 1.0 { v } else { 0.0 }).collect();
        let q = DensityState::new(grid, vals, 0.0, DensityMode::Distribution).unwrap();
        let mid = midpoint_density(&q).unwrap();
        // closed-form triangle, sampled and unit-normalized like the output
        let tri: Vec<f64> = (0..grid.n_nodes)
            .map(|i| {
                let x = grid.node(i);
                if x.abs() <= a { (a - x.abs()) / (a * a) } else { 0.0 }
            })
            .collect();
        let tri_mass = trapezoid(&tri, &grid).unwrap();
        for (i, got) in mid.state.values.iter().enumerate() {
            let expect = tri[i] / tri_mass;
            assert!((got - expect).abs() < 1e-6, "x={}: {got} vs {expect}", grid.node(i));
        }
    }

    #[test]
    fn near_boundary_support_is_flagged() {
        let grid = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let kernel = SegregationKernel::new(0.2).unwrap();
        let inside = gaussian_ansatz(0.0, 0.05, &grid).unwrap();
        assert!(!midpoint_density(&inside).unwrap().near_boundary(&kernel));
        let edge = point_mass(&grid, 5);
        assert!(midpoint_density(&edge).unwrap().near_boundary(&kernel));
    }

    #[test]
    fn gaussian_fixed_point_of_variance_recursion() {
        // Output variance of the operator on N(0, s^2) is eps^2/2 + s^2/2;
        // s = eps is the fixed point.
        let grid = Grid1D::new(-2.0, 2.0, 1025).unwrap();
        for eps in [0.1_f64, 0.2] {
            let kernel = SegregationKernel::new(eps).unwrap();
            let q = gaussian_ansatz(0.0, eps, &grid).unwrap();
            let out = reproduce_reference(&q, &kernel).unwrap().state;
            let var = central_moment(&out, 2, false).unwrap();
            assert!(
                (var - eps * eps).abs() < 1e-4 * eps * eps,
                "eps={eps}: var={var}"
            );
        }
    }

    #[test]
    fn symmetry_and_mean_preservation() {
        // c sits on a grid node and node reflection about c maps the grid
        // onto itself, so the sampled mixture is exactly symmetric.
        let grid = Grid1D::new(-2.0, 2.0, 257).unwrap();
        let kernel = SegregationKernel::new(0.15).unwrap();
        let c = 0.25;
        let mix = GaussianMixture::new(vec![
            MixtureComponent { weight: 0.5, mean: c - 0.4, sigma: 0.12 },
            MixtureComponent { weight: 0.5, mean: c + 0.4, sigma: 0.12 },
        ]);
        let q = mix.on_grid(&grid).unwrap();
        let in_m1 = central_moment(&q, 1, false).unwrap();
        let out = reproduce_reference(&q, &kernel).unwrap().state;
        let m1 = central_moment(&out, 1, false).unwrap();
        assert!((m1 - in_m1).abs() < 1e-10, "mean drift {}", m1 - in_m1);
        let ic = ((c - grid.x_min) / grid.spacing).round() as usize;
        for d in 1..60 {
            let (a, b) = (out.values[ic - d], out.values[ic + d]);
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    /// Monte-Carlo oracle for the output variance: sample parent pairs from
    /// the mixture, form midpoint-plus-kernel children, take the sample
    /// variance. Box-Muller normals from a seeded generator.
    fn monte_carlo_output_variance(
        mix: &GaussianMixture,
        eps: f64,
        pairs: usize,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = move |rng: &mut ChaCha8Rng| -> f64 {
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let sample_parent = |rng: &mut ChaCha8Rng, z: f64| -> f64 {
            let mut u: f64 = rng.random();
            for c in &mix.components {
                if u < c.weight {
                    return c.mean + c.sigma * z;
                }
                u -= c.weight;
            }
            let last = mix.components.last().unwrap();
            last.mean + last.sigma * z
        };
        let kernel_std = eps / 2.0_f64.sqrt();
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..pairs {
            let z1 = normal(&mut rng);
            let z2 = normal(&mut rng);
            let z3 = normal(&mut rng);
            let y1 = sample_parent(&mut rng, z1);
            let y2 = sample_parent(&mut rng, z2);
            let child = 0.5 * (y1 + y2) + kernel_std * z3;
            sum += child;
            sumsq += child * child;
        }
        let n = pairs as f64;
        sumsq / n - (sum / n).powi(2)
    }

    #[test]
    fn mixture_variance_identity_and_monte_carlo_oracle() {
        let grid = Grid1D::new(-2.0, 2.0, 1025).unwrap();
        let eps = 0.1;
        let kernel = SegregationKernel::new(eps).unwrap();
        let mix = GaussianMixture::new(vec![
            MixtureComponent { weight: 0.5, mean: -0.5, sigma: 0.1 },
            MixtureComponent { weight: 0.5, mean: 0.5, sigma: 0.1 },
        ]);
        let q = mix.on_grid(&grid).unwrap();
        let identity = eps * eps / 2.0 + (0.25 + 0.01) / 2.0;

        let out_ref = reproduce_reference(&q, &kernel).unwrap().state;
        let var_ref = central_moment(&out_ref, 2, false).unwrap();
        assert!((var_ref - identity).abs() < 1e-4, "reference var {var_ref}");

        let out_fast = reproduce_fast(&q, &kernel).unwrap();
        let var_fast = central_moment(&out_fast, 2, false).unwrap();
        assert!((var_fast - identity).abs() < 1e-4, "fast var {var_fast}");

        let mc = monte_carlo_output_variance(&mix, eps, 10_000_000, 2024);
        assert!((var_fast - mc).abs() < 1e-4, "grid {var_fast} vs monte carlo {mc}");
    }

    #[test]
    fn fast_matches_reference_on_random_densities() {
        let grid = Grid1D::new(-2.0, 2.0, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eps_list = [0.05, 0.1, 0.2];
        let mut worst = 0.0_f64;
        for trial in 0..6 {
            let q = random_density(&mut rng, &grid);
            let kernel = SegregationKernel::new(eps_list[trial % 3]).unwrap();
            let fast = reproduce_fast(&q, &kernel).unwrap();
            let reference = reproduce_reference(&q, &kernel).unwrap().state;
            let err = fast
                .values
                .iter()
                .zip(&reference.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
        }
        assert!(worst <= 1e-10, "max node-wise gap {worst}");
    }

    #[test]
    fn variance_recursion_on_random_densities() {
        let grid = Grid1D::new(-2.0, 2.0, 513).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kernel = SegregationKernel::new(0.1).unwrap();
        for _ in 0..10 {
            let q = random_density(&mut rng, &grid);
            let m1 = central_moment(&q, 1, false).unwrap();
            let m2 = central_moment(&q, 2, false).unwrap();
            let out = reproduce_fast(&q, &kernel).unwrap();
            let out_m1 = central_moment(&out, 1, false).unwrap();
            let out_m2 = central_moment(&out, 2, false).unwrap();
            assert!((out_m1 - m1).abs() < 1e-9, "mean drift {}", out_m1 - m1);
            let expect = kernel.variance() + 0.5 * m2;
            assert!((out_m2 - expect).abs() < 1e-4 * expect, "{out_m2} vs {expect}");
        }
    }

    /// Moment expansion of the operator output: for the 2k-th central moment,
    ///
    /// (2/4^k) M_2k + sum_{l=0}^{k-1} sum_{j=0}^{2l} s_{k-l} eps^{2(k-l)} 4^{-l}
    ///   C(2k,2l) C(2l,j) M_{2l-j} M_j + sum_{j=2}^{2k-2} 4^{-k} C(2k,j) M_{2k-j} M_j
    ///
    /// with s_m = (2m-1)!!/2^m the scaled even moments of the kernel, M_0 = 1
    /// and M_1 = 0. Evaluated directly as an independent oracle.
    fn output_even_moment_expansion(k: u32, central: &[f64], eps: f64) -> f64 {
        fn binom(n: u32, r: u32) -> f64 {
            let mut v = 1.0;
            for i in 0..r {
                v = v * (n - i) as f64 / (i + 1) as f64;
            }
            v
        }
        fn kernel_moment_coeff(m: u32) -> f64 {
            // (2m-1)!! / 2^m
            let mut v = 1.0;
            for i in 1..=m {
                v *= (2 * i - 1) as f64 / 2.0;
            }
            v
        }
        let mm = |j: u32| -> f64 {
            match j {
                0 => 1.0,
                1 => 0.0,
                _ => central[j as usize],
            }
        };
        let mut total = 2.0 / 4.0_f64.powi(k as i32) * mm(2 * k);
        for l in 0..k {
            for j in 0..=(2 * l) {
                total += kernel_moment_coeff(k - l)
                    * eps.powi(2 * (k - l) as i32)
                    * 4.0_f64.powi(-(l as i32))
                    * binom(2 * k, 2 * l)
                    * binom(2 * l, j)
                    * mm(2 * l - j)
                    * mm(j);
            }
        }
        for j in 2..=(2 * k - 2) {
            total += 4.0_f64.powi(-(k as i32)) * binom(2 * k, j) * mm(2 * k - j) * mm(j);
        }
        total
    }

    #[test]
    fn fourth_moment_identity() {
        let grid = Grid1D::new(-2.0, 2.0, 1025).unwrap();
        let eps = 0.15;
        let kernel = SegregationKernel::new(eps).unwrap();
        let cases = [
            GaussianMixture::new(vec![MixtureComponent { weight: 1.0, mean: 0.1, sigma: 0.2 }]),
            GaussianMixture::new(vec![
                MixtureComponent { weight: 0.5, mean: -0.4, sigma: 0.1 },
                MixtureComponent { weight: 0.5, mean: 0.4, sigma: 0.15 },
            ]),
        ];
        for mix in cases {
            let q = mix.on_grid(&grid).unwrap();
            let central: Vec<f64> = (0..=4)
                .map(|j| if j == 0 { 1.0 } else { central_moment(&q, j, false).unwrap() })
                .collect();
            let expect = output_even_moment_expansion(2, &central, eps);
            let out = reproduce_fast(&q, &kernel).unwrap();
            let m4 = central_moment(&out, 4, false).unwrap();
            assert!((m4 - expect).abs() < 1e-3 * expect, "m4={m4} expansion={expect}");
        }
    }

    #[test]
    fn w2_contraction_on_centered_pairs() {
        let grid = Grid1D::new(-2.0, 2.0, 513).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let bound = (1.0 + 1e-6) / 2.0_f64.sqrt();
        for trial in 0..20 {
            let eps = [0.05, 0.1, 0.2][trial % 3];
            let kernel = SegregationKernel::new(eps).unwrap();
            let (a, b) = random_centered_pair(&mut rng, &grid);
            let w_in = wasserstein(2, &a, &b).unwrap();
            let ta = reproduce_fast(&a, &kernel).unwrap();
            let tb = reproduce_fast(&b, &kernel).unwrap();
            let w_out = wasserstein(2, &ta, &tb).unwrap();
            assert!(
                w_out <= bound * w_in,
                "trial {trial}: {w_out} > {bound} * {w_in}"
            );
        }
    }

    #[test]
    fn unnormalized_operator_preserves_mass() {
        let grid = Grid1D::new(-2.0, 2.0, 401).unwrap();
        let kernel = SegregationKernel::new(0.1).unwrap();
        let q = gaussian_ansatz(0.2, 0.2, &grid).unwrap();
        let scaled =
            DensityState::new(grid, q.values.iter().map(|v| 3.7 * v).collect(), 0.0, DensityMode::Population)
                .unwrap();
        let out = reproduce_unnormalized(&scaled, &kernel).unwrap();
        assert!((out.mass() - 3.7).abs() < 1e-10 * 3.7);
        // rho * Gaussian: averaged mean, variance eps^2/2 + sigma^2/2
        let qn = normalize(&out).unwrap();
        let var = central_moment(&qn, 2, false).unwrap();
        let expect = kernel.variance() + 0.5 * 0.04;
        assert!((var - expect).abs() < 1e-4 * expect);
    }

    #[test]
    fn unnormalized_point_mass_becomes_kernel() {
        let grid = Grid1D::new(-2.0, 2.0, 801).unwrap();
        let kernel = SegregationKernel::new(0.2).unwrap();
        let mut q = point_mass(&grid, 400);
        q.values.iter_mut().for_each(|v| *v *= 2.5);
        let out = reproduce_unnormalized(&q, &kernel).unwrap();
        assert!((out.mass() - 2.5).abs() < 1e-10 * 2.5);
        for (i, v) in out.values.iter().enumerate() {
            let expect = 2.5 * kernel.density(grid.node(i));
            assert!((v - expect).abs() < 1e-6 * (1.0 + expect), "node {i}");
        }
    }

    #[test]
    fn degenerate_and_misconfigured_inputs_error() {
        let grid = Grid1D::new(-2.0, 2.0, 101).unwrap();
        let kernel = SegregationKernel::new(0.1).unwrap();
        let zero = DensityState::new(grid, vec![0.0; 101], 0.0, DensityMode::Population).unwrap();
        assert!(matches!(reproduce_unnormalized(&zero, &kernel), Err(EvoError::Degenerate(_))));
        assert!(matches!(
            InfinitesimalOp::with_fft_len(grid, kernel, 64),
            Err(EvoError::Config(_))
        ));
        assert!(InfinitesimalOp::with_fft_len(grid, kernel, 1024).is_ok());
    }

    #[test]
    fn reference_requires_normalized_input() {
        let grid = Grid1D::new(-2.0, 2.0, 101).unwrap();
        let kernel = SegregationKernel::new(0.1).unwrap();
        let raw = DensityState::new(grid, vec![1.0; 101], 0.0, DensityMode::Population).unwrap();
        assert!(matches!(reproduce_reference(&raw, &kernel), Err(EvoError::Contract(_))));
    }

    #[test]
    fn repeated_application_through_cached_plans_is_stable() {
        let grid = Grid1D::new(-2.0, 2.0, 201).unwrap();
        let kernel = SegregationKernel::new(0.2).unwrap();
        let mut op = InfinitesimalOp::new(grid, kernel).unwrap();
        let mut q = gaussian_ansatz(0.5, 0.2, &grid).unwrap();
        for _ in 0..50 {
            q = op.apply(&q).unwrap().state;
        }
        // mean preserved across 50 applications, variance pinned at eps^2
        let m1 = central_moment(&q, 1, false).unwrap();
        let m2 = central_moment(&q, 2, false).unwrap();
        assert!((m1 - 0.5).abs() < 1e-7, "m1={m1}");
        assert!((m2 - 0.04).abs() < 1e-3, "m2={m2}");
    }
}
