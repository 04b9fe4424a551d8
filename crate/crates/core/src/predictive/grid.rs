//! Binned convolution backend: component means are spread onto a fine grid
//! with the Keys cubic kernel and convolved with the sampled Gaussian mask.

use alloc::vec;
use alloc::vec::Vec;

use super::fft::convolve_centered;
use super::MixtureView;
use crate::math::{exp, floor, ln, sqrt, xlogx};
use crate::model::NoiseModel;
use crate::{Error, Result};

/// Keys cubic-convolution parameter.
pub const KEYS_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Minimum node count; grown by doubling until the spacing is at most
    /// `sigma / min_nodes_per_sigma`.
    pub n_nodes: usize,
    /// Above this node count the backend gives up (the caller falls back to
    /// quadrature).
    pub max_nodes: usize,
    pub min_nodes_per_sigma: f64,
    /// Grid margin beyond the extreme means and mask half-width, in sigmas.
    pub tail_sigmas: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_nodes: 4096, max_nodes: 1 << 16, min_nodes_per_sigma: 4.0, tail_sigmas: 8.0 }
    }
}

/// Uniform response grid with impulse and density fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveGrid {
    y_min: f64,
    y_max: f64,
    spacing: f64,
    impulses: Vec<f64>,
    density: Vec<f64>,
    /// Nodes clamped from negative to zero after convolution.
    pub clamped_nodes: usize,
    /// Trapezoid mass before renormalization.
    pub raw_mass: f64,
}

impl PredictiveGrid {
    pub fn new(y_min: f64, y_max: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes < 4 || !(y_max > y_min) {
            return Err(Error::InvalidArgument("grid needs y_max > y_min and at least 4 nodes".into()));
        }
        Ok(Self {
            y_min,
            y_max,
            spacing: (y_max - y_min) / (n_nodes - 1) as f64,
            impulses: vec![0.0; n_nodes],
            density: Vec::new(),
            clamped_nodes: 0,
            raw_mass: 0.0,
        })
    }

    /// Grid spanning `[min_mean - tail, max_mean + tail]` with a power-of-two
    /// node count fine enough for the mixture's sigma.
    pub fn for_mixture(mv: &MixtureView, cfg: &GridConfig) -> Result<Self> {
        let sigma = mv.sigma();
        let (lo, hi) = mv.mean_range();
        let (y_min, y_max) = (lo - cfg.tail_sigmas * sigma, hi + cfg.tail_sigmas * sigma);
        let max_spacing = sigma / cfg.min_nodes_per_sigma;
        let mut n = cfg.n_nodes.next_power_of_two().max(4);
        while (y_max - y_min) / (n - 1) as f64 > max_spacing {
            n *= 2;
            if n > cfg.max_nodes {
                return Err(Error::GridTooCoarse { sigma, spacing: (y_max - y_min) / (cfg.max_nodes - 1) as f64 });
            }
        }
        Self::new(y_min, y_max, n)
    }

    /// Grid carrying a given density (no impulses).
    pub fn from_density(y_min: f64, y_max: f64, density: Vec<f64>) -> Result<Self> {
        let mut g = Self::new(y_min, y_max, density.len())?;
        g.raw_mass = trapezoid(&density, g.spacing);
        g.density = density;
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.impulses.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn node(&self, i: usize) -> f64 {
        self.y_min + i as f64 * self.spacing
    }

    pub fn impulses(&self) -> &[f64] {
        &self.impulses
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Trapezoid mass of the density field.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.density, self.spacing)
    }

    fn position(&self, y: f64) -> Result<(usize, f64)> {
        let u = (y - self.y_min) / self.spacing;
        let i0 = floor(u);
        if !(i0 >= 1.0 && (i0 as usize) + 2 < self.n_nodes()) {
            return Err(Error::InvalidArgument(alloc::format!("impulse at {y} lies outside the grid interior")));
        }
        Ok((i0 as usize, u - i0))
    }
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let inner: f64 = v.iter().sum();
    (inner - 0.5 * (v[0] + v[v.len() - 1])) * h
}

/// Keys cubic-convolution kernel with `a = -0.5`.
pub fn keys_kernel(s: f64) -> f64 {
    let s = s.abs();
    let a = KEYS_A;
    if s <= 1.0 {
        ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0
    } else if s < 2.0 {
        ((a * s - 5.0 * a) * s + 8.0 * a) * s - 4.0 * a
    } else {
        0.0
    }
}

/// Weights on nodes `i0 - 1 ..= i0 + 2` for a point at fractional offset
/// `t` in `[0, 1)` past node `i0`. The last weight closes the partition of
/// unity.
pub fn keys_weights(t: f64) -> [f64; 4] {
    let w0 = keys_kernel(t + 1.0);
    let w1 = keys_kernel(t);
    let w2 = keys_kernel(1.0 - t);
    [w0, w1, w2, 1.0 - (w0 + w1 + w2)]
}

/// Deposits each component's weight onto its four surrounding nodes.
pub fn bin_impulses(mv: &MixtureView, grid: &PredictiveGrid) -> Result<PredictiveGrid> {
    let mut out = grid.clone();
    out.impulses.iter_mut().for_each(|v| *v = 0.0);
    out.density.clear();
    for (mu, w) in mv.components() {
        let (i0, t) = out.position(mu)?;
        for (k, kw) in keys_weights(t).iter().enumerate() {
            out.impulses[i0 - 1 + k] += w * kw;
        }
    }
    Ok(out)
}

fn check_resolution(grid: &PredictiveGrid, sigma: f64) -> Result<()> {
    if sigma < 4.0 * grid.spacing {
        return Err(Error::GridTooCoarse { sigma, spacing: grid.spacing });
    }
    Ok(())
}

fn sampled_mask(spacing: f64, sigma2: f64, tail_sigmas: f64, derivative: bool) -> Vec<f64> {
    let half = floor(tail_sigmas * sqrt(sigma2) / spacing) as usize;
    let norm = 1.0 / sqrt(core::f64::consts::TAU * sigma2);
    (0..2 * half + 1)
        .map(|k| {
            let z = (k as f64 - half as f64) * spacing;
            let phi = norm * exp(-0.5 * z * z / sigma2);
            if derivative {
                z / sigma2 * phi
            } else {
                phi
            }
        })
        .collect()
}

/// Convolves the impulse field with `phi(z; 0, sigma2)` truncated at the
/// configured tail, clamps negative lobes to zero and renormalizes to unit
/// mass.
pub fn density_fft(grid: &PredictiveGrid, noise: NoiseModel) -> Result<PredictiveGrid> {
    density_fft_with_tail(grid, noise, GridConfig::default().tail_sigmas)
}

pub fn density_fft_with_tail(grid: &PredictiveGrid, noise: NoiseModel, tail_sigmas: f64) -> Result<PredictiveGrid> {
    check_resolution(grid, noise.sigma())?;
    let mask = sampled_mask(grid.spacing, noise.sigma2(), tail_sigmas, false);
    let mut density = convolve_centered(&grid.impulses, &mask);
    let mut clamped = 0;
    for v in density.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    let raw_mass = trapezoid(&density, grid.spacing);
    if clamped > 0 {
        log::trace!("clamped {clamped} negative density nodes");
    }
    if (raw_mass - 1.0).abs() > 1e-3 {
        log::debug!("grid mass {raw_mass} before renormalization");
    }
    if raw_mass > 0.0 {
        density.iter_mut().for_each(|v| *v /= raw_mass);
    }
    let mut out = grid.clone();
    out.density = density;
    out.clamped_nodes = clamped;
    out.raw_mass = raw_mass;
    Ok(out)
}

/// `-sum p_i log p_i dy` with trapezoid end weights.
pub fn entropy_grid(grid: &PredictiveGrid) -> f64 {
    let d = &grid.density;
    if d.is_empty() {
        return 0.0;
    }
    let s: f64 = d.iter().map(|p| xlogx(*p)).sum();
    -(s - 0.5 * (xlogx(d[0]) + xlogx(d[d.len() - 1]))) * grid.spacing
}

/// Gradient of the grid entropy with respect to the design point.
///
/// Depositing each component's `w dmu/dx_j` and convolving with the
/// derivative mask `psi(z) = z/sigma2 phi(z)` gives `dp/dx_j` on the grid;
/// integrating that against `-(1 + log p)` is a linear functional of the
/// deposits, so it is evaluated in transposed order: correlate
/// `(1 + log p)` with `psi` once, then read the result back at every
/// component through the same Keys weights. One convolution serves all
/// input coordinates.
pub fn entropy_grad_conv(mv: &MixtureView, grid: &PredictiveGrid, noise: NoiseModel, tail_sigmas: f64) -> Result<Vec<f64>> {
    if !mv.has_grads() {
        return Err(Error::InvalidArgument("mixture was built without mean gradients".into()));
    }
    check_resolution(grid, noise.sigma())?;
    let n = grid.n_nodes();
    let g: Vec<f64> = grid
        .density
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if *p > 0.0 {
                let tau = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
                tau * (1.0 + ln(*p))
            } else {
                0.0
            }
        })
        .collect();
    let psi = sampled_mask(grid.spacing, noise.sigma2(), tail_sigmas, true);
    let corr = convolve_centered(&g, &psi);
    let d = mv.n_inputs;
    let mut grad = vec![0.0; d];
    for m in &mv.models {
        let w = m.weight / m.means.len() as f64;
        for (k, mu) in m.means.iter().enumerate() {
            let (i0, t) = grid.position(*mu)?;
            let kw = keys_weights(t);
            let c: f64 = (0..4).map(|s| kw[s] * corr[i0 - 1 + s]).sum();
            let scale = grid.spacing * w * c;
            for (gj, dm) in grad.iter_mut().zip(&m.mean_grads[k * d..(k + 1) * d]) {
                *gj += scale * dm;
            }
        }
    }
    Ok(grad)
}

/// Reference for [`entropy_grad_conv`]: one deposit and one convolution
/// per input coordinate, integrated against `-(1 + log p)`.
#[cfg(test)]
pub(crate) fn entropy_grad_conv_direct(mv: &MixtureView, grid: &PredictiveGrid, noise: NoiseModel) -> Vec<f64> {
    let d = mv.n_inputs;
    let n = grid.n_nodes();
    let psi = sampled_mask(grid.spacing, noise.sigma2(), 8.0, true);
    (0..d)
        .map(|j| {
            let mut field = vec![0.0; n];
            for m in &mv.models {
                let w = m.weight / m.means.len() as f64;
                for (k, mu) in m.means.iter().enumerate() {
                    let (i0, t) = grid.position(*mu).unwrap();
                    for (s, kw) in keys_weights(t).iter().enumerate() {
                        field[i0 - 1 + s] += w * m.mean_grads[k * d + j] * kw;
                    }
                }
            }
            let dp = convolve_centered(&field, &psi);
            -(0..n)
                .filter(|i| grid.density[*i] > 0.0)
                .map(|i| {
                    let tau = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
                    tau * (1.0 + ln(grid.density[i])) * dp[i]
                })
                .sum::<f64>()
                * grid.spacing
        })
        .collect()
}
