//! Predictive density `p(y|x)`, response entropy `H(y|x)` and its gradient
//! with respect to the design point.
//!
//! Two interchangeable backends: [`Backend::Quad`] integrates the exact
//! mixture density with composite Simpson; [`Backend::Conv`] bins component
//! means onto a fine grid (Keys cubic spreading) and convolves with the
//! Gaussian mask. When a mixture is too wide for the conv grid limit the
//! conv backend falls back to quadrature.

mod fft;
mod grid;
mod mixture;
mod quad;

use alloc::vec::Vec;

pub use grid::{
    bin_impulses, density_fft, density_fft_with_tail, entropy_grad_conv, entropy_grid, keys_kernel, keys_weights,
    GridConfig, PredictiveGrid, KEYS_A,
};
pub use mixture::{build_mixture, MixtureView, ModelComponents};
pub use quad::{density_quad, entropy_grad_quad, entropy_quad, log_density_quad, QuadConfig};

use crate::designer::BeliefState;
use crate::math::gauss_entropy;
use crate::model::{ModelSpec, NoiseModel};
use crate::{Error, Result};

/// Masks up to this many taps are applied by direct summation.
pub(crate) const DIRECT_CONV_TAPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Quad(QuadConfig),
    Conv(GridConfig),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Conv(GridConfig::default())
    }
}

impl Backend {
    pub fn quad() -> Self {
        Backend::Quad(QuadConfig::default())
    }

    pub fn conv() -> Self {
        Backend::Conv(GridConfig::default())
    }
}

/// Quadrature used when the conv grid would exceed its node limit: spacing
/// bounded by sigma/4, no minimum node count.
fn fallback_quad(cfg: &GridConfig) -> QuadConfig {
    QuadConfig { n_nodes: 3, max_spacing_sigmas: 1.0 / cfg.min_nodes_per_sigma, tail_sigmas: cfg.tail_sigmas }
}

fn noise_of(mv: &MixtureView) -> NoiseModel {
    NoiseModel::new(mv.sigma2).expect("mixture variance is validated on construction")
}

/// Conv-backend density grid for a mixture.
pub fn density_grid(mv: &MixtureView, cfg: &GridConfig) -> Result<PredictiveGrid> {
    let grid = PredictiveGrid::for_mixture(mv, cfg)?;
    let grid = bin_impulses(mv, &grid)?;
    density_fft_with_tail(&grid, noise_of(mv), cfg.tail_sigmas)
}

/// `H(y|x)` of the mixture. A single component has the closed form
/// `ln(2 pi e sigma2) / 2` on either backend.
pub fn entropy(mv: &MixtureView, backend: &Backend) -> Result<f64> {
    if mv.n_components() == 1 {
        return Ok(gauss_entropy(mv.sigma2));
    }
    match backend {
        Backend::Quad(q) => entropy_quad(mv, q),
        Backend::Conv(cfg) => match density_grid(mv, cfg) {
            Ok(g) => Ok(entropy_grid(&g)),
            Err(Error::GridTooCoarse { .. }) => {
                log::debug!("conv grid limit exceeded; using quadrature");
                entropy_quad(mv, &fallback_quad(cfg))
            }
            Err(e) => Err(e),
        },
    }
}

/// `H(y|x)` and `dH/dx`; the mixture must carry mean gradients.
pub fn entropy_with_grad(mv: &MixtureView, backend: &Backend) -> Result<(f64, Vec<f64>)> {
    if mv.n_components() == 1 {
        return Ok((gauss_entropy(mv.sigma2), alloc::vec![0.0; mv.n_inputs]));
    }
    match backend {
        Backend::Quad(q) => entropy_grad_quad(mv, q),
        Backend::Conv(cfg) => match density_grid(mv, cfg) {
            Ok(g) => {
                let grad = entropy_grad_conv(mv, &g, noise_of(mv), cfg.tail_sigmas)?;
                Ok((entropy_grid(&g), grad))
            }
            Err(Error::GridTooCoarse { .. }) => {
                log::debug!("conv grid limit exceeded; using quadrature");
                entropy_grad_quad(mv, &fallback_quad(cfg))
            }
            Err(e) => Err(e),
        },
    }
}

/// `dH(y|x)/dx` at design point `x` for the current belief.
pub fn grad_entropy_x(
    models: &[ModelSpec],
    belief: &BeliefState,
    x: &[f64],
    noise: NoiseModel,
    backend: &Backend,
) -> Result<Vec<f64>> {
    let mv = build_mixture(models, belief, x, noise, true)?;
    Ok(entropy_with_grad(&mv, backend)?.1)
}
