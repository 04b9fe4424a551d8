//! Hamiltonian Monte Carlo with an identity mass matrix, a fixed number of
//! leapfrog steps and dual-averaging step-size adaptation during warmup.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{exp, ln, sqrt};
use crate::rng;
use crate::{Error, Result};

/// An unnormalized log-density with gradient. Returning `-inf` (or any
/// non-finite value) marks a point outside the support.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a closure `(q, grad) -> log p(q)` into a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(q, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig {
    pub n_samples: usize,
    pub n_warmup: usize,
    pub leapfrog_steps: usize,
    pub initial_step_size: f64,
    pub target_accept: f64,
    /// Each transition uses `step * U(1 - jitter, 1 + jitter)`; breaks the
    /// periodicity a fixed trajectory length has on near-Gaussian targets.
    pub step_jitter: f64,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            n_warmup: 500,
            leapfrog_steps: 20,
            initial_step_size: 0.01,
            target_accept: 0.7,
            step_jitter: 0.2,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_warmup == 0 || self.leapfrog_steps == 0 {
            return Err(Error::InvalidArgument("HMC counts must be positive".into()));
        }
        if !(self.initial_step_size > 0.0) {
            return Err(Error::InvalidArgument("HMC initial_step_size must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument("HMC target_accept must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(Error::InvalidArgument("HMC step_jitter must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parameter draws `S_m` with their summary statistics. Draws are stored
/// row-major, one row of `dim` values per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    samples: Vec<f64>,
    pub accept_rate: f64,
    pub step_size: f64,
    pub divergences: usize,
    pub low_acceptance: bool,
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

impl SampleSet {
    /// Wraps externally produced draws (e.g. point-mass beliefs). A single
    /// point gets a zero covariance.
    pub fn from_points(dim: usize, samples: Vec<f64>) -> Self {
        assert!(dim > 0 && samples.len() % dim == 0, "sample buffer is not a multiple of dim");
        let (mean, covariance) = match empirical_stats(&samples, dim) {
            Ok(s) => (s.mean, s.covariance),
            Err(_) => (samples[..dim.min(samples.len())].to_vec(), vec![0.0; dim * dim]),
        };
        Self {
            dim,
            samples,
            accept_rate: 1.0,
            step_size: 0.0,
            divergences: 0,
            low_acceptance: false,
            mean,
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> core::slice::ChunksExact<'_, f64> {
        self.samples.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.samples
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `dim x dim` sample covariance.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// `trace(covariance) / dim`.
    pub fn per_param_variance(&self) -> f64 {
        (0..self.dim).map(|i| self.covariance[i * self.dim + i]).sum::<f64>() / self.dim as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub per_param_variance: f64,
}

/// Sample mean, covariance (denominator `N - 1`) and `trace / dim`.
pub fn empirical_stats(samples: &[f64], dim: usize) -> Result<SampleStats> {
    let n = samples.len() / dim;
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let mut mean = vec![0.0; dim];
    for row in samples.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; dim * dim];
    for row in samples.chunks_exact(dim) {
        for i in 0..dim {
            let di = row[i] - mean[i];
            for j in i..dim {
                cov[i * dim + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / (n - 1) as f64;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let per_param_variance = (0..dim).map(|i| cov[i * dim + i]).sum::<f64>() / dim as f64;
    Ok(SampleStats { mean, covariance: cov, per_param_variance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub divergent: bool,
}

/// Integrates Hamilton's equations for `H = -log p(q) + |p|^2 / 2`.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &mut T,
    position: &[f64],
    momentum: &[f64],
    step: f64,
    steps: usize,
) -> Trajectory {
    let mut q = position.to_vec();
    let mut p = momentum.to_vec();
    let mut g = vec![0.0; q.len()];
    let lp0 = target.log_density_grad(&q, &mut g);
    if !lp0.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Trajectory { position: q, momentum: p, log_density: lp0, divergent: true };
    }
    let (log_density, ok) = leapfrog_in_place(target, &mut q, &mut p, &mut g, step, steps);
    Trajectory { position: q, momentum: p, log_density, divergent: !ok }
}

/// Leapfrog on caller-owned buffers; `g` holds the gradient at `q` on entry
/// and at the final position on exit. Returns the final log-density and
/// `false` if the trajectory hit a non-finite density or gradient.
fn leapfrog_in_place<T: LogDensity + ?Sized>(
    target: &mut T,
    q: &mut [f64],
    p: &mut [f64],
    g: &mut [f64],
    step: f64,
    steps: usize,
) -> (f64, bool) {
    for (pi, gi) in p.iter_mut().zip(g.iter()) {
        *pi += 0.5 * step * gi;
    }
    let mut lp = f64::NAN;
    for s in 0..steps {
        for (qi, pi) in q.iter_mut().zip(p.iter()) {
            *qi += step * pi;
        }
        lp = target.log_density_grad(q, g);
        if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return (lp, false);
        }
        let scale = if s + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi += scale * step * gi;
        }
    }
    (lp, true)
}

/// Dual averaging of the log step size toward a target acceptance rate.
struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        Self { mu: ln(10.0 * eps0), h_bar: 0.0, log_eps: ln(eps0), log_eps_bar: 0.0, t: 0.0, target }
    }

    fn update(&mut self, accept_prob: f64) {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - sqrt(self.t) / Self::GAMMA * self.h_bar;
        let eta = libm::pow(self.t, -Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        exp(self.log_eps)
    }

    fn final_step(&self) -> f64 {
        exp(self.log_eps_bar)
    }
}

/// Energy errors above this count as divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Draws `cfg.n_samples` states after `cfg.n_warmup` adaptation iterations.
pub fn sample<T: LogDensity + ?Sized>(target: &mut T, init: &[f64], cfg: &HmcConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: init.len() });
    }
    let mut rng = rng::stream(cfg.seed);
    let mut q = init.to_vec();
    let mut g = vec![0.0; dim];
    let mut lp = target.log_density_grad(&q, &mut g);
    if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInit);
    }

    let mut adapt = DualAveraging::new(cfg.initial_step_size, cfg.target_accept);
    let mut step = cfg.initial_step_size;
    let mut q_new = vec![0.0; dim];
    let mut p = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut draws = Vec::with_capacity(cfg.n_samples * dim);
    let mut accepted = 0usize;
    let mut divergences = 0usize;

    for it in 0..cfg.n_warmup + cfg.n_samples {
        for pi in p.iter_mut() {
            *pi = StandardNormal.sample(&mut rng);
        }
        let h0 = -lp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        q_new.copy_from_slice(&q);
        g_new.copy_from_slice(&g);
        let jitter = if cfg.step_jitter > 0.0 {
            1.0 + cfg.step_jitter * (2.0 * rng.random::<f64>() - 1.0)
        } else {
            1.0
        };
        let (lp_new, ok) =
            leapfrog_in_place(target, &mut q_new, &mut p, &mut g_new, step * jitter, cfg.leapfrog_steps);
        let accept_prob = if ok {
            let h1 = -lp_new + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
            let dh = h1 - h0;
            if dh.is_nan() || dh > MAX_ENERGY_ERROR {
                divergences += 1;
                0.0
            } else {
                exp(-dh).min(1.0)
            }
        } else {
            divergences += 1;
            0.0
        };
        let u: f64 = rng.random();
        let accept = u < accept_prob;
        if accept {
            core::mem::swap(&mut q, &mut q_new);
            core::mem::swap(&mut g, &mut g_new);
            lp = lp_new;
        }
        if it < cfg.n_warmup {
            adapt.update(accept_prob);
            step = if it + 1 == cfg.n_warmup { adapt.final_step() } else { adapt.current() };
        } else {
            accepted += usize::from(accept);
            draws.extend_from_slice(&q);
        }
    }

    let accept_rate = accepted as f64 / cfg.n_samples as f64;
    let low_acceptance = accept_rate < 0.1;
    if low_acceptance {
        log::warn!("HMC acceptance rate {accept_rate:.3} is below 0.1 (step size {step:.3e})");
    }
    let mut set = SampleSet::from_points(dim, draws);
    set.accept_rate = accept_rate;
    set.step_size = step;
    set.divergences = divergences;
    set.low_acceptance = low_acceptance;
    Ok(set)
}
