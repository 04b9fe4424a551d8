//! Direct quadrature backend.

use alloc::vec;
use alloc::vec::Vec;

use super::MixtureView;
use crate::math::{ceil, exp, floor, gauss_logpdf, ln, log_sum_exp, sqrt, xlogx};
use crate::Result;

/// Composite Simpson over `[min_mean - tail, max_mean + tail]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Minimum node count (odd).
    pub n_nodes: usize,
    /// Upper bound on the node spacing, in units of sigma; wide mixtures get
    /// more nodes than `n_nodes`.
    pub max_spacing_sigmas: f64,
    /// Integration range beyond the extreme means, in units of sigma.
    pub tail_sigmas: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { n_nodes: 8193, max_spacing_sigmas: 0.25, tail_sigmas: 8.0 }
    }
}

/// `log p(y|x)` by log-sum-exp over all components.
pub fn log_density_quad(mv: &MixtureView, y: f64) -> f64 {
    log_sum_exp(mv.components().map(|(mu, w)| ln(w) + gauss_logpdf(y, mu, mv.sigma2)))
}

/// Exact mixture density at `y`.
pub fn density_quad(mv: &MixtureView, y: f64) -> f64 {
    exp(log_density_quad(mv, y))
}

/// `-int p log p dy` with `0 log 0 = 0`.
pub fn entropy_quad(mv: &MixtureView, cfg: &QuadConfig) -> Result<f64> {
    Ok(simpson(mv, cfg, false).0)
}

/// Entropy and its gradient with respect to the design point; requires a
/// mixture built with mean gradients.
pub fn entropy_grad_quad(mv: &MixtureView, cfg: &QuadConfig) -> Result<(f64, Vec<f64>)> {
    if !mv.has_grads() {
        return Err(crate::Error::InvalidArgument("mixture was built without mean gradients".into()));
    }
    Ok(simpson(mv, cfg, true))
}

struct Comp {
    mean: f64,
    weight: f64,
    model: usize,
    index: usize,
}

/// Simpson rule over the union of `mean +- tail` windows: the integrand is
/// treated as zero farther than `tail` from every mean, and each node sums
/// only the components inside its window.
fn simpson(mv: &MixtureView, cfg: &QuadConfig, with_grad: bool) -> (f64, Vec<f64>) {
    let sigma = mv.sigma();
    let s2 = mv.sigma2;
    let tail = cfg.tail_sigmas * sigma;
    let d = if with_grad { mv.n_inputs } else { 0 };
    let mut comps: Vec<Comp> = Vec::with_capacity(mv.n_components());
    for (mi, m) in mv.models.iter().enumerate() {
        let w = m.weight / m.means.len() as f64;
        for (k, mu) in m.means.iter().enumerate() {
            comps.push(Comp { mean: *mu, weight: w, model: mi, index: k });
        }
    }
    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let lo = comps[0].mean - tail;
    let hi = comps[comps.len() - 1].mean + tail;
    let by_spacing = ceil((hi - lo) / (cfg.max_spacing_sigmas * sigma)) as usize + 1;
    let mut n = cfg.n_nodes.max(by_spacing).max(3);
    if n % 2 == 0 {
        n += 1;
    }
    let h = (hi - lo) / (n - 1) as f64;
    let norm = 1.0 / sqrt(core::f64::consts::TAU * s2);

    let node_range = |mu: f64| {
        let a = ceil((mu - tail - lo) / h).max(0.0) as usize;
        let b = (floor((mu + tail - lo) / h) as usize).min(n - 1);
        (a, b)
    };
    let mut intervals: Vec<(usize, usize)> = Vec::new();
    for c in &comps {
        let (a, b) = node_range(c.mean);
        match intervals.last_mut() {
            Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
            _ => intervals.push((a, b)),
        }
    }

    let mut entropy = 0.0;
    let mut grad = vec![0.0; d];
    let mut dp = vec![0.0; d];
    let (mut left, mut right) = (0usize, 0usize);
    for (a, b) in intervals {
        for i in a..=b {
            let y = lo + i as f64 * h;
            while left < comps.len() && comps[left].mean < y - tail {
                left += 1;
            }
            if right < left {
                right = left;
            }
            while right < comps.len() && comps[right].mean <= y + tail {
                right += 1;
            }
            let mut p = 0.0;
            dp.iter_mut().for_each(|v| *v = 0.0);
            for c in &comps[left..right] {
                let r = y - c.mean;
                let phi = c.weight * norm * exp(-0.5 * r * r / s2);
                p += phi;
                if with_grad {
                    let g = &mv.models[c.model].mean_grads[c.index * d..(c.index + 1) * d];
                    let s = phi * r / s2;
                    for (acc, gj) in dp.iter_mut().zip(g) {
                        *acc += gj * s;
                    }
                }
            }
            let wt = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            } * h
                / 3.0;
            let term = xlogx(p);
            debug_assert!(term.is_finite());
            entropy -= wt * term;
            if with_grad && p > 0.0 {
                let f = 1.0 + ln(p);
                for (gj, dpj) in grad.iter_mut().zip(&dp) {
                    *gj -= wt * f * dpj;
                }
            }
        }
    }
    (entropy, grad)
}
