//! Design scores. Every criterion is a score to maximize.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::designer::BeliefState;
use crate::math::ln;
use crate::model::{ModelSpec, NoiseModel};
use crate::predictive::{build_mixture, entropy, entropy_with_grad, Backend, MixtureView};
use crate::{Error, Result};

/// Largest pairwise-KL matrix the logdet criterion will factor.
pub const LOGDET_MAX_ROWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDetOptions {
    /// Leading samples of each model's set that enter the matrix.
    pub subsample_per_model: usize,
    pub jitter: f64,
}

impl Default for LogDetOptions {
    fn default() -> Self {
        Self { subsample_per_model: 50, jitter: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriterionKind {
    /// Predictive entropy `H(y|x)`.
    ResponseEntropy,
    /// `E_m KL(p(y|m,x) || p(y|x))`, the mutual information `I(y; m | x)`.
    JensenShannon,
    /// `log |det D(x)|` over pairwise response KL divergences.
    LogDet(LogDetOptions),
}

impl CriterionKind {
    pub const NAMES: [&'static str; 3] = ["re", "js", "logdet"];

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "re" => Some(Self::ResponseEntropy),
            "js" => Some(Self::JensenShannon),
            "logdet" => Some(Self::LogDet(LogDetOptions::default())),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ResponseEntropy => "re",
            Self::JensenShannon => "js",
            Self::LogDet(_) => "logdet",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::LogDet(o) = self {
            if o.subsample_per_model < 2 {
                return Err(Error::InvalidArgument("logdet subsample_per_model must be at least 2".into()));
            }
        }
        Ok(())
    }
}

/// KL divergence between `N(mu1, sigma2)` and `N(mu2, sigma2)`.
pub fn kl_gauss(mu1: f64, mu2: f64, sigma2: f64) -> f64 {
    let d = mu1 - mu2;
    d * d / (2.0 * sigma2)
}

pub fn score_re_mixture(mv: &MixtureView, backend: &Backend) -> Result<f64> {
    entropy(mv, backend)
}

/// `H(y|x) - sum_m p(m) H(y|m,x)`.
pub fn score_js_mixture(mv: &MixtureView, backend: &Backend) -> Result<f64> {
    let total = entropy(mv, backend)?;
    if mv.models.len() == 1 {
        return Ok(0.0);
    }
    let mut within = 0.0;
    for (k, m) in mv.models.iter().enumerate() {
        within += m.weight * entropy(&mv.single_model(k), backend)?;
    }
    Ok(total - within)
}

fn js_with_grad(mv: &MixtureView, backend: &Backend) -> Result<(f64, Vec<f64>)> {
    let (total, mut grad) = entropy_with_grad(mv, backend)?;
    if mv.models.len() == 1 {
        return Ok((0.0, vec![0.0; grad.len()]));
    }
    let mut score = total;
    for (k, m) in mv.models.iter().enumerate() {
        let (h, g) = entropy_with_grad(&mv.single_model(k), backend)?;
        score -= m.weight * h;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a -= m.weight * b;
        }
    }
    Ok((score, grad))
}

struct LogDetRows {
    means: Vec<f64>,
    grads: Vec<f64>,
}

fn logdet_rows(mv: &MixtureView, opts: &LogDetOptions) -> Result<LogDetRows> {
    let d = mv.n_inputs;
    let mut means = Vec::new();
    let mut grads = Vec::new();
    for m in &mv.models {
        let take = m.means.len().min(opts.subsample_per_model);
        means.extend_from_slice(&m.means[..take]);
        if mv.has_grads() {
            grads.extend_from_slice(&m.mean_grads[..take * d]);
        }
    }
    if means.len() > LOGDET_MAX_ROWS {
        return Err(Error::MatrixTooLarge(means.len()));
    }
    Ok(LogDetRows { means, grads })
}

fn kl_matrix(means: &[f64], sigma2: f64, jitter: f64) -> DMatrix<f64> {
    let n = means.len();
    DMatrix::from_fn(n, n, |a, b| kl_gauss(means[a], means[b], sigma2) + if a == b { jitter } else { 0.0 })
}

/// `log |det(D + jitter I)|` and, when requested, the LU factors' inverse.
fn log_abs_det(m: DMatrix<f64>, want_inverse: bool) -> (f64, Option<DMatrix<f64>>) {
    let lu = m.lu();
    let u = lu.u();
    let mut s = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 {
            return (f64::NEG_INFINITY, None);
        }
        s += ln(d);
    }
    let inv = if want_inverse { lu.try_inverse() } else { None };
    (s, inv)
}

pub fn score_logdet_mixture(mv: &MixtureView, opts: &LogDetOptions) -> Result<f64> {
    let rows = logdet_rows(mv, opts)?;
    Ok(log_abs_det(kl_matrix(&rows.means, mv.sigma2, opts.jitter), false).0)
}

fn logdet_with_grad(mv: &MixtureView, opts: &LogDetOptions) -> Result<(f64, Vec<f64>)> {
    let d = mv.n_inputs;
    let rows = logdet_rows(mv, opts)?;
    let n = rows.means.len();
    let (score, inv) = log_abs_det(kl_matrix(&rows.means, mv.sigma2, opts.jitter), true);
    let mut grad = vec![0.0; d];
    let Some(inv) = inv else {
        return Ok((score, grad));
    };
    // d log|det M| = tr(M^-1 dM), dM_ab = (mu_a - mu_b)(dmu_a - dmu_b) / sigma2
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let c = inv[(b, a)] * (rows.means[a] - rows.means[b]) / mv.sigma2;
            for j in 0..d {
                grad[j] += c * (rows.grads[a * d + j] - rows.grads[b * d + j]);
            }
        }
    }
    Ok((score, grad))
}

pub fn score_re(models: &[ModelSpec], belief: &BeliefState, x: &[f64], noise: NoiseModel, backend: &Backend) -> Result<f64> {
    score_re_mixture(&build_mixture(models, belief, x, noise, false)?, backend)
}

pub fn score_js(models: &[ModelSpec], belief: &BeliefState, x: &[f64], noise: NoiseModel, backend: &Backend) -> Result<f64> {
    score_js_mixture(&build_mixture(models, belief, x, noise, false)?, backend)
}

pub fn score_logdet(
    models: &[ModelSpec],
    belief: &BeliefState,
    x: &[f64],
    noise: NoiseModel,
    opts: &LogDetOptions,
) -> Result<f64> {
    score_logdet_mixture(&build_mixture(models, belief, x, noise, false)?, opts)
}

pub fn score_mixture(kind: &CriterionKind, mv: &MixtureView, backend: &Backend) -> Result<f64> {
    match kind {
        CriterionKind::ResponseEntropy => score_re_mixture(mv, backend),
        CriterionKind::JensenShannon => score_js_mixture(mv, backend),
        CriterionKind::LogDet(o) => score_logdet_mixture(mv, o),
    }
}

/// Score and its gradient in `x`; the mixture must carry mean gradients.
pub fn score_mixture_with_grad(kind: &CriterionKind, mv: &MixtureView, backend: &Backend) -> Result<(f64, Vec<f64>)> {
    match kind {
        CriterionKind::ResponseEntropy => entropy_with_grad(mv, backend),
        CriterionKind::JensenShannon => js_with_grad(mv, backend),
        CriterionKind::LogDet(o) => logdet_with_grad(mv, o),
    }
}

pub fn score(
    kind: &CriterionKind,
    models: &[ModelSpec],
    belief: &BeliefState,
    x: &[f64],
    noise: NoiseModel,
    backend: &Backend,
) -> Result<f64> {
    score_mixture(kind, &build_mixture(models, belief, x, noise, false)?, backend)
}

pub fn score_with_grad(
    kind: &CriterionKind,
    models: &[ModelSpec],
    belief: &BeliefState,
    x: &[f64],
    noise: NoiseModel,
    backend: &Backend,
) -> Result<(f64, Vec<f64>)> {
    score_mixture_with_grad(kind, &build_mixture(models, belief, x, noise, true)?, backend)
}
