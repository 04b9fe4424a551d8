//! Candidate models, their Gaussian priors (plus the soft barrier),
//! log-posteriors over the observation history, Monte Carlo marginal
//! likelihoods and the simulated ground truth.
//!
//! Additive constants are kept: `log_prior` is the full normalized Gaussian
//! log-density and every observation contributes the full
//! `log phi(y; m(x, theta), sigma2)`, so `log_posterior` is the log of
//! prior times likelihood (unnormalized only by the evidence).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::expr::{parse_expr, CompiledExpr, DomainError, Expr, TapeScratch};
use crate::hmc::{LogDensity, SampleSet};
use crate::math::{gauss_logpdf, ln, log_sum_exp, sqrt, LN_2PI};
use crate::{Error, Result};

/// Soft penalty `-(m(anchor, theta) / scale)^2 / 2` added to the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    pub anchor: Vec<f64>,
    pub scale: f64,
}

/// Known Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self { sigma2 })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        sqrt(self.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
    pub round_index: usize,
}

/// A candidate model: expression, named inputs and parameters, Gaussian
/// prior and optional barrier.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    name: String,
    expr: Expr,
    tape: CompiledExpr,
    input_names: Vec<String>,
    param_names: Vec<String>,
    prior_mean: Vec<f64>,
    prior_cov: DMatrix<f64>,
    prior_precision: DMatrix<f64>,
    log_det_cov: f64,
    barrier: Option<Barrier>,
}

impl ModelSpec {
    /// `prior_cov` is row-major `n x n`.
    pub fn new(
        name: impl Into<String>,
        source: &str,
        input_names: Vec<String>,
        param_names: Vec<String>,
        prior_mean: Vec<f64>,
        prior_cov: Vec<f64>,
        barrier: Option<Barrier>,
    ) -> Result<Self> {
        let params: Vec<&str> = param_names.iter().map(String::as_str).collect();
        let expr = parse_expr(source, &params)?;
        Self::from_expr(name, expr, input_names, param_names, prior_mean, prior_cov, barrier)
    }

    pub fn from_expr(
        name: impl Into<String>,
        expr: Expr,
        input_names: Vec<String>,
        param_names: Vec<String>,
        prior_mean: Vec<f64>,
        prior_cov: Vec<f64>,
        barrier: Option<Barrier>,
    ) -> Result<Self> {
        let n = param_names.len();
        if prior_mean.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: prior_mean.len() });
        }
        if prior_cov.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: prior_cov.len() });
        }
        let slots: Vec<&str> = input_names.iter().chain(&param_names).map(String::as_str).collect();
        for name in expr.names() {
            if !slots.contains(&name) {
                return Err(Error::UndeclaredName(name.into()));
            }
        }
        if let Some(b) = &barrier {
            if b.anchor.len() != input_names.len() {
                return Err(Error::DimensionMismatch { expected: input_names.len(), got: b.anchor.len() });
            }
            if !(b.scale > 0.0) {
                return Err(Error::InvalidArgument(alloc::format!("barrier scale must be positive, got {}", b.scale)));
            }
        }
        let tape = CompiledExpr::compile(&expr, &slots)?;
        let cov = DMatrix::from_row_slice(n, n, &prior_cov);
        let tol = 1e-12 * cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > tol {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let log_det_cov = 2.0 * chol.l_dirty().diagonal().iter().map(|d| ln(*d)).sum::<f64>();
        let prior_precision = chol.inverse();
        Ok(Self {
            name: name.into(),
            expr,
            tape,
            input_names,
            param_names,
            prior_mean,
            prior_cov: cov,
            prior_precision,
            log_det_cov,
            barrier,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn barrier(&self) -> Option<&Barrier> {
        self.barrier.as_ref()
    }

    /// Number of parameters.
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    fn fill_slots(&self, x: &[f64], theta: &[f64], slots: &mut Vec<f64>) {
        slots.clear();
        slots.extend_from_slice(x);
        slots.extend_from_slice(theta);
    }

    fn check_dims(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), got: x.len() });
        }
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    /// `m(x, theta)`.
    pub fn predict(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_dims(x, theta)?;
        let mut ws = Workspace::default();
        Ok(self.predict_with(x, theta, &mut ws)?)
    }

    pub(crate) fn predict_with(&self, x: &[f64], theta: &[f64], ws: &mut Workspace) -> Result<f64, DomainError> {
        self.fill_slots(x, theta, &mut ws.slots);
        self.tape.eval(&ws.slots, &mut ws.tape)
    }

    /// `m(x, theta)` and its gradient with respect to `theta`.
    pub(crate) fn predict_grad_theta(
        &self,
        x: &[f64],
        theta: &[f64],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64, DomainError> {
        self.fill_slots(x, theta, &mut ws.slots);
        let nx = self.n_inputs();
        ws.wrt.clear();
        ws.wrt.extend(nx..nx + self.dim());
        self.tape.eval_grad(&ws.slots, &ws.wrt, grad, &mut ws.tape)
    }

    /// `m(x, theta)` and its gradient with respect to `x`.
    pub(crate) fn predict_grad_x(
        &self,
        x: &[f64],
        theta: &[f64],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64, DomainError> {
        self.fill_slots(x, theta, &mut ws.slots);
        ws.wrt.clear();
        ws.wrt.extend(0..self.n_inputs());
        self.tape.eval_grad(&ws.slots, &ws.wrt, grad, &mut ws.tape)
    }

    /// Log prior density (Gaussian plus barrier) and its gradient.
    /// Parameters where the barrier's model output is undefined get `-inf`
    /// and a zero gradient.
    pub fn log_prior(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        let mut grad = vec![0.0; self.dim()];
        let mut ws = Workspace::default();
        let lp = self.log_prior_into(theta, &mut grad, &mut ws);
        Ok((lp, grad))
    }

    fn log_prior_into(&self, theta: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
        let n = self.dim();
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.prior_precision[(i, j)] * (theta[j] - self.prior_mean[j]);
            }
            quad += (theta[i] - self.prior_mean[i]) * row;
            grad[i] = -row;
        }
        let mut lp = -0.5 * quad - 0.5 * self.log_det_cov - 0.5 * n as f64 * LN_2PI;
        if let Some(b) = &self.barrier {
            ws.grad.resize(n, 0.0);
            let mut g = core::mem::take(&mut ws.grad);
            match self.predict_grad_theta(&b.anchor, theta, &mut g, ws) {
                Ok(v) => {
                    let s2 = b.scale * b.scale;
                    lp -= 0.5 * v * v / s2;
                    for (gi, dv) in grad.iter_mut().zip(&g) {
                        *gi -= v / s2 * dv;
                    }
                }
                Err(_) => {
                    ws.grad = g;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return f64::NEG_INFINITY;
                }
            }
            ws.grad = g;
        }
        lp
    }

    /// `log_prior(theta) + sum_t log phi(y_t; m(x_t, theta), sigma2)` and its
    /// gradient. Any observation outside the expression domain gives `-inf`
    /// with a zero gradient. Terms are summed in a fixed order of the
    /// observations, so the result does not depend on how `data` is ordered.
    pub fn log_posterior(&self, theta: &[f64], data: &[Observation], noise: NoiseModel) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        for obs in data {
            if obs.x.len() != self.n_inputs() {
                return Err(Error::DimensionMismatch { expected: self.n_inputs(), got: obs.x.len() });
            }
        }
        let data = canonical_order(data);
        let mut grad = vec![0.0; self.dim()];
        let mut ws = Workspace::default();
        let lp = self.log_posterior_into(theta, &data, noise, &mut grad, &mut ws);
        Ok((lp, grad))
    }

    pub(crate) fn log_posterior_into(
        &self,
        theta: &[f64],
        data: &[Observation],
        noise: NoiseModel,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let mut lp = self.log_prior_into(theta, grad, ws);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let s2 = noise.sigma2();
        let norm = -0.5 * (LN_2PI + ln(s2));
        ws.grad.resize(self.dim(), 0.0);
        let mut g = core::mem::take(&mut ws.grad);
        for obs in data {
            match self.predict_grad_theta(&obs.x, theta, &mut g, ws) {
                Ok(v) => {
                    let r = obs.y - v;
                    lp += norm - 0.5 * r * r / s2;
                    for (gi, dv) in grad.iter_mut().zip(&g) {
                        *gi += r / s2 * dv;
                    }
                }
                Err(_) => {
                    ws.grad = g;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return f64::NEG_INFINITY;
                }
            }
        }
        ws.grad = g;
        lp
    }

    /// The log-posterior as an HMC target.
    pub fn posterior_target<'a>(&'a self, data: &[Observation], noise: NoiseModel) -> PosteriorTarget<'a> {
        PosteriorTarget { spec: self, data: canonical_order(data), noise, ws: Workspace::default() }
    }
}

/// Scratch buffers for repeated model evaluation.
#[derive(Debug, Default, Clone)]
pub(crate) struct Workspace {
    slots: Vec<f64>,
    wrt: Vec<usize>,
    grad: Vec<f64>,
    tape: TapeScratch,
}

/// Observations sorted by `(x, y)`; floating-point sums over this order are
/// invariant under permutations of the history.
fn canonical_order(data: &[Observation]) -> Vec<Observation> {
    let mut v = data.to_vec();
    v.sort_by(|a, b| {
        a.x.iter()
            .zip(&b.x)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.y.total_cmp(&b.y))
    });
    v
}

pub struct PosteriorTarget<'a> {
    spec: &'a ModelSpec,
    data: Vec<Observation>,
    noise: NoiseModel,
    ws: Workspace,
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> f64 {
        self.spec.log_posterior_into(q, &self.data, self.noise, grad, &mut self.ws)
    }
}

/// `log (1/|S|) sum_theta phi(y; m(x, theta), sigma2)`. Samples where the
/// model is undefined at `x` contribute zero but still count in `|S|`.
pub fn log_marginal_likelihood(
    spec: &ModelSpec,
    samples: &SampleSet,
    x: &[f64],
    y: f64,
    noise: NoiseModel,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if samples.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: samples.dim() });
    }
    if x.len() != spec.n_inputs() {
        return Err(Error::DimensionMismatch { expected: spec.n_inputs(), got: x.len() });
    }
    let mut ws = Workspace::default();
    let mut terms = Vec::with_capacity(samples.len());
    let mut invalid = 0usize;
    for theta in samples.iter() {
        match spec.predict_with(x, theta, &mut ws) {
            Ok(mean) => terms.push(gauss_logpdf(y, mean, noise.sigma2())),
            Err(_) => invalid += 1,
        }
    }
    if terms.is_empty() {
        return Err(Error::ModelUndefined);
    }
    if invalid > 0 {
        log::debug!("model {}: {invalid} of {} samples undefined at x", spec.name(), samples.len());
    }
    Ok(log_sum_exp(terms.iter().copied()) - ln(samples.len() as f64))
}

/// Monte Carlo estimate of `p(y | m, x)`.
pub fn marginal_likelihood(spec: &ModelSpec, samples: &SampleSet, x: &[f64], y: f64, noise: NoiseModel) -> Result<f64> {
    Ok(crate::math::exp(log_marginal_likelihood(spec, samples, x, y, noise)?))
}

/// Ground truth: a model form with fixed parameters.
#[derive(Debug, Clone)]
pub struct Truth {
    pub model: ModelSpec,
    pub theta: Vec<f64>,
}

/// `m_true(x, theta_true) + eps` with `eps ~ N(0, sigma2)` drawn from `rng`.
/// `sigma2 == 0` gives the noiseless response.
pub fn simulate_response<R: Rng + ?Sized>(truth: &Truth, x: &[f64], sigma2: f64, rng: &mut R) -> Result<f64> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("sigma2 must be non-negative, got {sigma2}")));
    }
    let v = truth.model.predict(x, &truth.theta)?;
    let z: f64 = StandardNormal.sample(rng);
    if sigma2 == 0.0 {
        return Ok(v);
    }
    Ok(v + sqrt(sigma2) * z)
}
