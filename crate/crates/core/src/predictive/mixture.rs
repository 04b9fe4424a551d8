use alloc::vec;
use alloc::vec::Vec;

use crate::designer::BeliefState;
use crate::model::{ModelSpec, NoiseModel, Workspace};
use crate::{Error, Result};

/// One model's share of the predictive mixture at a fixed design point.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelComponents {
    /// Index of the model in the problem's model list.
    pub model: usize,
    /// Current model probability (renormalized over the models present).
    pub weight: f64,
    /// `m(x, theta)` for every valid sample, in sample order.
    pub means: Vec<f64>,
    /// `d m(x, theta) / dx`, `means.len() x n_inputs` row-major; empty when
    /// gradients were not requested.
    pub mean_grads: Vec<f64>,
    pub n_invalid: usize,
}

/// Gaussian mixture `sum_m p(m) (1/|S_m|) sum_theta N(m(x, theta), sigma2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureView {
    pub sigma2: f64,
    pub n_inputs: usize,
    pub models: Vec<ModelComponents>,
}

impl MixtureView {
    /// Mixture from explicit component means, one list per model.
    pub fn from_means(sigma2: f64, models: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let models = models
            .into_iter()
            .enumerate()
            .map(|(i, (weight, means))| ModelComponents { model: i, weight, means, mean_grads: Vec::new(), n_invalid: 0 })
            .collect();
        Self::normalized(sigma2, 0, models)
    }

    /// Like [`MixtureView::from_means`] with per-component mean gradients
    /// (`means.len() x n_inputs` entries per model).
    pub fn from_means_and_grads(sigma2: f64, n_inputs: usize, models: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let models = models
            .into_iter()
            .enumerate()
            .map(|(i, (weight, means, mean_grads))| {
                assert_eq!(mean_grads.len(), means.len() * n_inputs);
                ModelComponents { model: i, weight, means, mean_grads, n_invalid: 0 }
            })
            .collect();
        Self::normalized(sigma2, n_inputs, models)
    }

    fn normalized(sigma2: f64, n_inputs: usize, models: Vec<ModelComponents>) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("sigma2 must be positive, got {sigma2}")));
        }
        let mut models: Vec<_> = models.into_iter().filter(|m| !m.means.is_empty() && m.weight > 0.0).collect();
        let total: f64 = models.iter().map(|m| m.weight).sum();
        if models.is_empty() || !(total > 0.0) {
            return Err(Error::ModelUndefined);
        }
        for m in &mut models {
            m.weight /= total;
        }
        Ok(Self { sigma2, n_inputs, models })
    }

    pub fn sigma(&self) -> f64 {
        crate::math::sqrt(self.sigma2)
    }

    pub fn has_grads(&self) -> bool {
        self.n_inputs > 0 && self.models.iter().all(|m| m.mean_grads.len() == m.means.len() * self.n_inputs)
    }

    pub fn n_components(&self) -> usize {
        self.models.iter().map(|m| m.means.len()).sum()
    }

    /// `(mean, weight)` for every component.
    pub fn components(&self) -> impl Iterator<Item = (f64, f64)> + Clone + '_ {
        self.models.iter().flat_map(|m| {
            let w = m.weight / m.means.len() as f64;
            m.means.iter().map(move |mu| (*mu, w))
        })
    }

    pub fn mean_range(&self) -> (f64, f64) {
        self.components().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (m, _)| (lo.min(m), hi.max(m)))
    }

    /// The mixture restricted to model `k` (by position in `self.models`),
    /// with weight one.
    pub fn single_model(&self, k: usize) -> Self {
        let mut m = self.models[k].clone();
        m.weight = 1.0;
        Self { sigma2: self.sigma2, n_inputs: self.n_inputs, models: vec![m] }
    }

    /// All means shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.models {
            m.means.iter_mut().for_each(|v| *v += delta);
        }
        out
    }
}

/// Evaluates every sample's response mean at `x` (and optionally its
/// x-gradient). Samples where the model is undefined are dropped and the
/// model's remaining samples reweighted; a model with no valid sample left
/// is dropped and the model weights renormalized.
pub fn build_mixture(
    models: &[ModelSpec],
    belief: &BeliefState,
    x: &[f64],
    noise: NoiseModel,
    with_grads: bool,
) -> Result<MixtureView> {
    if models.len() != belief.sample_sets.len() || models.len() != belief.model_probs.len() {
        return Err(Error::DimensionMismatch { expected: models.len(), got: belief.sample_sets.len() });
    }
    let n_inputs = models.first().map_or(0, |m| m.n_inputs());
    if x.len() != n_inputs {
        return Err(Error::DimensionMismatch { expected: n_inputs, got: x.len() });
    }
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; n_inputs];
    let mut out = Vec::with_capacity(models.len());
    for (i, (spec, samples)) in models.iter().zip(&belief.sample_sets).enumerate() {
        if samples.is_empty() {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        let weight = belief.model_probs[i];
        if weight <= 0.0 {
            continue;
        }
        let mut means = Vec::with_capacity(samples.len());
        let mut mean_grads = Vec::with_capacity(if with_grads { samples.len() * n_inputs } else { 0 });
        let mut n_invalid = 0;
        for theta in samples.iter() {
            let r = if with_grads {
                spec.predict_grad_x(x, theta, &mut grad, &mut ws)
            } else {
                spec.predict_with(x, theta, &mut ws)
            };
            match r {
                Ok(v) => {
                    means.push(v);
                    if with_grads {
                        mean_grads.extend_from_slice(&grad);
                    }
                }
                Err(_) => n_invalid += 1,
            }
        }
        if n_invalid > 0 {
            log::debug!("model {}: {n_invalid} of {} components undefined at x", spec.name(), samples.len());
        }
        out.push(ModelComponents { model: i, weight, means, mean_grads, n_invalid });
    }
    MixtureView::normalized(noise.sigma2(), if with_grads { n_inputs } else { 0 }, out)
}
