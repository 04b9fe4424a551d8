//! Design-point optimization and the sequential update loop.
//!
//! A round has two phases. [`Campaign::propose`] maximizes the chosen
//! criterion over the design box; [`Campaign::observe`] records the measured
//! response, reweights the models by their marginal likelihoods and re-runs
//! HMC for every model against the full history.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::criteria::{score_mixture, score_mixture_with_grad, CriterionKind};
use crate::hmc::{self, HmcConfig, LogDensity, SampleSet};
use crate::math::{exp, ln, log_sum_exp, sqrt};
use crate::model::{log_marginal_likelihood, ModelSpec, NoiseModel, Observation};
use crate::predictive::{build_mixture, Backend};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

/// Scores closer than this are treated as equal when comparing starts.
pub const SCORE_TIE_TOL: f64 = 1e-9;

/// Axis-aligned design space.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("design box has no coordinates".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "design box coordinate {i}: need finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    /// Coordinatewise clamp into the box.
    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    fn max_width(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).fold(0.0, f64::max)
    }

    /// `n` Latin-hypercube points, row-major.
    pub fn latin_hypercube<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut pts = vec![vec![0.0; d]; n];
        let mut strata: Vec<usize> = (0..n).collect();
        for j in 0..d {
            strata.shuffle(rng);
            let (l, u) = (self.lower[j], self.upper[j]);
            for (p, s) in pts.iter_mut().zip(&strata) {
                let t = (*s as f64 + rng.random::<f64>()) / n as f64;
                p[j] = l + (u - l) * t;
            }
        }
        pts
    }
}

/// Current beliefs: `p(m)`, the per-model parameter draws and the data they
/// were conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub model_probs: Vec<f64>,
    /// Normalized `ln p(m)`. Updates accumulate here so that a model whose
    /// probability underflows `f64` can still recover on later evidence.
    pub log_model_probs: Vec<f64>,
    pub sample_sets: Vec<SampleSet>,
    pub history: Vec<Observation>,
    /// Completed rounds.
    pub round: usize,
    /// `stale[m]` is set when the last refresh of model `m` failed and its
    /// samples still reflect an older history.
    pub stale: Vec<bool>,
}

impl BeliefState {
    /// A belief with no history. `model_probs` must be non-negative.
    pub fn new(model_probs: Vec<f64>, sample_sets: Vec<SampleSet>) -> Self {
        let n = model_probs.len();
        let log_model_probs = model_probs.iter().map(|p| if *p > 0.0 { ln(*p) } else { f64::NEG_INFINITY }).collect();
        Self { model_probs, log_model_probs, sample_sets, history: Vec::new(), round: 0, stale: vec![false; n] }
    }

    pub fn is_stale(&self) -> bool {
        self.stale.iter().any(|s| *s)
    }

    /// Trace-over-dimension of each model's sample covariance.
    pub fn per_param_variances(&self) -> Vec<f64> {
        self.sample_sets.iter().map(SampleSet::per_param_variance).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    /// Stop when the projected-gradient step `|P(x + g) - x|` drops below this.
    pub grad_tol: f64,
    /// Stop when an accepted step gains less than `f_tol * (1 + |f|)`.
    pub f_tol: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { n_starts: 8, max_iters: 200, grad_tol: 1e-6, f_tol: 1e-10, armijo_c: 1e-4, shrink: 0.5, max_backtracks: 40, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::InvalidArgument("optimizer n_starts must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument("optimizer shrink must lie in (0, 1)".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidArgument("optimizer armijo_c must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything fixed over a campaign.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub models: Vec<ModelSpec>,
    pub noise: NoiseModel,
    pub design_box: DesignBox,
    pub criterion: CriterionKind,
    pub backend: Backend,
    pub optimizer: OptimizerConfig,
    pub hmc: HmcConfig,
}

impl DesignProblem {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("at least one candidate model is required".into()));
        }
        for m in &self.models {
            if m.n_inputs() != self.design_box.dim() {
                return Err(Error::DimensionMismatch { expected: self.design_box.dim(), got: m.n_inputs() });
            }
        }
        self.criterion.validate()?;
        self.optimizer.validate()?;
        self.hmc.validate()
    }

    pub fn score_at(&self, belief: &BeliefState, x: &[f64]) -> Result<f64> {
        let mv = build_mixture(&self.models, belief, x, self.noise, false)?;
        score_mixture(&self.criterion, &mv, &self.backend)
    }

    pub fn score_grad_at(&self, belief: &BeliefState, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mv = build_mixture(&self.models, belief, x, self.noise, true)?;
        score_mixture_with_grad(&self.criterion, &mv, &self.backend)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub score: f64,
    pub round: usize,
}

fn better(a: (&[f64], f64), b: (&[f64], f64)) -> bool {
    if a.1 > b.1 + SCORE_TIE_TOL {
        return true;
    }
    if a.1 < b.1 - SCORE_TIE_TOL {
        return false;
    }
    a.0.partial_cmp(b.0) == Some(core::cmp::Ordering::Less)
}

fn ascend<F>(f: &mut F, bx: &DesignBox, start: Vec<f64>, cfg: &OptimizerConfig) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = start;
    bx.project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::OptimizationFailed { starts: 1, last: "non-finite score at start".to_string() });
    }
    let d = x.len();
    let mut trial = vec![0.0; d];
    let mut step = f64::NAN;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut evals = 1usize;
    let mut iters = 0usize;
    for _ in 0..cfg.max_iters {
        iters += 1;
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        trial.copy_from_slice(&x);
        for (t, gi) in trial.iter_mut().zip(&g) {
            *t += gi;
        }
        bx.project(&mut trial);
        let pg = sqrt(trial.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        if pg < cfg.grad_tol {
            break;
        }
        let gnorm = sqrt(g.iter().map(|v| v * v).sum::<f64>());
        // Trial steps move at most a quarter of the widest box side. After
        // the first iteration the trial step is the Barzilai-Borwein ratio
        // of the last displacement and gradient change.
        let cap = 0.25 * bx.max_width() / gnorm;
        step = match &prev {
            None => cap,
            Some((dx, dg)) => {
                let sy: f64 = dx.iter().zip(dg).map(|(a, b)| a * b).sum();
                let ss: f64 = dx.iter().map(|a| a * a).sum();
                if sy < 0.0 {
                    (ss / -sy).min(cap)
                } else {
                    (2.0 * step).min(cap)
                }
            }
        };
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi + step * gi;
            }
            bx.project(&mut trial);
            let dir: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| (t - xi) * gi).sum();
            if dir <= 0.0 {
                break;
            }
            evals += 1;
            match f(&trial) {
                Ok((ft, gt)) if ft.is_finite() && ft >= fx + cfg.armijo_c * dir => {
                    accepted = Some((ft, gt));
                    break;
                }
                _ => step *= cfg.shrink,
            }
        }
        match accepted {
            Some((ft, gt)) => {
                let gain = ft - fx;
                let dx = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let dg = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
                prev = Some((dx, dg));
                x.copy_from_slice(&trial);
                fx = ft;
                g = gt;
                if gain <= cfg.f_tol * (1.0 + fx.abs()) {
                    break;
                }
            }
            None => break,
        }
    }
    log::debug!("ascent: {iters} iterations, {evals} evaluations, score {fx}");
    Ok((x, fx))
}

/// Multi-start projected gradient ascent of `f` (returning score and
/// gradient) over `bx`. Ties within [`SCORE_TIE_TOL`] go to the
/// lexicographically smallest point.
pub fn maximize_in_box<F>(mut f: F, bx: &DesignBox, cfg: &OptimizerConfig) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut rng = stream(cfg.seed);
    let starts = bx.latin_hypercube(cfg.n_starts, &mut rng);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut last_err = None;
    for s in starts {
        match ascend(&mut f, bx, s, cfg) {
            Ok((x, v)) => {
                if best.as_ref().is_none_or(|(bx_, bv)| better((&x, v), (bx_, *bv))) {
                    best = Some((x, v));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| Error::OptimizationFailed {
        starts: cfg.n_starts,
        last: last_err.map_or_else(|| "no start produced a finite score".to_string(), |e| e.to_string()),
    })
}

/// Maximizes the problem's criterion for the current belief.
pub fn optimize_design(problem: &DesignProblem, belief: &BeliefState) -> Result<Proposal> {
    let mut cfg = problem.optimizer.clone();
    cfg.seed = derive_seed(cfg.seed, belief.round as u64, 0);
    let (x, score) = maximize_in_box(|x| problem.score_grad_at(belief, x), &problem.design_box, &cfg)?;
    Ok(Proposal { x, score, round: belief.round })
}

/// Normalized log model probabilities after observing `y` at `x`:
/// `ln p(m) + ln p(y|m,x)` minus its log-sum-exp. When no model assigns the
/// observation positive likelihood the previous values are kept.
pub fn update_log_model_probs(
    models: &[ModelSpec],
    belief: &BeliefState,
    x: &[f64],
    y: f64,
    noise: NoiseModel,
) -> Result<Vec<f64>> {
    if models.len() != belief.log_model_probs.len() || models.len() != belief.sample_sets.len() {
        return Err(Error::DimensionMismatch { expected: models.len(), got: belief.log_model_probs.len() });
    }
    let mut logs = Vec::with_capacity(models.len());
    for ((spec, samples), lp) in models.iter().zip(&belief.sample_sets).zip(&belief.log_model_probs) {
        let ll = match log_marginal_likelihood(spec, samples, x, y, noise) {
            Ok(v) => v,
            Err(Error::ModelUndefined) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        logs.push(lp + ll);
    }
    let lse = log_sum_exp(logs.iter().copied());
    if !lse.is_finite() {
        log::warn!("observation y = {y} has zero likelihood under every model; keeping previous probabilities");
        return Ok(belief.log_model_probs.clone());
    }
    Ok(logs.iter().map(|l| l - lse).collect())
}

/// [`update_log_model_probs`] exponentiated.
pub fn update_model_probs(
    models: &[ModelSpec],
    belief: &BeliefState,
    x: &[f64],
    y: f64,
    noise: NoiseModel,
) -> Result<Vec<f64>> {
    update_log_model_probs(models, belief, x, y, noise).map(|l| probs_from_logs(&l))
}

fn probs_from_logs(logs: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = logs.iter().map(|l| exp(*l)).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Normalized `exp(logs)`, or `None` when every entry is `-inf` or NaN.
pub fn normalize_log_weights(logs: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(logs.iter().copied());
    if !lse.is_finite() {
        return None;
    }
    let mut out: Vec<f64> = logs.iter().map(|l| exp(l - lse)).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    Some(out)
}

/// Picks a chain start: the first candidate at which the posterior and its
/// gradient are finite.
fn chain_init<T: LogDensity>(target: &mut T, candidates: &[&[f64]]) -> Option<Vec<f64>> {
    let mut g = vec![0.0; target.dim()];
    candidates
        .iter()
        .find(|c| target.log_density_grad(c, &mut g).is_finite() && g.iter().all(|v| v.is_finite()))
        .map(|c| c.to_vec())
}

fn sample_model(
    spec: &ModelSpec,
    history: &[Observation],
    noise: NoiseModel,
    hmc_cfg: &HmcConfig,
    previous: Option<&SampleSet>,
) -> Result<SampleSet> {
    let mut target = spec.posterior_target(history, noise);
    let mut candidates: Vec<&[f64]> = Vec::new();
    if let Some(prev) = previous {
        candidates.push(prev.mean());
    }
    candidates.push(spec.prior_mean());
    if let Some(prev) = previous {
        candidates.extend(prev.iter().take(16));
    }
    let init = chain_init(&mut target, &candidates).ok_or(Error::InvalidInit)?;
    hmc::sample(&mut target, &init, hmc_cfg)
}

/// Prior belief: uniform `p(m)` and HMC draws from each prior (with barrier).
pub fn initial_belief(problem: &DesignProblem) -> Result<BeliefState> {
    problem.validate()?;
    let n = problem.models.len();
    let mut sample_sets = Vec::with_capacity(n);
    for (i, spec) in problem.models.iter().enumerate() {
        let mut cfg = problem.hmc.clone();
        cfg.seed = derive_seed(cfg.seed, 0, i as u64);
        sample_sets.push(sample_model(spec, &[], problem.noise, &cfg, None)?);
    }
    Ok(BeliefState::new(vec![1.0 / n as f64; n], sample_sets))
}

/// Re-samples every model's parameter posterior over the full history,
/// starting each chain at its previous sample mean. A model whose chain
/// fails keeps its old samples and is flagged stale.
pub fn refresh_samples(belief: &BeliefState, problem: &DesignProblem) -> BeliefState {
    let mut out = belief.clone();
    for (i, spec) in problem.models.iter().enumerate() {
        let mut cfg = problem.hmc.clone();
        cfg.seed = derive_seed(cfg.seed, belief.history.len() as u64, i as u64);
        match sample_model(spec, &belief.history, problem.noise, &cfg, Some(&belief.sample_sets[i])) {
            Ok(s) => {
                out.sample_sets[i] = s;
                out.stale[i] = false;
            }
            Err(e) => {
                log::warn!("model {}: sample refresh failed ({e}); keeping previous samples", spec.name());
                out.stale[i] = true;
            }
        }
    }
    out
}

/// A sequential design campaign: alternating proposals and observations.
#[derive(Debug, Clone)]
pub struct Campaign {
    problem: DesignProblem,
    belief: BeliefState,
    pending: Option<Proposal>,
}

impl Campaign {
    pub fn new(problem: DesignProblem) -> Result<Self> {
        let belief = initial_belief(&problem)?;
        Ok(Self { problem, belief, pending: None })
    }

    pub fn from_parts(problem: DesignProblem, belief: BeliefState) -> Self {
        Self { problem, belief, pending: None }
    }

    pub fn problem(&self) -> &DesignProblem {
        &self.problem
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn pending(&self) -> Option<&Proposal> {
        self.pending.as_ref()
    }

    /// Reinstates a proposal recorded earlier (event-log replay), without
    /// re-running the optimizer.
    pub fn restore_pending(&mut self, proposal: Proposal) -> Result<()> {
        if !self.problem.design_box.contains(&proposal.x) {
            return Err(Error::OutsideBox);
        }
        self.pending = Some(proposal);
        Ok(())
    }

    /// Phase A. Repeated calls before an observation return the cached
    /// proposal.
    pub fn propose(&mut self) -> Result<Proposal> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let p = optimize_design(&self.problem, &self.belief)?;
        self.pending = Some(p.clone());
        Ok(p)
    }

    /// Phase B: ingest the response to the pending proposal.
    pub fn observe(&mut self, y: f64) -> Result<&BeliefState> {
        if !y.is_finite() {
            return Err(Error::NonFiniteResponse(y));
        }
        let x = self.pending.as_ref().ok_or(Error::NoPendingProposal)?.x.clone();
        self.ingest(x, y)?;
        self.pending = None;
        Ok(&self.belief)
    }

    /// Completes a round at an arbitrary design point inside the box,
    /// bypassing the optimizer. Clears any pending proposal.
    pub fn ingest(&mut self, x: Vec<f64>, y: f64) -> Result<&BeliefState> {
        if !y.is_finite() {
            return Err(Error::NonFiniteResponse(y));
        }
        if !self.problem.design_box.contains(&x) {
            return Err(Error::OutsideBox);
        }
        let logs = update_log_model_probs(&self.problem.models, &self.belief, &x, y, self.problem.noise)?;
        let mut next = self.belief.clone();
        next.model_probs = probs_from_logs(&logs);
        next.log_model_probs = logs;
        next.history.push(Observation { x, y, round_index: self.belief.round });
        let mut next = refresh_samples(&next, &self.problem);
        next.round += 1;
        self.belief = next;
        self.pending = None;
        Ok(&self.belief)
    }
}
