//! Seeded end-to-end trials against a simulated oracle, and CSV emission.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use symdisc_core::designer::{BeliefState, Campaign, DesignProblem};
use symdisc_core::model::simulate_response;
use symdisc_core::rng::{derive_seed, stream};

use crate::config::Experiment;

/// One completed round of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub model_probs: Vec<f64>,
    /// Per-model trace of the sample covariance divided by the number of
    /// parameters.
    pub variances: Vec<f64>,
    pub score: f64,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub trial: usize,
    pub seed: u64,
    pub input_names: Vec<String>,
    pub model_names: Vec<String>,
    /// Probabilities and variances before the first observation.
    pub initial_probs: Vec<f64>,
    pub initial_variances: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

pub fn trial_seed(exp: &Experiment, trial: usize) -> u64 {
    exp.config.seed.wrapping_add(trial as u64)
}

/// The problem with optimizer and sampler seeds derived from a trial seed.
pub fn seeded_problem(problem: &DesignProblem, seed: u64) -> DesignProblem {
    let mut p = problem.clone();
    p.optimizer.seed = derive_seed(seed, 1, 0);
    p.hmc.seed = derive_seed(seed, 2, 0);
    p
}

/// Runs a single seeded trial of `exp.config.rounds` rounds.
pub fn run_trial(exp: &Experiment, trial: usize) -> Result<TrialTrace, TrialFailure> {
    let fail = |message: String| TrialFailure { trial, message };
    let truth = exp.truth.as_ref().ok_or_else(|| fail("configuration has no truth section".into()))?;
    let seed = trial_seed(exp, trial);
    let mut oracle = stream(derive_seed(seed, 3, 0));
    let mut campaign = Campaign::new(seeded_problem(&exp.problem, seed)).map_err(|e| fail(e.to_string()))?;
    let mut trace = TrialTrace {
        trial,
        seed,
        input_names: exp.config.inputs.clone(),
        model_names: exp.model_names(),
        initial_probs: campaign.belief().model_probs.clone(),
        initial_variances: campaign.belief().per_param_variances(),
        rounds: Vec::with_capacity(exp.config.rounds),
    };
    let sigma2 = exp.problem.noise.sigma2();
    for r in 0..exp.config.rounds {
        let t0 = Instant::now();
        let proposal = campaign.propose().map_err(|e| fail(format!("round {}: {e}", r + 1)))?;
        let y = simulate_response(truth, &proposal.x, sigma2, &mut oracle).map_err(|e| fail(format!("round {}: {e}", r + 1)))?;
        let belief = campaign.observe(y).map_err(|e| fail(format!("round {}: {e}", r + 1)))?;
        trace.rounds.push(record(belief, proposal.x, y, proposal.score, t0.elapsed().as_secs_f64() * 1e3));
        log::info!("trial {trial} round {} p = {:?}", r + 1, belief.model_probs);
    }
    Ok(trace)
}

pub(crate) fn record(belief: &BeliefState, x: Vec<f64>, y: f64, score: f64, millis: f64) -> RoundRecord {
    RoundRecord {
        round: belief.round,
        x,
        y,
        model_probs: belief.model_probs.clone(),
        variances: belief.per_param_variances(),
        score,
        millis,
    }
}

/// Runs every trial (in parallel); results are in trial order.
pub fn run_trials(exp: &Experiment) -> Vec<Result<TrialTrace, TrialFailure>> {
    (0..exp.config.trials).into_par_iter().map(|t| run_trial(exp, t)).collect()
}

/// Column names shared by the per-trial and aggregate files.
pub fn csv_header(input_names: &[String], model_names: &[String]) -> Vec<String> {
    let mut h = vec!["round".to_string()];
    h.extend(input_names.iter().map(|n| format!("x_{n}")));
    h.push("y".into());
    h.extend(model_names.iter().map(|n| format!("p_{n}")));
    h.extend(model_names.iter().map(|n| format!("var_{n}")));
    h.push("score".into());
    h.push("ms".into());
    h
}

fn row_values(r: &RoundRecord) -> Vec<f64> {
    let mut v = r.x.clone();
    v.push(r.y);
    v.extend(&r.model_probs);
    v.extend(&r.variances);
    v.push(r.score);
    v
}

fn write_rows<'a>(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = (usize, Vec<f64>, f64)> + 'a,
    timing: bool,
) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (round, vals, ms) in rows {
        let mut rec = vec![round.to_string()];
        rec.extend(vals.iter().map(f64::to_string));
        rec.push(if timing { format!("{ms:.3}") } else { String::new() });
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Writes `trial_NNN.csv` per trace and `aggregate.csv` with across-trial
/// means per round. The `ms` column is left empty unless `timing` is set,
/// which keeps repeated runs byte-identical.
pub fn emit_results(traces: &[TrialTrace], dir: &Path, timing: bool) -> io::Result<Vec<PathBuf>> {
    let first = traces.first().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no traces to emit"))?;
    fs::create_dir_all(dir)?;
    let header = csv_header(&first.input_names, &first.model_names);
    let mut written = Vec::with_capacity(traces.len() + 1);
    for t in traces {
        let path = dir.join(format!("trial_{:03}.csv", t.trial));
        write_rows(&path, &header, t.rounds.iter().map(|r| (r.round, row_values(r), r.millis)), timing)?;
        written.push(path);
    }
    let n_rounds = traces.iter().map(|t| t.rounds.len()).min().unwrap_or(0);
    let means = (0..n_rounds).map(|i| {
        let rows: Vec<Vec<f64>> = traces.iter().map(|t| row_values(&t.rounds[i])).collect();
        let ms = traces.iter().map(|t| t.rounds[i].millis).sum::<f64>() / traces.len() as f64;
        (traces[0].rounds[i].round, column_means(&rows), ms)
    });
    let path = dir.join("aggregate.csv");
    write_rows(&path, &header, means, timing)?;
    written.push(path);
    Ok(written)
}

/// Arithmetic mean of each column, summed in row order.
pub fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// Mean over traces of a per-round quantity, indexed by round (0 = prior).
pub fn mean_curve(traces: &[TrialTrace], f: impl Fn(&TrialTrace, usize) -> f64) -> Vec<f64> {
    let n_rounds = traces.iter().map(|t| t.rounds.len()).min().unwrap_or(0);
    (0..=n_rounds).map(|r| traces.iter().map(|t| f(t, r)).sum::<f64>() / traces.len() as f64).collect()
}

impl TrialTrace {
    /// Model probabilities after `round` rounds (0 = prior).
    pub fn probs_at(&self, round: usize) -> &[f64] {
        if round == 0 {
            &self.initial_probs
        } else {
            &self.rounds[round - 1].model_probs
        }
    }

    pub fn variances_at(&self, round: usize) -> &[f64] {
        if round == 0 {
            &self.initial_variances
        } else {
            &self.rounds[round - 1].variances
        }
    }
}
