#![allow(dead_code)]

use serde_json::{json, Value};

/// A cheap one-input problem: a line against a quadratic.
pub fn small_config(with_truth: bool) -> Value {
    let mut v = json!({
        "inputs": ["x"],
        "models": [
            {
                "name": "line",
                "expression": "a + b * x",
                "param_names": ["a", "b"],
                "prior_mean": [0.0, 1.0],
                "prior_cov": "identity"
            },
            {
                "name": "quadratic",
                "expression": "a + b * x^2",
                "param_names": ["a", "b"],
                "prior_mean": [0.0, 1.0],
                "prior_cov": [[1.0, 0.0], [0.0, 1.0]]
            }
        ],
        "noise_sigma2": 0.01,
        "design_box": { "lower": [-2.0], "upper": [2.0] },
        "rounds": 3,
        "trials": 3,
        "hmc": { "n_samples": 200, "n_warmup": 100, "leapfrog_steps": 10 },
        "optimizer": { "n_starts": 3, "max_iters": 50 },
        "seed": 11
    });
    if with_truth {
        v["truth"] = json!({ "model": "quadratic", "theta_true": [0.5, 1.5] });
    }
    v
}

pub fn small_config_text(with_truth: bool) -> String {
    serde_json::to_string_pretty(&small_config(with_truth)).unwrap()
}
