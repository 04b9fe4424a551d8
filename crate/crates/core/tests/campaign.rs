//! A small discovery campaign end to end: the loop should single out the
//! model that generated the data.

use symdisc_core::criteria::CriterionKind;
use symdisc_core::designer::{Campaign, DesignBox, DesignProblem, OptimizerConfig};
use symdisc_core::hmc::HmcConfig;
use symdisc_core::model::{simulate_response, ModelSpec, NoiseModel, Truth};
use symdisc_core::predictive::Backend;
use symdisc_core::rng::stream;

fn model(name: &str, expr: &str) -> ModelSpec {
    let n = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    ModelSpec::new(name, expr, n(&["x"]), n(&["a", "b"]), vec![1.0, 1.0], vec![1.0, 0.0, 0.0, 1.0], None).unwrap()
}

fn run(criterion: CriterionKind) -> Vec<f64> {
    let models = vec![model("linear", "a + b * x"), model("quadratic", "a + b * x ^ 2"), model("power", "a * x ^ b")];
    let truth = Truth { model: models[1].clone(), theta: vec![0.5, 1.5] };
    let problem = DesignProblem {
        models,
        noise: NoiseModel::new(0.01).unwrap(),
        design_box: DesignBox::new(vec![0.1], vec![3.0]).unwrap(),
        criterion,
        backend: Backend::conv(),
        optimizer: OptimizerConfig { n_starts: 4, seed: 3, ..OptimizerConfig::default() },
        hmc: HmcConfig { n_samples: 400, n_warmup: 200, seed: 5, ..HmcConfig::default() },
    };
    let mut c = Campaign::new(problem).unwrap();
    let mut oracle = stream(6);
    for _ in 0..6 {
        let p = c.propose().unwrap();
        assert!(c.problem().design_box.contains(&p.x));
        let y = simulate_response(&truth, &p.x, 0.01, &mut oracle).unwrap();
        let b = c.observe(y).unwrap();
        assert!((b.model_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(c.belief().round, 6);
    assert_eq!(c.belief().history.len(), 6);
    c.belief().model_probs.clone()
}

#[test]
fn response_entropy_campaign_finds_the_true_model() {
    let p = run(CriterionKind::ResponseEntropy);
    assert!(p[1] > 0.95, "{p:?}");
}

#[test]
fn jensen_shannon_campaign_finds_the_true_model() {
    let p = run(CriterionKind::JensenShannon);
    assert!(p[1] > 0.95, "{p:?}");
}
