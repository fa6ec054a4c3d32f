//! Quick numerical and structural checks runnable from the binary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::env::{Action, Bandit, Observation};
use crate::experiment::run_repetition;
use crate::mcts::{root_result, run_search, SearchConfig, StateNode, UniformEvaluator};
use crate::net::NetworkParams;
use crate::policy_dist::{self, BetaPolicyParams};
use crate::training::{total_loss, LossConfig, ReplayEntry};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn density_integrates_to_one(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let p = BetaPolicyParams::new(vec![rng.random_range(1.0..8.0)], vec![rng.random_range(1.0..8.0)])
            .expect("valid");
        let c_b = rng.random_range(0.5..3.0);
        // Midpoint rule on the action interval.
        let n = 200_000;
        let h = 2.0 * c_b / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let a = -c_b + (i as f64 + 0.5) * h;
                policy_dist::log_density(&p, &Action(vec![a]), c_b).exp() * h
            })
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    Check {
        name: "density integrates to one",
        passed: worst < 1e-5,
        detail: format!("max |integral - 1| = {worst:.2e}"),
    }
}

fn loss_gradient_matches_fd(rng: &mut ChaCha8Rng) -> Check {
    let net = NetworkParams::init_with(rng.random(), 3, &[4], 1).expect("shape");
    let entries: Vec<ReplayEntry> = (0..4)
        .map(|_| ReplayEntry {
            obs: Observation((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()),
            support: (0..3)
                .map(|_| (Action(vec![rng.random_range(-1.9..1.9)]), rng.random_range(1..10)))
                .collect(),
            value_target: rng.random_range(-1.0..0.0),
        })
        .collect();
    let batch: Vec<&ReplayEntry> = entries.iter().collect();
    let cfg = LossConfig::default();
    let (_, grads) = total_loss(&net, &batch, &cfg).expect("finite loss");
    let analytic = grads.to_flat();

    // Policy coefficients are constants of the objective, so freeze them at
    // the base parameters before differencing.
    let frozen: Vec<Vec<f64>> = entries
        .iter()
        .map(|e| {
            let p = net.forward_one(&e.obs).expect("forward").policy;
            e.support
                .iter()
                .map(|(a, n)| policy_dist::log_density(&p, a, cfg.c_b) - cfg.tau * (*n as f64).ln())
                .collect()
        })
        .collect();
    let objective = |probe: &NetworkParams| {
        let mut total = 0.0;
        for (e, coefs) in entries.iter().zip(&frozen) {
            let out = probe.forward_one(&e.obs).expect("forward");
            let surrogate: f64 = e
                .support
                .iter()
                .zip(coefs)
                .map(|((a, _), c)| c * policy_dist::log_density(&out.policy, a, cfg.c_b))
                .sum::<f64>()
                / coefs.len() as f64;
            let v = out.value - e.value_target;
            total += surrogate - cfg.lambda * policy_dist::entropy(&out.policy) + v * v;
        }
        total / entries.len() as f64
    };

    let theta = net.to_flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        let mut at = |d: f64| {
            let mut t = theta.clone();
            t[i] += d;
            probe.set_flat(&t);
            objective(&probe)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6));
    }
    Check {
        name: "loss gradient matches finite differences",
        passed: worst < 1e-4,
        detail: format!("max relative error = {worst:.2e}"),
    }
}

fn bandit_search_finds_optimum(rng: &mut ChaCha8Rng) -> Check {
    let bandit = Bandit::default();
    let eval = UniformEvaluator { n_a: 1 };
    let cfg = SearchConfig {
        gamma: 0.0,
        ..SearchConfig::default()
    };
    let runs = 20;
    let mut hits = 0;
    for _ in 0..runs {
        let mut root = StateNode::root(&bandit, false, &eval).expect("root");
        if run_search(&mut root, &bandit, &eval, 2000, &cfg, rng).is_ok() {
            let best = root_result(&root).most_visited().0[0];
            if (best - bandit.optimum).abs() <= 0.15 {
                hits += 1;
            }
        }
    }
    Check {
        name: "bandit search concentrates near the optimum",
        passed: hits >= 18,
        detail: format!("{hits}/{runs} runs within 0.15"),
    }
}

fn training_is_deterministic() -> Check {
    let cfg = Config {
        n_trace: 2,
        horizon: 20,
        budget_steps: 80,
        hidden_layers: 1,
        hidden_units: 16,
        ..Config::default()
    };
    let a = run_repetition(&cfg, 0);
    let b = run_repetition(&cfg, 0);
    let ok = a.failure.is_none() && !a.records.is_empty() && a.records == b.records;
    Check {
        name: "training run is deterministic",
        passed: ok,
        detail: format!("{} episodes", a.records.len()),
    }
}

pub fn run_all(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        density_integrates_to_one(&mut rng),
        loss_gradient_matches_fd(&mut rng),
        bandit_search_finds_optimum(&mut rng),
        training_is_deterministic(),
    ]
}
