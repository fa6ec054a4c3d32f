//! Seeded multi-repetition training runs on the pendulum.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::env::{EnvError, Mdp, Pendulum};
use crate::mcts::{advance_root, root_distribution, run_search, SearchError, StateNode};
use crate::net::{NetError, NetworkParams, RmsProp};
use crate::training::{epochs_for, make_entry, train_after_episode, ReplayBuffer, TrainConfig, TrainError};

/// Environment variable capping the number of repetitions run at once.
pub const THREADS_VAR: &str = "A0C_THREADS";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("search: {0}")]
    Search(#[from] SearchError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub episode: usize,
    /// Cumulative real environment steps at the end of the episode.
    pub real_steps: u64,
    /// `real_steps * n_trace`.
    pub accounted_steps: u64,
    /// Sum of scaled rewards over the episode.
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub value_loss: f64,
    pub wall_s: f64,
}

/// Records of one repetition; `failure` holds the diagnostic if it aborted.
#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub rep: usize,
    pub records: Vec<RunRecord>,
    pub failure: Option<String>,
}

/// Parallelism for `repetitions` runs, honoring `A0C_THREADS`.
pub fn thread_count(repetitions: usize) -> usize {
    let cap = std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(repetitions).max(1)
}

/// Runs repetition `rep` with seed `cfg.seed + rep`.
pub fn run_repetition(cfg: &Config, rep: usize) -> RepOutcome {
    let mut records = Vec::new();
    let failure = run_inner(cfg, rep, &mut records).err().map(|e| {
        let episode = records.len();
        format!("repetition {rep} aborted in episode {episode}: {e}")
    });
    RepOutcome { rep, records, failure }
}

fn run_inner(cfg: &Config, rep: usize, records: &mut Vec<RunRecord>) -> Result<(), RunError> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env = Pendulum::new(cfg.horizon, cfg.c_b);
    let mut net = NetworkParams::init_with(seed, env.obs_dim(), &cfg.hidden(), env.action_dim())?;
    let mut opt = RmsProp::new(&net, cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let search = cfg.search();
    let train = TrainConfig {
        loss: cfg.loss(),
        batch_size: cfg.batch,
        epochs: epochs_for(cfg.n_trace, cfg.c_e),
    };
    let n_trace = cfg.n_trace as u64;
    let start = Instant::now();
    let mut real_steps = 0u64;

    for episode in 0.. {
        let out_of_steps = cfg.budget_steps > 0 && real_steps * n_trace >= cfg.budget_steps;
        let out_of_time =
            cfg.budget_seconds > 0.0 && start.elapsed().as_secs_f64() >= cfg.budget_seconds;
        if out_of_steps || out_of_time {
            break;
        }

        let mut root = StateNode::root(&env, env.reset(rng.random()), &net)?;
        let mut episode_return = 0.0;
        while !root.terminal {
            let result = run_search(&mut root, &env, &net, cfg.n_trace, &search, &mut rng)?;
            buffer.push(make_entry(&result, root.obs.clone(), cfg.c_b));
            let action = root_distribution(&result, &mut rng)?;
            episode_return += env.step(&root.env_state, &action)?.reward;
            root = advance_root(root, &action)?;
            real_steps += 1;
        }

        let stats = train_after_episode(&mut net, &mut opt, &buffer, &train, &mut rng)?;
        if let Some(name) = net.first_non_finite() {
            return Err(NetError::NonFiniteParameter(name).into());
        }
        records.push(RunRecord {
            rep,
            episode,
            real_steps,
            accounted_steps: real_steps * n_trace,
            episode_return,
            policy_loss: stats.policy,
            entropy: stats.entropy,
            value_loss: stats.value,
            wall_s: if cfg.log_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(())
}

/// Runs every repetition, at most `thread_count` at a time. Results are in
/// repetition order regardless of scheduling.
pub fn run_experiment(cfg: &Config) -> Result<Vec<RepOutcome>, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg.repetitions))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| run_repetition(cfg, rep))
            .collect()
    }))
}
