//! Continuous-action tree search with progressive widening.
//!
//! New child actions are only ever introduced by sampling the policy
//! network; selection among existing children uses `Q + c_puct sqrt(n(s)) /
//! (n(s,a) + 1)` with no prior multiplier. Leaves are scored by the value
//! network instead of a roll-out.
//!
//! Visit bookkeeping: `n(s)` in the selection and widening rules is the sum
//! of the node's edge counts. The stored [`StateNode::n`] additionally counts
//! the trace that created the node, so for every non-root node
//! `node.n == 1 + sum(edge.n)` and `node.n` equals the count of the edge
//! leading to it.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::env::{Action, EnvError, Mdp, Observation};
use crate::net::{ForwardOutput, NetError, NetworkParams};
use crate::policy_dist::{self, BetaPolicyParams};

/// Proposals landing on the box boundary are redrawn this many times...
const MAX_RESAMPLES: usize = 10;
/// ...before being pulled inside by this margin.
pub const BOUNDARY_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("cannot search from a terminal root")]
    TerminalRoot,
    #[error("trace budget must be at least 1")]
    ZeroBudget,
    #[error("select_edge called on a node without edges")]
    NoEdges,
    #[error("edge is already expanded")]
    AlreadyExpanded,
    #[error("no root edge matches action {0:?}")]
    NoMatchingEdge(Vec<f64>),
    #[error("chosen root edge has no child")]
    Unexpanded,
    #[error("root distribution has no visits")]
    EmptyDistribution,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Supplies the policy prior and leaf value for an observation.
pub trait Evaluator {
    fn evaluate(&self, obs: &Observation) -> Result<ForwardOutput, NetError>;
}

impl Evaluator for NetworkParams {
    fn evaluate(&self, obs: &Observation) -> Result<ForwardOutput, NetError> {
        self.forward_one(obs)
    }
}

/// Uniform proposals and zero leaf values: plain progressive-widening UCT.
#[derive(Debug, Clone, Copy)]
pub struct UniformEvaluator {
    pub n_a: usize,
}

impl Evaluator for UniformEvaluator {
    fn evaluate(&self, _obs: &Observation) -> Result<ForwardOutput, NetError> {
        Ok(ForwardOutput {
            policy: BetaPolicyParams::uniform(self.n_a),
            value: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub c_puct: f64,
    pub c_pw: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_puct: 0.05,
            c_pw: 1.0,
            kappa: 0.5,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActionEdge<S> {
    pub action: Action,
    pub n: u64,
    /// Cumulative return through this edge.
    pub w: f64,
    pub q: f64,
    /// Immediate reward `r(s, a)`, set on expansion.
    pub reward: f64,
    pub child: Option<Box<StateNode<S>>>,
}

impl<S> ActionEdge<S> {
    fn new(action: Action) -> Self {
        Self {
            action,
            n: 0,
            w: 0.0,
            q: 0.0,
            reward: 0.0,
            child: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateNode<S> {
    pub env_state: S,
    pub obs: Observation,
    pub n: u64,
    pub edges: Vec<ActionEdge<S>>,
    pub terminal: bool,
    /// Network policy at this state, evaluated once when the node is created.
    /// `None` for terminal nodes.
    pub prior: Option<BetaPolicyParams>,
}

impl<S: Clone> StateNode<S> {
    /// Fresh root for `state`; evaluates the prior if the state is non-terminal.
    pub fn root<M, E>(mdp: &M, state: S, evaluator: &E) -> Result<Self, SearchError>
    where
        M: Mdp<State = S>,
        E: Evaluator + ?Sized,
    {
        Ok(Self::create(mdp, state, evaluator)?.0)
    }

    fn create<M, E>(mdp: &M, state: S, evaluator: &E) -> Result<(Self, f64), SearchError>
    where
        M: Mdp<State = S>,
        E: Evaluator + ?Sized,
    {
        let obs = mdp.observe(&state);
        let terminal = mdp.is_terminal(&state);
        let (prior, value) = if terminal {
            (None, 0.0)
        } else {
            let out = evaluator.evaluate(&obs)?;
            (Some(out.policy), out.value)
        };
        let node = Self {
            env_state: state,
            obs,
            n: 0,
            edges: Vec::new(),
            terminal,
            prior,
        };
        Ok((node, value))
    }
}

impl<S> StateNode<S> {
    /// `n(s) = sum_a n(s, a)`.
    pub fn edge_visits(&self) -> u64 {
        self.edges.iter().map(|e| e.n).sum()
    }

    /// Depth-limited text rendering of the subtree.
    pub fn dump(&self, max_depth: usize) -> String {
        let mut out = String::new();
        self.dump_into(&mut out, 0, max_depth);
        out
    }

    fn dump_into(&self, out: &mut String, depth: usize, max_depth: usize) {
        let pad = "  ".repeat(2 * depth);
        let _ = writeln!(
            out,
            "{pad}node n={} edges={}{}",
            self.n,
            self.edges.len(),
            if self.terminal { " terminal" } else { "" }
        );
        if depth >= max_depth {
            return;
        }
        for (i, e) in self.edges.iter().enumerate() {
            let _ = writeln!(
                out,
                "{pad}  [{i}] a={:?} n={} W={:.6} Q={:.6} r={:.6}",
                e.action.values(),
                e.n,
                e.w,
                e.q,
                e.reward
            );
            if let Some(child) = &e.child {
                child.dump_into(out, depth + 1, max_depth);
            }
        }
    }
}

/// Root statistics after a search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// `(A_0, N_0)`.
    pub root_actions: Vec<(Action, u64)>,
    pub root_q: Vec<f64>,
    /// `max_a Q(s_0, a)`.
    pub value_target: f64,
}

impl SearchResult {
    pub fn total_count(&self) -> u64 {
        self.root_actions.iter().map(|(_, n)| n).sum()
    }

    /// Action with the highest count, lowest index on ties.
    pub fn most_visited(&self) -> &Action {
        let mut best = 0;
        for (i, (_, n)) in self.root_actions.iter().enumerate() {
            if *n > self.root_actions[best].1 {
                best = i;
            }
        }
        &self.root_actions[best].0
    }

    /// Count-weighted mean of the root Q values.
    pub fn mean_q(&self) -> f64 {
        let total = self.total_count() as f64;
        self.root_actions
            .iter()
            .zip(&self.root_q)
            .map(|((_, n), q)| *n as f64 * q)
            .sum::<f64>()
            / total
    }
}

/// Runs `budget` select/expand/evaluate/backup traces from `root`.
pub fn run_search<M, E, R>(
    root: &mut StateNode<M::State>,
    mdp: &M,
    evaluator: &E,
    budget: usize,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError>
where
    M: Mdp,
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    if root.terminal {
        return Err(SearchError::TerminalRoot);
    }
    if budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let mut path = Vec::new();
    for _ in 0..budget {
        path.clear();
        let leaf_value = descend(root, &mut path, mdp, evaluator, config, rng)?;
        backup(root, &path, leaf_value, config.gamma);
    }
    Ok(root_result(root))
}

/// Select/expand phase of one trace. Fills `path` with the edge index taken
/// at each depth and returns the leaf value.
fn descend<M, E, R>(
    root: &mut StateNode<M::State>,
    path: &mut Vec<usize>,
    mdp: &M,
    evaluator: &E,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<f64, SearchError>
where
    M: Mdp,
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    let mut node = root;
    loop {
        if node.terminal {
            return Ok(0.0);
        }
        let idx = match maybe_widen(node, mdp.action_bound(), config, rng) {
            Some(i) => i,
            None => select_edge(node, config)?,
        };
        path.push(idx);
        let StateNode {
            edges, env_state, ..
        } = node;
        let edge = &mut edges[idx];
        if edge.child.is_none() {
            return expand_and_evaluate(edge, env_state, mdp, evaluator);
        }
        node = edge.child.as_deref_mut().expect("checked above");
    }
}

/// Index of `argmax_a Q(s,a) + c_puct sqrt(n(s)) / (n(s,a) + 1)`, lowest
/// index on ties.
pub fn select_edge<S>(node: &StateNode<S>, config: &SearchConfig) -> Result<usize, SearchError> {
    if node.edges.is_empty() {
        return Err(SearchError::NoEdges);
    }
    let sqrt_n = (node.edge_visits() as f64).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in node.edges.iter().enumerate() {
        let score = e.q + config.c_puct * sqrt_n / (e.n as f64 + 1.0);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

/// Number of children allowed at `n(s)` visits: `ceil(c_pw max(n, 1)^kappa)`.
pub fn widening_limit(edge_visits: u64, config: &SearchConfig) -> usize {
    (config.c_pw * (edge_visits.max(1) as f64).powf(config.kappa)).ceil() as usize
}

/// Adds a child action sampled from the node's policy prior when the
/// widening limit allows one. Returns the new edge's index.
pub fn maybe_widen<S, R>(
    node: &mut StateNode<S>,
    c_b: f64,
    config: &SearchConfig,
    rng: &mut R,
) -> Option<usize>
where
    R: Rng + ?Sized,
{
    if node.terminal || node.edges.len() >= widening_limit(node.edge_visits(), config) {
        return None;
    }
    let prior = node.prior.as_ref()?;
    let action = propose_action(prior, c_b, rng);
    node.edges.push(ActionEdge::new(action));
    Some(node.edges.len() - 1)
}

/// Samples from the prior, avoiding the zero-density box boundary.
pub fn propose_action<R: Rng + ?Sized>(prior: &BetaPolicyParams, c_b: f64, rng: &mut R) -> Action {
    let on_boundary = |a: &Action| a.values().iter().any(|v| v.abs() >= c_b);
    let mut action = policy_dist::sample(prior, c_b, rng);
    for _ in 0..MAX_RESAMPLES {
        if !on_boundary(&action) {
            return action;
        }
        action = policy_dist::sample(prior, c_b, rng);
    }
    clamp_inward(&action, c_b)
}

pub fn clamp_inward(action: &Action, c_b: f64) -> Action {
    let lim = c_b - BOUNDARY_MARGIN;
    Action(action.values().iter().map(|v| v.clamp(-lim, lim)).collect())
}

/// Simulates the edge's action from `parent_state`, attaches the child node
/// and returns its leaf value (0 when the child is terminal).
pub fn expand_and_evaluate<M, E>(
    edge: &mut ActionEdge<M::State>,
    parent_state: &M::State,
    mdp: &M,
    evaluator: &E,
) -> Result<f64, SearchError>
where
    M: Mdp,
    E: Evaluator + ?Sized,
{
    if edge.child.is_some() {
        return Err(SearchError::AlreadyExpanded);
    }
    let step = mdp.step(parent_state, &edge.action)?;
    let (child, value) = StateNode::create(mdp, step.next_state, evaluator)?;
    edge.reward = step.reward;
    edge.child = Some(Box::new(child));
    Ok(if step.terminal { 0.0 } else { value })
}

/// Propagates `R(s_i, a_i) = r(s_i, a_i) + gamma R(s_{i+1}, a_{i+1})` up the
/// edge path, starting from `leaf_value`. Every edge on the path gets
/// `n += 1, W += R, Q = W / n`; every node on the path gets `n += 1`.
pub fn backup<S>(root: &mut StateNode<S>, path: &[usize], leaf_value: f64, gamma: f64) {
    let mut rewards = Vec::with_capacity(path.len());
    let mut node = &*root;
    for &i in path {
        let e = &node.edges[i];
        rewards.push(e.reward);
        match e.child.as_deref() {
            Some(c) => node = c,
            None => break,
        }
    }
    let mut returns = vec![0.0; rewards.len()];
    let mut ret = leaf_value;
    for i in (0..rewards.len()).rev() {
        ret = rewards[i] + gamma * ret;
        returns[i] = ret;
    }

    let mut node = root;
    node.n += 1;
    for (&i, &ret) in path.iter().zip(&returns) {
        let e = &mut node.edges[i];
        e.n += 1;
        e.w += ret;
        e.q = e.w / e.n as f64;
        match e.child.as_deref_mut() {
            Some(c) => {
                c.n += 1;
                node = c;
            }
            None => break,
        }
    }
}

pub fn root_result<S>(root: &StateNode<S>) -> SearchResult {
    let root_actions: Vec<(Action, u64)> = root
        .edges
        .iter()
        .map(|e| (e.action.clone(), e.n))
        .collect();
    let root_q: Vec<f64> = root.edges.iter().map(|e| e.q).collect();
    let value_target = root
        .edges
        .iter()
        .filter(|e| e.n > 0)
        .map(|e| e.q)
        .fold(f64::NEG_INFINITY, f64::max);
    SearchResult {
        root_actions,
        root_q,
        value_target,
    }
}

/// Samples an action from `n(s_0, a) / n(s_0)`.
pub fn root_distribution<R: Rng + ?Sized>(
    result: &SearchResult,
    rng: &mut R,
) -> Result<Action, SearchError> {
    let total = result.total_count();
    if total == 0 {
        return Err(SearchError::EmptyDistribution);
    }
    let mut pick = rng.random_range(0..total);
    for (action, n) in &result.root_actions {
        if pick < *n {
            return Ok(action.clone());
        }
        pick -= n;
    }
    unreachable!("pick < total")
}

/// Makes the subtree under `chosen` the new root, dropping its siblings.
pub fn advance_root<S>(root: StateNode<S>, chosen: &Action) -> Result<StateNode<S>, SearchError> {
    let edge = root
        .edges
        .into_iter()
        .find(|e| e.action == *chosen)
        .ok_or_else(|| SearchError::NoMatchingEdge(chosen.0.clone()))?;
    edge.child.map(|c| *c).ok_or(SearchError::Unexpanded)
}
