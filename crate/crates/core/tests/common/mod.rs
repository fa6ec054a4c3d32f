//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use a0c::env::{Action, Observation};
use a0c::mcts::StateNode;
use a0c::net::NetworkParams;
use a0c::policy_dist::{self, BetaPolicyParams};
use a0c::training::{LossConfig, ReplayEntry};
use rand::Rng;

/// Tanh-sinh quadrature of `f` over `[a, b]`. Copes with integrable endpoint
/// singularities such as `u^(alpha-1)` for `alpha` near 1.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let h = 1.0 / 256.0;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    let k_max = (4.5 / h) as i64;
    for k in -k_max..=k_max {
        let t = k as f64 * h;
        let s = FRAC_PI_2 * t.sinh();
        let x = s.tanh();
        let w = FRAC_PI_2 * t.cosh() / s.cosh().powi(2);
        if w < 1e-300 {
            continue;
        }
        let y = mid + half * x;
        if y <= a || y >= b {
            continue;
        }
        sum += w * f(y);
    }
    sum * h * half
}

/// Beta log-density from `statrs`, independent of the crate's special functions.
pub fn statrs_beta_ln_pdf(u: f64, alpha: f64, beta: f64) -> f64 {
    use statrs::distribution::{Beta, Continuous};
    Beta::new(alpha, beta).expect("valid shape").ln_pdf(u)
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Tabulated CDF of a 1-D density on `[lo, hi]`: cumulative tanh-sinh
/// integrals over `cells` equal cells, linearly interpolated.
pub struct TabulatedCdf {
    lo: f64,
    width: f64,
    cum: Vec<f64>,
}

impl TabulatedCdf {
    pub fn new<F: Fn(f64) -> f64>(density: F, lo: f64, hi: f64, cells: usize) -> Self {
        let width = (hi - lo) / cells as f64;
        let mut cum = Vec::with_capacity(cells + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..cells {
            let a = lo + i as f64 * width;
            acc += tanh_sinh(&density, a, a + width);
            cum.push(acc);
        }
        Self { lo, width, cum }
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().expect("nonempty")
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pos = ((x - self.lo) / self.width).clamp(0.0, (self.cum.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.cum.len() - 2);
        let frac = pos - i as f64;
        self.cum[i] + frac * (self.cum[i + 1] - self.cum[i])
    }
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Five-point central difference of `f` along coordinate `i` of `theta`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], i: usize, h: f64) -> f64 {
    let mut t = theta.to_vec();
    let mut at = |d: f64| {
        t[i] = theta[i] + d;
        f(&t)
    };
    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

pub fn rel_err(fd: f64, analytic: f64, floor: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(floor)
}

/// Random replay entries with support points away from the box edge.
pub fn random_entries<R: Rng>(rng: &mut R, n: usize, obs_dim: usize, c_b: f64) -> Vec<ReplayEntry> {
    (0..n)
        .map(|_| ReplayEntry {
            obs: Observation((0..obs_dim).map(|_| rng.random_range(-2.0..2.0)).collect()),
            support: (0..rng.random_range(1..5))
                .map(|_| {
                    let a = rng.random_range(-0.95..0.95) * c_b;
                    (Action(vec![a]), rng.random_range(1..40))
                })
                .collect(),
            value_target: rng.random_range(-3.0..0.5),
        })
        .collect()
}

/// Per-term objectives built directly from forward outputs, with the policy
/// coefficients frozen at `base`.
pub struct FrozenObjective<'a> {
    pub entries: &'a [ReplayEntry],
    pub cfg: LossConfig,
    coefs: Vec<Vec<f64>>,
}

impl<'a> FrozenObjective<'a> {
    pub fn new(base: &NetworkParams, entries: &'a [ReplayEntry], cfg: LossConfig) -> Self {
        let coefs = entries
            .iter()
            .map(|e| {
                let p = base.forward_one(&e.obs).expect("forward").policy;
                e.support
                    .iter()
                    .map(|(a, n)| policy_dist::log_density(&p, a, cfg.c_b) - cfg.tau * (*n as f64).ln())
                    .collect()
            })
            .collect();
        Self { entries, cfg, coefs }
    }

    /// `(policy surrogate, entropy, value loss)` batch means at `net`.
    pub fn terms(&self, net: &NetworkParams) -> (f64, f64, f64) {
        let (mut p, mut h, mut v) = (0.0, 0.0, 0.0);
        for (e, c) in self.entries.iter().zip(&self.coefs) {
            let out = net.forward_one(&e.obs).expect("forward");
            let lp: Vec<f64> = e
                .support
                .iter()
                .map(|(a, _)| policy_dist::log_density(&out.policy, a, self.cfg.c_b))
                .collect();
            p += lp.iter().zip(c).map(|(l, c)| l * c).sum::<f64>() / lp.len() as f64;
            h += policy_dist::entropy(&out.policy);
            v += (out.value - e.value_target).powi(2);
        }
        let b = self.entries.len() as f64;
        (p / b, h / b, v / b)
    }
}

/// Brute-force maximizer of `f` on a uniform grid over `[lo, hi]`.
pub fn grid_argmax<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, points: usize) -> f64 {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .map(|x| (x, f(x)))
        .fold((lo, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
        .0
}

/// Structural violations in a searched tree, as human-readable strings.
pub fn tree_violations<S>(
    root: &StateNode<S>,
    c_pw: f64,
    kappa: f64,
    root_n_offset: u64,
) -> Vec<String> {
    let mut out = Vec::new();
    let root_sum = root.edge_visits();
    if root.n != root_sum + root_n_offset {
        out.push(format!("root n {} vs edge sum {} + {}", root.n, root_sum, root_n_offset));
    }
    walk(root, c_pw, kappa, 0, &mut out);
    out
}

fn walk<S>(node: &StateNode<S>, c_pw: f64, kappa: f64, depth: usize, out: &mut Vec<String>) {
    let n_s = node.edge_visits();
    let bound = (c_pw * (n_s.max(1) as f64).powf(kappa)).ceil() as usize + 1;
    if node.edges.len() > bound {
        out.push(format!("depth {depth}: {} edges > bound {bound}", node.edges.len()));
    }
    if node.terminal && !node.edges.is_empty() {
        out.push(format!("depth {depth}: terminal node has edges"));
    }
    for e in &node.edges {
        if e.n > 0 && (e.q * e.n as f64 - e.w).abs() > 1e-9 * e.w.abs().max(1.0) {
            out.push(format!("depth {depth}: Q n = {} but W = {}", e.q * e.n as f64, e.w));
        }
        if (e.n >= 1) != e.child.is_some() {
            out.push(format!("depth {depth}: edge n {} with child {}", e.n, e.child.is_some()));
        }
        if let Some(c) = &e.child {
            if c.n != e.n {
                out.push(format!("depth {depth}: child n {} vs edge n {}", c.n, e.n));
            }
            if !c.terminal && c.n != 1 + c.edge_visits() {
                out.push(format!("depth {depth}: child n {} vs 1 + {}", c.n, c.edge_visits()));
            }
            walk(c, c_pw, kappa, depth + 1, out);
        }
    }
}

pub fn beta(alpha: f64, beta: f64) -> BetaPolicyParams {
    BetaPolicyParams::new(vec![alpha], vec![beta]).expect("valid")
}
