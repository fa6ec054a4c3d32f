//! Factorized Beta policy pushed through `a = c_b (2u - 1)` onto the action box.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::env::Action;
use crate::special::{digamma_pos, ln_beta, trigamma_pos};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("alpha/beta length mismatch ({alpha} vs {beta})")]
    LengthMismatch { alpha: usize, beta: usize },
    #[error("Beta parameters must be finite and >= 1, got alpha = {alpha}, beta = {beta}")]
    InvalidParams { alpha: f64, beta: f64 },
    #[error("u = {0} lies outside [0, 1]")]
    OutOfUnitInterval(f64),
    #[error("action bound must be positive, got {0}")]
    InvalidBound(f64),
}

/// Per-dimension `(alpha, beta)` of the factorized Beta.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPolicyParams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl BetaPolicyParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self, DistError> {
        if alpha.len() != beta.len() {
            return Err(DistError::LengthMismatch {
                alpha: alpha.len(),
                beta: beta.len(),
            });
        }
        for (&a, &b) in alpha.iter().zip(&beta) {
            if !(a.is_finite() && b.is_finite() && a >= 1.0 && b >= 1.0) {
                return Err(DistError::InvalidParams { alpha: a, beta: b });
            }
        }
        Ok(Self { alpha, beta })
    }

    /// `Beta(1, 1)` in every dimension.
    pub fn uniform(n_a: usize) -> Self {
        Self {
            alpha: vec![1.0; n_a],
            beta: vec![1.0; n_a],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
}

fn check_bound(c_b: f64) -> Result<(), DistError> {
    if c_b > 0.0 && c_b.is_finite() {
        Ok(())
    } else {
        Err(DistError::InvalidBound(c_b))
    }
}

/// `a = c_b (2u - 1)`.
pub fn transform(u: &[f64], c_b: f64) -> Result<Action, DistError> {
    check_bound(c_b)?;
    u.iter()
        .map(|&ui| {
            if (0.0..=1.0).contains(&ui) {
                Ok(c_b * (2.0 * ui - 1.0))
            } else {
                Err(DistError::OutOfUnitInterval(ui))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Action)
}

/// `u = (a / c_b + 1) / 2`; no range check.
pub fn inverse_transform(a: &Action, c_b: f64) -> Vec<f64> {
    a.0.iter().map(|&ai| 0.5 * (ai / c_b + 1.0)).collect()
}

/// `log Beta(u; alpha, beta)`, `-inf` outside the support or where the
/// density vanishes on the boundary.
pub fn beta_log_pdf(u: f64, alpha: f64, beta: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return f64::NEG_INFINITY;
    }
    // 0 * ln 0 is taken as 0 so Beta(1, 1) keeps its density on the edges.
    let term = |exp: f64, x: f64| if exp == 0.0 { 0.0 } else { exp * x.ln() };
    term(alpha - 1.0, u) + term(beta - 1.0, 1.0 - u) - ln_beta(alpha, beta)
}

/// `log pi(a) = sum_i log q(u_i) - n_a log(2 c_b)`.
pub fn log_density(params: &BetaPolicyParams, a: &Action, c_b: f64) -> f64 {
    debug_assert_eq!(params.dim(), a.dim());
    let u = inverse_transform(a, c_b);
    let mut acc = 0.0;
    for ((&ui, &al), &be) in u.iter().zip(&params.alpha).zip(&params.beta) {
        acc += beta_log_pdf(ui, al, be);
    }
    acc - params.dim() as f64 * (2.0 * c_b).ln()
}

/// Partial derivatives of [`log_density`] with respect to `alpha` and `beta`.
/// Only meaningful where the density is positive.
pub fn log_density_grad(params: &BetaPolicyParams, a: &Action, c_b: f64) -> (Vec<f64>, Vec<f64>) {
    let u = inverse_transform(a, c_b);
    let mut d_alpha = Vec::with_capacity(u.len());
    let mut d_beta = Vec::with_capacity(u.len());
    for ((&ui, &al), &be) in u.iter().zip(&params.alpha).zip(&params.beta) {
        let psi_sum = digamma_pos(al + be);
        d_alpha.push(ui.ln() - digamma_pos(al) + psi_sum);
        d_beta.push((1.0 - ui).ln() - digamma_pos(be) + psi_sum);
    }
    (d_alpha, d_beta)
}

fn sample_unit<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    // Parameters are validated >= 1, so both Gamma shapes are valid.
    let x = Gamma::new(alpha, 1.0).expect("alpha >= 1").sample(rng);
    let y = Gamma::new(beta, 1.0).expect("beta >= 1").sample(rng);
    let s = x + y;
    if s > 0.0 {
        x / s
    } else {
        0.5
    }
}

/// Draws one action: `u_i ~ Beta(alpha_i, beta_i)` via two Gamma variates,
/// then `transform(u)`.
pub fn sample<R: Rng + ?Sized>(params: &BetaPolicyParams, c_b: f64, rng: &mut R) -> Action {
    let values = params
        .alpha
        .iter()
        .zip(&params.beta)
        .map(|(&a, &b)| c_b * (2.0 * sample_unit(a, b, rng) - 1.0))
        .collect();
    Action(values)
}

/// Differential entropy of the untransformed Beta `q(u)`.
///
/// The `n_a log(2 c_b)` shift of the transformed variable carries no
/// gradient and is left out; see [`transformed_entropy`] for the full value.
pub fn entropy(params: &BetaPolicyParams) -> f64 {
    params
        .alpha
        .iter()
        .zip(&params.beta)
        .map(|(&a, &b)| {
            ln_beta(a, b) - (a - 1.0) * digamma_pos(a) - (b - 1.0) * digamma_pos(b)
                + (a + b - 2.0) * digamma_pos(a + b)
        })
        .sum()
}

/// `(dH/dalpha, dH/dbeta)` of [`entropy`].
pub fn entropy_grad(params: &BetaPolicyParams) -> (Vec<f64>, Vec<f64>) {
    params
        .alpha
        .iter()
        .zip(&params.beta)
        .map(|(&a, &b)| {
            let t_sum = (a + b - 2.0) * trigamma_pos(a + b);
            (
                t_sum - (a - 1.0) * trigamma_pos(a),
                t_sum - (b - 1.0) * trigamma_pos(b),
            )
        })
        .unzip()
}

/// Entropy of the action distribution itself, for reporting.
pub fn transformed_entropy(params: &BetaPolicyParams, c_b: f64) -> f64 {
    entropy(params) + params.dim() as f64 * (2.0 * c_b).ln()
}
