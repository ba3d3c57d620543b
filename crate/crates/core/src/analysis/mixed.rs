//! Random-intercept linear mixed model
//!
//! `value = b0 + b1 * condition + u_subject + e`, `u ~ N(0, su^2)`,
//! `e ~ N(0, se^2)`, fitted by maximum likelihood.
//!
//! For a fixed variance ratio `lambda = su^2 / se^2` each subject's
//! covariance is `se^2 (I + lambda 11')`, whose inverse is
//! `(I - c 11') / se^2` with `c = lambda / (1 + n lambda)`. The fixed effects
//! and `se^2` then have closed forms, leaving a one-dimensional search over
//! `log lambda`. The condition effect is tested with a likelihood ratio
//! against the same model without the condition term.

// NaN must fail the positivity guards, hence `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{chi2_1_sf, AnalysisError, ObservationSet};

/// Search interval for `log lambda`.
pub const LOG_LAMBDA_RANGE: (f64, f64) = (-12.0, 12.0);
pub const MAX_ITERATIONS: usize = 200;
const GRID_STEP: f64 = 0.5;
const TOLERANCE: f64 = 1e-9;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_u: f64,
    pub sigma_e: f64,
    pub loglik: f64,
    pub loglik_null: f64,
    pub lrt_statistic: f64,
    pub p_value: f64,
    pub lambda: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
}

struct Group {
    x: Vec<f64>,
    y: Vec<f64>,
}

fn groups(obs: &ObservationSet) -> Result<Vec<Group>, AnalysisError> {
    if obs.rows.iter().any(|r| !r.value.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(obs
        .by_subject()
        .into_values()
        .map(|idx| Group {
            x: idx.iter().map(|&i| obs.rows[i].condition.indicator()).collect(),
            y: idx.iter().map(|&i| obs.rows[i].value).collect(),
        })
        .collect())
}

struct Profile {
    loglik: f64,
    beta: [f64; 2],
    sigma2_e: f64,
}

fn profile(groups: &[Group], lambda: f64, with_condition: bool) -> Option<Profile> {
    // normal equations A beta = b for the (intercept, condition) design
    let (mut a00, mut a01, mut a11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut n_total = 0usize;
    let mut logdet = 0.0;
    for g in groups {
        let n = g.y.len() as f64;
        let c = lambda / (1.0 + n * lambda);
        let sx: f64 = g.x.iter().sum();
        let sy: f64 = g.y.iter().sum();
        let sxx: f64 = g.x.iter().map(|x| x * x).sum();
        let sxy: f64 = g.x.iter().zip(&g.y).map(|(x, y)| x * y).sum();
        a00 += n - c * n * n;
        a01 += sx - c * n * sx;
        a11 += sxx - c * sx * sx;
        b0 += sy - c * n * sy;
        b1 += sxy - c * sx * sy;
        n_total += g.y.len();
        logdet += libm::log1p(n * lambda);
    }
    let beta = if with_condition {
        let det = a00 * a11 - a01 * a01;
        if !(det.abs() > 1e-12 * (a00 * a11).abs().max(1.0)) {
            return None;
        }
        [(a11 * b0 - a01 * b1) / det, (a00 * b1 - a01 * b0) / det]
    } else {
        if a00 <= 0.0 {
            return None;
        }
        [b0 / a00, 0.0]
    };
    let mut quad = 0.0;
    for g in groups {
        let n = g.y.len() as f64;
        let c = lambda / (1.0 + n * lambda);
        let (mut ss, mut s) = (0.0, 0.0);
        for (x, y) in g.x.iter().zip(&g.y) {
            let r = y - beta[0] - beta[1] * x;
            ss += r * r;
            s += r;
        }
        quad += ss - c * s * s;
    }
    let n = n_total as f64;
    let sigma2_e = quad / n;
    if !(sigma2_e > 0.0) {
        return None;
    }
    let loglik = -0.5 * n * (LN_2PI + libm::log(sigma2_e) + 1.0) - 0.5 * logdet;
    Some(Profile { loglik, beta, sigma2_e })
}

/// Log-likelihood with the fixed effects and residual variance profiled out,
/// at variance ratio `lambda >= 0`. `with_condition = false` fits the
/// intercept-only null model. Returns `None` when the design is singular.
pub fn profiled_log_likelihood(obs: &ObservationSet, lambda: f64, with_condition: bool) -> Option<f64> {
    let g = groups(obs).ok()?;
    profile(&g, lambda, with_condition).map(|p| p.loglik)
}

/// Full log-likelihood at explicit parameters.
pub fn log_likelihood(obs: &ObservationSet, beta0: f64, beta1: f64, sigma_u: f64, sigma_e: f64) -> f64 {
    let s2e = sigma_e * sigma_e;
    let lambda = sigma_u * sigma_u / s2e;
    let mut ll = 0.0;
    for idx in obs.by_subject().into_values() {
        let n = idx.len() as f64;
        let c = lambda / (1.0 + n * lambda);
        let (mut ss, mut s) = (0.0, 0.0);
        for &i in &idx {
            let r = &obs.rows[i];
            let e = r.value - beta0 - beta1 * r.condition.indicator();
            ss += e * e;
            s += e;
        }
        ll -= 0.5 * (n * LN_2PI + n * libm::log(s2e) + libm::log1p(n * lambda) + (ss - c * s * s) / s2e);
    }
    ll
}

struct Optimum {
    lambda: f64,
    profile: Profile,
}

fn maximize(groups: &[Group], with_condition: bool) -> Result<Optimum, AnalysisError> {
    let (lo, hi) = LOG_LAMBDA_RANGE;
    let eval = |theta: f64| profile(groups, libm::exp(theta), with_condition).map(|p| p.loglik);
    let singular = AnalysisError::InsufficientData("singular design");
    let steps = libm::round((hi - lo) / GRID_STEP) as usize;
    let mut best = (lo, f64::NEG_INFINITY);
    for k in 0..=steps {
        let theta = lo + k as f64 * GRID_STEP;
        let v = eval(theta).ok_or(singular.clone())?;
        if v > best.1 {
            best = (theta, v);
        }
    }
    // golden-section refinement inside the neighbouring grid cells
    let (mut a, mut b) = ((best.0 - GRID_STEP).max(lo), (best.0 + GRID_STEP).min(hi));
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c).ok_or(singular.clone())?, eval(d).ok_or(singular.clone())?);
    let mut iterations = 0;
    while b - a > TOLERANCE {
        iterations += 1;
        if iterations > MAX_ITERATIONS {
            return Err(AnalysisError::NonConvergence(MAX_ITERATIONS));
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c).ok_or(singular.clone())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d).ok_or(singular.clone())?;
        }
    }
    let mut candidates = [best.0, (a + b) / 2.0].map(|t| (libm::exp(t), t));
    candidates.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut out: Option<Optimum> = None;
    // lambda = 0 is the boundary su = 0
    for lambda in [0.0, candidates[0].0, candidates[1].0] {
        let p = profile(groups, lambda, with_condition).ok_or(singular.clone())?;
        if out.as_ref().is_none_or(|o| p.loglik > o.profile.loglik) {
            out = Some(Optimum { lambda, profile: p });
        }
    }
    Ok(out.expect("at least one candidate"))
}

/// Maximum-likelihood fit plus likelihood-ratio test of the condition term.
pub fn fit_mixed_model(obs: &ObservationSet) -> Result<MixedModelFit, AnalysisError> {
    let groups = groups(obs)?;
    if groups.len() < 2 {
        return Err(AnalysisError::InsufficientData("need at least two subjects"));
    }
    let has = |v: f64| obs.rows.iter().any(|r| r.condition.indicator() == v);
    if !has(0.0) || !has(1.0) {
        return Err(AnalysisError::InsufficientData("need both conditions"));
    }
    if obs.rows.len() < 4 {
        return Err(AnalysisError::InsufficientData("need at least four observations"));
    }
    let full = maximize(&groups, true)?;
    let null = maximize(&groups, false)?;
    let lrt_statistic = (2.0 * (full.profile.loglik - null.profile.loglik)).max(0.0);
    let sigma_e = libm::sqrt(full.profile.sigma2_e);
    Ok(MixedModelFit {
        beta0: full.profile.beta[0],
        beta1: full.profile.beta[1],
        sigma_u: libm::sqrt(full.lambda) * sigma_e,
        sigma_e,
        loglik: full.profile.loglik,
        loglik_null: null.profile.loglik,
        lrt_statistic,
        p_value: chi2_1_sf(lrt_statistic).clamp(0.0, 1.0),
        lambda: full.lambda,
        n_obs: obs.rows.len(),
        n_subjects: groups.len(),
    })
}
