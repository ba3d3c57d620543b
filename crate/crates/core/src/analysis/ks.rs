use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum KsMethod {
    /// Limiting Kolmogorov distribution with effective size `nm / (n + m)`.
    #[default]
    Asymptotic,
    /// Label-permutation p-value, `(1 + #{D* >= D}) / (1 + permutations)`.
    Permutation { permutations: usize, seed: u64 },
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if xs.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `max |i m - j n|` over the merged order statistics, i.e. `D * n * m`.
fn d_numerator(a: &[f64], b: &[f64]) -> u64 {
    let (n, m) = (a.len() as i64, b.len() as i64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0i64;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as i64 * m - j as i64 * n).abs());
    }
    best as u64
}

/// Exact two-sample statistic `D = sup |F_a - F_b|` by sorted merge.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    Ok(d_numerator(&a, &b) as f64 / (a.len() as f64 * b.len() as f64))
}

/// Survival function of the Kolmogorov distribution,
/// `Q(x) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)`.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // the alternating series converges slowly here; use the dual form
        // 1 - sqrt(2 pi)/x * sum exp(-(2k-1)^2 pi^2 / (8 x^2))
        let pi2 = core::f64::consts::PI * core::f64::consts::PI;
        let mut s = 0.0;
        for k in 1..=20 {
            let o = (2 * k - 1) as f64;
            s += libm::exp(-o * o * pi2 / (8.0 * x * x));
        }
        return (1.0 - libm::sqrt(2.0 * core::f64::consts::PI) / x * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * 2.0 * libm::exp(-2.0 * kf * kf * x * x);
        sum += term;
        if term.abs() <= 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    sum.clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, AnalysisError> {
    ks_two_sample_with(a, b, KsMethod::Asymptotic)
}

pub fn ks_two_sample_with(a: &[f64], b: &[f64], method: KsMethod) -> Result<KsResult, AnalysisError> {
    let (sa, sb) = (sorted(a)?, sorted(b)?);
    let (n, m) = (sa.len(), sb.len());
    let num = d_numerator(&sa, &sb);
    let d = num as f64 / (n as f64 * m as f64);
    let p = match method {
        KsMethod::Asymptotic => {
            let en = (n * m) as f64 / (n + m) as f64;
            kolmogorov_q(libm::sqrt(en) * d)
        }
        KsMethod::Permutation { permutations, seed } => {
            if permutations < 100 {
                return Err(AnalysisError::TooFewPermutations);
            }
            let mut pool: Vec<f64> = sa.iter().chain(&sb).copied().collect();
            let mut rng = seeded_rng(seed);
            let mut hits = 0usize;
            for _ in 0..permutations {
                pool.shuffle(&mut rng);
                let mut x = pool[..n].to_vec();
                let mut y = pool[n..].to_vec();
                x.sort_by(f64::total_cmp);
                y.sort_by(f64::total_cmp);
                if d_numerator(&x, &y) >= num {
                    hits += 1;
                }
            }
            (1 + hits) as f64 / (1 + permutations) as f64
        }
    };
    let p_value = if p > 0.0 { p.min(1.0) } else { f64::MIN_POSITIVE };
    Ok(KsResult { d_statistic: d, p_value, n_a: n, n_b: m })
}
