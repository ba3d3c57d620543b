//! Independent oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use trustel_core::analysis::ObservationSet;
use trustel_core::annotation::RatingMatrix;
use trustel_core::protocol::ConditionKind;
use trustel_core::seeded_rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// 100 subjects x (3 low + 3 high) observations.
pub fn simulate(seed: u64, beta0: f64, beta1: f64, sigma_u: f64, sigma_e: f64) -> ObservationSet {
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut obs = ObservationSet::default();
    for s in 0..100 {
        let u = sigma_u * noise.sample(&mut rng);
        let id = format!("s{s:03}");
        for k in 0..6 {
            let cond = if k % 2 == 0 { ConditionKind::LowScore } else { ConditionKind::HighScore };
            let y = beta0 + beta1 * cond.indicator() + u + sigma_e * noise.sample(&mut rng);
            obs.push(&id, cond, y);
        }
    }
    obs
}

pub struct Oracle {
    designs: Vec<(DMatrix<f64>, DVector<f64>)>,
    n: usize,
}

impl Oracle {
    pub fn new(obs: &ObservationSet) -> Self {
        let mut designs = Vec::new();
        for idx in obs.by_subject().into_values() {
            let x = DMatrix::from_fn(idx.len(), 2, |r, c| if c == 0 { 1.0 } else { obs.rows[idx[r]].condition.indicator() });
            let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| obs.rows[i].value));
            designs.push((x, y));
        }
        Oracle { designs, n: obs.len() }
    }

    /// Profiled log-likelihood by generalized least squares with explicit
    /// matrix inverses and determinants of `V_i = I + lambda 11'`.
    pub fn loglik(&self, lambda: f64) -> (f64, DVector<f64>) {
        // V_i depends only on the group size
        let mut by_size: BTreeMap<usize, (DMatrix<f64>, f64)> = BTreeMap::new();
        for (_, y) in &self.designs {
            by_size.entry(y.len()).or_insert_with(|| {
                let k = y.len();
                let v = DMatrix::<f64>::identity(k, k) + DMatrix::from_element(k, k, lambda);
                let chol = v.cholesky().expect("positive definite");
                let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                (chol.inverse(), logdet)
            });
        }
        let mut xtvx = DMatrix::<f64>::zeros(2, 2);
        let mut xtvy = DVector::<f64>::zeros(2);
        let mut logdet = 0.0;
        for (x, y) in &self.designs {
            let (vi, ld) = &by_size[&y.len()];
            logdet += ld;
            let vx = vi * x;
            xtvx += x.transpose() * &vx;
            xtvy += vx.transpose() * y;
        }
        let beta = xtvx.try_inverse().expect("full rank") * xtvy;
        let mut quad = 0.0;
        for (x, y) in &self.designs {
            let r = y - x * &beta;
            quad += r.dot(&(&by_size[&y.len()].0 * &r));
        }
        let n = self.n as f64;
        (-0.5 * n * (LN_2PI + (quad / n).ln() + 1.0) - 0.5 * logdet, beta)
    }

    /// Best value over `log lambda` in [-12, 12] at spacing 1e-3, plus the
    /// `lambda = 0` boundary.
    pub fn grid_max(&self) -> (f64, f64) {
        let mut best = (self.loglik(0.0).0, 0.0);
        for k in 0..=24_000 {
            let lambda = (-12.0 + k as f64 * 1e-3).exp();
            let ll = self.loglik(lambda).0;
            if ll > best.0 {
                best = (ll, lambda);
            }
        }
        best
    }
}

/// D as an exact fraction `num / (n m)`, evaluating both empirical CDFs at
/// every pooled value.
pub fn brute_force_d(a: &[f64], b: &[f64]) -> (u64, u64) {
    let (n, m) = (a.len() as i64, b.len() as i64);
    let mut best = 0i64;
    for &t in a.iter().chain(b) {
        let fa = a.iter().filter(|&&x| x <= t).count() as i64;
        let fb = b.iter().filter(|&&x| x <= t).count() as i64;
        best = best.max((fa * m - fb * n).abs());
    }
    (best as u64, (n * m) as u64)
}


/// Fleiss' kappa straight from the rater-by-item table, written out with
/// the per-item agreement `P_i = sum_j n_ij (n_ij - 1) / (n (n - 1))`.
pub fn reference_kappa(ratings: &[Vec<u8>], k: usize) -> f64 {
    let n = ratings.len() as f64;
    let items = ratings[0].len();
    let mut p_j = vec![0.0; k];
    let mut p_bar = 0.0;
    for i in 0..items {
        let mut n_ij = vec![0.0; k];
        for r in ratings {
            n_ij[r[i] as usize] += 1.0;
        }
        p_bar += n_ij.iter().map(|c| c * (c - 1.0)).sum::<f64>() / (n * (n - 1.0));
        for (p, c) in p_j.iter_mut().zip(&n_ij) {
            *p += c / (n * items as f64);
        }
    }
    p_bar /= items as f64;
    let p_e: f64 = p_j.iter().map(|p| p * p).sum();
    (p_bar - p_e) / (1.0 - p_e)
}

pub fn matrix(ratings: Vec<Vec<u8>>) -> RatingMatrix {
    RatingMatrix {
        items: (0..ratings[0].len()).map(|i| format!("p{i}")).collect(),
        raters: (0..ratings.len()).map(|i| format!("r{i}")).collect(),
        ratings,
        n_categories: 2,
    }
}


/// Hand syllabification; the hyphenation is kept for reference.
pub const SYLLABLE_ORACLE: [(&str, &str); 50] = [
    ("casa", "ca-sa"),
    ("aéreo", "a-é-re-o"),
    ("país", "pa-ís"),
    ("perro", "pe-rro"),
    ("mesa", "me-sa"),
    ("árbol", "ár-bol"),
    ("teléfono", "te-lé-fo-no"),
    ("computadora", "com-pu-ta-do-ra"),
    ("agua", "a-gua"),
    ("guerra", "gue-rra"),
    ("guitarra", "gui-ta-rra"),
    ("queso", "que-so"),
    ("quien", "quien"),
    ("pingüino", "pin-güi-no"),
    ("cigüeña", "ci-güe-ña"),
    ("ciudad", "ciu-dad"),
    ("cuidado", "cui-da-do"),
    ("bueno", "bue-no"),
    ("buey", "buey"),
    ("uruguay", "u-ru-guay"),
    ("hoy", "hoy"),
    ("rey", "rey"),
    ("muy", "muy"),
    ("y", "y"),
    ("ya", "ya"),
    ("mayo", "ma-yo"),
    ("reyes", "re-yes"),
    ("leer", "le-er"),
    ("poeta", "po-e-ta"),
    ("caoba", "ca-o-ba"),
    ("río", "rí-o"),
    ("baúl", "ba-úl"),
    ("reír", "re-ír"),
    ("oído", "o-í-do"),
    ("maíz", "ma-íz"),
    ("día", "dí-a"),
    ("búho", "bú-ho"),
    ("ahora", "a-ho-ra"),
    ("huevo", "hue-vo"),
    ("murciélago", "mur-cié-la-go"),
    ("aeropuerto", "a-e-ro-puer-to"),
    ("océano", "o-cé-a-no"),
    ("canción", "can-ción"),
    ("avión", "a-vión"),
    ("estación", "es-ta-ción"),
    ("temperatura", "tem-pe-ra-tu-ra"),
    ("kilómetros", "ki-ló-me-tros"),
    ("aluminio", "a-lu-mi-nio"),
    ("geografía", "ge-o-gra-fí-a"),
    ("biología", "bio-lo-gí-a"),
];

