//! Covariate, treatment, event and censoring generation for the simulation
//! study, with the closed-form nuisances of the same model.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::scenario::{Knobs, ScenarioSpec};
use crate::error::Result;
use crate::seed::SeedStream;
use crate::survival::{Dataset, Observation};

pub const WEIBULL_SHAPE: f64 = 1.2;
pub const WEIBULL_SCALE: f64 = 0.6;
pub const CENSORING_CAP: f64 = 200.0;

fn beta_draw<R: Rng>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("beta shapes are positive for all scenario knobs").sample(rng)
}

/// Draws `(X1, X2, X3)` for a site with covariate shift `gamma`.
pub fn draw_covariates<R: Rng>(rng: &mut R, gamma: f64) -> [f64; 3] {
    let x1 = 33.0 * beta_draw(rng, 1.1 - 0.05 * gamma, 1.1 + 0.2 * gamma) + 9.0 + 2.0 * gamma;
    let x2 = 52.0 * beta_draw(rng, 1.5 + (x1 + 0.5 * gamma) / 20.0, 4.0 + 2.0 * gamma) + 7.0 + 2.0 * gamma;
    let x3 = (4.0 + 2.0 * gamma) * beta_draw(rng, 1.5 + (x1 - 50.0 + 3.0 * gamma).abs() / 20.0, 3.0 + 0.1 * gamma);
    [x1, x2, x3]
}

/// `P(A = 1 | x)`.
pub fn propensity(x: &[f64]) -> f64 {
    let lin = -1.05 + (1.3 + (-12.0 + x[0] / 10.0).exp() + (-2.0 + x[1] / 12.0).exp() + (-2.0 + x[2] / 3.0).exp()).ln();
    1.0 / (1.0 + (-lin).exp())
}

fn interaction(x: &[f64]) -> f64 {
    0.1 * (x[0] + x[1] + x[2] - 50.0)
}

/// Event log-hazard multiplier `h_t`.
pub fn event_log_hazard(x: &[f64], a: u8, k: &Knobs) -> f64 {
    -5.02 + 0.1 * (x[0] - 25.0) - 0.1 * (x[1] - 25.0) + 0.05 * (x[2] - 2.0)
        + k.d_t * 0.1 * (x[1] - 25.0)
        + a as f64 * k.delta_t * interaction(x)
}

/// Censoring log-hazard multiplier `h_c`.
pub fn censoring_log_hazard(x: &[f64], a: u8, k: &Knobs) -> f64 {
    -4.87 + 0.01 * (x[0] - 25.0) - 0.02 * (x[1] - 25.0) + 0.01 * (x[2] - 2.0) - k.d_c * 0.1 * (x[1] - 25.0)
        + a as f64 * k.delta_c * interaction(x)
}

fn weibull_cumhaz(h: f64, t: f64) -> f64 {
    WEIBULL_SCALE * h.exp() * t.max(0.0).powf(WEIBULL_SHAPE)
}

/// Inverse-transform Weibull draw with cumulative hazard `0.6 e^h t^1.2`.
pub fn weibull_time(h: f64, u: f64) -> f64 {
    (-u.ln() / (h.exp() * WEIBULL_SCALE)).powf(1.0 / WEIBULL_SHAPE)
}

/// `P(T > t | A = a, X = x)`.
pub fn true_survival(x: &[f64], a: u8, k: &Knobs, t: f64) -> f64 {
    (-weibull_cumhaz(event_log_hazard(x, a, k), t)).exp()
}

/// `P(C > t | A = a, X = x)` including administrative censoring at day 200.
pub fn true_censoring_survival(x: &[f64], a: u8, k: &Knobs, t: f64) -> f64 {
    if t >= CENSORING_CAP {
        0.0
    } else {
        (-weibull_cumhaz(censoring_log_hazard(x, a, k), t)).exp()
    }
}

/// Full latent draw for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub x: [f64; 3],
    pub a: u8,
    pub t: f64,
    pub c: f64,
}

pub fn draw_latent<R: Rng>(rng: &mut R, k: &Knobs) -> Latent {
    let x = draw_covariates(rng, k.gamma);
    let a = (rng.random::<f64>() < propensity(&x)) as u8;
    let u1: f64 = rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    let t = weibull_time(event_log_hazard(&x, a, k), 1.0 - u1);
    let c = weibull_time(censoring_log_hazard(&x, a, k), 1.0 - u2).min(CENSORING_CAP);
    Latent { x, a, t, c }
}

/// `n` observations from site `k` of `spec`.
pub fn gen_site(k: usize, n: usize, spec: &ScenarioSpec, seed: &SeedStream) -> Vec<Observation> {
    let knobs = spec.knobs(k);
    let mut rng = seed.child("site").index(k as u64).rng();
    (0..n)
        .map(|_| {
            let l = draw_latent(&mut rng, &knobs);
            Observation {
                x: l.x.to_vec(),
                a: l.a,
                y: l.t.min(l.c),
                delta: (l.t <= l.c) as u8,
                site: k,
            }
        })
        .collect()
}

/// One replicate dataset with all sites of `spec`.
pub fn gen_dataset(spec: &ScenarioSpec, seed: &SeedStream) -> Result<Dataset> {
    spec.validate()?;
    let mut obs = Vec::new();
    for k in 0..spec.sites {
        obs.extend(gen_site(k, spec.site_size(k), spec, seed));
    }
    Dataset::new(obs, Some(spec.sites))
}
