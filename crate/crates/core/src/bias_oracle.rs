//! Monte Carlo study of the group-normalized advantage under Gaussian reward
//! noise.
//!
//! Rewards are `r_j = theta + e_j`, `e_j ~ N(0, sigma^2)`, `j = 1..N`. With
//! `e_bar` the group mean and `D` the population std of the group,
//! `A_i = (e_i - e_bar) / D`. Conditioning on `e_i`:
//!
//! * `E[e_i - e_bar | e_i] = (1 - 1/N) e_i`
//! * `E[D^2 | e_i] = alpha + beta e_i^2`, `alpha = (N-1)^2/N^2 sigma^2`, `beta = (N-1)/N^2`
//!
//! `E[A_i | e_i]` has no closed form and is estimated directly.
//!
//! All draws share common random numbers: shard `s` always yields the same
//! standard normals, scaled by `sigma`, for every `sigma` and every `e_i`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

const SHARD: usize = 16_384;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasExperiment {
    pub n: usize,
    pub sigma: f64,
    pub epsilon_values: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl BiasExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Domain(format!("group size N = {} must be at least 2", self.n)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma = {} must be positive", self.sigma)));
        }
        if self.samples < 1 {
            return Err(Error::Domain("samples must be at least 1".into()));
        }
        if self.epsilon_values.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain("epsilon values must be finite".into()));
        }
        Ok(())
    }
}

/// Monte Carlo mean with its standard error. The error is infinite (null in
/// JSON) when fewer than two samples were drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// `|mean - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub numerator: Estimate,
    pub d_squared: Estimate,
    pub advantage: Estimate,
    /// `E[A_i | e_i] - e_i`; shares the advantage's standard error.
    pub bias: Estimate,
    pub analytic_numerator: f64,
    pub analytic_d_squared: f64,
    /// Draws discarded because `D = 0`.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasResult {
    pub n: usize,
    pub sigma: f64,
    pub samples: usize,
    pub estimates: Vec<EpsilonEstimate>,
}

impl BiasResult {
    /// Every analytic moment lies within `k` standard errors of its estimate.
    pub fn analytic_checks_pass(&self, k: f64) -> bool {
        self.estimates.iter().all(|e| {
            e.numerator.within(e.analytic_numerator, k) && e.d_squared.within(e.analytic_d_squared, k)
        })
    }
}

/// `((1 - 1/N) e, alpha + beta e^2)`.
pub fn analytic_moments(n: usize, sigma: f64, epsilon: f64) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::Domain(format!("group size N = {n} must be at least 2")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma = {sigma} must be positive")));
    }
    let nf = n as f64;
    let alpha = (nf - 1.0).powi(2) / (nf * nf) * sigma * sigma;
    let beta = (nf - 1.0) / (nf * nf);
    Ok(((1.0 - 1.0 / nf) * epsilon, alpha + beta * epsilon * epsilon))
}

#[derive(Clone, Copy, Default)]
struct Moments {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, o: &Moments) {
        self.count += o.count;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn estimate(&self) -> Estimate {
        let n = self.count as f64;
        let mean = self.sum / n;
        let se = if self.count < 2 {
            f64::INFINITY
        } else {
            let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        };
        Estimate { mean, se }
    }
}

#[derive(Clone, Default)]
struct Accum {
    numerator: Moments,
    d_squared: Moments,
    advantage: Moments,
    skipped: usize,
}

fn run_shard(exp: &BiasExperiment, shard: usize, len: usize) -> Vec<Accum> {
    let mut r = rng::stream(exp.seed, &[purpose::BIAS, shard as u64]);
    let n = exp.n;
    let nf = n as f64;
    let mut acc = vec![Accum::default(); exp.epsilon_values.len()];
    let mut others = vec![0.0f64; n - 1];
    for _ in 0..len {
        for z in others.iter_mut() {
            let draw: f64 = StandardNormal.sample(&mut r);
            *z = exp.sigma * draw;
        }
        let others_sum: f64 = others.iter().sum();
        for (a, &eps) in acc.iter_mut().zip(&exp.epsilon_values) {
            let mean = (eps + others_sum) / nf;
            let d2 = ((eps - mean).powi(2) + others.iter().map(|x| (x - mean).powi(2)).sum::<f64>()) / nf;
            let num = eps - mean;
            a.numerator.push(num);
            a.d_squared.push(d2);
            if d2 > 0.0 {
                a.advantage.push(num / d2.sqrt());
            } else {
                a.skipped += 1;
            }
        }
    }
    acc
}

/// Conditional moments at each fixed `e_i` with `N - 1` fresh noises per draw.
pub fn mc_conditional_moments(exp: &BiasExperiment) -> Result<BiasResult> {
    exp.validate()?;
    let shards = exp.samples.div_ceil(SHARD);
    let partials: Vec<Vec<Accum>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let len = SHARD.min(exp.samples - s * SHARD);
            run_shard(exp, s, len)
        })
        .collect();

    let mut total = vec![Accum::default(); exp.epsilon_values.len()];
    for shard in &partials {
        for (t, p) in total.iter_mut().zip(shard) {
            t.numerator.merge(&p.numerator);
            t.d_squared.merge(&p.d_squared);
            t.advantage.merge(&p.advantage);
            t.skipped += p.skipped;
        }
    }

    let estimates = exp
        .epsilon_values
        .iter()
        .zip(total)
        .map(|(&eps, acc)| {
            let (an, ad) = analytic_moments(exp.n, exp.sigma, eps)?;
            let advantage = acc.advantage.estimate();
            Ok(EpsilonEstimate {
                epsilon: eps,
                numerator: acc.numerator.estimate(),
                d_squared: acc.d_squared.estimate(),
                advantage,
                bias: Estimate {
                    mean: advantage.mean - eps,
                    se: advantage.se,
                },
                analytic_numerator: an,
                analytic_d_squared: ad,
                skipped: acc.skipped,
            })
        })
        .collect::<Result<_>>()?;

    Ok(BiasResult {
        n: exp.n,
        sigma: exp.sigma,
        samples: exp.samples,
        estimates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub sigma: f64,
    pub bias: Estimate,
    pub magnitude: f64,
    /// `|bias| -/+ z * se`, lower end floored at 0.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCurve {
    pub n: usize,
    pub epsilon: f64,
    pub samples: usize,
    pub z: f64,
    pub points: Vec<BiasPoint>,
}

impl BiasCurve {
    /// Whether `|bias|` rises strictly along the sigma list with disjoint
    /// confidence intervals. `None` when there is nothing to compare or the
    /// errors are not finite.
    pub fn magnitude_strictly_increasing(&self) -> Option<bool> {
        if self.points.len() < 2 || self.points.iter().any(|p| !p.bias.se.is_finite()) {
            return None;
        }
        Some(self.points.windows(2).all(|w| w[0].ci_high < w[1].ci_low))
    }

    /// Same test on the signed bias, decreasing.
    pub fn signed_strictly_decreasing(&self) -> Option<bool> {
        if self.points.len() < 2 || self.points.iter().any(|p| !p.bias.se.is_finite()) {
            return None;
        }
        Some(
            self.points
                .windows(2)
                .all(|w| w[0].bias.mean - self.z * w[0].bias.se > w[1].bias.mean + self.z * w[1].bias.se),
        )
    }
}

/// `|E[A_i | e_i] - e_i|` at fixed `epsilon` for each sigma, with common
/// random numbers across the list.
pub fn bias_curve(n: usize, sigmas: &[f64], epsilon: f64, samples: usize, seed: u64, z: f64) -> Result<BiasCurve> {
    if sigmas.is_empty() {
        return Err(Error::Domain("sigma list is empty".into()));
    }
    if sigmas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("sigma list must be strictly ascending".into()));
    }
    let points = sigmas
        .iter()
        .map(|&sigma| {
            let result = mc_conditional_moments(&BiasExperiment {
                n,
                sigma,
                epsilon_values: vec![epsilon],
                samples,
                seed,
            })?;
            let bias = result.estimates[0].bias;
            let magnitude = bias.mean.abs();
            Ok(BiasPoint {
                sigma,
                bias,
                magnitude,
                ci_low: (magnitude - z * bias.se).max(0.0),
                ci_high: magnitude + z * bias.se,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BiasCurve {
        n,
        epsilon,
        samples,
        z,
        points,
    })
}
