//! Gaussian difficulty model.
//!
//! Images carry a scalar difficulty `τ ~ N(μ, σ²)` and model `j` answers an
//! image correctly with probability `Φ(s_j − τ)`. Integrating out `τ` gives
//! the accuracy `Φ((s − μ) / √(σ² + 1))`, so on the probit scale the
//! accuracies on two test sets are related by an exact affine map.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::regression::{fit_linear, FitDomain, PairedAccuracy};
use crate::rng::{self, Domain};
use crate::stats::{normal_cdf, normal_quantile, AccuracyRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyParams {
    pub mu: f64,
    pub sigma: f64,
}

impl DifficultyParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Parameter(format!(
                "difficulty needs finite mu and sigma >= 0, got ({mu}, {sigma})"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// `√(σ² + 1)`: the spread of `s − τ` plus the unit spread of the link.
    fn scale(&self) -> f64 {
        self.sigma.hypot(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSet {
    pub skills: Vec<f64>,
}

impl SkillSet {
    pub fn new(skills: Vec<f64>) -> Result<Self> {
        if let Some(bad) = skills.iter().find(|s| !s.is_finite()) {
            return Err(Error::Parameter(format!("non-finite skill {bad}")));
        }
        Ok(Self { skills })
    }
}

/// `probit₂ = u · probit₁ + v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftMap {
    pub u: f64,
    pub v: f64,
}

impl ShiftMap {
    pub fn apply(&self, z: f64) -> f64 {
        self.u * z + self.v
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &ShiftMap) -> ShiftMap {
        ShiftMap {
            u: self.u * first.u,
            v: self.u * first.v + self.v,
        }
    }
}

pub fn probit_accuracy(skill: f64, params: &DifficultyParams) -> f64 {
    (skill - params.mu) / params.scale()
}

pub fn model_accuracy(skill: f64, params: &DifficultyParams) -> f64 {
    normal_cdf(probit_accuracy(skill, params))
}

pub fn shift_map(from: &DifficultyParams, to: &DifficultyParams) -> ShiftMap {
    let (s1, s2) = (from.scale(), to.scale());
    ShiftMap {
        u: s1 / s2,
        v: (from.mu - to.mu) / s2,
    }
}

/// Simulates one test set of `n_images` images.
///
/// Difficulties are drawn once per image and shared by every model, which
/// gives the models correlated errors. Image `i` draws its difficulty and
/// all of its per-model coin flips from substream `i`. The model ids are
/// `model_000`, `model_001`, ...
pub fn simulate_testbed(
    skills: &SkillSet,
    params: &DifficultyParams,
    n_images: u64,
    seed: u64,
) -> Result<Vec<AccuracyRecord>> {
    if n_images == 0 {
        return Err(Error::Parameter("n_images must be at least 1".into()));
    }
    let m = skills.skills.len();
    let correct = (0..n_images)
        .into_par_iter()
        .fold(
            || vec![0u64; m],
            |mut acc, i| {
                let mut rng = rng::substream(seed, Domain::Simulation, i);
                let tau = params.mu + params.sigma * normal_quantile(rng::open_unit(&mut rng));
                for (j, &s) in skills.skills.iter().enumerate() {
                    let u: f64 = rng.random();
                    if u < normal_cdf(s - tau) {
                        acc[j] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; m],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    correct
        .into_iter()
        .enumerate()
        .map(|(j, c)| AccuracyRecord::new(format!("model_{j:03}"), c, n_images))
        .collect()
}

/// Fits `(u, v)` by least squares in the probit domain.
pub fn fit_shift(pairs: &[PairedAccuracy]) -> Result<ShiftMap> {
    let fit = fit_linear(pairs, FitDomain::Probit)?;
    Ok(ShiftMap {
        u: fit.slope,
        v: fit.offset,
    })
}
