//! Accuracy records, exact binomial intervals and the probit transform pair.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use libm::erfc;

use crate::{Error, Result};

/// One model's correct/total counts on one test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub model_id: String,
    pub correct: u64,
    pub total: u64,
}

impl AccuracyRecord {
    pub fn new(model_id: impl Into<String>, correct: u64, total: u64) -> Result<Self> {
        let model_id = model_id.into();
        if total == 0 {
            return Err(Error::Parameter(format!("`{model_id}`: total must be positive")));
        }
        if correct > total {
            return Err(Error::Parameter(format!(
                "`{model_id}`: correct ({correct}) exceeds total ({total})"
            )));
        }
        Ok(Self {
            model_id,
            correct,
            total,
        })
    }

    /// Fraction correct in [0, 1].
    pub fn point(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn loss(&self) -> f64 {
        1.0 - self.point()
    }

    /// Exact comparison of the two point estimates as rationals.
    pub fn cmp_point(&self, other: &Self) -> std::cmp::Ordering {
        let lhs = self.correct as u128 * other.total as u128;
        let rhs = other.correct as u128 * self.total as u128;
        lhs.cmp(&rhs)
    }

    pub fn clopper_pearson(&self, level: f64) -> Result<ConfidenceInterval> {
        clopper_pearson(self.correct, self.total, level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Counts the true flags in a sequence of per-example outcomes.
pub fn empirical_accuracy(model_id: &str, outcomes: &[bool]) -> Result<AccuracyRecord> {
    if outcomes.is_empty() {
        return Err(Error::NoOutcomes);
    }
    let correct = outcomes.iter().filter(|&&hit| hit).count() as u64;
    AccuracyRecord::new(model_id, correct, outcomes.len() as u64)
}

const BISECTION_TOL: f64 = 1e-12;

/// Inverse of the regularized incomplete beta function in `x`, by bisection.
fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper-Pearson) binomial confidence interval.
///
/// The bounds are the `(1 - level) / 2` and `(1 + level) / 2` quantiles of
/// `Beta(c, n - c + 1)` and `Beta(c + 1, n - c)` respectively, with the
/// conventional endpoints 0 and 1 when `c = 0` or `c = n`.
pub fn clopper_pearson(correct: u64, total: u64, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("confidence level {level} not in (0, 1)")));
    }
    if total == 0 || correct > total {
        return Err(Error::Parameter(format!(
            "invalid counts: {correct} correct out of {total}"
        )));
    }
    let alpha = 1.0 - level;
    let (c, n) = (correct as f64, total as f64);
    let lower = if correct == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, c, n - c + 1.0)
    };
    let upper = if correct == total {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, c + 1.0, n - c)
    };
    // Keep the point estimate inside despite the bisection tolerance.
    let point = c / n;
    Ok(ConfidenceInterval {
        lower: lower.min(point),
        upper: upper.max(point),
        level,
    })
}

/// Standard normal CDF, `Φ(z) = erfc(-z / √2) / 2`.
///
/// The complementary error function keeps full relative precision in the
/// lower tail, where `Φ` is tiny.
pub fn inv_probit(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("inv_probit of non-finite value {z}")));
    }
    Ok(normal_cdf(z))
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Acklam's rational approximation to the normal quantile (relative error
// below 1.15e-9), refined below by a Newton step on Φ.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239e0,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838e0,
    -2.549_732_539_343_734e0,
    4.374_664_141_464_968e0,
    2.938_163_982_698_783e0,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996e0,
    3.754_408_661_907_416e0,
];
const P_LOW: f64 = 0.02425;

/// Initial quantile estimate for `p <= 0.5`.
fn acklam_lower(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn probit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probit of {p} outside (0, 1)")));
    }
    Ok(normal_quantile(p))
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    if p > 0.5 {
        // 1 - p is exact on [0.5, 1], so the upper half reuses the accurate
        // lower-tail branch.
        return -normal_quantile(1.0 - p);
    }
    let x = acklam_lower(p);
    x - (normal_cdf(x) - p) / normal_pdf(x)
}
