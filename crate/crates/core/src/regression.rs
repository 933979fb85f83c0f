//! Original-vs-new accuracy fits and their bootstrap confidence regions.
//!
//! Raw-domain fits work in percent so that offsets read like the published
//! ones (`acc_new = 1.69 * acc_orig - 72.7`); probit-domain fits regress
//! `Φ⁻¹(acc_new)` on `Φ⁻¹(acc_orig)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::stats::{probit, AccuracyRecord};
use crate::{Error, Result};

/// Bootstrap replicates whose resample has a single distinct x are redrawn
/// at most this many times before the run is abandoned.
pub const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedAccuracy {
    pub model_id: String,
    pub orig: AccuracyRecord,
    pub new: AccuracyRecord,
}

impl PairedAccuracy {
    pub fn new(orig: AccuracyRecord, new: AccuracyRecord) -> Result<Self> {
        if orig.model_id != new.model_id {
            return Err(Error::Parameter(format!(
                "paired records disagree on model: `{}` vs `{}`",
                orig.model_id, new.model_id
            )));
        }
        Ok(Self {
            model_id: orig.model_id.clone(),
            orig,
            new,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitDomain {
    Raw,
    Probit,
}

impl FitDomain {
    /// Maps a record onto the regression axis: percent for raw, z-score for probit.
    pub fn coordinate(self, record: &AccuracyRecord) -> Result<f64> {
        match self {
            FitDomain::Raw => Ok(100.0 * record.point()),
            FitDomain::Probit => probit(record.point()).map_err(|_| {
                Error::Domain(format!(
                    "model `{}` has accuracy {} which has no probit value",
                    record.model_id,
                    record.point()
                ))
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FitDomain::Raw => "raw",
            FitDomain::Probit => "probit",
        }
    }
}

impl std::str::FromStr for FitDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FitDomain::Raw),
            "probit" => Ok(FitDomain::Probit),
            other => Err(Error::Parameter(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub offset: f64,
    pub domain: FitDomain,
    pub r_squared: f64,
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_mean: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.offset
    }
}

/// Ordinary least squares of `ys` on `xs`: `(slope, offset, r²)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Parameter(format!(
            "{} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Parameter("at least two points are required".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::RankDeficient);
    }
    let slope = sxy / sxx;
    let offset = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok((slope, offset, r_squared))
}

fn coordinates(pairs: &[PairedAccuracy], domain: FitDomain) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(pairs.len());
    let mut ys = Vec::with_capacity(pairs.len());
    for pair in pairs {
        xs.push(domain.coordinate(&pair.orig)?);
        ys.push(domain.coordinate(&pair.new)?);
    }
    Ok((xs, ys))
}

/// Least-squares line through the (original, new) accuracy points.
pub fn fit_linear(pairs: &[PairedAccuracy], domain: FitDomain) -> Result<LinearFit> {
    let (xs, ys) = coordinates(pairs, domain)?;
    let (slope, offset, r_squared) = ols(&xs, &ys)?;
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LinearFit {
        slope,
        offset,
        domain,
        r_squared,
        n_points: xs.len(),
        x_min,
        x_max,
        x_mean: xs.iter().sum::<f64>() / xs.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub slope_ci: Interval,
    pub offset_ci: Interval,
    pub level: f64,
    pub n_replicates: usize,
    pub seed: u64,
    /// Resamples thrown away because every drawn x was identical.
    pub redraws: usize,
    /// (slope, offset) of every replicate, in replicate order.
    #[serde(skip)]
    pub lines: Vec<(f64, f64)>,
}

/// Percentile of sorted data with linear interpolation between order
/// statistics (the "type 7" definition).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_interval(mut values: Vec<f64>, level: f64) -> Interval {
    values.sort_by(f64::total_cmp);
    Interval {
        lower: percentile_sorted(&values, (1.0 - level) / 2.0),
        upper: percentile_sorted(&values, (1.0 + level) / 2.0),
    }
}

fn replicate(xs: &[f64], ys: &[f64], seed: u64, index: u64) -> Result<(f64, f64, usize)> {
    let n = xs.len();
    let mut rng = rng::substream(seed, Domain::Bootstrap, index);
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    for redraws in 0..=MAX_REDRAWS {
        for k in 0..n {
            let i = rng.random_range(0..n);
            bx[k] = xs[i];
            by[k] = ys[i];
        }
        match ols(&bx, &by) {
            Ok((slope, offset, _)) => return Ok((slope, offset, redraws)),
            Err(Error::RankDeficient) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Parameter(format!(
        "bootstrap replicate {index} stayed degenerate after {MAX_REDRAWS} redraws"
    )))
}

/// Percentile bootstrap over models: each replicate resamples the rows with
/// replacement and refits. Replicate `r` reads only from substream `r`, so
/// the result does not depend on thread count.
pub fn bootstrap_fit(
    pairs: &[PairedAccuracy],
    domain: FitDomain,
    n_replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapBand> {
    if n_replicates < 1000 {
        return Err(Error::Parameter(format!(
            "at least 1000 bootstrap replicates are required, got {n_replicates}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("confidence level {level} not in (0, 1)")));
    }
    let (xs, ys) = coordinates(pairs, domain)?;
    // Surface degenerate input before spending the replicates.
    ols(&xs, &ys)?;

    let results: Vec<(f64, f64, usize)> = (0..n_replicates as u64)
        .into_par_iter()
        .map(|r| replicate(&xs, &ys, seed, r))
        .collect::<Result<_>>()?;

    let lines: Vec<(f64, f64)> = results.iter().map(|&(s, o, _)| (s, o)).collect();
    let redraws = results.iter().map(|&(_, _, d)| d).sum();
    Ok(BootstrapBand {
        slope_ci: percentile_interval(lines.iter().map(|l| l.0).collect(), level),
        offset_ci: percentile_interval(lines.iter().map(|l| l.1).collect(), level),
        level,
        n_replicates,
        seed,
        redraws,
        lines,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub lower: f64,
    pub point: f64,
    pub upper: f64,
    /// Set when `x` was clamped into the fitted range extended by 5% per side.
    pub clamped: bool,
}

/// Pointwise percentile envelope of the bootstrap lines at `x`.
pub fn band_at(fit: &LinearFit, band: &BootstrapBand, x: f64) -> BandPoint {
    let margin = 0.05 * (fit.x_max - fit.x_min);
    let (lo, hi) = (fit.x_min - margin, fit.x_max + margin);
    let clamped = !(lo..=hi).contains(&x);
    let x = x.clamp(lo, hi);
    let mut values: Vec<f64> = band.lines.iter().map(|&(s, o)| s * x + o).collect();
    values.sort_by(f64::total_cmp);
    let point = fit.predict(x);
    // The percentile envelope of a finite set of lines can miss the
    // full-sample line by a hair away from the centroid.
    let lower = percentile_sorted(&values, (1.0 - band.level) / 2.0).min(point);
    let upper = percentile_sorted(&values, (1.0 + band.level) / 2.0).max(point);
    BandPoint {
        x,
        lower,
        point,
        upper,
        clamped,
    }
}

/// Band evaluated on `n` evenly spaced points across the extended x-range.
pub fn band_grid(fit: &LinearFit, band: &BootstrapBand, n: usize) -> Vec<BandPoint> {
    let margin = 0.05 * (fit.x_max - fit.x_min);
    let (lo, hi) = (fit.x_min - margin, fit.x_max + margin);
    let steps = n.max(2) - 1;
    (0..=steps)
        .map(|i| {
            let x = if i == steps {
                hi
            } else {
                lo + (hi - lo) * i as f64 / steps as f64
            };
            band_at(fit, band, x)
        })
        .collect()
}
