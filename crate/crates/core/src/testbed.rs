//! Table-level analyses over a testbed of models evaluated on an original
//! and a new test set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::regression::PairedAccuracy;
use crate::sampling::{bin_index, NUM_BINS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMetric {
    Top1,
    Top5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedTable {
    pub rows: Vec<PairedAccuracy>,
    pub metric: AccuracyMetric,
    pub dataset: String,
    /// Optional model family labels (e.g. `convnet`), keyed by model id.
    #[serde(default)]
    pub families: BTreeMap<String, String>,
    /// Rows came from rounded percentages rather than raw counts.
    #[serde(default)]
    pub digitized: bool,
}

impl TestbedTable {
    pub fn new(rows: Vec<PairedAccuracy>, metric: AccuracyMetric, dataset: impl Into<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for row in &rows {
            if !seen.insert(row.model_id.as_str()) {
                return Err(Error::DuplicateModel(row.model_id.clone()));
            }
        }
        Ok(Self {
            rows,
            metric,
            dataset: dataset.into(),
            families: BTreeMap::new(),
            digitized: false,
        })
    }

    /// Rows whose family label equals `family`.
    pub fn with_family(&self, family: &str) -> Self {
        let rows = self
            .rows
            .iter()
            .filter(|r| self.families.get(&r.model_id).map(String::as_str) == Some(family))
            .cloned()
            .collect();
        Self {
            rows,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Orig,
    New,
}

/// Model ids in rank order: descending accuracy, ties by ascending id.
/// Accuracies are compared exactly as fractions.
pub fn rank_table(table: &TestbedTable, which: Column) -> Vec<String> {
    let pick = |r: &PairedAccuracy| match which {
        Column::Orig => r.orig.clone(),
        Column::New => r.new.clone(),
    };
    let mut rows: Vec<&PairedAccuracy> = table.rows.iter().collect();
    rows.sort_by(|a, b| {
        pick(b)
            .cmp_point(&pick(a))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    rows.into_iter().map(|r| r.model_id.clone()).collect()
}

fn rank_positions(order: &[String]) -> BTreeMap<String, usize> {
    order.iter().enumerate().map(|(i, id)| (id.clone(), i + 1)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankChange {
    pub model_id: String,
    pub orig_rank: usize,
    pub new_rank: usize,
    /// `orig_rank - new_rank`; negative when the model fell.
    pub delta: i64,
}

/// Rank changes between two rankings, listed in original-rank order.
pub fn delta_from_ranks(
    orig: &BTreeMap<String, usize>,
    new: &BTreeMap<String, usize>,
) -> Result<Vec<RankChange>> {
    let mut changes = orig
        .iter()
        .map(|(id, &orig_rank)| {
            let new_rank = *new.get(id).ok_or_else(|| Error::UnknownModel(id.clone()))?;
            Ok(RankChange {
                model_id: id.clone(),
                orig_rank,
                new_rank,
                delta: orig_rank as i64 - new_rank as i64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    changes.sort_by(|a, b| a.orig_rank.cmp(&b.orig_rank).then_with(|| a.model_id.cmp(&b.model_id)));
    Ok(changes)
}

pub fn delta_rank(table: &TestbedTable) -> Vec<RankChange> {
    let orig = rank_positions(&rank_table(table, Column::Orig));
    let new = rank_positions(&rank_table(table, Column::New));
    delta_from_ranks(&orig, &new).expect("both rankings cover the same models")
}

/// Telescoping split of `L_S − L_S′` (losses on the original and new test
/// sets) through the population losses `L_D` and `L_D′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDecomposition {
    /// `L_S − L_D`
    pub adaptivity_gap: f64,
    /// `L_D − L_D′`
    pub distribution_gap: f64,
    /// `L_D′ − L_S′`
    pub generalization_gap: f64,
}

impl GapDecomposition {
    pub fn total(&self) -> f64 {
        self.adaptivity_gap + self.distribution_gap + self.generalization_gap
    }
}

pub fn decompose_gap(l_s: f64, l_d: f64, l_d_prime: f64, l_s_prime: f64) -> Result<GapDecomposition> {
    for (name, v) in [("L_S", l_s), ("L_D", l_d), ("L_D'", l_d_prime), ("L_S'", l_s_prime)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Parameter(format!("{name} = {v} is not a loss in [0, 1]")));
        }
    }
    Ok(GapDecomposition {
        adaptivity_gap: l_s - l_d,
        distribution_gap: l_d - l_d_prime,
        generalization_gap: l_d_prime - l_s_prime,
    })
}

/// Mean over models of `new − orig` accuracy, as a fraction.
pub fn mean_accuracy_change(table: &TestbedTable) -> Result<f64> {
    if table.rows.is_empty() {
        return Err(Error::NoRows);
    }
    let mut diffs: Vec<f64> = table.rows.iter().map(|r| r.new.point() - r.orig.point()).collect();
    // Fixed summation order keeps the result independent of row order.
    diffs.sort_by(f64::total_cmp);
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerImageEval {
    pub image_id: String,
    pub selected: u32,
    pub shown: u32,
    /// One flag per model of the owning [`EvalSet`].
    pub correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSet {
    pub model_ids: Vec<String>,
    pub images: Vec<PerImageEval>,
}

impl EvalSet {
    pub fn new(model_ids: Vec<String>, images: Vec<PerImageEval>) -> Result<Self> {
        for im in &images {
            if im.correct.len() != model_ids.len() {
                return Err(Error::DimensionMismatch {
                    id: im.image_id.clone(),
                    expected: model_ids.len(),
                    found: im.correct.len(),
                });
            }
            if im.shown == 0 || im.selected > im.shown {
                return Err(Error::Parameter(format!(
                    "image `{}` has invalid selection counts {}/{}",
                    im.image_id, im.selected, im.shown
                )));
            }
        }
        Ok(Self { model_ids, images })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub correct: u64,
    pub total: u64,
}

impl BinAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Accuracy of one model within each selection-frequency bin. Bins without
/// images are `None`.
pub fn stratified_accuracy(evals: &EvalSet, model_id: &str) -> Result<[Option<BinAccuracy>; NUM_BINS]> {
    let j = evals
        .model_ids
        .iter()
        .position(|m| m == model_id)
        .ok_or_else(|| Error::UnknownModel(model_id.to_string()))?;
    let mut bins = [None; NUM_BINS];
    for im in &evals.images {
        let bin: &mut BinAccuracy = bins[bin_index(im.selected, im.shown)]
            .get_or_insert(BinAccuracy { correct: 0, total: 0 });
        bin.total += 1;
        bin.correct += im.correct[j] as u64;
    }
    Ok(bins)
}

/// One line of a per-model report with the columns of a results table.
/// Accuracies are percentages; intervals are absent for digitized tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub orig_rank: usize,
    pub model: String,
    pub orig_acc: f64,
    pub orig_ci_lower: Option<f64>,
    pub orig_ci_upper: Option<f64>,
    pub new_acc: f64,
    pub new_ci_lower: Option<f64>,
    pub new_ci_upper: Option<f64>,
    pub gap: f64,
    pub new_rank: usize,
    pub delta_rank: i64,
}

pub fn report(table: &TestbedTable, level: f64) -> Result<Vec<ReportRow>> {
    let by_id: BTreeMap<&str, &PairedAccuracy> =
        table.rows.iter().map(|r| (r.model_id.as_str(), r)).collect();
    delta_rank(table)
        .into_iter()
        .map(|change| {
            let row = by_id[change.model_id.as_str()];
            let (oci, nci) = if table.digitized {
                (None, None)
            } else {
                (Some(row.orig.clopper_pearson(level)?), Some(row.new.clopper_pearson(level)?))
            };
            Ok(ReportRow {
                orig_rank: change.orig_rank,
                model: change.model_id.clone(),
                orig_acc: 100.0 * row.orig.point(),
                orig_ci_lower: oci.map(|c| 100.0 * c.lower),
                orig_ci_upper: oci.map(|c| 100.0 * c.upper),
                new_acc: 100.0 * row.new.point(),
                new_ci_lower: nci.map(|c| 100.0 * c.lower),
                new_ci_upper: nci.map(|c| 100.0 * c.upper),
                gap: 100.0 * (row.orig.point() - row.new.point()),
                new_rank: change.new_rank,
                delta_rank: change.delta,
            })
        })
        .collect()
}
