//! Test-set construction from annotated candidate pools.
//!
//! Candidates carry the number of annotators who saw them (`shown`) and the
//! number who agreed with the class label (`selected`). Three strategies
//! turn a pool into a class-balanced test set:
//!
//! * [`sample_matched`] reproduces a per-class histogram of selection
//!   frequencies over five fixed bins,
//! * [`sample_threshold`] draws uniformly among candidates at or above a
//!   frequency threshold,
//! * [`sample_top`] takes the highest-frequency candidates.
//!
//! Keyword-stratified pools use the same machinery with the keyword as the
//! class label.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::{Error, Result};

pub const NUM_BINS: usize = 5;

/// Lower edges of the frequency bins. The last bin is closed at 1.0.
pub const BIN_EDGES: [f64; NUM_BINS + 1] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub class_id: String,
    pub selected: u32,
    pub shown: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword: Option<String>,
}

impl AnnotatedImage {
    pub fn new(
        image_id: impl Into<String>,
        class_id: impl Into<String>,
        selected: u32,
        shown: u32,
    ) -> Result<Self> {
        let image = Self {
            image_id: image_id.into(),
            class_id: class_id.into(),
            selected,
            shown,
            keyword: None,
        };
        image.validate()?;
        Ok(image)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shown == 0 {
            return Err(Error::Parameter(format!(
                "image `{}` was shown to no annotators",
                self.image_id
            )));
        }
        if self.selected > self.shown {
            return Err(Error::Parameter(format!(
                "image `{}`: selected ({}) exceeds shown ({})",
                self.image_id, self.selected, self.shown
            )));
        }
        Ok(())
    }

    pub fn frequency(&self) -> f64 {
        self.selected as f64 / self.shown as f64
    }

    /// Frequency bin, computed on the exact ratio so 0.2, 0.4, 0.6 and 0.8
    /// land in the bin they open.
    pub fn bin(&self) -> usize {
        bin_index(self.selected, self.shown)
    }

    /// Exact comparison of selection frequencies.
    pub fn cmp_frequency(&self, other: &Self) -> Ordering {
        (self.selected as u64 * other.shown as u64).cmp(&(other.selected as u64 * self.shown as u64))
    }
}

pub fn bin_index(selected: u32, shown: u32) -> usize {
    debug_assert!(shown > 0 && selected <= shown);
    ((NUM_BINS as u64 * selected as u64) / shown as u64).min(NUM_BINS as u64 - 1) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionHistogram {
    pub class_id: String,
    pub bin_mass: [f64; NUM_BINS],
}

impl SelectionHistogram {
    pub fn new(class_id: impl Into<String>, bin_mass: [f64; NUM_BINS]) -> Result<Self> {
        let class_id = class_id.into();
        if bin_mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Parameter(format!(
                "class `{class_id}`: bin masses must be finite and non-negative"
            )));
        }
        let total: f64 = bin_mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "class `{class_id}`: bin masses sum to {total}, not 1"
            )));
        }
        Ok(Self { class_id, bin_mass })
    }
}

/// Normalized bin counts of the images of one class.
pub fn build_histogram(class_id: &str, images: &[AnnotatedImage]) -> Result<SelectionHistogram> {
    let mut counts = [0usize; NUM_BINS];
    for image in images.iter().filter(|im| im.class_id == class_id) {
        counts[image.bin()] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyClass(class_id.to_string()));
    }
    let mut bin_mass = [0.0; NUM_BINS];
    for (mass, count) in bin_mass.iter_mut().zip(counts) {
        *mass = count as f64 / total as f64;
    }
    Ok(SelectionHistogram {
        class_id: class_id.to_string(),
        bin_mass,
    })
}

/// Histograms of every class present in `images`.
pub fn build_histograms(images: &[AnnotatedImage]) -> Result<BTreeMap<String, SelectionHistogram>> {
    let classes: BTreeSet<&str> = images.iter().map(|im| im.class_id.as_str()).collect();
    classes
        .into_iter()
        .map(|c| Ok((c.to_string(), build_histogram(c, images)?)))
        .collect()
}

/// Largest-remainder apportionment of `n` seats over `weights`.
///
/// Every weight gets the floor of its share `n·w/Σw`; the leftover seats go
/// to the largest fractional parts, ties going to the lower index.
pub fn apportion_largest_remainder(weights: &[f64], n: usize) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Parameter("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Parameter("weights sum to zero".into()));
    }
    let shares: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    if assigned <= n {
        for &i in order.iter().take(n - assigned) {
            counts[i] += 1;
        }
    } else {
        // Rounding pushed a share over an integer; take back from the
        // smallest remainders.
        let mut excess = assigned - n;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Strategy {
    MatchedFrequency,
    Threshold { threshold: f64 },
    TopImages,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::MatchedFrequency => write!(f, "MatchedFrequency"),
            Strategy::Threshold { threshold } => write!(f, "Threshold{threshold}"),
            Strategy::TopImages => write!(f, "TopImages"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledEntry {
    pub image_id: String,
    pub class_id: String,
    pub bin_index: usize,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledDataset {
    pub entries: Vec<SampledEntry>,
    /// Entries drawn from a higher bin than their target bin.
    pub fallback_count: usize,
}

impl SampledDataset {
    pub fn fallback_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.fallback_count as f64 / self.entries.len() as f64
        }
    }

    pub fn per_class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.class_id.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Per-class achieved bin counts.
    pub fn bin_counts(&self) -> BTreeMap<&str, [usize; NUM_BINS]> {
        let mut counts: BTreeMap<&str, [usize; NUM_BINS]> = BTreeMap::new();
        for e in &self.entries {
            counts.entry(e.class_id.as_str()).or_default()[e.bin_index] += 1;
        }
        counts
    }

    /// Average selection frequency of the sampled images, looked up in `pool`.
    pub fn mean_selection_frequency(&self, pool: &[AnnotatedImage]) -> Option<f64> {
        let by_id: BTreeMap<&str, &AnnotatedImage> =
            pool.iter().map(|im| (im.image_id.as_str(), im)).collect();
        let freqs: Vec<f64> = self
            .entries
            .iter()
            .filter_map(|e| by_id.get(e.image_id.as_str()).map(|im| im.frequency()))
            .collect();
        if freqs.is_empty() {
            None
        } else {
            Some(freqs.iter().sum::<f64>() / freqs.len() as f64)
        }
    }
}

/// Groups candidates by class with each class sorted by image id, so the
/// input order never affects a draw.
fn group_by_class(candidates: &[AnnotatedImage]) -> Result<BTreeMap<&str, Vec<&AnnotatedImage>>> {
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<&str, Vec<&AnnotatedImage>> = BTreeMap::new();
    for image in candidates {
        image.validate()?;
        if !seen.insert(image.image_id.as_str()) {
            return Err(Error::Parameter(format!("duplicate image id `{}`", image.image_id)));
        }
        groups.entry(image.class_id.as_str()).or_default().push(image);
    }
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }
    Ok(groups)
}

fn entry(image: &AnnotatedImage, strategy: Strategy) -> SampledEntry {
    SampledEntry {
        image_id: image.image_id.clone(),
        class_id: image.class_id.clone(),
        bin_index: image.bin(),
        strategy: strategy.to_string(),
    }
}

fn class_rng(seed: u64, class_id: &str) -> rand_chacha::ChaCha8Rng {
    rng::substream(seed, Domain::Sampling, rng::label_key(class_id))
}

fn check_supply(class_id: &str, available: usize, requested: usize) -> Result<()> {
    if available < requested {
        return Err(Error::Shortfall {
            class: class_id.to_string(),
            available,
            requested,
        });
    }
    Ok(())
}

/// Per-bin quotas of one class, after upward fallback.
///
/// Returns `(take, fallback)`: how many images to draw from each bin, and
/// how many of those exceed that bin's own target.
pub fn matched_quotas(
    class_id: &str,
    targets: &[usize; NUM_BINS],
    supply: &[usize; NUM_BINS],
) -> Result<([usize; NUM_BINS], usize)> {
    let mut take = [0usize; NUM_BINS];
    let mut carry = 0usize;
    let mut fallback = 0usize;
    for b in 0..NUM_BINS {
        let need = targets[b] + carry;
        take[b] = need.min(supply[b]);
        fallback += take[b].saturating_sub(targets[b]);
        carry = need - take[b];
    }
    if carry > 0 {
        return Err(Error::FallbackExhausted {
            class: class_id.to_string(),
            remaining: carry,
        });
    }
    Ok((take, fallback))
}

/// Samples `n_per_class` images per class so that each class follows its
/// target selection-frequency histogram.
///
/// Bin targets are the largest-remainder apportionment of `n_per_class`
/// over the histogram. Inside a bin images are drawn uniformly without
/// replacement; a bin that runs dry passes its deficit to the next higher
/// bin.
pub fn sample_matched(
    candidates: &[AnnotatedImage],
    targets: &BTreeMap<String, SelectionHistogram>,
    n_per_class: usize,
    seed: u64,
) -> Result<SampledDataset> {
    let groups = group_by_class(candidates)?;
    let mut entries = Vec::with_capacity(groups.len() * n_per_class);
    let mut fallback_count = 0;
    for (&class_id, members) in &groups {
        let target = targets.get(class_id).ok_or_else(|| {
            Error::Parameter(format!("no target histogram for class `{class_id}`"))
        })?;
        check_supply(class_id, members.len(), n_per_class)?;

        let mut bins: [Vec<&AnnotatedImage>; NUM_BINS] = Default::default();
        for &image in members {
            bins[image.bin()].push(image);
        }
        let quotas: [usize; NUM_BINS] = apportion_largest_remainder(&target.bin_mass, n_per_class)?
            .try_into()
            .expect("five bins");
        let supply = bins.each_ref().map(Vec::len);
        let (take, fallback) = matched_quotas(class_id, &quotas, &supply)?;
        fallback_count += fallback;

        let mut rng = class_rng(seed, class_id);
        for (bin, &count) in bins.iter().zip(&take) {
            for i in index::sample(&mut rng, bin.len(), count) {
                entries.push(entry(bin[i], Strategy::MatchedFrequency));
            }
        }
    }
    Ok(SampledDataset {
        entries,
        fallback_count,
    })
}

/// Uniform sample among the candidates whose selection frequency is at
/// least `threshold`.
pub fn sample_threshold(
    candidates: &[AnnotatedImage],
    threshold: f64,
    n_per_class: usize,
    seed: u64,
) -> Result<SampledDataset> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("threshold {threshold} not in [0, 1]")));
    }
    let strategy = Strategy::Threshold { threshold };
    let groups = group_by_class(candidates)?;
    let mut entries = Vec::with_capacity(groups.len() * n_per_class);
    for (&class_id, members) in &groups {
        let qualifying: Vec<&AnnotatedImage> = members
            .iter()
            .copied()
            .filter(|im| im.frequency() >= threshold)
            .collect();
        check_supply(class_id, qualifying.len(), n_per_class)?;
        let mut rng = class_rng(seed, class_id);
        for i in index::sample(&mut rng, qualifying.len(), n_per_class) {
            entries.push(entry(qualifying[i], strategy));
        }
    }
    Ok(SampledDataset {
        entries,
        fallback_count: 0,
    })
}

/// The `n_per_class` highest-frequency images of every class, ties broken
/// by ascending image id.
pub fn sample_top(candidates: &[AnnotatedImage], n_per_class: usize) -> Result<SampledDataset> {
    let groups = group_by_class(candidates)?;
    let mut entries = Vec::with_capacity(groups.len() * n_per_class);
    for (&class_id, members) in &groups {
        check_supply(class_id, members.len(), n_per_class)?;
        let mut ranked = members.clone();
        ranked.sort_by(|a, b| b.cmp_frequency(a).then_with(|| a.image_id.cmp(&b.image_id)));
        entries.extend(ranked[..n_per_class].iter().map(|im| entry(im, Strategy::TopImages)));
    }
    Ok(SampledDataset {
        entries,
        fallback_count: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldItem {
    pub class_id: String,
    pub item_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    pub folds: Vec<Vec<FoldItem>>,
    pub warnings: Vec<String>,
}

/// Splits every class into `k` folds whose sizes differ by at most one.
///
/// Each class is shuffled on its own substream and dealt round-robin. The
/// starting fold advances with the running item count, so the folds that
/// receive a class's leftover items rotate between classes.
pub fn class_balanced_folds(
    items: &BTreeMap<String, Vec<String>>,
    k: usize,
    seed: u64,
) -> Result<Folds> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut warnings = Vec::new();
    let mut offset = 0usize;
    for (class_id, ids) in items {
        if ids.len() < k {
            warnings.push(format!(
                "class `{class_id}` has {} items, fewer than {k} folds",
                ids.len()
            ));
        }
        let mut sorted = ids.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter(format!("duplicate item in class `{class_id}`")));
        }
        let mut rng = rng::substream(seed, Domain::Folds, rng::label_key(class_id));
        let order = index::sample(&mut rng, sorted.len(), sorted.len());
        for (p, i) in order.into_iter().enumerate() {
            folds[(offset + p) % k].push(FoldItem {
                class_id: class_id.clone(),
                item_id: sorted[i].clone(),
            });
        }
        offset = (offset + sorted.len()) % k;
    }
    Ok(Folds { folds, warnings })
}
