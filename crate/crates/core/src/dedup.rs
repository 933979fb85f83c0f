//! Near-duplicate candidate generation.
//!
//! Candidates come from exact nearest-neighbor lists under three metrics:
//! ℓ2 distance between pixel vectors, ℓ2 distance between precomputed
//! embeddings, and SSIM. Pairs that pass any metric's threshold go on a
//! review list for a human to judge.

use std::collections::{BTreeMap, BinaryHeap};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_K: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub pixels: Vec<u8>,
}

/// Magic bytes of the raw image format.
///
/// Layout: 8-byte magic, then width, height and channels as little-endian
/// `u32`, then `width * height * channels` bytes, row-major with channels
/// interleaved.
pub const RAW_MAGIC: &[u8; 8] = b"DLRAW01\0";

impl ImageBuffer {
    pub fn new(
        image_id: impl Into<String>,
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "`{image_id}`: {channels} channels, expected 1 or 3"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "`{image_id}`: {} pixel values for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(Self {
            image_id,
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn load_png(path: &Path, image_id: impl Into<String>) -> Result<Self> {
        let img = image::open(path)?;
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            Self::new(image_id, w as usize, h as usize, 3, rgb.into_raw())
        } else {
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            Self::new(image_id, w as usize, h as usize, 1, gray.into_raw())
        }
    }

    pub fn read_raw(mut reader: impl Read, image_id: impl Into<String>) -> Result<Self> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != RAW_MAGIC {
            return Err(Error::Parameter("not a raw image file (bad magic)".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut word = [0u8; 4];
            reader.read_exact(&mut word)?;
            *d = u32::from_le_bytes(word) as usize;
        }
        let [width, height, channels] = dims;
        let mut pixels = vec![0u8; width * height * channels];
        reader.read_exact(&mut pixels)?;
        Self::new(image_id, width, height, channels, pixels)
    }

    pub fn write_raw(&self, mut writer: impl Write) -> Result<()> {
        writer.write_all(RAW_MAGIC)?;
        for d in [self.width, self.height, self.channels] {
            writer.write_all(&(d as u32).to_le_bytes())?;
        }
        writer.write_all(&self.pixels)?;
        Ok(())
    }

    /// Loads `.png` files with the image crate and anything else as raw.
    /// The image id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("png") => Self::load_png(path, id),
            _ => Self::read_raw(std::io::BufReader::new(std::fs::File::open(path)?), id),
        }
    }

    /// Intensities scaled to [0, 1], for pixel-space distances.
    pub fn pixel_vector(&self) -> EmbeddingVector {
        EmbeddingVector {
            image_id: self.image_id.clone(),
            values: self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub image_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    /// Distance for ℓ2 metrics, similarity for SSIM.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PixelL2,
    EmbeddingL2,
    Ssim,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::PixelL2 => "pixel_l2",
            Metric::EmbeddingL2 => "embedding_l2",
            Metric::Ssim => "ssim",
        }
    }

    /// Whether a smaller score means a closer pair.
    pub fn is_distance(self) -> bool {
        !matches!(self, Metric::Ssim)
    }

    fn closer(self, a: f64, b: f64) -> bool {
        if self.is_distance() {
            a < b
        } else {
            a > b
        }
    }
}

/// Candidate in a bounded heap; the heap top is the worst kept neighbor.
#[derive(PartialEq)]
struct Ranked {
    key: f64,
    index: usize,
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.total_cmp(&other.key).then(self.index.cmp(&other.index))
    }
}

/// Keeps the `k` smallest `(key, index)` pairs.
fn top_k(keys: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (index, key) in keys {
        heap.push(Ranked { key, index });
        if heap.len() > k {
            heap.pop();
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|r| (r.index, r.key))
        .collect()
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact k nearest references of every query by Euclidean distance.
///
/// References sharing the query's id are skipped. Equal distances keep
/// reference order.
pub fn knn_l2(
    queries: &[EmbeddingVector],
    references: &[EmbeddingVector],
    k: usize,
) -> Result<Vec<NeighborList>> {
    if k > references.len() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the {} references",
            references.len()
        )));
    }
    let Some(dim) = references.first().map(|r| r.values.len()) else {
        return Ok(queries
            .iter()
            .map(|q| NeighborList {
                query_id: q.image_id.clone(),
                neighbors: Vec::new(),
            })
            .collect());
    };
    for v in references.iter().chain(queries) {
        if v.values.len() != dim {
            return Err(Error::DimensionMismatch {
                id: v.image_id.clone(),
                expected: dim,
                found: v.values.len(),
            });
        }
    }
    Ok(queries
        .par_iter()
        .map(|q| {
            let keys = references
                .iter()
                .enumerate()
                .filter(|(_, r)| r.image_id != q.image_id)
                .map(|(i, r)| (i, squared_l2(&q.values, &r.values)));
            NeighborList {
                query_id: q.image_id.clone(),
                neighbors: top_k(keys, k)
                    .into_iter()
                    .map(|(i, d2)| Neighbor {
                        id: references[i].image_id.clone(),
                        score: d2.sqrt(),
                    })
                    .collect(),
            }
        })
        .collect())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut kernel = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    for (i, w) in kernel.iter_mut().enumerate() {
        let d = i as f64 - center;
        *w = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    kernel
}

/// Separable Gaussian filter over the "valid" region.
fn filter_valid(plane: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (width - k + 1, height - k + 1);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let line = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&line[x..x + k]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn channel(image: &ImageBuffer, c: usize) -> Vec<f64> {
    image
        .pixels
        .iter()
        .skip(c)
        .step_by(image.channels)
        .map(|&p| p as f64)
        .collect()
}

/// Mean structural similarity over 11×11 Gaussian windows (σ = 1.5), with
/// the usual stabilizers for 8-bit data, averaged over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::ShapeMismatch(format!(
            "`{}` is {}x{}x{} but `{}` is {}x{}x{}",
            a.image_id, a.width, a.height, a.channels, b.image_id, b.width, b.height, b.channels
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let kernel = gaussian_kernel();
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for c in 0..a.channels {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, w, h, &kernel);
        let mu_y = filter_valid(&y, w, h, &kernel);
        let e_xx = filter_valid(&xx, w, h, &kernel);
        let e_yy = filter_valid(&yy, w, h, &kernel);
        let e_xy = filter_valid(&xy, w, h, &kernel);
        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            sum += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / a.channels as f64)
}

/// The `k` most similar references of every query under SSIM.
pub fn knn_ssim(
    queries: &[ImageBuffer],
    references: &[ImageBuffer],
    k: usize,
) -> Result<Vec<NeighborList>> {
    if k > references.len() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the {} references",
            references.len()
        )));
    }
    queries
        .par_iter()
        .map(|q| {
            let scores = references
                .iter()
                .enumerate()
                .filter(|(_, r)| r.image_id != q.image_id)
                .map(|(i, r)| ssim(q, r).map(|s| (i, s)))
                .collect::<Result<Vec<_>>>()?;
            // Negated so that top_k keeps the largest similarities.
            let best = top_k(scores.into_iter().map(|(i, s)| (i, -s)), k);
            Ok(NeighborList {
                query_id: q.image_id.clone(),
                neighbors: best
                    .into_iter()
                    .map(|(i, neg)| Neighbor {
                        id: references[i].image_id.clone(),
                        score: -neg,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Review cut-offs per metric; `None` disables a metric.
///
/// The defaults are tuned for 32×32 RGB images (pixel distances on [0, 1]
/// intensities) and unit-normalized embeddings. They are starting points
/// for manual review, not calibrated decision rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewThresholds {
    pub pixel_l2: Option<f64>,
    pub embedding_l2: Option<f64>,
    pub ssim: Option<f64>,
}

impl Default for ReviewThresholds {
    fn default() -> Self {
        Self {
            pixel_l2: Some(6.0),
            embedding_l2: Some(0.5),
            ssim: Some(0.7),
        }
    }
}

impl ReviewThresholds {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::PixelL2 => self.pixel_l2,
            Metric::EmbeddingL2 => self.embedding_l2,
            Metric::Ssim => self.ssim,
        }
    }

    pub fn passes(&self, metric: Metric, score: f64) -> bool {
        match self.get(metric) {
            Some(t) if metric.is_distance() => score <= t,
            Some(t) => score >= t,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPair {
    /// Lexicographically smaller id of the pair.
    pub id_a: String,
    pub id_b: String,
    /// Best score of every metric that fired.
    pub hits: BTreeMap<Metric, f64>,
}

/// Union of the neighbor pairs that pass any metric's threshold, with each
/// unordered pair listed once, sorted by id.
pub fn build_review_list(
    lists: &[(Metric, Vec<NeighborList>)],
    thresholds: &ReviewThresholds,
) -> Vec<ReviewPair> {
    let mut pairs: BTreeMap<(String, String), BTreeMap<Metric, f64>> = BTreeMap::new();
    for (metric, neighbor_lists) in lists {
        for list in neighbor_lists {
            for n in &list.neighbors {
                if n.id == list.query_id || !thresholds.passes(*metric, n.score) {
                    continue;
                }
                let key = if list.query_id < n.id {
                    (list.query_id.clone(), n.id.clone())
                } else {
                    (n.id.clone(), list.query_id.clone())
                };
                pairs
                    .entry(key)
                    .or_default()
                    .entry(*metric)
                    .and_modify(|s| {
                        if metric.closer(n.score, *s) {
                            *s = n.score;
                        }
                    })
                    .or_insert(n.score);
            }
        }
    }
    pairs
        .into_iter()
        .map(|((id_a, id_b), hits)| ReviewPair { id_a, id_b, hits })
        .collect()
}
