use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use driftlab::dedup::{
    build_review_list, knn_l2, knn_ssim, EmbeddingVector, ImageBuffer, Metric, NeighborList,
    ReviewThresholds,
};
use driftlab::difficulty::{shift_map, simulate_testbed, DifficultyParams, SkillSet};
use driftlab::io;
use driftlab::regression::{band_grid, bootstrap_fit, fit_linear, FitDomain, LinearFit, PairedAccuracy};
use driftlab::rng::label_key;
use driftlab::sampling::{
    build_histograms, sample_matched, sample_threshold, sample_top, AnnotatedImage, NUM_BINS,
};
use driftlab::stats::clopper_pearson;
use driftlab::testbed::{decompose_gap, report, stratified_accuracy, AccuracyMetric, TestbedTable};
use serde::Serialize;

use crate::output::Outputs;
use crate::{
    BinsArgs, BootstrapArgs, CiArgs, DecomposeArgs, DedupArgs, DomainArg, FitArgs, RanksArgs,
    RunConfig, SampleArgs, SimulateArgs, StrategyArg, TestbedArgs,
};

impl From<DomainArg> for FitDomain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Raw => FitDomain::Raw,
            DomainArg::Probit => FitDomain::Probit,
        }
    }
}

fn load_table(args: &TestbedArgs, out: &mut Outputs) -> Result<TestbedTable> {
    let bytes = out.read_input(&args.testbed)?;
    let dataset = args
        .testbed
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let table = io::parse_testbed(bytes.as_slice(), &dataset)
        .with_context(|| format!("loading {}", args.testbed.display()))?;
    match &args.family {
        Some(family) => {
            let subset = table.with_family(family);
            if subset.rows.is_empty() {
                bail!("no models of family `{family}` in {}", args.testbed.display());
            }
            Ok(subset)
        }
        None => Ok(table),
    }
}

fn describe_fit(fit: &LinearFit, out: &mut Outputs) {
    out.print(format!("domain {}", fit.domain.name()));
    out.print(format!("models {}", fit.n_points));
    out.print(format!("slope {:.4}", fit.slope));
    out.print(format!("offset {:.4}", fit.offset));
    out.print(format!("r_squared {:.4}", fit.r_squared));
}

pub fn fit(args: &FitArgs, out: &mut Outputs) -> Result<()> {
    let table = load_table(&args.input, out)?;
    let fit = fit_linear(&table.rows, args.domain.into())?;
    describe_fit(&fit, out);
    out.json("fit.json", &fit)
}

#[derive(Serialize)]
struct BootstrapReport<'a> {
    fit: &'a LinearFit,
    band: &'a driftlab::regression::BootstrapBand,
}

pub fn bootstrap(args: &BootstrapArgs, run: &RunConfig, out: &mut Outputs) -> Result<()> {
    if args.grid < 2 {
        bail!("--grid needs at least 2 points");
    }
    let table = load_table(&args.input, out)?;
    let domain = args.domain.into();
    let fit = fit_linear(&table.rows, domain)?;
    let band = bootstrap_fit(&table.rows, domain, args.n_bootstrap, run.level, run.seed)?;
    describe_fit(&fit, out);
    out.print(format!(
        "slope_ci [{:.4}, {:.4}]",
        band.slope_ci.lower, band.slope_ci.upper
    ));
    out.print(format!(
        "offset_ci [{:.4}, {:.4}]",
        band.offset_ci.lower, band.offset_ci.upper
    ));
    out.print(format!("replicates {} level {}", band.n_replicates, band.level));
    out.json("bootstrap.json", &BootstrapReport { fit: &fit, band: &band })?;
    let mut tsv = Vec::new();
    io::write_band_tsv(&band_grid(&fit, &band, args.grid), &mut tsv)?;
    out.file("band.tsv", tsv);
    Ok(())
}

pub fn decompose(args: &DecomposeArgs, out: &mut Outputs) -> Result<()> {
    let gap = decompose_gap(args.l_s, args.l_d, args.l_d_prime, args.l_s_prime)?;
    out.print(format!("adaptivity_gap {:.6}", gap.adaptivity_gap));
    out.print(format!("distribution_gap {:.6}", gap.distribution_gap));
    out.print(format!("generalization_gap {:.6}", gap.generalization_gap));
    out.print(format!("total {:.6}", gap.total()));
    out.json("decomposition.json", &gap)
}

pub fn ranks(args: &RanksArgs, run: &RunConfig, out: &mut Outputs) -> Result<()> {
    let table = load_table(&args.input, out)?;
    let rows = report(&table, run.level)?;
    let mut csv = Vec::new();
    io::write_report(&rows, &mut csv)?;
    out.print_bytes(&csv);
    out.file("report.csv", csv);
    Ok(())
}

#[derive(Serialize)]
struct SimulationTruth {
    orig: DifficultyParams,
    new: DifficultyParams,
    skills: Vec<f64>,
    shift_map: driftlab::difficulty::ShiftMap,
}

pub fn simulate(args: &SimulateArgs, run: &RunConfig, out: &mut Outputs) -> Result<()> {
    let skills = SkillSet::new(args.skills.clone())?;
    let orig_params = DifficultyParams::new(args.mu, args.sigma)?;
    let new_params = DifficultyParams::new(args.mu_new, args.sigma_new)?;
    // The two test sets draw from unrelated substream families.
    let orig = simulate_testbed(&skills, &orig_params, args.n_orig, run.seed ^ label_key("orig"))?;
    let new = simulate_testbed(&skills, &new_params, args.n_new, run.seed ^ label_key("new"))?;
    let rows = orig
        .into_iter()
        .zip(new)
        .map(|(o, n)| PairedAccuracy::new(o, n))
        .collect::<driftlab::Result<Vec<_>>>()?;
    let table = TestbedTable::new(rows, AccuracyMetric::Top1, "simulated")?;
    let mut csv = Vec::new();
    io::write_testbed(&table, &mut csv)?;
    out.print_bytes(&csv);
    out.file("testbed.csv", csv);
    out.json(
        "truth.json",
        &SimulationTruth {
            orig: orig_params,
            new: new_params,
            skills: skills.skills,
            shift_map: shift_map(&orig_params, &new_params),
        },
    )
}

fn load_annotations(path: &Path, out: &mut Outputs) -> Result<Vec<AnnotatedImage>> {
    let bytes = out.read_input(path)?;
    io::parse_annotations(bytes.as_slice()).with_context(|| format!("loading {}", path.display()))
}

#[derive(Serialize)]
struct SampleSummary {
    strategy: String,
    entries: usize,
    fallback_count: usize,
    fallback_fraction: f64,
    mean_selection_frequency: Option<f64>,
}

pub fn sample(args: &SampleArgs, run: &RunConfig, out: &mut Outputs) -> Result<()> {
    let candidates = load_annotations(&args.candidates, out)?;
    let dataset = match args.strategy {
        StrategyArg::Matched => {
            let targets = if let Some(path) = &args.targets {
                let bytes = out.read_input(path)?;
                io::parse_histograms(bytes.as_slice())
                    .with_context(|| format!("loading {}", path.display()))?
            } else if let Some(path) = &args.reference {
                build_histograms(&load_annotations(path, out)?)?
            } else {
                bail!("`--strategy matched` needs --targets or --reference");
            };
            sample_matched(&candidates, &targets, args.n_per_class, run.seed)?
        }
        StrategyArg::Threshold => sample_threshold(&candidates, args.threshold, args.n_per_class, run.seed)?,
        StrategyArg::Top => sample_top(&candidates, args.n_per_class)?,
    };
    let mut jsonl = Vec::new();
    io::write_dataset_manifest(&dataset, &mut jsonl)?;
    out.print_bytes(&jsonl);
    out.file("dataset.jsonl", jsonl);
    let summary = SampleSummary {
        strategy: dataset
            .entries
            .first()
            .map(|e| e.strategy.clone())
            .unwrap_or_default(),
        entries: dataset.entries.len(),
        fallback_count: dataset.fallback_count,
        fallback_fraction: dataset.fallback_fraction(),
        mean_selection_frequency: dataset.mean_selection_frequency(&candidates),
    };
    eprintln!(
        "sampled {} images, fallback fraction {:.4}",
        summary.entries, summary.fallback_fraction
    );
    out.json("summary.json", &summary)
}

pub fn bins(args: &BinsArgs, out: &mut Outputs) -> Result<()> {
    if let Some(path) = &args.annotations {
        let histograms = build_histograms(&load_annotations(path, out)?)?;
        let mut csv = Vec::new();
        io::write_histograms(&histograms, &mut csv)?;
        out.print_bytes(&csv);
        out.file("histograms.csv", csv);
    }
    if let Some(path) = &args.evals {
        let bytes = out.read_input(path)?;
        let evals = io::parse_evals(bytes.as_slice()).with_context(|| format!("loading {}", path.display()))?;
        let mut text = String::from("model,bin,correct,total,accuracy\n");
        for model in &evals.model_ids {
            let bins = stratified_accuracy(&evals, model)?;
            for (b, bin) in bins.iter().enumerate().take(NUM_BINS) {
                if let Some(bin) = bin {
                    text.push_str(&format!(
                        "{model},{b},{},{},{:.1}\n",
                        bin.correct,
                        bin.total,
                        100.0 * bin.accuracy()
                    ));
                }
            }
        }
        out.print(&text);
        out.file("stratified.csv", text.into_bytes());
    }
    Ok(())
}

fn load_image_dir(dir: &Path, out: &mut Outputs) -> Result<Vec<ImageBuffer>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = std::fs::read(&path)?;
        out.record_input(&path, &bytes);
        images.push(ImageBuffer::load(&path).with_context(|| format!("loading {}", path.display()))?);
    }
    Ok(images)
}

fn load_embedding_file(path: &Path, out: &mut Outputs) -> Result<Vec<EmbeddingVector>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    out.record_input(path, &bytes);
    io::load_embeddings(path).with_context(|| format!("loading {}", path.display()))
}

/// `k` capped at the reference count.
fn effective_k(k: usize, n_refs: usize) -> usize {
    k.min(n_refs)
}

pub fn dedup(args: &DedupArgs, out: &mut Outputs) -> Result<()> {
    if args.images.is_none() && args.embeddings.is_none() {
        bail!("dedup needs --images, --embeddings or both");
    }
    let mut lists: Vec<(Metric, Vec<NeighborList>)> = Vec::new();
    if let Some(dir) = &args.images {
        let queries = load_image_dir(dir, out)?;
        let refs = match &args.reference_images {
            Some(r) => load_image_dir(r, out)?,
            None => queries.clone(),
        };
        let k = effective_k(args.k, refs.len());
        let qv: Vec<EmbeddingVector> = queries.iter().map(ImageBuffer::pixel_vector).collect();
        let rv: Vec<EmbeddingVector> = refs.iter().map(ImageBuffer::pixel_vector).collect();
        lists.push((Metric::PixelL2, knn_l2(&qv, &rv, k)?));
        if !args.no_ssim {
            lists.push((Metric::Ssim, knn_ssim(&queries, &refs, k)?));
        }
    }
    if let Some(path) = &args.embeddings {
        let queries = load_embedding_file(path, out)?;
        let refs = match &args.reference_embeddings {
            Some(r) => load_embedding_file(r, out)?,
            None => queries.clone(),
        };
        lists.push((Metric::EmbeddingL2, knn_l2(&queries, &refs, effective_k(args.k, refs.len()))?));
    }
    let thresholds = ReviewThresholds {
        pixel_l2: Some(args.pixel_l2),
        embedding_l2: Some(args.embedding_l2),
        ssim: (!args.no_ssim).then_some(args.ssim_min),
    };
    let review = build_review_list(&lists, &thresholds);
    let mut csv = Vec::new();
    io::write_review_list(&review, &mut csv)?;
    out.print_bytes(&csv);
    out.file("review.csv", csv);
    let per_metric: BTreeMap<&str, usize> = lists
        .iter()
        .map(|(m, _)| (m.name(), review.iter().filter(|p| p.hits.contains_key(m)).count()))
        .collect();
    eprintln!("{} candidate pairs {per_metric:?}", review.len());
    Ok(())
}

pub fn ci(args: &CiArgs, run: &RunConfig, out: &mut Outputs) -> Result<()> {
    let interval = clopper_pearson(args.correct, args.total, run.level)?;
    out.print(format!("[{:.3}, {:.3}]", interval.lower, interval.upper));
    out.json("ci.json", &interval)
}
