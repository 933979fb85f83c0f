mod common;

use std::collections::BTreeMap;

use common::{cifar_counts, cifar_percent, imagenet_subset, printed_ranks};
use driftlab::regression::PairedAccuracy;
use driftlab::sampling::{bin_index, NUM_BINS};
use driftlab::stats::AccuracyRecord;
use driftlab::testbed::{
    decompose_gap, delta_from_ranks, delta_rank, mean_accuracy_change, rank_table, report,
    stratified_accuracy, AccuracyMetric, Column, EvalSet, PerImageEval, TestbedTable,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn cifar_ranks_match_printed_table() {
    let printed = printed_ranks("cifar10_v4_printed_ranks.csv");
    assert_eq!(printed.len(), 34);
    let changes = delta_rank(&cifar_counts());
    assert_eq!(changes.len(), 34);
    let by_id: BTreeMap<&str, _> = changes.iter().map(|c| (c.model_id.as_str(), c)).collect();
    for (model, orig, new, delta) in &printed {
        let c = by_id[model.as_str()];
        assert_eq!((c.orig_rank, c.new_rank, c.delta), (*orig, *new, *delta), "{model}");
    }
}

#[test]
fn cifar_leader_is_the_same_in_both_forms() {
    for table in [cifar_counts(), cifar_percent()] {
        assert_eq!(rank_table(&table, Column::Orig)[0], "autoaug_pyramid_net_tf");
    }
}

#[test]
fn cifar_report_carries_intervals_only_for_counts() {
    let rows = report(&cifar_counts(), 0.95).unwrap();
    assert_eq!(rows.len(), 34);
    assert_eq!(rows[0].model, "autoaug_pyramid_net_tf");
    assert!((rows[0].orig_acc - 98.4).abs() < 1e-9);
    for r in &rows {
        let (lo, hi) = (r.new_ci_lower.unwrap(), r.new_ci_upper.unwrap());
        assert!(lo <= r.new_acc && r.new_acc <= hi);
        assert!((r.gap - (r.orig_acc - r.new_acc)).abs() < 1e-9);
    }
    let digitized = report(&cifar_percent(), 0.95).unwrap();
    assert!(digitized.iter().all(|r| r.orig_ci_lower.is_none() && r.new_ci_upper.is_none()));
}

#[test]
fn cifar_accuracy_drops_on_average() {
    let change = mean_accuracy_change(&cifar_counts()).unwrap();
    assert!(change < 0.0);
    let percent = mean_accuracy_change(&cifar_percent()).unwrap();
    assert!((change - percent).abs() < 5e-4);
}

#[test]
fn imagenet_rank_changes_follow_printed_positions() {
    // The printed ranks are positions in the full testbed, of which only a
    // subset of rows is available.
    let printed = printed_ranks("imagenet_top1_subset_printed_ranks.csv");
    let orig: BTreeMap<String, usize> = printed.iter().map(|p| (p.0.clone(), p.1)).collect();
    let new: BTreeMap<String, usize> = printed.iter().map(|p| (p.0.clone(), p.2)).collect();
    let changes = delta_from_ranks(&orig, &new).unwrap();
    let delta: BTreeMap<&str, i64> = changes.iter().map(|c| (c.model_id.as_str(), c.delta)).collect();
    assert_eq!(delta["pnasnet_large_tf"], -2);
    assert_eq!(delta["nasnetalarge"], 3);
    for (model, _, _, d) in &printed {
        assert_eq!(delta[model.as_str()], *d);
    }

    let subset = imagenet_subset();
    assert_eq!(subset.rows.len(), 8);
    assert_eq!(subset.with_family("convnet").rows.len(), 7);
    assert!(mean_accuracy_change(&subset).unwrap() < -0.08);
    let mut missing = new.clone();
    missing.remove("alexnet");
    assert!(delta_from_ranks(&orig, &missing).is_err());
}

#[test]
fn ranks_ignore_row_order() {
    let table = cifar_counts();
    let baseline = delta_rank(&table);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut rows = table.rows.clone();
        rows.shuffle(&mut rng);
        let shuffled = TestbedTable::new(rows, AccuracyMetric::Top1, "cifar10").unwrap();
        assert_eq!(delta_rank(&shuffled), baseline);
    }
}

#[test]
fn rank_deltas_sum_to_zero() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let rows = (0..n)
            .map(|i| {
                let id = format!("m{i:02}");
                PairedAccuracy::new(
                    AccuracyRecord::new(&id, rng.random_range(0..=50), 50).unwrap(),
                    AccuracyRecord::new(&id, rng.random_range(0..=20), 20).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let table = TestbedTable::new(rows, AccuracyMetric::Top5, "random").unwrap();
        let changes = delta_rank(&table);
        assert_eq!(changes.iter().map(|c| c.delta).sum::<i64>(), 0);
        let mut new_ranks: Vec<usize> = changes.iter().map(|c| c.new_rank).collect();
        new_ranks.sort();
        assert_eq!(new_ranks, (1..=n).collect::<Vec<_>>());
    }
}

proptest! {
    #[test]
    fn gap_terms_telescope(
        l_s in 0.0f64..=1.0,
        l_d in 0.0f64..=1.0,
        l_d_prime in 0.0f64..=1.0,
        l_s_prime in 0.0f64..=1.0,
    ) {
        let g = decompose_gap(l_s, l_d, l_d_prime, l_s_prime).unwrap();
        prop_assert!((g.total() - (l_s - l_s_prime)).abs() <= 1e-15);
    }
}

/// Images whose chance of being classified correctly grows with their
/// selection frequency.
fn frequency_driven_evals(rng: &mut ChaCha20Rng, n: usize, models: usize) -> EvalSet {
    let images = (0..n)
        .map(|i| {
            let shown = rng.random_range(1..=10);
            let selected = rng.random_range(0..=shown);
            let freq = selected as f64 / shown as f64;
            let correct = (0..models)
                .map(|m| rng.random::<f64>() < 0.3 + 0.5 * freq + 0.02 * m as f64)
                .collect();
            PerImageEval { image_id: format!("img{i:05}"), selected, shown, correct }
        })
        .collect();
    EvalSet::new((0..models).map(|m| format!("model{m}")).collect(), images).unwrap()
}

#[test]
fn stratified_bins_partition_the_images() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let evals = frequency_driven_evals(&mut rng, 3000, 3);
    for (j, model) in evals.model_ids.iter().enumerate() {
        let bins = stratified_accuracy(&evals, model).unwrap();
        let total: u64 = bins.iter().flatten().map(|b| b.total).sum();
        let correct: u64 = bins.iter().flatten().map(|b| b.correct).sum();
        assert_eq!(total, evals.images.len() as u64);
        assert_eq!(correct, evals.images.iter().filter(|im| im.correct[j]).count() as u64);
        for (b, bin) in bins.iter().enumerate() {
            let members = evals.images.iter().filter(|im| bin_index(im.selected, im.shown) == b).count();
            assert_eq!(bin.map_or(0, |x| x.total) as usize, members);
        }
    }
    assert!(stratified_accuracy(&evals, "nobody").is_err());
}

#[test]
fn stratified_accuracy_rises_with_frequency() {
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let evals = frequency_driven_evals(&mut rng, 50_000, 2);
    for model in &evals.model_ids {
        let acc: Vec<f64> = stratified_accuracy(&evals, model)
            .unwrap()
            .iter()
            .map(|b| b.unwrap().accuracy())
            .collect();
        assert_eq!(acc.len(), NUM_BINS);
        assert!(acc.windows(2).all(|w| w[0] < w[1]), "{acc:?}");
    }
}

#[test]
fn empty_bins_are_absent() {
    let images = vec![PerImageEval { image_id: "x".into(), selected: 5, shown: 5, correct: vec![true] }];
    let evals = EvalSet::new(vec!["m".into()], images).unwrap();
    let bins = stratified_accuracy(&evals, "m").unwrap();
    assert!(bins[..4].iter().all(Option::is_none));
    assert_eq!(bins[4].unwrap().accuracy(), 1.0);
}
