#![allow(dead_code)]

use std::path::PathBuf;

use driftlab::io::load_testbed;
use driftlab::testbed::TestbedTable;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn cifar_percent() -> TestbedTable {
    load_testbed(&fixture("cifar10_v4_percent.csv")).unwrap()
}

pub fn cifar_counts() -> TestbedTable {
    load_testbed(&fixture("cifar10_v4_counts.csv")).unwrap()
}

pub fn imagenet_subset() -> TestbedTable {
    load_testbed(&fixture("imagenet_top1_subset.csv")).unwrap()
}

/// `model -> (orig_rank, new_rank, delta_rank)` as printed.
pub fn printed_ranks(name: &str) -> Vec<(String, usize, usize, i64)> {
    let mut rdr = csv::Reader::from_path(fixture(name)).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap())
        })
        .collect()
}
