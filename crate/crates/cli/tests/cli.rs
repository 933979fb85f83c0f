use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlab")).args(args).output().unwrap()
}

fn run_with_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlab"))
        .args(args)
        .env("DRIFTLAB_THREADS", threads)
        .output()
        .unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn out_dir(tmp: &tempfile::TempDir, name: &str) -> PathBuf {
    tmp.path().join(name)
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let testbed = fixture("cifar10_v4_counts.csv");
    let mut runs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let dir = out_dir(&tmp, name);
        let out = run_with_threads(
            &["bootstrap", &testbed, "--n-bootstrap", "2000", "--seed", "5", "--out-dir", dir.to_str().unwrap()],
            threads,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push((out.stdout, dir_contents(&dir)));
    }
    assert_eq!(runs[0], runs[1]);
    // The output directory is not recorded, so thread count is the only
    // difference between these runs.
    assert_eq!(runs[0], runs[2]);
    let files: Vec<&String> = runs[0].1.keys().collect();
    assert_eq!(files, ["band.tsv", "bootstrap.json", "manifest.json"]);

    let other = out_dir(&tmp, "d");
    let out = run(&["bootstrap", &testbed, "--n-bootstrap", "2000", "--seed", "6", "--out-dir", other.to_str().unwrap()]);
    assert!(out.status.success());
    assert_ne!(dir_contents(&other)["bootstrap.json"], runs[0].1["bootstrap.json"]);
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "m");
    let testbed = fixture("cifar10_v4_percent.csv");
    let out = run(&["fit", &testbed, "--domain", "probit", "--seed", "11", "--out-dir", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["command"]["fit"]["domain"], "probit");
    assert_eq!(manifest["config"]["run"]["level"], 0.95);
    assert!(manifest["rng_scheme"].as_str().unwrap().starts_with("chacha8"));
    let input_hash = driftlab::io::digest_file(Path::new(&testbed)).unwrap();
    assert_eq!(manifest["inputs"][0]["sha256"], input_hash.as_str());
    let fit_hash = driftlab::io::digest_file(&dir.join("fit.json")).unwrap();
    assert_eq!(manifest["outputs"][0]["path"], "fit.json");
    assert_eq!(manifest["outputs"][0]["sha256"], fit_hash.as_str());
}

#[test]
fn exit_codes_separate_input_and_computation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "/definitely/missing.csv"]).status.code(), Some(2));
    assert_eq!(run(&["ci", "5", "3"]).status.code(), Some(2));
    assert_eq!(run(&["ci", "5", "10", "--level", "1.5"]).status.code(), Some(2));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "model,orig_acc,new_acc\na,90.0,80.0\nb,oops,80.0\n").unwrap();
    let out = run(&["fit", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let flat = tmp.path().join("flat.csv");
    std::fs::write(&flat, "model,orig_acc,new_acc\na,50.0,40.0\nb,50.0,45.0\n").unwrap();
    assert_eq!(run(&["fit", flat.to_str().unwrap()]).status.code(), Some(3));

    let threads = run_with_threads(&["ci", "1", "2"], "zero");
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn failed_runs_leave_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let flat = tmp.path().join("flat.csv");
    std::fs::write(&flat, "model,orig_acc,new_acc\na,50.0,40.0\nb,50.0,45.0\n").unwrap();
    let dir = out_dir(&tmp, "never");
    let out = run(&["bootstrap", flat.to_str().unwrap(), "--n-bootstrap", "1000", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
    assert!(!dir.exists() || dir_contents(&dir).is_empty());
}

#[test]
fn simulated_shift_is_recovered_by_a_probit_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "sim");
    let out = run(&[
        "simulate",
        "--skills=-1.5,-1,-0.5,0,0.5,1,1.5,2,2.5,3",
        "--mu=0.5",
        "--sigma=0.8",
        "--mu-new=1.2",
        "--sigma-new=1.1",
        "--n-orig=500000",
        "--n-new=500000",
        "--seed=99",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(out.stdout, std::fs::read(dir.join("testbed.csv")).unwrap());
    let truth: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("truth.json")).unwrap()).unwrap();
    let (u, v) = (truth["shift_map"]["u"].as_f64().unwrap(), truth["shift_map"]["v"].as_f64().unwrap());

    let fit = run(&["fit", dir.join("testbed.csv").to_str().unwrap(), "--domain", "probit"]);
    let text = String::from_utf8(fit.stdout).unwrap();
    let value = |key: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
    };
    assert!((value("slope") - u).abs() <= 0.02, "{text}");
    assert!((value("offset") - v).abs() <= 0.02, "{text}");
}

#[test]
fn ranks_print_one_decimal_percentages() {
    let out = run(&["ranks", &fixture("cifar10_v4_percent.csv")]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert_eq!(first, "1,autoaug_pyramid_net_tf,98.4,,,95.5,,,2.9,1,0");
    assert_eq!(text.lines().count(), 35);
}

fn write_annotations(path: &Path) {
    let mut lines = String::new();
    for class in ["cat", "dog"] {
        for i in 0..30u32 {
            lines.push_str(&format!(
                "{{\"image_id\":\"{class}{i:02}\",\"class_id\":\"{class}\",\"selected\":{},\"shown\":10}}\n",
                i % 11
            ));
        }
    }
    std::fs::write(path, lines).unwrap();
}

#[test]
fn sample_and_bins_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let ann = tmp.path().join("ann.jsonl");
    write_annotations(&ann);
    let ann = ann.to_str().unwrap();

    let bins = run(&["bins", "--annotations", ann]);
    assert!(bins.status.success());
    let hist_path = tmp.path().join("hist.csv");
    std::fs::write(&hist_path, &bins.stdout).unwrap();
    let hist = String::from_utf8(bins.stdout).unwrap();
    assert!(hist.starts_with("class_id,bin0,bin1,bin2,bin3,bin4\n"));

    for strategy in ["matched", "threshold", "top"] {
        let out = run(&[
            "sample",
            ann,
            "--strategy",
            strategy,
            "--n-per-class",
            "6",
            "--targets",
            hist_path.to_str().unwrap(),
            "--seed",
            "4",
        ]);
        assert!(out.status.success(), "{strategy}: {}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.lines().count(), 12, "{strategy}");
        for line in text.lines() {
            let entry: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(entry["bin_index"].as_u64().unwrap() < 5);
        }
    }
    let short = run(&["sample", ann, "--strategy", "top", "--n-per-class", "31"]);
    assert_eq!(short.status.code(), Some(3));
    let no_targets = run(&["sample", ann, "--strategy", "matched", "--n-per-class", "3"]);
    assert_eq!(no_targets.status.code(), Some(2));

    let evals = tmp.path().join("evals.csv");
    std::fs::write(&evals, "image_id,selected,shown,m1,m2\na,0,5,0,1\nb,5,5,1,1\nc,4,5,1,0\n").unwrap();
    let out = run(&["bins", "--evals", evals.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "model,bin,correct,total,accuracy\nm1,0,0,1,0.0\nm1,4,2,2,100.0\nm2,0,1,1,100.0\nm2,4,1,2,50.0\n"
    );
}

#[test]
fn decompose_and_ci_outputs() {
    let out = run(&["decompose", "--l-s", "0.05", "--l-d", "0.06", "--l-d-prime", "0.15", "--l-s-prime", "0.16"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("distribution_gap -0.090000"));
    assert!(text.contains("total -0.110000"));
    let out = run(&["ci", "9000", "10000"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "[0.894, 0.906]\n");
}
