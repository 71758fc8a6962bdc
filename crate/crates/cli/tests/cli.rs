use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mos_core::io::{load_features, read_partition, read_scores, FeatureFormat};
use mos_core::metrics::evaluate;
use mos_core::synthbench::{gen_benchmark, BenchConfig};
use mos_core::LabelSpace;
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--set",
    "bench.train_per_class=30",
    "--set",
    "bench.test_per_class=10",
    "--set",
    "bench.n_ood=100",
    "--set",
    "train.steps=200",
];

fn mos(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mos")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = mos(dir, args);
    assert!(o.status.success(), "mos {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    mos(dir, args).status.code().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Benchmark in `b`, grouped head in `tg`, flat head in `tf`.
fn pipeline(dir: &Path) {
    ok(dir, &with_small(&["gen", "--out", "b"]));
    ok(dir, &with_small(&["train", "--out", "tg", "--set", "train.features=b/train.oodf", "--set", "train.partition=b/partition.txt"]));
    ok(dir, &with_small(&["train", "--out", "tf", "--set", "train.features=b/train.oodf"]));
}

#[test]
fn gen_writes_reloadable_files_and_resolved_config() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &with_small(&["gen", "--out", "b", "--seed", "3"]));
    let b = t.path().join("b");
    let train = load_features(b.join("train.oodf"), FeatureFormat::Binary).unwrap();
    let cfg = BenchConfig { train_per_class: 30, test_per_class: 10, n_ood: 100, seed: 3, ..Default::default() };
    let bench = gen_benchmark(&cfg).unwrap();
    assert_eq!(train.labels(), bench.train.labels());
    let diff = (&train.features() - &bench.train.features()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(diff < 1e-5, "float32 storage error {diff}");
    let ood = load_features(b.join("test_ood.oodf"), FeatureFormat::Binary).unwrap();
    assert_eq!(ood.len(), 100);
    let p = read_partition(b.join("partition.txt"), train.label_space()).unwrap();
    assert!(p.same_grouping(&bench.true_partition));
    let resolved = fs::read_to_string(b.join("config.resolved.ini")).unwrap();
    assert!(resolved.contains("seed = 3"));
    assert!(resolved.contains("train_per_class = 30"));
}

#[test]
fn gen_csv_format() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &with_small(&["gen", "--out", "b", "--set", "bench.format=csv"]));
    let ds = load_features(t.path().join("b/test_in.csv"), FeatureFormat::Csv).unwrap();
    assert_eq!(ds.len(), 200);
}

#[test]
fn config_file_and_overrides() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("run.ini"), "seed = 4\nout = fromfile\n[bench]\ndim = 5\ntrain_per_class = 10\ntest_per_class = 2\nn_ood = 10\n").unwrap();
    ok(t.path(), &["gen", "--config", "run.ini", "--set", "bench.dim=6"]);
    let ds = load_features(t.path().join("fromfile/train.oodf"), FeatureFormat::Binary).unwrap();
    assert_eq!(ds.dim(), 6);
    let resolved = fs::read_to_string(t.path().join("fromfile/config.resolved.ini")).unwrap();
    assert!(resolved.contains("seed = 4") && resolved.contains("dim = 6"));
    // the resolved config reproduces the run
    fs::copy(t.path().join("fromfile/config.resolved.ini"), t.path().join("again.ini")).unwrap();
    ok(t.path(), &["gen", "--config", "again.ini", "--out", "again"]);
    assert_eq!(bytes(t.path().join("fromfile/train.oodf")), bytes(t.path().join("again/train.oodf")));
}

#[test]
fn validation_errors_exit_2() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(code(d, &["gen", "--out", "x", "--set", "bench.num_blobs=0"]), 2);
    assert_eq!(code(d, &["gen", "--out", "x", "--set", "bench.bogus=1"]), 2);
    assert_eq!(code(d, &["gen", "--out", "x", "--set", "bench.dim=abc"]), 2);
    fs::write(d.join("bad.ini"), "[bench]\nunknown_key = 1\n").unwrap();
    assert_eq!(code(d, &["gen", "--config", "bad.ini"]), 2);
    assert_eq!(code(d, &["train", "--out", "x"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
}

#[test]
fn runtime_failures_exit_1() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(t.path(), &["train", "--out", "x", "--set", "train.features=missing.oodf"]), 1);
}

#[test]
fn group_strategies() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    ok(d, &with_small(&["gen", "--out", "b", "--set", "bench.num_blobs=2"]));
    ok(d, &["group", "--out", "r", "--set", "group.strategy=random", "--set", "group.k=2", "--set", "group.features=b/train.oodf"]);
    let labels = LabelSpace::indexed(10).unwrap();
    let p = read_partition(d.join("r/partition.txt"), &labels).unwrap();
    assert_eq!(p.group_sizes(), vec![5, 5]);

    ok(d, &with_small(&["gen", "--out", "b4"]));
    ok(d, &["group", "--out", "c", "--set", "group.k=4", "--set", "group.features=b4/train.oodf"]);
    let labels = LabelSpace::indexed(20).unwrap();
    let found = read_partition(d.join("c/partition.txt"), &labels).unwrap();
    let truth = read_partition(d.join("b4/partition.txt"), &labels).unwrap();
    assert!(found.same_grouping(&truth));

    let tax: String = (0..9).map(|c| format!("class_{c}\tg{}\n", c % 2)).collect();
    fs::write(d.join("tax.tsv"), tax).unwrap();
    let args = ["group", "--out", "x", "--set", "group.strategy=taxonomy", "--set", "group.taxonomy=tax.tsv", "--set", "group.features=b/train.oodf"];
    assert_eq!(code(d, &args), 2);
    let tax: String = (0..10).map(|c| format!("class_{c}\tg{}\n", c % 2)).collect();
    fs::write(d.join("tax.tsv"), tax).unwrap();
    ok(d, &args);
}

#[test]
fn train_log_is_finite_and_checkpoints_score() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    pipeline(d);
    for run in ["tg", "tf"] {
        let log = fs::read_to_string(d.join(run).join("train_log.csv")).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next(), Some("step,lr,loss,accuracy"));
        let mut rows = 0;
        for l in lines {
            let loss: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
            assert!(loss.is_finite());
            rows += 1;
        }
        assert!(rows > 0);
    }
    let inputs = "score.inputs=b/test_in.oodf,b/test_ood.oodf";
    ok(d, &["score", "--out", "sg", "--set", "score.checkpoint=tg/head.oodh", "--set", inputs]);
    for f in ["test_in", "test_ood"] {
        let s = read_scores(d.join(format!("sg/{f}.mos.csv"))).unwrap();
        assert!(s.values().iter().all(|&v| (-1.0..=0.0).contains(&v)));
    }
    ok(d, &["score", "--out", "sf", "--set", "score.checkpoint=tf/head.oodh", "--set", inputs, "--set", "score.train_features=b/train.oodf"]);
    for m in ["msp", "energy", "odin", "mahalanobis", "kl_matching"] {
        assert!(d.join(format!("sf/test_in.{m}.csv")).exists(), "{m}");
    }
    assert!(!d.join("sf/test_in.mos.csv").exists());
    let msp = read_scores(d.join("sf/test_ood.msp.csv")).unwrap();
    assert!(msp.values().iter().all(|&v| v > 0.0 && v <= 1.0));

    let mos_on_flat = ["score", "--out", "x", "--set", "score.checkpoint=tf/head.oodh", "--set", "score.methods=mos", "--set", inputs];
    assert_eq!(code(d, &mos_on_flat), 2);
}

#[test]
fn eval_matches_library() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    pipeline(d);
    ok(d, &["score", "--out", "s", "--set", "score.checkpoint=tg/head.oodh", "--set", "score.inputs=b/test_in.oodf,b/test_ood.oodf"]);
    ok(d, &["eval", "--out", "e", "--set", "eval.in_scores=s/test_in.mos.csv", "--set", "eval.out_scores=s/test_ood.mos.csv"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e/report.json")).unwrap()).unwrap();
    let i = read_scores(d.join("s/test_in.mos.csv")).unwrap();
    let o = read_scores(d.join("s/test_ood.mos.csv")).unwrap();
    let r = evaluate(i.values(), o.values()).unwrap();
    assert_eq!(v["auroc"].as_f64().unwrap(), r.auroc);
    assert_eq!(v["fpr95"].as_f64().unwrap(), r.fpr95);
    assert_eq!(v["aupr"].as_f64().unwrap(), r.aupr);
    let roc = fs::read_to_string(d.join("e/roc.csv")).unwrap();
    assert_eq!(roc.lines().next(), Some("threshold,tpr,fpr"));
    assert_eq!(roc.lines().count(), r.curve.unwrap().points().len() + 1);
}

#[test]
fn eval_degenerate_files() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    fs::write(d.join("hi.csv"), "sample_index,method,score\n0,msp,0.9\n1,msp,0.8\n").unwrap();
    fs::write(d.join("lo.csv"), "sample_index,method,score\n0,msp,0.1\n1,msp,0.2\n").unwrap();
    fs::write(d.join("other.csv"), "sample_index,method,score\n0,energy,0.1\n").unwrap();
    ok(d, &["eval", "--out", "e", "--set", "eval.in_scores=hi.csv", "--set", "eval.out_scores=lo.csv"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e/report.json")).unwrap()).unwrap();
    assert_eq!((v["auroc"].as_f64(), v["fpr95"].as_f64(), v["aupr"].as_f64()), (Some(1.0), Some(0.0), Some(1.0)));
    ok(d, &["eval", "--out", "e2", "--set", "eval.in_scores=hi.csv", "--set", "eval.out_scores=hi.csv"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e2/report.json")).unwrap()).unwrap();
    assert_eq!(v["auroc"].as_f64(), Some(0.5));
    assert_eq!(code(d, &["eval", "--out", "e3", "--set", "eval.in_scores=hi.csv", "--set", "eval.out_scores=other.csv"]), 2);
}

#[test]
fn gen_and_train_are_bitwise_deterministic() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    for run in ["one", "two"] {
        ok(d, &with_small(&["gen", "--out", &format!("{run}/b"), "--seed", "5"]));
        let feats = format!("train.features={run}/b/train.oodf");
        let part = format!("train.partition={run}/b/partition.txt");
        ok(d, &with_small(&["train", "--out", &format!("{run}/t"), "--seed", "5", "--set", &feats, "--set", &part]));
    }
    for f in ["b/train.oodf", "b/test_in.oodf", "b/test_ood.oodf", "b/partition.txt", "t/head.oodh", "t/train_log.csv"] {
        assert_eq!(bytes(d.join("one").join(f)), bytes(d.join("two").join(f)), "{f}");
    }
    ok(d, &with_small(&["gen", "--out", "three", "--seed", "6"]));
    assert_ne!(bytes(d.join("one/b/train.oodf")), bytes(d.join("three/train.oodf")));
}

fn ablate_small(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = ["ablate", "--set", "bench.train_per_class=20", "--set", "bench.test_per_class=5", "--set", "bench.n_ood=50", "--set", "train.steps=100"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_strings(dir: &Path, args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(dir, &refs)
}

#[test]
fn scaling_sweep_rows_and_determinism() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    let args = |out: &str| ablate_small(&["--out", out, "--set", "ablate.class_counts=10,40,160", "--set", "ablate.seeds=1,2"]);
    run_strings(d, &args("a"));
    run_strings(d, &args("b"));
    let csv = fs::read_to_string(d.join("a/scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
    assert_eq!(bytes(d.join("a/scaling.csv")), bytes(d.join("b/scaling.csv")));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/scaling.json")).unwrap()).unwrap();
    assert!(side["timestamp_unix"].as_u64().is_some());
    assert_eq!(side["rows"].as_u64(), Some(12));
}

fn taxonomy_files(dir: &Path) -> Vec<PathBuf> {
    [2usize, 4, 8]
        .iter()
        .map(|&k| {
            let p = dir.join(format!("tax{k}.tsv"));
            let text: String = (0..20).map(|c| format!("class_{c}\tg{}\n", c * k / 20)).collect();
            fs::write(&p, text).unwrap();
            p
        })
        .collect()
}

#[test]
fn grouping_ablation_rows_resume_and_determinism() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    let tax: Vec<String> = taxonomy_files(d).iter().map(|p| p.display().to_string()).collect();
    let tax_set = format!("ablate.taxonomies={}", tax.join(","));
    let args = |out: &str, resume: bool| {
        let mut extra = vec![
            "--out",
            out,
            "--set",
            "ablate.experiment=grouping",
            "--set",
            "ablate.strategies=taxonomy,cluster,random",
            "--set",
            &tax_set,
        ];
        if resume {
            extra.push("--resume");
        }
        ablate_small(&extra)
    };
    let first = run_strings(d, &args("full", false));
    assert!(first.contains("ran 45 jobs, reused 0"), "{first}");
    let csv = fs::read_to_string(d.join("full/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 46);

    // interrupted run: keep a journal prefix, then resume
    run_strings(d, &args("part", false));
    let journal = fs::read_to_string(d.join("part/journal.jsonl")).unwrap();
    let kept: String = journal.lines().take(17).map(|l| format!("{l}\n")).collect();
    fs::write(d.join("part/journal.jsonl"), kept + "{\"torn").unwrap();
    fs::remove_file(d.join("part/ablation.csv")).unwrap();
    let resumed = run_strings(d, &args("part", true));
    assert!(resumed.contains("ran 28 jobs, reused 17"), "{resumed}");
    assert_eq!(bytes(d.join("full/ablation.csv")), bytes(d.join("part/ablation.csv")));

    // a changed config invalidates the journal
    let mut changed = args("part", true);
    changed.extend(["--set".to_string(), "train.steps=101".to_string()]);
    let out = run_strings(d, &changed);
    assert!(out.contains("reused 0"), "{out}");
}

#[test]
fn ablate_validation() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    let refs = |v: Vec<String>| code(d, &v.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(refs(ablate_small(&["--out", "x", "--set", "ablate.class_counts=40,10"])), 2);
    assert_eq!(refs(ablate_small(&["--out", "x", "--set", "ablate.regime=fixed_total", "--set", "ablate.budget=20"])), 2);
    assert_eq!(refs(ablate_small(&["--out", "x", "--set", "ablate.experiment=grouping", "--set", "ablate.k_values=21"])), 2);
    assert_eq!(refs(ablate_small(&["--out", "x", "--set", "ablate.experiment=grouping", "--set", "ablate.strategies=taxonomy"])), 2);
}
