use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mos_core::classifier::train;
use mos_core::grouping::{cluster_partition_with, random_partition, taxonomy_label_space, taxonomy_partition, KMeansConfig};
use mos_core::io::{load_features, read_partition, read_scores, save_features, write_partition, write_roc, write_scores, FeatureFormat};
use mos_core::metrics::evaluate;
use mos_core::scoring::{OdinParams, Ridge, ScoreParams, Scorer};
use mos_core::synthbench::{gen_benchmark, BenchConfig, OodSpec};
use mos_core::{FeatureDataset, GroupPartition, LabelSpace, LinearHead, Method, TrainConfig};

use crate::config::{bail_config, ConfigError, RunConfig};

pub fn bench_config(cfg: &RunConfig) -> Result<BenchConfig, ConfigError> {
    let b = "bench";
    let ood = match cfg.raw(b, "ood") {
        "annulus" => OodSpec::Annulus { r_min: cfg.get(b, "ood_r_min")?, r_max: cfg.get(b, "ood_r_max")? },
        "distant_blobs" => OodSpec::DistantBlobs { count: cfg.get(b, "ood_count")?, radius: cfg.get(b, "ood_radius")? },
        "in_distribution" => OodSpec::InDistribution,
        other => {
            return Err(ConfigError(format!(
                "bench.ood = {other:?}: expected annulus, distant_blobs or in_distribution"
            )))
        }
    };
    let c = BenchConfig {
        dim: cfg.get(b, "dim")?,
        num_blobs: cfg.get(b, "num_blobs")?,
        classes_per_blob: cfg.get(b, "classes_per_blob")?,
        num_classes: cfg.opt(b, "num_classes")?,
        train_per_class: cfg.get(b, "train_per_class")?,
        test_per_class: cfg.get(b, "test_per_class")?,
        blob_center_radius: cfg.get(b, "blob_center_radius")?,
        class_offset_scale: cfg.get(b, "class_offset_scale")?,
        class_std: cfg.get(b, "class_std")?,
        ood,
        n_ood: cfg.get(b, "n_ood")?,
        seed: cfg.seed()?,
    };
    c.validate().map_err(unwrap_config)?;
    Ok(c)
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig, ConfigError> {
    let t = "train";
    let c = TrainConfig {
        steps: cfg.get(t, "steps")?,
        batch_size: cfg.get(t, "batch_size")?,
        base_lr: cfg.get(t, "base_lr")?,
        momentum: cfg.get(t, "momentum")?,
        decay_milestones: cfg.list(t, "decay_milestones")?,
        decay_factor: cfg.get(t, "decay_factor")?,
        warmup_steps: cfg.get(t, "warmup_steps")?,
        seed: cfg.seed()?,
        weight_decay: cfg.get(t, "weight_decay")?,
        log_every: cfg.get(t, "log_every")?,
    };
    c.validate().map_err(unwrap_config)?;
    Ok(c)
}

fn score_params(cfg: &RunConfig) -> Result<ScoreParams, ConfigError> {
    let s = "score";
    let ridge = match cfg.raw(s, "mahalanobis_ridge").split_once(':') {
        Some(("relative", v)) => Ridge::RelativeTrace(parse_f64(v)?),
        Some(("absolute", v)) => Ridge::Absolute(parse_f64(v)?),
        _ => bail_config!("score.mahalanobis_ridge must be relative:<x> or absolute:<x>"),
    };
    Ok(ScoreParams {
        energy_temperature: cfg.get(s, "energy_temperature")?,
        odin: OdinParams { temperature: cfg.get(s, "odin_temperature")?, epsilon: cfg.get(s, "odin_epsilon")? },
        ridge,
    })
}

fn unwrap_config(e: mos_core::Error) -> ConfigError {
    match e {
        mos_core::Error::Config(m) => ConfigError(m),
        e => ConfigError(e.to_string()),
    }
}

fn parse_f64(v: &str) -> Result<f64, ConfigError> {
    v.trim().parse().map_err(|_| ConfigError(format!("bad number {v:?}")))
}

fn features(path: &Path) -> Result<FeatureDataset> {
    Ok(load_features(path, FeatureFormat::from_path(path))?)
}

pub fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

pub fn gen(cfg: &RunConfig) -> Result<()> {
    let bc = bench_config(cfg)?;
    let format: FeatureFormat = cfg.get("bench", "format")?;
    let bench = gen_benchmark(&bc)?;
    let out = prepare_out(cfg)?;
    let ext = match format {
        FeatureFormat::Binary => "oodf",
        FeatureFormat::Csv => "csv",
    };
    let labels = bench.train.label_space().clone();
    save_features(out.join(format!("train.{ext}")), &bench.train, format)?;
    save_features(out.join(format!("test_in.{ext}")), &bench.test_in, format)?;
    // OOD rows carry a placeholder label of 0
    let n = bench.test_ood.nrows();
    let ood = FeatureDataset::new(bench.test_ood, vec![0; n], labels.clone())?;
    save_features(out.join(format!("test_ood.{ext}")), &ood, format)?;
    write_partition(out.join("partition.txt"), &bench.true_partition, &labels)?;
    println!("wrote benchmark with {} classes to {}", labels.num_classes(), out.display());
    Ok(())
}

pub fn group(cfg: &RunConfig) -> Result<()> {
    let g = "group";
    let seed = cfg.seed()?;
    let k: usize = cfg.get(g, "k")?;
    let features_path = cfg.opt::<PathBuf>(g, "features")?;
    let (partition, labels): (GroupPartition, LabelSpace) = match cfg.raw(g, "strategy") {
        "taxonomy" => {
            let tax = cfg.path(g, "taxonomy")?;
            let labels = match &features_path {
                Some(p) => features(p)?.label_space().clone(),
                None => taxonomy_label_space(&tax)?,
            };
            (taxonomy_partition(&tax, &labels)?, labels)
        }
        "cluster" => {
            let ds = features(&cfg.path(g, "features")?)?;
            let km = KMeansConfig { restarts: cfg.get(g, "kmeans_restarts")?, ..KMeansConfig::default() };
            (cluster_partition_with(&ds, k, seed, &km)?, ds.label_space().clone())
        }
        "random" => {
            let ds = features(&cfg.path(g, "features")?)?;
            (random_partition(ds.label_space(), k, seed)?, ds.label_space().clone())
        }
        other => bail_config!("group.strategy = {other:?}: expected taxonomy, cluster or random"),
    };
    let out = prepare_out(cfg)?;
    write_partition(out.join("partition.txt"), &partition, &labels)?;
    println!("wrote {} groups to {}", partition.num_groups(), out.join("partition.txt").display());
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let tc = train_config(cfg)?;
    let ds = features(&cfg.path("train", "features")?)?;
    let partition = match cfg.opt::<PathBuf>("train", "partition")? {
        Some(p) => Some(read_partition(p, ds.label_space())?),
        None => None,
    };
    let (head, log) = train(&ds, partition.as_ref(), &tc)?;
    let out = prepare_out(cfg)?;
    head.save(out.join("head.oodh"))?;
    log.write_csv(out.join("train_log.csv"))?;
    let kind = if partition.is_some() { "grouped" } else { "flat" };
    println!("trained {kind} head, final loss {:.6}", log.entries.last().map_or(f64::NAN, |e| e.loss));
    Ok(())
}

fn requested_methods(cfg: &RunConfig, head: &LinearHead, have_train: bool) -> Result<Vec<Method>, ConfigError> {
    let raw = cfg.raw("score", "methods");
    if raw.trim() == "all" {
        return Ok(Method::ALL
            .into_iter()
            .filter(|m| m.needs_grouped_head() == head.layout().is_grouped())
            .filter(|m| have_train || !matches!(m, Method::Mahalanobis | Method::KlMatching))
            .collect());
    }
    let methods: Vec<Method> = cfg.list("score", "methods")?;
    if methods.is_empty() {
        bail_config!("score.methods is empty");
    }
    Ok(methods)
}

pub fn score(cfg: &RunConfig) -> Result<()> {
    let s = "score";
    let params = score_params(cfg)?;
    let head = LinearHead::load(cfg.path(s, "checkpoint")?)?;
    let inputs: Vec<PathBuf> = cfg.list(s, "inputs")?;
    if inputs.is_empty() {
        bail_config!("score.inputs is required");
    }
    let train_ds = match cfg.opt::<PathBuf>(s, "train_features")? {
        Some(p) => Some(features(&p)?),
        None => None,
    };
    let methods = requested_methods(cfg, &head, train_ds.is_some())?;
    let partition = match (cfg.opt::<PathBuf>(s, "partition")?, &train_ds) {
        (Some(p), Some(ds)) => Some(read_partition(p, ds.label_space())?),
        (Some(p), None) => Some(read_partition(p, &LabelSpace::indexed(head.layout().num_classes())?)?),
        (None, _) => None,
    };
    let sets: Vec<(String, FeatureDataset)> = inputs
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or("scores".into(), |s| s.to_string_lossy().into_owned());
            Ok((stem, features(p)?))
        })
        .collect::<Result<_>>()?;
    let out = prepare_out(cfg)?;
    for m in methods {
        let scorer = Scorer::fit(m, &head, partition.as_ref(), train_ds.as_ref(), params)?;
        for (stem, ds) in &sets {
            let path = out.join(format!("{stem}.{m}.csv"));
            write_scores(&path, &scorer.score(ds.features())?)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let s_in = read_scores(cfg.path("eval", "in_scores")?)?;
    let s_out = read_scores(cfg.path("eval", "out_scores")?)?;
    if s_in.method() != s_out.method() {
        bail_config!("in-scores use {} but out-scores use {}", s_in.method(), s_out.method());
    }
    let report = evaluate(s_in.values(), s_out.values())?;
    let out = prepare_out(cfg)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write_roc(out.join("roc.csv"), report.curve.as_ref().expect("evaluate keeps the curve"))?;
    println!("auroc {:.6} fpr95 {:.6} aupr {:.6}", report.auroc, report.fpr95, report.aupr);
    Ok(())
}
