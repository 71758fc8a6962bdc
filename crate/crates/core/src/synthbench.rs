//! Synthetic class-conditional Gaussian benchmark and the experiment
//! harnesses built on it.
//!
//! Classes are arranged in blobs: blob centers sit on a sphere, each class
//! mean is its blob center plus a bounded offset, and samples are isotropic
//! Gaussians around the class mean. The generating blob of every class is the
//! ground-truth grouping.

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{accuracy, train, LinearHead, TrainConfig};
use crate::data::{FeatureDataset, GroupPartition, LabelSpace};
use crate::error::{config_err, Result};
use crate::grouping::{cluster_partition, random_partition, taxonomy_partition};
use crate::metrics::{evaluate, EvalReport};
use crate::scoring::{Method, ScoreParams, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodSpec {
    /// Uniform directions, radius uniform in `[r_min, r_max]`.
    Annulus { r_min: f64, r_max: f64 },
    /// `count` blobs on a sphere of `radius`, in directions orthogonal to the
    /// in-distribution blob centers, spread by the class std.
    DistantBlobs { count: usize, radius: f64 },
    /// Fresh draws from the in-distribution mixture itself.
    InDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dim: usize,
    /// Number of generating blobs.
    pub num_blobs: usize,
    pub classes_per_blob: usize,
    /// Overrides `num_blobs · classes_per_blob`; classes are then dealt into
    /// blobs as evenly as possible.
    pub num_classes: Option<usize>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub blob_center_radius: f64,
    /// Class means lie within this distance of their blob center.
    pub class_offset_scale: f64,
    pub class_std: f64,
    pub ood: OodSpec,
    pub n_ood: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let (radius, offset, std) = (8.0, 1.5, 0.5);
        Self {
            dim: 16,
            num_blobs: 4,
            classes_per_blob: 5,
            num_classes: None,
            train_per_class: 200,
            test_per_class: 50,
            blob_center_radius: radius,
            class_offset_scale: offset,
            class_std: std,
            ood: OodSpec::DistantBlobs { count: 8, radius },
            n_ood: 1000,
            seed: 1,
        }
    }
}

impl BenchConfig {
    pub fn total_classes(&self) -> usize {
        self.num_classes.unwrap_or(self.num_blobs * self.classes_per_blob)
    }

    /// Blob of every class, contiguous runs of near-equal size.
    pub fn class_blobs(&self) -> Vec<usize> {
        let c = self.total_classes();
        (0..c).map(|i| i * self.num_blobs / c).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_blobs == 0 || self.classes_per_blob == 0 {
            return Err(config_err!("dim, num_blobs and classes_per_blob must be at least 1"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 || self.n_ood == 0 {
            return Err(config_err!("sample counts must be at least 1"));
        }
        let c = self.total_classes();
        if c < 2 {
            return Err(config_err!("benchmark needs at least 2 classes, got {c}"));
        }
        if c < self.num_blobs {
            return Err(config_err!("{c} classes cannot fill {} blobs", self.num_blobs));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.blob_center_radius) {
            return Err(config_err!("blob_center_radius must be positive"));
        }
        if !(self.class_offset_scale >= 0.0 && self.class_offset_scale.is_finite())
            || !(self.class_std >= 0.0 && self.class_std.is_finite())
        {
            return Err(config_err!("class_offset_scale and class_std must be non-negative"));
        }
        match self.ood {
            OodSpec::Annulus { r_min, r_max } if !(positive(r_min) && r_max >= r_min && r_max.is_finite()) => {
                Err(config_err!("annulus needs 0 < r_min <= r_max, got [{r_min}, {r_max}]"))
            }
            OodSpec::DistantBlobs { count, radius } if count == 0 || !positive(radius) => {
                Err(config_err!("distant blobs need count >= 1 and a positive radius"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub train: FeatureDataset,
    pub test_in: FeatureDataset,
    pub test_ood: Array2<f64>,
    pub true_partition: GroupPartition,
    pub config: BenchConfig,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_shape_fn(dim, |_| StandardNormal.sample(rng));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Random unit direction orthogonal to every vector in `avoid` when the
/// dimension leaves room for one. Otherwise the best of a fixed number of
/// random candidates, by largest angle to the nearest avoided vector.
fn away_from(rng: &mut ChaCha8Rng, avoid: &[Array1<f64>]) -> Array1<f64> {
    const CANDIDATES: usize = 256;
    let d = avoid.first().map_or(0, |a| a.len());
    if avoid.len() >= d {
        let max_cos = |v: &Array1<f64>| {
            avoid.iter().map(|a| v.dot(a) / a.dot(a).sqrt()).fold(f64::NEG_INFINITY, f64::max)
        };
        let mut best = unit_vector(rng, d);
        let mut best_cos = max_cos(&best);
        for _ in 1..CANDIDATES {
            let v = unit_vector(rng, d);
            let c = max_cos(&v);
            if c < best_cos {
                (best, best_cos) = (v, c);
            }
        }
        return best;
    }
    // Gram-Schmidt basis of the span to avoid
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for a in avoid {
        let mut v = a.clone();
        for b in &basis {
            v = &v - &(b * b.dot(&v));
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            basis.push(v / n);
        }
    }
    loop {
        let mut v = unit_vector(rng, d);
        for b in &basis {
            v = &v - &(b * b.dot(&v));
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn gaussian_rows(rng: &mut ChaCha8Rng, means: &Array2<f64>, labels: &[usize], std: f64) -> Array2<f64> {
    let d = means.ncols();
    let mut out = Array2::zeros((labels.len(), d));
    for (mut row, &l) in out.rows_mut().into_iter().zip(labels) {
        for (x, &m) in row.iter_mut().zip(means.row(l)) {
            let z: f64 = StandardNormal.sample(rng);
            *x = m + std * z;
        }
    }
    out
}

fn class_major_labels(num_classes: usize, per_class: usize) -> Vec<usize> {
    (0..num_classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
}

/// Draws a benchmark; a pure function of `config`.
pub fn gen_benchmark(config: &BenchConfig) -> Result<Benchmark> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (d, c) = (config.dim, config.total_classes());
    let blobs = config.class_blobs();

    let centers: Vec<Array1<f64>> =
        (0..config.num_blobs).map(|_| unit_vector(&mut rng, d) * config.blob_center_radius).collect();
    let mut means = Array2::zeros((c, d));
    for (class, &b) in blobs.iter().enumerate() {
        // uniform in a ball of radius class_offset_scale
        let dir = unit_vector(&mut rng, d);
        let r = config.class_offset_scale * rng.random::<f64>().powf(1.0 / d as f64);
        means.row_mut(class).assign(&(&centers[b] + &(dir * r)));
    }

    let label_space = LabelSpace::indexed(c)?;
    let train_labels = class_major_labels(c, config.train_per_class);
    let train_x = gaussian_rows(&mut rng, &means, &train_labels, config.class_std);
    let test_labels = class_major_labels(c, config.test_per_class);
    let test_x = gaussian_rows(&mut rng, &means, &test_labels, config.class_std);

    let test_ood = match config.ood {
        OodSpec::Annulus { r_min, r_max } => {
            let mut out = Array2::zeros((config.n_ood, d));
            for mut row in out.rows_mut() {
                let dir = unit_vector(&mut rng, d);
                let r = if r_max > r_min { rng.random_range(r_min..=r_max) } else { r_min };
                row.assign(&(dir * r));
            }
            out
        }
        OodSpec::DistantBlobs { count, radius } => {
            let mut ood_centers = Array2::zeros((count, d));
            for mut row in ood_centers.rows_mut() {
                row.assign(&(away_from(&mut rng, &centers) * radius));
            }
            let labels: Vec<usize> = (0..config.n_ood).map(|i| i % count).collect();
            gaussian_rows(&mut rng, &ood_centers, &labels, config.class_std)
        }
        OodSpec::InDistribution => {
            let labels: Vec<usize> = (0..config.n_ood).map(|_| rng.random_range(0..c)).collect();
            gaussian_rows(&mut rng, &means, &labels, config.class_std)
        }
    };

    let names = (0..config.num_blobs).map(|k| format!("blob_{k}")).collect();
    let true_partition = GroupPartition::from_assignment(&blobs, config.num_blobs, names)?;
    Ok(Benchmark {
        train: FeatureDataset::new(train_x, train_labels, label_space.clone())?,
        test_in: FeatureDataset::new(test_x, test_labels, label_space)?,
        test_ood,
        true_partition,
        config: config.clone(),
    })
}

/// How the pipeline groups classes before training.
#[derive(Clone, Debug, PartialEq)]
pub enum Grouping {
    /// The generating blobs.
    True,
    TaxonomyFile(PathBuf),
    Cluster { k: usize, seed: u64 },
    Random { k: usize, seed: u64 },
    Flat,
}

impl Grouping {
    pub fn partition(&self, benchmark: &Benchmark) -> Result<Option<GroupPartition>> {
        let train = &benchmark.train;
        Ok(match self {
            Grouping::True => Some(benchmark.true_partition.clone()),
            Grouping::TaxonomyFile(path) => Some(taxonomy_partition(path, train.label_space())?),
            Grouping::Cluster { k, seed } => Some(cluster_partition(train, *k, *seed)?),
            Grouping::Random { k, seed } => Some(random_partition(train.label_space(), *k, *seed)?),
            Grouping::Flat => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub report: EvalReport,
    pub in_accuracy: f64,
}

/// Scores `test_in` and `test_ood` with an already trained head.
pub fn evaluate_head(
    benchmark: &Benchmark,
    head: &LinearHead,
    partition: Option<&GroupPartition>,
    method: Method,
    params: ScoreParams,
) -> Result<PipelineResult> {
    let scorer = Scorer::fit(method, head, partition, Some(&benchmark.train), params)?;
    let s_in = scorer.score(benchmark.test_in.features())?;
    let s_out = scorer.score(benchmark.test_ood.view())?;
    Ok(PipelineResult {
        report: evaluate(s_in.values(), s_out.values())?,
        in_accuracy: accuracy(head, &benchmark.test_in, partition)?,
    })
}

/// Trains the head the method needs, scores both test sets and evaluates.
pub fn run_pipeline(
    benchmark: &Benchmark,
    grouping: &Grouping,
    method: Method,
    train_config: &TrainConfig,
) -> Result<PipelineResult> {
    run_pipeline_with(benchmark, grouping, method, train_config, ScoreParams::default())
}

pub fn run_pipeline_with(
    benchmark: &Benchmark,
    grouping: &Grouping,
    method: Method,
    train_config: &TrainConfig,
    params: ScoreParams,
) -> Result<PipelineResult> {
    let grouped = *grouping != Grouping::Flat;
    if method.needs_grouped_head() != grouped {
        return Err(config_err!(
            "{method} cannot run with {} grouping",
            if grouped { "a group" } else { "flat" }
        ));
    }
    let partition = grouping.partition(benchmark)?;
    let (head, _) = train(&benchmark.train, partition.as_ref(), train_config)?;
    evaluate_head(benchmark, &head, partition.as_ref(), method, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Every class keeps `train_per_class` samples.
    FixedPerClass,
    /// `⌊budget / C⌋` samples per class.
    FixedTotal { budget: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub num_classes: usize,
    pub method: Method,
    pub seed: u64,
    pub auroc: f64,
    pub fpr95: f64,
    pub in_accuracy: f64,
}

/// Benchmark config for one point of a class-count sweep.
pub fn scaled_config(base: &BenchConfig, num_classes: usize, regime: Regime, seed: u64) -> Result<BenchConfig> {
    let num_blobs = ((num_classes as f64 / base.classes_per_blob as f64).round() as usize).max(2);
    let train_per_class = match regime {
        Regime::FixedPerClass => base.train_per_class,
        Regime::FixedTotal { budget } => {
            if budget < num_classes {
                return Err(config_err!("budget {budget} is smaller than the class count {num_classes}"));
            }
            budget / num_classes
        }
    };
    Ok(BenchConfig { num_blobs, num_classes: Some(num_classes), train_per_class, seed, ..base.clone() })
}

/// For every class count and seed, regenerates the benchmark and runs each
/// method (MOS on the generating blobs, baselines on a flat head). Rows are
/// sorted by (C, method, seed).
pub fn scaling_experiment(
    base: &BenchConfig,
    class_counts: &[usize],
    regime: Regime,
    methods: &[Method],
    seeds: &[u64],
    train_config: &TrainConfig,
) -> Result<Vec<ScalingRow>> {
    if class_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err!("class counts must be strictly ascending"));
    }
    let jobs: Vec<(usize, u64)> = class_counts.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    let per_job: Vec<Vec<ScalingRow>> = jobs
        .par_iter()
        .map(|&(c, seed)| scaling_job(base, c, regime, methods, seed, train_config))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ScalingRow> = per_job.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.num_classes, r.method, r.seed));
    Ok(rows)
}

/// One (C, seed) cell of the sweep: all requested methods.
pub fn scaling_job(
    base: &BenchConfig,
    num_classes: usize,
    regime: Regime,
    methods: &[Method],
    seed: u64,
    train_config: &TrainConfig,
) -> Result<Vec<ScalingRow>> {
    let bench = gen_benchmark(&scaled_config(base, num_classes, regime, seed)?)?;
    let tc = TrainConfig { seed, ..train_config.clone() };
    let mut flat: Option<LinearHead> = None;
    let mut grouped: Option<LinearHead> = None;
    let mut rows = Vec::with_capacity(methods.len());
    for &m in methods {
        let (head, partition) = if m.needs_grouped_head() {
            if grouped.is_none() {
                grouped = Some(train(&bench.train, Some(&bench.true_partition), &tc)?.0);
            }
            (grouped.as_ref().unwrap(), Some(&bench.true_partition))
        } else {
            if flat.is_none() {
                flat = Some(train(&bench.train, None, &tc)?.0);
            }
            (flat.as_ref().unwrap(), None)
        };
        let r = evaluate_head(&bench, head, partition, m, ScoreParams::default())?;
        rows.push(ScalingRow {
            num_classes,
            method: m,
            seed,
            auroc: r.report.auroc,
            fpr95: r.report.fpr95,
            in_accuracy: r.in_accuracy,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    /// Taxonomy files; each supplies the partition for its own group count.
    Taxonomy(Vec<PathBuf>),
    Cluster,
    Random,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Taxonomy(_) => "taxonomy",
            Strategy::Cluster => "cluster",
            Strategy::Random => "random",
        }
    }

    /// Partition with `k` groups; `seed` drives clustering and random splits.
    pub fn partition(&self, benchmark: &Benchmark, k: usize, seed: u64) -> Result<GroupPartition> {
        let c = benchmark.train.num_classes();
        if k == 0 || k > c {
            return Err(config_err!("K={k} must be between 1 and the class count {c}"));
        }
        match self {
            Strategy::Cluster => cluster_partition(&benchmark.train, k, seed),
            Strategy::Random => random_partition(benchmark.train.label_space(), k, seed),
            Strategy::Taxonomy(files) => {
                for f in files {
                    let p = taxonomy_partition(f, benchmark.train.label_space())?;
                    if p.num_groups() == k {
                        return Ok(p);
                    }
                }
                Err(config_err!("no taxonomy file with K={k} groups"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub k: usize,
    pub seed: u64,
    pub auroc: f64,
    pub fpr95: f64,
    pub in_accuracy: f64,
    /// The grouping equals the generating blobs up to relabeling.
    pub matches_truth: bool,
}

/// One MOS pipeline run per (strategy, K, seed). Rows are sorted by
/// (strategy, K, seed).
pub fn grouping_ablation(
    benchmark: &Benchmark,
    k_values: &[usize],
    strategies: &[Strategy],
    train_config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let c = benchmark.train.num_classes();
    if let Some(&k) = k_values.iter().find(|&&k| k == 0 || k > c) {
        return Err(config_err!("K={k} must be between 1 and the class count {c}"));
    }
    let mut jobs = Vec::new();
    for s in strategies {
        for &k in k_values {
            for &seed in seeds {
                jobs.push((s, k, seed));
            }
        }
    }
    let mut rows: Vec<AblationRow> = jobs
        .par_iter()
        .map(|&(s, k, seed)| ablation_job(benchmark, s, k, seed, train_config))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| (&a.strategy, a.k, a.seed).cmp(&(&b.strategy, b.k, b.seed)));
    Ok(rows)
}

pub fn ablation_job(
    benchmark: &Benchmark,
    strategy: &Strategy,
    k: usize,
    seed: u64,
    train_config: &TrainConfig,
) -> Result<AblationRow> {
    let partition = strategy.partition(benchmark, k, seed)?;
    let tc = TrainConfig { seed, ..train_config.clone() };
    let (head, _) = train(&benchmark.train, Some(&partition), &tc)?;
    let r = evaluate_head(benchmark, &head, Some(&partition), Method::Mos, ScoreParams::default())?;
    Ok(AblationRow {
        strategy: strategy.name().to_string(),
        k,
        seed,
        auroc: r.report.auroc,
        fpr95: r.report.fpr95,
        in_accuracy: r.in_accuracy,
        matches_truth: partition.same_grouping(&benchmark.true_partition),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig { train_per_class: 20, test_per_class: 5, n_ood: 50, ..Default::default() }
    }

    #[test]
    fn counting() {
        let cfg = BenchConfig { dim: 2, num_blobs: 3, classes_per_blob: 4, ..small() };
        let b = gen_benchmark(&cfg).unwrap();
        assert_eq!(b.train.num_classes(), 12);
        assert_eq!(b.true_partition.group_sizes(), vec![4, 4, 4]);
        assert_eq!(b.train.len(), 12 * 20);
        assert_eq!(b.test_in.len(), 12 * 5);
        assert_eq!(b.test_ood.dim(), (50, 2));
    }

    #[test]
    fn zero_std_collapses_classes() {
        let b = gen_benchmark(&BenchConfig { class_std: 0.0, ..small() }).unwrap();
        let x = b.train.features();
        for i in 1..b.train.len() {
            if b.train.labels()[i] == b.train.labels()[i - 1] {
                assert_eq!(x.row(i), x.row(i - 1));
            }
        }
    }

    #[test]
    fn annulus_outside_every_in_sample() {
        let cfg = BenchConfig { ood: OodSpec::Annulus { r_min: 14.0, r_max: 16.0 }, ..Default::default() };
        let b = gen_benchmark(&cfg).unwrap();
        let norm = |r: ndarray::ArrayView1<f64>| r.dot(&r).sqrt();
        let max_in = b
            .train
            .features()
            .rows()
            .into_iter()
            .chain(b.test_in.features().rows())
            .map(norm)
            .fold(0.0, f64::max);
        let min_ood = b.test_ood.rows().into_iter().map(norm).fold(f64::INFINITY, f64::min);
        let OodSpec::Annulus { r_min, .. } = cfg.ood else { unreachable!() };
        assert!(r_min > max_in, "r_min {r_min} vs max in-norm {max_in}");
        assert!(min_ood > max_in);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = gen_benchmark(&small()).unwrap();
        assert_eq!(a, gen_benchmark(&small()).unwrap());
        let b = gen_benchmark(&BenchConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn validation() {
        assert!(gen_benchmark(&BenchConfig { num_blobs: 0, ..small() }).is_err());
        assert!(gen_benchmark(&BenchConfig { ood: OodSpec::Annulus { r_min: 5.0, r_max: 1.0 }, ..small() }).is_err());
        assert!(gen_benchmark(&BenchConfig { num_classes: Some(3), num_blobs: 4, ..small() }).is_err());
    }

    #[test]
    fn uneven_class_counts_fill_every_blob() {
        let cfg = BenchConfig { num_blobs: 3, num_classes: Some(10), ..small() };
        let b = gen_benchmark(&cfg).unwrap();
        assert_eq!(b.true_partition.group_sizes(), vec![4, 3, 3]);
    }

    #[test]
    fn fixed_total_per_class_arithmetic() {
        let base = BenchConfig::default();
        for c in [10, 40, 160] {
            let cfg = scaled_config(&base, c, Regime::FixedTotal { budget: 3500 }, 1).unwrap();
            assert_eq!(cfg.train_per_class, 3500 / c);
            let fixed = scaled_config(&base, c, Regime::FixedPerClass, 1).unwrap();
            assert_eq!(fixed.train_per_class, base.train_per_class);
            assert_eq!(fixed.num_blobs, (c / 5).max(2));
        }
        assert!(scaled_config(&base, 160, Regime::FixedTotal { budget: 100 }, 1).is_err());
    }

    #[test]
    fn pipeline_rejects_bad_combinations() {
        let b = gen_benchmark(&small()).unwrap();
        let tc = TrainConfig { steps: 5, ..Default::default() };
        assert!(run_pipeline(&b, &Grouping::Flat, Method::Mos, &tc).is_err());
        assert!(run_pipeline(&b, &Grouping::True, Method::Msp, &tc).is_err());
        assert!(run_pipeline(&b, &Grouping::True, Method::Mos, &tc).is_ok());
    }
}
