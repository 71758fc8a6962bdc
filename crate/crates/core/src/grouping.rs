//! Class grouping strategies: taxonomy ingestion, K-means over per-class
//! feature centroids, and seeded random equal-size splits.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureDataset, GroupPartition, LabelSpace};
use crate::error::{config_err, Error, Result};
use crate::io::read_taxonomy;

/// Builds a partition from a `class<TAB>group` taxonomy file. Group indices
/// follow first appearance in the file, as does class order within a group.
pub fn taxonomy_partition(taxonomy_path: impl AsRef<Path>, label_space: &LabelSpace) -> Result<GroupPartition> {
    let entries = read_taxonomy(taxonomy_path.as_ref())?;
    partition_from_taxonomy(&entries, label_space)
}

/// Label space whose class order is the taxonomy file order.
pub fn taxonomy_label_space(taxonomy_path: impl AsRef<Path>) -> Result<LabelSpace> {
    let entries = read_taxonomy(taxonomy_path.as_ref())?;
    LabelSpace::new(entries.into_iter().map(|(c, _)| c).collect())
}

pub fn partition_from_taxonomy(entries: &[(String, String)], label_space: &LabelSpace) -> Result<GroupPartition> {
    let mut seen = HashSet::new();
    let mut duplicates = Vec::new();
    let mut unknown = Vec::new();
    let mut group_index: HashMap<&str, usize> = HashMap::new();
    let mut group_names: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (class, group) in entries {
        let Some(c) = label_space.index_of(class) else {
            unknown.push(class.clone());
            continue;
        };
        if !seen.insert(c) {
            duplicates.push(class.clone());
            continue;
        }
        let k = *group_index.entry(group.as_str()).or_insert_with(|| {
            group_names.push(group.clone());
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(c);
    }
    let missing: Vec<&str> = label_space
        .names()
        .iter()
        .enumerate()
        .filter(|(c, _)| !seen.contains(c))
        .map(|(_, n)| n.as_str())
        .collect();
    if !(missing.is_empty() && duplicates.is_empty() && unknown.is_empty()) {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing classes {missing:?}"));
        }
        if !duplicates.is_empty() {
            parts.push(format!("duplicate classes {duplicates:?}"));
        }
        if !unknown.is_empty() {
            parts.push(format!("unknown classes {unknown:?}"));
        }
        return Err(Error::Data(format!("taxonomy does not match label space: {}", parts.join("; "))));
    }
    GroupPartition::new(group_names, groups, label_space.num_classes())
}

/// Row `c` is the mean feature vector of the samples labeled `c`.
pub fn class_centroids(dataset: &FeatureDataset) -> Result<Array2<f64>> {
    let c = dataset.num_classes();
    let counts = dataset.class_counts();
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!(
            "class {empty} ({}) has no samples",
            dataset.label_space().name(empty)
        )));
    }
    let mut sums = Array2::<f64>::zeros((c, dataset.dim()));
    for (row, &label) in dataset.features().rows().into_iter().zip(dataset.labels()) {
        let mut acc = sums.row_mut(label);
        acc += &row;
    }
    for (mut row, &n) in sums.rows_mut().into_iter().zip(&counts) {
        row /= n as f64;
    }
    Ok(sums)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once the objective improves by less than this (absolute).
    pub tol: f64,
    /// Independent seeded restarts; the lowest objective wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-8, restarts: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every Lloyd update, in order.
    pub history: Vec<f64>,
}

pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(point: ArrayView1<'_, f64>, centroids: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn objective(points: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>, assignments: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, centroids.row(a)))
        .sum()
}

fn plus_plus_seed(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            // rounding can walk past the end; take the last point with mass
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            pick
        } else {
            // all remaining points coincide with a chosen centroid
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    points.select(Axis(0), &chosen)
}

fn lloyd(points: ArrayView2<'_, f64>, mut centroids: Array2<f64>, cfg: &KMeansConfig) -> KMeansResult {
    let k = centroids.nrows();
    let mut assignments: Vec<usize> = points.rows().into_iter().map(|p| nearest(p, centroids.view()).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (p, &a) in points.rows().into_iter().zip(&assignments) {
            let mut s = sums.row_mut(a);
            s += &p;
            counts[a] += 1;
        }
        for (j, &n) in counts.iter().enumerate() {
            // an empty cluster keeps its previous centroid
            if n > 0 {
                let mean = &sums.row(j) / n as f64;
                centroids.row_mut(j).assign(&mean);
            }
        }
        let obj = objective(points, centroids.view(), &assignments);
        let improvement = history.last().map_or(f64::INFINITY, |&prev: &f64| prev - obj);
        history.push(obj);

        let next: Vec<usize> = points.rows().into_iter().map(|p| nearest(p, centroids.view()).0).collect();
        if next == assignments || improvement < cfg.tol {
            break;
        }
        assignments = next;
    }
    let objective = *history.last().unwrap_or(&objective(points, centroids.view(), &assignments));
    KMeansResult { centroids, assignments, objective, iterations, history }
}

/// Lloyd's algorithm from k-means++ seeding. Deterministic for a given seed.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(config_err!("K must be at least 1"));
    }
    if n < k {
        return Err(config_err!("K={k} exceeds the number of points ({n})"));
    }
    if cfg.max_iter == 0 || cfg.restarts == 0 {
        return Err(config_err!("max_iter and restarts must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts {
        let init = plus_plus_seed(points, k, &mut rng);
        let run = lloyd(points, init, cfg);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Groups classes by running K-means over their mean feature vectors. Group
/// indices are ordered by the smallest class they contain.
pub fn cluster_partition(dataset: &FeatureDataset, k: usize, seed: u64) -> Result<GroupPartition> {
    cluster_partition_with(dataset, k, seed, &KMeansConfig::default())
}

pub fn cluster_partition_with(
    dataset: &FeatureDataset,
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<GroupPartition> {
    let c = dataset.num_classes();
    if k > c {
        return Err(config_err!("K={k} exceeds the number of classes ({c})"));
    }
    let centroids = class_centroids(dataset)?;
    let result = kmeans(centroids.view(), k, seed, cfg)?;
    let mut assignments = result.assignments;
    repair_empty_clusters(centroids.view(), result.centroids.view(), &mut assignments, k);

    // relabel clusters by first appearance over class index
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &assignments {
        if relabel[a] == usize::MAX {
            relabel[a] = next;
            next += 1;
        }
    }
    let assignment: Vec<usize> = assignments.iter().map(|&a| relabel[a]).collect();
    let names = (0..k).map(|i| format!("cluster_{i}")).collect();
    GroupPartition::from_assignment(&assignment, k, names)
}

/// Fills each empty cluster with the point farthest from its centroid in the
/// current largest cluster.
fn repair_empty_clusters(points: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>, assignments: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
        let farthest = (0..assignments.len())
            .filter(|&i| assignments[i] == largest)
            .map(|i| (i, sq_dist(points.row(i), centroids.row(largest))))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        assignments[farthest] = empty;
    }
}

/// Seeded shuffle of the classes dealt round-robin into `k` groups, so group
/// sizes differ by at most one. Classes are listed in ascending order within a
/// group.
pub fn random_partition(label_space: &LabelSpace, k: usize, seed: u64) -> Result<GroupPartition> {
    let c = label_space.num_classes();
    if k == 0 || k > c {
        return Err(config_err!("K={k} must be between 1 and the number of classes ({c})"));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups = vec![Vec::new(); k];
    for (i, &class) in order.iter().enumerate() {
        groups[i % k].push(class);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    let names = (0..k).map(|i| format!("random_{i}")).collect();
    GroupPartition::new(names, groups, c)
}
