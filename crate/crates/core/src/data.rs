//! Datasets, label spaces, class partitions and the per-group label remapping.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{config_err, Error, Result};

/// Ordered, unique class names. Class index `i` is `names()[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Data(format!("label space needs at least 2 classes, got {}", names.len())));
        }
        let mut seen = HashSet::with_capacity(names.len());
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Data(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// `class_0 .. class_{C-1}`; used whenever a file carries indices only.
    pub fn indexed(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).map(|i| format!("class_{i}")).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// N × D features with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    label_space: LabelSpace,
}

impl FeatureDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, label_space: LabelSpace) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if d == 0 {
            return Err(Error::Data("feature dimension must be at least 1".into()));
        }
        if labels.len() != n {
            return Err(Error::Data(format!("{n} feature rows but {} labels", labels.len())));
        }
        let c = label_space.num_classes();
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::Data(format!("row {row}: label {l} out of range for {c} classes")));
        }
        for (row, r) in features.rows().into_iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {row}: non-finite feature value")));
            }
        }
        Ok(Self { features, labels, label_space })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<usize>, LabelSpace) {
        (self.features, self.labels, self.label_space)
    }
}

/// Assignment of every class to exactly one group. Inside a group's logit
/// block the classes keep the order of `group_classes(k)` and the `others`
/// slot comes last, at local index `group_size(k)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    group_names: Vec<String>,
    groups: Vec<Vec<usize>>,
    class_to_group: Vec<usize>,
    local_index: Vec<usize>,
}

impl GroupPartition {
    /// Builds a partition from per-group class lists over `num_classes` classes.
    pub fn new(group_names: Vec<String>, groups: Vec<Vec<usize>>, num_classes: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(config_err!("partition needs at least one group"));
        }
        if group_names.len() != groups.len() {
            return Err(config_err!("{} group names for {} groups", group_names.len(), groups.len()));
        }
        let mut class_to_group = vec![usize::MAX; num_classes];
        let mut local_index = vec![usize::MAX; num_classes];
        for (k, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Data(format!("group {k} ({}) is empty", group_names[k])));
            }
            for (local, &c) in members.iter().enumerate() {
                if c >= num_classes {
                    return Err(Error::Data(format!("class {c} out of range for {num_classes} classes")));
                }
                if class_to_group[c] != usize::MAX {
                    return Err(Error::Data(format!("class {c} assigned to more than one group")));
                }
                class_to_group[c] = k;
                local_index[c] = local;
            }
        }
        let missing: Vec<usize> = (0..num_classes).filter(|&c| class_to_group[c] == usize::MAX).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!("classes not assigned to any group: {missing:?}")));
        }
        Ok(Self { group_names, groups, class_to_group, local_index })
    }

    /// Builds a partition from a class → group map; groups keep ascending class order.
    pub fn from_assignment(assignment: &[usize], num_groups: usize, group_names: Vec<String>) -> Result<Self> {
        let mut groups = vec![Vec::new(); num_groups];
        for (c, &g) in assignment.iter().enumerate() {
            if g >= num_groups {
                return Err(config_err!("class {c} assigned to group {g} but only {num_groups} groups"));
            }
            groups[g].push(c);
        }
        Self::new(group_names, groups, assignment.len())
    }

    /// Every class in one group.
    pub fn single(num_classes: usize) -> Result<Self> {
        Self::new(vec!["all".into()], vec![(0..num_classes).collect()], num_classes)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_group.len()
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_classes(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    /// Number of real classes in group `k`; the others slot is not counted.
    pub fn group_size(&self, k: usize) -> usize {
        self.groups[k].len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn group_of(&self, class: usize) -> usize {
        self.class_to_group[class]
    }

    pub fn class_to_group(&self) -> &[usize] {
        &self.class_to_group
    }

    /// Local index of `class` inside its own group's block.
    pub fn local_index(&self, class: usize) -> usize {
        self.local_index[class]
    }

    pub fn others_index(&self, k: usize) -> usize {
        self.groups[k].len()
    }

    /// Targets for one sample of class `class`, one local index per group.
    pub fn targets_for(&self, class: usize) -> Vec<usize> {
        let own = self.class_to_group[class];
        (0..self.num_groups())
            .map(|k| if k == own { self.local_index[class] } else { self.others_index(k) })
            .collect()
    }

    /// Same grouping regardless of group order or names.
    pub fn same_grouping(&self, other: &GroupPartition) -> bool {
        if self.num_classes() != other.num_classes() || self.num_groups() != other.num_groups() {
            return false;
        }
        let canon = |p: &GroupPartition| {
            let mut sets: Vec<Vec<usize>> = p
                .groups
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.sort_unstable();
                    g
                })
                .collect();
            sets.sort();
            sets
        };
        canon(self) == canon(other)
    }
}

/// Per-sample, per-group target local indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupTargets {
    targets: Vec<Vec<usize>>,
}

impl GroupTargets {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[usize] {
        &self.targets[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.targets.iter().map(Vec::as_slice)
    }
}

/// Maps each sample's class label to one target per group: the class's local
/// index in its own group and `others` everywhere else.
pub fn remap_labels(dataset: &FeatureDataset, partition: &GroupPartition) -> Result<GroupTargets> {
    if dataset.num_classes() != partition.num_classes() {
        return Err(config_err!(
            "dataset has {} classes but partition covers {}",
            dataset.num_classes(),
            partition.num_classes()
        ));
    }
    let targets = dataset.labels().iter().map(|&c| partition.targets_for(c)).collect();
    Ok(GroupTargets { targets })
}
