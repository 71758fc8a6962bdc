//! Python bindings. Arrays cross the boundary as float64 numpy arrays;
//! configuration and validation errors surface as `ValueError`, everything
//! else as `RuntimeError`.

use std::path::PathBuf;

use mos_core::classifier::{self, predict};
use mos_core::grouping::{cluster_partition, random_partition, taxonomy_partition};
use mos_core::io::{load_features as load, save_features as save, FeatureFormat};
use mos_core::metrics::{evaluate as eval_scores, roc_curve as roc};
use mos_core::scoring::{others_probabilities, OdinParams, Ridge, ScoreParams, Scorer};
use mos_core::synthbench::{gen_benchmark as gen, BenchConfig, OodSpec};
use mos_core::{FeatureDataset, GroupPartition, HeadLayout, LabelSpace, LinearHead, Method, TrainConfig};
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: mos_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn dataset(features: PyReadonlyArray2<'_, f64>, labels: Vec<usize>, num_classes: Option<usize>) -> PyResult<FeatureDataset> {
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let space = LabelSpace::indexed(c).map_err(to_py)?;
    FeatureDataset::new(features.as_array().to_owned(), labels, space).map_err(to_py)
}

/// Assignment of classes to groups.
#[pyclass(name = "Partition", module = "mos_ood", frozen)]
struct PyPartition {
    inner: GroupPartition,
}

#[pymethods]
impl PyPartition {
    #[new]
    #[pyo3(signature = (groups, num_classes, names=None))]
    fn new(groups: Vec<Vec<usize>>, num_classes: usize, names: Option<Vec<String>>) -> PyResult<Self> {
        let names = names.unwrap_or_else(|| (0..groups.len()).map(|k| format!("group_{k}")).collect());
        Ok(Self { inner: GroupPartition::new(names, groups, num_classes).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_assignment(assignment: Vec<usize>, num_groups: usize) -> PyResult<Self> {
        let names = (0..num_groups).map(|k| format!("group_{k}")).collect();
        Ok(Self { inner: GroupPartition::from_assignment(&assignment, num_groups, names).map_err(to_py)? })
    }

    /// K-means over class centroids.
    #[staticmethod]
    #[pyo3(signature = (features, labels, k, seed=0))]
    fn cluster(features: PyReadonlyArray2<'_, f64>, labels: Vec<usize>, k: usize, seed: u64) -> PyResult<Self> {
        let ds = dataset(features, labels, None)?;
        Ok(Self { inner: cluster_partition(&ds, k, seed).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (num_classes, k, seed=0))]
    fn random(num_classes: usize, k: usize, seed: u64) -> PyResult<Self> {
        let space = LabelSpace::indexed(num_classes).map_err(to_py)?;
        Ok(Self { inner: random_partition(&space, k, seed).map_err(to_py)? })
    }

    /// Partition from a `class<TAB>group` file; `class_names` fixes the class order.
    #[staticmethod]
    fn from_taxonomy(path: PathBuf, class_names: Vec<String>) -> PyResult<Self> {
        let space = LabelSpace::new(class_names).map_err(to_py)?;
        Ok(Self { inner: taxonomy_partition(path, &space).map_err(to_py)? })
    }

    #[getter]
    fn num_groups(&self) -> usize {
        self.inner.num_groups()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn groups(&self) -> Vec<Vec<usize>> {
        self.inner.groups().to_vec()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.group_names().to_vec()
    }

    fn group_of(&self, class: usize) -> PyResult<usize> {
        if class >= self.inner.num_classes() {
            return Err(PyValueError::new_err(format!("class {class} out of range")));
        }
        Ok(self.inner.group_of(class))
    }

    /// Equal up to relabeling of groups.
    fn same_grouping(&self, other: &PyPartition) -> bool {
        self.inner.same_grouping(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!("Partition(groups={:?})", self.inner.groups())
    }
}

/// Trained linear head, flat or grouped.
#[pyclass(name = "Head", module = "mos_ood", frozen)]
struct PyHead {
    inner: LinearHead,
}

#[pymethods]
impl PyHead {
    /// Trains a flat head, or a grouped head when `partition` is given.
    #[staticmethod]
    #[pyo3(signature = (features, labels, partition=None, num_classes=None, steps=2000, batch_size=128,
                        base_lr=0.003, momentum=0.9, warmup_steps=50, weight_decay=0.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        features: PyReadonlyArray2<'_, f64>,
        labels: Vec<usize>,
        partition: Option<&PyPartition>,
        num_classes: Option<usize>,
        steps: usize,
        batch_size: usize,
        base_lr: f64,
        momentum: f64,
        warmup_steps: usize,
        weight_decay: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let c = num_classes.or(partition.map(|p| p.inner.num_classes()));
        let ds = dataset(features, labels, c)?;
        let cfg = TrainConfig { steps, batch_size, base_lr, momentum, warmup_steps, weight_decay, seed, ..Default::default() };
        let p = partition.map(|p| p.inner.clone());
        let (head, _) = py.detach(|| classifier::train(&ds, p.as_ref(), &cfg)).map_err(to_py)?;
        Ok(Self { inner: head })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: LinearHead::load(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn is_grouped(&self) -> bool {
        self.inner.layout().is_grouped()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.layout().num_classes()
    }

    /// Group sizes without the `others` slot; `None` for a flat head.
    #[getter]
    fn group_sizes(&self) -> Option<Vec<usize>> {
        match self.inner.layout() {
            HeadLayout::Grouped { group_sizes } => Some(group_sizes.clone()),
            HeadLayout::Flat { .. } => None,
        }
    }

    #[getter]
    fn weights<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.inner.weights().clone().into_pyarray(py)
    }

    #[getter]
    fn bias<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        self.inner.bias().clone().into_pyarray(py)
    }

    fn logits<'py>(&self, py: Python<'py>, features: PyReadonlyArray2<'py, f64>) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let z = classifier::forward_logits(&self.inner, features.as_array()).map_err(to_py)?;
        Ok(z.into_pyarray(py))
    }

    /// Predicted class per row.
    #[pyo3(signature = (features, partition=None))]
    fn predict(&self, features: PyReadonlyArray2<'_, f64>, partition: Option<&PyPartition>) -> PyResult<Vec<usize>> {
        let preds = predict(&self.inner, features.as_array(), partition.map(|p| &p.inner)).map_err(to_py)?;
        Ok(preds.into_iter().map(|p| p.class).collect())
    }

    #[pyo3(signature = (features, labels, partition=None))]
    fn accuracy(&self, features: PyReadonlyArray2<'_, f64>, labels: Vec<usize>, partition: Option<&PyPartition>) -> PyResult<f64> {
        let ds = dataset(features, labels, Some(self.inner.layout().num_classes()))?;
        classifier::accuracy(&self.inner, &ds, partition.map(|p| &p.inner)).map_err(to_py)
    }

    /// `p_others` per row and group (grouped heads only).
    fn others<'py>(
        &self,
        py: Python<'py>,
        features: PyReadonlyArray2<'py, f64>,
        partition: &PyPartition,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let o = others_probabilities(&self.inner, features.as_array(), &partition.inner).map_err(to_py)?;
        Ok(o.into_pyarray(py))
    }
}

/// OOD scores, higher meaning more in-distribution. `train_features` and
/// `train_labels` are needed for `mahalanobis` and `kl_matching`.
#[pyfunction]
#[pyo3(signature = (method, head, features, partition=None, train_features=None, train_labels=None,
                    energy_temperature=1.0, odin_temperature=1000.0, odin_epsilon=0.0, ridge=1e-6))]
#[allow(clippy::too_many_arguments)]
fn score<'py>(
    py: Python<'py>,
    method: &str,
    head: &PyHead,
    features: PyReadonlyArray2<'py, f64>,
    partition: Option<&PyPartition>,
    train_features: Option<PyReadonlyArray2<'py, f64>>,
    train_labels: Option<Vec<usize>>,
    energy_temperature: f64,
    odin_temperature: f64,
    odin_epsilon: f64,
    ridge: f64,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let method: Method = method.parse().map_err(to_py)?;
    let train = match (train_features, train_labels) {
        (Some(x), Some(y)) => Some(dataset(x, y, Some(head.inner.layout().num_classes()))?),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("train_features and train_labels go together")),
    };
    let params = ScoreParams {
        energy_temperature,
        odin: OdinParams { temperature: odin_temperature, epsilon: odin_epsilon },
        ridge: Ridge::RelativeTrace(ridge),
    };
    let scorer = Scorer::fit(method, &head.inner, partition.map(|p| &p.inner), train.as_ref(), params).map_err(to_py)?;
    let s = scorer.score(features.as_array()).map_err(to_py)?;
    Ok(s.values().to_vec().into_pyarray(py))
}

/// AUROC, FPR at 95% TPR and AUPR with in-distribution as positive.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, in_scores: PyReadonlyArray1<'py, f64>, out_scores: PyReadonlyArray1<'py, f64>) -> PyResult<Bound<'py, PyDict>> {
    let i = in_scores.as_array().to_vec();
    let o = out_scores.as_array().to_vec();
    let r = eval_scores(&i, &o).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("auroc", r.auroc)?;
    d.set_item("fpr95", r.fpr95)?;
    d.set_item("aupr", r.aupr)?;
    d.set_item("n_in", r.n_in)?;
    d.set_item("n_out", r.n_out)?;
    Ok(d)
}

/// `(thresholds, tpr, fpr)`; the first threshold is `inf`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn roc_curve<'py>(
    py: Python<'py>,
    in_scores: PyReadonlyArray1<'py, f64>,
    out_scores: PyReadonlyArray1<'py, f64>,
) -> PyResult<(Bound<'py, PyArray1<f64>>, Bound<'py, PyArray1<f64>>, Bound<'py, PyArray1<f64>>)> {
    let c = roc(&in_scores.as_array().to_vec(), &out_scores.as_array().to_vec()).map_err(to_py)?;
    let col = |f: fn(&mos_core::metrics::RocPoint) -> f64| c.points().iter().map(f).collect::<Vec<_>>().into_pyarray(py);
    Ok((col(|p| p.threshold), col(|p| p.tpr), col(|p| p.fpr)))
}

/// Synthetic Gaussian benchmark as a dict of arrays plus the generating
/// partition. `ood` is `"distant_blobs"`, `"annulus"` or `"in_distribution"`.
#[pyfunction]
#[pyo3(signature = (seed=1, dim=16, num_blobs=4, classes_per_blob=5, num_classes=None, train_per_class=200,
                    test_per_class=50, blob_center_radius=8.0, class_offset_scale=1.5, class_std=0.5,
                    ood="distant_blobs", ood_count=8, ood_radius=8.0, ood_r_min=14.0, ood_r_max=16.0, n_ood=1000))]
#[allow(clippy::too_many_arguments)]
fn gen_benchmark<'py>(
    py: Python<'py>,
    seed: u64,
    dim: usize,
    num_blobs: usize,
    classes_per_blob: usize,
    num_classes: Option<usize>,
    train_per_class: usize,
    test_per_class: usize,
    blob_center_radius: f64,
    class_offset_scale: f64,
    class_std: f64,
    ood: &str,
    ood_count: usize,
    ood_radius: f64,
    ood_r_min: f64,
    ood_r_max: f64,
    n_ood: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ood = match ood {
        "distant_blobs" => OodSpec::DistantBlobs { count: ood_count, radius: ood_radius },
        "annulus" => OodSpec::Annulus { r_min: ood_r_min, r_max: ood_r_max },
        "in_distribution" => OodSpec::InDistribution,
        other => return Err(PyValueError::new_err(format!("unknown ood spec {other:?}"))),
    };
    let cfg = BenchConfig {
        dim,
        num_blobs,
        classes_per_blob,
        num_classes,
        train_per_class,
        test_per_class,
        blob_center_radius,
        class_offset_scale,
        class_std,
        ood,
        n_ood,
        seed,
    };
    let b = py.detach(|| gen(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("train_x", b.train.features().to_owned().into_pyarray(py))?;
    d.set_item("train_y", b.train.labels().to_vec())?;
    d.set_item("test_x", b.test_in.features().to_owned().into_pyarray(py))?;
    d.set_item("test_y", b.test_in.labels().to_vec())?;
    d.set_item("ood_x", b.test_ood.into_pyarray(py))?;
    d.set_item("partition", PyPartition { inner: b.true_partition })?;
    Ok(d)
}

/// `(features, labels)` from a binary or CSV feature file.
#[pyfunction]
fn load_features<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(Bound<'py, PyArray2<f64>>, Vec<usize>)> {
    let ds = load(&path, FeatureFormat::from_path(&path)).map_err(to_py)?;
    let (x, y, _) = ds.into_parts();
    Ok((x.into_pyarray(py), y))
}

#[pyfunction]
#[pyo3(signature = (path, features, labels, num_classes=None))]
fn save_features(path: PathBuf, features: PyReadonlyArray2<'_, f64>, labels: Vec<usize>, num_classes: Option<usize>) -> PyResult<()> {
    let ds = dataset(features, labels, num_classes)?;
    save(&path, &ds, FeatureFormat::from_path(&path)).map_err(to_py)
}

#[pymodule]
fn mos_ood(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPartition>()?;
    m.add_class::<PyHead>()?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(gen_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(load_features, m)?)?;
    m.add_function(wrap_pyfunction!(save_features, m)?)?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_errors_map_to_value_error() {
        let e = to_py(mos_core::Error::Config("x".into()));
        Python::initialize();
        Python::attach(|py| assert!(e.is_instance_of::<PyValueError>(py)));
    }
}
