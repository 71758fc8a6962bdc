//! OOD scoring functions. Every score is oriented so that higher means more
//! in-distribution.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::classifier::{block_softmax_rows, forward_logits, log_sum_exp, HeadLayout, LinearHead, PROB_FLOOR};
use crate::data::{FeatureDataset, GroupPartition};
use crate::error::{config_err, Error, Result};
use crate::grouping::class_centroids;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mos,
    Msp,
    Energy,
    Odin,
    Mahalanobis,
    KlMatching,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Mos, Method::Msp, Method::Energy, Method::Odin, Method::Mahalanobis, Method::KlMatching];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mos => "mos",
            Method::Msp => "msp",
            Method::Energy => "energy",
            Method::Odin => "odin",
            Method::Mahalanobis => "mahalanobis",
            Method::KlMatching => "kl_matching",
        }
    }

    /// MOS is the only method that needs a grouped head.
    pub fn needs_grouped_head(self) -> bool {
        self == Method::Mos
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config_err!("unknown scoring method {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    method: Method,
    values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(method: Method, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("{method} score for sample {i} is not finite")));
        }
        Ok(Self { method, values })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn require_flat(head: &LinearHead, method: Method) -> Result<()> {
    if head.layout().is_grouped() {
        return Err(config_err!("{method} needs a flat head"));
    }
    Ok(())
}

fn grouped_probs(head: &LinearHead, features: ArrayView2<'_, f64>, partition: &GroupPartition) -> Result<Array2<f64>> {
    if !head.layout().is_grouped() {
        return Err(config_err!("MOS needs a grouped head"));
    }
    head.layout().check_partition(partition)?;
    let mut probs = forward_logits(head, features)?;
    block_softmax_rows(&mut probs, head.layout());
    Ok(probs)
}

/// `p_others` per sample and group (n × K).
pub fn others_probabilities(
    head: &LinearHead,
    features: ArrayView2<'_, f64>,
    partition: &GroupPartition,
) -> Result<Array2<f64>> {
    let probs = grouped_probs(head, features, partition)?;
    let others: Vec<usize> = head.layout().blocks().iter().map(|r| r.end - 1).collect();
    Ok(Array2::from_shape_fn((probs.nrows(), others.len()), |(i, k)| probs[[i, others[k]]]))
}

/// Minimum others score: `−min_k p_others^k`.
pub fn score_mos(head: &LinearHead, features: ArrayView2<'_, f64>, partition: &GroupPartition) -> Result<ScoreVector> {
    let others = others_probabilities(head, features, partition)?;
    let values = others
        .rows()
        .into_iter()
        .map(|r| -r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    ScoreVector::new(Method::Mos, values)
}

/// MOS computed from the head's own block layout, for callers that only hold
/// a checkpoint.
pub fn score_mos_by_layout(head: &LinearHead, features: ArrayView2<'_, f64>) -> Result<ScoreVector> {
    let HeadLayout::Grouped { group_sizes } = head.layout() else {
        return Err(config_err!("MOS needs a grouped head"));
    };
    let groups = {
        let mut next = 0;
        group_sizes
            .iter()
            .map(|&s| {
                let g: Vec<usize> = (next..next + s).collect();
                next += s;
                g
            })
            .collect::<Vec<_>>()
    };
    let names = (0..groups.len()).map(|k| format!("group_{k}")).collect();
    let partition = GroupPartition::new(names, groups, head.layout().num_classes())?;
    score_mos(head, features, &partition)
}

fn temperature_probs(head: &LinearHead, features: ArrayView2<'_, f64>, temperature: f64) -> Result<Array2<f64>> {
    let mut z = forward_logits(head, features)?;
    if temperature != 1.0 {
        z /= temperature;
    }
    block_softmax_rows(&mut z, head.layout());
    Ok(z)
}

fn row_max(a: &Array2<f64>) -> Vec<f64> {
    a.rows().into_iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Maximum softmax probability.
pub fn score_msp(head: &LinearHead, features: ArrayView2<'_, f64>) -> Result<ScoreVector> {
    require_flat(head, Method::Msp)?;
    ScoreVector::new(Method::Msp, row_max(&temperature_probs(head, features, 1.0)?))
}

/// `T · ln Σ_i exp(f_i / T)`
pub fn score_energy(head: &LinearHead, features: ArrayView2<'_, f64>, temperature: f64) -> Result<ScoreVector> {
    require_flat(head, Method::Energy)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(config_err!("energy temperature must be positive, got {temperature}"));
    }
    let z = forward_logits(head, features)?;
    let values = z
        .rows()
        .into_iter()
        .map(|r| {
            let scaled: Vec<f64> = r.iter().map(|v| v / temperature).collect();
            temperature * log_sum_exp(&scaled)
        })
        .collect();
    ScoreVector::new(Method::Energy, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdinParams {
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for OdinParams {
    fn default() -> Self {
        Self { temperature: 1000.0, epsilon: 0.0 }
    }
}

/// Temperature-scaled MSP after a signed-gradient step on the features that
/// increases the temperature-scaled max softmax.
pub fn score_odin(head: &LinearHead, features: ArrayView2<'_, f64>, params: OdinParams) -> Result<ScoreVector> {
    require_flat(head, Method::Odin)?;
    let OdinParams { temperature, epsilon } = params;
    if !(temperature > 0.0 && temperature.is_finite()) || !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(config_err!("ODIN needs temperature > 0 and epsilon >= 0, got T={temperature}, eps={epsilon}"));
    }
    if epsilon == 0.0 {
        return ScoreVector::new(Method::Odin, row_max(&temperature_probs(head, features, temperature)?));
    }
    let probs = temperature_probs(head, features, temperature)?;
    let w = head.weights();
    let mut perturbed = features.to_owned();
    for (i, p) in probs.rows().into_iter().enumerate() {
        let top = p.iter().enumerate().fold(0, |b, (j, &v)| if v > p[b] { j } else { b });
        // ∇_x ln p_top(x / T) = (w_top − Σ_j p_j w_j) / T
        let expected = p.dot(w);
        let grad = (&w.row(top) - &expected) / temperature;
        for (x, g) in perturbed.row_mut(i).iter_mut().zip(grad.iter()) {
            *x += epsilon * sign(*g);
        }
    }
    ScoreVector::new(Method::Odin, row_max(&temperature_probs(head, perturbed.view(), temperature)?))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Class means and a shared, regularized covariance with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct MahalanobisModel {
    means: Array2<f64>,
    covariance: Array2<f64>,
    cholesky: Cholesky<f64, Dyn>,
}

impl MahalanobisModel {
    /// Uses `covariance` as given; it must be symmetric positive definite.
    pub fn new(means: Array2<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = means.ncols();
        if covariance.dim() != (d, d) {
            return Err(config_err!("covariance shape {:?} does not match dimension {d}", covariance.dim()));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("class means must be finite".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > 1e-12 * (1.0 + covariance[[i, j]].abs()) {
                    return Err(Error::Numerical("covariance is not symmetric".into()));
                }
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| covariance[[i, j]]);
        let cholesky = Cholesky::new(m).ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        Ok(Self { means, covariance, cholesky })
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    /// `(x−μ)ᵀ Σ⁻¹ (x−μ)`
    pub fn sq_distance(&self, x: &[f64], class: usize) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.means.row(class)).map(|(a, b)| a - b));
        let l = self.cholesky.l_dirty();
        let z = l.solve_lower_triangular(&diff).expect("cholesky factor has a positive diagonal");
        z.norm_squared()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ridge {
    /// `scale · trace(Σ) / D`, falling back to `scale` when the trace is zero.
    RelativeTrace(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::RelativeTrace(1e-6)
    }
}

/// Class means plus the pooled within-class covariance (÷ N) and a ridge.
pub fn fit_mahalanobis(dataset: &FeatureDataset) -> Result<MahalanobisModel> {
    fit_mahalanobis_with(dataset, Ridge::default())
}

pub fn fit_mahalanobis_with(dataset: &FeatureDataset, ridge: Ridge) -> Result<MahalanobisModel> {
    let means = class_centroids(dataset)?;
    let d = dataset.dim();
    let mut centered = dataset.features().to_owned();
    for (mut row, &l) in centered.rows_mut().into_iter().zip(dataset.labels()) {
        row -= &means.row(l);
    }
    let mut cov = centered.t().dot(&centered) / dataset.len() as f64;
    // exact symmetry for the Cholesky check
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    let lambda = match ridge {
        Ridge::RelativeTrace(s) => {
            let tr = cov.diag().sum();
            if tr > 0.0 {
                s * tr / d as f64
            } else {
                s
            }
        }
        Ridge::Absolute(l) => l,
    };
    for i in 0..d {
        cov[[i, i]] += lambda;
    }
    MahalanobisModel::new(means, cov)
}

/// `−min_c (x−μ_c)ᵀ Σ⁻¹ (x−μ_c)`
pub fn score_mahalanobis(model: &MahalanobisModel, features: ArrayView2<'_, f64>) -> Result<ScoreVector> {
    if features.ncols() != model.means.ncols() {
        return Err(config_err!(
            "feature dimension {} does not match model dimension {}",
            features.ncols(),
            model.means.ncols()
        ));
    }
    let values = features
        .rows()
        .into_iter()
        .map(|r| {
            let x = r.to_vec();
            let best = (0..model.means.nrows()).map(|c| model.sq_distance(&x, c)).fold(f64::INFINITY, f64::min);
            -best
        })
        .collect();
    ScoreVector::new(Method::Mahalanobis, values)
}

/// Per-class mean softmax posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct KlTemplates {
    templates: Array2<f64>,
}

impl KlTemplates {
    pub fn new(templates: Array2<f64>) -> Result<Self> {
        for (c, t) in templates.rows().into_iter().enumerate() {
            if t.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (t.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("template {c} is not a probability vector")));
            }
        }
        Ok(Self { templates })
    }

    pub fn templates(&self) -> &Array2<f64> {
        &self.templates
    }

    pub fn num_classes(&self) -> usize {
        self.templates.nrows()
    }
}

/// Template for class `c` is the mean softmax over training samples predicted
/// as `c`; a class nobody is predicted as falls back to its labeled samples.
pub fn fit_kl_templates(head: &LinearHead, dataset: &FeatureDataset) -> Result<KlTemplates> {
    require_flat(head, Method::KlMatching)?;
    let probs = temperature_probs(head, dataset.features(), 1.0)?;
    let c = probs.ncols();
    if dataset.num_classes() != c {
        return Err(config_err!("head has {c} classes, dataset has {}", dataset.num_classes()));
    }
    let mut by_pred = Array2::<f64>::zeros((c, c));
    let mut n_pred = vec![0usize; c];
    let mut by_label = Array2::<f64>::zeros((c, c));
    let mut n_label = vec![0usize; c];
    for (p, &label) in probs.rows().into_iter().zip(dataset.labels()) {
        let top = p.iter().enumerate().fold(0, |b, (j, &v)| if v > p[b] { j } else { b });
        let mut row = by_pred.row_mut(top);
        row += &p;
        n_pred[top] += 1;
        let mut row = by_label.row_mut(label);
        row += &p;
        n_label[label] += 1;
    }
    let mut templates = Array2::<f64>::zeros((c, c));
    for k in 0..c {
        let (sum, n) = if n_pred[k] > 0 { (by_pred.row(k), n_pred[k]) } else { (by_label.row(k), n_label[k]) };
        if n == 0 {
            return Err(Error::Data(format!("class {k} has neither predicted nor labeled samples")));
        }
        templates.row_mut(k).assign(&(&sum / n as f64));
    }
    KlTemplates::new(templates)
}

/// `KL(p ‖ q) = Σ p ln(p/q)`; terms with `p = 0` vanish, other logs are
/// floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
        .sum()
}

/// `−min_c KL(p(x) ‖ template_c)`
pub fn score_kl_matching(
    templates: &KlTemplates,
    head: &LinearHead,
    features: ArrayView2<'_, f64>,
) -> Result<ScoreVector> {
    require_flat(head, Method::KlMatching)?;
    if head.layout().num_classes() != templates.num_classes() {
        return Err(config_err!(
            "head has {} classes, templates have {}",
            head.layout().num_classes(),
            templates.num_classes()
        ));
    }
    let probs = temperature_probs(head, features, 1.0)?;
    score_kl_posteriors(templates, probs.view())
}

/// KL-matching score for posteriors computed elsewhere.
pub fn score_kl_posteriors(templates: &KlTemplates, posteriors: ArrayView2<'_, f64>) -> Result<ScoreVector> {
    if posteriors.ncols() != templates.num_classes() {
        return Err(config_err!("posteriors have {} classes, templates {}", posteriors.ncols(), templates.num_classes()));
    }
    let values = posteriors
        .rows()
        .into_iter()
        .map(|p| {
            let p = p.to_vec();
            let best = templates
                .templates
                .rows()
                .into_iter()
                .map(|t| kl_divergence(&p, t.as_slice().expect("standard layout")))
                .fold(f64::INFINITY, f64::min);
            // rounding can push KL a hair below zero
            -best.max(0.0)
        })
        .collect();
    ScoreVector::new(Method::KlMatching, values)
}

/// Threshold detector: `true` (in-distribution) iff `score ≥ gamma`.
pub fn detect(scores: &ScoreVector, gamma: f64) -> Result<Vec<bool>> {
    if !gamma.is_finite() {
        return Err(config_err!("gamma must be finite"));
    }
    Ok(scores.values().iter().map(|&s| s >= gamma).collect())
}

/// Mean `p_others` per group over the supplied samples.
pub fn others_score_profile(
    head: &LinearHead,
    features: ArrayView2<'_, f64>,
    partition: &GroupPartition,
) -> Result<Array1<f64>> {
    if features.nrows() == 0 {
        return Err(config_err!("others profile needs at least one sample"));
    }
    let others = others_probabilities(head, features, partition)?;
    Ok(others.mean_axis(ndarray::Axis(0)).expect("nonempty"))
}

/// `group_index,group_name,mean_others`
pub fn profile_to_csv(profile: &Array1<f64>, partition: &GroupPartition) -> String {
    let mut s = String::from("group_index,group_name,mean_others\n");
    for (k, v) in profile.iter().enumerate() {
        s.push_str(&format!("{k},{},{v}\n", partition.group_names()[k]));
    }
    s
}

/// Hyperparameters shared by the baseline scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub energy_temperature: f64,
    pub odin: OdinParams,
    pub ridge: Ridge,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { energy_temperature: 1.0, odin: OdinParams::default(), ridge: Ridge::default() }
    }
}

/// A scoring method bound to a head and whatever it fitted on training data.
#[derive(Clone, Debug)]
pub struct Scorer<'a> {
    method: Method,
    head: &'a LinearHead,
    partition: Option<&'a GroupPartition>,
    mahalanobis: Option<MahalanobisModel>,
    kl: Option<KlTemplates>,
    params: ScoreParams,
}

impl<'a> Scorer<'a> {
    /// `train` is required for Mahalanobis and KL matching. MOS uses
    /// `partition` when given, the head's own block layout otherwise.
    pub fn fit(
        method: Method,
        head: &'a LinearHead,
        partition: Option<&'a GroupPartition>,
        train: Option<&FeatureDataset>,
        params: ScoreParams,
    ) -> Result<Self> {
        if method.needs_grouped_head() != head.layout().is_grouped() {
            let kind = if head.layout().is_grouped() { "grouped" } else { "flat" };
            return Err(config_err!("{method} cannot score with a {kind} head"));
        }
        let need_train = || train.ok_or_else(|| config_err!("{method} needs training features"));
        let mahalanobis = match method {
            Method::Mahalanobis => Some(fit_mahalanobis_with(need_train()?, params.ridge)?),
            _ => None,
        };
        let kl = match method {
            Method::KlMatching => Some(fit_kl_templates(head, need_train()?)?),
            _ => None,
        };
        Ok(Self { method, head, partition, mahalanobis, kl, params })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn score(&self, features: ArrayView2<'_, f64>) -> Result<ScoreVector> {
        match self.method {
            Method::Mos => match self.partition {
                Some(p) => score_mos(self.head, features, p),
                None => score_mos_by_layout(self.head, features),
            },
            Method::Msp => score_msp(self.head, features),
            Method::Energy => score_energy(self.head, features, self.params.energy_temperature),
            Method::Odin => score_odin(self.head, features, self.params.odin),
            Method::Mahalanobis => score_mahalanobis(self.mahalanobis.as_ref().unwrap(), features),
            Method::KlMatching => score_kl_matching(self.kl.as_ref().unwrap(), self.head, features),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::flat_softmax;
    use crate::data::LabelSpace;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_head(bias: Vec<f64>) -> LinearHead {
        let c = bias.len();
        LinearHead::from_parts(HeadLayout::Flat { num_classes: c }, Array2::zeros((c, 1)), Array1::from(bias)).unwrap()
    }

    fn random_flat(rng: &mut ChaCha8Rng, c: usize, d: usize) -> LinearHead {
        let w = Array2::from_shape_fn((c, d), |_| rng.random_range(-2.0..2.0));
        let b = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        LinearHead::from_parts(HeadLayout::Flat { num_classes: c }, w, b).unwrap()
    }

    fn three_groups() -> GroupPartition {
        GroupPartition::new(vec!["a".into(), "b".into(), "c".into()], vec![vec![0], vec![1], vec![2]], 3).unwrap()
    }

    #[test]
    fn mos_direct_min() {
        let p = three_groups();
        // block [real, others]; choose others probabilities 0.1, 0.9, 0.95
        let others = [0.1f64, 0.9, 0.95];
        let bias: Vec<f64> = others.iter().flat_map(|&o| [(1.0 - o).ln(), o.ln()]).collect();
        let head = LinearHead::from_parts(HeadLayout::grouped(&p), Array2::zeros((6, 1)), Array1::from(bias)).unwrap();
        let s = score_mos(&head, array![[0.0]].view(), &p).unwrap();
        assert_abs_diff_eq!(s.values()[0], -0.1, epsilon = 1e-12);
        assert_eq!(score_mos_by_layout(&head, array![[0.0]].view()).unwrap(), s);

        let single = GroupPartition::single(2).unwrap();
        let head = LinearHead::from_parts(HeadLayout::grouped(&single), Array2::zeros((3, 1)), array![0.0, 1.0, 2.0])
            .unwrap();
        let s = score_mos(&head, array![[0.0]].view(), &single).unwrap();
        assert_abs_diff_eq!(s.values()[0], -flat_softmax(&[0.0, 1.0, 2.0])[2], epsilon = 1e-15);

        assert!(score_mos(&flat_head(vec![0.0, 1.0, 2.0]), array![[0.0]].view(), &p).is_err());
    }

    #[test]
    fn mos_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GroupPartition::new(vec!["x".into(), "y".into()], vec![vec![0, 2, 3], vec![1, 4]], 5).unwrap();
        let layout = HeadLayout::grouped(&p);
        for _ in 0..20 {
            let w = Array2::from_shape_fn((layout.out_dim(), 3), |_| rng.random_range(-3.0..3.0));
            let b = Array1::from_shape_fn(layout.out_dim(), |_| rng.random_range(-3.0..3.0));
            let head = LinearHead::from_parts(layout.clone(), w.clone(), b.clone()).unwrap();
            let x = Array2::from_shape_fn((10, 3), |_| rng.random_range(-3.0..3.0));
            let s = score_mos(&head, x.view(), &p).unwrap();
            for i in 0..10 {
                let z: Vec<f64> = (0..layout.out_dim()).map(|o| b[o] + (0..3).map(|j| w[[o, j]] * x[[i, j]]).sum::<f64>()).collect();
                // block 0 = logits 0..4 (others at 3), block 1 = 4..7 (others at 6)
                let others0 = z[3].exp() / z[0..4].iter().map(|v| v.exp()).sum::<f64>();
                let others1 = z[6].exp() / z[4..7].iter().map(|v| v.exp()).sum::<f64>();
                assert_abs_diff_eq!(s.values()[i], -others0.min(others1), epsilon = 1e-12);
                assert!((-1.0..=0.0).contains(&s.values()[i]));
            }
        }
    }

    #[test]
    fn msp_examples() {
        let h = flat_head(vec![0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()]);
        assert_abs_diff_eq!(score_msp(&h, array![[0.0]].view()).unwrap().values()[0], 0.5, epsilon = 1e-12);
        let h = flat_head(vec![1.5; 7]);
        assert_abs_diff_eq!(score_msp(&h, array![[3.0]].view()).unwrap().values()[0], 1.0 / 7.0, epsilon = 1e-15);
        let p = three_groups();
        let g = LinearHead::zeros(HeadLayout::grouped(&p), 1);
        assert!(score_msp(&g, array![[0.0]].view()).is_err());
    }

    #[test]
    fn msp_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_flat(&mut rng, 6, 3);
        let x = Array2::from_shape_fn((30, 3), |_| rng.random_range(-3.0..3.0));
        let s = score_msp(&h, x.view()).unwrap();
        let z = forward_logits(&h, x.view()).unwrap();
        for (i, r) in z.rows().into_iter().enumerate() {
            let denom: f64 = r.iter().map(|v| v.exp()).sum();
            let best = r.iter().map(|v| v.exp() / denom).fold(0.0, f64::max);
            assert_abs_diff_eq!(s.values()[i], best, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_examples() {
        let h = flat_head(vec![0.0, 0.0]);
        assert_abs_diff_eq!(score_energy(&h, array![[0.0]].view(), 1.0).unwrap().values()[0], 2f64.ln(), epsilon = 1e-15);
        let one = LinearHead::from_parts(HeadLayout::Flat { num_classes: 1 }, array![[2.0]], array![0.5]).unwrap();
        assert_abs_diff_eq!(score_energy(&one, array![[1.0]].view(), 1.0).unwrap().values()[0], 2.5, epsilon = 1e-15);
        let big = flat_head(vec![1000.0, 0.0]);
        let e = score_energy(&big, array![[0.0]].view(), 1.0).unwrap().values()[0];
        assert_abs_diff_eq!(e, 1000.0, epsilon = 1e-9);
        assert!(score_energy(&h, array![[0.0]].view(), 0.0).is_err());
    }

    #[test]
    fn odin_degenerate_equals_msp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_flat(&mut rng, 5, 4);
        let x = Array2::from_shape_fn((40, 4), |_| rng.random_range(-3.0..3.0));
        let odin = score_odin(&h, x.view(), OdinParams { temperature: 1.0, epsilon: 0.0 }).unwrap();
        let msp = score_msp(&h, x.view()).unwrap();
        assert_eq!(odin.values(), msp.values());
    }

    #[test]
    fn odin_high_temperature_flattens() {
        let h = flat_head(vec![1.0, 2.0, 3.0]);
        let s = score_odin(&h, array![[0.0]].view(), OdinParams { temperature: 1e6, epsilon: 0.0 }).unwrap();
        assert_abs_diff_eq!(s.values()[0], 1.0 / 3.0, epsilon = 1e-6);
        assert!(score_odin(&h, array![[0.0]].view(), OdinParams { temperature: 1.0, epsilon: -1.0 }).is_err());
    }

    #[test]
    fn odin_perturbation_never_lowers_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let h = random_flat(&mut rng, 4, 3);
            let x = Array2::from_shape_fn((25, 3), |_| rng.random_range(-2.0..2.0));
            for t in [1.0, 10.0, 1000.0] {
                let base = score_odin(&h, x.view(), OdinParams { temperature: t, epsilon: 0.0 }).unwrap();
                let pert = score_odin(&h, x.view(), OdinParams { temperature: t, epsilon: 1e-3 }).unwrap();
                for (a, b) in base.values().iter().zip(pert.values()) {
                    assert!(b + 1e-15 >= *a, "T={t}: {b} < {a}");
                }
            }
        }
    }

    #[test]
    fn mahalanobis_single_points_give_ridge_covariance() {
        let ds = FeatureDataset::new(array![[1.0, 2.0], [3.0, -1.0]], vec![0, 1], LabelSpace::indexed(2).unwrap()).unwrap();
        let m = fit_mahalanobis(&ds).unwrap();
        assert_eq!(m.means(), &array![[1.0, 2.0], [3.0, -1.0]]);
        assert_eq!(m.covariance(), &(Array2::<f64>::eye(2) * 1e-6));
        let m = fit_mahalanobis_with(&ds, Ridge::Absolute(0.25)).unwrap();
        assert_eq!(m.covariance(), &(Array2::<f64>::eye(2) * 0.25));
        assert!(fit_mahalanobis_with(&ds, Ridge::Absolute(0.0)).is_err());
    }

    #[test]
    fn mahalanobis_identity_example() {
        let m = MahalanobisModel::new(array![[0.0, 0.0], [4.0, 0.0]], Array2::eye(2)).unwrap();
        let s = score_mahalanobis(&m, array![[1.0, 0.0], [4.0, 0.0]].view()).unwrap();
        assert_abs_diff_eq!(s.values()[0], -1.0, epsilon = 1e-15);
        assert_eq!(s.values()[1], 0.0);
        assert!(score_mahalanobis(&m, array![[1.0]].view()).is_err());
    }

    #[test]
    fn mahalanobis_recovers_isotropic_variance() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = 0.7;
        let normal = Normal::new(0.0, sigma).unwrap();
        let (n, d) = (20_000, 3);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let f = Array2::from_shape_fn((n, d), |(i, _)| 5.0 * labels[i] as f64 + normal.sample(&mut rng));
        let ds = FeatureDataset::new(f, labels, LabelSpace::indexed(2).unwrap()).unwrap();
        let m = fit_mahalanobis(&ds).unwrap();
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { sigma * sigma } else { 0.0 };
                assert!((m.covariance()[[i, j]] - want).abs() < 0.03, "{:?}", m.covariance());
            }
        }
        assert_eq!(m.means(), &class_centroids(&ds).unwrap());
    }

    #[test]
    fn mahalanobis_matches_naive_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let cov = a.dot(&a.t()) + Array2::<f64>::eye(3) * 0.5;
        let means = Array2::from_shape_fn((4, 3), |_| rng.random_range(-3.0..3.0));
        let m = MahalanobisModel::new(means.clone(), cov.clone()).unwrap();
        let inv = DMatrix::from_fn(3, 3, |i, j| cov[[i, j]]).try_inverse().unwrap();
        let x = Array2::from_shape_fn((15, 3), |_| rng.random_range(-3.0..3.0));
        let s = score_mahalanobis(&m, x.view()).unwrap();
        for i in 0..15 {
            let mut best = f64::INFINITY;
            for c in 0..4 {
                let mut d = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        d += (x[[i, a]] - means[[c, a]]) * inv[(a, b)] * (x[[i, b]] - means[[c, b]]);
                    }
                }
                best = best.min(d);
            }
            assert_abs_diff_eq!(s.values()[i], -best, epsilon = 1e-9);
        }
    }

    #[test]
    fn kl_hand_example_and_equality() {
        let t = KlTemplates::new(array![[0.9, 0.1], [0.1, 0.9]]).unwrap();
        let s = score_kl_posteriors(&t, array![[0.5, 0.5], [0.9, 0.1]].view()).unwrap();
        let want = -(0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln());
        assert_abs_diff_eq!(s.values()[0], want, epsilon = 1e-15);
        assert_abs_diff_eq!(s.values()[0], -0.51083, epsilon = 1e-5);
        assert_eq!(s.values()[1], 0.0);
    }

    #[test]
    fn kl_templates_identity_and_validity() {
        // bias-only head: every sample has the same posterior v
        let h = flat_head(vec![2.0, 0.0, -1.0]);
        let v = flat_softmax(&[2.0, 0.0, -1.0]);
        let ds = FeatureDataset::new(array![[0.0], [1.0], [2.0]], vec![0, 1, 2], LabelSpace::indexed(3).unwrap()).unwrap();
        let t = fit_kl_templates(&h, &ds).unwrap();
        for (a, b) in t.templates().row(0).iter().zip(&v) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        // classes 1 and 2 have no predictions and only class-0 labels
        let ds = FeatureDataset::new(array![[0.0]], vec![0], LabelSpace::indexed(3).unwrap()).unwrap();
        assert!(fit_kl_templates(&h, &ds).is_err());
        let s = score_kl_matching(&t, &h, array![[5.0]].view()).unwrap();
        assert_eq!(s.values()[0], 0.0);
    }

    #[test]
    fn kl_templates_match_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = random_flat(&mut rng, 4, 2);
        let x = Array2::from_shape_fn((200, 2), |_| rng.random_range(-3.0..3.0));
        let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let ds = FeatureDataset::new(x.clone(), labels.clone(), LabelSpace::indexed(4).unwrap()).unwrap();
        let t = fit_kl_templates(&h, &ds).unwrap();
        let z = forward_logits(&h, x.view()).unwrap();
        for c in 0..4 {
            let mut acc = [0.0; 4];
            let mut n = 0;
            for i in 0..200 {
                let p = flat_softmax(z.row(i).as_slice().unwrap());
                let top = (0..4).fold(0, |b, j| if p[j] > p[b] { j } else { b });
                if top == c {
                    for j in 0..4 {
                        acc[j] += p[j];
                    }
                    n += 1;
                }
            }
            if n == 0 {
                for i in (0..200).filter(|&i| labels[i] == c) {
                    let p = flat_softmax(z.row(i).as_slice().unwrap());
                    for j in 0..4 {
                        acc[j] += p[j];
                    }
                    n += 1;
                }
            }
            for j in 0..4 {
                assert_abs_diff_eq!(t.templates()[[c, j]], acc[j] / n as f64, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(t.templates().row(c).sum(), 1.0, epsilon = 1e-9);
        }
        // scoring matches a naive KL loop
        let s = score_kl_matching(&t, &h, x.view()).unwrap();
        for i in 0..200 {
            let p = flat_softmax(z.row(i).as_slice().unwrap());
            let mut best = f64::INFINITY;
            for c in 0..4 {
                let mut kl = 0.0;
                for j in 0..4 {
                    kl += p[j] * (p[j] / t.templates()[[c, j]]).ln();
                }
                best = best.min(kl);
            }
            assert_abs_diff_eq!(s.values()[i], -best.max(0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn detect_is_boundary_inclusive() {
        let s = ScoreVector::new(Method::Msp, vec![0.3, 0.7, 0.5]).unwrap();
        assert_eq!(detect(&s, 0.5).unwrap(), vec![false, true, true]);
        assert_eq!(detect(&s, f64::MIN).unwrap(), vec![true; 3]);
        assert!(detect(&s, f64::NAN).is_err());
    }

    #[test]
    fn profile_examples() {
        let p = GroupPartition::new(vec!["a".into(), "b".into()], vec![vec![0], vec![1]], 2).unwrap();
        let bias = vec![0.9f64.ln(), 0.1f64.ln(), 0.1f64.ln(), 0.9f64.ln()];
        let head = LinearHead::from_parts(HeadLayout::grouped(&p), Array2::zeros((4, 1)), Array1::from(bias)).unwrap();
        let prof = others_score_profile(&head, array![[0.0]].view(), &p).unwrap();
        assert_abs_diff_eq!(prof[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(prof[1], 0.9, epsilon = 1e-12);
        let prof3 = others_score_profile(&head, array![[0.0], [1.0], [2.0]].view(), &p).unwrap();
        assert_abs_diff_eq!(prof3[0], 0.1, epsilon = 1e-12);
        assert!(others_score_profile(&head, Array2::<f64>::zeros((0, 1)).view(), &p).is_err());
        assert_eq!(profile_to_csv(&prof, &p).lines().next(), Some("group_index,group_name,mean_others"));
    }

    #[test]
    fn mos_invariant_to_block_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = three_groups();
        let layout = HeadLayout::grouped(&p);
        let w = Array2::from_shape_fn((6, 2), |_| rng.random_range(-2.0..2.0));
        let b = Array1::from_shape_fn(6, |_| rng.random_range(-2.0..2.0));
        let head = LinearHead::from_parts(layout.clone(), w.clone(), b.clone()).unwrap();
        let mut b2 = b.clone();
        for (k, r) in layout.blocks().into_iter().enumerate() {
            for o in r {
                b2[o] += 7.0 * k as f64 - 3.0;
            }
        }
        let shifted = LinearHead::from_parts(layout, w, b2).unwrap();
        let x = Array2::from_shape_fn((20, 2), |_| rng.random_range(-2.0..2.0));
        let a = score_mos(&head, x.view(), &p).unwrap();
        let s = score_mos(&shifted, x.view(), &p).unwrap();
        for (u, v) in a.values().iter().zip(s.values()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }
}
