//! Multinomial naive Bayes and one-vs-rest linear models (hinge or log
//! loss) trained by stochastic subgradient descent.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{score, stratified_kfold};
use crate::features::{encode_labels, SparseMatrix};
use crate::rng::keyed_rng;

pub const MODEL_MAGIC: &str = "STXM1";

/// Stand-in for `ln 0` in naive Bayes weights so scores stay finite.
pub const LOG_ZERO: f64 = -1e100;

pub const SCHEDULE_ID: &str = "inv-scaling-t0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nb,
    Logreg,
    Svm,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nb" => Ok(ModelKind::Nb),
            "logreg" => Ok(ModelKind::Logreg),
            "svm" => Ok(ModelKind::Svm),
            other => Err(Error::InvalidConfig(format!("unknown learner {other:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nb => "nb",
            ModelKind::Logreg => "logreg",
            ModelKind::Svm => "svm",
        })
    }
}

/// Loss of a binary linear problem, evaluated on the margin `y * score`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Hinge,
    Log,
}

impl Loss {
    pub fn value(self, margin: f64) -> f64 {
        match self {
            Loss::Hinge => (1.0 - margin).max(0.0),
            // ln(1 + e^-m), stable for large |m|
            Loss::Log => {
                if margin > 0.0 {
                    (-margin).exp().ln_1p()
                } else {
                    -margin + margin.exp().ln_1p()
                }
            }
        }
    }

    /// d loss / d margin.
    pub fn derivative(self, margin: f64) -> f64 {
        match self {
            Loss::Hinge => {
                if margin < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Loss::Log => -sigmoid(-margin),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(1/2)|w|^2 + C * sum_i s_i * loss(y_i (w.x_i + b))`.
pub fn objective(
    loss: Loss,
    w: &[f64],
    b: f64,
    x: &SparseMatrix,
    targets: &[f64],
    sample_weights: &[f64],
    c: f64,
) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let data: f64 = (0..x.rows())
        .map(|i| sample_weights[i] * loss.value(targets[i] * (x.row_dot(i, w) + b)))
        .sum();
    reg + c * data
}

/// Gradient (or hinge subgradient) of [`objective`] with respect to `(w, b)`.
pub fn objective_gradient(
    loss: Loss,
    w: &[f64],
    b: f64,
    x: &SparseMatrix,
    targets: &[f64],
    sample_weights: &[f64],
    c: f64,
) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for i in 0..x.rows() {
        let margin = targets[i] * (x.row_dot(i, w) + b);
        let coef = c * sample_weights[i] * loss.derivative(margin) * targets[i];
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            gw[j] += coef * v;
        }
        gb += coef;
    }
    (gw, gb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub class_weights: BTreeMap<String, f64>,
    pub epochs: usize,
    pub seed: u64,
    pub schedule: String,
    /// Naive Bayes smoothing; unused by the linear learners.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub config: TrainConfig,
    #[serde(default)]
    pub vocabulary_hash: Option<String>,
    #[serde(default)]
    pub feature_columns: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    #[serde(flatten)]
    model: TrainedModel,
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let file = ModelFile {
            magic: MODEL_MAGIC.to_string(),
            model: self.clone(),
        };
        Ok(serde_json::to_vec_pretty(&file)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(bytes)?;
        if file.magic != MODEL_MAGIC {
            return Err(Error::Format(format!(
                "expected {MODEL_MAGIC}, found {:?}",
                file.magic
            )));
        }
        let m = file.model;
        let dim = m.dim();
        if m.weights.len() != m.classes.len()
            || m.bias.len() != m.classes.len()
            || m.weights.iter().any(|w| w.len() != dim)
        {
            return Err(Error::Format("model weight shapes are inconsistent".into()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        TrainedModel::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Per-row, per-class decision values `w_c . x + b_c`.
    pub fn decision_function(&self, x: &SparseMatrix) -> Result<Vec<Vec<f64>>> {
        if x.rows() > 0 && x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.cols(),
            });
        }
        Ok((0..x.rows())
            .map(|i| {
                self.weights
                    .iter()
                    .zip(&self.bias)
                    .map(|(w, b)| x.row_dot(i, w) + b)
                    .collect()
            })
            .collect())
    }

    /// Argmax class per row; ties go to the earliest class in sorted order.
    pub fn predict(&self, x: &SparseMatrix) -> Result<Vec<String>> {
        Ok(self
            .decision_function(x)?
            .into_iter()
            .map(|scores| {
                let mut best = 0;
                for (c, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = c;
                    }
                }
                self.classes[best].clone()
            })
            .collect())
    }
}

fn check_inputs<S: AsRef<str>>(x: &SparseMatrix, y: &[S]) -> Result<(Vec<String>, Vec<usize>)> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    let (classes, encoded) = encode_labels(y);
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels(classes.len()));
    }
    Ok((classes, encoded))
}

/// Multinomial naive Bayes with additive smoothing, expressed as a linear
/// model: weights are per-feature log-likelihoods, bias the log-prior.
pub fn train_nb<S: AsRef<str>>(x: &SparseMatrix, y: &[S], alpha: f64) -> Result<TrainedModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be finite and non-negative, got {alpha}"
        )));
    }
    let (classes, encoded) = check_inputs(x, y)?;
    let k = classes.len();
    let v = x.cols();
    let mut counts = vec![vec![0.0; v]; k];
    let mut class_rows = vec![0usize; k];
    for (i, &c) in encoded.iter().enumerate() {
        class_rows[c] += 1;
        let (idx, val) = x.row(i);
        for (&j, &value) in idx.iter().zip(val) {
            counts[c][j] += value;
        }
    }
    let n = x.rows() as f64;
    let ln_or_floor = |num: f64, den: f64| {
        if num > 0.0 && den > 0.0 {
            (num / den).ln()
        } else {
            LOG_ZERO
        }
    };
    let weights = counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>() + alpha * v as f64;
            row.iter()
                .map(|&cnt| ln_or_floor(cnt + alpha, total))
                .collect()
        })
        .collect();
    let bias = class_rows.iter().map(|&m| (m as f64 / n).ln()).collect();
    Ok(TrainedModel {
        kind: ModelKind::Nb,
        classes,
        weights,
        bias,
        config: TrainConfig {
            c: 1.0,
            class_weights: BTreeMap::new(),
            epochs: 0,
            seed: 0,
            schedule: "closed-form".into(),
            alpha,
        },
        vocabulary_hash: None,
        feature_columns: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConfig {
    pub kind: ModelKind,
    pub c: f64,
    pub class_weights: BTreeMap<String, f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            kind: ModelKind::Svm,
            c: 1.0,
            class_weights: BTreeMap::new(),
            epochs: 30,
            seed: 0,
        }
    }
}

/// One-vs-rest training. Each class is an independent binary problem with
/// its own seeded shuffle, so classes can be trained in any order or in
/// parallel with identical results.
pub fn train_linear<S: AsRef<str>>(
    x: &SparseMatrix,
    y: &[S],
    config: &LinearConfig,
) -> Result<TrainedModel> {
    let loss = match config.kind {
        ModelKind::Svm => Loss::Hinge,
        ModelKind::Logreg => Loss::Log,
        ModelKind::Nb => {
            return Err(Error::InvalidConfig(
                "train_linear needs svm or logreg".into(),
            ))
        }
    };
    if !(config.c > 0.0 && config.c.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "C must be positive, got {}",
            config.c
        )));
    }
    if let Some((class, w)) = config
        .class_weights
        .iter()
        .find(|(_, &w)| !(w > 0.0 && w.is_finite()))
    {
        return Err(Error::InvalidConfig(format!(
            "class weight for {class:?} must be positive, got {w}"
        )));
    }
    let (classes, encoded) = check_inputs(x, y)?;
    for name in config.class_weights.keys() {
        if !classes.contains(name) {
            log::warn!("class weight given for {name:?}, which is absent from the training labels");
        }
    }
    let sample_weights: Vec<f64> = encoded
        .iter()
        .map(|&c| {
            config
                .class_weights
                .get(&classes[c])
                .copied()
                .unwrap_or(1.0)
        })
        .collect();

    let per_class: Vec<(Vec<f64>, f64)> = classes
        .par_iter()
        .enumerate()
        .map(|(c, name)| {
            let targets: Vec<f64> = encoded
                .iter()
                .map(|&l| if l == c { 1.0 } else { -1.0 })
                .collect();
            train_binary(x, &targets, &sample_weights, loss, config, name)
        })
        .collect::<Result<_>>()?;

    let (weights, bias) = per_class.into_iter().unzip();
    Ok(TrainedModel {
        kind: config.kind,
        classes,
        weights,
        bias,
        config: TrainConfig {
            c: config.c,
            class_weights: config.class_weights.clone(),
            epochs: config.epochs,
            seed: config.seed,
            schedule: SCHEDULE_ID.into(),
            alpha: 0.0,
        },
        vocabulary_hash: None,
        feature_columns: Vec::new(),
    })
}

/// SGD on `(lambda/2)|w|^2 + (1/n) sum_i s_i loss_i` with `lambda = 1/(C n)`,
/// which has the same minimizer as [`objective`]. Step size
/// `1 / (lambda (t + t0))`, `t0` chosen so the first step is 0.1. The weight
/// vector is stored as `scale * v` so the shrinkage step is O(1).
fn train_binary(
    x: &SparseMatrix,
    targets: &[f64],
    sample_weights: &[f64],
    loss: Loss,
    config: &LinearConfig,
    class: &str,
) -> Result<(Vec<f64>, f64)> {
    let n = x.rows();
    let lambda = 1.0 / (config.c * n as f64);
    let t0 = 10.0 / lambda;
    let mut v = vec![0.0; x.cols()];
    let mut scale = 1.0;
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = keyed_rng(config.seed, &["linear", class]);
    let mut t = 0.0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = 1.0 / (lambda * (t + t0));
            t += 1.0;
            let score = scale * x.row_dot(i, &v) + b;
            let g = loss.derivative(targets[i] * score) * targets[i] * sample_weights[i];
            scale *= 1.0 - eta * lambda;
            if g != 0.0 {
                let step = -eta * g;
                let (idx, val) = x.row(i);
                for (&j, &xv) in idx.iter().zip(val) {
                    v[j] += step * xv / scale;
                }
                b += step;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        let w: Vec<f64> = v.iter().map(|w| w * scale).collect();
        let value = objective(loss, &w, b, x, targets, sample_weights, config.c);
        if !value.is_finite() || !b.is_finite() {
            return Err(Error::Diverged {
                class: class.to_string(),
                epoch,
            });
        }
    }
    Ok((v.into_iter().map(|w| w * scale).collect(), b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub candidates: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen: f64,
}

/// Scores each distinct candidate (ascending) with `evaluate` and picks the
/// best; ties go to the smallest C.
pub fn grid_search<F>(candidates: &[f64], evaluate: F) -> Result<GridSearchResult>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let mut cs: Vec<f64> = candidates.to_vec();
    if cs.is_empty() {
        return Err(Error::InvalidConfig("no C candidates given".into()));
    }
    if let Some(bad) = cs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "C candidates must be positive, got {bad}"
        )));
    }
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let scores = cs
        .par_iter()
        .map(|&c| evaluate(c))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(GridSearchResult {
        chosen: cs[best],
        candidates: cs,
        scores,
    })
}

/// Grid search over C on a fixed feature matrix, scored by mean
/// stratified k-fold macro-F1.
pub fn grid_search_c<S: AsRef<str> + Sync>(
    x: &SparseMatrix,
    y: &[S],
    candidates: &[f64],
    folds: usize,
    base: &LinearConfig,
) -> Result<GridSearchResult> {
    if folds < 2 {
        return Err(Error::InvalidConfig(
            "grid search needs at least 2 folds".into(),
        ));
    }
    let labels: Vec<String> = y.iter().map(|l| l.as_ref().to_string()).collect();
    let splits = stratified_kfold(&labels, folds, base.seed)?;
    grid_search(candidates, |c| {
        let config = LinearConfig { c, ..base.clone() };
        let mut total = 0.0;
        for test in &splits {
            let mut is_test = vec![false; labels.len()];
            test.iter().for_each(|&i| is_test[i] = true);
            let train: Vec<usize> = (0..labels.len()).filter(|&i| !is_test[i]).collect();
            let train_y: Vec<&str> = train.iter().map(|&i| labels[i].as_str()).collect();
            let model = train_linear(&x.select_rows(&train), &train_y, &config)?;
            let predicted = model.predict(&x.select_rows(test))?;
            let truth: Vec<String> = test.iter().map(|&i| labels[i].clone()).collect();
            total += score(&predicted, &truth)?.macro_avg.f1;
        }
        Ok(total / splits.len() as f64)
    })
}
