//! Stratified k-fold splitting, per-class precision/recall/F1 and their
//! macro ("Category Average") and micro ("Absolute Average") aggregates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::expansion::Thesaurus;
use crate::pipeline::{FittedPipeline, Pipeline, PipelineConfig};
use crate::rng::keyed_rng;
use crate::textprep::Document;

pub const CSV_HEADER: &str = "category,precision,recall,f1,support";
pub const MACRO_ROW: &str = "Category Average";
pub const MICRO_ROW: &str = "Absolute Average";

/// Per class, indices are shuffled and dealt round-robin into `k` folds.
/// The dealing position carries over from one class to the next so fold
/// sizes stay balanced overall. Each fold is returned sorted.
pub fn stratified_kfold<S: AsRef<str>>(
    labels: &[S],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_ref()).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Stratification {
            class: class.to_string(),
            count: members.len(),
            required: k,
        });
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut members) in by_class {
        members.shuffle(&mut keyed_rng(seed, &["kfold", class]));
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: BTreeMap<String, ClassCounts>,
    pub total_samples: usize,
}

impl ConfusionCounts {
    pub fn from_predictions<S: AsRef<str>, T: AsRef<str>>(
        predictions: &[S],
        truth: &[T],
    ) -> Result<Self> {
        if predictions.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                found: predictions.len(),
            });
        }
        let mut counts = ConfusionCounts {
            total_samples: truth.len(),
            ..Default::default()
        };
        for (p, t) in predictions.iter().zip(truth) {
            let (p, t) = (p.as_ref(), t.as_ref());
            if p == t {
                counts
                    .per_class
                    .entry(t.to_string())
                    .or_default()
                    .true_positive += 1;
            } else {
                counts
                    .per_class
                    .entry(t.to_string())
                    .or_default()
                    .false_negative += 1;
                counts
                    .per_class
                    .entry(p.to_string())
                    .or_default()
                    .false_positive += 1;
            }
        }
        Ok(counts)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub category: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub micro_avg: Averages,
    pub total_support: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Unweighted mean of per-class precision, recall and F1. F1 is averaged
/// directly, not recomputed from the averaged precision and recall.
pub fn macro_average(rows: &[ClassMetrics]) -> Averages {
    if rows.is_empty() {
        return Averages::default();
    }
    let n = rows.len() as f64;
    Averages {
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
    }
}

/// Support-weighted recall, i.e. pooled true positives over all samples.
pub fn pooled_recall(rows: &[ClassMetrics]) -> f64 {
    let support: usize = rows.iter().map(|r| r.support).sum();
    let tp: f64 = rows.iter().map(|r| r.recall * r.support as f64).sum();
    ratio(tp, support as f64)
}

/// Per-class and averaged metrics. Rows cover classes present in `truth`;
/// predictions of absent classes still count against precision-free recall.
pub fn score<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[S],
    truth: &[T],
) -> Result<MetricsReport> {
    if truth.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot score an empty prediction set".into(),
        ));
    }
    let counts = ConfusionCounts::from_predictions(predictions, truth)?;
    let mut classes = Vec::new();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (category, c) in &counts.per_class {
        tp += c.true_positive;
        fp += c.false_positive;
        fn_ += c.false_negative;
        let support = c.true_positive + c.false_negative;
        if support == 0 {
            continue;
        }
        let precision = ratio(
            c.true_positive as f64,
            (c.true_positive + c.false_positive) as f64,
        );
        let recall = ratio(c.true_positive as f64, support as f64);
        classes.push(ClassMetrics {
            category: category.clone(),
            precision,
            recall,
            f1: f1(precision, recall),
            support,
        });
    }
    let micro_p = ratio(tp as f64, (tp + fp) as f64);
    let micro_r = ratio(tp as f64, (tp + fn_) as f64);
    Ok(MetricsReport {
        macro_avg: macro_average(&classes),
        micro_avg: Averages {
            precision: micro_p,
            recall: micro_r,
            f1: f1(micro_p, micro_r),
        },
        total_support: counts.total_samples,
        classes,
        config: None,
    })
}

impl MetricsReport {
    /// Table-4-shaped CSV: one row per class, then the two average rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let mut row = |name: &str, p: f64, r: f64, f: f64, s: usize| {
            let _ = writeln!(out, "{},{p:.4},{r:.4},{f:.4},{s}", csv_field(name));
        };
        for c in &self.classes {
            row(&c.category, c.precision, c.recall, c.f1, c.support);
        }
        let m = self.macro_avg;
        row(MACRO_ROW, m.precision, m.recall, m.f1, self.total_support);
        let m = self.micro_avg;
        row(MICRO_ROW, m.precision, m.recall, m.f1, self.total_support);
        out
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `(support, f1)` per class, ordered by support then category.
pub fn category_size_curve(report: &MetricsReport) -> Vec<(usize, f64)> {
    let mut rows: Vec<&ClassMetrics> = report.classes.iter().collect();
    rows.sort_by(|a, b| {
        a.support
            .cmp(&b.support)
            .then_with(|| a.category.cmp(&b.category))
    });
    rows.into_iter().map(|r| (r.support, r.f1)).collect()
}

/// Mean of per-fold reports. Averages are means of the fold averages;
/// per-class rows average over the folds where the class occurs and sum
/// its support.
pub fn mean_report(folds: &[MetricsReport]) -> MetricsReport {
    let n = folds.len().max(1) as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> Averages| Averages {
        precision: folds.iter().map(|r| f(r).precision).sum::<f64>() / n,
        recall: folds.iter().map(|r| f(r).recall).sum::<f64>() / n,
        f1: folds.iter().map(|r| f(r).f1).sum::<f64>() / n,
    };
    let names: BTreeSet<&str> = folds
        .iter()
        .flat_map(|r| r.classes.iter().map(|c| c.category.as_str()))
        .collect();
    let classes = names
        .into_iter()
        .map(|name| {
            let rows: Vec<&ClassMetrics> = folds
                .iter()
                .filter_map(|r| r.classes.iter().find(|c| c.category == name))
                .collect();
            let m = rows.len() as f64;
            ClassMetrics {
                category: name.to_string(),
                precision: rows.iter().map(|c| c.precision).sum::<f64>() / m,
                recall: rows.iter().map(|c| c.recall).sum::<f64>() / m,
                f1: rows.iter().map(|c| c.f1).sum::<f64>() / m,
                support: rows.iter().map(|c| c.support).sum(),
            }
        })
        .collect();
    MetricsReport {
        classes,
        macro_avg: mean(&|r| r.macro_avg),
        micro_avg: mean(&|r| r.micro_avg),
        total_support: folds.iter().map(|r| r.total_support).sum(),
        config: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub folds: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

/// Fits the pipeline for one fold: every statistic comes from the
/// documents outside fold `fold`. Returns the fitted pipeline and the
/// held-out indices.
pub fn fit_fold(
    config: &PipelineConfig,
    corpus: &LabeledCorpus<Document>,
    folds: &[Vec<usize>],
    fold: usize,
    hashtag_thesaurus: Option<&Thesaurus>,
) -> Result<FittedPipeline> {
    let mut held_out = vec![false; corpus.len()];
    folds[fold].iter().for_each(|&i| held_out[i] = true);
    let train_idx: Vec<usize> = (0..corpus.len()).filter(|&i| !held_out[i]).collect();
    Pipeline::fit(
        &config.for_fold(fold),
        &corpus.subset(&train_idx),
        hashtag_thesaurus,
    )
}

/// k-fold cross-validation of the full pipeline. Vocabulary, idf, feature
/// mask, category thesaurus and model are fit on each training portion
/// only; the held-out fold is transformed and scored.
pub fn cross_validate(
    config: &PipelineConfig,
    corpus: &LabeledCorpus<Document>,
    k: usize,
    seed: u64,
    hashtag_thesaurus: Option<&Thesaurus>,
) -> Result<CrossValidationReport> {
    let folds = stratified_kfold(&corpus.labels(), k, seed)?;
    let reports = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let wrap = |e: Error| Error::Fold {
                fold: f,
                source: Box::new(e),
            };
            let fitted = fit_fold(config, corpus, &folds, f, hashtag_thesaurus).map_err(wrap)?;
            let test = corpus.subset(&folds[f]);
            let predicted = fitted
                .predict(test.documents(), hashtag_thesaurus)
                .map_err(wrap)?;
            score(&predicted, &test.labels()).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = mean_report(&reports);
    mean.config = serde_json::to_value(config).ok();
    Ok(CrossValidationReport {
        folds: reports,
        mean,
    })
}
