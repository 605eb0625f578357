//! Exit criteria. Each test prints one `criterion N ... PASS|FAIL` line to
//! the process stdout (bypassing libtest capture) and then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stx_core::corpus::{test_count, train_test_split, LabeledCorpus};
use stx_core::evaluation::{
    fit_fold, macro_average, pooled_recall, score, stratified_kfold, ClassMetrics,
};
use stx_core::expansion::ThesaurusKind;
use stx_core::expansion::{
    build_hashtag_thesaurus, expand, expand_documents, ExpansionConfig, HashtagCounts, Side,
};
use stx_core::features::{anova_f, build_vocabulary, tfidf, SparseMatrix, F_SENTINEL};
use stx_core::learners::{
    objective, objective_gradient, train_linear, train_nb, LinearConfig, Loss, ModelKind,
};
use stx_core::pipeline::{ExpansionSettings, PipelineConfig};
use stx_core::synth::{generate, SynthConfig};
use stx_core::textprep::{normalize_document, Document, Stemmer, StopLists};
use stx_core::Error;

struct Verdict {
    id: u32,
    title: &'static str,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Verdict {
    fn new(id: u32, title: &'static str) -> Self {
        Verdict {
            id,
            title,
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn finish(self) {
        let status = if self.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        let mut line = format!("criterion {} {}: {status}", self.id, self.title);
        if !self.notes.is_empty() {
            line.push_str(&format!(" [{}]", self.notes.join("; ")));
        }
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        for f in &self.failures {
            let _ = writeln!(out, "    failed: {f}");
        }
        let _ = out.flush();
        assert!(
            self.failures.is_empty(),
            "criterion {} failed: {:?}",
            self.id,
            self.failures
        );
    }
}

fn doc(id: &str, tokens: &[&str], label: Option<&str>) -> Document {
    Document::new(
        id,
        tokens.iter().map(|t| t.to_string()).collect(),
        label.map(str::to_string),
    )
}

// Per-class rows (precision, recall, f1, support) of the published 75/25 results table.
const TABLE: [(&str, f64, f64, f64, usize); 24] = [
    ("Baby Products", 0.89, 1.00, 0.94, 8),
    ("Health & Personal Care", 0.78, 0.85, 0.81, 46),
    ("Digital Music", 0.82, 0.64, 0.72, 22),
    ("Beauty", 0.71, 0.50, 0.59, 10),
    ("Sports & Outdoors", 0.69, 0.62, 0.65, 56),
    ("Arts, Crafts & Sewing", 1.00, 0.20, 0.33, 5),
    ("Video Games", 0.89, 0.53, 0.67, 32),
    ("Home & Kitchen", 0.84, 0.89, 0.87, 334),
    ("Kindle Store", 1.00, 0.67, 0.80, 3),
    ("Tools & Home Improvement", 0.75, 0.50, 0.60, 18),
    ("Collectibles & Fine Art", 0.87, 0.81, 0.84, 16),
    ("CDs & Vinyl", 0.83, 0.35, 0.49, 55),
    ("Patio, Lawn & Garden", 0.00, 0.00, 0.00, 7),
    ("Clothing, Shoes & Jewelry", 0.89, 0.76, 0.82, 162),
    ("Cell Phones & Accessories", 1.00, 0.14, 0.25, 7),
    ("Books", 0.96, 0.98, 0.98, 4883),
    ("Pet Supplies", 1.00, 0.11, 0.20, 9),
    ("Automotive", 1.00, 0.60, 0.75, 5),
    ("Musical Instruments", 1.00, 0.70, 0.82, 10),
    ("Movies & TV", 0.74, 0.69, 0.71, 161),
    ("Office Products", 1.00, 0.56, 0.71, 9),
    ("Toys & Games", 0.86, 0.24, 0.38, 25),
    ("Electronics", 0.82, 0.75, 0.78, 101),
    ("Grocery & Gourmet Food", 0.00, 0.00, 0.00, 2),
];

fn table_rows() -> Vec<ClassMetrics> {
    TABLE
        .iter()
        .map(|&(category, precision, recall, f1, support)| ClassMetrics {
            category: category.to_string(),
            precision,
            recall,
            f1,
            support,
        })
        .collect()
}

#[test]
fn criterion_1_published_table_averages() {
    let mut v = Verdict::new(1, "published per-class table reproduces its average rows");
    let rows = table_rows();
    let m = macro_average(&rows);
    let within = |x: f64, target: f64, tol: f64| (x - target).abs() <= tol + 1e-12;
    v.check(
        within(m.precision, 0.81, 0.01),
        format!("macro precision {:.4} vs 0.81 +/- 0.01", m.precision),
    );
    v.check(
        within(m.recall, 0.54, 0.01),
        format!("macro recall {:.4} vs 0.54 +/- 0.01", m.recall),
    );
    v.check(
        within(m.f1, 0.61, 0.01),
        format!("macro F1 {:.4} vs 0.61 +/- 0.01", m.f1),
    );
    let micro = pooled_recall(&rows);
    let support: usize = rows.iter().map(|r| r.support).sum();
    v.note(format!(
        "macro=({:.4}, {:.4}, {:.4}) pooled recall={micro:.4} over support {support}",
        m.precision, m.recall, m.f1
    ));
    v.check(
        within(micro, 0.94, 0.005),
        format!("pooled recall {micro:.4} vs 0.94 +/- 0.005"),
    );
    v.finish();
}

/// Dense evaluation of tf = count / in-vocabulary features and
/// idf = ln(N / df), with features sorted lexicographically.
fn dense_tfidf(docs: &[Vec<String>], ngram_max: usize) -> (Vec<String>, Vec<Vec<f64>>) {
    let features = |tokens: &[String]| {
        let mut f: Vec<String> = tokens.to_vec();
        if ngram_max == 2 {
            f.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        }
        f
    };
    let per_doc: Vec<Vec<String>> = docs.iter().map(|d| features(d)).collect();
    let terms: Vec<String> = per_doc
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = docs.len() as f64;
    let weights = per_doc
        .iter()
        .map(|f| {
            terms
                .iter()
                .map(|t| {
                    let count = f.iter().filter(|x| *x == t).count() as f64;
                    if count == 0.0 {
                        return 0.0;
                    }
                    let df = per_doc.iter().filter(|g| g.contains(t)).count() as f64;
                    count / f.len() as f64 * (n / df).ln()
                })
                .collect()
        })
        .collect();
    (terms, weights)
}

#[test]
fn criterion_2_tfidf_matches_dense_evaluation() {
    let mut v = Verdict::new(2, "sparse TF-IDF matches dense evaluation");
    let corpus = vec![
        doc("d1", &["a", "a", "b"], None),
        doc("d2", &["b", "c"], None),
    ];
    let vocab = build_vocabulary(&corpus, 1, 1).unwrap();
    let m = tfidf(&corpus, &vocab).to_dense();
    let a = vocab.column("a").unwrap();
    v.check(
        m[0][a] == (2.0 / 3.0) * 2f64.ln(),
        format!("hand case weight {} != (2/3) ln 2", m[0][a]),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let words = ["a", "b", "c", "d", "e", "f", "#g"];
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n_docs = rng.gen_range(1..=10);
        let mut docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| {
                (0..rng.gen_range(0..=20))
                    .map(|_| words[rng.gen_range(0..words.len())].to_string())
                    .collect()
            })
            .collect();
        if docs.iter().all(|d| d.is_empty()) {
            docs[0].push("a".into());
        }
        let ngram_max = 1 + case % 2;
        let documents: Vec<Document> = docs
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), t.clone(), None))
            .collect();
        let vocab = build_vocabulary(&documents, ngram_max, 1).unwrap();
        let sparse = tfidf(&documents, &vocab).to_dense();
        let (terms, dense) = dense_tfidf(&docs, ngram_max);
        if vocab.terms() != terms.as_slice() {
            v.check(false, format!("case {case}: column order differs"));
            continue;
        }
        for (r, row) in dense.iter().enumerate() {
            for (c, &want) in row.iter().enumerate() {
                worst = worst.max((sparse[r][c] - want).abs());
            }
        }
    }
    v.note(format!("max abs error {worst:.2e}"));
    v.check(worst <= 1e-9, format!("max abs error {worst:e} > 1e-9"));
    v.finish();
}

/// Textbook one-way ANOVA over a dense column.
fn dense_anova(column: &[f64], groups: &[usize], k: usize) -> f64 {
    let n = column.len() as f64;
    let grand = column.iter().sum::<f64>() / n;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in 0..k {
        let members: Vec<f64> = column
            .iter()
            .zip(groups)
            .filter(|(_, &h)| h == g)
            .map(|(x, _)| *x)
            .collect();
        let m = members.len() as f64;
        let mean = members.iter().sum::<f64>() / m;
        ssb += m * (mean - grand).powi(2);
        ssw += members.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    }
    if ssw == 0.0 {
        return if ssb > 0.0 { f64::MAX } else { 0.0 };
    }
    (ssb / (k as f64 - 1.0)) / (ssw / (n - k as f64))
}

#[test]
fn criterion_3_anova_matches_textbook() {
    let mut v = Verdict::new(3, "ANOVA F matches textbook one-way ANOVA");
    let hand = SparseMatrix::from_dense(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], 1).unwrap();
    let f = anova_f(&hand, &["A", "A", "B", "B"]).unwrap()[0];
    v.check(
        (f - 8.0).abs() <= 8.0 * 1e-9,
        format!("hand case F = {f}, want 8"),
    );
    let zero = SparseMatrix::from_dense(&[vec![3.0], vec![3.0], vec![3.0], vec![3.0]], 1).unwrap();
    v.check(
        anova_f(&zero, &["A", "A", "B", "B"]).unwrap()[0] == 0.0,
        "constant column must score 0",
    );
    let split = SparseMatrix::from_dense(&[vec![1.0], vec![1.0], vec![0.0], vec![0.0]], 1).unwrap();
    v.check(
        anova_f(&split, &["A", "A", "B", "B"]).unwrap()[0] == F_SENTINEL,
        "perfect split must score the sentinel",
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let k = rng.gen_range(2..=5);
        let n = rng.gen_range(k + 1..=50);
        let cols = rng.gen_range(1..=50);
        let mut groups: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { rng.gen_range(0..k) })
            .collect();
        groups.shuffle(&mut rng);
        let integer = case % 2 == 0;
        let dense: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        if rng.gen_bool(0.5) {
                            0.0
                        } else if integer {
                            rng.gen_range(1..=4) as f64
                        } else {
                            rng.gen_range(0.01..10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let labels: Vec<String> = groups.iter().map(|g| format!("c{g}")).collect();
        let matrix = SparseMatrix::from_dense(&dense, cols).unwrap();
        let got = anova_f(&matrix, &labels).unwrap();
        for (j, &g) in got.iter().enumerate() {
            let column: Vec<f64> = dense.iter().map(|r| r[j]).collect();
            let want = dense_anova(&column, &groups, k);
            let err = if g == want {
                0.0
            } else {
                (g - want).abs() / want.abs().max(g.abs())
            };
            worst = worst.max(err);
            v.check(
                err <= 1e-9,
                format!("case {case} column {j}: {g} vs {want}"),
            );
        }
    }
    v.note(format!("max relative error {worst:.2e}"));
    v.finish();
}

fn random_problem(
    rng: &mut ChaCha8Rng,
    rows: usize,
    dim: usize,
) -> (SparseMatrix, Vec<f64>, Vec<f64>) {
    let dense: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if rng.gen_bool(0.4) {
                        0.0
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect()
        })
        .collect();
    let targets = (0..rows)
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let weights = (0..rows).map(|_| rng.gen_range(0.5..2.0)).collect();
    (
        SparseMatrix::from_dense(&dense, dim).unwrap(),
        targets,
        weights,
    )
}

/// Central differences of the objective over every weight and the bias.
#[allow(clippy::too_many_arguments)]
fn numeric_gradient(
    loss: Loss,
    w: &[f64],
    b: f64,
    x: &SparseMatrix,
    t: &[f64],
    s: &[f64],
    c: f64,
    h: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.len() + 1);
    for j in 0..=w.len() {
        let (mut wp, mut wm) = (w.to_vec(), w.to_vec());
        let (mut bp, mut bm) = (b, b);
        if j < w.len() {
            wp[j] += h;
            wm[j] -= h;
        } else {
            bp += h;
            bm -= h;
        }
        out.push(
            (objective(loss, &wp, bp, x, t, s, c) - objective(loss, &wm, bm, x, t, s, c))
                / (2.0 * h),
        );
    }
    out
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn recall_of(predicted: &[String], truth: &[&str], class: &str) -> f64 {
    let support = truth.iter().filter(|t| **t == class).count() as f64;
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| **t == class && p.as_str() == class)
        .count() as f64;
    hits / support
}

#[test]
fn criterion_4_learner_correctness() {
    let mut v = Verdict::new(
        4,
        "learner gradients, separable fit, Laplace estimate, class weights",
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut worst_log = 0.0f64;
    for _ in 0..20 {
        let dim = rng.gen_range(1..=6);
        let rows = rng.gen_range(1..=12);
        let (x, t, s) = random_problem(&mut rng, rows, dim);
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let c = rng.gen_range(0.1..10.0);
        let (gw, gb) = objective_gradient(Loss::Log, &w, b, &x, &t, &s, c);
        let analytic: Vec<f64> = gw.into_iter().chain([gb]).collect();
        let numeric = numeric_gradient(Loss::Log, &w, b, &x, &t, &s, c, 1e-5);
        worst_log = worst_log.max(relative_error(&analytic, &numeric));
    }
    v.check(
        worst_log <= 1e-4,
        format!("logistic gradient relative error {worst_log:e}"),
    );

    let mut worst_hinge = 0.0f64;
    let mut points = 0;
    while points < 20 {
        let dim = rng.gen_range(1..=6);
        let rows = rng.gen_range(1..=12);
        let (x, t, s) = random_problem(&mut rng, rows, dim);
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let near_hinge = (0..x.rows()).any(|i| (t[i] * (x.row_dot(i, &w) + b) - 1.0).abs() < 1e-3);
        if near_hinge {
            continue;
        }
        points += 1;
        let (gw, gb) = objective_gradient(Loss::Hinge, &w, b, &x, &t, &s, 2.0);
        let analytic: Vec<f64> = gw.into_iter().chain([gb]).collect();
        let numeric = numeric_gradient(Loss::Hinge, &w, b, &x, &t, &s, 2.0, 1e-6);
        worst_hinge = worst_hinge.max(relative_error(&analytic, &numeric));
    }
    v.check(
        worst_hinge <= 1e-4,
        format!("hinge subgradient relative error {worst_hinge:e}"),
    );
    v.note(format!(
        "gradient errors log={worst_log:.1e} hinge={worst_hinge:.1e}"
    ));

    // Separable 8-point set; separability confirmed by exhaustive search
    // over directions and thresholds.
    let pts = [
        [1.0, 0.1],
        [0.9, 0.2],
        [0.8, 0.0],
        [1.2, 0.3],
        [0.1, 1.0],
        [0.2, 0.9],
        [0.0, 0.8],
        [0.3, 1.1],
    ];
    let y = ["A", "A", "A", "A", "B", "B", "B", "B"];
    let separable = (0..3600).any(|step| {
        let theta = step as f64 * std::f64::consts::PI / 1800.0;
        let proj: Vec<f64> = pts
            .iter()
            .map(|p| p[0] * theta.cos() + p[1] * theta.sin())
            .collect();
        let max_a = proj[..4].iter().cloned().fold(f64::MIN, f64::max);
        let min_b = proj[4..].iter().cloned().fold(f64::MAX, f64::min);
        max_a < min_b
    });
    v.check(separable, "toy set must be linearly separable");
    let x =
        SparseMatrix::from_dense(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>(), 2).unwrap();
    for kind in [ModelKind::Svm, ModelKind::Logreg] {
        let model = train_linear(
            &x,
            &y,
            &LinearConfig {
                kind,
                ..Default::default()
            },
        )
        .unwrap();
        let predicted = model.predict(&x).unwrap();
        v.check(
            predicted == y,
            format!("{kind} training accuracy below 100%: {predicted:?}"),
        );
    }

    let counts = SparseMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
    let nb = train_nb(&counts, &["A", "B"], 1.0).unwrap();
    v.check(
        nb.weights[0][0] == 0.75f64.ln(),
        format!("log P(a|A) = {} != ln 0.75", nb.weights[0][0]),
    );

    // 90 majority points at [1, 0] and [0.5, 0.5]; 10 minority points at
    // [0.5, 0.5] and [0, 1]. The shared point goes to whichever class
    // carries more weight there.
    let mut dense = Vec::new();
    let mut labels = Vec::new();
    for i in 0..90 {
        dense.push(if i < 75 {
            vec![1.0, 0.0]
        } else {
            vec![0.5, 0.5]
        });
        labels.push("major");
    }
    for i in 0..10 {
        dense.push(if i < 6 {
            vec![0.5, 0.5]
        } else {
            vec![0.0, 1.0]
        });
        labels.push("minor");
    }
    let imbalanced = SparseMatrix::from_dense(&dense, 2).unwrap();
    let recall_with = |w: f64| {
        let weights: BTreeMap<String, f64> = [("minor".to_string(), w)].into_iter().collect();
        let m = train_linear(
            &imbalanced,
            &labels,
            &LinearConfig {
                class_weights: weights,
                seed: 11,
                ..Default::default()
            },
        )
        .unwrap();
        recall_of(&m.predict(&imbalanced).unwrap(), &labels, "minor")
    };
    let (r1, r10) = (recall_with(1.0), recall_with(10.0));
    v.note(format!("minority recall w=1 {r1:.2}, w=10 {r10:.2}"));
    v.check(
        r10 > r1,
        format!("minority recall {r10} with weight 10 not above {r1}"),
    );
    v.finish();
}

#[test]
fn criterion_5_stratified_protocols() {
    let mut v = Verdict::new(5, "stratified k-fold and hold-out protocols");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 5;
    let mut errors_seen = 0;
    for case in 0..200 {
        let n_classes = rng.gen_range(1..=6);
        let mut labels: Vec<String> = Vec::new();
        for c in 0..n_classes {
            for _ in 0..rng.gen_range(1..=40) {
                labels.push(format!("c{c}"));
            }
        }
        labels.shuffle(&mut rng);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        labels
            .iter()
            .for_each(|l| *counts.entry(l).or_insert(0) += 1);
        let too_small = counts.values().any(|&n| n < k);
        match stratified_kfold(&labels, k, case) {
            Err(Error::Stratification {
                count, required, ..
            }) => {
                errors_seen += 1;
                v.check(
                    too_small && count < required,
                    format!("case {case}: spurious stratification error"),
                );
            }
            Err(e) => v.check(false, format!("case {case}: unexpected error {e}")),
            Ok(folds) => {
                v.check(!too_small, format!("case {case}: class below k accepted"));
                let mut seen = vec![0usize; labels.len()];
                folds.iter().flatten().for_each(|&i| seen[i] += 1);
                v.check(
                    seen.iter().all(|&s| s == 1),
                    format!("case {case}: folds are not a partition"),
                );
                for class in counts.keys() {
                    let per_fold: Vec<usize> = folds
                        .iter()
                        .map(|f| f.iter().filter(|&&i| labels[i] == *class).count())
                        .collect();
                    let spread = per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap();
                    v.check(
                        spread <= 1,
                        format!("case {case}: class {class} spread {spread}"),
                    );
                }
            }
        }

        if counts.values().all(|&n| n >= 2) {
            let f = rng.gen_range(0.05..0.95);
            let docs: Vec<Document> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| doc(&format!("d{i}"), &["w"], Some(l)))
                .collect();
            let corpus = LabeledCorpus::new(docs, 1).unwrap();
            let (train, test) = train_test_split(&corpus, f, case).unwrap();
            v.check(
                train.len() + test.len() == labels.len(),
                format!("case {case}: split loses documents"),
            );
            for (class, &n) in &counts {
                let want = ((f * n as f64).round() as usize).max(1);
                let got = test
                    .documents()
                    .iter()
                    .filter(|d| d.label.as_deref() == Some(*class))
                    .count();
                v.check(
                    got == want && test_count(f, n) == want,
                    format!("case {case}: class {class} test count {got}, want {want}"),
                );
            }
            let train_ids: BTreeSet<&str> =
                train.documents().iter().map(|d| d.id.as_str()).collect();
            v.check(
                test.documents()
                    .iter()
                    .all(|d| !train_ids.contains(d.id.as_str())),
                format!("case {case}: split overlaps"),
            );
        }
    }
    v.note(format!(
        "{errors_seen} of 200 label vectors correctly rejected"
    ));
    v.finish();
}

fn random_tweet(rng: &mut ChaCha8Rng, id: usize) -> Document {
    const WORDS: [&str; 12] = [
        "the", "and", "kindle", "novel", "read", "page", "shoe", "lace", "run", "k0", "k1", "story",
    ];
    const TAGS: [&str; 4] = ["#k0", "#k1", "#k2", "#k3"];
    let mut tokens: Vec<String> = (0..rng.gen_range(1..=10))
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string())
        .collect();
    for _ in 0..rng.gen_range(0..=2) {
        tokens.push(TAGS[rng.gen_range(0..TAGS.len())].to_string());
    }
    tokens.shuffle(rng);
    Document::new(format!("doc{id}"), tokens, None)
}

#[test]
fn criterion_6_expansion_contract() {
    let mut v = Verdict::new(6, "expansion contract and shard merge");
    let stops = StopLists::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut words_checked = 0;
    for case in 0..100 {
        let corpus: Vec<Document> = (0..rng.gen_range(5..=40))
            .map(|i| random_tweet(&mut rng, i))
            .collect();
        let thesaurus = build_hashtag_thesaurus(&corpus, &stops, 20, rng.gen_range(1..=2));
        let n = rng.gen_range(0..=6);
        let config = ExpansionConfig {
            n,
            seed: case,
            side: Side::Both,
        };
        let query = random_tweet(&mut rng, 1000 + case as usize);
        let expanded = expand(&query, &thesaurus, &config).unwrap();
        v.check(
            expanded == expand(&query, &thesaurus, &config).unwrap(),
            format!("case {case}: repeated call differs"),
        );
        v.check(
            expanded.hashtags == query.hashtags && expanded.label == query.label,
            format!("case {case}: metadata changed"),
        );
        v.check(
            expanded.tokens[..query.tokens.len()] == query.tokens[..],
            format!("case {case}: original tokens changed"),
        );
        let mut added = &expanded.tokens[query.tokens.len()..];
        for key in &query.hashtags {
            let top: Vec<&str> = thesaurus
                .words(key)
                .map(|w| w.iter().take(2 * n).map(|(s, _)| s.as_str()).collect())
                .unwrap_or_default();
            let want = n.min(top.len());
            if added.len() < want {
                v.check(
                    false,
                    format!("case {case}: key {key} got fewer than {want} words"),
                );
                break;
            }
            let (mine, rest) = added.split_at(want);
            added = rest;
            let distinct: BTreeSet<&String> = mine.iter().collect();
            v.check(
                distinct.len() == mine.len(),
                format!("case {case}: repeated word for {key}"),
            );
            for w in mine {
                words_checked += 1;
                v.check(
                    top.contains(&w.as_str()),
                    format!("case {case}: {w} outside the top {} of {key}", 2 * n),
                );
                v.check(
                    !stops.contains(w),
                    format!("case {case}: stop word {w} appended"),
                );
                v.check(
                    w != key.trim_start_matches('#'),
                    format!("case {case}: key word {w} appended"),
                );
            }
        }
        v.check(
            added.is_empty(),
            format!("case {case}: {} unexplained words", added.len()),
        );

        let (forward, _) = expand_documents(&corpus, &thesaurus, &config).unwrap();
        let mut reversed_input = corpus.clone();
        reversed_input.reverse();
        let (mut backward, _) = expand_documents(&reversed_input, &thesaurus, &config).unwrap();
        backward.reverse();
        v.check(
            forward == backward,
            format!("case {case}: result depends on corpus order"),
        );

        let cut = rng.gen_range(0..=corpus.len());
        let (mut left, mut right) = (HashtagCounts::new(), HashtagCounts::new());
        corpus[..cut].iter().for_each(|d| left.add(d, &stops));
        corpus[cut..].iter().for_each(|d| right.add(d, &stops));
        left.merge(right);
        let mut single = HashtagCounts::new();
        corpus.iter().for_each(|d| single.add(d, &stops));
        v.check(
            left.finish(&stops, 20, 2, "shards") == single.finish(&stops, 20, 2, "shards"),
            format!("case {case}: shard merge differs"),
        );
    }
    v.note(format!("{words_checked} appended words checked"));
    v.finish();
}

#[test]
fn criterion_7_metric_identities() {
    let mut v = Verdict::new(7, "micro identities and macro-F1 convention");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let classes = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=200);
        let truth: Vec<String> = (0..n)
            .map(|_| format!("c{}", rng.gen_range(0..classes)))
            .collect();
        let predicted: Vec<String> = (0..n)
            .map(|_| format!("c{}", rng.gen_range(0..classes)))
            .collect();
        let report = score(&predicted, &truth).unwrap();
        let accuracy =
            predicted.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / n as f64;
        let m = report.micro_avg;
        v.check(
            m.precision == m.recall,
            format!("case {case}: micro P {} != R {}", m.precision, m.recall),
        );
        v.check(
            (m.f1 - m.recall).abs() <= 1e-12,
            format!("case {case}: micro F1 {} != R {}", m.f1, m.recall),
        );
        v.check(
            (m.recall - accuracy).abs() <= 1e-12,
            format!("case {case}: micro R != accuracy"),
        );
    }

    let truth = ["A", "A", "A", "A", "B", "B", "C", "C"];
    let predicted = ["A", "B", "C", "C", "B", "B", "C", "A"];
    let report = score(&predicted, &truth).unwrap();
    let m = report.macro_avg;
    let recomputed = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    v.check(
        (m.f1 - recomputed).abs() > 1e-3,
        format!(
            "crafted report: macro F1 {} equals F1 of averages {recomputed}",
            m.f1
        ),
    );
    let table = macro_average(&table_rows());
    let table_recomputed = 2.0 * table.precision * table.recall / (table.precision + table.recall);
    v.note(format!(
        "table macro F1 {:.4} vs F1(macro P, macro R) {table_recomputed:.4}",
        table.f1
    ));
    v.check(
        (table.f1 - table_recomputed).abs() > 0.02,
        "published rows: averaged F1 indistinguishable from F1 of averages",
    );
    v.finish();
}

fn run_cli(args: &[&str]) -> i32 {
    stx_core::cli::run(std::iter::once("stx").chain(args.iter().copied()))
}

fn macro_f1(metrics: &Path) -> f64 {
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(metrics).unwrap()).unwrap();
    json["mean"]["macro_avg"]["f1"].as_f64().unwrap()
}

#[test]
fn criterion_8_end_to_end_synthetic_experiment() {
    let mut v = Verdict::new(8, "end-to-end synthetic experiment");
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let code = run_cli(&[
        "--seed",
        "42",
        "synth",
        "--out",
        &p("synth"),
        "--classes",
        "6",
        "--docs-per-class",
        "200",
        "--vocab-per-class",
        "30",
        "--noise-rate",
        "0.2",
        "--unlabeled",
        "5000",
    ]);
    v.check(code == 0, format!("synth exit {code}"));
    let code = run_cli(&[
        "--seed",
        "42",
        "prepare",
        "--corpus",
        &p("synth/corpus.jsonl"),
        "--taxonomy",
        &p("synth/taxonomy.jsonl"),
        "--out",
        &p("prepared"),
    ]);
    v.check(code == 0, format!("prepare exit {code}"));
    let code = run_cli(&[
        "--seed",
        "42",
        "thesaurus",
        "--kind",
        "hashtag",
        "--input",
        &p("synth/unlabeled.jsonl"),
        "--out",
        &p("thesaurus"),
    ]);
    v.check(code == 0, format!("thesaurus exit {code}"));

    // Balanced class weights n / (k * n_c).
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p("prepared/summary.json")).unwrap()).unwrap();
    let counts = summary["class_counts"].as_object().unwrap();
    let total: f64 = counts.values().map(|c| c.as_f64().unwrap()).sum();
    let weights: Vec<String> = counts
        .iter()
        .map(|(class, c)| {
            format!(
                "{class}={}",
                total / (counts.len() as f64 * c.as_f64().unwrap())
            )
        })
        .collect();
    let prepared = p("prepared/prepared.jsonl");
    let mut base = vec![
        "--seed",
        "42",
        "evaluate",
        "--corpus",
        &prepared,
        "--folds",
        "5",
        "--keep-fraction",
        "0.25",
        "--learner",
        "svm",
        "--C",
        "5",
    ];
    for w in &weights {
        base.extend(["--class-weight", w.as_str()]);
    }
    let plain_out = p("plain");
    let code = run_cli(&[base.as_slice(), &["--out", &plain_out]].concat());
    v.check(code == 0, format!("evaluate exit {code}"));
    let expanded_out = p("expanded");
    let thesaurus = p("thesaurus/thesaurus.json");
    let code = run_cli(
        &[
            base.as_slice(),
            &[
                "--out",
                &expanded_out,
                "--expansion",
                "hashtag",
                "--expansion-n",
                "2",
                "--expansion-side",
                "both",
                "--thesaurus",
                &thesaurus,
            ],
        ]
        .concat(),
    );
    v.check(code == 0, format!("expanded evaluate exit {code}"));
    let elapsed = start.elapsed().as_secs_f64();
    if v.failures.is_empty() {
        let plain = macro_f1(&dir.path().join("plain/metrics.json"));
        let expanded = macro_f1(&dir.path().join("expanded/metrics.json"));
        v.note(format!(
            "macro F1 {plain:.4}, with hashtag expansion {expanded:.4}, {elapsed:.1}s"
        ));
        v.check(plain >= 0.90, format!("macro F1 {plain:.4} < 0.90"));
        v.check(
            plain - expanded <= 0.02,
            format!("expansion drops macro F1 by {:.4}", plain - expanded),
        );
    }
    v.check(elapsed < 60.0, format!("took {elapsed:.1}s"));
    v.finish();
}

#[test]
fn criterion_9_leakage_barrier() {
    let mut v = Verdict::new(9, "held-out text never reaches the fitted model");
    let stops = StopLists::builtin();
    let synth = generate(&SynthConfig {
        docs_per_class: 40,
        unlabeled: 400,
        ..Default::default()
    })
    .unwrap();
    let docs: Vec<Document> = synth
        .labeled
        .iter()
        .filter(|l| l.retweet_of.is_none())
        .map(|l| {
            let class: usize = l.id[1..l.id.find('-').unwrap()].parse().unwrap();
            normalize_document(
                l.id.clone(),
                &l.text,
                Some(synth.class_names[class].clone()),
                &stops,
                Stemmer::Suffix,
            )
        })
        .collect();
    let unlabeled: Vec<Document> = synth
        .unlabeled
        .iter()
        .map(|l| normalize_document(l.id.clone(), &l.text, None, &stops, Stemmer::Suffix))
        .collect();
    let hashtag_thesaurus = build_hashtag_thesaurus(&unlabeled, &stops, 20, 2);
    let corpus = LabeledCorpus::new(docs, 5).unwrap();
    let folds = stratified_kfold(&corpus.labels(), 5, 9).unwrap();

    let configs = [
        ("svm", PipelineConfig::default(), None),
        (
            "nb",
            PipelineConfig {
                learner: ModelKind::Nb,
                ..Default::default()
            },
            None,
        ),
        (
            "category expansion",
            PipelineConfig {
                expansion: Some(ExpansionSettings {
                    kind: ThesaurusKind::Category,
                    ..Default::default()
                }),
                ..Default::default()
            },
            None,
        ),
        (
            "hashtag expansion",
            PipelineConfig {
                expansion: Some(ExpansionSettings::default()),
                learner: ModelKind::Logreg,
                ..Default::default()
            },
            Some(&hashtag_thesaurus),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut compared = 0;
    for (name, config, thesaurus) in &configs {
        for (f, held_out) in folds.iter().enumerate() {
            let mut noisy: Vec<Document> = corpus.documents().to_vec();
            for &i in held_out {
                let mut tokens: Vec<String> = (0..rng.gen_range(1..15))
                    .map(|_| format!("noise{}", rng.gen_range(0..50)))
                    .collect();
                tokens.push("#noise".into());
                noisy[i] = Document::new(noisy[i].id.clone(), tokens, noisy[i].label.clone());
            }
            let noisy = LabeledCorpus::new(noisy, 5).unwrap();
            let clean_fit = fit_fold(config, &corpus, &folds, f, *thesaurus).unwrap();
            let noisy_fit = fit_fold(config, &noisy, &folds, f, *thesaurus).unwrap();
            let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
            clean_fit.save(a.path()).unwrap();
            noisy_fit.save(b.path()).unwrap();
            for file in ["model.json", "vocabulary.json", "pipeline.json"] {
                let same = std::fs::read(a.path().join(file)).unwrap()
                    == std::fs::read(b.path().join(file)).unwrap();
                v.check(same, format!("{name}, fold {f}: {file} changed"));
                compared += 1;
            }
        }
    }
    v.note(format!("{compared} artifact files compared bitwise"));
    v.finish();
}
