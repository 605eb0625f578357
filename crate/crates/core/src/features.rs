//! Vocabulary construction, CSR feature matrices, TF-IDF weighting and
//! univariate feature ranking by one-way ANOVA F-value.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::Document;

pub const FEATURES_MAGIC: &str = "STXF1";

/// Returned by [`anova_f`] for columns whose classes are perfectly separated
/// (zero within-class variance, non-zero between-class variance).
pub const F_SENTINEL: f64 = f64::MAX;

/// Unigrams followed by space-joined bigrams (when `ngram_max == 2`).
pub fn features_of(tokens: &[String], ngram_max: usize) -> Vec<String> {
    let mut out: Vec<String> = tokens.to_vec();
    if ngram_max >= 2 {
        out.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    ngram_max: usize,
    doc_freq: Vec<usize>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    ngram_max: usize,
    n_docs: usize,
    terms: BTreeMap<String, usize>,
    doc_freq: Vec<usize>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let mut terms = vec![String::new(); r.terms.len()];
        for (t, &i) in &r.terms {
            if i < terms.len() {
                terms[i] = t.clone();
            }
        }
        let index = r.terms;
        Vocabulary {
            index: index.into_iter().collect(),
            terms,
            ngram_max: r.ngram_max,
            doc_freq: r.doc_freq,
            n_docs: r.n_docs,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            ngram_max: v.ngram_max,
            n_docs: v.n_docs,
            terms: v.index.into_iter().collect(),
            doc_freq: v.doc_freq,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, column: usize) -> Option<&str> {
        self.terms.get(column).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn ngram_max(&self) -> usize {
        self.ngram_max
    }

    /// `ln(N / df)` per column.
    pub fn idf(&self) -> Vec<f64> {
        let n = self.n_docs as f64;
        self.doc_freq
            .iter()
            .map(|&df| (n / df as f64).ln())
            .collect()
    }

    /// Stable content hash referenced by model files.
    pub fn fingerprint(&self) -> String {
        let bytes =
            serde_json::to_vec(&VocabularyRepr::from(self.clone())).expect("vocabulary serializes");
        crate::rng::sha256_hex(&bytes)
    }

    /// Feature counts of one document restricted to this vocabulary.
    fn counts(&self, tokens: &[String]) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for f in features_of(tokens, self.ngram_max) {
            if let Some(&col) = self.index.get(&f) {
                *counts.entry(col).or_insert(0) += 1;
            }
        }
        counts
    }
}

pub fn build_vocabulary(
    corpus: &[Document],
    ngram_max: usize,
    min_df: usize,
) -> Result<Vocabulary> {
    if !(1..=2).contains(&ngram_max) {
        return Err(Error::InvalidConfig(format!(
            "ngram_max must be 1 or 2, got {ngram_max}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let df: HashMap<String, usize> = corpus
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<String, usize>, doc| {
            let mut distinct = features_of(&doc.tokens, ngram_max);
            distinct.sort_unstable();
            distinct.dedup();
            for f in distinct {
                *acc.entry(f).or_insert(0) += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });

    let kept: BTreeMap<String, usize> = df
        .into_iter()
        .filter(|&(_, n)| n >= min_df.max(1))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut terms = Vec::with_capacity(kept.len());
    let mut doc_freq = Vec::with_capacity(kept.len());
    for (t, n) in kept {
        terms.push(t);
        doc_freq.push(n);
    }
    let index = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        terms,
        index,
        ngram_max,
        doc_freq,
        n_docs: corpus.len(),
    })
}

/// Compressed sparse row matrix of finite, non-zero `f64` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(cols: usize) -> Self {
        SparseMatrix {
            rows: 0,
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-row `(column, value)` lists. Entries are sorted,
    /// zeros dropped; duplicate or out-of-range columns and non-finite
    /// values are rejected.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut m = SparseMatrix::empty(cols);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut prev: Option<usize> = None;
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::DimensionMismatch {
                        expected: cols,
                        found: c + 1,
                    });
                }
                if prev == Some(c) {
                    return Err(Error::InvalidConfig(format!(
                        "duplicate column {c} in row {}",
                        m.rows
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "non-finite value in row {}",
                        m.rows
                    )));
                }
                prev = Some(c);
                if v != 0.0 {
                    m.indices.push(c);
                    m.values.push(v);
                }
            }
            m.rows += 1;
            m.indptr.push(m.indices.len());
        }
        Ok(m)
    }

    pub fn from_dense(dense: &[Vec<f64>], cols: usize) -> Result<Self> {
        SparseMatrix::from_rows(
            cols,
            dense
                .iter()
                .map(|r| r.iter().copied().enumerate().collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (&[usize], &[f64])> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn row_dot(&self, i: usize, dense: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, &v)| v * dense[j]).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.iter_rows()
            .map(|(idx, val)| {
                let mut row = vec![0.0; self.cols];
                for (&j, &v) in idx.iter().zip(val) {
                    row[j] = v;
                }
                row
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut m = SparseMatrix::empty(self.cols);
        for &i in rows {
            let (idx, val) = self.row(i);
            m.indices.extend_from_slice(idx);
            m.values.extend_from_slice(val);
            m.rows += 1;
            m.indptr.push(m.indices.len());
        }
        m
    }

    /// Checks the CSR invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Format(format!("sparse matrix: {msg}")));
        if self.indptr.len() != self.rows + 1 || self.indptr[0] != 0 {
            return bad("row pointer length");
        }
        if self.indices.len() != self.values.len()
            || *self.indptr.last().unwrap() != self.indices.len()
        {
            return bad("entry count");
        }
        for i in 0..self.rows {
            if self.indptr[i] > self.indptr[i + 1] {
                return bad("row pointers decrease");
            }
            let (idx, val) = self.row(i);
            if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&j| j >= self.cols) {
                return bad("column order");
            }
            if val.iter().any(|v| !v.is_finite() || *v == 0.0) {
                return bad("stored value");
            }
        }
        Ok(())
    }
}

fn weighted_matrix(
    corpus: &[Document],
    vocab: &Vocabulary,
    weight: impl Fn(usize, usize, usize) -> f64 + Sync,
) -> SparseMatrix {
    let rows: Vec<Vec<(usize, f64)>> = corpus
        .par_iter()
        .map(|doc| {
            let counts = vocab.counts(&doc.tokens);
            let total: usize = counts.values().sum();
            counts
                .into_iter()
                .map(|(col, n)| (col, weight(col, n, total)))
                .filter(|&(_, v)| v != 0.0)
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(vocab.len(), rows).expect("vocabulary columns are in range")
}

/// Length-normalized term frequency times `ln(N / df)`.
pub fn tfidf(corpus: &[Document], vocab: &Vocabulary) -> SparseMatrix {
    let idf = vocab.idf();
    weighted_matrix(corpus, vocab, |col, n, total| {
        n as f64 / total as f64 * idf[col]
    })
}

/// Raw in-document feature counts.
pub fn count_matrix(corpus: &[Document], vocab: &Vocabulary) -> SparseMatrix {
    weighted_matrix(corpus, vocab, |_, n, _| n as f64)
}

/// Encodes string labels as indices into their sorted distinct values.
pub fn encode_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<String>, Vec<usize>) {
    let classes: Vec<String> = {
        let mut c: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
        c.sort();
        c.dedup();
        c
    };
    let lookup: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let encoded = labels.iter().map(|l| lookup[l.as_ref()]).collect();
    (classes, encoded)
}

/// One-way ANOVA F-value of every column against the class labels.
/// Implicit zeros count as observations.
pub fn anova_f<S: AsRef<str>>(matrix: &SparseMatrix, labels: &[S]) -> Result<Vec<f64>> {
    if labels.len() != matrix.rows() {
        return Err(Error::DimensionMismatch {
            expected: matrix.rows(),
            found: labels.len(),
        });
    }
    let (classes, y) = encode_labels(labels);
    let k = classes.len();
    if k < 2 {
        return Err(Error::DegenerateLabels(k));
    }
    let v = matrix.cols();
    let n = matrix.rows() as f64;
    let mut n_c = vec![0usize; k];
    let mut sums = vec![0.0; k * v];
    for (i, &c) in y.iter().enumerate() {
        n_c[c] += 1;
        let (idx, val) = matrix.row(i);
        for (&j, &x) in idx.iter().zip(val) {
            sums[c * v + j] += x;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(cj, &s)| s / n_c[cj / v] as f64)
        .collect();

    // Within-class squares: stored entries directly, implicit zeros as mean².
    let mut within = vec![0.0; v];
    let mut stored = vec![0usize; k * v];
    for (i, &c) in y.iter().enumerate() {
        let (idx, val) = matrix.row(i);
        for (&j, &x) in idx.iter().zip(val) {
            let d = x - means[c * v + j];
            within[j] += d * d;
            stored[c * v + j] += 1;
        }
    }

    let dfb = (k - 1) as f64;
    let dfw = n - k as f64;
    Ok((0..v)
        .map(|j| {
            let grand = (0..k).map(|c| sums[c * v + j]).sum::<f64>() / n;
            let mut between = 0.0;
            let mut ssw = within[j];
            for c in 0..k {
                let mu = means[c * v + j];
                between += n_c[c] as f64 * (mu - grand) * (mu - grand);
                ssw += (n_c[c] - stored[c * v + j]) as f64 * mu * mu;
            }
            f_ratio(between, ssw, dfb, dfw)
        })
        .collect())
}

/// F from sums of squares with the degenerate conventions applied.
pub fn f_ratio(between: f64, within: f64, df_between: f64, df_within: f64) -> f64 {
    if within == 0.0 {
        return if between > 0.0 { F_SENTINEL } else { 0.0 };
    }
    let f = (between / df_between) / (within / df_within);
    if f.is_finite() {
        f
    } else {
        F_SENTINEL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    kept_columns: Vec<usize>,
    scores: Vec<f64>,
    keep_fraction: f64,
}

/// Keeps the `max(1, floor(fraction * V))` highest-scoring columns; equal
/// scores prefer the lower column index.
pub fn select_top(scores: &[f64], keep_fraction: f64) -> Result<FeatureMask> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    let v = scores.len();
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999…
    let keep = ((keep_fraction * v as f64 + 1e-9).floor() as usize)
        .max(1)
        .min(v);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept_columns = order[..keep].to_vec();
    kept_columns.sort_unstable();
    Ok(FeatureMask {
        kept_columns,
        scores: scores.to_vec(),
        keep_fraction,
    })
}

impl FeatureMask {
    pub fn identity(n_columns: usize) -> Self {
        FeatureMask {
            kept_columns: (0..n_columns).collect(),
            scores: vec![0.0; n_columns],
            keep_fraction: 1.0,
        }
    }

    /// Rebuilds a mask from saved column indices (scores are not retained).
    pub fn from_columns(mut kept_columns: Vec<usize>, n_columns: usize) -> Result<Self> {
        kept_columns.sort_unstable();
        kept_columns.dedup();
        if kept_columns.last().is_some_and(|&c| c >= n_columns) {
            return Err(Error::DimensionMismatch {
                expected: n_columns,
                found: kept_columns.last().unwrap() + 1,
            });
        }
        let keep_fraction = if n_columns == 0 {
            1.0
        } else {
            kept_columns.len() as f64 / n_columns as f64
        };
        Ok(FeatureMask {
            kept_columns,
            scores: vec![0.0; n_columns],
            keep_fraction,
        })
    }

    pub fn kept_columns(&self) -> &[usize] {
        &self.kept_columns
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn keep_fraction(&self) -> f64 {
        self.keep_fraction
    }

    pub fn len(&self) -> usize {
        self.kept_columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_columns.is_empty()
    }

    /// Restricts `matrix` to the kept columns, renumbered densely.
    pub fn apply(&self, matrix: &SparseMatrix) -> Result<SparseMatrix> {
        if matrix.cols() != self.scores.len() {
            return Err(Error::DimensionMismatch {
                expected: self.scores.len(),
                found: matrix.cols(),
            });
        }
        let mut remap = vec![usize::MAX; matrix.cols()];
        for (new, &old) in self.kept_columns.iter().enumerate() {
            remap[old] = new;
        }
        let mut out = SparseMatrix::empty(self.kept_columns.len());
        for (idx, val) in matrix.iter_rows() {
            for (&j, &x) in idx.iter().zip(val) {
                if remap[j] != usize::MAX {
                    out.indices.push(remap[j]);
                    out.values.push(x);
                }
            }
            out.rows += 1;
            out.indptr.push(out.indices.len());
        }
        Ok(out)
    }
}

/// On-disk container for a feature matrix and its vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub magic: String,
    pub matrix: SparseMatrix,
    pub vocabulary: Vocabulary,
}

impl FeatureFile {
    pub fn new(matrix: SparseMatrix, vocabulary: Vocabulary) -> Self {
        FeatureFile {
            magic: FEATURES_MAGIC.to_string(),
            matrix,
            vocabulary,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file: FeatureFile = serde_json::from_slice(bytes)?;
        if file.magic != FEATURES_MAGIC {
            return Err(Error::Format(format!(
                "expected {FEATURES_MAGIC}, found {:?}",
                file.magic
            )));
        }
        file.matrix.validate()?;
        if file.matrix.cols() != file.vocabulary.len() {
            return Err(Error::DimensionMismatch {
                expected: file.vocabulary.len(),
                found: file.matrix.cols(),
            });
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        FeatureFile::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
