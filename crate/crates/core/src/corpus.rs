//! JSON-Lines ingestion, retweet and rare-class filtering, and the
//! stratified hold-out split.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::textprep::{normalize_document, Document, Stemmer, StopLists};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Twitter,
    Amazon,
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "twitter" => Ok(Source::Twitter),
            "amazon" => Ok(Source::Amazon),
            other => Err(Error::InvalidConfig(format!("unknown source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub retweet_of: Option<String>,
    pub label_node: Option<String>,
    pub source: Source,
}

/// One line of a corpus file. Input files carry the first four fields;
/// prepared corpora add `root_category`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweet_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_category: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    /// Non-blank lines seen.
    pub lines: usize,
    pub read: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

impl IngestSummary {
    pub fn skipped(&self) -> usize {
        self.malformed + self.duplicates
    }
}

/// Streaming reader over a JSON-Lines corpus. Malformed lines and repeated
/// ids are skipped and counted; call [`Ingest::finish`] after the stream is
/// drained to apply the malformed-line threshold.
pub struct Ingest<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    source: Source,
    seen: HashSet<String>,
    summary: IngestSummary,
}

impl Ingest<BufReader<File>> {
    pub fn open(path: &Path, source: Source) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Ingest::from_reader(BufReader::new(file), path, source))
    }
}

impl<R: BufRead> Ingest<R> {
    pub fn from_reader(reader: R, path: impl Into<PathBuf>, source: Source) -> Self {
        Ingest {
            lines: reader.lines(),
            path: path.into(),
            source,
            seen: HashSet::new(),
            summary: IngestSummary::default(),
        }
    }

    pub fn summary(&self) -> IngestSummary {
        self.summary
    }

    pub fn finish(mut self) -> Result<IngestSummary> {
        for item in self.by_ref() {
            item?;
        }
        let s = self.summary;
        if s.lines > 0 && 2 * s.malformed > s.lines {
            return Err(Error::MalformedInput {
                path: self.path,
                lines: s.lines,
                malformed: s.malformed,
            });
        }
        log::info!(
            "{}: read {} records, skipped {} ({} malformed, {} duplicate ids)",
            self.path.display(),
            s.read,
            s.skipped(),
            s.malformed,
            s.duplicates
        );
        Ok(s)
    }
}

impl<R: BufRead> Iterator for Ingest<R> {
    type Item = Result<RawRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            self.summary.lines += 1;
            let parsed: CorpusLine = match serde_json::from_str(&line) {
                Ok(p) => p,
                Err(_) => {
                    self.summary.malformed += 1;
                    continue;
                }
            };
            if parsed.id.is_empty() || parsed.text.trim().is_empty() {
                self.summary.malformed += 1;
                continue;
            }
            if !self.seen.insert(parsed.id.clone()) {
                self.summary.duplicates += 1;
                continue;
            }
            self.summary.read += 1;
            return Some(Ok(RawRecord {
                id: parsed.id,
                text: parsed.text,
                retweet_of: parsed.retweet_of,
                label_node: parsed.label_node,
                source: self.source,
            }));
        }
    }
}

/// Reads a whole JSON-Lines file.
pub fn ingest(path: &Path, source: Source) -> Result<(Vec<RawRecord>, IngestSummary)> {
    let mut reader = Ingest::open(path, source)?;
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    let summary = reader.finish()?;
    Ok((records, summary))
}

/// Anything with an id and (possibly) a root-category label.
pub trait Labeled {
    fn id(&self) -> &str;
    fn label(&self) -> Option<&str>;
}

impl Labeled for Document {
    fn id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRecord {
    pub record: RawRecord,
    pub root_category: String,
}

impl Labeled for LabeledRecord {
    fn id(&self) -> &str {
        &self.record.id
    }

    fn label(&self) -> Option<&str> {
        Some(&self.root_category)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus<T = Document> {
    documents: Vec<T>,
    class_counts: BTreeMap<String, usize>,
    min_class_size: usize,
}

impl<T: Labeled> LabeledCorpus<T> {
    /// Every document must carry a label and every class must have at least
    /// `min_class_size` documents.
    pub fn new(documents: Vec<T>, min_class_size: usize) -> Result<Self> {
        let mut class_counts = BTreeMap::new();
        for doc in &documents {
            let label = doc.label().ok_or_else(|| {
                Error::InvalidConfig(format!("document {:?} has no label", doc.id()))
            })?;
            *class_counts.entry(label.to_string()).or_insert(0) += 1;
        }
        if let Some((class, &count)) = class_counts.iter().find(|(_, &n)| n < min_class_size) {
            return Err(Error::Stratification {
                class: class.clone(),
                count,
                required: min_class_size,
            });
        }
        Ok(LabeledCorpus {
            documents,
            class_counts,
            min_class_size,
        })
    }

    pub fn documents(&self) -> &[T] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<T> {
        self.documents
    }

    pub fn class_counts(&self) -> &BTreeMap<String, usize> {
        &self.class_counts
    }

    pub fn min_class_size(&self) -> usize {
        self.min_class_size
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.documents
            .iter()
            .map(|d| d.label().unwrap_or_default().to_string())
            .collect()
    }

    pub fn map<U: Labeled>(self, f: impl FnMut(T) -> U) -> Result<LabeledCorpus<U>> {
        let min = self.min_class_size;
        LabeledCorpus::new(self.documents.into_iter().map(f).collect(), min)
    }

    /// Sub-corpus of the given row indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledCorpus<T>
    where
        T: Clone,
    {
        let docs = indices.iter().map(|&i| self.documents[i].clone()).collect();
        LabeledCorpus::new(docs, 1).expect("subset of a labeled corpus stays labeled")
    }
}

/// Drops retweets, then classes with fewer than `min_class_size` surviving
/// records. A single pass: pruning does not cascade. Records without an
/// entry in `labels` are treated as unlabeled and dropped.
pub fn filter_corpus(
    records: Vec<RawRecord>,
    labels: &BTreeMap<String, String>,
    min_class_size: usize,
) -> Result<LabeledCorpus<LabeledRecord>> {
    if min_class_size == 0 {
        return Err(Error::InvalidConfig(
            "min_class_size must be at least 1".into(),
        ));
    }
    let originals: Vec<LabeledRecord> = records
        .into_iter()
        .filter(|r| r.retweet_of.is_none())
        .filter_map(|r| {
            let root = labels.get(&r.id)?.clone();
            Some(LabeledRecord {
                record: r,
                root_category: root,
            })
        })
        .collect();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &originals {
        *counts.entry(r.root_category.as_str()).or_insert(0) += 1;
    }
    let keep: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_class_size)
        .map(|(c, _)| c.to_string())
        .collect();

    let survivors: Vec<LabeledRecord> = originals
        .into_iter()
        .filter(|r| keep.contains(&r.root_category))
        .collect();
    if survivors.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    LabeledCorpus::new(survivors, min_class_size)
}

/// Stratified hold-out split: per class, `max(1, round(f * n_c))` documents
/// go to the test half. Both halves keep the input order.
pub fn train_test_split<T: Labeled + Clone>(
    corpus: &LabeledCorpus<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledCorpus<T>, LabeledCorpus<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, doc) in corpus.documents().iter().enumerate() {
        by_class
            .entry(doc.label().unwrap_or_default())
            .or_default()
            .push(i);
    }

    let mut in_test = vec![false; corpus.len()];
    for (class, mut members) in by_class {
        let n = members.len();
        if n < 2 {
            return Err(Error::Stratification {
                class: class.to_string(),
                count: n,
                required: 2,
            });
        }
        let take = test_count(test_fraction, n);
        members.shuffle(&mut keyed_rng(seed, &["train_test_split", class]));
        for &i in &members[..take] {
            in_test[i] = true;
        }
    }

    let (test, train): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|&i| in_test[i]);
    Ok((corpus.subset(&train), corpus.subset(&test)))
}

pub fn test_count(test_fraction: f64, class_size: usize) -> usize {
    ((test_fraction * class_size as f64).round() as usize).max(1)
}

pub fn read_lines(path: &Path) -> Result<Vec<CorpusLine>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn lines_to_jsonl(lines: &[CorpusLine]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Loads a prepared corpus (every line has `root_category`) and normalizes it.
pub fn read_prepared(
    path: &Path,
    stops: &StopLists,
    stemmer: Stemmer,
) -> Result<LabeledCorpus<Document>> {
    let docs = read_lines(path)?
        .into_iter()
        .map(|line| {
            let label = line.root_category.ok_or_else(|| {
                Error::Format(format!(
                    "{}: record {:?} lacks root_category",
                    path.display(),
                    line.id
                ))
            })?;
            Ok(normalize_document(
                line.id,
                &line.text,
                Some(label),
                stops,
                stemmer,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    LabeledCorpus::new(docs, 1)
}

pub fn documents_to_lines(docs: &[Document]) -> Vec<CorpusLine> {
    docs.iter()
        .map(|d| CorpusLine {
            id: d.id.clone(),
            text: d.text(),
            retweet_of: None,
            label_node: None,
            root_category: d.label.clone(),
        })
        .collect()
}
