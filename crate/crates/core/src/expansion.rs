//! Thesaurus construction and document/query expansion.
//!
//! A thesaurus maps a key (a hashtag, or a root category) to a ranked word
//! list. Expansion appends `n` words drawn without replacement from the top
//! `2n` of each applicable key's list.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::textprep::{Document, StopListHashes, StopLists};

pub const THESAURUS_MAGIC: &str = "STXT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThesaurusKind {
    Hashtag,
    Category,
}

impl FromStr for ThesaurusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hashtag" => Ok(ThesaurusKind::Hashtag),
            "category" => Ok(ThesaurusKind::Category),
            other => Err(Error::InvalidConfig(format!(
                "unknown thesaurus kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Frequency,
    Tfidf,
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frequency" => Ok(Weighting::Frequency),
            "tfidf" => Ok(Weighting::Tfidf),
            other => Err(Error::InvalidConfig(format!("unknown weighting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltFrom {
    pub descriptor: String,
    pub documents: usize,
    pub stop_lists: StopListHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thesaurus {
    pub kind: ThesaurusKind,
    pub weighting: Weighting,
    pub max_depth: usize,
    pub entries: BTreeMap<String, Vec<(String, f64)>>,
    pub built_from: BuiltFrom,
}

#[derive(Serialize, Deserialize)]
struct ThesaurusFile {
    magic: String,
    #[serde(flatten)]
    thesaurus: Thesaurus,
}

impl Thesaurus {
    pub fn words(&self, key: &str) -> Option<&[(String, f64)]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(&ThesaurusFile {
            magic: THESAURUS_MAGIC.into(),
            thesaurus: self.clone(),
        })?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file: ThesaurusFile = serde_json::from_slice(bytes)?;
        if file.magic != THESAURUS_MAGIC {
            return Err(Error::Format(format!(
                "expected {THESAURUS_MAGIC}, found {:?}",
                file.magic
            )));
        }
        Ok(file.thesaurus)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Thesaurus::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Score descending, then word ascending; truncated to `depth`.
fn rank(scores: impl IntoIterator<Item = (String, f64)>, depth: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(depth);
    ranked
}

/// The word a token contributes to a thesaurus: hashtag markers are removed
/// so appended words never masquerade as hashtags.
fn bare(token: &str) -> &str {
    token.strip_prefix('#').unwrap_or(token)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TagCounts {
    support: usize,
    words: HashMap<String, u64>,
}

/// Mergeable per-shard co-occurrence counts for hashtag thesauri. Counts
/// are exactly additive, so shards can be built independently.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HashtagCounts {
    tags: HashMap<String, TagCounts>,
    documents: usize,
}

impl HashtagCounts {
    pub fn new() -> Self {
        HashtagCounts::default()
    }

    pub fn add(&mut self, doc: &Document, stops: &StopLists) {
        self.documents += 1;
        for tag in &doc.hashtags {
            let key_word = bare(tag);
            let entry = self.tags.entry(tag.clone()).or_default();
            entry.support += 1;
            for token in &doc.tokens {
                let word = bare(token);
                if word.is_empty() || word == key_word || stops.contains(word) {
                    continue;
                }
                *entry.words.entry(word.to_string()).or_insert(0) += 1;
            }
        }
    }

    pub fn merge(&mut self, other: HashtagCounts) {
        self.documents += other.documents;
        for (tag, counts) in other.tags {
            let entry = self.tags.entry(tag).or_default();
            entry.support += counts.support;
            for (w, n) in counts.words {
                *entry.words.entry(w).or_insert(0) += n;
            }
        }
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    /// Hashtags seen in fewer than `min_support` documents, or with no
    /// eligible co-occurring words, are omitted.
    pub fn finish(
        self,
        stops: &StopLists,
        max_depth: usize,
        min_support: usize,
        descriptor: &str,
    ) -> Thesaurus {
        let entries = self
            .tags
            .into_iter()
            .filter(|(_, c)| c.support >= min_support)
            .map(|(tag, c)| {
                (
                    tag,
                    rank(c.words.into_iter().map(|(w, n)| (w, n as f64)), max_depth),
                )
            })
            .filter(|(_, words)| !words.is_empty())
            .collect();
        Thesaurus {
            kind: ThesaurusKind::Hashtag,
            weighting: Weighting::Frequency,
            max_depth,
            entries,
            built_from: BuiltFrom {
                descriptor: descriptor.to_string(),
                documents: self.documents,
                stop_lists: stops.hashes(),
            },
        }
    }
}

pub const DEFAULT_MIN_SUPPORT: usize = 2;

pub fn build_hashtag_thesaurus<'a, I>(
    corpus: I,
    stops: &StopLists,
    max_depth: usize,
    min_support: usize,
) -> Thesaurus
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut counts = HashtagCounts::new();
    for doc in corpus {
        counts.add(doc, stops);
    }
    counts.finish(stops, max_depth, min_support, "hashtag co-occurrence")
}

/// Per-category word rankings from a labeled corpus. Pass the training
/// portion only; nothing here may see held-out documents.
///
/// With `Tfidf`, each category's concatenated text is one pseudo-document
/// and words are scored by `tf * ln(K / df)` over the K categories. With
/// `Frequency`, by raw in-category count. Returns the thesaurus and any
/// warnings raised along the way.
pub fn build_category_thesaurus(
    corpus: &crate::corpus::LabeledCorpus<Document>,
    weighting: Weighting,
    max_depth: usize,
    stops: &StopLists,
) -> (Thesaurus, Vec<String>) {
    let mut warnings = Vec::new();
    let mut per_class: BTreeMap<&str, HashMap<&str, u64>> = BTreeMap::new();
    for doc in corpus.documents() {
        let Some(label) = doc.label.as_deref() else {
            continue;
        };
        let counts = per_class.entry(label).or_default();
        for token in &doc.tokens {
            let word = bare(token);
            if word.is_empty() || stops.contains(word) || !word.chars().any(char::is_alphabetic) {
                continue;
            }
            *counts.entry(word).or_insert(0) += 1;
        }
    }
    per_class.retain(|class, counts| {
        if counts.is_empty() {
            warnings.push(format!(
                "category {class:?} has no usable tokens and was omitted"
            ));
        }
        !counts.is_empty()
    });

    let k = per_class.len();
    if weighting == Weighting::Tfidf && k == 1 {
        warnings.push(
            "only one category: every idf is zero, words fall back to lexicographic order".into(),
        );
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for counts in per_class.values() {
        for &w in counts.keys() {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    let entries = per_class
        .iter()
        .map(|(class, counts)| {
            let total: u64 = counts.values().sum();
            let scored = counts.iter().map(|(&w, &n)| {
                let s = match weighting {
                    Weighting::Frequency => n as f64,
                    Weighting::Tfidf => n as f64 / total as f64 * (k as f64 / df[w] as f64).ln(),
                };
                (w.to_string(), s)
            });
            (class.to_string(), rank(scored, max_depth))
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    let thesaurus = Thesaurus {
        kind: ThesaurusKind::Category,
        weighting,
        max_depth,
        entries,
        built_from: BuiltFrom {
            descriptor: "labeled training corpus".into(),
            documents: corpus.len(),
            stop_lists: stops.hashes(),
        },
    };
    (thesaurus, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Document,
    Query,
    Both,
}

impl Side {
    pub fn expands_training(self) -> bool {
        matches!(self, Side::Document | Side::Both)
    }

    pub fn expands_queries(self) -> bool {
        matches!(self, Side::Query | Side::Both)
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "document" => Ok(Side::Document),
            "query" => Ok(Side::Query),
            "both" => Ok(Side::Both),
            other => Err(Error::InvalidConfig(format!(
                "unknown expansion side {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub n: usize,
    pub seed: u64,
    pub side: Side,
}

impl ExpansionConfig {
    pub fn validate(&self, thesaurus: &Thesaurus) -> Result<()> {
        if 2 * self.n > thesaurus.max_depth {
            return Err(Error::InvalidConfig(format!(
                "expansion n = {} needs a thesaurus depth of at least {}, have {}",
                self.n,
                2 * self.n,
                thesaurus.max_depth
            )));
        }
        Ok(())
    }
}

fn keys_for(doc: &Document, kind: ThesaurusKind) -> Vec<&str> {
    match kind {
        ThesaurusKind::Hashtag => doc.hashtags.iter().map(String::as_str).collect(),
        ThesaurusKind::Category => doc.label.as_deref().into_iter().collect(),
    }
}

/// Appends, for every applicable key, `min(n, |top 2n|)` distinct words
/// sampled from the key's top `2n`. The draw is keyed on
/// `(seed, doc id, key)`.
pub fn expand(doc: &Document, thesaurus: &Thesaurus, config: &ExpansionConfig) -> Result<Document> {
    config.validate(thesaurus)?;
    Ok(expand_unchecked(doc, thesaurus, config))
}

fn expand_unchecked(doc: &Document, thesaurus: &Thesaurus, config: &ExpansionConfig) -> Document {
    let mut out = doc.clone();
    if config.n == 0 {
        return out;
    }
    for key in keys_for(doc, thesaurus.kind) {
        let Some(words) = thesaurus.words(key) else {
            continue;
        };
        let top = &words[..words.len().min(2 * config.n)];
        let draw = config.n.min(top.len());
        let mut rng = keyed_rng(config.seed, &["expand", &doc.id, key]);
        for i in rand::seq::index::sample(&mut rng, top.len(), draw) {
            out.tokens.push(top[i].0.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionStats {
    pub documents: usize,
    pub documents_touched: usize,
    pub words_added: usize,
}

impl ExpansionStats {
    fn add(&mut self, other: ExpansionStats) {
        self.documents += other.documents;
        self.documents_touched += other.documents_touched;
        self.words_added += other.words_added;
    }
}

/// Expands every document, in parallel, preserving order.
pub fn expand_documents(
    docs: &[Document],
    thesaurus: &Thesaurus,
    config: &ExpansionConfig,
) -> Result<(Vec<Document>, ExpansionStats)> {
    config.validate(thesaurus)?;
    let expanded: Vec<Document> = docs
        .par_iter()
        .map(|d| expand_unchecked(d, thesaurus, config))
        .collect();
    let mut stats = ExpansionStats {
        documents: docs.len(),
        ..Default::default()
    };
    for (before, after) in docs.iter().zip(&expanded) {
        let added = after.tokens.len() - before.tokens.len();
        if added > 0 {
            stats.documents_touched += 1;
            stats.words_added += added;
        }
    }
    Ok((expanded, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedSplit {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub stats: ExpansionStats,
}

/// Applies expansion to a train/test pair according to `config.side`.
/// Category thesauri never expand the test side: that would read the
/// held-out label.
pub fn expand_corpus(
    train: &[Document],
    test: &[Document],
    thesaurus: &Thesaurus,
    config: &ExpansionConfig,
) -> Result<ExpandedSplit> {
    config.validate(thesaurus)?;
    let mut stats = ExpansionStats::default();
    let train = if config.side.expands_training() {
        let (docs, s) = expand_documents(train, thesaurus, config)?;
        stats.add(s);
        docs
    } else {
        train.to_vec()
    };
    let query_side = config.side.expands_queries() && thesaurus.kind == ThesaurusKind::Hashtag;
    if config.side.expands_queries() && !query_side {
        log::warn!("category thesauri expand training documents only; query side left unchanged");
    }
    let test = if query_side {
        let (docs, s) = expand_documents(test, thesaurus, config)?;
        stats.add(s);
        docs
    } else {
        test.to_vec()
    };
    Ok(ExpandedSplit { train, test, stats })
}
