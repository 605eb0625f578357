//! Text normalization: lowercasing, URL removal, punctuation stripping with
//! hashtag preservation, stop-word removal and suffix stemming.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::rng::sha256_hex;

const DEFAULT_GENERAL: &str = include_str!("../data/stop_general.txt");
const DEFAULT_PLATFORM: &str = include_str!("../data/stop_twitter.txt");

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopLists {
    general: BTreeSet<String>,
    platform: BTreeSet<String>,
}

/// Content hashes of the two stop lists, recorded in run manifests and
/// thesaurus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopListHashes {
    pub general: String,
    pub platform: String,
}

impl StopLists {
    pub fn new<I, J, S, T>(general: I, platform: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let clean = |w: &str| {
            let w = w.trim().to_lowercase();
            (!w.is_empty()).then_some(w)
        };
        StopLists {
            general: general
                .into_iter()
                .filter_map(|w| clean(w.as_ref()))
                .collect(),
            platform: platform
                .into_iter()
                .filter_map(|w| clean(w.as_ref()))
                .collect(),
        }
    }

    pub fn empty() -> Self {
        StopLists::default()
    }

    /// The built-in English and Twitter lists.
    pub fn builtin() -> Self {
        StopLists::new(
            parse_stop_list(DEFAULT_GENERAL),
            parse_stop_list(DEFAULT_PLATFORM),
        )
    }

    pub fn from_files(general: &Path, platform: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Ok(StopLists::new(
            parse_stop_list(&read(general)?),
            parse_stop_list(&read(platform)?),
        ))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.general.contains(word) || self.platform.contains(word)
    }

    pub fn general(&self) -> &BTreeSet<String> {
        &self.general
    }

    pub fn platform(&self) -> &BTreeSet<String> {
        &self.platform
    }

    pub fn hashes(&self) -> StopListHashes {
        let canon = |set: &BTreeSet<String>| {
            let joined: Vec<&str> = set.iter().map(String::as_str).collect();
            sha256_hex(joined.join("\n").as_bytes())
        };
        StopListHashes {
            general: canon(&self.general),
            platform: canon(&self.platform),
        }
    }
}

/// Parses a stop-list file: one word per line, `#` starts a comment.
pub fn parse_stop_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stemmer {
    None,
    #[default]
    Suffix,
}

impl FromStr for Stemmer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Stemmer::None),
            "suffix" => Ok(Stemmer::Suffix),
            other => Err(Error::InvalidConfig(format!("unknown stemmer {other:?}"))),
        }
    }
}

impl fmt::Display for Stemmer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stemmer::None => "none",
            Stemmer::Suffix => "suffix",
        })
    }
}

impl Stemmer {
    pub fn stem(self, word: &str) -> String {
        match self {
            Stemmer::None => word.to_string(),
            Stemmer::Suffix => {
                // Iterate to a fixed point so stemming is idempotent.
                let mut current = word.to_string();
                while let Some(next) = suffix_step(&current) {
                    current = next;
                }
                current
            }
        }
    }
}

fn has_vowel(s: &str) -> bool {
    s.chars()
        .any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y'))
}

fn undouble(mut stem: String) -> String {
    let chars: Vec<char> = stem.chars().collect();
    if let [.., a, b] = chars[..] {
        if a == b
            && a.is_ascii_alphabetic()
            && !matches!(a, 'a' | 'e' | 'i' | 'o' | 'u' | 'l' | 's' | 'z')
        {
            stem.pop();
        }
    }
    stem
}

/// One application of the plural / `-ing` / `-ed` rules; `None` when no rule fires.
fn suffix_step(word: &str) -> Option<String> {
    let len = word.chars().count();
    let strip = |suffix: &str| word[..word.len() - suffix.len()].to_string();

    if word.ends_with("sses") {
        return Some(strip("es"));
    }
    if word.ends_with("ies") && len >= 5 {
        return Some(strip("ies") + "y");
    }
    if word.ends_with("ing") && len >= 6 {
        let stem = strip("ing");
        if has_vowel(&stem) {
            return Some(undouble(stem));
        }
    }
    if word.ends_with("ed") && !word.ends_with("eed") && len >= 5 {
        let stem = strip("ed");
        if has_vowel(&stem) {
            return Some(undouble(stem));
        }
    }
    if ["xes", "ches", "shes", "zes"]
        .iter()
        .any(|s| word.ends_with(s))
        && len >= 5
    {
        return Some(strip("es"));
    }
    if word.ends_with('s') && !["ss", "us", "is"].iter().any(|s| word.ends_with(s)) && len >= 4 {
        return Some(strip("s"));
    }
    None
}

/// A tweet or review after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    /// Stored with the leading `#`; every member also appears in `tokens`.
    pub hashtags: BTreeSet<String>,
    pub label: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, label: Option<String>) -> Self {
        let hashtags = tokens
            .iter()
            .filter(|t| t.starts_with('#'))
            .cloned()
            .collect();
        Document {
            id: id.into(),
            tokens,
            hashtags,
            label,
        }
    }

    /// Tokens joined by single spaces. Normalizing this string reproduces
    /// `tokens` exactly.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| {
        Regex::new(r"(?:https?://|www\.)\S*|[a-z0-9][a-z0-9-]*(?:\.[a-z0-9-]+)*\.[a-z]{2,}/\S*")
            .expect("url regex")
    })
}

pub fn is_url(token: &str) -> bool {
    url_pattern().is_match(token)
}

fn is_stripped(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
            | Control
            | Format
    )
}

/// Normalizes free text into tokens and the hashtag set.
pub fn normalize(
    text: &str,
    stops: &StopLists,
    stemmer: Stemmer,
) -> (Vec<String>, BTreeSet<String>) {
    let lowered = text.to_lowercase();
    let without_urls = url_pattern().replace_all(&lowered, " ");

    let mut tokens = Vec::new();
    let mut hashtags = BTreeSet::new();
    for raw in without_urls.split_whitespace() {
        let (is_tag, body) = match raw.strip_prefix('#') {
            Some(rest) => (true, rest),
            None => (false, raw),
        };
        let word: String = body.chars().filter(|&c| !is_stripped(c)).collect();
        if word.is_empty() || stops.contains(&word) {
            continue;
        }
        if is_tag {
            let tag = format!("#{word}");
            hashtags.insert(tag.clone());
            tokens.push(tag);
        } else {
            let stemmed = stemmer.stem(&word);
            if stemmed.is_empty() || stops.contains(&stemmed) {
                continue;
            }
            tokens.push(stemmed);
        }
    }
    (tokens, hashtags)
}

pub fn normalize_document(
    id: impl Into<String>,
    text: &str,
    label: Option<String>,
    stops: &StopLists,
    stemmer: Stemmer,
) -> Document {
    let (tokens, hashtags) = normalize(text, stops, stemmer);
    Document {
        id: id.into(),
        tokens,
        hashtags,
        label,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyReduction {
    pub unique_before: usize,
    pub unique_after: usize,
}

/// Distinct whitespace-delimited words in the raw texts versus distinct
/// tokens after normalization.
pub fn vocabulary_reduction_report<'a, I>(before: I, after: &[Document]) -> VocabularyReduction
where
    I: IntoIterator<Item = &'a str>,
{
    let raw: HashSet<&str> = before.into_iter().flat_map(str::split_whitespace).collect();
    let normalized: HashSet<&str> = after
        .iter()
        .flat_map(|d| d.tokens.iter().map(String::as_str))
        .collect();
    VocabularyReduction {
        unique_before: raw.len(),
        unique_after: normalized.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stops(words: &[&str]) -> StopLists {
        StopLists::new(words.iter().copied(), std::iter::empty::<&str>())
    }

    #[test]
    fn strips_url_punctuation_and_stop_words() {
        let (tokens, tags) = normalize(
            "Check out http://t.co/xyz #Fiction NOW!!!",
            &stops(&["out", "now"]),
            Stemmer::None,
        );
        assert_eq!(tokens, vec!["check", "#fiction"]);
        assert_eq!(tags.into_iter().collect::<Vec<_>>(), vec!["#fiction"]);
    }

    #[test]
    fn empty_text() {
        let (tokens, tags) = normalize("", &StopLists::empty(), Stemmer::Suffix);
        assert!(tokens.is_empty());
        assert!(tags.is_empty());
    }

    #[test]
    fn lowercases_then_stems() {
        let (tokens, _) = normalize("Cats cats CATS", &StopLists::empty(), Stemmer::Suffix);
        assert_eq!(tokens, vec!["cat", "cat", "cat"]);
    }

    #[test]
    fn bare_shortener_links_are_removed() {
        let (tokens, _) = normalize(
            "see bit.ly/abc and (t.co/Q1) www.example.com ok",
            &StopLists::empty(),
            Stemmer::None,
        );
        assert_eq!(tokens, vec!["see", "and", "ok"]);
    }

    #[test]
    fn hashtag_marker_only_survives_token_initially() {
        let (tokens, tags) = normalize("##deal a#b !#x # #", &StopLists::empty(), Stemmer::None);
        assert_eq!(tokens, vec!["#deal", "ab", "x"]);
        assert_eq!(tags.len(), 1);
    }

    #[test]
    fn hashtag_dropped_when_word_is_a_stop_word() {
        let (tokens, tags) = normalize("#the #book", &stops(&["the"]), Stemmer::None);
        assert_eq!(tokens, vec!["#book"]);
        assert!(tags.contains("#book"));
    }

    #[test]
    fn hashtags_are_not_stemmed() {
        let (tokens, _) = normalize("#books books", &StopLists::empty(), Stemmer::Suffix);
        assert_eq!(tokens, vec!["#books", "book"]);
    }

    #[test]
    fn stems_that_land_on_stop_words_are_dropped() {
        let (tokens, _) = normalize("others", &stops(&["other"]), Stemmer::Suffix);
        assert!(tokens.is_empty());
    }

    #[test]
    fn suffix_rules() {
        let s = Stemmer::Suffix;
        for (w, want) in [
            ("cats", "cat"),
            ("running", "run"),
            ("stopped", "stop"),
            ("studies", "study"),
            ("boxes", "box"),
            ("glasses", "glass"),
            ("string", "string"),
            ("agreed", "agreed"),
            ("bus", "bus"),
        ] {
            assert_eq!(s.stem(w), want, "{w}");
        }
    }

    #[test]
    fn stop_list_file_format() {
        let words = parse_stop_list("# header\nThe\n\n  a  # trailing\n");
        assert_eq!(words, vec!["the", "a"]);
    }

    #[test]
    fn builtin_lists_are_lowercase_and_non_empty() {
        let lists = StopLists::builtin();
        assert!(lists.general().len() > 100);
        assert!(lists.platform().contains("rt"));
        assert!(lists
            .general()
            .iter()
            .all(|w| w.to_lowercase() == *w && !w.is_empty()));
        assert_ne!(lists.hashes().general, lists.hashes().platform);
    }

    #[test]
    fn reduction_report() {
        let after = vec![Document::new("1", vec!["a".into()], None)];
        assert_eq!(
            vocabulary_reduction_report(["A a"], &after),
            VocabularyReduction {
                unique_before: 2,
                unique_after: 1
            }
        );
        let same = vocabulary_reduction_report(["a"], &after);
        assert_eq!(same.unique_before, same.unique_after);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(text in "\\PC{0,80}", stem in any::<bool>()) {
            let stemmer = if stem { Stemmer::Suffix } else { Stemmer::None };
            let lists = StopLists::builtin();
            let (once, tags) = normalize(&text, &lists, stemmer);
            let (twice, tags2) = normalize(&once.join(" "), &lists, stemmer);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(tags, tags2);
        }

        #[test]
        fn output_tokens_are_clean(text in "[a-zA-Z#!.:/ ]{0,60}|(http://[a-z]{1,5} )?#?[A-Za-z]{1,8}( [A-Z]{1,4})*") {
            let lists = StopLists::builtin();
            let (tokens, tags) = normalize(&text, &lists, Stemmer::Suffix);
            for t in &tokens {
                prop_assert!(!is_url(t));
                prop_assert_eq!(t.to_lowercase(), t.clone());
                prop_assert!(!lists.contains(t.trim_start_matches('#')));
            }
            for tag in &tags {
                prop_assert!(tokens.contains(tag));
            }
        }

        #[test]
        fn surviving_hashtags_are_kept(word in "[a-z]{3,10}", prefix in "[a-z ]{0,20}") {
            let lists = StopLists::empty();
            let (_, tags) = normalize(&format!("{prefix} #{word}"), &lists, Stemmer::Suffix);
            let expected = format!("#{}", word);
            prop_assert!(tags.contains(&expected));
        }
    }
}
