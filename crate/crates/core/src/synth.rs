//! Seeded synthetic tweet corpora: per-class vocabularies, a shared noise
//! vocabulary, class hashtags, retweets, URLs and casing noise, plus a
//! matching browse-node taxonomy and an unlabeled stream.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusLine;
use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::textprep::StopLists;

const CATEGORY_NAMES: &[&str] = &[
    "Books",
    "Home & Kitchen",
    "Clothing, Shoes & Jewelry",
    "Movies & TV",
    "Electronics",
    "Sports & Outdoors",
    "Health & Personal Care",
    "CDs & Vinyl",
    "Video Games",
    "Toys & Games",
    "Digital Music",
    "Collectibles & Fine Art",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub docs_per_class: usize,
    /// Class 0 gets `docs_per_class * majority_factor` documents.
    pub majority_factor: usize,
    pub vocab_per_class: usize,
    pub shared_vocab: usize,
    /// Probability that a token comes from the shared vocabulary.
    pub noise_rate: f64,
    pub hashtags_per_class: usize,
    pub hashtag_rate: f64,
    pub retweet_rate: f64,
    pub url_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub unlabeled: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 6,
            docs_per_class: 200,
            majority_factor: 1,
            vocab_per_class: 30,
            shared_vocab: 40,
            noise_rate: 0.2,
            hashtags_per_class: 3,
            hashtag_rate: 0.5,
            retweet_rate: 0.1,
            url_rate: 0.2,
            min_len: 6,
            max_len: 14,
            unlabeled: 0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyLine {
    pub node_id: String,
    pub parent_ids: Vec<String>,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub class_names: Vec<String>,
    pub labeled: Vec<CorpusLine>,
    pub unlabeled: Vec<CorpusLine>,
    pub taxonomy: Vec<TaxonomyLine>,
}

struct Lexicon {
    class_words: Vec<Vec<String>>,
    class_tags: Vec<Vec<String>>,
    shared: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
    const VOWELS: &[u8] = b"aeiou";
    (0..3)
        .flat_map(|_| {
            [
                CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char,
                VOWELS[rng.gen_range(0..VOWELS.len())] as char,
            ]
        })
        .collect()
}

fn lexicon(config: &SynthConfig) -> Lexicon {
    let stops = StopLists::builtin();
    let mut rng = keyed_rng(config.seed, &["synth", "lexicon"]);
    let mut used = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let w = pseudo_word(rng);
        if !stops.contains(&w) && used.insert(w.clone()) {
            return w;
        }
    };
    let class_words = (0..config.classes)
        .map(|_| {
            (0..config.vocab_per_class)
                .map(|_| fresh(&mut rng))
                .collect()
        })
        .collect();
    let class_tags = (0..config.classes)
        .map(|_| {
            (0..config.hashtags_per_class)
                .map(|_| format!("#{}", fresh(&mut rng)))
                .collect()
        })
        .collect();
    let shared = (0..config.shared_vocab).map(|_| fresh(&mut rng)).collect();
    Lexicon {
        class_words,
        class_tags,
        shared,
    }
}

fn class_name(c: usize) -> String {
    match CATEGORY_NAMES.get(c) {
        Some(name) => name.to_string(),
        None => format!("Category {c}"),
    }
}

fn tweet(config: &SynthConfig, lex: &Lexicon, class: usize, rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(config.min_len..=config.max_len);
    let mut parts: Vec<String> = Vec::with_capacity(len + 3);
    for _ in 0..len {
        let pool = if lex.shared.is_empty() || rng.gen_bool(1.0 - config.noise_rate) {
            &lex.class_words[class]
        } else {
            &lex.shared
        };
        let mut w = pool.choose(rng).cloned().unwrap_or_default();
        match rng.gen_range(0..20) {
            0 => w = w.to_uppercase(),
            1 => w.push('!'),
            2 => w.push(','),
            3 => parts.push("the".into()),
            _ => {}
        }
        parts.push(w);
    }
    if rng.gen_bool(config.hashtag_rate) {
        if let Some(tag) = lex.class_tags[class].choose(rng) {
            parts.push(tag.clone());
        }
    }
    if rng.gen_bool(config.url_rate) {
        let code: String = (0..6).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        parts.push(format!("http://t.co/{code}"));
    }
    parts.join(" ")
}

fn validate(config: &SynthConfig) -> Result<()> {
    let bad = |msg: &str| Err(Error::InvalidConfig(format!("synth: {msg}")));
    if config.classes == 0 || config.docs_per_class == 0 || config.vocab_per_class == 0 {
        return bad("classes, docs_per_class and vocab_per_class must be positive");
    }
    if config.majority_factor == 0 {
        return bad("majority_factor must be at least 1");
    }
    if config.min_len == 0 || config.min_len > config.max_len {
        return bad("need 0 < min_len <= max_len");
    }
    for (name, p) in [
        ("noise_rate", config.noise_rate),
        ("hashtag_rate", config.hashtag_rate),
        ("retweet_rate", config.retweet_rate),
        ("url_rate", config.url_rate),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return bad(&format!("{name} must be a probability"));
        }
    }
    Ok(())
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    validate(config)?;
    let lex = lexicon(config);
    let class_names: Vec<String> = (0..config.classes).map(class_name).collect();

    // Each root has two mid-level nodes and four leaves; leaves 0 and 1
    // hang under both mid nodes.
    let mut taxonomy = Vec::new();
    for (c, name) in class_names.iter().enumerate() {
        let root = format!("root-{c}");
        taxonomy.push(TaxonomyLine {
            node_id: root.clone(),
            parent_ids: vec![],
            name: name.clone(),
        });
        for m in 0..2 {
            taxonomy.push(TaxonomyLine {
                node_id: format!("mid-{c}-{m}"),
                parent_ids: vec![root.clone()],
                name: format!("{name} / {m}"),
            });
        }
        for leaf in 0..4 {
            let parents = if leaf < 2 {
                vec![format!("mid-{c}-0"), format!("mid-{c}-1")]
            } else {
                vec![format!("mid-{c}-{}", leaf % 2)]
            };
            taxonomy.push(TaxonomyLine {
                node_id: format!("leaf-{c}-{leaf}"),
                parent_ids: parents,
                name: format!("{name} leaf {leaf}"),
            });
        }
    }

    let mut rng = keyed_rng(config.seed, &["synth", "labeled"]);
    let mut originals = Vec::new();
    for c in 0..config.classes {
        let n = if c == 0 {
            config.docs_per_class * config.majority_factor
        } else {
            config.docs_per_class
        };
        for i in 0..n {
            originals.push(CorpusLine {
                id: format!("t{c}-{i}"),
                text: tweet(config, &lex, c, &mut rng),
                retweet_of: None,
                label_node: Some(format!("leaf-{c}-{}", rng.gen_range(0..4))),
                root_category: None,
            });
        }
    }
    originals.shuffle(&mut rng);
    let mut labeled = Vec::with_capacity(originals.len());
    for line in originals {
        let retweet = rng.gen_bool(config.retweet_rate).then(|| CorpusLine {
            id: format!("rt-{}", line.id),
            text: format!("RT @someone: {}", line.text),
            retweet_of: Some(line.id.clone()),
            label_node: line.label_node.clone(),
            root_category: None,
        });
        labeled.push(line);
        labeled.extend(retweet);
    }

    let mut rng = keyed_rng(config.seed, &["synth", "unlabeled"]);
    let unlabeled = (0..config.unlabeled)
        .map(|i| {
            let c = rng.gen_range(0..config.classes);
            CorpusLine {
                id: format!("u{i}"),
                text: tweet(config, &lex, c, &mut rng),
                retweet_of: None,
                label_node: None,
                root_category: None,
            }
        })
        .collect();

    Ok(SynthCorpus {
        class_names,
        labeled,
        unlabeled,
        taxonomy,
    })
}

pub fn taxonomy_to_jsonl(lines: &[TaxonomyLine]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.push(b'\n');
    }
    Ok(out)
}
