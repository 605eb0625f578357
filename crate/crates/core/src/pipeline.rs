//! The end-to-end classifier: optional expansion, vocabulary, TF-IDF,
//! ANOVA-F selection and a learner, fit together on one training corpus.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::expansion::{
    build_category_thesaurus, expand_documents, ExpansionConfig, Side, Thesaurus, ThesaurusKind,
    Weighting,
};
use crate::features::{
    anova_f, build_vocabulary, count_matrix, select_top, tfidf, FeatureMask, SparseMatrix,
    Vocabulary,
};
use crate::learners::{train_linear, train_nb, LinearConfig, ModelKind, TrainedModel};
use crate::rng::derive_seed;
use crate::textprep::{Document, StopLists};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionSettings {
    pub kind: ThesaurusKind,
    pub n: usize,
    pub side: Side,
    /// Category thesauri only.
    pub weighting: Weighting,
    /// Depth of category thesauri built during fitting.
    pub max_depth: usize,
}

impl Default for ExpansionSettings {
    fn default() -> Self {
        ExpansionSettings {
            kind: ThesaurusKind::Hashtag,
            n: 2,
            side: Side::Both,
            weighting: Weighting::Tfidf,
            max_depth: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ngram_max: usize,
    pub min_df: usize,
    pub keep_fraction: f64,
    pub learner: ModelKind,
    #[serde(rename = "C")]
    pub c: f64,
    pub class_weights: BTreeMap<String, f64>,
    pub epochs: usize,
    pub alpha: f64,
    /// Feed naive Bayes raw counts instead of TF-IDF values.
    pub nb_counts: bool,
    pub expansion: Option<ExpansionSettings>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ngram_max: 1,
            min_df: 1,
            keep_fraction: 0.25,
            learner: ModelKind::Svm,
            c: 5.0,
            class_weights: BTreeMap::new(),
            epochs: 30,
            alpha: 1.0,
            nb_counts: false,
            expansion: None,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    /// Same configuration with the seed derived for fold `fold`.
    pub fn for_fold(&self, fold: usize) -> PipelineConfig {
        PipelineConfig {
            seed: derive_seed(self.seed, &["fold", &fold.to_string()]),
            ..self.clone()
        }
    }

    fn expansion_config(&self) -> Option<(ExpansionConfig, &ExpansionSettings)> {
        self.expansion.as_ref().filter(|e| e.n > 0).map(|e| {
            (
                ExpansionConfig {
                    n: e.n,
                    seed: self.seed,
                    side: e.side,
                },
                e,
            )
        })
    }
}

pub struct Pipeline;

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub vocabulary: Vocabulary,
    pub mask: FeatureMask,
    pub model: TrainedModel,
}

impl Pipeline {
    /// Fits every stage on `train`. `hashtag_thesaurus` comes from an
    /// external corpus and is required when hashtag expansion is configured.
    pub fn fit(
        config: &PipelineConfig,
        train: &LabeledCorpus<Document>,
        hashtag_thesaurus: Option<&Thesaurus>,
    ) -> Result<FittedPipeline> {
        let mut docs: Vec<Document> = train.documents().to_vec();
        if let Some((exp, settings)) = config.expansion_config() {
            if exp.side.expands_training() {
                let thesaurus = match settings.kind {
                    ThesaurusKind::Hashtag => hashtag_thesaurus
                        .ok_or_else(|| {
                            Error::InvalidConfig(
                                "hashtag expansion needs a hashtag thesaurus".into(),
                            )
                        })?
                        .clone(),
                    ThesaurusKind::Category => {
                        // Documents are already normalized, so no further stop filtering is needed.
                        build_category_thesaurus(
                            train,
                            settings.weighting,
                            settings.max_depth,
                            &StopLists::empty(),
                        )
                        .0
                    }
                };
                docs = expand_documents(&docs, &thesaurus, &exp)?.0;
            }
        }
        let labels = train.labels();
        let vocabulary = build_vocabulary(&docs, config.ngram_max, config.min_df)?;
        let x = tfidf(&docs, &vocabulary);
        let mask = select_top(&anova_f(&x, &labels)?, config.keep_fraction)?;

        let mut model = match config.learner {
            ModelKind::Nb => {
                let input = if config.nb_counts {
                    count_matrix(&docs, &vocabulary)
                } else {
                    x
                };
                train_nb(&mask.apply(&input)?, &labels, config.alpha)?
            }
            kind => train_linear(
                &mask.apply(&x)?,
                &labels,
                &LinearConfig {
                    kind,
                    c: config.c,
                    class_weights: config.class_weights.clone(),
                    epochs: config.epochs,
                    seed: config.seed,
                },
            )?,
        };
        model.vocabulary_hash = Some(vocabulary.fingerprint());
        model.feature_columns = mask.kept_columns().to_vec();
        Ok(FittedPipeline {
            config: config.clone(),
            vocabulary,
            mask,
            model,
        })
    }
}

pub const MODEL_FILE: &str = "model.json";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const PIPELINE_FILE: &str = "pipeline.json";

impl FittedPipeline {
    /// Masked feature matrix for already-expanded documents.
    pub fn transform(&self, docs: &[Document]) -> Result<SparseMatrix> {
        let raw = if self.config.learner == ModelKind::Nb && self.config.nb_counts {
            count_matrix(docs, &self.vocabulary)
        } else {
            tfidf(docs, &self.vocabulary)
        };
        self.mask.apply(&raw)
    }

    /// Applies query-side hashtag expansion when configured, then predicts.
    pub fn predict(
        &self,
        docs: &[Document],
        hashtag_thesaurus: Option<&Thesaurus>,
    ) -> Result<Vec<String>> {
        let mut queries = None;
        if let Some((exp, settings)) = self.config.expansion_config() {
            if exp.side.expands_queries() && settings.kind == ThesaurusKind::Hashtag {
                let thesaurus = hashtag_thesaurus.ok_or_else(|| {
                    Error::InvalidConfig("query expansion needs a hashtag thesaurus".into())
                })?;
                queries = Some(expand_documents(docs, thesaurus, &exp)?.0);
            }
        }
        let docs = queries.as_deref().unwrap_or(docs);
        self.model.predict(&self.transform(docs)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::io::write_atomic(&dir.join(MODEL_FILE), &self.model.to_bytes()?)?;
        crate::io::write_atomic(
            &dir.join(VOCABULARY_FILE),
            &serde_json::to_vec(&self.vocabulary)?,
        )?;
        crate::io::write_atomic(
            &dir.join(PIPELINE_FILE),
            &serde_json::to_vec_pretty(&self.config)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let model = TrainedModel::from_bytes(&read(MODEL_FILE)?)?;
        let vocabulary: Vocabulary = serde_json::from_slice(&read(VOCABULARY_FILE)?)?;
        let config: PipelineConfig = serde_json::from_slice(&read(PIPELINE_FILE)?)?;
        if model.vocabulary_hash.as_deref() != Some(vocabulary.fingerprint().as_str()) {
            return Err(Error::Format(
                "model was trained against a different vocabulary".into(),
            ));
        }
        let mask = FeatureMask::from_columns(model.feature_columns.clone(), vocabulary.len())?;
        if mask.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: mask.len(),
            });
        }
        Ok(FittedPipeline {
            config,
            vocabulary,
            mask,
            model,
        })
    }
}
