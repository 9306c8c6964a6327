//! Run configuration (TOML) and the corpus-to-graph pipeline it drives.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cluster_titles, extract_ngrams, ArtworkRecord, ClusterOptions, CorpusError, DedupOptions, NgramCaps, NgramVocab, TitleClustering};
use crate::embed::ProviderSet;
use crate::graph::{build_graph, GraphError, GraphOptions, HeteroGraph};
use crate::han::HanConfig;
use crate::model::ModelConfig;
use crate::text::STOPWORDS;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub ngram_caps: NgramCaps,
    /// Filter unigrams through the bundled stopword list.
    pub remove_stopwords: bool,
    pub clusters: usize,
    pub cluster_max_iters: usize,
    pub dedup: DedupOptions,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            ngram_caps: NgramCaps::default(),
            remove_stopwords: true,
            clusters: 100,
            cluster_max_iters: 100,
            dedup: DedupOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub text_dim: usize,
    pub text_seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { text_dim: 64, text_seed: 0 }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> ProviderSet {
        ProviderSet::hashing(self.text_dim, self.text_seed)
    }
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub providers: ProviderConfig,
    pub graph: GraphOptions,
    pub han: HanConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Small dimensions and from-scratch learning rates that memorize a
    /// few dozen synthetic records on one CPU core in minutes.
    pub fn toy() -> Self {
        Self {
            seed: 7,
            corpus: CorpusConfig {
                ngram_caps: NgramCaps::uniform(50),
                clusters: 4,
                cluster_max_iters: 50,
                ..CorpusConfig::default()
            },
            providers: ProviderConfig { text_dim: 16, text_seed: 0 },
            graph: GraphOptions::default(),
            han: HanConfig {
                heads: 2,
                head_dim: 8,
                hidden: 16,
                layers: 2,
                semantic_dim: 16,
                ..HanConfig::default()
            },
            model: ModelConfig {
                d_model: 32,
                heads: 2,
                ffn_mult: 2,
                vision_blocks: 1,
                text_blocks: 1,
                fusion_blocks: 1,
                decoder_blocks: 1,
                patch_size: 16,
                max_caption_len: 16,
                field_max_tokens: 4,
                min_freq: 1,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                warmup_iters: 20,
                peak_lr: crate::train::GroupRates {
                    vision: 5e-3,
                    graph: 1e-2,
                    other: 1e-2,
                },
                final_lr: 1e-4,
                epochs: 300,
                batch_size: 4,
                ..TrainConfig::default()
            },
        }
    }

    /// Tiny dimensions for finite-difference gradient checks of the whole
    /// training loss: a 2-layer graph encoder and one block per stack.
    pub fn miniature() -> Self {
        let toy = Self::toy();
        Self {
            corpus: CorpusConfig {
                ngram_caps: NgramCaps::uniform(6),
                clusters: 2,
                ..toy.corpus
            },
            providers: ProviderConfig { text_dim: 6, text_seed: 1 },
            han: HanConfig {
                heads: 1,
                head_dim: 3,
                hidden: 3,
                layers: 2,
                semantic_dim: 2,
                ngram_slots: 2,
                ..HanConfig::default()
            },
            model: ModelConfig {
                d_model: 4,
                heads: 2,
                patch_size: 32,
                max_caption_len: 6,
                field_max_tokens: 2,
                ..toy.model
            },
            train: TrainConfig {
                epochs: 1,
                batch_size: 2,
                ..toy.train
            },
            ..toy
        }
    }

    /// Canonical TOML form; identical configurations give identical text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.han.validate().map_err(|e| inv(&e))?;
        self.model.validate().map_err(|e| inv(&e))?;
        self.train.validate().map_err(|e| inv(&e))?;
        if self.corpus.clusters == 0 {
            return Err(ConfigError::Invalid("corpus.clusters must be at least 1".into()));
        }
        if self.providers.text_dim == 0 {
            return Err(ConfigError::Invalid("providers.text_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Intermediate products of graph construction.
#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: HeteroGraph,
    pub ngrams: NgramVocab,
    pub clustering: TitleClustering,
}

/// n-gram extraction, title clustering and graph assembly. When the corpus
/// has fewer distinct titles than `clusters`, k shrinks to that count.
pub fn build_corpus_graph(
    records: &[ArtworkRecord],
    cfg: &RunConfig,
    providers: &ProviderSet,
) -> Result<BuiltGraph, PipelineError> {
    let titles: Vec<&str> = records.iter().map(|r| r.title.as_str()).collect();
    let stop = cfg.corpus.remove_stopwords.then_some(STOPWORDS);
    let ngrams = extract_ngrams(&titles, cfg.corpus.ngram_caps, stop)?;
    let emb: Vec<(String, Vec<f64>)> = records.iter().map(|r| (r.id.clone(), providers.text.embed(&r.title))).collect();
    let opts = |k| ClusterOptions {
        k,
        seed: cfg.seed,
        max_iters: cfg.corpus.cluster_max_iters,
    };
    let clustering = match cluster_titles(&emb, opts(cfg.corpus.clusters)) {
        Err(CorpusError::TooFewPoints { k, distinct }) if distinct > 0 => {
            log::warn!("only {distinct} distinct title embeddings; using {distinct} clusters instead of {k}");
            cluster_titles(&emb, opts(distinct))?
        }
        other => other?,
    };
    let graph = build_graph(records, &ngrams, &clustering, providers, &cfg.graph)?;
    Ok(BuiltGraph {
        graph,
        ngrams,
        clustering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::synthetic_corpus;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn presets_are_valid() {
        let toy = RunConfig::toy();
        assert_eq!(RunConfig::from_toml(&toy.to_toml()).unwrap(), toy);
        let mini = RunConfig::miniature();
        assert_eq!(RunConfig::from_toml(&mini.to_toml()).unwrap(), mini);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sede = 1"), Err(ConfigError::Parse(_))));
        assert!(RunConfig::from_toml("[train]\nbeta2 = 0.1").is_err());
        assert!(RunConfig::from_toml("[model]\nd_model = 16\nheads = 4\n").is_ok());
    }

    #[test]
    fn semantic_errors_are_reported() {
        assert!(matches!(RunConfig::from_toml("[train]\nbeta = 1.5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml("[han]\nhidden = 7"), Err(ConfigError::Invalid(_))));
        assert!(RunConfig::from_toml("[corpus]\nclusters = 0").is_err());
    }

    #[test]
    fn pipeline_shrinks_cluster_count() {
        let records = synthetic_corpus(8, 1);
        let cfg = RunConfig::default();
        let built = build_corpus_graph(&records, &cfg, &cfg.providers.build()).unwrap();
        assert!(built.clustering.k <= 8);
        assert_eq!(built.graph.count(crate::graph::NodeType::Artwork), 8);
    }
}
