//! Run configuration: model hyperparameters, ablation switches, data
//! split settings, seed, and numeric precision. Serialized verbatim
//! into run manifests and checkpoint sidecars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which components to remove or replace with average pooling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Drop the neighbor-user representation from the user vector.
    pub drop_neighbor_user: bool,
    /// Drop the neighbor-news ID representation from the news vector.
    pub drop_neighbor_news_id: bool,
    /// Drop the neighbor-news semantic representation from the news vector.
    pub drop_neighbor_news_sem: bool,
    /// Replace word-level self-attention weights with a uniform mean.
    pub avgpool_self: bool,
    /// Replace the word attention pooling with a uniform mean.
    pub avgpool_word: bool,
    /// Replace the clicked-news attention with a uniform mean.
    pub avgpool_onehop: bool,
    /// Replace all neighbor attentions with uniform means.
    pub avgpool_twohop: bool,
}

impl Ablation {
    /// True when the whole two-hop side is removed.
    pub fn two_hop_dropped(&self) -> bool {
        self.drop_neighbor_user && self.drop_neighbor_news_id && self.drop_neighbor_news_sem
    }

    /// Applies one named CLI switch.
    pub fn apply(&mut self, name: &str) -> Result<()> {
        match name {
            "no-two-hop" => {
                self.drop_neighbor_user = true;
                self.drop_neighbor_news_id = true;
                self.drop_neighbor_news_sem = true;
            }
            "no-neighbor-user" => self.drop_neighbor_user = true,
            "no-neighbor-news-id" => self.drop_neighbor_news_id = true,
            "no-neighbor-news-sem" => self.drop_neighbor_news_sem = true,
            "avgpool-self" => self.avgpool_self = true,
            "avgpool-word" => self.avgpool_word = true,
            "avgpool-onehop" => self.avgpool_onehop = true,
            "avgpool-twohop" => self.avgpool_twohop = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?} (expected one of no-two-hop, no-neighbor-user, \
                     no-neighbor-news-id, no-neighbor-news-sem, avgpool-self, avgpool-word, \
                     avgpool-onehop, avgpool-twohop)"
                )))
            }
        }
        Ok(())
    }
}

/// Model and optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Max title length M.
    pub title_len: usize,
    /// Max clicked-news history K.
    pub max_history: usize,
    /// Neighbor count D per graph node.
    pub neighbors: usize,
    /// Self-attention head count N.
    pub heads: usize,
    /// Concatenated self-attention output width (N heads of
    /// `attn_out_dim / heads` each).
    pub attn_out_dim: usize,
    pub word_dim: usize,
    pub topic_dim: usize,
    /// ID embedding width Q.
    pub id_dim: usize,
    /// Hidden width of the additive attention networks.
    pub attn_hidden: usize,
    /// Common dimension d both sides are projected to before the dot
    /// product.
    pub common_dim: usize,
    /// Negative samples per positive.
    pub neg_ratio: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            title_len: 30,
            max_history: 50,
            neighbors: 15,
            heads: 8,
            attn_out_dim: 128,
            word_dim: 300,
            topic_dim: 128,
            id_dim: 128,
            attn_hidden: 128,
            common_dim: 128,
            neg_ratio: 4,
            dropout: 0.2,
            batch_size: 128,
            learning_rate: 1e-3,
            epochs: 10,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("title_len", self.title_len),
            ("max_history", self.max_history),
            ("neighbors", self.neighbors),
            ("heads", self.heads),
            ("attn_out_dim", self.attn_out_dim),
            ("word_dim", self.word_dim),
            ("topic_dim", self.topic_dim),
            ("id_dim", self.id_dim),
            ("attn_hidden", self.attn_hidden),
            ("common_dim", self.common_dim),
            ("neg_ratio", self.neg_ratio),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.attn_out_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads ({}) must divide the self-attention output dimension ({}): \
                 the per-head dimension would not be integral",
                self.heads, self.attn_out_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.attn_out_dim / self.heads
    }

    /// Width of one encoded news vector: title part plus topic part.
    pub fn news_dim(&self) -> usize {
        self.attn_out_dim + self.topic_dim
    }

    /// Width of the concatenated user vector under the active ablation.
    pub fn user_concat_dim(&self) -> usize {
        let mut d = self.news_dim() + self.id_dim;
        if !self.ablation.drop_neighbor_user {
            d += self.id_dim;
        }
        d
    }

    /// Width of the concatenated news vector under the active ablation.
    pub fn news_concat_dim(&self) -> usize {
        let mut d = self.news_dim();
        if !self.ablation.drop_neighbor_news_sem {
            d += self.news_dim();
        }
        if !self.ablation.drop_neighbor_news_id {
            d += self.id_dim;
        }
        d
    }
}

/// Data split settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Epoch-seconds boundary: impressions at or after it form the test
    /// split. When absent it is resolved to `test_span_fraction` of the
    /// observed time range and written back into the manifest.
    pub test_start: Option<i64>,
    /// Position of the automatic test boundary within [min, max].
    pub test_span_fraction: f64,
    /// Fraction of pre-boundary impressions held out for validation.
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { test_start: None, test_span_fraction: 0.75, val_fraction: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

/// Everything a run needs to be reproduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            seed: 0,
            precision: Precision::F32,
        }
    }
}
