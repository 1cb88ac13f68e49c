//! The two-module recommendation model.
//!
//! One-hop side: a transformer-style news encoder over title tokens and
//! topics, attention pooling of clicked news, and a user ID embedding.
//! Two-hop side: attentive aggregation of graph-neighbor user IDs,
//! neighbor news IDs, and neighbor news content. Both sides concatenate
//! into user and news vectors, are projected to a common dimension, and
//! score by inner product.

pub mod attention;
pub mod news;
pub mod one_hop;
pub mod scoring;
pub mod two_hop;

#[cfg(test)]
mod tests;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::NewsTable;
use crate::error::Result;
use crate::graph::NeighborTables;
use crate::rng::{chacha, subseed, TAG_INIT};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor};

use attention::StagedAttn;

/// Corpus-derived sizes the parameter shapes depend on.
#[derive(Clone, Copy, Debug)]
pub struct CorpusSizes {
    pub vocab: usize,
    pub topics: usize,
    /// Users indexed in training (the reserved cold row is added here).
    pub users: usize,
    /// News in the corpus (the reserved padding row is added here).
    pub news: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnParamIds {
    pub w: ParamId,
    pub b: ParamId,
    pub q: ParamId,
}

/// Handles of every parameter group. Groups removed by a drop ablation
/// are absent and the projection widths shrink accordingly.
pub struct ParamIds {
    pub word_emb: ParamId,
    pub self_w_s: Vec<ParamId>,
    pub self_w_v: Vec<ParamId>,
    pub word_attn: AttnParamIds,
    pub topic_emb: ParamId,
    pub clicked_attn: AttnParamIds,
    pub user_id_emb: ParamId,
    pub news_id_emb: Option<ParamId>,
    pub nbr_user_attn: Option<AttnParamIds>,
    pub nbr_news_id_attn: Option<AttnParamIds>,
    pub nbr_news_sem_attn: Option<AttnParamIds>,
    pub proj_user_w: ParamId,
    pub proj_user_b: ParamId,
    pub proj_news_w: ParamId,
    pub proj_news_b: ParamId,
}

/// All trainable state plus the configuration it was built for.
pub struct ModelParams<F: Real> {
    pub cfg: ModelConfig,
    pub sizes: CorpusSizes,
    pub store: ParamStore<F>,
    pub ids: ParamIds,
}

fn uniform<F: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<F> {
    (0..n).map(|_| F::from_f64(rng.gen_range(-0.1..0.1))).collect()
}

impl<F: Real> ModelParams<F> {
    /// Initializes every parameter from uniform(−0.1, 0.1) in a fixed
    /// order, optionally seeding the word embeddings from a pretrained
    /// matrix (its PAD row already zero). Row 0 of both ID matrices is
    /// frozen at zero for padding and cold-start lookups.
    pub fn init(
        cfg: &ModelConfig,
        sizes: CorpusSizes,
        seed: u64,
        pretrained_words: Option<Vec<F>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = chacha(subseed(seed, TAG_INIT, 0));
        let mut store = ParamStore::new();
        let wd = cfg.word_dim;
        let a = cfg.attn_hidden;
        let nd = cfg.news_dim();
        let q = cfg.id_dim;

        let word_emb = match pretrained_words {
            Some(m) => {
                assert_eq!(m.len(), sizes.vocab * wd);
                store.add("word_emb", sizes.vocab, wd, m)
            }
            None => {
                let mut m = uniform::<F>(&mut rng, sizes.vocab * wd);
                for v in &mut m[..wd] {
                    *v = F::zero(); // PAD row
                }
                store.add("word_emb", sizes.vocab, wd, m)
            }
        };

        let mut self_w_s = Vec::with_capacity(cfg.heads);
        let mut self_w_v = Vec::with_capacity(cfg.heads);
        for k in 0..cfg.heads {
            self_w_s.push(store.add(&format!("news.self_attn.w_s.{k}"), wd, wd, uniform(&mut rng, wd * wd)));
        }
        for k in 0..cfg.heads {
            self_w_v.push(store.add(
                &format!("news.self_attn.w_v.{k}"),
                wd,
                cfg.head_dim(),
                uniform(&mut rng, wd * cfg.head_dim()),
            ));
        }

        let attn = |store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, prefix: &str, in_dim: usize| AttnParamIds {
            w: store.add(&format!("{prefix}.w"), in_dim, a, uniform(rng, in_dim * a)),
            b: store.add(&format!("{prefix}.b"), 1, a, uniform(rng, a)),
            q: store.add(&format!("{prefix}.q"), a, 1, uniform(rng, a)),
        };

        let word_attn = attn(&mut store, &mut rng, "news.word_attn", cfg.attn_out_dim);
        let topic_emb = store.add("topic_emb", sizes.topics.max(1), cfg.topic_dim, uniform(&mut rng, sizes.topics.max(1) * cfg.topic_dim));
        let clicked_attn = attn(&mut store, &mut rng, "user.clicked_attn", nd);

        let user_id_emb = store.add("user_id_emb", sizes.users + 1, q, uniform(&mut rng, (sizes.users + 1) * q));
        store.freeze_row(user_id_emb, 0);

        let ab = cfg.ablation;
        let news_id_emb = if ab.drop_neighbor_news_id {
            None
        } else {
            let id = store.add("news_id_emb", sizes.news + 1, q, uniform(&mut rng, (sizes.news + 1) * q));
            store.freeze_row(id, 0);
            Some(id)
        };
        let nbr_user_attn =
            (!ab.drop_neighbor_user).then(|| attn(&mut store, &mut rng, "two_hop.user_attn", q));
        let nbr_news_id_attn = (!ab.drop_neighbor_news_id)
            .then(|| attn(&mut store, &mut rng, "two_hop.news_id_attn", q));
        let nbr_news_sem_attn = (!ab.drop_neighbor_news_sem)
            .then(|| attn(&mut store, &mut rng, "two_hop.news_sem_attn", nd));

        let (ud, ndim, d) = (cfg.user_concat_dim(), cfg.news_concat_dim(), cfg.common_dim);
        let proj_user_w = store.add("proj.user.w", ud, d, uniform(&mut rng, ud * d));
        let proj_user_b = store.add("proj.user.b", 1, d, uniform(&mut rng, d));
        let proj_news_w = store.add("proj.news.w", ndim, d, uniform(&mut rng, ndim * d));
        let proj_news_b = store.add("proj.news.b", 1, d, uniform(&mut rng, d));

        Ok(ModelParams {
            cfg: cfg.clone(),
            sizes,
            store,
            ids: ParamIds {
                word_emb,
                self_w_s,
                self_w_v,
                word_attn,
                topic_emb,
                clicked_attn,
                user_id_emb,
                news_id_emb,
                nbr_user_attn,
                nbr_news_id_attn,
                nbr_news_sem_attn,
                proj_user_w,
                proj_user_b,
                proj_news_w,
                proj_news_b,
            },
        })
    }
}

/// Recovers the parameter-handle table of a store laid out by
/// [`ModelParams::init`] (used when rebuilding a model around a
/// perturbed or checkpoint-loaded store).
pub fn rebuild_param_ids<F: Real>(cfg: &ModelConfig, store: &ParamStore<F>) -> ParamIds {
    let g = |name: &str| store.by_name(name).unwrap_or_else(|| panic!("missing param {name}"));
    let attn = |prefix: &str| AttnParamIds {
        w: g(&format!("{prefix}.w")),
        b: g(&format!("{prefix}.b")),
        q: g(&format!("{prefix}.q")),
    };
    ParamIds {
        word_emb: g("word_emb"),
        self_w_s: (0..cfg.heads).map(|k| g(&format!("news.self_attn.w_s.{k}"))).collect(),
        self_w_v: (0..cfg.heads).map(|k| g(&format!("news.self_attn.w_v.{k}"))).collect(),
        word_attn: attn("news.word_attn"),
        topic_emb: g("topic_emb"),
        clicked_attn: attn("user.clicked_attn"),
        user_id_emb: g("user_id_emb"),
        news_id_emb: store.by_name("news_id_emb"),
        nbr_user_attn: store.by_name("two_hop.user_attn.w").map(|_| attn("two_hop.user_attn")),
        nbr_news_id_attn: store
            .by_name("two_hop.news_id_attn.w")
            .map(|_| attn("two_hop.news_id_attn")),
        nbr_news_sem_attn: store
            .by_name("two_hop.news_sem_attn.w")
            .map(|_| attn("two_hop.news_sem_attn")),
        proj_user_w: g("proj.user.w"),
        proj_user_b: g("proj.user.b"),
        proj_news_w: g("proj.news.w"),
        proj_news_b: g("proj.news.b"),
    }
}

/// Attention sites, for weight-normalization checks and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttnSite {
    SelfAttn,
    WordAttn,
    ClickedNews,
    NeighborUser,
    NeighborNewsId,
    NeighborNewsSem,
}

/// Recorded attention distributions (weights plus validity mask).
#[derive(Default)]
pub struct AttnTrace {
    pub entries: Vec<(AttnSite, Vec<f64>, Vec<bool>)>,
}

pub(crate) struct Staged<F: Real> {
    pub word_emb: Tensor<F>,
    pub w_s: Vec<Tensor<F>>,
    pub w_v: Vec<Tensor<F>>,
    pub word_attn: StagedAttn<F>,
    pub topic_emb: Tensor<F>,
    pub clicked_attn: StagedAttn<F>,
    pub user_id_emb: Tensor<F>,
    pub news_id_emb: Option<Tensor<F>>,
    pub nbr_user_attn: Option<StagedAttn<F>>,
    pub nbr_news_id_attn: Option<StagedAttn<F>>,
    pub nbr_news_sem_attn: Option<StagedAttn<F>>,
    pub proj_user_w: Tensor<F>,
    pub proj_user_b: Tensor<F>,
    pub proj_news_w: Tensor<F>,
    pub proj_news_b: Tensor<F>,
}

fn stage_attn<F: Real>(tape: &Tape<F>, store: &ParamStore<F>, ids: AttnParamIds) -> StagedAttn<F> {
    StagedAttn { w: tape.param(store, ids.w), b: tape.param(store, ids.b), q: tape.param(store, ids.q) }
}

/// One forward pass over a single tape: encodes news and users,
/// memoizes per-news work, and owns the dropout stream.
pub struct Forward<'a, F: Real> {
    pub tape: Tape<F>,
    pub params: &'a ModelParams<F>,
    pub news: &'a NewsTable,
    pub tables: &'a NeighborTables,
    pub training: bool,
    pub trace: Option<AttnTrace>,
    rng: ChaCha8Rng,
    staged: Staged<F>,
    enc_cache: HashMap<u32, Tensor<F>>,
    vec_cache: HashMap<u32, Tensor<F>>,
    injected: Option<&'a HashMap<u32, Arc<Vec<F>>>>,
}

impl<'a, F: Real> Forward<'a, F> {
    pub fn new(
        params: &'a ModelParams<F>,
        news: &'a NewsTable,
        tables: &'a NeighborTables,
        training: bool,
        dropout_seed: u64,
    ) -> Self {
        Self::on_tape(Tape::new(), params, news, tables, training, dropout_seed)
    }

    /// Builds the forward pass on an existing tape (gradient checking
    /// records the loss on the caller's tape).
    pub fn on_tape(
        tape: Tape<F>,
        params: &'a ModelParams<F>,
        news: &'a NewsTable,
        tables: &'a NeighborTables,
        training: bool,
        dropout_seed: u64,
    ) -> Self {
        let store = &params.store;
        let ids = &params.ids;
        let staged = Staged {
            word_emb: tape.param(store, ids.word_emb),
            w_s: ids.self_w_s.iter().map(|&p| tape.param(store, p)).collect(),
            w_v: ids.self_w_v.iter().map(|&p| tape.param(store, p)).collect(),
            word_attn: stage_attn(&tape, store, ids.word_attn),
            topic_emb: tape.param(store, ids.topic_emb),
            clicked_attn: stage_attn(&tape, store, ids.clicked_attn),
            user_id_emb: tape.param(store, ids.user_id_emb),
            news_id_emb: ids.news_id_emb.map(|p| tape.param(store, p)),
            nbr_user_attn: ids.nbr_user_attn.map(|a| stage_attn(&tape, store, a)),
            nbr_news_id_attn: ids.nbr_news_id_attn.map(|a| stage_attn(&tape, store, a)),
            nbr_news_sem_attn: ids.nbr_news_sem_attn.map(|a| stage_attn(&tape, store, a)),
            proj_user_w: tape.param(store, ids.proj_user_w),
            proj_user_b: tape.param(store, ids.proj_user_b),
            proj_news_w: tape.param(store, ids.proj_news_w),
            proj_news_b: tape.param(store, ids.proj_news_b),
        };
        Forward {
            tape,
            params,
            news,
            tables,
            training,
            trace: None,
            rng: chacha(dropout_seed),
            staged,
            enc_cache: HashMap::new(),
            vec_cache: HashMap::new(),
            injected: None,
        }
    }

    /// Serves news encodings from a precomputed value cache instead of
    /// re-encoding (evaluation fast path; the cached values are exactly
    /// what `encode_news` would produce with dropout off).
    pub fn with_injected(mut self, cache: &'a HashMap<u32, Arc<Vec<F>>>) -> Self {
        self.injected = Some(cache);
        self
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(AttnTrace::default());
    }

    pub(crate) fn staged(&self) -> &Staged<F> {
        &self.staged
    }

    /// Applies the configured dropout in training mode.
    pub(crate) fn dropped(&mut self, t: Tensor<F>) -> Result<Tensor<F>> {
        let rate = self.params.cfg.dropout;
        t.dropout(rate, self.training, &mut self.rng)
    }

    pub(crate) fn record_attn(&mut self, site: AttnSite, weights: &Tensor<F>, mask: &[bool]) {
        if let Some(trace) = &mut self.trace {
            let w: Vec<f64> = weights.to_vec().iter().map(|v| v.as_f64()).collect();
            trace.entries.push((site, w, mask.to_vec()));
        }
    }

    pub(crate) fn injected_encoding(&self, idx: u32) -> Option<Tensor<F>> {
        let cache = self.injected?;
        let values = cache.get(&idx)?;
        Some(self.tape.constant_shared(1, self.params.cfg.news_dim(), Arc::clone(values)))
    }

    pub(crate) fn cached_encoding(&self, idx: u32) -> Option<Tensor<F>> {
        self.enc_cache.get(&idx).cloned()
    }

    pub(crate) fn cache_encoding(&mut self, idx: u32, t: Tensor<F>) {
        self.enc_cache.insert(idx, t);
    }

    pub(crate) fn cached_news_vector(&self, idx: u32) -> Option<Tensor<F>> {
        self.vec_cache.get(&idx).cloned()
    }

    pub(crate) fn cache_news_vector(&mut self, idx: u32, t: Tensor<F>) {
        self.vec_cache.insert(idx, t);
    }
}
