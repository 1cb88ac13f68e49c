//! News encoder: word embeddings, single-layer multi-head
//! self-attention over the title, additive word attention, and a topic
//! embedding concatenated onto the pooled title vector. There is no
//! positional encoding; word order enters only through attention
//! content.

use crate::data::NewsArticle;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::attention::attend;
use super::{AttnSite, Forward};

impl<'a, F: Real> Forward<'a, F> {
    /// Encodes a news article into its 1×(title+topic) vector. The
    /// result is memoized per tape; evaluation may serve it from an
    /// injected value cache instead.
    pub fn encode_news(&mut self, idx: u32) -> Result<Tensor<F>> {
        if let Some(t) = self.cached_encoding(idx) {
            return Ok(t);
        }
        if let Some(t) = self.injected_encoding(idx) {
            self.cache_encoding(idx, t.clone());
            return Ok(t);
        }
        let article = self.news.article(idx);
        let t = self.encode_article(article)?;
        self.cache_encoding(idx, t.clone());
        Ok(t)
    }

    /// The full title+topic encoder for an arbitrary article.
    pub fn encode_article(&mut self, article: &NewsArticle) -> Result<Tensor<F>> {
        if article.n_tokens == 0 {
            return Err(Error::DegenerateRow { row: 0 });
        }
        let token_ids: Vec<usize> = article.tokens.iter().map(|&t| t as usize).collect();
        let embedded = self.staged().word_emb.gather(&token_ids)?;
        let contextual = self.self_attention(&embedded, &article.mask)?;
        let title_vec = self.word_attention(&contextual, &article.mask)?;
        let topic = self.staged().topic_emb.gather(&[article.topic as usize])?;
        self.tape.concat_cols(&[title_vec, topic])
    }

    /// Word-level multi-head self-attention. Per head: bilinear logits
    /// between word embeddings, masked softmax over valid positions,
    /// value projection; heads concatenate and dropout follows in
    /// training mode.
    pub fn self_attention(&mut self, embedded: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
        let m = embedded.rows();
        debug_assert_eq!(mask.len(), m);
        if !mask.iter().any(|&b| b) {
            return Err(Error::DegenerateRow { row: 0 });
        }
        // Every query row attends over the same valid key positions.
        let full_mask: Vec<bool> = (0..m).flat_map(|_| mask.iter().copied()).collect();

        let uniform = if self.params.cfg.ablation.avgpool_self {
            let n_valid = mask.iter().filter(|&&b| b).count();
            let w = F::from_f64(1.0 / n_valid as f64);
            let values: Vec<F> = full_mask.iter().map(|&b| if b { w } else { F::zero() }).collect();
            Some(self.tape.constant(m, m, values))
        } else {
            None
        };

        let mut heads = Vec::with_capacity(self.params.cfg.heads);
        for k in 0..self.params.cfg.heads {
            let alpha = match &uniform {
                Some(u) => u.clone(),
                None => {
                    let projected = embedded.matmul(&self.staged().w_s[k])?;
                    let logits = projected.matmul(&embedded.transpose())?;
                    logits.masked_softmax(&full_mask)?
                }
            };
            if self.trace.is_some() {
                let values = alpha.to_vec();
                for (i, &valid) in mask.iter().enumerate() {
                    if valid {
                        let row: Vec<F> = values[i * m..(i + 1) * m].to_vec();
                        let row_t = self.tape.constant(1, m, row);
                        self.record_attn(AttnSite::SelfAttn, &row_t, mask);
                    }
                }
            }
            let context = alpha.matmul(embedded)?;
            heads.push(context.matmul(&self.staged().w_v[k])?);
        }
        let concat = self.tape.concat_cols(&heads)?;
        self.dropped(concat)
    }

    /// Additive attention over contextual word vectors, pooling the
    /// title into a single vector.
    pub fn word_attention(&mut self, contextual: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
        if !mask.iter().any(|&b| b) {
            return Err(Error::DegenerateRow { row: 0 });
        }
        let avg = self.params.cfg.ablation.avgpool_word;
        let (pooled, weights) = {
            let attn = (!avg).then(|| &self.staged().word_attn);
            attend(contextual, mask, attn)?
        };
        self.record_attn(AttnSite::WordAttn, &weights, mask);
        Ok(pooled)
    }
}
