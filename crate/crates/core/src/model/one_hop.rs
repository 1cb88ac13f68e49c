//! One-hop interaction learning: the candidate's own content vector,
//! the user's attention-pooled clicked-news vector, and the user's ID
//! embedding.

use crate::error::Result;
use crate::tensor::{Real, Tensor};

use super::attention::attend;
use super::{AttnSite, Forward};

impl<'a, F: Real> Forward<'a, F> {
    /// Candidate news content representation (delegates to the news
    /// encoder).
    pub fn candidate_semantic(&mut self, idx: u32) -> Result<Tensor<F>> {
        self.encode_news(idx)
    }

    /// Attention-pooled clicked-news vector. An empty history is the
    /// cold-start case and yields the zero vector.
    pub fn user_semantic(&mut self, history: &[u32]) -> Result<Tensor<F>> {
        if history.is_empty() {
            return Ok(self.tape.zeros(1, self.params.cfg.news_dim()));
        }
        let encoded: Vec<Tensor<F>> =
            history.iter().map(|&n| self.encode_news(n)).collect::<Result<_>>()?;
        let stack = self.tape.concat_rows(&encoded)?;
        let mask = vec![true; history.len()];
        let avg = self.params.cfg.ablation.avgpool_onehop;
        let (pooled, weights) = {
            let attn = (!avg).then(|| &self.staged().clicked_attn);
            attend(&stack, &mask, attn)?
        };
        self.record_attn(AttnSite::ClickedNews, &weights, &mask);
        Ok(pooled)
    }

    /// User ID embedding lookup (row 0 is the frozen zero row for
    /// users unseen in training) with dropout in training mode.
    pub fn user_id_repr(&mut self, uid: u32) -> Result<Tensor<F>> {
        let row = self.staged().user_id_emb.gather(&[uid as usize])?;
        self.dropped(row)
    }
}
