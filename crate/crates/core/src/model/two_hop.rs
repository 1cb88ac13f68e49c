//! Two-hop graph learning: attentive aggregation of neighbor-user IDs
//! (shared user embedding matrix), neighbor-news IDs, and neighbor-news
//! content (shared news encoder). Fully padded neighbor rows are the
//! cold-start case and yield zero vectors.

use crate::error::Result;
use crate::graph::NeighborRow;
use crate::tensor::{Real, Tensor};

use super::attention::attend;
use super::{AttnSite, Forward};

impl<'a, F: Real> Forward<'a, F> {
    /// Neighbor-user ID representation for one user's neighbor row.
    pub fn neighbor_user_repr(&mut self, row: &NeighborRow) -> Result<Tensor<F>> {
        if row.n_valid() == 0 {
            return Ok(self.tape.zeros(1, self.params.cfg.id_dim));
        }
        let ids: Vec<usize> = row.ids.iter().map(|&i| i as usize).collect();
        let gathered = self.staged().user_id_emb.gather(&ids)?;
        let gathered = self.dropped(gathered)?;
        let avg = self.params.cfg.ablation.avgpool_twohop;
        let (pooled, weights) = {
            let attn = (!avg).then(|| self.staged().nbr_user_attn.as_ref().expect("neighbor-user params present"));
            attend(&gathered, &row.mask, attn)?
        };
        self.record_attn(AttnSite::NeighborUser, &weights, &row.mask);
        Ok(pooled)
    }

    /// Neighbor-news ID representation for one news' neighbor row.
    pub fn neighbor_news_id_repr(&mut self, row: &NeighborRow) -> Result<Tensor<F>> {
        if row.n_valid() == 0 {
            return Ok(self.tape.zeros(1, self.params.cfg.id_dim));
        }
        let ids: Vec<usize> = row.ids.iter().map(|&i| i as usize).collect();
        let table = self.staged().news_id_emb.as_ref().expect("news-id params present").clone();
        let gathered = table.gather(&ids)?;
        let gathered = self.dropped(gathered)?;
        let avg = self.params.cfg.ablation.avgpool_twohop;
        let (pooled, weights) = {
            let attn = (!avg).then(|| self.staged().nbr_news_id_attn.as_ref().expect("neighbor-news-id params present"));
            attend(&gathered, &row.mask, attn)?
        };
        self.record_attn(AttnSite::NeighborNewsId, &weights, &row.mask);
        Ok(pooled)
    }

    /// Neighbor-news content representation: encode each valid
    /// neighbor with the shared news encoder, then pool attentively.
    /// Padded slots contribute zero rows and zero weight.
    pub fn neighbor_news_sem_repr(&mut self, row: &NeighborRow) -> Result<Tensor<F>> {
        let nd = self.params.cfg.news_dim();
        if row.n_valid() == 0 {
            return Ok(self.tape.zeros(1, nd));
        }
        let mut rows = Vec::with_capacity(row.ids.len());
        for (&id, &valid) in row.ids.iter().zip(&row.mask) {
            if valid {
                rows.push(self.encode_news(id)?);
            } else {
                rows.push(self.tape.zeros(1, nd));
            }
        }
        let stack = self.tape.concat_rows(&rows)?;
        let avg = self.params.cfg.ablation.avgpool_twohop;
        let (pooled, weights) = {
            let attn = (!avg).then(|| self.staged().nbr_news_sem_attn.as_ref().expect("neighbor-news-sem params present"));
            attend(&stack, &row.mask, attn)?
        };
        self.record_attn(AttnSite::NeighborNewsSem, &weights, &row.mask);
        Ok(pooled)
    }
}
