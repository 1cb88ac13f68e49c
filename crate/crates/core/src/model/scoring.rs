//! Final assembly and the ranking objective: concatenate the per-side
//! components, project both sides to the common dimension with trainable
//! affine maps, score by inner product, and train against a
//! (1+λ)-way softmax over one positive and λ sampled negatives.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor};
use crate::train::TrainingSample;

use super::Forward;

/// `[u_semantic; u_id; u_neighbor?]` in that order.
pub fn assemble_user<F: Real>(
    tape: &Tape<F>,
    user_semantic: &Tensor<F>,
    user_id: &Tensor<F>,
    neighbor_users: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let mut parts = vec![user_semantic.clone(), user_id.clone()];
    if let Some(t) = neighbor_users {
        parts.push(t.clone());
    }
    concat_checked(tape, &parts, "assemble_user")
}

/// `[neighbor_semantic?; neighbor_id?; own_semantic]` in that order.
pub fn assemble_news<F: Real>(
    tape: &Tape<F>,
    neighbor_semantic: Option<&Tensor<F>>,
    neighbor_id: Option<&Tensor<F>>,
    own_semantic: &Tensor<F>,
) -> Result<Tensor<F>> {
    let mut parts = Vec::new();
    if let Some(t) = neighbor_semantic {
        parts.push(t.clone());
    }
    if let Some(t) = neighbor_id {
        parts.push(t.clone());
    }
    parts.push(own_semantic.clone());
    concat_checked(tape, &parts, "assemble_news")
}

fn concat_checked<F: Real>(tape: &Tape<F>, parts: &[Tensor<F>], what: &str) -> Result<Tensor<F>> {
    for p in parts {
        if p.rows() != 1 {
            return Err(Error::Contract(format!(
                "{what}: every component must be a row vector, got {:?}",
                p.shape()
            )));
        }
    }
    tape.concat_cols(parts)
}

/// Inner product of two projected vectors; both sides must already be
/// in the common dimension.
pub fn score<F: Real>(user: &Tensor<F>, news: &Tensor<F>) -> Result<Tensor<F>> {
    if user.rows() != 1 || news.rows() != 1 || user.cols() != news.cols() {
        return Err(Error::Contract(format!(
            "score expects equal projected dimensions, got {:?} and {:?}",
            user.shape(),
            news.shape()
        )));
    }
    user.dot(news)
}

/// −log softmax(positive | positive ∪ negatives), computed as
/// logsumexp(scores) − positive for stability. Exactly λ negative
/// scores are required.
pub fn nce_loss<F: Real>(
    positive: &Tensor<F>,
    negatives: &[Tensor<F>],
    lambda: usize,
) -> Result<Tensor<F>> {
    if negatives.len() != lambda {
        return Err(Error::Contract(format!(
            "nce_loss expects exactly {lambda} negative scores, got {}",
            negatives.len()
        )));
    }
    let mut all = Vec::with_capacity(lambda + 1);
    all.push(positive.clone());
    all.extend(negatives.iter().cloned());
    for s in &all {
        if s.len() != 1 {
            return Err(Error::Contract(format!("scores must be scalars, got {:?}", s.shape())));
        }
    }
    let row = positive.tape().concat_cols(&all)?;
    row.log_sum_exp().sub(positive)
}

impl<'a, F: Real> Forward<'a, F> {
    /// Full user vector in the common dimension.
    pub fn user_vector(&mut self, uid: u32, history: &[u32]) -> Result<Tensor<F>> {
        let semantic = self.user_semantic(history)?;
        let id = self.user_id_repr(uid)?;
        let neighbor = if self.params.cfg.ablation.drop_neighbor_user {
            None
        } else {
            let row = self.tables.user_row(uid);
            Some(self.neighbor_user_repr(&row)?)
        };
        let assembled = assemble_user(&self.tape, &semantic, &id, neighbor.as_ref())?;
        let projected =
            assembled.matmul(&self.staged().proj_user_w)?.add_row(&self.staged().proj_user_b)?;
        Ok(projected)
    }

    /// Full news vector in the common dimension, memoized per tape.
    pub fn news_vector(&mut self, idx: u32) -> Result<Tensor<F>> {
        if let Some(t) = self.cached_news_vector(idx) {
            return Ok(t);
        }
        let ablation = self.params.cfg.ablation;
        let row = self.tables.news_row(idx);
        let neighbor_sem = if ablation.drop_neighbor_news_sem {
            None
        } else {
            Some(self.neighbor_news_sem_repr(&row)?)
        };
        let neighbor_id = if ablation.drop_neighbor_news_id {
            None
        } else {
            Some(self.neighbor_news_id_repr(&row)?)
        };
        let own = self.encode_news(idx)?;
        let assembled =
            assemble_news(&self.tape, neighbor_sem.as_ref(), neighbor_id.as_ref(), &own)?;
        let projected =
            assembled.matmul(&self.staged().proj_news_w)?.add_row(&self.staged().proj_news_b)?;
        self.cache_news_vector(idx, projected.clone());
        Ok(projected)
    }

    /// Ranking score for one (user, news) pair.
    pub fn score_pair(&mut self, uid: u32, history: &[u32], news: u32) -> Result<Tensor<F>> {
        let u = self.user_vector(uid, history)?;
        let n = self.news_vector(news)?;
        score(&u, &n)
    }

    /// Per-sample training loss.
    pub fn sample_loss(&mut self, sample: &TrainingSample) -> Result<Tensor<F>> {
        let user = self.user_vector(sample.user, &sample.history)?;
        let pos_vec = self.news_vector(sample.pos)?;
        let positive = score(&user, &pos_vec)?;
        let mut negatives = Vec::with_capacity(sample.negs.len());
        for &n in &sample.negs {
            let vec = self.news_vector(n)?;
            negatives.push(score(&user, &vec)?);
        }
        nce_loss(&positive, &negatives, self.params.cfg.neg_ratio)
    }
}
