//! Mini-batch training: negative sampling, seeded shuffling, Adam
//! updates, per-epoch validation, and best-epoch retention.
//!
//! Every batch runs its samples on independent tapes (in parallel) and
//! sums the per-sample gradients in sample order, so results are
//! identical regardless of thread count.

pub mod adam;
pub mod checkpoint;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Impression, NewsTable, UserIndex};
use crate::error::{Error, Result};
use crate::graph::NeighborTables;
use crate::metrics::MetricReport;
use crate::model::{Forward, ModelParams};
use crate::rng::{chacha, subseed, TAG_DROPOUT, TAG_NEGATIVES, TAG_SHUFFLE};
use crate::tensor::{Gradients, Real};

use adam::Adam;

/// One positive candidate paired with λ sampled negatives.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub user: u32,
    pub history: Vec<u32>,
    pub pos: u32,
    pub negs: Vec<u32>,
}

/// Builds one sample per clicked candidate: λ negatives drawn uniformly
/// from the impression's unclicked candidates, without replacement when
/// enough exist and with replacement otherwise. Positives with no
/// negative available yield no sample (the trainer counts them).
pub fn sample_negatives(
    imp: &Impression,
    uid: u32,
    lambda: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TrainingSample> {
    let negatives: Vec<u32> =
        imp.candidates.iter().filter(|(_, l)| !l).map(|&(n, _)| n).collect();
    let mut samples = Vec::new();
    if negatives.is_empty() {
        return samples;
    }
    for &(pos, label) in &imp.candidates {
        if !label {
            continue;
        }
        let negs: Vec<u32> = if negatives.len() >= lambda {
            negatives.choose_multiple(rng, lambda).copied().collect()
        } else {
            (0..lambda).map(|_| *negatives.choose(rng).expect("nonempty")).collect()
        };
        samples.push(TrainingSample { user: uid, history: imp.history.clone(), pos, negs });
    }
    samples
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
    pub val_mrr: Option<f64>,
    pub val_ndcg5: Option<f64>,
    pub val_ndcg10: Option<f64>,
    pub wall_seconds: f64,
}

pub struct TrainOutcome<F: Real> {
    pub params: ModelParams<F>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were retained (best validation AUC, or
    /// the last epoch when there is no validation split).
    pub best_epoch: usize,
    /// Clicked candidates that could not be paired with any negative.
    pub skipped_positives: usize,
}

/// Runs the full training loop. `val_eval` scores the current
/// parameters on the validation split (or returns `None` when there is
/// no validation data); `on_epoch` receives each log record as it is
/// produced.
pub fn train<F: Real>(
    mut params: ModelParams<F>,
    news: &NewsTable,
    tables: &NeighborTables,
    train_split: &[Impression],
    users: &UserIndex,
    seed: u64,
    mut val_eval: impl FnMut(&ModelParams<F>) -> Result<Option<MetricReport>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>> {
    let cfg = params.cfg.clone();
    let mut optimizer = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<F>>)> = None;
    let mut skipped_positives = 0;
    let mut sample_counter: u64 = 0;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();

        let mut samples = Vec::new();
        for (i, imp) in train_split.iter().enumerate() {
            let mut r =
                chacha(subseed(seed, TAG_NEGATIVES, ((epoch as u64) << 32) | i as u64));
            let uid = users.lookup(&imp.user);
            let drawn = sample_negatives(imp, uid, cfg.neg_ratio, &mut r);
            skipped_positives += imp.n_positive() - drawn.len();
            samples.extend(drawn);
        }
        samples.shuffle(&mut chacha(subseed(seed, TAG_SHUFFLE, epoch as u64)));

        let mut epoch_loss = 0.0;
        let mut n_samples = 0usize;
        for (batch_idx, batch) in samples.chunks(cfg.batch_size).enumerate() {
            let seeds: Vec<u64> = (0..batch.len())
                .map(|j| subseed(seed, TAG_DROPOUT, sample_counter + j as u64))
                .collect();
            sample_counter += batch.len() as u64;

            let results: Vec<Result<(f64, Gradients<F>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, sample)| {
                    let mut fwd = Forward::new(&params, news, tables, true, seeds[j]);
                    let loss_t = fwd.sample_loss(sample)?;
                    let loss = loss_t.scalar()?.as_f64();
                    let grads = fwd.tape.backward(&loss_t, &params.store)?;
                    Ok((loss, grads))
                })
                .collect();

            // Batch gradient = sum of per-sample gradients, folded in
            // sample order.
            let mut batch_grads: Option<Gradients<F>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r.map_err(|e| {
                    Error::Runtime(format!(
                        "training failed at epoch {epoch}, batch {batch_idx}: {e}"
                    ))
                })?;
                batch_loss += loss;
                match &mut batch_grads {
                    Some(total) => total.merge(&grads),
                    None => batch_grads = Some(grads),
                }
            }
            let batch_grads = batch_grads.expect("non-empty batch");
            if !batch_loss.is_finite() || batch_grads.has_non_finite() {
                return Err(Error::Runtime(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx} \
                     (batch loss {batch_loss}, lr {}, batch size {}); aborting",
                    cfg.learning_rate,
                    batch.len()
                )));
            }
            optimizer.step(&mut params.store, &batch_grads);
            epoch_loss += batch_loss;
            n_samples += batch.len();
        }

        let val = val_eval(&params)?;
        let record = EpochRecord {
            epoch,
            train_loss: if n_samples > 0 { epoch_loss / n_samples as f64 } else { 0.0 },
            val_auc: val.as_ref().map(|m| m.auc),
            val_mrr: val.as_ref().map(|m| m.mrr),
            val_ndcg5: val.as_ref().map(|m| m.ndcg5),
            val_ndcg10: val.as_ref().map(|m| m.ndcg10),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);

        if let Some(report) = val {
            let better = match &best {
                Some((auc, _, _)) => report.auc > *auc,
                None => true,
            };
            if better {
                best = Some((report.auc, epoch, params.store.snapshot()));
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            params.store.restore(&snapshot);
            epoch
        }
        None => cfg.epochs.saturating_sub(1),
    };

    Ok(TrainOutcome { params, history, best_epoch, skipped_positives })
}
