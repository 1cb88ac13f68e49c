//! Impression-level ranking metrics: AUC, MRR, nDCG@5 and nDCG@10,
//! averaged over impressions. Impressions whose candidates are all
//! positive or all negative are excluded from the averages and counted
//! separately. Ties rank by candidate order, and tied AUC pairs earn
//! half credit.

use serde::{Deserialize, Serialize};

/// Candidate order sorted by descending score, ties by original index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Pairwise ranking accuracy via the rank-sum (Mann-Whitney) formula
/// with average ranks for ties. `None` when the impression has only
/// one class.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }

    // Sort ascending by score; assign average ranks to tied groups.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of 1-based ranks i+1..=j
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Some((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Mean reciprocal rank, averaged over every positive candidate.
pub fn mrr(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    if !labels.iter().any(|&l| l) {
        return None;
    }
    let order = ranking(scores);
    let mut sum = 0.0;
    let mut n_pos = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx] {
            sum += 1.0 / (rank0 + 1) as f64;
            n_pos += 1.0;
        }
    }
    Some(sum / n_pos)
}

/// Normalized discounted cumulative gain at cutoff `k` with binary
/// relevance and 1/log2(rank+1) gains.
pub fn ndcg(scores: &[f64], labels: &[bool], k: usize) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let order = ranking(scores);
    let gain = |rank0: usize| 1.0 / ((rank0 + 2) as f64).log2();
    let dcg: f64 = order.iter().take(k).enumerate().filter(|(_, &idx)| labels[idx]).map(|(r, _)| gain(r)).sum();
    let idcg: f64 = (0..n_pos.min(k)).map(gain).sum();
    Some(dcg / idcg)
}

/// Metrics of one scored impression.
#[derive(Clone, Copy, Debug)]
pub struct ImpressionMetrics {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

/// Computes all four metrics, or `None` for single-class impressions
/// (which the caller counts as skipped).
pub fn impression_metrics(scores: &[f64], labels: &[bool]) -> Option<ImpressionMetrics> {
    Some(ImpressionMetrics {
        auc: auc(scores, labels)?,
        mrr: mrr(scores, labels)?,
        ndcg5: ndcg(scores, labels, 5)?,
        ndcg10: ndcg(scores, labels, 10)?,
    })
}

/// Unweighted means over the scored impressions.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    pub n_skipped: usize,
}

impl MetricReport {
    pub fn aggregate(per_impression: &[Option<ImpressionMetrics>]) -> MetricReport {
        let mut report = MetricReport {
            auc: 0.0,
            mrr: 0.0,
            ndcg5: 0.0,
            ndcg10: 0.0,
            n_impressions: 0,
            n_skipped: 0,
        };
        for m in per_impression {
            match m {
                Some(m) => {
                    report.auc += m.auc;
                    report.mrr += m.mrr;
                    report.ndcg5 += m.ndcg5;
                    report.ndcg10 += m.ndcg10;
                    report.n_impressions += 1;
                }
                None => report.n_skipped += 1,
            }
        }
        if report.n_impressions > 0 {
            let n = report.n_impressions as f64;
            report.auc /= n;
            report.mrr /= n;
            report.ndcg5 /= n;
            report.ndcg10 /= n;
        }
        report
    }

    /// Aligned text table for terminal output.
    pub fn table(&self) -> String {
        format!(
            "metric        value\n\
             auc        {:>8.4}\n\
             mrr        {:>8.4}\n\
             ndcg@5     {:>8.4}\n\
             ndcg@10    {:>8.4}\n\
             impressions {:>7}\n\
             skipped     {:>7}\n",
            self.auc, self.mrr, self.ndcg5, self.ndcg10, self.n_impressions, self.n_skipped
        )
    }
}
