//! Additive attention pooling shared by every aggregation site:
//! score each row by q·tanh(W x + b), normalize over valid rows with a
//! masked softmax, and take the weighted sum.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub(crate) struct StagedAttn<F: Real> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
    pub q: Tensor<F>,
}

/// Pools the rows of `items` (L×dim) into 1×dim. `attn = None` swaps
/// the learned weights for a uniform mean over valid rows (the
/// average-pooling ablation). Returns the pooled vector and the 1×L
/// weight row; masked slots carry exactly zero weight.
pub(crate) fn attend<F: Real>(
    items: &Tensor<F>,
    mask: &[bool],
    attn: Option<&StagedAttn<F>>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let l = items.rows();
    debug_assert_eq!(mask.len(), l);
    let weights = match attn {
        Some(p) => {
            let scores = items.matmul(&p.w)?.add_row(&p.b)?.tanh().matmul(&p.q)?;
            scores.transpose().masked_softmax(mask)?
        }
        None => {
            let n_valid = mask.iter().filter(|&&m| m).count();
            if n_valid == 0 {
                return Err(Error::DegenerateRow { row: 0 });
            }
            let w = F::from_f64(1.0 / n_valid as f64);
            let row: Vec<F> =
                mask.iter().map(|&m| if m { w } else { F::zero() }).collect();
            items.tape().constant(1, l, row)
        }
    };
    let pooled = weights.matmul(items)?;
    Ok((pooled, weights))
}
