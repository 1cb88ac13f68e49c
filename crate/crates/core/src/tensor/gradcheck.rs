use rand::seq::SliceRandom;

use super::params::ParamStore;
use super::tape::{Tape, Tensor};
use super::Real;
use crate::error::Result;
use crate::rng;

/// Settings for the central-difference gradient oracle.
pub struct FdOptions {
    /// Perturbation step h of (f(x+h) − f(x−h)) / 2h.
    pub step: f64,
    /// Floor on the relative-error denominator, so that roundoff noise
    /// on near-zero gradient coordinates is measured against this scale
    /// instead of the coordinate itself.
    pub denom_floor: f64,
    /// Cap on checked coordinates per parameter; `None` checks all.
    pub max_coords_per_param: Option<usize>,
    /// Seed for coordinate subsampling.
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { step: 1e-5, denom_floor: 1e-6, max_coords_per_param: None, seed: 0 }
    }
}

pub struct FdParamReport {
    pub name: String,
    pub worst_rel_err: f64,
    pub checked: usize,
}

pub struct FdReport {
    pub worst: f64,
    pub per_param: Vec<FdParamReport>,
}

impl FdReport {
    pub fn passes(&self, bound: f64) -> bool {
        self.worst.is_finite() && self.worst <= bound
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    if !a.is_finite() || !n.is_finite() {
        return f64::INFINITY;
    }
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the tape's analytic gradients against central differences
/// of `build_loss` and reports the worst relative error per parameter.
/// The loss construction must be deterministic (no dropout).
pub fn finite_difference_check<F: Real>(
    store: &mut ParamStore<F>,
    build_loss: impl Fn(&Tape<F>, &ParamStore<F>) -> Result<Tensor<F>>,
    opts: &FdOptions,
) -> Result<FdReport> {
    let tape = Tape::new();
    let loss = build_loss(&tape, store)?;
    let analytic = tape.backward(&loss, store)?;
    drop(tape);

    let h = F::from_f64(opts.step);
    let mut per_param = Vec::with_capacity(store.len());
    let mut worst = 0.0_f64;

    for id in 0..store.len() {
        let p = store.get(id);
        let name = p.name.clone();
        let mut coords: Vec<usize> = (0..p.len()).filter(|&i| !p.is_frozen_coord(i)).collect();
        if let Some(cap) = opts.max_coords_per_param {
            if coords.len() > cap {
                let mut r = rng::chacha(rng::subseed(opts.seed, rng::TAG_INIT, id as u64));
                coords.shuffle(&mut r);
                coords.truncate(cap);
                coords.sort_unstable();
            }
        }

        let mut param_worst = 0.0_f64;
        let checked = coords.len();
        for i in coords {
            let orig = store.get(id).data[i];
            store.data_mut(id)[i] = orig + h;
            let plus = eval_loss(&build_loss, store)?;
            store.data_mut(id)[i] = orig - h;
            let minus = eval_loss(&build_loss, store)?;
            store.data_mut(id)[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let e = rel_err(analytic.get(id)[i].as_f64(), numeric, opts.denom_floor);
            if e > param_worst {
                param_worst = e;
            }
        }
        if param_worst > worst {
            worst = param_worst;
        }
        per_param.push(FdParamReport { name, worst_rel_err: param_worst, checked });
    }

    Ok(FdReport { worst, per_param })
}

fn eval_loss<F: Real>(
    build_loss: &impl Fn(&Tape<F>, &ParamStore<F>) -> Result<Tensor<F>>,
    store: &ParamStore<F>,
) -> Result<f64> {
    let tape = Tape::new();
    let loss = build_loss(&tape, store)?;
    Ok(loss.scalar()?.as_f64())
}
