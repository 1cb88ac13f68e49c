//! Graph-enhanced news recommendation.
//!
//! Users and news form a bipartite graph built from click logs. News are
//! encoded from their titles and topics with multi-head self-attention,
//! users from their click history and ID embeddings, and both sides are
//! enriched with attentively aggregated graph neighbors before an
//! inner-product ranking score. Training runs on the built-in
//! reverse-mode tensor engine in [`tensor`]; no external ML framework is
//! involved.

pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Caps the rayon worker pool from the `GERL_THREADS` environment
/// variable. A no-op when the variable is unset, unparsable, or the
/// global pool was already built.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("GERL_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
