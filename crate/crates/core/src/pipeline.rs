//! End-to-end orchestration shared by the CLI and the C ABI: corpus
//! loading, split resolution, graph construction, training runs,
//! evaluation, checkpoint round-trips, sweeps, and the built-in
//! gradient check.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Precision, RunConfig};
use crate::data::{
    load_behaviors, load_news, split_by_time, Impression, LoadCounters, NewsTable, Splits,
    UserIndex,
};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, NeighborTables};
use crate::metrics::{impression_metrics, ImpressionMetrics, MetricReport};
use crate::model::{CorpusSizes, Forward, ModelParams};
use crate::rng::{chacha, subseed, TAG_SPLIT};
use crate::tensor::{finite_difference_check, FdOptions, FdReport, Real};
use crate::train::{checkpoint, train, EpochRecord, TrainOutcome};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SIDECAR_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Parsed corpus before splitting.
pub struct LoadedCorpus {
    pub news: NewsTable,
    pub impressions: Vec<Impression>,
    pub counters: LoadCounters,
}

pub fn load_corpus(news_path: &Path, behaviors_path: &Path, cfg: &RunConfig) -> Result<LoadedCorpus> {
    cfg.model.validate()?;
    let news = load_news(news_path, cfg.model.title_len)?;
    let load = load_behaviors(behaviors_path, &news, cfg.model.max_history)?;
    if load.impressions.is_empty() {
        return Err(Error::Config(format!(
            "no usable impressions in {}",
            behaviors_path.display()
        )));
    }
    Ok(LoadedCorpus { news, impressions: load.impressions, counters: load.counters })
}

/// Fills in `data.test_start` when absent: the configured fraction of
/// the observed time range. Returns the resolved boundary.
pub fn resolve_test_boundary(cfg: &mut RunConfig, impressions: &[Impression]) -> i64 {
    if let Some(t) = cfg.data.test_start {
        return t;
    }
    let min = impressions.iter().map(|i| i.timestamp).min().expect("nonempty");
    let max = impressions.iter().map(|i| i.timestamp).max().expect("nonempty");
    let t = min + ((max - min) as f64 * cfg.data.test_span_fraction) as i64;
    cfg.data.test_start = Some(t);
    t
}

/// Everything needed to train or evaluate: corpus, splits, id spaces,
/// click graph, and neighbor tables.
pub struct Prepared {
    pub cfg: RunConfig,
    pub news: NewsTable,
    pub users: UserIndex,
    pub splits: Splits,
    pub graph: BipartiteGraph,
    pub tables: NeighborTables,
    pub counters: LoadCounters,
}

pub fn build_prepared(corpus: LoadedCorpus, mut cfg: RunConfig) -> Result<Prepared> {
    let test_start = resolve_test_boundary(&mut cfg, &corpus.impressions);
    let splits = split_by_time(
        corpus.impressions,
        test_start,
        cfg.data.val_fraction,
        &mut chacha(subseed(cfg.seed, TAG_SPLIT, 0)),
    )?;
    let users = UserIndex::from_train(&splits.train);
    let graph = BipartiteGraph::build(&splits.train, &users, corpus.news.n_news());
    let tables = NeighborTables::build(&graph, cfg.model.neighbors, cfg.seed);
    Ok(Prepared { cfg, news: corpus.news, users, splits, graph, tables, counters: corpus.counters })
}

pub fn prepare(news_path: &Path, behaviors_path: &Path, cfg: RunConfig) -> Result<Prepared> {
    let corpus = load_corpus(news_path, behaviors_path, &cfg)?;
    build_prepared(corpus, cfg)
}

impl Prepared {
    pub fn sizes(&self) -> CorpusSizes {
        CorpusSizes {
            vocab: self.news.vocab.len(),
            topics: self.news.topics.len().max(1),
            users: self.users.n_users(),
            news: self.news.n_news(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train|val|test)"))),
        }
    }
}

fn dot_values<F: Real>(a: &[F], b: &[F]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = F::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s.as_f64()
}

/// Scores every candidate of every impression and averages the
/// per-impression ranking metrics. News encodings and projected news
/// vectors are computed once per unique news (dropout off, so they are
/// exact); impressions evaluate in parallel and aggregate in input
/// order.
pub fn evaluate_split<F: Real>(
    params: &ModelParams<F>,
    prep: &Prepared,
    which: SplitKind,
) -> Result<(MetricReport, Vec<Option<ImpressionMetrics>>)> {
    let impressions = match which {
        SplitKind::Train => &prep.splits.train,
        SplitKind::Val => &prep.splits.val,
        SplitKind::Test => &prep.splits.test,
    };
    evaluate_impressions(params, prep, impressions)
}

pub fn evaluate_impressions<F: Real>(
    params: &ModelParams<F>,
    prep: &Prepared,
    impressions: &[Impression],
) -> Result<(MetricReport, Vec<Option<ImpressionMetrics>>)> {
    // Unique news that need an encoding: candidates, history entries,
    // and the candidates' semantic neighbors.
    let mut needed: BTreeSet<u32> = BTreeSet::new();
    let mut candidate_news: BTreeSet<u32> = BTreeSet::new();
    for imp in impressions {
        needed.extend(imp.history.iter().copied());
        for &(n, _) in &imp.candidates {
            needed.insert(n);
            candidate_news.insert(n);
            if !params.cfg.ablation.drop_neighbor_news_sem {
                needed.extend(prep.tables.news_row(n).valid_ids());
            }
        }
    }

    let needed: Vec<u32> = needed.into_iter().collect();
    let encodings: HashMap<u32, Arc<Vec<F>>> = needed
        .par_iter()
        .map(|&idx| {
            let mut fwd = Forward::new(params, &prep.news, &prep.tables, false, 0);
            fwd.encode_news(idx).map(|t| (idx, t.values()))
        })
        .collect::<Result<_>>()?;

    let candidate_news: Vec<u32> = candidate_news.into_iter().collect();
    let news_vectors: HashMap<u32, Arc<Vec<F>>> = candidate_news
        .par_iter()
        .map(|&idx| {
            let mut fwd =
                Forward::new(params, &prep.news, &prep.tables, false, 0).with_injected(&encodings);
            fwd.news_vector(idx).map(|t| (idx, t.values()))
        })
        .collect::<Result<_>>()?;

    let per_impression: Vec<Option<ImpressionMetrics>> = impressions
        .par_iter()
        .map(|imp| {
            let uid = prep.users.lookup(&imp.user);
            let mut fwd =
                Forward::new(params, &prep.news, &prep.tables, false, 0).with_injected(&encodings);
            let user = fwd.user_vector(uid, &imp.history)?.values();
            let mut scores = Vec::with_capacity(imp.candidates.len());
            let mut labels = Vec::with_capacity(imp.candidates.len());
            for &(n, label) in &imp.candidates {
                scores.push(dot_values(&user, &news_vectors[&n]));
                labels.push(label);
            }
            Ok(impression_metrics(&scores, &labels))
        })
        .collect::<Result<_>>()?;

    Ok((MetricReport::aggregate(&per_impression), per_impression))
}

/// Initializes parameters and runs the training loop with per-epoch
/// validation wired to `evaluate_split`.
pub fn train_run<F: Real>(
    prep: &Prepared,
    pretrained_words: Option<Vec<F>>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>> {
    let params = ModelParams::init(&prep.cfg.model, prep.sizes(), prep.cfg.seed, pretrained_words)?;
    train(
        params,
        &prep.news,
        &prep.tables,
        &prep.splits.train,
        &prep.users,
        prep.cfg.seed,
        |p| {
            if prep.splits.val.is_empty() {
                Ok(None)
            } else {
                evaluate_split(p, prep, SplitKind::Val).map(|(r, _)| Some(r))
            }
        },
        on_epoch,
    )
}

/// Checkpoint sidecar: the full run configuration.
#[derive(Serialize, Deserialize)]
pub struct Sidecar {
    pub run: RunConfig,
}

pub fn save_run<F: Real>(outcome: &TrainOutcome<F>, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    checkpoint::save(&outcome.params.store, &out_dir.join(CHECKPOINT_FILE))?;
    let sidecar = Sidecar { run: cfg.clone() };
    fs::write(out_dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_sidecar(run_dir: &Path) -> Result<Sidecar> {
    let path = run_dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Rebuilds parameters for a run directory and loads its checkpoint.
/// The `prep` must have been built with the sidecar's configuration.
pub fn load_params<F: Real>(run_dir: &Path, prep: &Prepared) -> Result<ModelParams<F>> {
    let mut params = ModelParams::init(&prep.cfg.model, prep.sizes(), prep.cfg.seed, None)?;
    let entries = checkpoint::load(&run_dir.join(CHECKPOINT_FILE))?;
    checkpoint::apply(&mut params.store, &entries)?;
    Ok(params)
}

/// Run manifest, written before any computation starts.
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub run: RunConfig,
    pub news_path: String,
    pub behaviors_path: String,
    pub out_dir: String,
    pub build: String,
}

pub fn build_id() -> String {
    format!("gerl {}", env!("CARGO_PKG_VERSION"))
}

pub fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

// ----------------------------------------------------------------
// Built-in gradient check
// ----------------------------------------------------------------

/// Deterministic toy setup: 50-token vocabulary, 4 users, 6 news,
/// D=3, K=3, M=5, 2 heads, small widths, no dropout.
pub fn gradcheck_toy_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.title_len = 5;
    cfg.model.max_history = 3;
    cfg.model.neighbors = 3;
    cfg.model.heads = 2;
    cfg.model.attn_out_dim = 8;
    cfg.model.word_dim = 8;
    cfg.model.topic_dim = 6;
    cfg.model.id_dim = 6;
    cfg.model.attn_hidden = 7;
    cfg.model.common_dim = 9;
    cfg.model.neg_ratio = 2;
    cfg.model.dropout = 0.0;
    cfg.precision = Precision::F64;
    cfg
}

fn gradcheck_toy_corpus() -> (String, String) {
    // 6 titles of 8 distinct words each: 48 words + PAD + UNK = a
    // 50-row embedding. Titles truncate to M=5, so some vocabulary rows
    // stay off every gradient path (their gradients must check as 0).
    let mut news = String::new();
    for j in 0..6 {
        let words: Vec<String> = (0..8).map(|w| format!("w{}", j * 8 + w)).collect();
        news.push_str(&format!("n{j}\tt{}\t{}\n", j % 3, words.join(" ")));
    }
    let behaviors = "\
i0\tu1\t100\tn0 n1\tn2-1 n3-0 n4-0\n\
i1\tu2\t110\tn2\tn5-1 n0-0 n1-0\n\
i2\tu3\t120\tn0 n2\tn4-1 n5-0 n1-0\n\
i3\tu4\t130\tn1\tn3-1 n0-0 n5-0\n\
i4\tu1\t900\tn0 n1 n2\tn5-1 n3-0\n"
        .to_string();
    (news, behaviors)
}

/// Full-model central-difference check over every parameter group on
/// the toy corpus. `corrupt` injects a value/gradient inconsistency
/// (as a broken backward rule would produce) so callers can verify the
/// check actually fails when gradients are wrong.
pub fn gradcheck_full_model(
    max_coords_per_param: Option<usize>,
    step: f64,
    corrupt: bool,
) -> Result<FdReport> {
    let (news_tsv, behaviors_tsv) = gradcheck_toy_corpus();
    let dir = std::env::temp_dir().join(format!("gerl-gradcheck-{}", std::process::id()));
    fs::create_dir_all(&dir)?;
    let news_path = dir.join("news.tsv");
    let behaviors_path = dir.join("behaviors.tsv");
    fs::write(&news_path, news_tsv)?;
    fs::write(&behaviors_path, behaviors_tsv)?;

    let mut cfg = gradcheck_toy_config();
    cfg.data.test_start = Some(500);
    cfg.data.val_fraction = 0.0;
    let prep = prepare(&news_path, &behaviors_path, cfg)?;
    let _ = fs::remove_dir_all(&dir);

    let params = ModelParams::<f64>::init(&prep.cfg.model, prep.sizes(), 7, None)?;
    let samples = {
        // Two-user toy batch drawn deterministically from the train split.
        let mut samples = Vec::new();
        for (i, imp) in prep.splits.train.iter().take(2).enumerate() {
            let mut r = chacha(subseed(7, crate::rng::TAG_NEGATIVES, i as u64));
            let uid = prep.users.lookup(&imp.user);
            samples.extend(crate::train::sample_negatives(imp, uid, 2, &mut r));
        }
        samples
    };
    assert!(!samples.is_empty());

    let cfg = params.cfg.clone();
    let sizes = params.sizes;
    let mut store = params.store;
    let eval_count = std::cell::Cell::new(0u64);

    let report = finite_difference_check(
        &mut store,
        |tape, s| {
            let params = ModelParams {
                cfg: cfg.clone(),
                sizes,
                store: s.clone(),
                ids: crate::model::rebuild_param_ids(&cfg, s),
            };
            let mut fwd =
                Forward::on_tape(tape.clone(), &params, &prep.news, &prep.tables, false, 0);
            let mut total: Option<crate::tensor::Tensor<f64>> = None;
            for sample in &samples {
                let l = fwd.sample_loss(sample)?;
                total = Some(match total {
                    Some(t) => t.add(&l)?,
                    None => l,
                });
            }
            let mut loss = total.expect("nonempty batch");
            if corrupt {
                // Value path diverges from the recorded path after the
                // first (analytic) call: the finite differences then
                // disagree with the recorded gradients, exactly as a
                // broken backward rule would.
                let n = eval_count.get();
                eval_count.set(n + 1);
                if n > 0 {
                    let word_emb = tape.param(s, s.by_name("word_emb").expect("word_emb"));
                    loss = loss.add(&word_emb.sum().scale(1e-2))?;
                }
            }
            Ok(loss)
        },
        &FdOptions { step, denom_floor: 1e-6, max_coords_per_param, seed: 7 },
    )?;
    Ok(report)
}

// ----------------------------------------------------------------
// Sweeps
// ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Heads,
    Degree,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heads" => Ok(SweepAxis::Heads),
            "degree" => Ok(SweepAxis::Degree),
            other => Err(Error::Config(format!("unknown sweep axis {other:?} (heads|degree)"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Heads => "heads",
            SweepAxis::Degree => "degree",
        }
    }
}

pub struct SweepPoint {
    pub value: usize,
    pub report: MetricReport,
    pub run_dir: PathBuf,
}

/// One full training run per axis value (shared seed), each evaluated
/// on the test split. Returns the per-value reports; the consolidated
/// CSV is the caller's to write.
pub fn run_sweep<F: Real>(
    news_path: &Path,
    behaviors_path: &Path,
    base: &RunConfig,
    axis: SweepAxis,
    values: &[usize],
    out_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config("sweep: empty value list".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::Heads => cfg.model.heads = value,
            SweepAxis::Degree => cfg.model.neighbors = value,
        }
        cfg.model.validate()?;
        let run_dir = out_dir.join(format!("{}_{value}", axis.name()));
        fs::create_dir_all(&run_dir)?;

        let corpus = load_corpus(news_path, behaviors_path, &cfg)?;
        resolve_test_boundary(&mut cfg, &corpus.impressions);
        write_manifest(
            &RunManifest {
                command: format!("sweep --axis {} --value {value}", axis.name()),
                run: cfg.clone(),
                news_path: news_path.display().to_string(),
                behaviors_path: behaviors_path.display().to_string(),
                out_dir: run_dir.display().to_string(),
                build: build_id(),
            },
            &run_dir,
        )?;
        let prep = build_prepared(corpus, cfg)?;

        let mut log = String::new();
        let outcome = train_run::<F>(&prep, None, |rec| {
            log.push_str(&serde_json::to_string(rec).expect("serializable"));
            log.push('\n');
        })?;
        fs::write(run_dir.join(LOG_FILE), log)?;
        save_run(&outcome, &prep.cfg, &run_dir)?;

        let (report, _) = evaluate_split(&outcome.params, &prep, SplitKind::Test)?;
        points.push(SweepPoint { value, report, run_dir });
    }
    Ok(points)
}

pub fn sweep_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let mut csv = String::from("axis,value,auc,mrr,ndcg5,ndcg10\n");
    for p in points {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            axis.name(),
            p.value,
            p.report.auc,
            p.report.mrr,
            p.report.ndcg5,
            p.report.ndcg10
        ));
    }
    csv
}
