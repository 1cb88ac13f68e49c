//! Operator entry point: synthetic corpus generation, training,
//! evaluation, hyperparameter sweeps, neighbor-table dumps, and the
//! full-model gradient check.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gerl::config::{Precision, RunConfig};
use gerl::data::parse_timestamp;
use gerl::error::{Error, Result};
use gerl::pipeline::{
    self, build_id, build_prepared, evaluate_split, load_corpus, load_params, load_sidecar,
    prepare, resolve_test_boundary, run_sweep, save_run, sweep_csv, train_run, RunManifest,
    SplitKind, SweepAxis, LOG_FILE,
};
use gerl::synth::{write_corpus, SynthConfig};
use gerl::tensor::Real;

#[derive(Parser)]
#[command(name = "gerl", version, about = "Graph-enhanced news recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted preferences.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, log, and manifest.
    Train(TrainArgs),
    /// Evaluate a trained run on a data split.
    Eval(EvalArgs),
    /// Retrain across one hyperparameter axis and collect metrics.
    Sweep(SweepArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Build the click graph and dump the neighbor tables.
    Graph(GraphArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for news.tsv, behaviors.tsv, affinities.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    users: usize,
    #[arg(long, default_value_t = 120)]
    news: usize,
    #[arg(long, default_value_t = 4)]
    topics: usize,
    #[arg(long, default_value_t = 80)]
    vocab: usize,
    #[arg(long, default_value_t = 6)]
    title_len: usize,
    #[arg(long, default_value_t = 6.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    cold_fraction: f64,
    #[arg(long, default_value_t = 8)]
    impressions_per_user: usize,
    #[arg(long, default_value_t = 5)]
    candidates: usize,
    /// Pre-roll click count range for warm users.
    #[arg(long, default_value_t = 3)]
    history_min: usize,
    #[arg(long, default_value_t = 8)]
    history_max: usize,
    /// Impressions a cold user places before the test boundary.
    #[arg(long, default_value_t = 2)]
    cold_train_impressions: usize,
    /// Probability of an off-topic title token (vague titles).
    #[arg(long, default_value_t = 0.0)]
    title_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Neighbor count D per graph node.
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    neg_ratio: Option<usize>,
    #[arg(long)]
    common_dim: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    topic_dim: Option<usize>,
    #[arg(long)]
    id_dim: Option<usize>,
    #[arg(long)]
    attn_hidden: Option<usize>,
    #[arg(long)]
    attn_out_dim: Option<usize>,
    #[arg(long)]
    title_len: Option<usize>,
    #[arg(long)]
    max_history: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Ablation switches (repeatable or comma-separated):
    /// no-two-hop, no-neighbor-user, no-neighbor-news-id,
    /// no-neighbor-news-sem, avgpool-self, avgpool-word,
    /// avgpool-onehop, avgpool-twohop.
    #[arg(long)]
    ablate: Vec<String>,
    #[arg(long)]
    precision: Option<Precision>,
    /// Test boundary (epoch seconds or ISO-8601); defaults to 75% of
    /// the observed time span.
    #[arg(long)]
    test_start: Option<String>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

impl ModelFlags {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let m = &mut cfg.model;
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.lr {
            m.learning_rate = v;
        }
        if let Some(v) = self.batch {
            m.batch_size = v;
        }
        if let Some(v) = self.heads {
            m.heads = v;
        }
        if let Some(v) = self.degree {
            m.neighbors = v;
        }
        if let Some(v) = self.neg_ratio {
            m.neg_ratio = v;
        }
        if let Some(v) = self.common_dim {
            m.common_dim = v;
        }
        if let Some(v) = self.word_dim {
            m.word_dim = v;
        }
        if let Some(v) = self.topic_dim {
            m.topic_dim = v;
        }
        if let Some(v) = self.id_dim {
            m.id_dim = v;
        }
        if let Some(v) = self.attn_hidden {
            m.attn_hidden = v;
        }
        if let Some(v) = self.attn_out_dim {
            m.attn_out_dim = v;
        }
        if let Some(v) = self.title_len {
            m.title_len = v;
        }
        if let Some(v) = self.max_history {
            m.max_history = v;
        }
        if let Some(v) = self.dropout {
            m.dropout = v;
        }
        for group in &self.ablate {
            for name in group.split(',').filter(|s| !s.is_empty()) {
                m.ablation.apply(name)?;
            }
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.precision {
            cfg.precision = v;
        }
        if let Some(ts) = &self.test_start {
            let t = parse_timestamp(ts)
                .ok_or_else(|| Error::Config(format!("unparsable --test-start {ts:?}")))?;
            cfg.data.test_start = Some(t);
        }
        if let Some(v) = self.val_fraction {
            cfg.data.val_fraction = v;
        }
        cfg.model.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    news: Option<PathBuf>,
    #[arg(long)]
    behaviors: Option<PathBuf>,
    /// Run directory for manifest, checkpoint, and log.
    #[arg(long)]
    out: PathBuf,
    /// GloVe-format text embeddings to initialize word vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Reproduce a previous run: read configuration and input paths
    /// from its manifest (explicit flags still take precedence).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory holding checkpoint.bin and checkpoint.json.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    news: Option<PathBuf>,
    #[arg(long)]
    behaviors: Option<PathBuf>,
    /// Use a run manifest for the run directory and input paths.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitKind,
    /// Metrics JSON destination (default: <run>/metrics_<split>.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-impression metrics CSV.
    #[arg(long)]
    per_impression: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep axis: heads or degree.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    behaviors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Cap on checked coordinates per parameter (default: all).
    #[arg(long)]
    max_coords: Option<usize>,
    /// Worst relative error allowed for a passing exit code.
    #[arg(long, default_value_t = 1e-4)]
    bound: f64,
    /// Negative control: inject a value/gradient inconsistency that a
    /// broken backward rule would produce; the check must then fail.
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    behaviors: PathBuf,
    /// Neighbor-table TSV destination.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: ModelFlags,
}

fn main() -> ExitCode {
    gerl::init_thread_pool();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Graph(args) => cmd_graph(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let cfg = SynthConfig {
        n_users: args.users,
        n_news: args.news,
        n_topics: args.topics,
        vocab_size: args.vocab,
        title_len: args.title_len,
        gamma: args.gamma,
        cold_fraction: args.cold_fraction,
        impressions_per_user: args.impressions_per_user,
        candidates_per_impression: args.candidates,
        history_min: args.history_min,
        history_max: args.history_max,
        cold_train_impressions: args.cold_train_impressions,
        title_noise: args.title_noise,
        seed: args.seed,
        ..Default::default()
    };
    write_corpus(&cfg, &args.out)?;
    println!(
        "wrote news.tsv ({} news), behaviors.tsv ({} impressions), affinities.json to {}",
        cfg.n_news,
        cfg.n_users * cfg.impressions_per_user,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Resolves configuration and input paths from an optional manifest
/// plus explicit flags.
fn resolve_inputs(
    manifest: Option<&Path>,
    news: Option<PathBuf>,
    behaviors: Option<PathBuf>,
    flags: &ModelFlags,
) -> Result<(RunConfig, PathBuf, PathBuf)> {
    let (mut cfg, manifest_news, manifest_behaviors) = match manifest {
        Some(path) => {
            let m = pipeline::read_manifest(path)?;
            (m.run, Some(PathBuf::from(m.news_path)), Some(PathBuf::from(m.behaviors_path)))
        }
        None => (RunConfig::default(), None, None),
    };
    flags.apply(&mut cfg)?;
    let news = news
        .or(manifest_news)
        .ok_or_else(|| Error::Config("--news is required (or provide --manifest)".into()))?;
    let behaviors = behaviors
        .or(manifest_behaviors)
        .ok_or_else(|| Error::Config("--behaviors is required (or provide --manifest)".into()))?;
    Ok((cfg, news, behaviors))
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let (mut cfg, news_path, behaviors_path) =
        resolve_inputs(args.manifest.as_deref(), args.news, args.behaviors, &args.flags)?;

    let corpus = load_corpus(&news_path, &behaviors_path, &cfg)?;
    resolve_test_boundary(&mut cfg, &corpus.impressions);
    pipeline::write_manifest(
        &RunManifest {
            command: "train".into(),
            run: cfg.clone(),
            news_path: news_path.display().to_string(),
            behaviors_path: behaviors_path.display().to_string(),
            out_dir: args.out.display().to_string(),
            build: build_id(),
        },
        &args.out,
    )?;
    let prep = build_prepared(corpus, cfg)?;
    if prep.counters.unknown_history_refs + prep.counters.unknown_candidate_refs > 0 {
        eprintln!(
            "warning: dropped {} unknown history refs, {} unknown candidate refs, {} empty impressions",
            prep.counters.unknown_history_refs,
            prep.counters.unknown_candidate_refs,
            prep.counters.dropped_impressions
        );
    }

    match prep.cfg.precision {
        Precision::F32 => run_train::<f32>(&prep, args.embeddings.as_deref(), &args.out),
        Precision::F64 => run_train::<f64>(&prep, args.embeddings.as_deref(), &args.out),
    }
}

fn run_train<F: Real>(
    prep: &pipeline::Prepared,
    embeddings: Option<&Path>,
    out: &Path,
) -> Result<ExitCode> {
    let pretrained = match embeddings {
        Some(path) => Some(gerl::data::load_pretrained_embeddings::<F>(
            path,
            &prep.news.vocab,
            prep.cfg.model.word_dim,
            &mut gerl::rng::chacha(gerl::rng::subseed(prep.cfg.seed, gerl::rng::TAG_EMBED, 0)),
        )?),
        None => None,
    };

    let mut log = fs::File::create(out.join(LOG_FILE))?;
    let outcome = train_run::<F>(prep, pretrained, |record| {
        let line = serde_json::to_string(record).expect("serializable");
        println!("{line}");
        let _ = writeln!(log, "{line}");
    })?;
    save_run(&outcome, &prep.cfg, out)?;
    println!(
        "kept epoch {} parameters; {} positives had no negatives; checkpoint in {}",
        outcome.best_epoch,
        outcome.skipped_positives,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let (run_dir, news_hint, behaviors_hint) = match (&args.run, &args.manifest) {
        (Some(run), _) => (run.clone(), None, None),
        (None, Some(path)) => {
            let m = pipeline::read_manifest(path)?;
            (
                PathBuf::from(&m.out_dir),
                Some(PathBuf::from(m.news_path)),
                Some(PathBuf::from(m.behaviors_path)),
            )
        }
        (None, None) => {
            return Err(Error::Config("--run or --manifest is required".into()));
        }
    };
    let sidecar = load_sidecar(&run_dir)?;
    let cfg = sidecar.run;

    // Explicit flags must agree with the checkpoint's configuration.
    let mut requested = cfg.clone();
    args.flags.apply(&mut requested)?;
    requested.data.test_start = cfg.data.test_start;
    if requested != cfg {
        let mut diffs = Vec::new();
        if requested.model.heads != cfg.model.heads {
            diffs.push(format!("heads ({} vs {})", requested.model.heads, cfg.model.heads));
        }
        if requested.model.neighbors != cfg.model.neighbors {
            diffs.push(format!(
                "degree ({} vs {})",
                requested.model.neighbors, cfg.model.neighbors
            ));
        }
        if requested.model.common_dim != cfg.model.common_dim {
            diffs.push(format!(
                "common_dim ({} vs {})",
                requested.model.common_dim, cfg.model.common_dim
            ));
        }
        if requested.model.ablation != cfg.model.ablation {
            diffs.push("ablation flags".into());
        }
        if requested.precision != cfg.precision {
            diffs.push("precision".into());
        }
        if requested.seed != cfg.seed {
            diffs.push(format!("seed ({} vs {})", requested.seed, cfg.seed));
        }
        if diffs.is_empty() {
            diffs.push("model dimensions".into());
        }
        return Err(Error::Checkpoint(format!(
            "requested configuration differs from the checkpoint's: {}",
            diffs.join(", ")
        )));
    }

    let news = args.news.or(news_hint).ok_or_else(|| Error::Config("--news is required".into()))?;
    let behaviors = args
        .behaviors
        .or(behaviors_hint)
        .ok_or_else(|| Error::Config("--behaviors is required".into()))?;
    let prep = prepare(&news, &behaviors, cfg)?;

    let (report, per_impression) = match prep.cfg.precision {
        Precision::F32 => {
            let params = load_params::<f32>(&run_dir, &prep)?;
            evaluate_split(&params, &prep, args.split)?
        }
        Precision::F64 => {
            let params = load_params::<f64>(&run_dir, &prep)?;
            evaluate_split(&params, &prep, args.split)?
        }
    };

    print!("{}", report.table());
    let split_name = match args.split {
        SplitKind::Train => "train",
        SplitKind::Val => "val",
        SplitKind::Test => "test",
    };
    let out_path = args.out.unwrap_or_else(|| run_dir.join(format!("metrics_{split_name}.json")));
    fs::write(&out_path, serde_json::to_string_pretty(&report)?)?;
    println!("metrics written to {}", out_path.display());

    if let Some(csv_path) = args.per_impression {
        let mut csv = String::from("impression_index,auc,mrr,ndcg5,ndcg10\n");
        for (i, m) in per_impression.iter().enumerate() {
            if let Some(m) = m {
                csv.push_str(&format!(
                    "{i},{:.6},{:.6},{:.6},{:.6}\n",
                    m.auc, m.mrr, m.ndcg5, m.ndcg10
                ));
            } else {
                csv.push_str(&format!("{i},,,,\n"));
            }
        }
        fs::write(&csv_path, csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::default();
    args.flags.apply(&mut cfg)?;
    let values: Vec<usize> = args
        .values
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| Error::Config(format!("invalid sweep value {s:?}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config("sweep: --values is empty".into()));
    }

    let points = match cfg.precision {
        Precision::F32 => {
            run_sweep::<f32>(&args.news, &args.behaviors, &cfg, args.axis, &values, &args.out)?
        }
        Precision::F64 => {
            run_sweep::<f64>(&args.news, &args.behaviors, &cfg, args.axis, &values, &args.out)?
        }
    };
    let csv = sweep_csv(args.axis, &points);
    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("sweep.csv");
    fs::write(&csv_path, &csv)?;
    print!("{csv}");
    println!("sweep results in {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let report = pipeline::gradcheck_full_model(args.max_coords, args.step, args.corrupt)?;
    println!("{:<28} {:>12} {:>8}", "parameter", "max_rel_err", "coords");
    for p in &report.per_param {
        println!("{:<28} {:>12.3e} {:>8}", p.name, p.worst_rel_err, p.checked);
    }
    println!("worst relative error: {:.3e} (bound {:.1e})", report.worst, args.bound);
    if report.passes(args.bound) {
        println!("gradcheck PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck FAIL");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_graph(args: GraphArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::default();
    args.flags.apply(&mut cfg)?;
    let prep = prepare(&args.news, &args.behaviors, cfg)?;
    let dump = prep.tables.dump_tsv(
        |uid| prep.users.name(uid).to_string(),
        |news| prep.news.article(news).id.clone(),
    );
    fs::write(&args.out, dump)?;
    println!(
        "neighbor tables for {} users and {} news written to {}",
        prep.users.n_users(),
        prep.news.n_news(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
