//! C ABI for the gerl news recommender.
//!
//! Handles are opaque pointers created by [`gerl_train`] or
//! [`gerl_open`] and released with [`gerl_model_free`]. Every call
//! returns a [`GerlStatus`]; on failure, [`gerl_last_error`] yields a
//! thread-local message. The generated header lands in
//! `include/gerl.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::{Path, PathBuf};

use gerl::config::RunConfig;
use gerl::error::Error;
use gerl::metrics::MetricReport;
use gerl::model::{Forward, ModelParams};
use gerl::pipeline::{
    evaluate_split, load_params, load_sidecar, prepare, save_run, train_run, Prepared,
    SplitKind,
};
use gerl::tensor::Real;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GerlStatus {
    Ok = 0,
    /// Null pointer, non-UTF-8 string, or unknown name.
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Config = 4,
    Runtime = 5,
}

fn status_of(e: &Error) -> GerlStatus {
    match e {
        Error::Io(_) => GerlStatus::Io,
        Error::Parse { .. } => GerlStatus::Parse,
        Error::Config(_) | Error::Checkpoint(_) => GerlStatus::Config,
        _ => GerlStatus::Runtime,
    }
}

fn fail(e: &Error) -> GerlStatus {
    set_error(e.to_string());
    status_of(e)
}

/// Evaluation metrics averaged over scored impressions.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct GerlMetrics {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: u64,
    pub n_skipped: u64,
}

impl From<&MetricReport> for GerlMetrics {
    fn from(r: &MetricReport) -> Self {
        GerlMetrics {
            auc: r.auc,
            mrr: r.mrr,
            ndcg5: r.ndcg5,
            ndcg10: r.ndcg10,
            n_impressions: r.n_impressions as u64,
            n_skipped: r.n_skipped as u64,
        }
    }
}

enum LoadedParams {
    F32(ModelParams<f32>),
    F64(ModelParams<f64>),
}

/// Opaque: a prepared corpus (vocabulary, splits, click graph,
/// neighbor tables) plus trained parameters.
pub struct GerlModel {
    prep: Prepared,
    params: LoadedParams,
}

fn cstr_arg(ptr: *const c_char, what: &str) -> Result<String, GerlStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is null"));
        return Err(GerlStatus::InvalidArgument);
    }
    let s = unsafe { CStr::from_ptr(ptr) };
    match s.to_str() {
        Ok(v) => Ok(v.to_string()),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(GerlStatus::InvalidArgument)
        }
    }
}

fn write_handle(out: *mut *mut GerlModel, model: GerlModel) -> GerlStatus {
    if out.is_null() {
        set_error("output handle pointer is null");
        return GerlStatus::InvalidArgument;
    }
    unsafe { *out = Box::into_raw(Box::new(model)) };
    GerlStatus::Ok
}

/// Library version string (static, do not free).
#[no_mangle]
pub extern "C" fn gerl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (truncated
/// to `cap − 1` bytes, NUL-terminated) and returns the full message
/// length in bytes. A `cap` of 0 only queries the length.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn gerl_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

fn train_impl(
    news: &Path,
    behaviors: &Path,
    out_dir: &Path,
    config_json: Option<&str>,
    seed: u64,
) -> Result<GerlModel, Error> {
    let mut cfg: RunConfig = match config_json {
        Some(text) => serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config JSON: {e}")))?,
        None => RunConfig::default(),
    };
    cfg.seed = seed;
    let prep = prepare(news, behaviors, cfg)?;
    let model = match prep.cfg.precision {
        gerl::config::Precision::F32 => {
            let outcome = train_run::<f32>(&prep, None, |_| {})?;
            save_run(&outcome, &prep.cfg, out_dir)?;
            GerlModel { prep, params: LoadedParams::F32(outcome.params) }
        }
        gerl::config::Precision::F64 => {
            let outcome = train_run::<f64>(&prep, None, |_| {})?;
            save_run(&outcome, &prep.cfg, out_dir)?;
            GerlModel { prep, params: LoadedParams::F64(outcome.params) }
        }
    };
    Ok(model)
}

/// Trains a model on `news`/`behaviors` TSVs, writes the checkpoint
/// into `out_dir`, and returns a handle to the trained model.
/// `config_json` may be NULL (defaults) or a JSON object with any
/// subset of the run-configuration fields.
///
/// # Safety
/// `handle_out` must be a valid pointer; every string must be a valid
/// NUL-terminated C string (the config may be NULL).
#[no_mangle]
pub unsafe extern "C" fn gerl_train(
    news_path: *const c_char,
    behaviors_path: *const c_char,
    out_dir: *const c_char,
    config_json: *const c_char,
    seed: u64,
    handle_out: *mut *mut GerlModel,
) -> GerlStatus {
    gerl::init_thread_pool();
    let news = match cstr_arg(news_path, "news_path") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let behaviors = match cstr_arg(behaviors_path, "behaviors_path") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let out = match cstr_arg(out_dir, "out_dir") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let config = if config_json.is_null() {
        None
    } else {
        match cstr_arg(config_json, "config_json") {
            Ok(v) => Some(v),
            Err(s) => return s,
        }
    };
    match train_impl(
        Path::new(&news),
        Path::new(&behaviors),
        Path::new(&out),
        config.as_deref(),
        seed,
    ) {
        Ok(model) => write_handle(handle_out, model),
        Err(e) => fail(&e),
    }
}

fn open_impl(run_dir: &Path, news: &Path, behaviors: &Path) -> Result<GerlModel, Error> {
    let sidecar = load_sidecar(run_dir)?;
    let prep = prepare(news, behaviors, sidecar.run)?;
    let params = match prep.cfg.precision {
        gerl::config::Precision::F32 => LoadedParams::F32(load_params::<f32>(run_dir, &prep)?),
        gerl::config::Precision::F64 => LoadedParams::F64(load_params::<f64>(run_dir, &prep)?),
    };
    Ok(GerlModel { prep, params })
}

/// Opens a previously trained run directory against the same corpus
/// files it was trained on.
///
/// # Safety
/// `handle_out` must be a valid pointer; every string must be a valid
/// NUL-terminated C string.
#[no_mangle]
pub unsafe extern "C" fn gerl_open(
    run_dir: *const c_char,
    news_path: *const c_char,
    behaviors_path: *const c_char,
    handle_out: *mut *mut GerlModel,
) -> GerlStatus {
    gerl::init_thread_pool();
    let run = match cstr_arg(run_dir, "run_dir") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let news = match cstr_arg(news_path, "news_path") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let behaviors = match cstr_arg(behaviors_path, "behaviors_path") {
        Ok(v) => v,
        Err(s) => return s,
    };
    match open_impl(Path::new(&run), Path::new(&news), Path::new(&behaviors)) {
        Ok(model) => write_handle(handle_out, model),
        Err(e) => fail(&e),
    }
}

fn score_impl<F: Real>(
    params: &ModelParams<F>,
    prep: &Prepared,
    user: &str,
    history: &[String],
    news_id: &str,
) -> Result<f64, Error> {
    let uid = prep.users.lookup(user);
    let mut hist = Vec::with_capacity(history.len());
    for id in history {
        match prep.news.lookup(id) {
            Some(ix) => hist.push(ix),
            None => {
                return Err(Error::Config(format!("unknown history news id {id:?}")));
            }
        }
    }
    if hist.len() > params.cfg.max_history {
        hist.drain(..hist.len() - params.cfg.max_history);
    }
    let news_idx = prep
        .news
        .lookup(news_id)
        .ok_or_else(|| Error::Config(format!("unknown news id {news_id:?}")))?;
    let mut fwd = Forward::new(params, &prep.news, &prep.tables, false, 0);
    Ok(fwd.score_pair(uid, &hist, news_idx)?.scalar()?.as_f64())
}

/// Ranking score for one (user, click history, candidate news) triple.
/// Unknown users fall back to the cold-start representation; unknown
/// news ids are errors.
///
/// # Safety
/// `history_ids` must point to `n_history` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn gerl_score(
    handle: *const GerlModel,
    user_id: *const c_char,
    history_ids: *const *const c_char,
    n_history: usize,
    news_id: *const c_char,
    score_out: *mut f64,
) -> GerlStatus {
    let Some(model) = (unsafe { handle.as_ref() }) else {
        set_error("model handle is null");
        return GerlStatus::InvalidArgument;
    };
    if score_out.is_null() {
        set_error("score_out is null");
        return GerlStatus::InvalidArgument;
    }
    let user = match cstr_arg(user_id, "user_id") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let news = match cstr_arg(news_id, "news_id") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let mut history = Vec::with_capacity(n_history);
    if n_history > 0 {
        if history_ids.is_null() {
            set_error("history_ids is null but n_history > 0");
            return GerlStatus::InvalidArgument;
        }
        for i in 0..n_history {
            let ptr = unsafe { *history_ids.add(i) };
            match cstr_arg(ptr, "history id") {
                Ok(v) => history.push(v),
                Err(s) => return s,
            }
        }
    }

    let result = match &model.params {
        LoadedParams::F32(p) => score_impl(p, &model.prep, &user, &history, &news),
        LoadedParams::F64(p) => score_impl(p, &model.prep, &user, &history, &news),
    };
    match result {
        Ok(score) => {
            unsafe { *score_out = score };
            GerlStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Evaluates the model on one split ("train", "val", or "test") of the
/// corpus it was opened with.
///
/// # Safety
/// `handle` must come from `gerl_train`/`gerl_open` (or be NULL);
/// `metrics_out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gerl_evaluate(
    handle: *const GerlModel,
    split: *const c_char,
    metrics_out: *mut GerlMetrics,
) -> GerlStatus {
    let Some(model) = (unsafe { handle.as_ref() }) else {
        set_error("model handle is null");
        return GerlStatus::InvalidArgument;
    };
    if metrics_out.is_null() {
        set_error("metrics_out is null");
        return GerlStatus::InvalidArgument;
    }
    let split_name = match cstr_arg(split, "split") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let which: SplitKind = match split_name.parse() {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let result = match &model.params {
        LoadedParams::F32(p) => evaluate_split(p, &model.prep, which).map(|(r, _)| r),
        LoadedParams::F64(p) => evaluate_split(p, &model.prep, which).map(|(r, _)| r),
    };
    match result {
        Ok(report) => {
            unsafe { *metrics_out = GerlMetrics::from(&report) };
            GerlStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Dumps the neighbor tables of the model's click graph as TSV into
/// the given file (the same format as the CLI `graph` command).
///
/// # Safety
/// `handle` must come from `gerl_train`/`gerl_open` (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn gerl_dump_neighbors(
    handle: *const GerlModel,
    out_path: *const c_char,
) -> GerlStatus {
    let Some(model) = (unsafe { handle.as_ref() }) else {
        set_error("model handle is null");
        return GerlStatus::InvalidArgument;
    };
    let path = match cstr_arg(out_path, "out_path") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let dump = model.prep.tables.dump_tsv(
        |uid| model.prep.users.name(uid).to_string(),
        |news| model.prep.news.article(news).id.clone(),
    );
    match std::fs::write(PathBuf::from(path), dump) {
        Ok(()) => GerlStatus::Ok,
        Err(e) => fail(&Error::Io(e)),
    }
}

/// Releases a model handle. NULL is a no-op.
///
/// # Safety
/// `handle` must come from `gerl_train`/`gerl_open` and not be freed
/// twice; NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gerl_model_free(handle: *mut GerlModel) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}
