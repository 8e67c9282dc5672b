//! C interface: datasets, models and Shapley reports behind opaque handles.
//!
//! Every fallible call returns an [`FsStatus`]; on failure the message is
//! available from [`fs_last_error`] on the same thread. Strings returned by
//! the library are owned by the caller and released with [`fs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fairshap::dataset::{read_bundle, synthetic, Dataset, Split};
use fairshap::metrics;
use fairshap::model::{load_model, Model, Predictor};
use fairshap::shapley::{global_shapley, CoalitionEstimatorConfig, EstimatorMode, ExplainSpec, ShapleyReport, ValueKind};
use fairshap::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    NotFound = 3,
    Io = 4,
    Parse = 5,
    InvalidArgument = 6,
    Computation = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// A loaded, encoded and split dataset.
pub struct FsDataset(Dataset);

/// A stored model of any kind.
pub struct FsModel(Model);

/// The reports of one explanation: one for accuracy and dp, one per
/// conditioning cell for eo and cdp.
pub struct FsReport(Vec<ShapleyReport>);

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FsExplainOptions {
    /// 0 for exact enumeration, 1 for sampled permutations.
    pub sampled: u32,
    pub permutations: usize,
    /// Background rows; 0 uses the estimator default.
    pub background: usize,
    /// Aggregation rows; 0 uses every row of the split.
    pub rows: usize,
    pub seed: u64,
    pub target_class: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FsStatus {
    match e {
        Error::MissingFile(_) => FsStatus::NotFound,
        Error::Io { .. } => FsStatus::Io,
        Error::Parse { .. } | Error::Json(_) => FsStatus::Parse,
        Error::InvalidConfig(_) | Error::DimensionMismatch { .. } | Error::UnknownPlayer { .. } | Error::MissingSideInfo { .. } => {
            FsStatus::InvalidArgument
        }
        Error::Stage { source, .. } => status_of(source),
        _ => FsStatus::Computation,
    }
}

struct Fail(FsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure and converts panics into [`FsStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            FsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FsStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FsStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, Fail>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| Fail(FsStatus::InvalidArgument, e.to_string()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn owned_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a bundle written by `fairshap data prepare`.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_load_bundle(dir: *const c_char, out: *mut *mut FsDataset) -> FsStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        put(out, FsDataset(read_bundle(Path::new(dir))?))
    })
}

/// The seeded five-feature synthetic dataset.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_synthetic(rows: usize, seed: u64, out: *mut *mut FsDataset) -> FsStatus {
    guard(|| {
        if rows < 20 {
            return Err(Fail(FsStatus::InvalidArgument, "need at least 20 rows".into()));
        }
        put(out, FsDataset(synthetic::biased(rows, seed)))
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_free(ds: *mut FsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Rows in `split` ("train", "validation", "test"); 0 on a bad argument.
///
/// # Safety
/// `ds` must be a live handle; `split` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_rows(ds: *const FsDataset, split: *const c_char) -> usize {
    let mut n = 0;
    let status = guard(|| {
        let ds = handle(ds, "ds")?;
        let split: Split = parse(str_arg(split, "split")?)?;
        n = ds.0.rows(split).len();
        Ok(())
    });
    if status == FsStatus::Ok {
        n
    } else {
        0
    }
}

/// Encoded column count, the input width models expect.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_columns(ds: *const FsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_cols())
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_players(ds: *const FsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_players())
}

/// Name of feature group `index`; free with [`fs_string_free`]. Null when
/// out of range.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_player_name(ds: *const FsDataset, index: usize) -> *mut c_char {
    ds.as_ref()
        .and_then(|d| d.0.groups().get(index))
        .map_or(ptr::null_mut(), |g| owned_string(&g.player_name))
}

/// Copies the encoded features of `split` (row-major) into `out`, which
/// must hold `rows * columns` values.
///
/// # Safety
/// `ds` must be a live handle, `split` a nul-terminated string and `out`
/// writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_features(ds: *const FsDataset, split: *const c_char, out: *mut f64, len: usize) -> FsStatus {
    guard(|| {
        let ds = &handle(ds, "ds")?.0;
        let split: Split = parse(str_arg(split, "split")?)?;
        let rows = ds.rows(split);
        let need = rows.len() * ds.n_cols();
        if len != need {
            return Err(Fail(FsStatus::OutOfRange, format!("buffer holds {len} values, need {need}")));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, len);
        for (chunk, &i) in out.chunks_exact_mut(ds.n_cols()).zip(&rows) {
            chunk.copy_from_slice(ds.row(i));
        }
        Ok(())
    })
}

/// Loads a model file. Wrapper models also load their base, resolved
/// relative to the file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_model_load(path: *const c_char, out: *mut *mut FsModel) -> FsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, FsModel(load_model(Path::new(path))?))
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_model_free(model: *mut FsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_model_input_width(model: *const FsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_width())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_model_classes(model: *const FsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_classes())
}

/// Class probabilities for `n_rows` encoded rows. `x` holds
/// `n_rows * input_width` values and `out` `n_rows * classes`.
///
/// # Safety
/// `model` must be a live handle; `x` readable and `out` writable for the
/// sizes above.
#[no_mangle]
pub unsafe extern "C" fn fs_model_predict(model: *const FsModel, x: *const f64, n_rows: usize, out: *mut f64, out_len: usize) -> FsStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let (w, k) = (m.input_width(), m.n_classes());
        if out_len != n_rows * k {
            return Err(Fail(FsStatus::OutOfRange, format!("output holds {out_len} values, need {}", n_rows * k)));
        }
        if n_rows == 0 {
            return Ok(());
        }
        if x.is_null() || out.is_null() {
            return Err(null(if x.is_null() { "x" } else { "out" }));
        }
        let x = std::slice::from_raw_parts(x, n_rows * w);
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Fail(FsStatus::InvalidArgument, format!("non-finite input {bad}")));
        }
        let out = std::slice::from_raw_parts_mut(out, out_len);
        for (row, o) in x.chunks_exact(w).zip(out.chunks_exact_mut(k)) {
            m.predict_into(row, o);
        }
        Ok(())
    })
}

/// Evaluates `metric` ("accuracy", "dp" or "eo") of a model on `split`.
/// For accuracy the expected accuracy is returned; for the fairness
/// metrics the absolute difference.
///
/// # Safety
/// Handles must be live, strings nul-terminated and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_metric(
    model: *const FsModel,
    ds: *const FsDataset,
    metric: *const c_char,
    split: *const c_char,
    value: *mut f64,
) -> FsStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let ds = &handle(ds, "ds")?.0;
        let split: Split = parse(str_arg(split, "split")?)?;
        let r = match str_arg(metric, "metric")? {
            "accuracy" => metrics::expected_accuracy(m, ds, split)?,
            "dp" => metrics::dp_difference(m, ds, split)?,
            "eo" => metrics::eo_difference(m, ds, split)?,
            other => return Err(Fail(FsStatus::InvalidArgument, format!("unknown metric `{other}`"))),
        };
        if value.is_null() {
            return Err(null("value"));
        }
        *value = r.value;
        Ok(())
    })
}

/// Exact mode, every aggregation row, default background, class 1.
#[no_mangle]
pub extern "C" fn fs_explain_options_default() -> FsExplainOptions {
    let d = CoalitionEstimatorConfig::default();
    FsExplainOptions {
        sampled: 0,
        permutations: d.permutations,
        background: 0,
        rows: 0,
        seed: d.seed,
        target_class: 1,
    }
}

/// Global Shapley values of a model for `kind` ("accuracy", "dp", "eo" or
/// "cdp"). `resolving` lists the cdp resolving features, comma separated;
/// it may be null for the other kinds.
///
/// # Safety
/// Handles must be live, `kind` and `split` nul-terminated, `resolving`
/// null or nul-terminated, `opts` null or readable, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_explain(
    model: *const FsModel,
    ds: *const FsDataset,
    kind: *const c_char,
    split: *const c_char,
    resolving: *const c_char,
    opts: *const FsExplainOptions,
    out: *mut *mut FsReport,
) -> FsStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let ds = &handle(ds, "ds")?.0;
        let kind: ValueKind = parse(str_arg(kind, "kind")?)?;
        let split: Split = parse(str_arg(split, "split")?)?;
        let o = opts.as_ref().copied().unwrap_or_else(|| fs_explain_options_default());
        let cfg = CoalitionEstimatorConfig {
            mode: if o.sampled == 0 { EstimatorMode::Exact } else { EstimatorMode::Sampled },
            permutations: o.permutations,
            background: (o.background > 0).then_some(o.background),
            rows: (o.rows > 0).then_some(o.rows),
            seed: o.seed,
            ..CoalitionEstimatorConfig::default()
        };
        let resolving = if resolving.is_null() {
            Vec::new()
        } else {
            str_arg(resolving, "resolving")?
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        };
        let spec = ExplainSpec {
            kind,
            target_class: o.target_class,
            resolving,
        };
        put(out, FsReport(global_shapley(&spec, m, ds, split, &cfg)?))
    })
}

/// # Safety
/// `report` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_report_free(report: *mut FsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of reports (conditioning cells) in the explanation.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_report_count(report: *const FsReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.len())
}

unsafe fn one<'a>(report: *const FsReport, index: usize) -> Result<&'a ShapleyReport, Fail> {
    let r = handle(report, "report")?;
    r.0.get(index)
        .ok_or_else(|| Fail(FsStatus::OutOfRange, format!("report {index} of {}", r.0.len())))
}

/// Players of report `index`; 0 when out of range.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_report_players(report: *const FsReport, index: usize) -> usize {
    one(report, index).map_or(0, |r| r.players.len())
}

/// Copies the attributions of report `index` into `out` (`len` must equal
/// the player count), plus the offset and metric value when non-null.
///
/// # Safety
/// `report` must be a live handle; `out` writable for `len` doubles;
/// `offset` and `metric` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fs_report_values(
    report: *const FsReport,
    index: usize,
    out: *mut f64,
    len: usize,
    offset: *mut f64,
    metric: *mut f64,
) -> FsStatus {
    guard(|| {
        let r = one(report, index)?;
        if len != r.phi.len() {
            return Err(Fail(FsStatus::OutOfRange, format!("buffer holds {len} values, report has {}", r.phi.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&r.phi);
        if let Some(o) = offset.as_mut() {
            *o = r.offset;
        }
        if let Some(m) = metric.as_mut() {
            *m = r.metric_value;
        }
        Ok(())
    })
}

/// Player name `player` of report `index`; free with [`fs_string_free`].
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_report_player_name(report: *const FsReport, index: usize, player: usize) -> *mut c_char {
    one(report, index)
        .ok()
        .and_then(|r| r.players.get(player))
        .map_or(ptr::null_mut(), |p| owned_string(p))
}

/// Report `index` as JSON; free with [`fs_string_free`]. Null on error.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_report_json(report: *const FsReport, index: usize) -> *mut c_char {
    let mut s = ptr::null_mut();
    guard(|| {
        s = owned_string(&one(report, index)?.to_json()?);
        Ok(())
    });
    s
}
