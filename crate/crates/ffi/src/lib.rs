//! C ABI over the layerforge core.
//!
//! Every fallible function returns an [`LfStatus`]; on failure the message
//! is available from [`lf_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. Layer
//! indices are 1-based, as in the core library.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use layerforge::corpus::{load_corpus_with, LoadOptions, Split};
use layerforge::cv::{cross_validate, make_folds};
use layerforge::metrics;
use layerforge::ridge;
use layerforge::{AlphaGrid, Corpus, Error, LayerSet, RidgeModel, SelectionConfig, SelectionTrace};
use nalgebra::DMatrix;

/// Status codes. 1-3 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    Data = 1,
    Format = 2,
    Usage = 3,
    NullPointer = 4,
    Panic = 5,
    Io = 6,
}

/// A loaded, validated corpus.
pub struct LfCorpus {
    corpus: Corpus,
    ids: Vec<CString>,
}

/// Result of a greedy layer selection.
pub struct LfTrace {
    trace: SelectionTrace,
    csv: CString,
}

/// A fitted ridge model.
pub struct LfRidge {
    model: RidgeModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LfCvResult {
    pub mean_mse: f64,
    pub std_err: f64,
    pub alpha_star: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LfSelectOptions {
    pub max_layers: usize,
    pub epsilon: f64,
    pub k: usize,
    pub seed: u64,
    pub standardize: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LfTTest {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
    pub mean_diff: f64,
    pub degenerate: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LfStatus {
    match e {
        Error::Io { .. } => LfStatus::Io,
        Error::Fold { source, .. } => status_of(source),
        _ => match e.exit_code() {
            2 => LfStatus::Format,
            3 => LfStatus::Usage,
            _ => LfStatus::Data,
        },
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LfStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            LfStatus::Panic
        }
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::Usage(msg.into()))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| usage(format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn layer_set(layers: *const usize, n: usize) -> Result<LayerSet, Failure> {
    Ok(LayerSet::new(as_slice(layers, n, "layers")?.to_vec())?)
}

unsafe fn grid(alphas: *const f64, n: usize) -> Result<AlphaGrid, Failure> {
    if n == 0 {
        Ok(AlphaGrid::default())
    } else {
        Ok(AlphaGrid::new(as_slice(alphas, n, "alphas")?.to_vec())?)
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load and validate a corpus. `min_words` is inclusive.
#[no_mangle]
pub unsafe extern "C" fn lf_corpus_load(
    embeddings_path: *const c_char,
    outcomes_path: *const c_char,
    min_words: u64,
    out: *mut *mut LfCorpus,
) -> LfStatus {
    guard(|| {
        let emb = as_str(embeddings_path, "embeddings_path")?;
        let outc = as_str(outcomes_path, "outcomes_path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let opts = LoadOptions {
            min_words,
            strict_range: false,
            split: Split::Train,
        };
        let corpus = load_corpus_with(emb, outc, &opts)?;
        let ids = corpus
            .user_ids()
            .into_iter()
            .map(|id| CString::new(id).unwrap_or_default())
            .collect();
        out.write(Box::into_raw(Box::new(LfCorpus { corpus, ids })));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_corpus_free(corpus: *mut LfCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of users; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn lf_corpus_num_users(corpus: *const LfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.len())
}

#[no_mangle]
pub unsafe extern "C" fn lf_corpus_num_layers(corpus: *const LfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.num_layers())
}

#[no_mangle]
pub unsafe extern "C" fn lf_corpus_hidden_dim(corpus: *const LfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.hidden_dim())
}

/// The `i`-th user id in sorted order, owned by the handle; null when out
/// of range.
#[no_mangle]
pub unsafe extern "C" fn lf_corpus_user_id(corpus: *const LfCorpus, i: usize) -> *const c_char {
    corpus
        .as_ref()
        .and_then(|c| c.ids.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Cross-validate one layer set. Pass `n_alphas = 0` for the default grid.
#[no_mangle]
pub unsafe extern "C" fn lf_cross_validate(
    corpus: *const LfCorpus,
    layers: *const usize,
    n_layers: usize,
    k: usize,
    seed: u64,
    alphas: *const f64,
    n_alphas: usize,
    standardize: bool,
    out: *mut LfCvResult,
) -> LfStatus {
    guard(|| {
        let c = &as_ref(corpus, "corpus")?.corpus;
        let ls = layer_set(layers, n_layers)?;
        let grid = grid(alphas, n_alphas)?;
        let folds = make_folds(&c.user_ids(), k, seed)?;
        let r = cross_validate(c, &ls, &folds, &grid, standardize)?;
        write_out(
            out,
            LfCvResult {
                mean_mse: r.mean_mse,
                std_err: r.std_err,
                alpha_star: r.alpha_star,
            },
            "out",
        )
    })
}

/// Default selection options.
#[no_mangle]
pub extern "C" fn lf_select_options_default() -> LfSelectOptions {
    let d = SelectionConfig::default();
    LfSelectOptions {
        max_layers: d.max_layers,
        epsilon: d.epsilon,
        k: d.k,
        seed: d.seed,
        standardize: d.standardize,
    }
}

/// Greedy forward layer selection over the default α grid. `options` may
/// be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn lf_greedy_select(
    corpus: *const LfCorpus,
    options: *const LfSelectOptions,
    out: *mut *mut LfTrace,
) -> LfStatus {
    guard(|| {
        let c = &as_ref(corpus, "corpus")?.corpus;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let o = options.as_ref().copied().unwrap_or_else(|| lf_select_options_default());
        let cfg = SelectionConfig {
            max_layers: o.max_layers,
            epsilon: o.epsilon,
            k: o.k,
            seed: o.seed,
            standardize: o.standardize,
            ..SelectionConfig::default()
        };
        let trace = layerforge::greedy_select(c, &cfg)?;
        let csv = CString::new(trace.to_csv()).unwrap_or_default();
        out.write(Box::into_raw(Box::new(LfTrace { trace, csv })));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_trace_free(trace: *mut LfTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Size of the recommended layer set.
#[no_mangle]
pub unsafe extern "C" fn lf_trace_num_recommended(trace: *const LfTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.recommended.len())
}

/// Copy up to `cap` recommended layers, in selection order, into `out`.
/// Returns the full count.
#[no_mangle]
pub unsafe extern "C" fn lf_trace_recommended(trace: *const LfTrace, out: *mut usize, cap: usize) -> usize {
    let Some(t) = trace.as_ref() else { return 0 };
    let layers = t.trace.recommended.layers();
    if !out.is_null() {
        for (i, &l) in layers.iter().take(cap).enumerate() {
            out.add(i).write(l);
        }
    }
    layers.len()
}

#[no_mangle]
pub unsafe extern "C" fn lf_trace_mean_mse(trace: *const LfTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.trace.recommended_mean_mse)
}

#[no_mangle]
pub unsafe extern "C" fn lf_trace_alpha(trace: *const LfTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.trace.recommended_alpha)
}

#[no_mangle]
pub unsafe extern "C" fn lf_trace_num_stages(trace: *const LfTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.stages.len())
}

/// The full trace as CSV, owned by the handle.
#[no_mangle]
pub unsafe extern "C" fn lf_trace_csv(trace: *const LfTrace) -> *const c_char {
    trace.as_ref().map_or(ptr::null(), |t| t.csv.as_ptr())
}

unsafe fn matrix(x: *const f64, n: usize, p: usize) -> Result<DMatrix<f64>, Failure> {
    let len = n.checked_mul(p).ok_or_else(|| usage("n * p overflows"))?;
    Ok(DMatrix::from_row_slice(n, p, as_slice(x, len, "x")?))
}

/// Fit ridge on a row-major `n x p` matrix.
#[no_mangle]
pub unsafe extern "C" fn lf_ridge_fit(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    alpha: f64,
    standardize: bool,
    out: *mut *mut LfRidge,
) -> LfStatus {
    guard(|| {
        let x = matrix(x, n, p)?;
        let y = as_slice(y, n, "y")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = ridge::fit(&x, y, alpha, standardize)?;
        out.write(Box::into_raw(Box::new(LfRidge { model })));
        Ok(())
    })
}

/// Predict for a row-major `n x p` matrix into `out[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn lf_ridge_predict(
    model: *const LfRidge,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut f64,
) -> LfStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.model;
        let x = matrix(x, n, p)?;
        let yhat = m.predict(&x)?;
        if n > 0 && out.is_null() {
            return Err(Failure::Null("out"));
        }
        for (i, v) in yhat.into_iter().enumerate() {
            out.add(i).write(v);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_ridge_alpha(model: *const LfRidge) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.model.alpha)
}

#[no_mangle]
pub unsafe extern "C" fn lf_ridge_free(model: *mut LfRidge) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lf_pearson_r(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> LfStatus {
    guard(|| {
        let r = metrics::pearson_r(as_slice(x, n, "x")?, as_slice(y, n, "y")?)?;
        write_out(out, r, "out")
    })
}

/// Two-sided paired t-test of `a - b`.
#[no_mangle]
pub unsafe extern "C" fn lf_paired_t_test(a: *const f64, b: *const f64, n: usize, out: *mut LfTTest) -> LfStatus {
    guard(|| {
        let r = metrics::paired_t_test(as_slice(a, n, "a")?, as_slice(b, n, "b")?)?;
        write_out(
            out,
            LfTTest {
                t: r.t,
                df: r.df,
                p_two_sided: r.p_two_sided,
                mean_diff: r.mean_diff,
                degenerate: r.degenerate,
            },
            "out",
        )
    })
}

/// Correct a correlation for measurement unreliability.
#[no_mangle]
pub unsafe extern "C" fn lf_disattenuate(r: f64, rel_x: f64, rel_y: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        let d = metrics::disattenuate(r, rel_x, rel_y)?;
        write_out(out, d.r_dis, "out")
    })
}
