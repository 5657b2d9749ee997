//! C ABI over the `reshmm` library.
//!
//! Models and segmentations are opaque handles owned by the caller and
//! released with the matching `*_free` function. Every function returns a
//! [`ReshmmStatus`]; on failure a description is available from
//! [`reshmm_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use reshmm::evaluation::score_waveform;
use reshmm::inference::{loglik, predict_all, viterbi, Segmentation};
use reshmm::io::{load_model, model_from_json, model_to_json, save_model};
use reshmm::learning::{fit, FitConfig, TrainingCorpus};
use reshmm::model::{ModelParams, WaveformSeries};
use reshmm::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReshmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    ConfigError = 4,
    NumericalFailure = 5,
    NoSupport = 6,
    IoError = 7,
    Panic = 8,
}

/// Fitted model parameters.
pub struct ReshmmModel {
    params: ModelParams,
}

/// Most likely segmentation of one waveform.
pub struct ReshmmSegmentation {
    inner: Segmentation,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReshmmScores {
    pub logp: f64,
    pub score_shape: f64,
    pub score_noise: f64,
}

/// `state` and `start` are 1-based.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReshmmSegment {
    pub state: usize,
    pub start: usize,
    pub duration: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReshmmFitOptions {
    pub num_states: usize,
    /// 0 selects the length of the longest waveform.
    pub d_max: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Nonzero fits random effects; zero fits the plain model.
    pub random_effects: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ReshmmStatus {
    match e {
        Error::Data(_) | Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => ReshmmStatus::DataError,
        Error::Config(_) => ReshmmStatus::ConfigError,
        Error::Domain(_) => ReshmmStatus::InvalidArgument,
        Error::Numerical(_) => ReshmmStatus::NumericalFailure,
        Error::NoSupport { .. } => ReshmmStatus::NoSupport,
        Error::Io { .. } => ReshmmStatus::IoError,
    }
}

struct Fail(ReshmmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ReshmmStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> ReshmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ReshmmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            ReshmmStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const ReshmmModel) -> Result<&'a ReshmmModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(ReshmmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn waveform(y: *const f64, len: usize) -> Result<WaveformSeries, Fail> {
    if y.is_null() {
        return Err(null("waveform"));
    }
    if len == 0 {
        return Err(Fail(ReshmmStatus::InvalidArgument, "waveform is empty".into()));
    }
    Ok(WaveformSeries::new("ffi", std::slice::from_raw_parts(y, len).to_vec())?)
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn reshmm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn reshmm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn reshmm_model_from_json(json: *const c_char, out: *mut *mut ReshmmModel) -> ReshmmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let params = model_from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(ReshmmModel { params }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn reshmm_model_load(path: *const c_char, out: *mut *mut ReshmmModel) -> ReshmmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let params = load_model(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(ReshmmModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn reshmm_model_save(model: *const ReshmmModel, path: *const c_char) -> ReshmmStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_model(Path::new(str_arg(path, "path")?), &m.params)?;
        Ok(())
    })
}

/// Serializes the model. Release the string with [`reshmm_string_free`].
///
/// # Safety
/// `model` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_model_to_json(model: *const ReshmmModel, out: *mut *mut c_char) -> ReshmmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ptr(out, "out")?;
        let text = model_to_json(&m.params)?;
        *out = CString::new(text)
            .map_err(|_| Fail(ReshmmStatus::DataError, "model JSON contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn reshmm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `model` must be null or a handle returned by this library.
#[no_mangle]
pub unsafe extern "C" fn reshmm_model_free(model: *mut ReshmmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_model_num_states(model: *const ReshmmModel, out: *mut usize) -> ReshmmStatus {
    guard(|| {
        *out_ptr(out, "out")? = model_ref(model)?.params.num_states();
        Ok(())
    })
}

/// Log-likelihood of one waveform; `-inf` when it has no support.
///
/// # Safety
/// `y` must point to `len` doubles; `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_loglik(
    model: *const ReshmmModel,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> ReshmmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ptr(out, "out")?;
        *out = loglik(&waveform(y, len)?, &m.params)?;
        Ok(())
    })
}

/// # Safety
/// `y` must point to `len` doubles; `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_score(
    model: *const ReshmmModel,
    y: *const f64,
    len: usize,
    out: *mut ReshmmScores,
) -> ReshmmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ptr(out, "out")?;
        let s = score_waveform(&waveform(y, len)?, &m.params)?;
        *out = ReshmmScores {
            logp: s.logp,
            score_shape: s.score_shape,
            score_noise: s.score_noise,
        };
        Ok(())
    })
}

/// # Safety
/// `y` must point to `len` doubles; `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_segment(
    model: *const ReshmmModel,
    y: *const f64,
    len: usize,
    out: *mut *mut ReshmmSegmentation,
) -> ReshmmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ptr(out, "out")?;
        let inner = viterbi(&waveform(y, len)?, &m.params)?;
        *out = Box::into_raw(Box::new(ReshmmSegmentation { inner }));
        Ok(())
    })
}

/// # Safety
/// `seg` must come from [`reshmm_segment`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_segmentation_len(seg: *const ReshmmSegmentation, out: *mut usize) -> ReshmmStatus {
    guard(|| {
        let s = seg.as_ref().ok_or_else(|| null("segmentation"))?;
        *out_ptr(out, "out")? = s.inner.segments.len();
        Ok(())
    })
}

/// # Safety
/// `seg` must come from [`reshmm_segment`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_segmentation_get(
    seg: *const ReshmmSegmentation,
    index: usize,
    out: *mut ReshmmSegment,
) -> ReshmmStatus {
    guard(|| {
        let s = seg.as_ref().ok_or_else(|| null("segmentation"))?;
        let out = out_ptr(out, "out")?;
        let g = s.inner.segments.get(index).ok_or_else(|| {
            Fail(
                ReshmmStatus::InvalidArgument,
                format!("segment index {index} out of range (len {})", s.inner.segments.len()),
            )
        })?;
        *out = ReshmmSegment {
            state: g.state,
            start: g.start,
            duration: g.duration,
        };
        Ok(())
    })
}

/// # Safety
/// `seg` must come from [`reshmm_segment`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_segmentation_log_joint(seg: *const ReshmmSegmentation, out: *mut f64) -> ReshmmStatus {
    guard(|| {
        let s = seg.as_ref().ok_or_else(|| null("segmentation"))?;
        *out_ptr(out, "out")? = s.inner.log_joint;
        Ok(())
    })
}

/// # Safety
/// `seg` must be null or a handle returned by [`reshmm_segment`].
#[no_mangle]
pub unsafe extern "C" fn reshmm_segmentation_free(seg: *mut ReshmmSegmentation) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// One-step-ahead forecasts and predictive log-densities for `t = 1..len`.
/// Both output buffers must hold `len` doubles; either may be null.
///
/// # Safety
/// `y` must point to `len` doubles and non-null outputs to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn reshmm_predict(
    model: *const ReshmmModel,
    y: *const f64,
    len: usize,
    forecasts: *mut f64,
    log_densities: *mut f64,
) -> ReshmmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let p = predict_all(&waveform(y, len)?, &m.params)?;
        if !forecasts.is_null() {
            std::slice::from_raw_parts_mut(forecasts, len).copy_from_slice(&p.forecasts);
        }
        if !log_densities.is_null() {
            std::slice::from_raw_parts_mut(log_densities, len).copy_from_slice(&p.log_densities);
        }
        Ok(())
    })
}

/// Fills `out` with the default options for `num_states` states.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn reshmm_fit_options_default(num_states: usize, out: *mut ReshmmFitOptions) -> ReshmmStatus {
    guard(|| {
        let c = FitConfig::new(num_states);
        *out_ptr(out, "out")? = ReshmmFitOptions {
            num_states,
            d_max: 0,
            max_iter: c.max_iter,
            rel_tol: c.rel_tol,
            random_effects: 1,
        };
        Ok(())
    })
}

/// Fits a model by EM. The corpus is passed as concatenated samples with
/// one length per waveform. `iterations` may be null.
///
/// # Safety
/// `values` must hold the sum of `lengths[0..n_waveforms]` doubles;
/// `lengths` must hold `n_waveforms` entries.
#[no_mangle]
pub unsafe extern "C" fn reshmm_fit(
    values: *const f64,
    lengths: *const usize,
    n_waveforms: usize,
    options: *const ReshmmFitOptions,
    out: *mut *mut ReshmmModel,
    iterations: *mut usize,
) -> ReshmmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let opts = options.as_ref().ok_or_else(|| null("options"))?;
        if values.is_null() || lengths.is_null() {
            return Err(null("corpus"));
        }
        let lengths = std::slice::from_raw_parts(lengths, n_waveforms);
        let total: usize = lengths.iter().sum();
        let values = std::slice::from_raw_parts(values, total);
        let mut waves = Vec::with_capacity(n_waveforms);
        let mut at = 0;
        for (i, &n) in lengths.iter().enumerate() {
            waves.push(WaveformSeries::new(format!("w{i}"), values[at..at + n].to_vec())?);
            at += n;
        }
        let corpus = TrainingCorpus::new(waves)?;
        let config = FitConfig {
            num_states: opts.num_states,
            d_max: (opts.d_max > 0).then_some(opts.d_max),
            max_iter: opts.max_iter,
            rel_tol: opts.rel_tol,
            random_effects: opts.random_effects != 0,
        };
        let report = fit(&corpus, &config)?;
        if let Some(it) = iterations.as_mut() {
            *it = report.iterations;
        }
        *out = Box::into_raw(Box::new(ReshmmModel { params: report.params }));
        Ok(())
    })
}
