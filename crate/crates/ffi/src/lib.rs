//! C ABI over the `ifdid` library.
//!
//! Every function returns an [`IfdidStatus`]. On failure a message is kept
//! per thread and can be read with [`ifdid_last_error`]. Results are written
//! through out-pointers; strings returned by the library must be released
//! with [`ifdid_string_free`] and models with [`ifdid_model_free`].
//!
//! Probability vectors cross the boundary as `(const double *, size_t)`
//! pairs and are validated on entry. Output buffers must have the same
//! length as the input vector (or the model vocabulary).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde::{Deserialize, Serialize};

use ifdid::decode::{DecodeConfig, Decoder, Selection, StepDiagnostics, Strategy, Termination};
use ifdid::dist::{clamp_extremes, entropy, ExtremenessPolicy, ProbDist};
use ifdid::enhance::{gamma_transform, FrozenSet};
use ifdid::filter::{filter, FilterParams};
use ifdid::lm::{LanguageModel, NGramLm, Smoothing};
use ifdid::vocab::{Corpus, TokenizeMode, Vocabulary};
use ifdid::{Error, TokenId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfdidStatus {
    Ok = 0,
    /// Null pointer, bad length, out-of-range id or invalid parameter.
    InvalidArgument = 1,
    Io = 2,
    /// Malformed model file, JSON request or non-UTF-8 string.
    Parse = 3,
    /// Probabilities that are not a distribution, or an undefined quantity.
    Numeric = 4,
    EndOfStream = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 99,
}

/// Opaque n-gram model together with its vocabulary.
pub struct IfdidModel {
    lm: NGramLm,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(IfdidStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parameter(_) | Error::Config(_) | Error::SetOverlap(_) => IfdidStatus::InvalidArgument,
            Error::InvalidWeights(_) | Error::UndefinedInformation(_) => IfdidStatus::Numeric,
            Error::EndOfStream(_) => IfdidStatus::EndOfStream,
            Error::Parse { .. } | Error::Json(_) => IfdidStatus::Parse,
            Error::Io { .. } => IfdidStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(IfdidStatus::Parse, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(IfdidStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IfdidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IfdidStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            IfdidStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(IfdidStatus::Parse, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, expected: usize) -> Result<&'a mut [f64], Failure> {
    if len != expected {
        return Err(invalid(format!("output buffer holds {len} values, need {expected}")));
    }
    if p.is_null() {
        return Err(invalid("output buffer is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const IfdidModel) -> Result<&'a IfdidModel, Failure> {
    m.as_ref().ok_or_else(|| invalid("model is null"))
}

unsafe fn dist_arg(probs: *const f64, len: usize) -> Result<ProbDist, Failure> {
    Ok(ProbDist::new(slice_arg(probs, len, "probs")?.to_vec())?)
}

unsafe fn write_dist(dist: &ProbDist, out: *mut f64, out_len: usize) -> Result<(), Failure> {
    out_slice(out, out_len, dist.len())?.copy_from_slice(dist.as_slice());
    Ok(())
}

fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    unsafe { out.write(value) };
    Ok(())
}

/// Message describing why the previous call on this thread failed, or null
/// if it succeeded. The pointer is valid until the next call into the
/// library on the same thread.
#[no_mangle]
pub extern "C" fn ifdid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ifdid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Trains an add-k n-gram model on a whitespace-tokenized corpus, one
/// document per line.
///
/// # Safety
/// `corpus_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifdid_model_train(
    corpus_path: *const c_char,
    order: usize,
    add_k: f64,
    out: *mut *mut IfdidModel,
) -> IfdidStatus {
    guard(|| {
        let path = Path::new(str_arg(corpus_path, "corpus_path")?);
        let vocab = Vocabulary::build_from_file(path, TokenizeMode::Whitespace, 1)?;
        let corpus = Corpus::load(path, &vocab, TokenizeMode::Whitespace)?;
        let lm = NGramLm::train(&corpus, vocab, order, Smoothing::AddK(add_k))?;
        put(out, Box::into_raw(Box::new(IfdidModel { lm })))
    })
}

/// Loads a model saved by [`ifdid_model_save`] or the `train-lm` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifdid_model_load(path: *const c_char, out: *mut *mut IfdidModel) -> IfdidStatus {
    guard(|| {
        let lm = NGramLm::load(Path::new(str_arg(path, "path")?))?;
        put(out, Box::into_raw(Box::new(IfdidModel { lm })))
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ifdid_model_save(model: *const IfdidModel, path: *const c_char) -> IfdidStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.lm.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ifdid_model_free(model: *mut IfdidModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifdid_model_vocab_size(model: *const IfdidModel, out: *mut usize) -> IfdidStatus {
    guard(|| put(out, model_ref(model)?.lm.vocab_size()))
}

/// Id of `token`; unknown tokens fail with `INVALID_ARGUMENT`.
///
/// # Safety
/// `model` must come from this library, `token` be NUL-terminated and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifdid_model_token_id(
    model: *const IfdidModel,
    token: *const c_char,
    out: *mut usize,
) -> IfdidStatus {
    guard(|| {
        let m = model_ref(model)?;
        let t = str_arg(token, "token")?;
        let id =
            m.lm.vocab()
                .id(t)
                .ok_or_else(|| invalid(format!("unknown token {t:?}")))?;
        put(out, id)
    })
}

/// Next-token distribution after `context` (token ids, BOS not included).
/// `out` must hold exactly the vocabulary size.
///
/// # Safety
/// `context` must point to `context_len` ids and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifdid_model_next_distribution(
    model: *const IfdidModel,
    context: *const usize,
    context_len: usize,
    out: *mut f64,
    out_len: usize,
) -> IfdidStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ctx = slice_arg(context, context_len, "context")?;
        let n = m.lm.vocab_size();
        if let Some(&t) = ctx.iter().find(|&&t| t >= n) {
            return Err(invalid(format!("context id {t} outside vocabulary of {n}")));
        }
        write_dist(&m.lm.next_distribution(ctx)?, out, out_len)
    })
}

/// Shannon entropy in nats.
///
/// # Safety
/// `probs` must point to `len` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifdid_entropy(probs: *const f64, len: usize, out: *mut f64) -> IfdidStatus {
    guard(|| put(out, entropy(&dist_arg(probs, len)?)))
}

/// Raises `typical` to the power set by `gamma`, keeps `frozen` entries
/// fixed and moves the difference proportionally onto the remaining tokens.
///
/// # Safety
/// Pointers must reference arrays of the given lengths; `out` must hold
/// `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifdid_gamma_transform(
    probs: *const f64,
    len: usize,
    typical: *const usize,
    typical_len: usize,
    frozen: *const usize,
    frozen_len: usize,
    gamma: f64,
    out: *mut f64,
) -> IfdidStatus {
    guard(|| {
        let d = dist_arg(probs, len)?;
        let typical = slice_arg(typical, typical_len, "typical")?.iter().copied().collect();
        let frozen: FrozenSet = slice_arg(frozen, frozen_len, "frozen")?.iter().copied().collect();
        let (q, _) = gamma_transform(&d, &typical, &frozen, gamma)?;
        write_dist(&q, out, len)
    })
}

/// Keeps tokens whose information lies within `epsilon` of the entropy and
/// renormalizes.
///
/// # Safety
/// `probs` and `out` must each reference `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifdid_filter(probs: *const f64, len: usize, epsilon: f64, out: *mut f64) -> IfdidStatus {
    guard(|| {
        let params = FilterParams::new(epsilon)?;
        write_dist(&filter(&dist_arg(probs, len)?, &params), out, len)
    })
}

/// Lifts nonzero entries below `threshold` to it and renormalizes once.
///
/// # Safety
/// `probs` and `out` must each reference `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifdid_clamp(probs: *const f64, len: usize, threshold: f64, out: *mut f64) -> IfdidStatus {
    guard(|| {
        let policy = ExtremenessPolicy::new(threshold)?;
        write_dist(&clamp_extremes(&dist_arg(probs, len)?, policy), out, len)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecodeRequest {
    strategy: Strategy,
    max_length: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    stream: u64,
    /// Whitespace-separated conditioning text.
    #[serde(default)]
    prompt: String,
    /// Input pieces (concepts, keywords) as whitespace-separated text.
    #[serde(default)]
    pieces: Vec<String>,
    #[serde(default)]
    clamp: Option<bool>,
    #[serde(default)]
    selection: Selection,
}

#[derive(Serialize)]
struct DecodeResponse<'a> {
    tokens: Vec<String>,
    ids: &'a [TokenId],
    termination: Termination,
    per_step: &'a [StepDiagnostics],
}

/// Decodes one sequence. `request_json` is an object with `strategy`
/// (e.g. `{"kind":"top_k","k":5}`), `max_length` and optionally `seed`,
/// `stream`, `prompt`, `pieces`, `clamp` and `selection`. On success `*out`
/// receives a JSON object with `tokens`, `ids`, `termination` and
/// `per_step`, to be released with [`ifdid_string_free`].
///
/// # Safety
/// `model` must come from this library, `request_json` be NUL-terminated and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifdid_decode(
    model: *const IfdidModel,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> IfdidStatus {
    guard(|| {
        let m = model_ref(model)?;
        let req: DecodeRequest = serde_json::from_str(str_arg(request_json, "request_json")?)?;
        let vocab = m.lm.vocab();
        let encode = |s: &str| vocab.encode_text(s, TokenizeMode::Whitespace);
        let mut cfg = DecodeConfig::new(req.strategy, req.max_length)
            .with_seed(req.seed)
            .with_stream(req.stream)
            .with_prompt(encode(&req.prompt))
            .with_pieces(req.pieces.iter().map(|p| encode(p)).collect());
        cfg.clamp = req.clamp;
        cfg.selection = req.selection;
        let rec = Decoder::new(&m.lm, vocab).decode(&cfg)?;
        let json = serde_json::to_string(&DecodeResponse {
            tokens: vocab.decode(&rec.tokens),
            ids: &rec.tokens,
            termination: rec.termination,
            per_step: &rec.steps,
        })?;
        put(out, CString::new(json).expect("JSON has no NUL").into_raw())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ifdid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
