//! C ABI for densekit.
//!
//! Conventions: every object is an opaque handle created through an
//! `_init`/`_load`/`_build` function and released with its `_free` function;
//! fallible calls return a [`DkStatus`] and write results through out
//! pointers; the detail of the most recent error on the calling thread is
//! available from [`dk_last_error_message`]. Strings are NUL-terminated
//! UTF-8. The generated header lives at `include/densekit.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use libc::{c_char, size_t};

use densekit::corpus::{load_corpus, tokenize, Corpus, FileFormat};
use densekit::encoder::{score, DenseIndex, DualEncoderParams, Side};
use densekit::Error;

/// Status code returned by fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    /// Invalid argument or state (see `dk_last_error_message`).
    Invalid = 5,
    DimensionMismatch = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: DkStatus, msg: &str) -> DkStatus {
    set_error(msg);
    status
}

fn fail_with(err: Error) -> DkStatus {
    let status = match &err {
        Error::Io { .. } => DkStatus::Io,
        Error::Parse { .. } => DkStatus::Parse,
        Error::DimensionMismatch { .. } => DkStatus::DimensionMismatch,
        _ => DkStatus::Invalid,
    };
    set_error(&err.to_string());
    status
}

/// Message describing the most recent error on this thread. Valid until the
/// next failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn dk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static string.
#[no_mangle]
pub extern "C" fn dk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, DkStatus> {
    if ptr.is_null() {
        return Err(fail(DkStatus::NullArgument, "null path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(DkStatus::InvalidUtf8, "path is not valid UTF-8")),
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, DkStatus> {
    if ptr.is_null() {
        return Err(fail(DkStatus::NullArgument, "null string"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(DkStatus::InvalidUtf8, "string is not valid UTF-8"))
}

/// An immutable passage collection.
pub struct DkCorpus {
    inner: Corpus,
}

/// A dual-encoder parameter set (query and passage tables).
pub struct DkEncoder {
    inner: DualEncoderParams,
}

/// Frozen passage embeddings for exhaustive top-k search.
pub struct DkIndex {
    inner: DenseIndex,
}

/// A ranked search result. Ids are borrowed from the handle and stay valid
/// until it is freed.
pub struct DkHits {
    ids: Vec<CString>,
    scores: Vec<f64>,
}

/// Load a corpus from a TSV (`id<TAB>text`) or JSONL file.
/// `format` is `"tsv"` or `"jsonl"`.
///
/// # Safety
/// `path` and `format` must be NUL-terminated strings; `out` must be a valid
/// pointer. On success `*out` owns the corpus and must be released with
/// [`dk_corpus_free`].
#[no_mangle]
pub unsafe extern "C" fn dk_corpus_load(
    path: *const c_char,
    format: *const c_char,
    out: *mut *mut DkCorpus,
) -> DkStatus {
    if out.is_null() {
        return fail(DkStatus::NullArgument, "null out pointer");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let format = match str_arg(format) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let format: FileFormat = match format.parse() {
        Ok(f) => f,
        Err(e) => return fail_with(e),
    };
    match load_corpus(&path, format) {
        Ok(corpus) => {
            *out = Box::into_raw(Box::new(DkCorpus { inner: corpus }));
            DkStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Number of passages.
///
/// # Safety
/// `corpus` must be a live handle from [`dk_corpus_load`].
#[no_mangle]
pub unsafe extern "C" fn dk_corpus_len(corpus: *const DkCorpus) -> size_t {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).inner.len()
}

/// # Safety
/// `corpus` must be a handle from [`dk_corpus_load`] not yet freed; null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn dk_corpus_free(corpus: *mut DkCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Create a freshly initialized encoder (`hash_buckets x dim` per side).
///
/// # Safety
/// `out` must be valid; release the handle with [`dk_encoder_free`].
#[no_mangle]
pub unsafe extern "C" fn dk_encoder_init(
    hash_buckets: size_t,
    dim: size_t,
    seed: u64,
    out: *mut *mut DkEncoder,
) -> DkStatus {
    if out.is_null() {
        return fail(DkStatus::NullArgument, "null out pointer");
    }
    if hash_buckets == 0 || dim == 0 {
        return fail(DkStatus::Invalid, "hash_buckets and dim must be at least 1");
    }
    let params = DualEncoderParams::init(hash_buckets, dim, seed);
    *out = Box::into_raw(Box::new(DkEncoder { inner: params }));
    DkStatus::Ok
}

/// Load encoder parameters from a checkpoint file.
///
/// # Safety
/// As [`dk_encoder_init`]; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dk_encoder_load(
    path: *const c_char,
    out: *mut *mut DkEncoder,
) -> DkStatus {
    if out.is_null() {
        return fail(DkStatus::NullArgument, "null out pointer");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match DualEncoderParams::load(&path) {
        Ok(params) => {
            *out = Box::into_raw(Box::new(DkEncoder { inner: params }));
            DkStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Write encoder parameters to a checkpoint file (exact round-trip).
///
/// # Safety
/// `encoder` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dk_encoder_save(
    encoder: *const DkEncoder,
    path: *const c_char,
) -> DkStatus {
    if encoder.is_null() {
        return fail(DkStatus::NullArgument, "null encoder");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match (*encoder).inner.save(&path) {
        Ok(()) => DkStatus::Ok,
        Err(e) => fail_with(e),
    }
}

/// Embedding dimension of an encoder.
///
/// # Safety
/// `encoder` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_encoder_dim(encoder: *const DkEncoder) -> size_t {
    if encoder.is_null() {
        return 0;
    }
    (*encoder).inner.dim
}

/// # Safety
/// `encoder` must be a handle not yet freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dk_encoder_free(encoder: *mut DkEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

unsafe fn encode_side(
    encoder: *const DkEncoder,
    text: *const c_char,
    out_vec: *mut f64,
    side: Side,
) -> DkStatus {
    if encoder.is_null() {
        return fail(DkStatus::NullArgument, "null encoder");
    }
    if out_vec.is_null() {
        return fail(DkStatus::NullArgument, "null output buffer");
    }
    let text = match str_arg(text) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let params = &(*encoder).inner;
    let vec = params.encode(side, &tokenize(text, side.max_tokens()));
    ptr::copy_nonoverlapping(vec.as_ptr(), out_vec, params.dim);
    DkStatus::Ok
}

/// Encode a query text into `out_vec`, which must hold `dk_encoder_dim`
/// doubles.
///
/// # Safety
/// `encoder` must be live, `text` NUL-terminated, `out_vec` sized to the
/// encoder dimension.
#[no_mangle]
pub unsafe extern "C" fn dk_encode_query(
    encoder: *const DkEncoder,
    text: *const c_char,
    out_vec: *mut f64,
) -> DkStatus {
    encode_side(encoder, text, out_vec, Side::Query)
}

/// Encode a passage text into `out_vec` (see [`dk_encode_query`]).
///
/// # Safety
/// As [`dk_encode_query`].
#[no_mangle]
pub unsafe extern "C" fn dk_encode_passage(
    encoder: *const DkEncoder,
    text: *const c_char,
    out_vec: *mut f64,
) -> DkStatus {
    encode_side(encoder, text, out_vec, Side::Passage)
}

/// Dot-product relevance score of two equal-length vectors.
///
/// # Safety
/// `a` and `b` must point to `dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_score(
    a: *const f64,
    b: *const f64,
    dim: size_t,
    out: *mut f64,
) -> DkStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return fail(DkStatus::NullArgument, "null vector argument");
    }
    let a = std::slice::from_raw_parts(a, dim);
    let b = std::slice::from_raw_parts(b, dim);
    match score(a, b) {
        Ok(s) => {
            *out = s;
            DkStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Encode every corpus passage with the encoder's passage side.
///
/// # Safety
/// `encoder` and `corpus` must be live handles; release `*out` with
/// [`dk_index_free`].
#[no_mangle]
pub unsafe extern "C" fn dk_index_build(
    encoder: *const DkEncoder,
    corpus: *const DkCorpus,
    out: *mut *mut DkIndex,
) -> DkStatus {
    if encoder.is_null() || corpus.is_null() || out.is_null() {
        return fail(DkStatus::NullArgument, "null argument");
    }
    let index = DenseIndex::build(&(*encoder).inner, &(*corpus).inner);
    *out = Box::into_raw(Box::new(DkIndex { inner: index }));
    DkStatus::Ok
}

/// # Safety
/// `index` must be a handle not yet freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dk_index_free(index: *mut DkIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Exact top-k passages for a query text by dot product, ties broken by
/// ascending passage id.
///
/// # Safety
/// All handles must be live; `query_text` NUL-terminated; release `*out`
/// with [`dk_hits_free`].
#[no_mangle]
pub unsafe extern "C" fn dk_index_search(
    index: *const DkIndex,
    encoder: *const DkEncoder,
    query_text: *const c_char,
    k: size_t,
    out: *mut *mut DkHits,
) -> DkStatus {
    if index.is_null() || encoder.is_null() || out.is_null() {
        return fail(DkStatus::NullArgument, "null argument");
    }
    if k == 0 {
        return fail(DkStatus::Invalid, "k must be at least 1");
    }
    let text = match str_arg(query_text) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let params = &(*encoder).inner;
    let q_vec = params.encode(Side::Query, &tokenize(text, Side::Query.max_tokens()));
    let hits = (*index).inner.topk(&q_vec, k);
    let mut ids = Vec::with_capacity(hits.len());
    let mut scores = Vec::with_capacity(hits.len());
    for (id, s) in hits {
        // Passage ids are UTF-8 without interior NULs by construction.
        ids.push(CString::new(id).unwrap_or_default());
        scores.push(s);
    }
    *out = Box::into_raw(Box::new(DkHits { ids, scores }));
    DkStatus::Ok
}

/// Number of hits.
///
/// # Safety
/// `hits` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_hits_len(hits: *const DkHits) -> size_t {
    if hits.is_null() {
        return 0;
    }
    (*hits).ids.len()
}

/// Passage id of hit `i`, or null when out of range. Borrowed from the
/// handle; valid until [`dk_hits_free`].
///
/// # Safety
/// `hits` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_hits_id(hits: *const DkHits, i: size_t) -> *const c_char {
    if hits.is_null() {
        return ptr::null();
    }
    match (&(*hits).ids).get(i) {
        Some(id) => id.as_ptr(),
        None => ptr::null(),
    }
}

/// Score of hit `i`, or NaN when out of range.
///
/// # Safety
/// `hits` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_hits_score(hits: *const DkHits, i: size_t) -> f64 {
    if hits.is_null() {
        return f64::NAN;
    }
    (&(*hits).scores).get(i).copied().unwrap_or(f64::NAN)
}

/// # Safety
/// `hits` must be a handle not yet freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dk_hits_free(hits: *mut DkHits) {
    if !hits.is_null() {
        drop(Box::from_raw(hits));
    }
}
