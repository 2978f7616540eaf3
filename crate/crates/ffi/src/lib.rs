//! C ABI over the retrieval engine.
//!
//! Every fallible call returns an [`ArStatus`]; on failure the message is
//! available from [`ar_last_error`] on the same thread. Strings returned
//! through `out` pointers are owned by the caller and released with
//! [`ar_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use analog_retrieval::encoders::{Embedding, TriModalModel};
use analog_retrieval::graph::build_graph;
use analog_retrieval::index::EmbeddingIndex;
use analog_retrieval::spice::parse_netlist;

/// Result codes. `AR_OK` is zero; everything else is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    GraphError = 4,
    IoError = 5,
    CheckpointError = 6,
    EncodeError = 7,
    IndexError = 8,
    BufferTooSmall = 9,
    Panic = 99,
}

/// Opaque model handle.
pub struct ArModel(TriModalModel);

/// Opaque index handle.
pub struct ArIndex(EmbeddingIndex);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let c = CString::new(msg.to_string().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Outcome = Result<(), (ArStatus, String)>;

fn guard(f: impl FnOnce() -> Outcome) -> ArStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ArStatus::Panic
        }
    }
}

fn fail<E: ToString>(status: ArStatus) -> impl FnOnce(E) -> (ArStatus, String) {
    move |e| (status, e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ArStatus, String)> {
    if p.is_null() {
        return Err((ArStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (ArStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Outcome {
    if out.is_null() {
        return Err((ArStatus::NullArgument, "output pointer is null".into()));
    }
    *out = CString::new(s).map_err(fail(ArStatus::InvalidUtf8))?.into_raw();
    Ok(())
}

unsafe fn write_vector(e: Embedding, out: *mut f64, len: usize) -> Outcome {
    if out.is_null() {
        return Err((ArStatus::NullArgument, "output buffer is null".into()));
    }
    if len < e.vector.len() {
        return Err((ArStatus::BufferTooSmall, format!("buffer holds {len}, need {}", e.vector.len())));
    }
    ptr::copy_nonoverlapping(e.vector.as_ptr(), out, e.vector.len());
    Ok(())
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or null if none.
/// Free with [`ar_string_free`].
#[no_mangle]
pub extern "C" fn ar_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses netlist text and writes its JSON form to `*out_json`.
///
/// # Safety
/// `netlist` must be a valid nul-terminated string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ar_parse_netlist_json(netlist: *const c_char, out_json: *mut *mut c_char) -> ArStatus {
    guard(|| {
        let ir = parse_netlist(read_str(netlist, "netlist")?).map_err(fail(ArStatus::ParseError))?;
        write_string(out_json, serde_json::to_string(&ir).expect("serializes"))
    })
}

/// Parses netlist text and writes its circuit graph as JSON to `*out_json`.
///
/// # Safety
/// As for [`ar_parse_netlist_json`].
#[no_mangle]
pub unsafe extern "C" fn ar_graph_json(netlist: *const c_char, out_json: *mut *mut c_char) -> ArStatus {
    guard(|| {
        let ir = parse_netlist(read_str(netlist, "netlist")?).map_err(fail(ArStatus::ParseError))?;
        let g = build_graph(&ir).map_err(fail(ArStatus::GraphError))?;
        write_string(out_json, serde_json::to_string(&g).expect("serializes"))
    })
}

/// Loads a checkpoint. On success `*out` holds a handle to free with
/// [`ar_model_free`].
///
/// # Safety
/// `path` must be a valid nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ar_model_load(path: *const c_char, out: *mut *mut ArModel) -> ArStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        if out.is_null() {
            return Err((ArStatus::NullArgument, "output pointer is null".into()));
        }
        let f = File::open(path).map_err(fail(ArStatus::IoError))?;
        let (model, _) = TriModalModel::load(BufReader::new(f)).map_err(fail(ArStatus::CheckpointError))?;
        *out = Box::into_raw(Box::new(ArModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`ar_model_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_model_free(model: *mut ArModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding width of `model`, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ar_model_embed_dim(model: *const ArModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.embed_dim)
}

unsafe fn model_ref<'a>(model: *const ArModel) -> Result<&'a TriModalModel, (ArStatus, String)> {
    model.as_ref().map(|m| &m.0).ok_or((ArStatus::NullArgument, "model is null".into()))
}

/// Embeds a caption into `out[0..embed_dim]`.
///
/// # Safety
/// `model` must be live, `caption` nul-terminated and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ar_encode_text(model: *const ArModel, caption: *const c_char, out: *mut f64, len: usize) -> ArStatus {
    guard(|| {
        let m = model_ref(model)?;
        let e = m.encode_text(read_str(caption, "caption")?).map_err(fail(ArStatus::EncodeError))?;
        write_vector(e, out, len)
    })
}

/// Embeds netlist text into `out[0..embed_dim]`.
///
/// # Safety
/// As for [`ar_encode_text`].
#[no_mangle]
pub unsafe extern "C" fn ar_encode_netlist(model: *const ArModel, netlist: *const c_char, out: *mut f64, len: usize) -> ArStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ir = parse_netlist(read_str(netlist, "netlist")?).map_err(fail(ArStatus::ParseError))?;
        let g = build_graph(&ir).map_err(fail(ArStatus::GraphError))?;
        write_vector(m.encode_circuit(&g).map_err(fail(ArStatus::EncodeError))?, out, len)
    })
}

/// Embeds an image feature vector of length `n` into `out[0..embed_dim]`.
///
/// # Safety
/// `features` must be valid for `n` reads and `out` for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ar_encode_image(
    model: *const ArModel,
    features: *const f64,
    n: usize,
    out: *mut f64,
    len: usize,
) -> ArStatus {
    guard(|| {
        let m = model_ref(model)?;
        if features.is_null() {
            return Err((ArStatus::NullArgument, "features is null".into()));
        }
        let f = std::slice::from_raw_parts(features, n);
        write_vector(m.encode_image_features(f).map_err(fail(ArStatus::EncodeError))?, out, len)
    })
}

/// Loads an index file. On success `*out` holds a handle to free with
/// [`ar_index_free`].
///
/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ar_index_load(path: *const c_char, out: *mut *mut ArIndex) -> ArStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        if out.is_null() {
            return Err((ArStatus::NullArgument, "output pointer is null".into()));
        }
        let f = File::open(path).map_err(fail(ArStatus::IoError))?;
        let idx = EmbeddingIndex::read_from(BufReader::new(f)).map_err(fail(ArStatus::IndexError))?;
        *out = Box::into_raw(Box::new(ArIndex(idx)));
        Ok(())
    })
}

/// # Safety
/// `index` must be null or a handle from [`ar_index_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_index_free(index: *mut ArIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of rows in `index`, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ar_index_len(index: *const ArIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Top-`k` search; writes `[{"id": .., "score": ..}, ..]` to `*out_json`.
///
/// # Safety
/// `index` must be live, `query` valid for `n` reads, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ar_index_query_json(
    index: *const ArIndex,
    query: *const f64,
    n: usize,
    k: usize,
    out_json: *mut *mut c_char,
) -> ArStatus {
    guard(|| {
        let idx = index.as_ref().ok_or((ArStatus::NullArgument, "index is null".to_string()))?;
        if query.is_null() {
            return Err((ArStatus::NullArgument, "query is null".into()));
        }
        let hits = idx.0.top_k(std::slice::from_raw_parts(query, n), k).map_err(fail(ArStatus::IndexError))?;
        write_string(out_json, serde_json::to_string(&hits).expect("serializes"))
    })
}
