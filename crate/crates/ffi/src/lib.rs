//! C ABI for the headpoint parser: load a checkpoint into an opaque
//! handle, parse token arrays or whole CoNLL-U documents, and look up
//! label names. Every fallible call returns an [`HpStatus`]; after a
//! failure [`hp_last_error_message`] describes it (per thread, valid
//! until the next library call on that thread).
//!
//! Handles are not synchronized. Parsing only reads the model, so one
//! `HpModel` may serve several threads as long as no thread frees it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use headpoint::infer::{parse_sentence, DecodeOptions};
use headpoint::model::{load_checkpoint, Model};
use headpoint::treebank::{parse_conllu, write_conllu, DepTree};
use headpoint::Error;

/// `flags` bit for [`hp_parse`]/[`hp_parse_conllu`]: forbid crossing arcs.
pub const HP_FLAG_PROJECTIVE: u32 = 1;
/// `flags` bit: allow exactly one attachment to the root.
pub const HP_FLAG_SINGLE_ROOT: u32 = 2;

/// Result of every C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HpStatus {
    /// Success.
    Ok = 0,
    /// Invalid argument value or option combination.
    Usage = 1,
    /// Missing or malformed data: files, checkpoints, CoNLL-U text.
    Data = 2,
    /// Non-finite numbers were encountered.
    Numeric = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 5,
    /// The library caught a panic; treat the handle as poisoned.
    Internal = 6,
}

/// A loaded parser model. Create with [`hp_model_load`], destroy with
/// [`hp_model_free`].
pub struct HpModel {
    inner: Model<f32>,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn fail(status: HpStatus, msg: &str) -> HpStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> HpStatus {
    let status = match e.exit_code() {
        1 => HpStatus::Usage,
        2 => HpStatus::Data,
        _ => HpStatus::Numeric,
    };
    fail(status, &e.to_string())
}

/// Run a body with a cleared error slot and a panic guard; a caught
/// panic never unwinds into the caller.
fn guarded<F: FnOnce() -> HpStatus>(body: F) -> HpStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(_) => fail(HpStatus::Internal, "internal panic"),
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, HpStatus> {
    if ptr.is_null() {
        return Err(fail(HpStatus::NullArgument, &format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(HpStatus::InvalidUtf8, &format!("{what} is not valid UTF-8")))
}

fn options(beam: usize, flags: u32) -> DecodeOptions {
    DecodeOptions {
        beam,
        projective: flags & HP_FLAG_PROJECTIVE != 0,
        single_root: flags & HP_FLAG_SINGLE_ROOT != 0,
    }
}

/// Library version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn hp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn hp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint file into a fresh handle stored in `*out`.
#[no_mangle]
pub unsafe extern "C" fn hp_model_load(path: *const c_char, out: *mut *mut HpModel) -> HpStatus {
    guarded(|| {
        if out.is_null() {
            return fail(HpStatus::NullArgument, "out is null");
        }
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(Path::new(path)) {
            Ok(inner) => {
                let labels = (0..inner.vocab.label_count())
                    .map(|l| CString::new(inner.vocab.label_name(l)).unwrap())
                    .collect();
                *out = Box::into_raw(Box::new(HpModel { inner, labels }));
                HpStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// Destroy a handle returned by [`hp_model_load`]. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn hp_model_free(model: *mut HpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of dependency labels the model can predict; 0 for null.
#[no_mangle]
pub unsafe extern "C" fn hp_model_label_count(model: *const HpModel) -> usize {
    if model.is_null() {
        return 0;
    }
    let m = &*model;
    m.labels.len()
}

/// Name of label `id`, owned by the handle; null when out of range.
#[no_mangle]
pub unsafe extern "C" fn hp_model_label_name(model: *const HpModel, id: usize) -> *const c_char {
    if model.is_null() {
        return std::ptr::null();
    }
    let m = &*model;
    match m.labels.get(id) {
        Some(s) => s.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Parse one sentence given as `len` word forms plus optional POS tags
/// (`upos` or individual entries may be null, meaning unknown). Writes a
/// head position per word into `heads_out[0..len]` (0 is the root) and,
/// when the buffers are non-null, label ids into `labels_out[0..len]`
/// and the decode log-probability into `*log_prob_out`.
#[no_mangle]
pub unsafe extern "C" fn hp_parse(
    model: *const HpModel,
    forms: *const *const c_char,
    upos: *const *const c_char,
    len: usize,
    beam: usize,
    flags: u32,
    heads_out: *mut usize,
    labels_out: *mut usize,
    log_prob_out: *mut f64,
) -> HpStatus {
    guarded(|| {
        if model.is_null() || forms.is_null() || heads_out.is_null() {
            return fail(HpStatus::NullArgument, "model, forms and heads_out are required");
        }
        let m = &*model;
        let mut ids = Vec::with_capacity(len);
        for i in 0..len {
            let form = match utf8_arg(*forms.add(i), "form") {
                Ok(f) => f,
                Err(s) => return s,
            };
            let tag = if upos.is_null() || (*upos.add(i)).is_null() {
                "_"
            } else {
                match utf8_arg(*upos.add(i), "upos") {
                    Ok(t) => t,
                    Err(s) => return s,
                }
            };
            ids.push(m.inner.vocab.encode_token(form, tag));
        }
        match parse_sentence(&m.inner, &ids, None, &options(beam, flags)) {
            Ok(p) => {
                for (i, &h) in p.heads.iter().enumerate() {
                    *heads_out.add(i) = h;
                }
                if !labels_out.is_null() {
                    for (i, &l) in p.label_ids.iter().enumerate() {
                        *labels_out.add(i) = l;
                    }
                }
                if !log_prob_out.is_null() {
                    *log_prob_out = p.log_prob;
                }
                HpStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// Parse every sentence of a CoNLL-U document and return the document
/// with predicted heads and labels filled in. `*out` receives a string
/// owned by the caller; release it with [`hp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn hp_parse_conllu(
    model: *const HpModel,
    text: *const c_char,
    beam: usize,
    flags: u32,
    out: *mut *mut c_char,
) -> HpStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(HpStatus::NullArgument, "model and out are required");
        }
        let text = match utf8_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let m = &*model;
        let sentences = match parse_conllu(text) {
            Ok(s) => s,
            Err(e) => return from_error(e.into()),
        };
        let opts = options(beam, flags);
        let mut pred = Vec::with_capacity(sentences.len());
        for s in &sentences {
            let ids = m.inner.vocab.encode_sentence(s);
            let p = match parse_sentence(&m.inner, &ids, None, &opts) {
                Ok(p) => p,
                Err(e) => return from_error(e.into()),
            };
            let labels = p
                .label_ids
                .iter()
                .map(|&l| m.inner.vocab.label_name(l).to_string())
                .collect();
            pred.push(s.with_tree(&DepTree { heads: p.heads, labels }));
        }
        *out = CString::new(write_conllu(&pred))
            .expect("CoNLL-U text never contains NUL bytes")
            .into_raw();
        HpStatus::Ok
    })
}

/// Release a string returned by this library. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn hp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
