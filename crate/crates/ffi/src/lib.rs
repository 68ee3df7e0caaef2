//! C interface to synthgen.
//!
//! Objects are opaque handles created by `*_load` / `synthgen_sample` and
//! released with the matching `*_free`. Fallible calls return a
//! [`SynthgenStatus`]; on failure [`synthgen_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use synthgen::denoiser::TabularDenoiser;
use synthgen::graph::check_validity;
use synthgen::sampler::{sample_many, BlockCount, SampleConfig};
use synthgen::vocabulary::Vocabulary;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthgenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Sampling = 5,
    Panic = 6,
}

pub struct SynthgenVocab {
    inner: Vocabulary,
}

pub struct SynthgenModel {
    inner: TabularDenoiser,
}

struct Entry {
    line: Option<CString>,
    valid: bool,
}

pub struct SynthgenSamples {
    entries: Vec<Entry>,
}

/// Sampling options. `n_blocks == 0` draws the block count from the model.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SynthgenSampleOptions {
    pub count: usize,
    pub steps: usize,
    pub n_blocks: usize,
    pub seed: u64,
    pub constraints: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Failure = (SynthgenStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SynthgenStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SynthgenStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SynthgenStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((SynthgenStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SynthgenStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| (SynthgenStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err((SynthgenStatus::NullPointer, "output pointer is null".into()));
    }
    Ok(())
}

/// Message for the most recent failure on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn synthgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn synthgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn synthgen_vocab_load(path: *const c_char, out: *mut *mut SynthgenVocab) -> SynthgenStatus {
    guard(|| {
        out_arg(out)?;
        let path = str_arg(path, "path")?;
        let inner = Vocabulary::load(Path::new(path)).map_err(|e| (SynthgenStatus::Parse, format!("{path}: {e}")))?;
        *out = Box::into_raw(Box::new(SynthgenVocab { inner }));
        Ok(())
    })
}

/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn synthgen_vocab_from_toml(text: *const c_char, out: *mut *mut SynthgenVocab) -> SynthgenStatus {
    guard(|| {
        out_arg(out)?;
        let text = str_arg(text, "text")?;
        let inner = Vocabulary::from_toml_str(text).map_err(|e| (SynthgenStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(SynthgenVocab { inner }));
        Ok(())
    })
}

/// # Safety
/// `vocab` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn synthgen_vocab_num_blocks(vocab: *const SynthgenVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.inner.num_blocks())
}

/// # Safety
/// `vocab` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn synthgen_vocab_num_reactions(vocab: *const SynthgenVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.inner.num_reactions())
}

/// # Safety
/// `vocab` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn synthgen_vocab_free(vocab: *mut SynthgenVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Loads a fitted tabular model and checks it against `vocab`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `vocab` a live handle and `out` a
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn synthgen_model_load(
    path: *const c_char,
    vocab: *const SynthgenVocab,
    out: *mut *mut SynthgenModel,
) -> SynthgenStatus {
    guard(|| {
        out_arg(out)?;
        let path = str_arg(path, "path")?;
        let vocab = ref_arg(vocab, "vocab")?;
        if !Path::new(path).exists() {
            return Err((SynthgenStatus::Io, format!("{path}: no such file")));
        }
        let inner =
            TabularDenoiser::load(Path::new(path)).map_err(|e| (SynthgenStatus::Parse, format!("{path}: {e}")))?;
        inner
            .check_vocab(&vocab.inner)
            .map_err(|e| (SynthgenStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(SynthgenModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn synthgen_model_free(model: *mut SynthgenModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub extern "C" fn synthgen_sample_options_default() -> SynthgenSampleOptions {
    SynthgenSampleOptions {
        count: 1,
        steps: 100,
        n_blocks: 0,
        seed: 0,
        constraints: true,
    }
}

/// Draws `options.count` samples. Individual failures do not fail the call;
/// they appear as null lines in the result.
///
/// # Safety
/// `vocab` and `model` must be live handles, `options` must point to a valid
/// struct and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn synthgen_sample(
    vocab: *const SynthgenVocab,
    model: *const SynthgenModel,
    options: *const SynthgenSampleOptions,
    out: *mut *mut SynthgenSamples,
) -> SynthgenStatus {
    guard(|| {
        out_arg(out)?;
        let vocab = &ref_arg(vocab, "vocab")?.inner;
        let model = &ref_arg(model, "model")?.inner;
        let opts = *ref_arg(options, "options")?;
        let block_count = match opts.n_blocks {
            0 => BlockCount::Prior(model.block_count_prior().ok_or_else(|| {
                (
                    SynthgenStatus::InvalidArgument,
                    "model has no block-count prior; set n_blocks".to_string(),
                )
            })?),
            n => BlockCount::Fixed(n),
        };
        let mut cfg = SampleConfig::new(block_count);
        cfg.steps = opts.steps;
        cfg.flow.z_c = model.z_c;
        cfg.constraints = opts.constraints;
        cfg.validate()
            .map_err(|e| (SynthgenStatus::InvalidArgument, e.to_string()))?;
        let entries = sample_many(vocab, model, &cfg, None, opts.count, opts.seed)
            .into_iter()
            .map(|r| match r {
                Ok(s) => Entry {
                    valid: check_validity(&s.graph, vocab).is_valid(),
                    line: CString::new(s.to_record().to_line()).ok(),
                },
                Err(_) => Entry {
                    line: None,
                    valid: false,
                },
            })
            .collect();
        *out = Box::into_raw(Box::new(SynthgenSamples { entries }));
        Ok(())
    })
}

/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn synthgen_samples_len(samples: *const SynthgenSamples) -> usize {
    samples.as_ref().map_or(0, |s| s.entries.len())
}

/// Record line of sample `index`, or null if it failed or is out of range.
/// Owned by `samples`.
///
/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn synthgen_samples_line(samples: *const SynthgenSamples, index: usize) -> *const c_char {
    samples
        .as_ref()
        .and_then(|s| s.entries.get(index))
        .and_then(|e| e.line.as_ref())
        .map_or(ptr::null(), |l| l.as_ptr())
}

/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn synthgen_samples_is_valid(samples: *const SynthgenSamples, index: usize) -> bool {
    samples
        .as_ref()
        .and_then(|s| s.entries.get(index))
        .is_some_and(|e| e.valid)
}

/// # Safety
/// `samples` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn synthgen_samples_free(samples: *mut SynthgenSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}
