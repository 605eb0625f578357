//! C ABI over the classifier.
//!
//! Conventions: every fallible function returns an [`StxStatus`]; on
//! failure a message is kept per thread and can be copied out with
//! [`stx_last_error_message`]. Strings are NUL-terminated UTF-8. Functions
//! that return text copy it into a caller buffer and always report the
//! required size (including the terminator) through `needed`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use stx_core::corpus::{CorpusLine, LabeledCorpus};
use stx_core::evaluation::score;
use stx_core::expansion::Thesaurus;
use stx_core::pipeline::{FittedPipeline, Pipeline, PipelineConfig};
use stx_core::textprep::{normalize, normalize_document, Stemmer, StopLists};
use stx_core::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StxStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Input data was malformed or unusable.
    Data = 4,
    InvalidConfig = 5,
    Runtime = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque classifier handle.
pub struct StxClassifier {
    pipeline: FittedPipeline,
    thesaurus: Option<Thesaurus>,
    stops: StopLists,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
}

struct Failure(StxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match (&e, e.kind()) {
            (Error::Io { .. }, _) => StxStatus::Io,
            (_, ErrorKind::Usage) => StxStatus::InvalidConfig,
            (_, ErrorKind::Data) => StxStatus::Data,
            (_, ErrorKind::Runtime) => StxStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(StxStatus::Data, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StxStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside stx");
            StxStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(StxStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(StxStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn optional_text<'a>(ptr: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if ptr.is_null() {
        Ok(None)
    } else {
        text(ptr, what).map(Some)
    }
}

/// # Safety
/// `buf` must be NULL or point to `len` writable bytes; `needed` must be
/// NULL or writable.
unsafe fn copy_out(
    s: &str,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> Result<(), Failure> {
    let required = s.len() + 1;
    if !needed.is_null() {
        *needed = required;
    }
    if buf.is_null() || len < required {
        return Err(Failure(
            StxStatus::BufferTooSmall,
            format!("buffer of {len} bytes, {required} needed"),
        ));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

unsafe fn handle<'a>(ptr: *const StxClassifier) -> Result<&'a StxClassifier, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure(StxStatus::NullArgument, "classifier is NULL".into()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn stx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message. Returns the number of
/// bytes required including the terminator; copies nothing if `len` is
/// smaller than that.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn stx_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let mut needed = 0;
        let _ = copy_out(&e, buf, len, &mut needed);
        needed
    })
}

/// Normalizes `text` with the built-in stop lists and suffix stemmer and
/// writes the space-joined tokens.
///
/// # Safety
/// `text` must be a valid C string; see the module docs for `buf`/`needed`.
#[no_mangle]
pub unsafe extern "C" fn stx_normalize(
    text_ptr: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> StxStatus {
    guard(|| {
        let input = text(text_ptr, "text")?;
        let (tokens, _) = normalize(input, &StopLists::builtin(), Stemmer::Suffix);
        copy_out(&tokens.join(" "), buf, len, needed)
    })
}

/// Fits a classifier on a prepared corpus given as JSON-Lines text (one
/// object per line with `id`, `text` and `root_category`).
/// `config_json` holds a pipeline configuration and may be NULL for
/// defaults. `thesaurus_json` holds a hashtag thesaurus file and may be
/// NULL unless hashtag expansion is configured.
///
/// # Safety
/// String arguments must be valid C strings or NULL where allowed; `out`
/// must be writable. Free the result with [`stx_classifier_free`].
#[no_mangle]
pub unsafe extern "C" fn stx_classifier_train(
    corpus_jsonl: *const c_char,
    config_json: *const c_char,
    thesaurus_json: *const c_char,
    out: *mut *mut StxClassifier,
) -> StxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(StxStatus::NullArgument, "out is NULL".into()));
        }
        *out = std::ptr::null_mut();
        let corpus = text(corpus_jsonl, "corpus")?;
        let config: PipelineConfig = match optional_text(config_json, "config")? {
            Some(c) => serde_json::from_str(c)
                .map_err(|e| Failure(StxStatus::InvalidConfig, e.to_string()))?,
            None => PipelineConfig::default(),
        };
        let thesaurus = optional_text(thesaurus_json, "thesaurus")?
            .map(|t| Thesaurus::from_bytes(t.as_bytes()))
            .transpose()?;
        let stops = StopLists::builtin();
        let mut docs = Vec::new();
        for (n, line) in corpus
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let line: CorpusLine = serde_json::from_str(line)
                .map_err(|e| Failure(StxStatus::Data, format!("line {}: {e}", n + 1)))?;
            let label = line.root_category.ok_or_else(|| {
                Failure(
                    StxStatus::Data,
                    format!("line {}: missing root_category", n + 1),
                )
            })?;
            docs.push(normalize_document(
                line.id,
                &line.text,
                Some(label),
                &stops,
                Stemmer::Suffix,
            ));
        }
        if docs.is_empty() {
            return Err(Error::EmptyCorpus.into());
        }
        let corpus = LabeledCorpus::new(docs, 1)?;
        let pipeline = Pipeline::fit(&config, &corpus, thesaurus.as_ref())?;
        *out = Box::into_raw(Box::new(StxClassifier {
            pipeline,
            thesaurus,
            stops,
        }));
        Ok(())
    })
}

/// Loads a model directory written by [`stx_classifier_save`] or the `stx
/// train` command. `thesaurus_path` may be NULL.
///
/// # Safety
/// `dir` must be a valid C string, `thesaurus_path` a valid C string or
/// NULL, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stx_classifier_load(
    dir: *const c_char,
    thesaurus_path: *const c_char,
    out: *mut *mut StxClassifier,
) -> StxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(StxStatus::NullArgument, "out is NULL".into()));
        }
        *out = std::ptr::null_mut();
        let pipeline = FittedPipeline::load(Path::new(text(dir, "dir")?))?;
        let thesaurus = optional_text(thesaurus_path, "thesaurus_path")?
            .map(|p| Thesaurus::read(Path::new(p)))
            .transpose()?;
        *out = Box::into_raw(Box::new(StxClassifier {
            pipeline,
            thesaurus,
            stops: StopLists::builtin(),
        }));
        Ok(())
    })
}

/// # Safety
/// `classifier` must come from this library; `dir` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn stx_classifier_save(
    classifier: *const StxClassifier,
    dir: *const c_char,
) -> StxStatus {
    guard(|| {
        let c = handle(classifier)?;
        c.pipeline.save(Path::new(text(dir, "dir")?))?;
        Ok(())
    })
}

/// Predicts the category of one raw text.
///
/// # Safety
/// `classifier` must come from this library and `text` be a valid C
/// string; see the module docs for `buf`/`needed`.
#[no_mangle]
pub unsafe extern "C" fn stx_classifier_predict(
    classifier: *const StxClassifier,
    text_ptr: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> StxStatus {
    guard(|| {
        let c = handle(classifier)?;
        let input = text(text_ptr, "text")?;
        let doc = normalize_document("query", input, None, &c.stops, Stemmer::Suffix);
        let predicted = c.pipeline.predict(&[doc], c.thesaurus.as_ref())?;
        copy_out(&predicted[0], buf, len, needed)
    })
}

/// Number of classes, or 0 for a NULL handle.
///
/// # Safety
/// `classifier` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn stx_classifier_class_count(classifier: *const StxClassifier) -> usize {
    classifier
        .as_ref()
        .map_or(0, |c| c.pipeline.model.classes.len())
}

/// # Safety
/// `classifier` must come from this library; see the module docs for
/// `buf`/`needed`.
#[no_mangle]
pub unsafe extern "C" fn stx_classifier_class_name(
    classifier: *const StxClassifier,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> StxStatus {
    guard(|| {
        let c = handle(classifier)?;
        let classes = &c.pipeline.model.classes;
        let name = classes.get(index).ok_or_else(|| {
            Failure(
                StxStatus::InvalidConfig,
                format!(
                    "class index {index} out of range ({} classes)",
                    classes.len()
                ),
            )
        })?;
        copy_out(name, buf, len, needed)
    })
}

/// # Safety
/// `classifier` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stx_classifier_free(classifier: *mut StxClassifier) {
    if !classifier.is_null() {
        drop(Box::from_raw(classifier));
    }
}

/// Scores predictions against truth (both JSON arrays of strings) and
/// writes the metrics CSV: one row per class, then the category and
/// absolute averages.
///
/// # Safety
/// Both inputs must be valid C strings; see the module docs for
/// `buf`/`needed`.
#[no_mangle]
pub unsafe extern "C" fn stx_metrics_csv(
    predictions_json: *const c_char,
    truth_json: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> StxStatus {
    guard(|| {
        let predictions: Vec<String> =
            serde_json::from_str(text(predictions_json, "predictions")?)?;
        let truth: Vec<String> = serde_json::from_str(text(truth_json, "truth")?)?;
        let report = score(&predictions, &truth)?;
        copy_out(&report.to_csv(), buf, len, needed)
    })
}
