//! C interface to the absa toolkit.
//!
//! Every fallible function returns an [`AbsaStatus`]. On failure a message is
//! kept per thread and can be read with [`absa_last_error_message`]. Objects
//! cross the boundary as opaque handles which the caller releases with the
//! matching `_free` function. Strings returned through `out` parameters are
//! owned by the caller and released with [`absa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use absa::classifier::{ClassifierSpec, TrainedClassifier};
use absa::config::{load_corpus, ConfigError, RunConfig};
use absa::corpus::{parse_semeval, serialize_semeval};
use absa::eval::{emit_report, macro_f1, polarity_accuracy, run_matrix, OpinionKey, ReportFormat};
use absa::seed::derive_seed;
use absa::{Dataset, Domain, Polarity, Sentence, Span};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Model = 6,
    Eval = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbsaPolarity {
    Positive = 0,
    Negative = 1,
    Neutral = 2,
}

impl From<Polarity> for AbsaPolarity {
    fn from(p: Polarity) -> Self {
        match p {
            Polarity::Positive => AbsaPolarity::Positive,
            Polarity::Negative => AbsaPolarity::Negative,
            Polarity::Neutral => AbsaPolarity::Neutral,
        }
    }
}

/// Report layout for [`absa_matrix_run`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbsaFormat {
    Json = 0,
    Csv = 1,
    Table = 2,
}

/// A parsed annotated corpus.
pub struct AbsaDataset(Dataset);

/// A trained polarity classifier.
pub struct AbsaModel(TrainedClassifier);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AbsaStatus, String);

type Result<T> = std::result::Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: AbsaStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).expect("nul bytes replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<()>) -> AbsaStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AbsaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AbsaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str> {
    if p.is_null() {
        return Err(Failure(AbsaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(AbsaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T> {
    p.as_ref().ok_or_else(|| Failure(AbsaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<()> {
    if out.is_null() {
        return Err(Failure(AbsaStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<()> {
    let c = CString::new(s).map_err(fail(AbsaStatus::InvalidArgument))?;
    put(out, c.into_raw(), "out")
}

fn config_failure(e: ConfigError) -> Failure {
    let status = match e {
        ConfigError::Io { .. } | ConfigError::MissingFile { .. } => AbsaStatus::Io,
        ConfigError::Corpus { .. } | ConfigError::Knowledge { .. } | ConfigError::Extract { .. } => AbsaStatus::Parse,
        ConfigError::Syntax { .. } | ConfigError::UnknownKey { .. } | ConfigError::Value { .. } => {
            AbsaStatus::InvalidArgument
        }
    };
    Failure(status, e.to_string())
}

unsafe fn domain(p: *const c_char) -> Result<Domain> {
    text(p, "domain")?.parse().map_err(fail(AbsaStatus::InvalidArgument))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn absa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn absa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn absa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses SemEval XML held in memory.
///
/// # Safety
/// `xml` and `domain_name` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_dataset_parse(
    xml: *const c_char,
    domain_name: *const c_char,
    out: *mut *mut AbsaDataset,
) -> AbsaStatus {
    guard(|| {
        let ds = parse_semeval(text(xml, "xml")?, domain(domain_name)?).map_err(fail(AbsaStatus::Parse))?;
        put(out, Box::into_raw(Box::new(AbsaDataset(ds))), "out")
    })
}

/// Reads and parses a SemEval XML file.
///
/// # Safety
/// `path` and `domain_name` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_dataset_load(
    path: *const c_char,
    domain_name: *const c_char,
    out: *mut *mut AbsaDataset,
) -> AbsaStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        let ds = load_corpus(path, domain(domain_name)?).map_err(config_failure)?;
        put(out, Box::into_raw(Box::new(AbsaDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn absa_dataset_free(ds: *mut AbsaDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_dataset_counts(
    ds: *const AbsaDataset,
    sentences: *mut usize,
    opinions: *mut usize,
) -> AbsaStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        put(sentences, ds.sentence_count(), "sentences")?;
        put(opinions, ds.sentences().map(|s| s.opinions.len()).sum(), "opinions")
    })
}

/// Canonical XML serialization of a dataset.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_dataset_serialize(ds: *const AbsaDataset, out: *mut *mut c_char) -> AbsaStatus {
    guard(|| put_string(out, serialize_semeval(&handle(ds, "dataset")?.0)))
}

/// Trains a classifier on every gold opinion of `ds`. With a null
/// `config_path` the default naive Bayes settings and seed 0 are used.
///
/// # Safety
/// `ds` must be a live handle, `config_path` null or a NUL-terminated string,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn absa_model_train(
    ds: *const AbsaDataset,
    config_path: *const c_char,
    out: *mut *mut AbsaModel,
) -> AbsaStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let (spec, seed) = if config_path.is_null() {
            (ClassifierSpec::default(), 0)
        } else {
            let cfg = RunConfig::load(Path::new(text(config_path, "config_path")?), &[]).map_err(config_failure)?;
            (cfg.classifier, cfg.seed)
        };
        let seed = derive_seed(seed, &format!("train/{}", ds.domain));
        let model = TrainedClassifier::train(&spec, ds, seed).map_err(fail(AbsaStatus::Model))?;
        put(out, Box::into_raw(Box::new(AbsaModel(model))), "out")
    })
}

/// Restores a model from the JSON written by [`absa_model_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_model_from_json(json: *const c_char, out: *mut *mut AbsaModel) -> AbsaStatus {
    guard(|| {
        let model = TrainedClassifier::from_json(text(json, "json")?).map_err(fail(AbsaStatus::Model))?;
        put(out, Box::into_raw(Box::new(AbsaModel(model))), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_model_to_json(model: *const AbsaModel, out: *mut *mut c_char) -> AbsaStatus {
    guard(|| put_string(out, handle(model, "model")?.0.to_json().to_string()))
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn absa_model_free(model: *mut AbsaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Polarity of the aspect at character offsets `[from, to)` of `sentence`.
/// A negative `from` means the aspect is implicit and the whole sentence is
/// used.
///
/// # Safety
/// `model` must be a live handle, `sentence` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn absa_model_predict(
    model: *const AbsaModel,
    sentence: *const c_char,
    from: i64,
    to: i64,
    out: *mut AbsaPolarity,
) -> AbsaStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let s = Sentence { id: "ffi".into(), text: text(sentence, "sentence")?.to_string(), opinions: vec![] };
        let span = if from < 0 {
            None
        } else {
            let bad = || Failure(AbsaStatus::InvalidArgument, format!("invalid span {from}..{to}"));
            let (a, b) = (usize::try_from(from).map_err(|_| bad())?, usize::try_from(to).map_err(|_| bad())?);
            if a >= b || b > s.text.chars().count() {
                return Err(bad());
            }
            Some(Span::new(a, b))
        };
        let p = model.predict(&s, span).map_err(fail(AbsaStatus::Model))?;
        put(out, p.into(), "out")
    })
}

/// Gold-aspect polarity accuracy and macro-F1 of `model` on `ds`.
///
/// # Safety
/// Both handles must be live; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_model_evaluate(
    model: *const AbsaModel,
    ds: *const AbsaDataset,
    accuracy: *mut f64,
    macro_f1_out: *mut f64,
) -> AbsaStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let ds = &handle(ds, "dataset")?.0;
        let mut preds = Vec::new();
        for s in ds.sentences() {
            for (i, o) in s.opinions.iter().enumerate() {
                let p = model
                    .predict(s, o.span)
                    .map_err(|e| Failure(AbsaStatus::Model, format!("sentence {}: {e}", s.id)))?;
                preds.push((OpinionKey::new(s.id.clone(), i), p));
            }
        }
        put(accuracy, polarity_accuracy(&preds, ds).map_err(fail(AbsaStatus::Eval))?, "accuracy")?;
        put(macro_f1_out, macro_f1(&preds, ds).map_err(fail(AbsaStatus::Eval))?, "macro_f1")
    })
}

/// Runs the evaluation matrix described by a config file and returns the
/// report text.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn absa_matrix_run(
    config_path: *const c_char,
    format: AbsaFormat,
    out: *mut *mut c_char,
) -> AbsaStatus {
    guard(|| {
        let cfg = RunConfig::load(Path::new(text(config_path, "config_path")?), &[]).map_err(config_failure)?;
        let matrix = cfg.matrix_config().map_err(config_failure)?;
        let report = run_matrix(&matrix).map_err(fail(AbsaStatus::Eval))?;
        let format = match format {
            AbsaFormat::Json => ReportFormat::Json,
            AbsaFormat::Csv => ReportFormat::Csv,
            AbsaFormat::Table => ReportFormat::Table,
        };
        put_string(out, emit_report(&report, format))
    })
}
