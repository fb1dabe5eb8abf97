//! C interface: open a dataset directory with a trained checkpoint, answer
//! free-text questions, evaluate a split.
//!
//! Every function returns a [`PnStatus`]; on failure the message is
//! available from [`pn_last_error`] on the same thread. Strings handed out
//! by the library must be released with [`pn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pullnet::config::RunConfig;
use pullnet::io::DataLayout;
use pullnet::pipeline::{self, Dataset};
use pullnet::{run_inference, Error, ModelParams, Question};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    NotFound = 6,
    Runtime = 7,
    Panic = 8,
}

/// A loaded dataset, configuration and model. Opaque to C.
pub struct PnEngine {
    cfg: RunConfig,
    data: Dataset,
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PnStatus {
    match e {
        Error::Io { .. } => PnStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Checkpoint(_) | Error::DuplicateTriple { .. } | Error::EmptyField { .. } => {
            PnStatus::Parse
        }
        Error::Config(_) => PnStatus::Config,
        Error::UnknownEntity(_)
        | Error::UnknownEntityName(_)
        | Error::UnknownRelation(_)
        | Error::UnknownDocument(_)
        | Error::NoQuestionEntities => PnStatus::NotFound,
        _ => PnStatus::Runtime,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (PnStatus, String)>) -> PnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PnStatus::Panic
        }
    }
}

fn lib(e: Error) -> (PnStatus, String) {
    (status_of(&e), e.to_string())
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (PnStatus, String)> {
    if p.is_null() {
        return Err((PnStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PnStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads `data_dir` and the checkpoint at `model_path`. `config_path` may be
/// null for the default configuration.
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pn_engine_open(
    data_dir: *const c_char,
    config_path: *const c_char,
    model_path: *const c_char,
    out: *mut *mut PnEngine,
) -> PnStatus {
    guard(|| {
        if out.is_null() {
            return Err((PnStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let data_dir = arg(data_dir, "data_dir")?;
        let model_path = arg(model_path, "model_path")?;
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(Path::new(arg(config_path, "config_path")?)).map_err(lib)?
        };
        cfg.validate().map_err(lib)?;
        let data = Dataset::load(&DataLayout::new(data_dir), &cfg).map_err(lib)?;
        let params = ModelParams::load(Path::new(model_path)).map_err(lib)?;
        if params.config.entities != data.complete.kb.num_entities() || params.config.relations != data.complete.kb.num_relations() {
            return Err((PnStatus::Config, "checkpoint does not match the dataset's KB".into()));
        }
        *out = Box::into_raw(Box::new(PnEngine { cfg, data, params }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` is null or was returned by [`pn_engine_open`] and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_engine_free(engine: *mut PnEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Answers `question` and writes a JSON object to `*out_json`:
/// `{"question_entities": [..], "answers": [{"entity", "score"}], "entities", "facts", "docs", "trace": [..]}`
/// with at most `top_n` answers. Release the string with [`pn_string_free`].
///
/// # Safety
/// `engine` is a live engine; `question` is NUL-terminated; `out_json` is valid.
#[no_mangle]
pub unsafe extern "C" fn pn_answer(
    engine: *const PnEngine,
    question: *const c_char,
    top_n: usize,
    out_json: *mut *mut c_char,
) -> PnStatus {
    guard(|| {
        if engine.is_null() || out_json.is_null() {
            return Err((PnStatus::NullArgument, "engine or out_json is null".into()));
        }
        *out_json = ptr::null_mut();
        let eng = &*engine;
        let text = arg(question, "question")?;
        let k = &eng.data.complete;
        let q = Question::link(0, text, &[], k.corpus.lexicon(), &k.kb).map_err(lib)?;
        if q.entities.is_empty() {
            return Err((PnStatus::NotFound, "question mentions no known entity".into()));
        }
        let res = run_inference(&q, &eng.params, eng.data.stores(), &eng.cfg.engine()).map_err(lib)?;
        let name = |e: pullnet::EntityId| k.kb.entity_name(e).unwrap_or("").to_owned();
        let answers: Vec<serde_json::Value> = res
            .ranked
            .iter()
            .take(top_n)
            .map(|&(e, p)| serde_json::json!({"entity": name(e), "score": p}))
            .collect();
        let value = serde_json::json!({
            "question_entities": q.entities.iter().map(|&e| name(e)).collect::<Vec<_>>(),
            "answers": answers,
            "entities": res.subgraph.num_entities(),
            "facts": res.subgraph.num_facts(),
            "docs": res.subgraph.num_docs(),
            "trace": res.trace,
        });
        let s = CString::new(value.to_string()).map_err(|e| (PnStatus::Runtime, e.to_string()))?;
        *out_json = s.into_raw();
        Ok(())
    })
}

/// Evaluates the engine on a question split (`"train"`, `"dev"`, `"test"`).
///
/// # Safety
/// `engine` is a live engine; `split` is NUL-terminated; outputs are valid.
#[no_mangle]
pub unsafe extern "C" fn pn_evaluate(
    engine: *const PnEngine,
    split: *const c_char,
    hits_at_1: *mut f64,
    answer_recall: *mut f64,
) -> PnStatus {
    guard(|| {
        if engine.is_null() || hits_at_1.is_null() || answer_recall.is_null() {
            return Err((PnStatus::NullArgument, "null argument".into()));
        }
        let eng = &*engine;
        let split = arg(split, "split")?;
        let m = pipeline::run_eval(&eng.cfg, &eng.data, &eng.params, split, 1).map_err(lib)?;
        *hits_at_1 = m.hits_at_1;
        *answer_recall = m.answer_recall;
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and was not freed before.
#[no_mangle]
pub unsafe extern "C" fn pn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
