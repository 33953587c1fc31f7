//! C interface to `kginject`.
//!
//! Every fallible call returns a [`KgiStatus`]. On failure the message is
//! available from [`kgi_last_error`] on the same thread. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kginject::annotate::plan_corpus;
use kginject::corpus::{load_corpus, BioLabel, Corpus};
use kginject::eval::{exact_match_f1, kg_only_tagger};
use kginject::inject::{enriched_to_tsv, insert_pivots};
use kginject::kg::{build_domain_kg, DomainKG, EmbeddingTable, FileGenerator, KgConfig, TripleGenerator, TripleStore};
use kginject::model::{build_examples, EncoderModel, Injection};
use kginject::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Shape = 6,
    Config = 7,
    Serialization = 8,
    Panic = 9,
}

/// How a checkpoint consumes graph information at evaluation time.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgiMode {
    Plain = 0,
    Pivot = 1,
    ModifiedDea = 2,
}

/// Span-level exact-match scores.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KgiScores {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub struct KgiCorpus(Corpus);
pub struct KgiGraph(DomainKG);
pub struct KgiModel(EncoderModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(KgiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => KgiStatus::Io,
            Error::Parse { .. } => KgiStatus::Parse,
            Error::Invalid(_) => KgiStatus::InvalidInput,
            Error::Shape(_) => KgiStatus::Shape,
            Error::Config(_) => KgiStatus::Config,
            Error::Serde(_) => KgiStatus::Serialization,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KgiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KgiStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            KgiStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(KgiStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(KgiStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(KgiStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(KgiStatus::NullArgument, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kgi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn kgi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a five-column corpus TSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgi_corpus_load(path: *const c_char, out: *mut *mut KgiCorpus) -> KgiStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        out_arg(out, KgiCorpus(load_corpus(&path)?))
    })
}

/// Number of sentences, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgi_corpus_len(corpus: *const KgiCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgi_corpus_free(corpus: *mut KgiCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Builds a domain graph with default settings. `generator` may be null.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kgi_graph_build(
    corpus: *const KgiCorpus,
    triples: *const c_char,
    embeddings: *const c_char,
    generator: *const c_char,
    out: *mut *mut KgiGraph,
) -> KgiStatus {
    guard(|| {
        let corpus = handle(corpus, "corpus")?;
        let store = TripleStore::load(&path_arg(triples, "triples")?)?;
        let emb = EmbeddingTable::load(&path_arg(embeddings, "embeddings")?)?;
        let generator = if generator.is_null() {
            None
        } else {
            Some(FileGenerator::load(&path_arg(generator, "generator")?)?)
        };
        let (kg, _) = build_domain_kg(
            &corpus.0,
            &store,
            &emb,
            generator.as_ref().map(|g| g as &dyn TripleGenerator),
            &KgConfig::default(),
        )?;
        out_arg(out, KgiGraph(kg))
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kgi_graph_load(path: *const c_char, out: *mut *mut KgiGraph) -> KgiStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        out_arg(out, KgiGraph(DomainKG::load(&path)?))
    })
}

/// # Safety
/// `graph` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kgi_graph_save(graph: *const KgiGraph, path: *const c_char) -> KgiStatus {
    guard(|| {
        let graph = handle(graph, "graph")?;
        graph.0.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Keeps the seeds plus `pct` percent of the other nodes.
///
/// # Safety
/// `graph` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kgi_graph_sample(graph: *const KgiGraph, pct: f64, seed: u64, out: *mut *mut KgiGraph) -> KgiStatus {
    guard(|| {
        let graph = handle(graph, "graph")?;
        out_arg(out, KgiGraph(graph.0.sample_nodes(pct, seed)?))
    })
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgi_graph_node_count(graph: *const KgiGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.node_count())
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgi_graph_free(graph: *mut KgiGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Writes the corpus with pivots after every graph match as a six-column TSV.
///
/// # Safety
/// Handles must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kgi_enrich(corpus: *const KgiCorpus, graph: *const KgiGraph, path: *const c_char) -> KgiStatus {
    guard(|| {
        let corpus = &handle(corpus, "corpus")?.0;
        let graph = &handle(graph, "graph")?.0;
        let path = path_arg(path, "path")?;
        let plans = plan_corpus(corpus, graph);
        let seqs = corpus
            .sentences
            .iter()
            .zip(&plans)
            .map(|(s, p)| insert_pivots(s, p))
            .collect::<kginject::Result<Vec<_>>>()?;
        std::fs::write(&path, enriched_to_tsv(corpus, &seqs)?).map_err(|e| Error::Io { path, source: e })?;
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kgi_model_load(path: *const c_char, out: *mut *mut KgiModel) -> KgiStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        out_arg(out, KgiModel(EncoderModel::load(&path)?))
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgi_model_free(model: *mut KgiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn gold(corpus: &Corpus) -> Result<Vec<Vec<BioLabel>>, Fail> {
    corpus
        .sentences
        .iter()
        .map(|s| {
            s.labels
                .clone()
                .ok_or_else(|| Fail(KgiStatus::InvalidInput, "evaluation corpus is unlabeled".into()))
        })
        .collect()
}

fn scores(pred: &[Vec<BioLabel>], gold: &[Vec<BioLabel>]) -> Result<KgiScores, Fail> {
    let r = exact_match_f1(pred, gold)?;
    Ok(KgiScores {
        tp: r.tp,
        predicted: r.predicted,
        gold: r.gold,
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
    })
}

/// Scores the tagger that labels exactly the graph-matched spans.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kgi_eval_graph_only(corpus: *const KgiCorpus, graph: *const KgiGraph, out: *mut KgiScores) -> KgiStatus {
    guard(|| {
        let corpus = &handle(corpus, "corpus")?.0;
        let graph = &handle(graph, "graph")?.0;
        if out.is_null() {
            return Err(Fail(KgiStatus::NullArgument, "`out` is null".into()));
        }
        *out = scores(&kg_only_tagger(corpus, graph)?, &gold(corpus)?)?;
        Ok(())
    })
}

/// Scores a checkpoint. `graph` may be null only for `KGI_MODE_PLAIN`.
///
/// # Safety
/// Handles must be live (or null where allowed) and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kgi_eval_model(
    model: *const KgiModel,
    corpus: *const KgiCorpus,
    graph: *const KgiGraph,
    mode: KgiMode,
    out: *mut KgiScores,
) -> KgiStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let corpus = &handle(corpus, "corpus")?.0;
        if out.is_null() {
            return Err(Fail(KgiStatus::NullArgument, "`out` is null".into()));
        }
        let plans = match mode {
            KgiMode::Plain => None,
            _ => Some(plan_corpus(corpus, &handle(graph, "graph")?.0)),
        };
        let injection = match (mode, &plans) {
            (KgiMode::Pivot, Some(p)) => Injection::Pivot(p),
            (KgiMode::ModifiedDea, Some(p)) => Injection::Indicator(p),
            _ => Injection::None,
        };
        let pred = model.predict(&build_examples(corpus, injection)?)?;
        *out = scores(&pred, &gold(corpus)?)?;
        Ok(())
    })
}
