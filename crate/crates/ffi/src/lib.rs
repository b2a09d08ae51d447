//! C interface to the `ncm` library.
//!
//! Objects cross the boundary as opaque handles created by constructor
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`NcmStatus`]; on failure the message is kept per thread and can
//! be fetched with [`ncm_last_error`]. Strings returned by the library are
//! owned by the caller and must be released with [`ncm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ncm::cli::{self, CliError, QuerySpec, Settings};
use ncm::graph::{fixtures, CausalDiagram};
use ncm::identify::{gap_test, symbolic_id, Identification, NeuralIdConfig, StdErrorRule, Verdict};
use ncm::scm::{CanonicalScm, Dataset};
use ncm::train::TrainConfig;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcmStatus {
    Ok = 0,
    /// A null pointer, bad UTF-8 or an out-of-range value.
    InvalidArgument = 1,
    /// Malformed graph text, CSV or JSON.
    Parse = 2,
    Io = 3,
    /// The computation itself failed.
    Runtime = 4,
    /// A bug in the library; the message has the details.
    Panic = 5,
}

/// A causal diagram.
pub struct NcmGraph {
    inner: CausalDiagram,
}

/// A canonical structural model over binary variables.
pub struct NcmScm {
    inner: CanonicalScm,
}

/// A binary dataset.
pub struct NcmDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NcmStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(NcmStatus::InvalidArgument, msg.into())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match &e {
            CliError::Usage(_) => NcmStatus::InvalidArgument,
            CliError::Graph(_) | CliError::Json(_) | CliError::Csv(_) => NcmStatus::Parse,
            CliError::Io(_) => NcmStatus::Io,
            _ => NcmStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

macro_rules! impl_from_failure {
    ($($t:ty => $status:expr),* $(,)?) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure($status, e.to_string())
            }
        })*
    };
}

impl From<ncm::graph::GraphError> for Failure {
    fn from(e: ncm::graph::GraphError) -> Self {
        let status = match e {
            ncm::graph::GraphError::UnknownVariable(_) => NcmStatus::InvalidArgument,
            _ => NcmStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

impl_from_failure!(
    ncm::scm::ScmError => NcmStatus::Runtime,
    ncm::identify::IdentifyError => NcmStatus::Runtime,
    serde_json::Error => NcmStatus::Parse,
);

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NcmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NcmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&msg);
            NcmStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::invalid(format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::invalid(format!("{what} is null")))
}

fn owned_string(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure::invalid("string holds a NUL byte"))
}

/// The last error message on this thread, or null after a successful call.
/// Release with [`ncm_string_free`].
#[no_mangle]
pub extern "C" fn ncm_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ncm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version; a static string, do not free.
#[no_mangle]
pub extern "C" fn ncm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a diagram in the text format (`node A`, `A -> B`, `A <-> B` lines).
///
/// # Safety
/// `text` must be a NUL-terminated string; `graph` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ncm_graph_parse(text: *const c_char, graph: *mut *mut NcmGraph) -> NcmStatus {
    guard(|| {
        let g = CausalDiagram::parse(self::text(text, "text")?)?;
        *out(graph, "graph")? = Box::into_raw(Box::new(NcmGraph { inner: g }));
        Ok(())
    })
}

/// One of the benchmark diagrams by name, e.g. `"backdoor"` or `"iv"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `graph` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ncm_graph_fixture(name: *const c_char, graph: *mut *mut NcmGraph) -> NcmStatus {
    guard(|| {
        let name = text(name, "name")?;
        let f = fixtures::by_name(name).ok_or_else(|| Failure::invalid(format!("no fixture named '{name}'")))?;
        *out(graph, "graph")? = Box::into_raw(Box::new(NcmGraph { inner: f.diagram() }));
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ncm_graph_free(graph: *mut NcmGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of variables, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ncm_graph_num_vars(graph: *const NcmGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.num_vars())
}

/// The diagram in the text format.
///
/// # Safety
/// `graph` must be a live handle; `text` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ncm_graph_to_text(graph: *const NcmGraph, text: *mut *mut c_char) -> NcmStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        *out(text, "text")? = owned_string(&g.inner.to_text())?;
        Ok(())
    })
}

/// Symbolic identification of `P(outcome | do(treatment))`. On success
/// `identified` is set, and `estimand` receives the closed form when there
/// is one (null otherwise; free it with [`ncm_string_free`]).
///
/// # Safety
/// `graph` must be a live handle, the names NUL-terminated strings, and the
/// out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn ncm_symbolic_id(
    graph: *const NcmGraph,
    treatment: *const c_char,
    outcome: *const c_char,
    identified: *mut bool,
    estimand: *mut *mut c_char,
) -> NcmStatus {
    guard(|| {
        let g = &handle(graph, "graph")?.inner;
        let x = g.var_set(&[text(treatment, "treatment")?])?;
        let y = g.var_set(&[text(outcome, "outcome")?])?;
        let (flag, expr) = match symbolic_id(g, y, x) {
            Identification::Identified(e) => (true, owned_string(&e.to_string())?),
            Identification::NotIdentifiable { .. } => (false, ptr::null_mut()),
        };
        *out(identified, "identified")? = flag;
        *out(estimand, "estimand")? = expr;
        Ok(())
    })
}

/// A random canonical model on `graph`, reproducible from `seed`.
///
/// # Safety
/// `graph` must be a live handle; `scm` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ncm_scm_random(graph: *const NcmGraph, seed: u64, scm: *mut *mut NcmScm) -> NcmStatus {
    guard(|| {
        let m = CanonicalScm::random(&handle(graph, "graph")?.inner, seed)?;
        *out(scm, "scm")? = Box::into_raw(Box::new(NcmScm { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `scm` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ncm_scm_free(scm: *mut NcmScm) {
    if !scm.is_null() {
        drop(Box::from_raw(scm));
    }
}

/// Exact `P(outcome=1 | do(treatment=1)) - P(outcome=1 | do(treatment=0))`.
///
/// # Safety
/// `scm` must be a live handle, the names NUL-terminated strings, `ate` writable.
#[no_mangle]
pub unsafe extern "C" fn ncm_scm_ate(
    scm: *const NcmScm,
    treatment: *const c_char,
    outcome: *const c_char,
    ate: *mut f64,
) -> NcmStatus {
    guard(|| {
        let m = &handle(scm, "scm")?.inner;
        let g = m.graph();
        let (x, y) = (g.var(text(treatment, "treatment")?)?, g.var(text(outcome, "outcome")?)?);
        *out(ate, "ate")? = m.ate(x, y)?;
        Ok(())
    })
}

/// `n` observational samples.
///
/// # Safety
/// `scm` must be a live handle; `data` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ncm_scm_sample(scm: *const NcmScm, n: usize, seed: u64, data: *mut *mut NcmDataset) -> NcmStatus {
    guard(|| {
        let d = handle(scm, "scm")?.inner.sample(n, seed, &[])?;
        *out(data, "data")? = Box::into_raw(Box::new(NcmDataset { inner: d }));
        Ok(())
    })
}

/// Read a CSV of 0/1 columns with a header row.
///
/// # Safety
/// `path` must be a NUL-terminated string; `data` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ncm_dataset_load(path: *const c_char, data: *mut *mut NcmDataset) -> NcmStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        if !path.is_file() {
            return Err(Failure(NcmStatus::Io, format!("{}: no such file", path.display())));
        }
        let d = Dataset::load(path).map_err(|e| match e {
            ncm::scm::ScmError::Io(io) => Failure(NcmStatus::Io, io.to_string()),
            other => Failure(NcmStatus::Parse, other.to_string()),
        })?;
        *out(data, "data")? = Box::into_raw(Box::new(NcmDataset { inner: d }));
        Ok(())
    })
}

/// Write the dataset as CSV with its provenance sidecar.
///
/// # Safety
/// `data` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ncm_dataset_save(data: *const NcmDataset, path: *const c_char) -> NcmStatus {
    guard(|| {
        handle(data, "data")?
            .inner
            .save(Path::new(text(path, "path")?))
            .map_err(|e| Failure(NcmStatus::Io, e.to_string()))
    })
}

/// # Safety
/// `data` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ncm_dataset_free(data: *mut NcmDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ncm_dataset_num_rows(data: *const NcmDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.num_rows())
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ncm_dataset_num_vars(data: *const NcmDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.num_vars())
}

/// Decide identifiability from `len` max–min gaps against `tau`.
/// `identifiable` receives 1 or 0.
///
/// # Safety
/// `gaps` must point to `len` readable doubles; `identifiable` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncm_gap_test(gaps: *const f64, len: usize, tau: f64, identifiable: *mut i32) -> NcmStatus {
    guard(|| {
        if gaps.is_null() {
            return Err(Failure::invalid("gaps is null"));
        }
        let gaps = std::slice::from_raw_parts(gaps, len);
        let r = gap_test(gaps, tau, StdErrorRule::Root)?;
        *out(identifiable, "identifiable")? = (r.verdict == Verdict::Identifiable) as i32;
        Ok(())
    })
}

unsafe fn config<T: serde::de::DeserializeOwned>(json: *const c_char, fallback: T) -> Result<T, Failure> {
    if json.is_null() {
        return Ok(fallback);
    }
    Ok(serde_json::from_str(text(json, "config")?)?)
}

/// Neural identification of the ATE of `treatment` on `outcome`. `config_json`
/// holds identification settings (null for the defaults); `report_json`
/// receives the verdict report.
///
/// # Safety
/// Handles must be live, strings NUL-terminated or (for `config_json`) null,
/// and `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ncm_identify(
    data: *const NcmDataset,
    graph: *const NcmGraph,
    treatment: *const c_char,
    outcome: *const c_char,
    config_json: *const c_char,
    report_json: *mut *mut c_char,
) -> NcmStatus {
    guard(|| {
        let cfg: NeuralIdConfig = config(config_json, Settings::default().neural())?;
        let q = QuerySpec::Ate { treatment: text(treatment, "treatment")?.into(), outcome: text(outcome, "outcome")?.into() };
        let (report, _) = cli::identify(&handle(data, "data")?.inner, &handle(graph, "graph")?.inner, &q, &cfg, false)?;
        *out(report_json, "report_json")? = owned_string(&serde_json::to_string(&report)?)?;
        Ok(())
    })
}

/// Likelihood-trained and naive estimates of the ATE. `config_json` holds
/// training settings (null for the defaults); `report_json` receives the
/// estimate report.
///
/// # Safety
/// As for [`ncm_identify`].
#[no_mangle]
pub unsafe extern "C" fn ncm_estimate(
    data: *const NcmDataset,
    graph: *const NcmGraph,
    treatment: *const c_char,
    outcome: *const c_char,
    config_json: *const c_char,
    report_json: *mut *mut c_char,
) -> NcmStatus {
    guard(|| {
        let cfg: TrainConfig = config(config_json, Settings::default().train)?;
        let q = QuerySpec::Ate { treatment: text(treatment, "treatment")?.into(), outcome: text(outcome, "outcome")?.into() };
        let report = cli::estimate(&handle(data, "data")?.inner, &handle(graph, "graph")?.inner, &q, &cfg, None)?;
        *out(report_json, "report_json")? = owned_string(&serde_json::to_string(&report)?)?;
        Ok(())
    })
}
