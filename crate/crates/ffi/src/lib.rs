//! C ABI over the tree and mask primitives.
//!
//! Every fallible function returns an [`MkStatus`]; on failure the message is
//! available from [`mk_last_error`] on the same thread until the next call.
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Panics never cross the boundary.

use metis_kit::hypergraph::{build_routing_hypergraph, example_routes, Hypergraph, Topology};
use metis_kit::mask::{self, KlDirection, OutputKind};
use metis_kit::matrix::Matrix;
use metis_kit::tree::DecisionTree;
use metis_kit::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MkStatus {
    Ok = 0,
    NullArgument = 1,
    /// Shapes, lengths or values outside the function's domain.
    InvalidArgument = 2,
    /// Malformed JSON or a document that fails validation.
    Parse = 3,
    Utf8 = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MkKlDirection {
    /// `Σ Y_W ln(Y_W / Y_I)`.
    MaskedFirst = 0,
    /// `Σ Y_I ln(Y_I / Y_W)`.
    ReferenceFirst = 1,
}

/// A distilled decision tree.
pub struct MkTree(DecisionTree);

/// A hypergraph with its incidence matrix.
pub struct MkHypergraph(Hypergraph);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("interior nuls removed"));
}

fn status_of(e: &Error) -> MkStatus {
    match e {
        Error::Json(_) | Error::Parse { .. } | Error::Validation(_) | Error::Config { .. } => MkStatus::Parse,
        _ => MkStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (MkStatus, String)>) -> MkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MkStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MkStatus::Panic
        }
    }
}

fn lib(e: Error) -> (MkStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MkStatus, String) {
    (MkStatus::NullArgument, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> (MkStatus, String) {
    (MkStatus::InvalidArgument, msg.into())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MkStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (MkStatus::Utf8, format!("`{what}` is not UTF-8: {e}")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (MkStatus, String)> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, n) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (MkStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (MkStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn matrix_like(reference: &Matrix, data: &[f64], what: &str) -> Result<Matrix, (MkStatus, String)> {
    if data.len() != reference.as_slice().len() {
        return Err(invalid(format!("`{what}` has {} entries, expected {}", data.len(), reference.as_slice().len())));
    }
    Matrix::from_vec(reference.rows(), reference.cols(), data.to_vec()).map_err(lib)
}

/// Message of the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn mk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Per-chunk streaming QoE: bitrate in Mbps minus rebuffer and smoothness
/// penalties.
#[no_mangle]
pub extern "C" fn mk_qoe(bitrate_kbps: f64, rebuffer_s: f64, prev_bitrate_kbps: f64) -> f64 {
    metis_kit::abr::qoe(bitrate_kbps, rebuffer_s, prev_bitrate_kbps)
}

// ---------------------------------------------------------------- trees ----

/// Parse a tree from its JSON form or from a `tree.json` artifact.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_tree_from_json(json: *const c_char, out_tree: *mut *mut MkTree) -> MkStatus {
    guard(|| {
        let slot = out(out_tree, "out_tree")?;
        let s = text(json, "json")?;
        let tree = DecisionTree::from_json(s).or_else(|_| metis_kit::pipeline::load_tree_artifact(s)).map_err(lib)?;
        *slot = Box::into_raw(Box::new(MkTree(tree)));
        Ok(())
    })
}

/// # Safety
/// `tree` must come from [`mk_tree_from_json`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mk_tree_free(tree: *mut MkTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// # Safety
/// `tree` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_tree_leaf_count(tree: *const MkTree, out_count: *mut usize) -> MkStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(tree, "tree")?.0.leaf_count();
        Ok(())
    })
}

/// Smallest feature vector length the tree accepts; longer vectors are fine.
///
/// # Safety
/// `tree` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_tree_n_features(tree: *const MkTree, out_count: *mut usize) -> MkStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(tree, "tree")?.0.n_features();
        Ok(())
    })
}

/// Leaf value for one state: a class index for classification trees, the
/// regression output otherwise.
///
/// # Safety
/// `features` must point to `len` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_tree_predict(
    tree: *const MkTree,
    features: *const f64,
    len: usize,
    out_value: *mut f64,
) -> MkStatus {
    guard(|| {
        let t = &handle(tree, "tree")?.0;
        let x = slice(features, len, "features")?;
        if len < t.n_features() {
            return Err(invalid(format!("tree reads {} features, got {len}", t.n_features())));
        }
        *out(out_value, "out_value")? = t.predict(x);
        Ok(())
    })
}

/// Graphviz rendering; release the string with [`mk_string_free`].
///
/// # Safety
/// `tree` must be a live handle; `out_dot` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_tree_to_dot(tree: *const MkTree, out_dot: *mut *mut c_char) -> MkStatus {
    guard(|| {
        let slot = out(out_dot, "out_dot")?;
        let dot = handle(tree, "tree")?.0.to_dot(&[]);
        *slot = CString::new(dot).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

// ----------------------------------------------------------- hypergraphs ----

/// # Safety
/// `json` must be a NUL-terminated string; `out_graph` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_hypergraph_from_json(json: *const c_char, out_graph: *mut *mut MkHypergraph) -> MkStatus {
    guard(|| {
        let slot = out(out_graph, "out_graph")?;
        let h = Hypergraph::from_json(text(json, "json")?).map_err(lib)?;
        *slot = Box::into_raw(Box::new(MkHypergraph(h)));
        Ok(())
    })
}

/// The seven-node, two-demand routing example.
///
/// # Safety
/// `out_graph` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_hypergraph_example(out_graph: *mut *mut MkHypergraph) -> MkStatus {
    guard(|| {
        let slot = out(out_graph, "out_graph")?;
        let h = build_routing_hypergraph(&Topology::example(), &example_routes()).map_err(lib)?;
        *slot = Box::into_raw(Box::new(MkHypergraph(h)));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mk_hypergraph_free(graph: *mut MkHypergraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Hyperedge and vertex counts; masks are `n_edges × n_vertices`, row-major.
///
/// # Safety
/// `graph` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_hypergraph_shape(
    graph: *const MkHypergraph,
    out_edges: *mut usize,
    out_vertices: *mut usize,
) -> MkStatus {
    guard(|| {
        let h = &handle(graph, "graph")?.0;
        *out(out_edges, "out_edges")? = h.n_edges();
        *out(out_vertices, "out_vertices")? = h.n_vertices();
        Ok(())
    })
}

/// Copy the incidence matrix into `out_incidence` (`len` entries, row-major).
///
/// # Safety
/// `out_incidence` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mk_hypergraph_incidence(
    graph: *const MkHypergraph,
    out_incidence: *mut f64,
    len: usize,
) -> MkStatus {
    guard(|| {
        let inc = handle(graph, "graph")?.0.incidence().as_slice();
        if len != inc.len() {
            return Err(invalid(format!("buffer holds {len} entries, incidence has {}", inc.len())));
        }
        if out_incidence.is_null() {
            return Err(null("out_incidence"));
        }
        std::slice::from_raw_parts_mut(out_incidence, len).copy_from_slice(inc);
        Ok(())
    })
}

// ----------------------------------------------------------------- masks ----

/// `W = I ⊙ σ(W′)`, written to `out_mask`.
///
/// # Safety
/// `w_prime` and `out_mask` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mk_mask_gate(
    graph: *const MkHypergraph,
    w_prime: *const f64,
    len: usize,
    out_mask: *mut f64,
) -> MkStatus {
    guard(|| {
        let inc = handle(graph, "graph")?.0.incidence();
        let wp = matrix_like(inc, slice(w_prime, len, "w_prime")?, "w_prime")?;
        let w = mask::gate(inc, &wp).map_err(lib)?;
        if out_mask.is_null() {
            return Err(null("out_mask"));
        }
        std::slice::from_raw_parts_mut(out_mask, len).copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// `Σ |W_ev|`.
///
/// # Safety
/// `w` must point to `len` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_mask_norm(w: *const f64, len: usize, out_value: *mut f64) -> MkStatus {
    guard(|| {
        let data = slice(w, len, "w")?;
        *out(out_value, "out_value")? = mask::norm(&Matrix::from_vec(1, len, data.to_vec()).map_err(lib)?);
        Ok(())
    })
}

/// Binary entropy in nats summed over the connections of `graph`.
///
/// # Safety
/// `w` must point to `len` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_mask_entropy(
    graph: *const MkHypergraph,
    w: *const f64,
    len: usize,
    out_value: *mut f64,
) -> MkStatus {
    guard(|| {
        let inc = handle(graph, "graph")?.0.incidence();
        let m = matrix_like(inc, slice(w, len, "w")?, "w")?;
        if m.as_slice().iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid("mask entries must lie in [0, 1]"));
        }
        *out(out_value, "out_value")? = mask::entropy(&m, inc);
        Ok(())
    })
}

/// KL divergence between stacked distributions. `segments` lists the size
/// of each distribution and must cover `len` entries.
///
/// # Safety
/// `y_w` and `y_i` must point to `len` doubles, `segments` to `n_segments`
/// sizes; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_divergence_discrete(
    y_w: *const f64,
    y_i: *const f64,
    len: usize,
    segments: *const usize,
    n_segments: usize,
    direction: MkKlDirection,
    out_value: *mut f64,
) -> MkStatus {
    guard(|| {
        let (a, b) = (slice(y_w, len, "y_w")?, slice(y_i, len, "y_i")?);
        let segs = match (segments.is_null(), n_segments) {
            (_, 0) => Vec::new(),
            (true, _) => return Err(null("segments")),
            (false, n) => std::slice::from_raw_parts(segments, n).to_vec(),
        };
        let dir = match direction {
            MkKlDirection::MaskedFirst => KlDirection::MaskedFirst,
            MkKlDirection::ReferenceFirst => KlDirection::ReferenceFirst,
        };
        *out(out_value, "out_value")? =
            mask::divergence(a, b, &OutputKind::Discrete { segments: segs }, dir).map_err(lib)?;
        Ok(())
    })
}

/// Summed squared error between two real-valued outputs.
///
/// # Safety
/// `y_w` and `y_i` must point to `len` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mk_divergence_continuous(
    y_w: *const f64,
    y_i: *const f64,
    len: usize,
    out_value: *mut f64,
) -> MkStatus {
    guard(|| {
        let (a, b) = (slice(y_w, len, "y_w")?, slice(y_i, len, "y_i")?);
        *out(out_value, "out_value")? =
            mask::divergence(a, b, &OutputKind::Continuous, KlDirection::MaskedFirst).map_err(lib)?;
        Ok(())
    })
}
