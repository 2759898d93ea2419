//! C ABI over the `mixedsn` crate.
//!
//! Every function returns an [`MxsnStatus`]; on failure a message for the
//! calling thread is available from [`mxsn_last_error`]. Objects are opaque
//! handles created by `*_build`, `*_load` or `*_read` functions and released
//! with the matching `*_free`. Arrays are passed as pointer plus length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mixedsn::io::{read_hsc, HscPaths};
use mixedsn::metrics::{confusion, MetricsReport};
use mixedsn::network::{
    count_parameters, forward, load_checkpoint, save_checkpoint, MixedSnConfig, NetworkSpec,
    ParamStore, Profile,
};
use mixedsn::preprocess::{HsiCube, LabelMap};
use mixedsn::tensor::Tensor;
use mixedsn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MxsnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Validation = 7,
    Undefined = 8,
    Panic = 9,
}

pub const MXSN_PROFILE_IP: u32 = 0;
pub const MXSN_PROFILE_PU: u32 = 1;
pub const MXSN_PROFILE_SA: u32 = 2;
pub const MXSN_PROFILE_BW: u32 = 3;
pub const MXSN_PROFILE_CUSTOM: u32 = 4;

/// A network with its parameters.
pub struct MxsnNetwork {
    net: NetworkSpec,
    params: ParamStore<f32>,
}

/// A cube and its label map.
pub struct MxsnDataset {
    cube: HsiCube,
    labels: LabelMap,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MxsnMetrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub samples: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MxsnStatus {
    match e {
        Error::ShapeMismatch(_) | Error::EmptyExtent { .. } => MxsnStatus::ShapeMismatch,
        Error::InvalidArgument(_) => MxsnStatus::InvalidArgument,
        Error::NonFinite(_) => MxsnStatus::NonFinite,
        Error::Io { .. } => MxsnStatus::Io,
        Error::BadMagic { .. }
        | Error::LengthMismatch { .. }
        | Error::Unsupported { .. }
        | Error::Json { .. } => MxsnStatus::Format,
        Error::Validation(_) => MxsnStatus::Validation,
        Error::Undefined(_) => MxsnStatus::Undefined,
    }
}

struct Fail(MxsnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MxsnStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MxsnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MxsnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            MxsnStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            MxsnStatus::InvalidArgument,
            format!("`{what}` is not UTF-8"),
        )
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn profile_of(code: u32) -> Result<Profile, Fail> {
    Ok(match code {
        MXSN_PROFILE_IP => Profile::Ip,
        MXSN_PROFILE_PU => Profile::Pu,
        MXSN_PROFILE_SA => Profile::Sa,
        MXSN_PROFILE_BW => Profile::Bw,
        MXSN_PROFILE_CUSTOM => Profile::Custom,
        other => {
            return Err(Fail(
                MxsnStatus::InvalidArgument,
                format!("unknown profile {other}"),
            ))
        }
    })
}

fn config(
    profile: u32,
    classes: usize,
    bands: usize,
    window: usize,
) -> Result<MixedSnConfig, Fail> {
    Ok(MixedSnConfig {
        classes,
        bands,
        window,
        ..MixedSnConfig::for_profile(profile_of(profile)?)
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mxsn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mxsn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Trainable parameters of the full-width network for a profile.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mxsn_paramcount(
    profile: u32,
    classes: usize,
    bands: usize,
    window: usize,
    out: *mut usize,
) -> MxsnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let net = NetworkSpec::mixedsn(config(profile, classes, bands, window)?)?;
        *out = count_parameters(&net).total;
        Ok(())
    })
}

/// Builds a network with Glorot-normal weights drawn from `seed`.
///
/// # Safety
/// `out` must be valid for writes. The handle is released with
/// [`mxsn_network_free`].
#[no_mangle]
pub unsafe extern "C" fn mxsn_network_build(
    profile: u32,
    classes: usize,
    bands: usize,
    window: usize,
    seed: u64,
    out: *mut *mut MxsnNetwork,
) -> MxsnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let net = NetworkSpec::mixedsn(config(profile, classes, bands, window)?)?;
        let params = ParamStore::init(&net, &mut mixedsn::rng::Rng::new(seed));
        *out = Box::into_raw(Box::new(MxsnNetwork { net, params }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from this library and not be used afterwards; null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn mxsn_network_free(handle: *mut MxsnNetwork) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Input geometry `[channels, bands, window, window]` and class count.
///
/// # Safety
/// `handle` must be a live network; `shape` must hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn mxsn_network_shape(
    handle: *const MxsnNetwork,
    shape: *mut usize,
    classes: *mut usize,
) -> MxsnStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        let dims = h.net.input_shape();
        std::slice::from_raw_parts_mut(shape, 4).copy_from_slice(&dims);
        *out_arg(classes, "classes")? = h.net.classes();
        Ok(())
    })
}

/// # Safety
/// `handle` must be a live network and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mxsn_network_param_count(
    handle: *const MxsnNetwork,
    out: *mut usize,
) -> MxsnStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out_arg(out, "out")? = h.params.total();
        Ok(())
    })
}

/// Eval-mode logits for `batch` patches laid out `[batch, 1, T, S, S]`
/// row-major. `logits` receives `batch · classes` values.
///
/// # Safety
/// `input` must hold `input_len` floats and `logits` `logits_len` floats.
#[no_mangle]
pub unsafe extern "C" fn mxsn_network_forward(
    handle: *const MxsnNetwork,
    input: *const f32,
    input_len: usize,
    batch: usize,
    logits: *mut f32,
    logits_len: usize,
) -> MxsnStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let [c, t, s, _] = h.net.input_shape();
        let want = batch * c * t * s * s;
        if input_len != want {
            return Err(Fail(
                MxsnStatus::ShapeMismatch,
                format!("input holds {input_len} floats, {batch} patches need {want}"),
            ));
        }
        if logits_len != batch * h.net.classes() {
            return Err(Fail(
                MxsnStatus::ShapeMismatch,
                format!(
                    "logits buffer holds {logits_len} floats, need {}",
                    batch * h.net.classes()
                ),
            ));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let data = slice_arg(input, input_len, "input")?.to_vec();
        let x = Tensor::from_vec(&[batch, c, t, s, s], data)?;
        let y = forward(&h.net, &h.params, &x)?;
        std::slice::from_raw_parts_mut(logits, logits_len).copy_from_slice(y.data());
        Ok(())
    })
}

/// # Safety
/// `handle` must be a live network and `path` a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn mxsn_checkpoint_save(
    handle: *const MxsnNetwork,
    path: *const c_char,
    seed: u64,
) -> MxsnStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        save_checkpoint(path_arg(path, "path")?, &h.net, &h.params, seed)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 path and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mxsn_checkpoint_load(
    path: *const c_char,
    out: *mut *mut MxsnNetwork,
) -> MxsnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (manifest, params) = load_checkpoint::<f32>(path_arg(path, "path")?)?;
        params.check_against(&manifest.network)?;
        *out = Box::into_raw(Box::new(MxsnNetwork {
            net: manifest.network,
            params,
        }));
        Ok(())
    })
}

/// OA, AA and Kappa of one-based predictions against one-based truth.
///
/// # Safety
/// `truth` and `predicted` must hold `n` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mxsn_metrics(
    truth: *const u16,
    predicted: *const u16,
    n: usize,
    classes: usize,
    out: *mut MxsnMetrics,
) -> MxsnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cm = confusion(
            slice_arg(truth, n, "truth")?,
            slice_arg(predicted, n, "predicted")?,
            classes,
        )?;
        let r = MetricsReport::from_confusion(&cm)?;
        *out = MxsnMetrics {
            oa: r.oa,
            aa: r.aa,
            kappa: r.kappa,
            samples: r.n_samples,
        };
        Ok(())
    })
}

/// Reads an HSC container. `manifest` may be null, in which case it is
/// derived from the cube path.
///
/// # Safety
/// Paths must be NUL-terminated UTF-8; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mxsn_hsc_read(
    manifest: *const c_char,
    cube: *const c_char,
    labels: *const c_char,
    out: *mut *mut MxsnDataset,
) -> MxsnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mut paths = HscPaths::from_files(path_arg(cube, "cube")?, path_arg(labels, "labels")?);
        if !manifest.is_null() {
            paths.manifest = path_arg(manifest, "manifest")?;
        }
        let (cube, labels) = read_hsc(&paths)?;
        *out = Box::into_raw(Box::new(MxsnDataset { cube, labels }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from this library and not be used afterwards; null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn mxsn_dataset_free(handle: *mut MxsnDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Extents and class count of a dataset.
///
/// # Safety
/// `handle` must be a live dataset and every out pointer valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mxsn_dataset_dims(
    handle: *const MxsnDataset,
    height: *mut usize,
    width: *mut usize,
    bands: *mut usize,
    classes: *mut usize,
) -> MxsnStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out_arg(height, "height")? = h.cube.height();
        *out_arg(width, "width")? = h.cube.width();
        *out_arg(bands, "bands")? = h.cube.bands();
        *out_arg(classes, "classes")? = h.labels.classes();
        Ok(())
    })
}

/// Band-sequential cube values, `bands · height · width` floats owned by
/// the dataset.
///
/// # Safety
/// `handle` must be a live dataset; the pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn mxsn_dataset_cube(
    handle: *const MxsnDataset,
    values: *mut *const f32,
) -> MxsnStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out_arg(values, "values")? = h.cube.values().as_ptr();
        Ok(())
    })
}

/// Row-major labels, `height · width` values owned by the dataset.
///
/// # Safety
/// `handle` must be a live dataset; the pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn mxsn_dataset_labels(
    handle: *const MxsnDataset,
    ids: *mut *const u16,
) -> MxsnStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out_arg(ids, "ids")? = h.labels.ids().as_ptr();
        Ok(())
    })
}
