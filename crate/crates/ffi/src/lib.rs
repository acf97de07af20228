//! C ABI over `manifold-mix`.
//!
//! Objects cross the boundary as opaque handles created by `mm_*_new`-style
//! functions and released by the matching `mm_*_free`. Every fallible call
//! returns an [`MmStatus`]; on failure a message is available from
//! [`mm_last_error_message`] until the next failing call on the same thread.
//! Points are passed as row-major `n × dim` arrays of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use manifold_mix::config::{Backend, ExperimentConfig};
use manifold_mix::eval::AveragedDensity;
use manifold_mix::geometry::{generate_dataset, true_density, Dataset, SmoothnessSpec};
use manifold_mix::gibbs::run_chain;
use manifold_mix::map::fit_map;
use manifold_mix::model::{contraction_rate, DensitySnapshot};
use manifold_mix::{Error, RngStream};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    Panic = 6,
}

/// A fitted or loaded mixture density.
pub struct MmSnapshot(DensitySnapshot);

/// Points drawn near a manifold, with the configuration that produced them.
pub struct MmDataset {
    data: Dataset,
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MmStatus {
    match e {
        Error::Config(_) => MmStatus::Config,
        Error::Numeric { .. } | Error::NonFinite { .. } | Error::DegenerateRate { .. } => MmStatus::Numeric,
        Error::Io(_) | Error::Json(_) | Error::Format(_) => MmStatus::Io,
        _ => MmStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (MmStatus, String)>) -> MmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MmStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            MmStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(name: &str) -> (MmStatus, String) {
    (MmStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MmStatus, String)> {
    if p.is_null() {
        return Err(null_err(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MmStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Draws the dataset described by a TOML experiment configuration.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_dataset_generate(config_toml: *const c_char, seed: u64, out: *mut *mut MmDataset) -> MmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let mut config = ExperimentConfig::from_toml_str(str_arg(config_toml, "config_toml")?).map_err(lib_err)?;
        config.data.seed = seed;
        let data = generate_dataset(
            &config.manifold,
            &config.noise.spec(),
            config.data.n,
            &mut RngStream::new(seed, 0),
        )
        .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MmDataset { data, config }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from [`mm_dataset_generate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mm_dataset_free(ds: *mut MmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn mm_dataset_len(ds: *const MmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.len())
}

/// Ambient dimension; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn mm_dataset_dim(ds: *const MmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.dim())
}

/// Copies the points into `out`, which must hold `len × dim` doubles.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mm_dataset_points(ds: *const MmDataset, out: *mut f64, capacity: usize) -> MmStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null_err("ds"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let flat = ds.data.points.as_flat();
        if capacity < flat.len() {
            return Err((MmStatus::InvalidArgument, format!("buffer holds {capacity} doubles, need {}", flat.len())));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
        Ok(())
    })
}

/// Generating density of the dataset at `n` points.
///
/// # Safety
/// `ds` must be a live dataset handle, `x` must hold `n × dim` doubles and
/// `out` `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mm_dataset_true_density(ds: *const MmDataset, x: *const f64, n: usize, out: *mut f64) -> MmStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null_err("ds"))?;
        if x.is_null() || out.is_null() {
            return Err(null_err("x/out"));
        }
        let d = ds.data.dim();
        let xs = std::slice::from_raw_parts(x, n * d);
        for (i, row) in xs.chunks_exact(d).enumerate() {
            let v = manifold_mix::DVector::from_column_slice(row);
            *out.add(i) = true_density(&ds.data.spec, &ds.data.noise, &v).map_err(lib_err)?;
        }
        Ok(())
    })
}

/// Fits the backend named in the dataset's configuration and returns the
/// fitted density: the MAP mixture, or the average of the kept Gibbs draws.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_fit(ds: *const MmDataset, out: *mut *mut MmSnapshot) -> MmStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null_err("ds"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let cfg = &ds.config;
        let snap = match cfg.inference.backend {
            Backend::Gibbs => {
                let mut g = cfg.gibbs_config(cfg.data.seed).map_err(lib_err)?;
                g.stream = 2;
                let trace = run_chain(&ds.data.points, &g).map_err(lib_err)?;
                AveragedDensity::new(trace.snapshots())
                    .and_then(|a| a.to_snapshot())
                    .map_err(lib_err)?
            }
            Backend::Map => {
                let prior = cfg.prior_config().map_err(lib_err)?;
                fit_map(
                    &ds.data.points,
                    &prior,
                    &cfg.inference.map.settings(),
                    &mut RngStream::new(cfg.data.seed, 2),
                )
                .map_err(lib_err)?
                .snapshot
            }
        };
        *out = Box::into_raw(Box::new(MmSnapshot(snap)));
        Ok(())
    })
}

/// Parses a snapshot from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_snapshot_from_json(json: *const c_char, out: *mut *mut MmSnapshot) -> MmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let s = DensitySnapshot::from_json(str_arg(json, "json")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MmSnapshot(s)));
        Ok(())
    })
}

/// Serializes a snapshot; release the string with [`mm_string_free`].
///
/// # Safety
/// `snap` must be a live snapshot handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_snapshot_to_json(snap: *const MmSnapshot, out: *mut *mut c_char) -> MmStatus {
    guard(|| {
        let snap = snap.as_ref().ok_or_else(|| null_err("snap"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let s = snap.0.to_json().map_err(lib_err)?;
        *out = CString::new(s).expect("JSON has no NUL bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `snap` must be null or a live snapshot handle.
#[no_mangle]
pub unsafe extern "C" fn mm_snapshot_free(snap: *mut MmSnapshot) {
    if !snap.is_null() {
        drop(Box::from_raw(snap));
    }
}

/// Number of components; 0 for a null handle.
///
/// # Safety
/// `snap` must be null or a live snapshot handle.
#[no_mangle]
pub unsafe extern "C" fn mm_snapshot_len(snap: *const MmSnapshot) -> usize {
    snap.as_ref().map_or(0, |s| s.0.len())
}

/// Dimension; 0 for a null handle.
///
/// # Safety
/// `snap` must be null or a live snapshot handle.
#[no_mangle]
pub unsafe extern "C" fn mm_snapshot_dim(snap: *const MmSnapshot) -> usize {
    snap.as_ref().map_or(0, |s| s.0.dim())
}

/// Log-density at `n` points.
///
/// # Safety
/// `snap` must be a live snapshot handle, `x` must hold `n × dim` doubles
/// and `out` `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mm_snapshot_log_density(snap: *const MmSnapshot, x: *const f64, n: usize, out: *mut f64) -> MmStatus {
    guard(|| {
        let snap = snap.as_ref().ok_or_else(|| null_err("snap"))?;
        if x.is_null() || out.is_null() {
            return Err(null_err("x/out"));
        }
        let d = snap.0.dim();
        let xs = std::slice::from_raw_parts(x, n * d);
        for (i, row) in xs.chunks_exact(d).enumerate() {
            *out.add(i) = snap.0.log_density(row);
        }
        Ok(())
    })
}

/// Contraction rate `ε_n` for the anisotropic smoothness `(β0, β⊥)` of a
/// `d`-dimensional manifold in `R^D`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_contraction_rate(
    beta0: f64,
    beta_perp: f64,
    d: usize,
    ambient: usize,
    n: usize,
    delta: f64,
    out: *mut f64,
) -> MmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let s = SmoothnessSpec::new(beta0, beta_perp, d, ambient).map_err(lib_err)?;
        *out = contraction_rate(&s, n, delta).map_err(lib_err)?.epsilon;
        Ok(())
    })
}
