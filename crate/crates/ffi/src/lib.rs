//! C ABI over the `offgrid` library.
//!
//! Every object is an opaque heap handle created by a `*_new`-style function
//! and released by the matching `*_free`. Functions return an
//! [`OffgridStatus`]; on failure [`offgrid_last_error`] describes the error
//! for the calling thread. Panics are caught at the boundary and reported as
//! [`OffgridStatus::Panic`].
//!
//! Spectra are exchanged as interleaved `re, im` doubles and images as real
//! doubles, both row-major over the centered grid (row index `k1` outer).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use num_complex::Complex64;
use offgrid::edges::pseudospectrum;
use offgrid::forward::{lowpass_op, random_mask, ForwardOp};
use offgrid::framebank::FilterBank;
use offgrid::image::Image;
use offgrid::learn::learn;
use offgrid::phantom::{scene_fourier, Scene};
use offgrid::pipeline::{run_pipeline, ExperimentConfig};
use offgrid::restore::{ifft_baseline, lslp, split_bregman, to_function_image};
use offgrid::{make_grid, Error, SpectralImage};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffgridStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

impl From<&Error> for OffgridStatus {
    fn from(e: &Error) -> Self {
        match e.root() {
            Error::Config(_) => OffgridStatus::Config,
            Error::Numerical(_) | Error::EmptyResult(_) => OffgridStatus::Numerical,
            Error::Io(_) => OffgridStatus::Io,
            Error::Format { .. } => OffgridStatus::Format,
            _ => OffgridStatus::InvalidArgument,
        }
    }
}

/// Experiment configuration (see the `key = value` keys of the CLI).
pub struct OffgridConfig(ExperimentConfig);
/// Fourier samples on a centered grid.
pub struct OffgridSpectrum(SpectralImage);
/// Forward (sampling) operator.
pub struct OffgridOperator(ForwardOp);
/// Learned tight-frame filter bank, bound to a sample grid.
pub struct OffgridBank(FilterBank);
/// Real image or edge map.
pub struct OffgridImage(Image);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(OffgridStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(OffgridStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OffgridStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(OffgridStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OffgridStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OffgridStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OffgridStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    let slot = out.as_mut().ok_or_else(|| null("output pointer"))?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn offgrid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn offgrid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn offgrid_config_new(out: *mut *mut OffgridConfig) -> OffgridStatus {
    guard(|| put(out, OffgridConfig(ExperimentConfig::default())))
}

/// Configuration read from a `key = value` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_config_from_file(path: *const c_char, out: *mut *mut OffgridConfig) -> OffgridStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_file(Path::new(str_arg(path, "path")?))?;
        put(out, OffgridConfig(cfg))
    })
}

/// Sets one configuration key.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn offgrid_config_set(
    cfg: *mut OffgridConfig,
    key: *const c_char,
    value: *const c_char,
) -> OffgridStatus {
    guard(|| {
        let cfg = get_mut(cfg, "config")?;
        cfg.0.set(str_arg(key, "key")?, str_arg(value, "value")?)?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn offgrid_config_free(cfg: *mut OffgridConfig) {
    free(cfg)
}

/// Runs every stage into the configured output directory.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn offgrid_run_pipeline(cfg: *const OffgridConfig) -> OffgridStatus {
    guard(|| {
        run_pipeline(&get(cfg, "config")?.0)?;
        Ok(())
    })
}

/// Spectrum from `2 * n1 * n2` interleaved doubles.
///
/// # Safety
/// `values` must point to `2 * n1 * n2` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_spectrum_new(
    n1: usize,
    n2: usize,
    values: *const f64,
    out: *mut *mut OffgridSpectrum,
) -> OffgridStatus {
    guard(|| {
        let grid = make_grid(n1, n2)?;
        if values.is_null() {
            return Err(null("values"));
        }
        let raw = std::slice::from_raw_parts(values, 2 * grid.cardinality());
        let v = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        put(out, OffgridSpectrum(SpectralImage::new(grid, v)?))
    })
}

/// Fourier samples of a built-in scene (`square`, `square_disk`).
///
/// # Safety
/// `scene` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_spectrum_phantom(
    scene: *const c_char,
    n1: usize,
    n2: usize,
    out: *mut *mut OffgridSpectrum,
) -> OffgridStatus {
    guard(|| {
        let name = str_arg(scene, "scene")?;
        let scene = Scene::builtin(name).ok_or_else(|| invalid(format!("unknown scene {name:?}")))?;
        put(out, OffgridSpectrum(scene_fourier(&scene, &make_grid(n1, n2)?)?))
    })
}

/// Grid dimensions of a spectrum.
///
/// # Safety
/// `s` must come from this library; `n1` and `n2` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_spectrum_dims(
    s: *const OffgridSpectrum,
    n1: *mut usize,
    n2: *mut usize,
) -> OffgridStatus {
    guard(|| {
        let (a, b) = get(s, "spectrum")?.0.grid().dims();
        *get_mut(n1, "n1")? = a;
        *get_mut(n2, "n2")? = b;
        Ok(())
    })
}

/// Copies the values as interleaved doubles; `len` counts doubles and must
/// be exactly `2 * n1 * n2`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn offgrid_spectrum_copy(s: *const OffgridSpectrum, buf: *mut f64, len: usize) -> OffgridStatus {
    guard(|| {
        let v = get(s, "spectrum")?.0.values();
        if len != 2 * v.len() {
            return Err(invalid(format!("buffer holds {len} doubles, need {}", 2 * v.len())));
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for (d, z) in dst.chunks_exact_mut(2).zip(v) {
            d[0] = z.re;
            d[1] = z.im;
        }
        Ok(())
    })
}

/// # Safety
/// `s` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn offgrid_spectrum_free(s: *mut OffgridSpectrum) {
    free(s)
}

/// Sampling mask from `n1 * n2` bytes, nonzero meaning sampled.
///
/// # Safety
/// `mask` must point to `n1 * n2` readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_operator_mask(
    n1: usize,
    n2: usize,
    mask: *const u8,
    out: *mut *mut OffgridOperator,
) -> OffgridStatus {
    guard(|| {
        let grid = make_grid(n1, n2)?;
        if mask.is_null() {
            return Err(null("mask"));
        }
        let m = std::slice::from_raw_parts(mask, grid.cardinality())
            .iter()
            .map(|&b| b != 0)
            .collect();
        put(out, OffgridOperator(ForwardOp::from_mask(grid, m)?))
    })
}

/// The sampling operator the configuration describes on its grid.
///
/// # Safety
/// `cfg` must come from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_operator_from_config(
    cfg: *const OffgridConfig,
    out: *mut *mut OffgridOperator,
) -> OffgridStatus {
    guard(|| {
        let cfg = &get(cfg, "config")?.0;
        let grid = make_grid(cfg.grid.0, cfg.grid.1)?;
        put(out, OffgridOperator(cfg.build_operator(&grid)?))
    })
}

/// Centered `i1 x i2` lowpass block of an `n1 x n2` grid.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_operator_lowpass(
    n1: usize,
    n2: usize,
    i1: usize,
    i2: usize,
    out: *mut *mut OffgridOperator,
) -> OffgridStatus {
    guard(|| put(out, OffgridOperator(lowpass_op(&make_grid(n1, n2)?, (i1, i2))?)))
}

/// Variable-density random mask.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_operator_random(
    n1: usize,
    n2: usize,
    fraction: f64,
    density_power: f64,
    calib: usize,
    seed: u64,
    out: *mut *mut OffgridOperator,
) -> OffgridStatus {
    guard(|| {
        let op = random_mask(&make_grid(n1, n2)?, fraction, density_power, calib, seed)?;
        put(out, OffgridOperator(op))
    })
}

/// `out = A s`.
///
/// # Safety
/// Handles must come from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_operator_apply(
    op: *const OffgridOperator,
    s: *const OffgridSpectrum,
    out: *mut *mut OffgridSpectrum,
) -> OffgridStatus {
    guard(|| {
        let v = get(op, "operator")?.0.apply(&get(s, "spectrum")?.0)?;
        put(out, OffgridSpectrum(v))
    })
}

/// # Safety
/// `op` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn offgrid_operator_free(op: *mut OffgridOperator) {
    free(op)
}

/// Learns a filter bank from the configured low-frequency block of `f` and
/// binds it to the full grid of `f`.
///
/// # Safety
/// Handles must come from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_learn(
    cfg: *const OffgridConfig,
    f: *const OffgridSpectrum,
    op: *const OffgridOperator,
    out: *mut *mut OffgridBank,
) -> OffgridStatus {
    guard(|| {
        let cfg = &get(cfg, "config")?.0;
        let f = &get(f, "spectrum")?.0;
        let op = &get(op, "operator")?.0;
        let lg = make_grid(cfg.learn_grid.0, cfg.learn_grid.1)?;
        let out_bank = learn(&f.restrict(&lg)?, &op.restrict(&lg)?, &cfg.learn)?;
        put(out, OffgridBank(out_bank.bank.with_sample_grid(*f.grid())?))
    })
}

/// Rank and filter count of a bank.
///
/// # Safety
/// `bank` must come from this library; `rank` and `m2` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_bank_info(
    bank: *const OffgridBank,
    rank: *mut usize,
    m2: *mut usize,
) -> OffgridStatus {
    guard(|| {
        let b = &get(bank, "bank")?.0;
        *get_mut(rank, "rank")? = b.rank();
        *get_mut(m2, "m2")? = b.m2();
        Ok(())
    })
}

/// # Safety
/// `bank` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn offgrid_bank_free(bank: *mut OffgridBank) {
    free(bank)
}

/// Edge map sampled on a `p1 x p2` lattice over the unit cell.
///
/// # Safety
/// `bank` must come from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_edges(
    bank: *const OffgridBank,
    p1: usize,
    p2: usize,
    out: *mut *mut OffgridImage,
) -> OffgridStatus {
    guard(|| {
        let b = &get(bank, "bank")?.0;
        put(out, OffgridImage(pseudospectrum(b, b.rank(), (p1, p2))?.to_image()))
    })
}

/// Restoration method selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffgridMethod {
    Proposed = 0,
    Lslp = 1,
    Ifft = 2,
}

/// Restores `f` with the chosen method and returns the image.
///
/// # Safety
/// Handles must come from this library (`bank` may be null for `Ifft`);
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_restore(
    cfg: *const OffgridConfig,
    method: OffgridMethod,
    f: *const OffgridSpectrum,
    op: *const OffgridOperator,
    bank: *const OffgridBank,
    out: *mut *mut OffgridImage,
) -> OffgridStatus {
    guard(|| {
        let cfg = &get(cfg, "config")?.0;
        let f = &get(f, "spectrum")?.0;
        let op = &get(op, "operator")?.0;
        let img = match method {
            OffgridMethod::Ifft => ifft_baseline(f, op)?,
            OffgridMethod::Proposed => {
                let b = &get(bank, "bank")?.0;
                to_function_image(&split_bregman(f, op, b, &cfg.restore_config(b)?)?.v)?
            }
            OffgridMethod::Lslp => {
                let b = &get(bank, "bank")?.0;
                to_function_image(&lslp(f, op, b, &cfg.lslp_config(b.rank()))?.v)?
            }
        };
        put(out, OffgridImage(img))
    })
}

/// Image dimensions.
///
/// # Safety
/// `img` must come from this library; `n1` and `n2` writable.
#[no_mangle]
pub unsafe extern "C" fn offgrid_image_dims(img: *const OffgridImage, n1: *mut usize, n2: *mut usize) -> OffgridStatus {
    guard(|| {
        let (a, b) = get(img, "image")?.0.dims();
        *get_mut(n1, "n1")? = a;
        *get_mut(n2, "n2")? = b;
        Ok(())
    })
}

/// Copies the pixels; `len` must be exactly `n1 * n2`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn offgrid_image_copy(img: *const OffgridImage, buf: *mut f64, len: usize) -> OffgridStatus {
    guard(|| {
        let d = get(img, "image")?.0.data();
        if len != d.len() {
            return Err(invalid(format!("buffer holds {len} doubles, need {}", d.len())));
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(d);
        Ok(())
    })
}

/// # Safety
/// `img` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn offgrid_image_free(img: *mut OffgridImage) {
    free(img)
}
