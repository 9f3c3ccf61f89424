//! C ABI over the disguiser: image I/O, trained-model inference and the
//! whole pipeline.
//!
//! Every fallible call returns an [`EegCloakStatus`]; on failure the message
//! is kept per thread and read back with [`eeg_cloak_last_error`]. Handles
//! are opaque and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use eeg_cloak::config::{parse_config, RunConfig};
use eeg_cloak::dataset::Alcoholism;
use eeg_cloak::disguiser::{DisguiseError, DisguiserModel};
use eeg_cloak::pipeline::Pipeline;
use eeg_cloak::topomap::{EegImage, Provenance, TopomapError, IMAGE_CHANNELS};
use eeg_cloak::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EegCloakStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    Disguise = 7,
    Stage = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EegCloakProvenance {
    Real = 0,
    Dummy = 1,
    Disguised = 2,
}

/// One 3-channel topography image.
pub struct EegCloakImage(EegImage);

/// A trained disguiser loaded from a checkpoint.
pub struct EegCloakDisguiser(DisguiserModel);

/// A configured pipeline bound to a work directory.
pub struct EegCloakPipeline(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EegCloakStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => EegCloakStatus::Config,
            Error::Io { .. } | Error::Json { .. } => EegCloakStatus::Io,
            Error::Topomap(TopomapError::Io(..)) => EegCloakStatus::Io,
            Error::Topomap(_) | Error::Checkpoint(_) => EegCloakStatus::Format,
            Error::Disguise(_) => EegCloakStatus::Disguise,
            _ => EegCloakStatus::Stage,
        };
        Failure(status, e.to_string())
    }
}

impl From<DisguiseError> for Failure {
    fn from(e: DisguiseError) -> Self {
        match e {
            DisguiseError::Checkpoint(c) => Error::Checkpoint(c).into(),
            other => Error::Disguise(other).into(),
        }
    }
}

impl From<TopomapError> for Failure {
    fn from(e: TopomapError) -> Self {
        Error::Topomap(e).into()
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EegCloakStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EegCloakStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EegCloakStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            EegCloakStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(EegCloakStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EegCloakStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(EegCloakStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut *mut T) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(EegCloakStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

unsafe fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn eeg_cloak_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn eeg_cloak_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Real image from `3 * height * width` channel-major floats in [0, 1].
///
/// # Safety
/// `pixels` must point to `len` readable floats; `subject_id` must be a
/// NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_new(
    height: usize,
    width: usize,
    pixels: *const f32,
    len: usize,
    subject_id: *const c_char,
    alcoholic: bool,
    stimulus: usize,
    out: *mut *mut EegCloakImage,
) -> EegCloakStatus {
    guard(|| {
        out_arg(out)?;
        let subject_id = str_arg(subject_id, "subject_id")?.to_string();
        if pixels.is_null() {
            return Err(Failure(EegCloakStatus::NullPointer, "pixels is null".into()));
        }
        let n = IMAGE_CHANNELS * height * width;
        if height == 0 || width == 0 || len != n {
            return Err(invalid(format!("{len} pixels for a {height}x{width} image, expected {n}")));
        }
        let px = std::slice::from_raw_parts(pixels, len).to_vec();
        if px.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("pixel values must lie in [0, 1]"));
        }
        let img = EegImage {
            height,
            width,
            pixels: px,
            subject_id,
            alcoholism: if alcoholic { Alcoholism::Alcoholic } else { Alcoholism::Control },
            stimulus,
            provenance: Provenance::Real,
        };
        *out = Box::into_raw(Box::new(EegCloakImage(img)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_load(path: *const c_char, out: *mut *mut EegCloakImage) -> EegCloakStatus {
    guard(|| {
        out_arg(out)?;
        let path = str_arg(path, "path")?;
        let img = EegImage::load(path.as_ref())?;
        *out = Box::into_raw(Box::new(EegCloakImage(img)));
        Ok(())
    })
}

/// # Safety
/// `image` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_save(image: *const EegCloakImage, path: *const c_char) -> EegCloakStatus {
    guard(|| {
        let img = ref_arg(image, "image")?;
        let path = str_arg(path, "path")?;
        img.0.save(path.as_ref())?;
        Ok(())
    })
}

/// # Safety
/// `image` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_height(image: *const EegCloakImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height)
}

/// # Safety
/// `image` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_width(image: *const EegCloakImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width)
}

/// # Safety
/// `image` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_provenance(
    image: *const EegCloakImage,
    out: *mut EegCloakProvenance,
) -> EegCloakStatus {
    guard(|| {
        let img = ref_arg(image, "image")?;
        if out.is_null() {
            return Err(Failure(EegCloakStatus::NullPointer, "output pointer is null".into()));
        }
        *out = match img.0.provenance {
            Provenance::Real => EegCloakProvenance::Real,
            Provenance::Dummy => EegCloakProvenance::Dummy,
            Provenance::Disguised => EegCloakProvenance::Disguised,
        };
        Ok(())
    })
}

/// Copies the `3 * height * width` pixels into `buf`.
///
/// # Safety
/// `image` must be a live handle; `buf` must have room for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_pixels(
    image: *const EegCloakImage,
    buf: *mut f32,
    len: usize,
) -> EegCloakStatus {
    guard(|| {
        let img = ref_arg(image, "image")?;
        if buf.is_null() {
            return Err(Failure(EegCloakStatus::NullPointer, "buf is null".into()));
        }
        let px = &img.0.pixels;
        if len < px.len() {
            return Err(invalid(format!("buffer holds {len} floats, image has {}", px.len())));
        }
        std::ptr::copy_nonoverlapping(px.as_ptr(), buf, px.len());
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_image_free(image: *mut EegCloakImage) {
    free_box(image);
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_disguiser_load(
    path: *const c_char,
    out: *mut *mut EegCloakDisguiser,
) -> EegCloakStatus {
    guard(|| {
        out_arg(out)?;
        let path = str_arg(path, "path")?;
        let model = DisguiserModel::load(path.as_ref())?;
        *out = Box::into_raw(Box::new(EegCloakDisguiser(model)));
        Ok(())
    })
}

/// Image height the model accepts; 0 for NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_disguiser_height(model: *const EegCloakDisguiser) -> usize {
    model.as_ref().map_or(0, |m| m.0.image_size[0])
}

/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_disguiser_width(model: *const EegCloakDisguiser) -> usize {
    model.as_ref().map_or(0, |m| m.0.image_size[1])
}

/// Maps a real image to its disguised counterpart.
///
/// # Safety
/// `model` and `image` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_disguiser_apply(
    model: *const EegCloakDisguiser,
    image: *const EegCloakImage,
    out: *mut *mut EegCloakImage,
) -> EegCloakStatus {
    guard(|| {
        out_arg(out)?;
        let m = ref_arg(model, "model")?;
        let img = ref_arg(image, "image")?;
        let fake = m.0.disguise(&img.0)?;
        *out = Box::into_raw(Box::new(EegCloakImage(fake)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_disguiser_free(model: *mut EegCloakDisguiser) {
    free_box(model);
}

/// Pipeline over `workdir`. `config_json` may be NULL for the defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_pipeline_new(
    config_json: *const c_char,
    workdir: *const c_char,
    out: *mut *mut EegCloakPipeline,
) -> EegCloakStatus {
    guard(|| {
        out_arg(out)?;
        let config = if config_json.is_null() {
            RunConfig::default()
        } else {
            parse_config(str_arg(config_json, "config_json")?)?
        };
        let workdir = PathBuf::from(str_arg(workdir, "workdir")?);
        std::fs::create_dir_all(&workdir).map_err(Error::io(&workdir))?;
        let mut p = Pipeline::new(config, workdir)?;
        p.verbose = false;
        *out = Box::into_raw(Box::new(EegCloakPipeline(p)));
        Ok(())
    })
}

/// Runs every stage and hands back the ablation report as JSON, to be
/// released with [`eeg_cloak_string_free`]. With `synthetic`, the corpus is
/// generated first.
///
/// # Safety
/// `pipeline` must be a live handle; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_pipeline_run_all(
    pipeline: *const EegCloakPipeline,
    synthetic: bool,
    report_json: *mut *mut c_char,
) -> EegCloakStatus {
    guard(|| {
        out_arg(report_json)?;
        let p = ref_arg(pipeline, "pipeline")?;
        let report = p.0.run_all(synthetic)?;
        let json = CString::new(report.to_json()).map_err(|_| invalid("report contains NUL"))?;
        *report_json = json.into_raw();
        Ok(())
    })
}

/// # Safety
/// `pipeline` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn eeg_cloak_pipeline_free(pipeline: *mut EegCloakPipeline) {
    free_box(pipeline);
}
