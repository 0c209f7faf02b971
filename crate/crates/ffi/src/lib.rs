//! C ABI over `mcatlas`.
//!
//! Every fallible function returns an [`McaStatus`]. On failure the message
//! is kept per thread and can be read with [`mca_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.
//! Point arrays are packed `xyz` triples, UV arrays packed `uv` pairs and
//! Jacobians row-major 3x2 blocks.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mcatlas::autodiff::Jacobian3x2;
use mcatlas::data::{load_sequence, normalize_unit_cube, Sequence};
use mcatlas::eval::{evaluate, metric_pck_auc, metric_rank, metric_sl2, CorrespondenceSet, EvalConfig};
use mcatlas::geom::{PointCloud, UvPoint, UvSampleSet, Vec3};
use mcatlas::model::{AtlasModel, FrameAtlas, LatentCode, SurfaceMap};
use mcatlas::sampling::{regular_uv_points, stream_rng};
use mcatlas::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Numerical = 6,
    Failed = 7,
    Panic = 8,
}

/// A trained atlas model.
pub struct McaModel(AtlasModel);

/// A point-cloud sequence.
pub struct McaSequence(Sequence);

/// The shape code of one frame under one model.
pub struct McaLatent(LatentCode);

/// Mean and population standard deviation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McaMeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Sequence-level correspondence metrics. `sl2` is scaled by 10^4.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McaMetrics {
    pub sl2: McaMeanStd,
    pub rank: McaMeanStd,
    pub auc: McaMeanStd,
    pub chamfer: McaMeanStd,
}

/// Metrics of one correspondence set. `sl2` is unscaled.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McaPairMetrics {
    pub sl2: f64,
    pub rank: f64,
    pub auc: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> McaStatus {
    if e.is_numerical() {
        return McaStatus::Numerical;
    }
    match e {
        Error::Io(_) => McaStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::LabelMismatch { .. } => McaStatus::Parse,
        Error::Checkpoint(_) => McaStatus::Checkpoint,
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::ShapeMismatch(_)
        | Error::EmptyInput(_)
        | Error::EmptyRequest(_) => McaStatus::InvalidArgument,
        _ => McaStatus::Failed,
    }
}

struct Fail(McaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(McaStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(McaStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> McaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            McaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn triples(xs: &[f64]) -> Vec<Vec3> {
    xs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

unsafe fn uv_arg(uv: *const f64, n: usize) -> Result<UvSampleSet, Fail> {
    let raw = slice_in(uv, 2 * n, "uv")?;
    let set = UvSampleSet::new(raw.chunks_exact(2).map(|c| UvPoint::new(c[0], c[1])).collect());
    set.check_domain()?;
    Ok(set)
}

fn patch_arg(model: &AtlasModel, patch: usize) -> Result<(), Fail> {
    if patch >= model.patch_count() {
        return Err(invalid(format!("patch {patch} out of range (model has {})", model.patch_count())));
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn mca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mca_model_load(path: *const c_char, out: *mut *mut McaModel) -> McaStatus {
    guard(|| {
        let model = AtlasModel::load(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(McaModel(model))), "out")
    })
}

/// # Safety
/// `model` must come from [`mca_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn mca_model_free(model: *mut McaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of patches, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mca_model_patch_count(model: *const McaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.patch_count())
}

/// Loads a sequence directory, optionally fitting frame 0 to the unit cube.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mca_sequence_load(path: *const c_char, normalize: bool, out: *mut *mut McaSequence) -> McaStatus {
    guard(|| {
        let mut seq = load_sequence(&path_arg(path)?)?;
        if normalize {
            seq = normalize_unit_cube(&seq)?.0;
        }
        write_out(out, Box::into_raw(Box::new(McaSequence(seq))), "out")
    })
}

/// # Safety
/// `seq` must come from [`mca_sequence_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn mca_sequence_free(seq: *mut McaSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Number of frames, or 0 for a null handle.
///
/// # Safety
/// `seq` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mca_sequence_frame_count(seq: *const McaSequence) -> usize {
    seq.as_ref().map_or(0, |s| s.0.len())
}

/// Point count of one frame.
///
/// # Safety
/// `seq` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mca_sequence_point_count(seq: *const McaSequence, frame: usize, out: *mut usize) -> McaStatus {
    guard(|| {
        let s = &deref(seq, "seq")?.0;
        let f = s.frames.get(frame).ok_or_else(|| invalid(format!("frame {frame} out of range")))?;
        write_out(out, f.len(), "out")
    })
}

/// Copies the points of one frame into `out_xyz`, which holds `capacity`
/// points.
///
/// # Safety
/// `seq` must be a live handle and `out_xyz` must hold `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mca_sequence_frame_points(
    seq: *const McaSequence,
    frame: usize,
    out_xyz: *mut f64,
    capacity: usize,
) -> McaStatus {
    guard(|| {
        let s = &deref(seq, "seq")?.0;
        let f = s.frames.get(frame).ok_or_else(|| invalid(format!("frame {frame} out of range")))?;
        if capacity < f.len() {
            return Err(invalid(format!("buffer holds {capacity} points, frame has {}", f.len())));
        }
        let out = slice_out(out_xyz, 3 * f.len(), "out_xyz")?;
        for (dst, p) in out.chunks_exact_mut(3).zip(f.iter()) {
            dst.copy_from_slice(&p);
        }
        Ok(())
    })
}

/// Encodes `n` points into a shape code.
///
/// # Safety
/// `model` must be a live handle, `xyz` must hold `3 * n` doubles and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mca_model_encode(
    model: *const McaModel,
    xyz: *const f64,
    n: usize,
    out: *mut *mut McaLatent,
) -> McaStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let cloud = PointCloud::from_points(triples(slice_in(xyz, 3 * n, "xyz")?));
        let z = m.encode(&cloud)?;
        write_out(out, Box::into_raw(Box::new(McaLatent(z))), "out")
    })
}

/// # Safety
/// `latent` must come from [`mca_model_encode`] or be null.
#[no_mangle]
pub unsafe extern "C" fn mca_latent_free(latent: *mut McaLatent) {
    if !latent.is_null() {
        drop(Box::from_raw(latent));
    }
}

/// Maps `n` UV points of one patch to 3D.
///
/// # Safety
/// Handles must be live, `uv` must hold `2 * n` doubles and `out_xyz`
/// `3 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mca_map_uv(
    model: *const McaModel,
    latent: *const McaLatent,
    patch: usize,
    uv: *const f64,
    n: usize,
    out_xyz: *mut f64,
) -> McaStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let z = &deref(latent, "latent")?.0;
        patch_arg(m, patch)?;
        let uv = uv_arg(uv, n)?;
        let pts = FrameAtlas::new(m, z.clone()).points(patch, &uv)?;
        let out = slice_out(out_xyz, 3 * n, "out_xyz")?;
        for (dst, p) in out.chunks_exact_mut(3).zip(&pts) {
            dst.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Jacobians `[∂/∂u ∂/∂v]` of one patch at `n` UV points, each written as
/// six doubles in row-major 3x2 order.
///
/// # Safety
/// Handles must be live, `uv` must hold `2 * n` doubles and `out_jac`
/// `6 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mca_jacobians(
    model: *const McaModel,
    latent: *const McaLatent,
    patch: usize,
    uv: *const f64,
    n: usize,
    out_jac: *mut f64,
) -> McaStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let z = &deref(latent, "latent")?.0;
        patch_arg(m, patch)?;
        let uv = uv_arg(uv, n)?;
        let jacs: Vec<Jacobian3x2> = FrameAtlas::new(m, z.clone()).jacobians(patch, &uv)?;
        let out = slice_out(out_jac, 6 * n, "out_jac")?;
        for (dst, j) in out.chunks_exact_mut(6).zip(&jacs) {
            for (r, row) in j.0.iter().enumerate() {
                dst[2 * r..2 * r + 2].copy_from_slice(row);
            }
        }
        Ok(())
    })
}

/// `m` well-spread points in the unit square, deterministic in `seed`.
///
/// # Safety
/// `out_uv` must hold `2 * m` doubles.
#[no_mangle]
pub unsafe extern "C" fn mca_regular_uv_points(m: usize, seed: u64, out_uv: *mut f64) -> McaStatus {
    guard(|| {
        if m == 0 {
            return Err(invalid("point count must be positive"));
        }
        let out = slice_out(out_uv, 2 * m, "out_uv")?;
        let set = regular_uv_points(m, &mut stream_rng(seed, 0));
        for (dst, p) in out.chunks_exact_mut(2).zip(&set.points) {
            dst[0] = p.u;
            dst[1] = p.v;
        }
        Ok(())
    })
}

/// Metrics of `n` predicted points against their true positions. `auc`
/// uses `thresholds` squared-error thresholds up to `max_threshold`.
///
/// # Safety
/// `predicted` and `truth` must hold `3 * n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mca_correspondence_metrics(
    predicted: *const f64,
    truth: *const f64,
    n: usize,
    max_threshold: f64,
    thresholds: usize,
    out: *mut McaPairMetrics,
) -> McaStatus {
    guard(|| {
        let truth = triples(slice_in(truth, 3 * n, "truth")?);
        let corr = CorrespondenceSet {
            sources: truth.clone(),
            predicted: triples(slice_in(predicted, 3 * n, "predicted")?),
            truth,
        };
        let m = McaPairMetrics {
            sl2: metric_sl2(&corr)?,
            rank: metric_rank(&corr)?,
            auc: metric_pck_auc(&corr, max_threshold, thresholds)?,
        };
        write_out(out, m, "out")
    })
}

/// Evaluates `model` on a labeled sequence over `pairs` random frame pairs
/// (0 selects the default).
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mca_evaluate(
    model: *const McaModel,
    seq: *const McaSequence,
    pairs: usize,
    out: *mut McaMetrics,
) -> McaStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let s = &deref(seq, "seq")?.0;
        let mut cfg = EvalConfig::desk();
        if pairs > 0 {
            cfg.pairs = pairs;
        }
        let r = evaluate(m, s, &cfg)?;
        let ms = |x: mcatlas::eval::MeanStd| McaMeanStd { mean: x.mean, std: x.std };
        let metrics = McaMetrics { sl2: ms(r.m_sl2()), rank: ms(r.m_rank()), auc: ms(r.m_auc()), chamfer: ms(r.cd()) };
        write_out(out, metrics, "out")
    })
}
