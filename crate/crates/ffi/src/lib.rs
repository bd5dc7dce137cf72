//! C ABI over the `protomask` core.
//!
//! Models and detection sets are opaque handles owned by the caller and
//! released with their `_free` function. Every fallible call returns a
//! [`PmStatus`]; on failure the message is available from
//! [`pm_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use protomask::data::image_from_rgb8;
use protomask::model::{infer_with, Detection, InferOptions, Model, NmsVariant};
use protomask::nms::{fast_nms_indices, sequential_nms_indices, ScoredDetections};
use protomask::nn::Checkpoint;
use protomask::{BBox, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Numeric = 6,
    Config = 7,
    Validation = 8,
    State = 9,
    OutOfRange = 10,
    Panic = 11,
}

/// Suppression algorithm used by inference.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmNms {
    Fast = 0,
    Sequential = 1,
}

/// Inference options. A negative `score_threshold` keeps the model's own.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PmInferOptions {
    pub score_threshold: f64,
    pub boxes_only: bool,
    pub nms: PmNms,
}

/// One detection; box corners are normalised to `[0, 1]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PmDetection {
    pub class_id: u32,
    pub score: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    /// Mask size in pixels; both 0 when masks were not computed.
    pub mask_width: u32,
    pub mask_height: u32,
}

/// Model loaded in single precision for inference.
pub struct PmModel {
    inner: Model<f32>,
}

/// Detections of one inference call.
pub struct PmDetections {
    inner: Vec<Detection>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> PmStatus {
    match e {
        Error::Dimension { .. } => PmStatus::Dimension,
        Error::Config(_) => PmStatus::Config,
        Error::Numeric(_) | Error::Diverged { .. } => PmStatus::Numeric,
        Error::State(_) => PmStatus::State,
        Error::DegenerateBox(_) | Error::Validation(_) => PmStatus::Validation,
        Error::Format { .. } | Error::Json(_) => PmStatus::Format,
        Error::Io { .. } => PmStatus::Io,
    }
}

fn fail(status: PmStatus, msg: impl Into<String>) -> PmStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning core errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), PmStatus>) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PmStatus::Panic, msg)
        }
    }
}

fn core<T>(r: protomask::Result<T>) -> Result<T, PmStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), PmStatus> {
    if p.is_null() {
        Err(fail(PmStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_model_load(path: *const c_char, out: *mut *mut PmModel) -> PmStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(PmStatus::InvalidArgument, "path is not UTF-8"))?;
        let ck = core(Checkpoint::<f64>::load(&PathBuf::from(path)))?;
        let model = core(Model::<f32>::from_checkpoint(&ck))?;
        *out = Box::into_raw(Box::new(PmModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pm_model_free(model: *mut PmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Square input side in pixels, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_input_size(model: *const PmModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.config().input_size as u32)
}

/// Number of object classes, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_num_classes(model: *const PmModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.config().num_classes as u32)
}

/// Detects objects in an interleaved 8-bit RGB image of the model's input
/// size. `options` may be null for defaults.
///
/// # Safety
/// `rgb` must point to `len` readable bytes; `model` must be live and
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pm_model_infer(
    model: *const PmModel,
    rgb: *const u8,
    len: usize,
    options: *const PmInferOptions,
    out: *mut *mut PmDetections,
) -> PmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(rgb, "rgb")?;
        non_null(out, "out")?;
        let model = &(*model).inner;
        let s = model.config().input_size;
        if len != s * s * 3 {
            return Err(fail(
                PmStatus::InvalidArgument,
                format!("expected {} bytes for a {s}x{s} RGB image, got {len}", s * s * 3),
            ));
        }
        let opts = match options.as_ref() {
            Some(o) => InferOptions {
                score_threshold: (o.score_threshold >= 0.0).then_some(o.score_threshold),
                boxes_only: o.boxes_only,
                nms: match o.nms {
                    PmNms::Fast => NmsVariant::Fast,
                    PmNms::Sequential => NmsVariant::Sequential,
                },
            },
            None => InferOptions::default(),
        };
        let image = image_from_rgb8(s, s, std::slice::from_raw_parts(rgb, len));
        let r = core(infer_with(model, &image, &opts))?;
        *out = Box::into_raw(Box::new(PmDetections { inner: r.detections }));
        Ok(())
    })
}

/// # Safety
/// `dets` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_detections_count(dets: *const PmDetections) -> usize {
    dets.as_ref().map_or(0, |d| d.inner.len())
}

/// Copies detection `index` (highest score first) into `out`.
///
/// # Safety
/// `dets` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pm_detections_get(dets: *const PmDetections, index: usize, out: *mut PmDetection) -> PmStatus {
    guard(|| {
        non_null(dets, "detections")?;
        non_null(out, "out")?;
        let d = detection(&*dets, index)?;
        let (mw, mh) = d.mask.as_ref().map_or((0, 0), |m| (m.width() as u32, m.height() as u32));
        *out = PmDetection {
            class_id: d.class as u32,
            score: d.score,
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            mask_width: mw,
            mask_height: mh,
        };
        Ok(())
    })
}

fn detection(d: &PmDetections, index: usize) -> Result<&Detection, PmStatus> {
    d.inner.get(index).ok_or_else(|| {
        fail(
            PmStatus::OutOfRange,
            format!("detection {index} of {}", d.inner.len()),
        )
    })
}

/// Writes detection `index`'s row-major `{0,1}` mask into `buf`, which must
/// hold `mask_width * mask_height` bytes.
///
/// # Safety
/// `dets` must be live and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pm_detections_mask(dets: *const PmDetections, index: usize, buf: *mut u8, len: usize) -> PmStatus {
    guard(|| {
        non_null(dets, "detections")?;
        non_null(buf, "buf")?;
        let d = detection(&*dets, index)?;
        let m = d
            .mask
            .as_ref()
            .ok_or_else(|| fail(PmStatus::State, "inference ran without masks"))?;
        if len != m.data().len() {
            return Err(fail(
                PmStatus::InvalidArgument,
                format!("mask has {} pixels, buffer {len}", m.data().len()),
            ));
        }
        ptr::copy_nonoverlapping(m.data().as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `dets` must come from [`pm_model_infer`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pm_detections_free(dets: *mut PmDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}

unsafe fn raw_detections(
    boxes: *const f64,
    scores: *const f64,
    classes: *const u32,
    n: usize,
) -> Result<ScoredDetections, PmStatus> {
    if n == 0 {
        return Ok(core(ScoredDetections::new(Vec::new(), Vec::new(), Vec::new()))?);
    }
    non_null(boxes, "boxes")?;
    non_null(scores, "scores")?;
    non_null(classes, "classes")?;
    let b = std::slice::from_raw_parts(boxes, n * 4);
    let bx: Vec<BBox> = b.chunks_exact(4).map(|c| BBox::new(c[0], c[1], c[2], c[3])).collect();
    if let Some(i) = bx.iter().position(|b| !b.is_valid()) {
        return Err(fail(PmStatus::InvalidArgument, format!("box {i} is not a valid corner box")));
    }
    let s = std::slice::from_raw_parts(scores, n).to_vec();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(fail(PmStatus::InvalidArgument, "scores must be finite"));
    }
    let c = std::slice::from_raw_parts(classes, n).iter().map(|&c| c as usize).collect();
    core(ScoredDetections::new(bx, s, c))
}

unsafe fn write_kept(mut kept: Vec<usize>, keep: *mut usize, cap: usize, kept_len: *mut usize) -> Result<(), PmStatus> {
    non_null(kept_len, "kept_len")?;
    kept.sort_unstable();
    *kept_len = kept.len();
    if kept.len() > cap {
        return Err(fail(
            PmStatus::InvalidArgument,
            format!("{} rows kept, capacity {cap}", kept.len()),
        ));
    }
    if !kept.is_empty() {
        non_null(keep, "keep")?;
        ptr::copy_nonoverlapping(kept.as_ptr(), keep, kept.len());
    }
    Ok(())
}

fn check_iou(iou: f64) -> Result<(), PmStatus> {
    if (0.0..=1.0).contains(&iou) {
        Ok(())
    } else {
        Err(fail(PmStatus::InvalidArgument, format!("IoU threshold {iou} outside [0, 1]")))
    }
}

/// Fast NMS over `n` raw detections. `boxes` holds `n` corner boxes
/// `(x1, y1, x2, y2)`. Kept input rows are written to `keep` in ascending
/// order and their count to `kept_len`, which is also set when `cap` is too
/// small.
///
/// # Safety
/// Input arrays must hold `n` entries (`4n` for boxes); `keep` must be
/// writable for `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn pm_fast_nms(
    boxes: *const f64,
    scores: *const f64,
    classes: *const u32,
    n: usize,
    iou_threshold: f64,
    top_n: usize,
    keep: *mut usize,
    cap: usize,
    kept_len: *mut usize,
) -> PmStatus {
    guard(|| {
        check_iou(iou_threshold)?;
        let d = raw_detections(boxes, scores, classes, n)?;
        write_kept(fast_nms_indices(&d, iou_threshold, top_n), keep, cap, kept_len)
    })
}

/// Greedy NMS with the same conventions as [`pm_fast_nms`].
///
/// # Safety
/// As for [`pm_fast_nms`].
#[no_mangle]
pub unsafe extern "C" fn pm_sequential_nms(
    boxes: *const f64,
    scores: *const f64,
    classes: *const u32,
    n: usize,
    iou_threshold: f64,
    keep: *mut usize,
    cap: usize,
    kept_len: *mut usize,
) -> PmStatus {
    guard(|| {
        check_iou(iou_threshold)?;
        let d = raw_detections(boxes, scores, classes, n)?;
        write_kept(sequential_nms_indices(&d, iou_threshold), keep, cap, kept_len)
    })
}
