//! C ABI over the core crate: load checkpoints and datasets, encode masks
//! into shape vectors, and score abnormality from C or anything with a C FFI.
//!
//! Conventions:
//! - Handles (`VsModel`, `VsDataset`) are opaque; create with the `_load`
//!   functions, destroy with the matching `_free`. Freeing null is a no-op.
//! - Every fallible call returns a `VsStatus`; on anything but `Ok` a
//!   thread-local message is readable via `vs_last_error`.
//! - Voxel buffers are row-major `dims[0] * dims[1] * dims[2]` bytes, one
//!   byte per voxel, zero = background, nonzero = foreground.
//! - Panics never cross the boundary; they surface as `VsStatus::Panic`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use voxshape::eval::{CellHead, score_case};
use voxshape::model::{decode, encode, ModelBundle, ShapeVector};
use voxshape::shapegen::{crop_and_rescale, CaseRecord, Dataset};
use voxshape::voxel::VoxelGrid;

/// Result of every fallible API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Argument values are out of range (dims, indices, buffer sizes).
    InvalidArgument = 2,
    /// Filesystem or decode failure while loading an artifact.
    Io = 3,
    /// The model rejected the input (wrong dims, arithmetic failure).
    Model = 4,
    /// The checkpoint carries no classification head.
    NoClassifier = 5,
    /// The checkpoint carries no decoder.
    NoDecoder = 6,
    /// Internal panic; state is unchanged but the call did nothing.
    Panic = 7,
}

/// Opaque trained-model handle (auto-encoder plus optional heads).
pub struct VsModel {
    bundle: ModelBundle,
}

/// Opaque mask-dataset handle.
pub struct VsDataset {
    dataset: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn fail(status: VsStatus, msg: &str) -> VsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> VsStatus) -> VsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(VsStatus::Panic, "internal panic"),
    }
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap` bytes). Returns the full message length in bytes,
/// excluding the NUL, regardless of truncation; `buf` may be null to query
/// the length.
///
/// # Safety
/// `buf` must be valid for writes of `cap` bytes, or null.
#[no_mangle]
pub unsafe extern "C" fn vs_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, VsStatus> {
    if ptr.is_null() {
        set_error("path is null");
        return Err(VsStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(VsStatus::InvalidArgument)
        }
    }
}

unsafe fn grid_arg(
    voxels: *const u8,
    dims: [usize; 3],
) -> Result<VoxelGrid, VsStatus> {
    if voxels.is_null() {
        set_error("voxel buffer is null");
        return Err(VsStatus::NullArgument);
    }
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .filter(|&n| n > 0);
    let Some(count) = count else {
        set_error("voxel dims must be positive and not overflow");
        return Err(VsStatus::InvalidArgument);
    };
    let data = std::slice::from_raw_parts(voxels, count);
    let mut grid = VoxelGrid::new(dims);
    for (i, &v) in data.iter().enumerate() {
        if v != 0 {
            grid.set(grid.position(i), true);
        }
    }
    if grid.is_empty_mask() {
        set_error("voxel buffer has no foreground");
        return Err(VsStatus::InvalidArgument);
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Model handle

/// Load a model checkpoint written by the `voxshape` trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a single
/// pointer write. On success `*out` owns the model until `vs_model_free`.
#[no_mangle]
pub unsafe extern "C" fn vs_model_load(
    path: *const c_char,
    out: *mut *mut VsModel,
) -> VsStatus {
    guard(|| {
        if out.is_null() {
            return fail(VsStatus::NullArgument, "out pointer is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ModelBundle::load(path) {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(VsModel { bundle }));
                VsStatus::Ok
            }
            Err(e) => fail(VsStatus::Io, &e.to_string()),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer from `vs_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vs_model_free(model: *mut VsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input cube edge the encoder expects; 0 on null.
///
/// # Safety
/// `model` must be null or a live pointer from `vs_model_load`.
#[no_mangle]
pub unsafe extern "C" fn vs_model_input_size(model: *const VsModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.hyper.v)
}

/// Shape-vector dimension d; 0 on null.
///
/// # Safety
/// `model` must be null or a live pointer from `vs_model_load`.
#[no_mangle]
pub unsafe extern "C" fn vs_model_shape_dim(model: *const VsModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.hyper.d)
}

/// 1 if the checkpoint can classify (network or SVM head), else 0.
///
/// # Safety
/// `model` must be null or a live pointer from `vs_model_load`.
#[no_mangle]
pub unsafe extern "C" fn vs_model_has_classifier(model: *const VsModel) -> i32 {
    model
        .as_ref()
        .map_or(0, |m| i32::from(m.bundle.classifier.is_some() || m.bundle.svm.is_some()))
}

fn encode_mask(bundle: &ModelBundle, grid: &VoxelGrid) -> Result<ShapeVector, (VsStatus, String)> {
    let rescaled = crop_and_rescale(grid, bundle.hyper.v)
        .map_err(|e| (VsStatus::Model, e.to_string()))?;
    encode(&rescaled.to_tensor(), &bundle.encoder).map_err(|e| (VsStatus::Model, e.to_string()))
}

/// Encode a mask into its d-dimensional shape vector. The mask is cropped to
/// its bounding box and rescaled to the model's input cube first.
///
/// # Safety
/// `model` must be live; `voxels` must hold `dim0*dim1*dim2` bytes;
/// `out_vector` must be valid for `vs_model_shape_dim(model)` doubles.
#[no_mangle]
pub unsafe extern "C" fn vs_model_encode(
    model: *const VsModel,
    voxels: *const u8,
    dim0: usize,
    dim1: usize,
    dim2: usize,
    out_vector: *mut f64,
) -> VsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(VsStatus::NullArgument, "model is null");
        };
        if out_vector.is_null() {
            return fail(VsStatus::NullArgument, "out_vector is null");
        }
        let grid = match grid_arg(voxels, [dim0, dim1, dim2]) {
            Ok(g) => g,
            Err(s) => return s,
        };
        match encode_mask(&m.bundle, &grid) {
            Ok(v) => {
                std::ptr::copy_nonoverlapping(v.values.as_ptr(), out_vector, v.values.len());
                VsStatus::Ok
            }
            Err((status, msg)) => fail(status, &msg),
        }
    })
}

/// Score a mask: classifier probability in (0,1) when the checkpoint has a
/// network head, otherwise the raw SVM margin. The decision conventions are
/// `p >= 0.5` and `margin >= 0` for abnormal.
///
/// # Safety
/// `model` must be live; `voxels` must hold `dim0*dim1*dim2` bytes;
/// `out_score` must be valid for one double write.
#[no_mangle]
pub unsafe extern "C" fn vs_model_score(
    model: *const VsModel,
    voxels: *const u8,
    dim0: usize,
    dim1: usize,
    dim2: usize,
    out_score: *mut f64,
) -> VsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(VsStatus::NullArgument, "model is null");
        };
        if out_score.is_null() {
            return fail(VsStatus::NullArgument, "out_score is null");
        }
        let head = match (&m.bundle.classifier, &m.bundle.svm) {
            (Some(clf), _) => CellHead::Classifier(clf.clone()),
            (None, Some(svm)) => CellHead::Svm(svm.clone()),
            (None, None) => {
                return fail(VsStatus::NoClassifier, "checkpoint has no classification head")
            }
        };
        let grid = match grid_arg(voxels, [dim0, dim1, dim2]) {
            Ok(g) => g,
            Err(s) => return s,
        };
        let case = CaseRecord {
            case_id: String::new(),
            label: voxshape::shapegen::Label::Normal,
            grid,
            seed: 0,
            corruption_dsc: None,
        };
        match score_case(&m.bundle.encoder, &head, &case, None) {
            Ok(p) => {
                *out_score = p;
                VsStatus::Ok
            }
            Err(e) => fail(VsStatus::Model, &e.to_string()),
        }
    })
}

/// Run the auto-encoder round trip and write the binarized reconstruction
/// (threshold 0.5) as `V*V*V` bytes where `V = vs_model_input_size(model)`.
///
/// # Safety
/// `model` must be live; `voxels` must hold `dim0*dim1*dim2` bytes;
/// `out_voxels` must be valid for `V*V*V` byte writes.
#[no_mangle]
pub unsafe extern "C" fn vs_model_reconstruct(
    model: *const VsModel,
    voxels: *const u8,
    dim0: usize,
    dim1: usize,
    dim2: usize,
    out_voxels: *mut u8,
) -> VsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(VsStatus::NullArgument, "model is null");
        };
        if out_voxels.is_null() {
            return fail(VsStatus::NullArgument, "out_voxels is null");
        }
        let Some(decoder) = m.bundle.decoder.as_ref() else {
            return fail(VsStatus::NoDecoder, "checkpoint has no decoder");
        };
        let grid = match grid_arg(voxels, [dim0, dim1, dim2]) {
            Ok(g) => g,
            Err(s) => return s,
        };
        let vector = match encode_mask(&m.bundle, &grid) {
            Ok(v) => v,
            Err((status, msg)) => return fail(status, &msg),
        };
        match decode(&vector, decoder) {
            Ok(recon) => {
                let data = recon.data();
                for (i, &p) in data.iter().enumerate() {
                    *out_voxels.add(i) = u8::from(p >= 0.5);
                }
                VsStatus::Ok
            }
            Err(e) => fail(VsStatus::Model, &e.to_string()),
        }
    })
}

// ---------------------------------------------------------------------------
// Dataset handle

/// Load a mask dataset directory (manifest plus packed masks).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a single
/// pointer write. On success `*out` owns the dataset until `vs_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_load(
    path: *const c_char,
    out: *mut *mut VsDataset,
) -> VsStatus {
    guard(|| {
        if out.is_null() {
            return fail(VsStatus::NullArgument, "out pointer is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Dataset::load(path) {
            Ok(dataset) => {
                *out = Box::into_raw(Box::new(VsDataset { dataset }));
                VsStatus::Ok
            }
            Err(e) => fail(VsStatus::Io, &e.to_string()),
        }
    })
}

/// Release a dataset handle. Null is a no-op.
///
/// # Safety
/// `dataset` must be null or a pointer from `vs_dataset_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_free(dataset: *mut VsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of cases; 0 on null.
///
/// # Safety
/// `dataset` must be null or a live pointer from `vs_dataset_load`.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_count(dataset: *const VsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.dataset.cases().len())
}

fn case_at(d: &VsDataset, index: usize) -> Result<&CaseRecord, VsStatus> {
    d.dataset.cases().get(index).ok_or_else(|| {
        set_error("case index out of range");
        VsStatus::InvalidArgument
    })
}

/// Copy the case id at `index` into `buf` (NUL-terminated, truncated to
/// `cap`). Returns the id length in bytes via `out_len` when non-null.
///
/// # Safety
/// `dataset` must be live; `buf` must be valid for `cap` byte writes or
/// null; `out_len` must be valid for one write or null.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_case_id(
    dataset: *const VsDataset,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> VsStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else {
            return fail(VsStatus::NullArgument, "dataset is null");
        };
        let case = match case_at(d, index) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let bytes = case.case_id.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        if !out_len.is_null() {
            *out_len = bytes.len();
        }
        VsStatus::Ok
    })
}

/// Ground-truth label at `index`: 0 normal, 1 abnormal.
///
/// # Safety
/// `dataset` must be live; `out_label` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_label(
    dataset: *const VsDataset,
    index: usize,
    out_label: *mut u8,
) -> VsStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else {
            return fail(VsStatus::NullArgument, "dataset is null");
        };
        if out_label.is_null() {
            return fail(VsStatus::NullArgument, "out_label is null");
        }
        let case = match case_at(d, index) {
            Ok(c) => c,
            Err(s) => return s,
        };
        *out_label = case.label.as_u8();
        VsStatus::Ok
    })
}

/// Mask dimensions at `index`, written as three values.
///
/// # Safety
/// `dataset` must be live; `out_dims` must be valid for three writes.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_dims(
    dataset: *const VsDataset,
    index: usize,
    out_dims: *mut usize,
) -> VsStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else {
            return fail(VsStatus::NullArgument, "dataset is null");
        };
        if out_dims.is_null() {
            return fail(VsStatus::NullArgument, "out_dims is null");
        }
        let case = match case_at(d, index) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let dims = case.grid.dims();
        std::ptr::copy_nonoverlapping(dims.as_ptr(), out_dims, 3);
        VsStatus::Ok
    })
}

/// Copy the mask at `index` into `buf` as one byte per voxel, row-major.
/// `cap` must be at least the product of the case dims.
///
/// # Safety
/// `dataset` must be live; `buf` must be valid for `cap` byte writes.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_copy_mask(
    dataset: *const VsDataset,
    index: usize,
    buf: *mut u8,
    cap: usize,
) -> VsStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else {
            return fail(VsStatus::NullArgument, "dataset is null");
        };
        if buf.is_null() {
            return fail(VsStatus::NullArgument, "buf is null");
        }
        let case = match case_at(d, index) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let n = case.grid.voxel_count();
        if cap < n {
            return fail(VsStatus::InvalidArgument, "buffer too small for mask");
        }
        for i in 0..n {
            *buf.add(i) = u8::from(case.grid.get(case.grid.position(i)));
        }
        VsStatus::Ok
    })
}
