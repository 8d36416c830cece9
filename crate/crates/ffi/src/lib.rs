//! C ABI over `comet-core`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible function returns a [`CometStatus`];
//! on failure the message is available from [`comet_last_error`] on the
//! same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use comet_core::config::ExperimentConfig;
use comet_core::data::{read_dataset, write_dataset, Dataset};
use comet_core::image::{AttributionMap, Image, Mask};
use comet_core::metrics::{iou_auc, pxap};
use comet_core::nets::{read_checkpoint, ModelParams, SelectorNet};
use comet_core::trainer::selector_for;
use comet_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CometStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Index = 4,
    Contract = 5,
    Config = 6,
    Numerical = 7,
    Format = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A generated or loaded dataset.
pub struct CometDataset {
    inner: Dataset,
}

/// A trained selector bound to the dataset geometry it was trained on.
pub struct CometSelector {
    net: SelectorNet,
    params: ModelParams,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CometDatasetInfo {
    pub samples: usize,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CometStatus {
    match e {
        Error::Dimension(_) => CometStatus::Dimension,
        Error::Index(_) => CometStatus::Index,
        Error::Contract(_) => CometStatus::Contract,
        Error::Config(_) => CometStatus::Config,
        Error::Numerical(_) => CometStatus::Numerical,
        Error::Format(_) => CometStatus::Format,
        Error::Io(_) => CometStatus::Io,
    }
}

/// Failure carried out of a guarded body.
struct Fail(CometStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: CometStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> CometStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CometStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CometStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(CometStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(CometStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(CometStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return fail(CometStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return fail(CometStatus::NullPointer, format!("{what} is null"));
    }
    if len < need {
        return fail(CometStatus::BufferTooSmall, format!("{what} holds {len}, needs {need}"));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return fail(CometStatus::NullPointer, format!("{what} is null"));
    }
    out.write(value);
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// without the terminator; pass `len = 0` to query it.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn comet_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Generates a dataset from `key = value` configuration text (the same
/// format the command line reads; unspecified keys take defaults).
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_generate(config: *const c_char, out: *mut *mut CometDataset) -> CometStatus {
    guard(|| {
        let text = str_arg(config, "config")?;
        let cfg = ExperimentConfig::parse(text)?;
        cfg.validate()?;
        let ds = cfg.generate()?;
        write_out(out, Box::into_raw(Box::new(CometDataset { inner: ds })), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_load(path: *const c_char, out: *mut *mut CometDataset) -> CometStatus {
    guard(|| {
        let ds = read_dataset(&PathBuf::from(str_arg(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(CometDataset { inner: ds })), "out")
    })
}

/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_save(dataset: *const CometDataset, path: *const c_char) -> CometStatus {
    guard(|| {
        let ds = ref_arg(dataset, "dataset")?;
        write_dataset(&ds.inner, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a live handle from this library; it must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_free(dataset: *mut CometDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_info(dataset: *const CometDataset, out: *mut CometDatasetInfo) -> CometStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.inner;
        let info = CometDatasetInfo {
            samples: ds.samples.len(),
            classes: ds.classes,
            channels: ds.channels,
            height: ds.height,
            width: ds.width,
        };
        write_out(out, info, "out")
    })
}

/// Label and split tag (0 train, 1 val, 2 test) of sample `index`.
///
/// # Safety
/// `dataset` must be a live handle; `label` and `split` writable.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_label(
    dataset: *const CometDataset,
    index: usize,
    label: *mut usize,
    split: *mut u8,
) -> CometStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.inner;
        let s = ds
            .samples
            .get(index)
            .ok_or_else(|| Fail(CometStatus::Index, format!("sample {index} of {}", ds.samples.len())))?;
        write_out(label, s.label, "label")?;
        write_out(split, s.split.tag(), "split")
    })
}

/// Copies sample `index` as channel-major `C x H x W` doubles in `[0, 1]`.
///
/// # Safety
/// `dataset` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_image(
    dataset: *const CometDataset,
    index: usize,
    out: *mut f64,
    len: usize,
) -> CometStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.inner;
        let s = ds
            .samples
            .get(index)
            .ok_or_else(|| Fail(CometStatus::Index, format!("sample {index} of {}", ds.samples.len())))?;
        out_slice(out, len, s.image.data.len(), "out")?.copy_from_slice(&s.image.data);
        Ok(())
    })
}

/// Copies the ground-truth mask of sample `index` as `H x W` bytes (0/1).
///
/// # Safety
/// `dataset` must be a live handle; `out` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn comet_dataset_gt_mask(
    dataset: *const CometDataset,
    index: usize,
    out: *mut u8,
    len: usize,
) -> CometStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.inner;
        let s = ds
            .samples
            .get(index)
            .ok_or_else(|| Fail(CometStatus::Index, format!("sample {index} of {}", ds.samples.len())))?;
        let dst = out_slice(out, len, s.gt_mask.bits.len(), "out")?;
        for (d, b) in dst.iter_mut().zip(&s.gt_mask.bits) {
            *d = u8::from(*b);
        }
        Ok(())
    })
}

/// Loads a selector checkpoint trained on `dataset` (whose geometry and
/// input statistics the network uses).
///
/// # Safety
/// `dataset` must be a live handle, `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn comet_selector_load(
    dataset: *const CometDataset,
    path: *const c_char,
    out: *mut *mut CometSelector,
) -> CometStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.inner;
        let params = read_checkpoint(&PathBuf::from(str_arg(path, "path")?))?;
        let net = selector_for(ds);
        net.net.check_params(&params)?;
        write_out(out, Box::into_raw(Box::new(CometSelector { net, params })), "out")
    })
}

/// # Safety
/// `selector` must be null or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn comet_selector_free(selector: *mut CometSelector) {
    if !selector.is_null() {
        drop(Box::from_raw(selector));
    }
}

/// Attribution map (`H x W`, values in `[0, 1]`) of one `C x H x W` image.
///
/// # Safety
/// `selector` must be a live handle; `image` valid for `image_len` doubles
/// and `map` for `map_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn comet_selector_map(
    selector: *const CometSelector,
    image: *const f64,
    image_len: usize,
    map: *mut f64,
    map_len: usize,
) -> CometStatus {
    guard(|| {
        let sel = ref_arg(selector, "selector")?;
        let [c, h, w] = sel.net.net.input;
        if image_len != c * h * w {
            return fail(
                CometStatus::Dimension,
                format!("image has {image_len} values, expected {}", c * h * w),
            );
        }
        let img = Image::new(c, h, w, slice_arg(image, image_len, "image")?.to_vec())?;
        let m = sel.net.map(&sel.params, &img)?;
        out_slice(map, map_len, h * w, "map")?.copy_from_slice(&m.values);
        Ok(())
    })
}

unsafe fn metric_inputs(
    maps: *const f64,
    gts: *const u8,
    n_images: usize,
    height: usize,
    width: usize,
) -> Result<(Vec<AttributionMap>, Vec<Mask>), Fail> {
    let plane = height * width;
    let total = n_images * plane;
    let values = slice_arg(maps, total, "maps")?;
    let bits = slice_arg(gts, total, "gts")?;
    let mut out_maps = Vec::with_capacity(n_images);
    let mut out_masks = Vec::with_capacity(n_images);
    for i in 0..n_images {
        out_maps.push(AttributionMap::new(
            height,
            width,
            values[i * plane..(i + 1) * plane].to_vec(),
        )?);
        out_masks.push(Mask::new(
            height,
            width,
            bits[i * plane..(i + 1) * plane].iter().map(|b| *b != 0).collect(),
        )?);
    }
    Ok((out_maps, out_masks))
}

/// Pooled pixel average precision of `n_images` maps against 0/1 masks,
/// both row-major `n_images x H x W`.
///
/// # Safety
/// `maps` and `gts` must be valid for `n_images * height * width`
/// elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn comet_pxap(
    maps: *const f64,
    gts: *const u8,
    n_images: usize,
    height: usize,
    width: usize,
    n_thresholds: usize,
    out: *mut f64,
) -> CometStatus {
    guard(|| {
        let (m, g) = metric_inputs(maps, gts, n_images, height, width)?;
        let refs: Vec<&Mask> = g.iter().collect();
        write_out(out, pxap(&m, &refs, n_thresholds)?, "out")
    })
}

/// Area under the mean-IoU threshold curve; arguments as [`comet_pxap`].
///
/// # Safety
/// As [`comet_pxap`].
#[no_mangle]
pub unsafe extern "C" fn comet_iou_auc(
    maps: *const f64,
    gts: *const u8,
    n_images: usize,
    height: usize,
    width: usize,
    n_thresholds: usize,
    out: *mut f64,
) -> CometStatus {
    guard(|| {
        let (m, g) = metric_inputs(maps, gts, n_images, height, width)?;
        let refs: Vec<&Mask> = g.iter().collect();
        write_out(out, iou_auc(&m, &refs, n_thresholds)?, "out")
    })
}
