//! C ABI over the `sparseq` library.
//!
//! Every fallible function returns an [`SqStatus`]; on failure the message
//! is kept per thread and can be read with [`sq_last_error_message`].
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `_free` function. Quantile stacks are passed as
//! channel-major `N x H x W` float arrays, labels as parallel arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sparseq::losses;
use sparseq::metrics::LabelTable;
use sparseq::model::{load_checkpoint, ModelOutput, SurrogateModel};
use sparseq::{Error, LabelPoint, QuantileStack, Raster, SparseLabels};

/// Status codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside the operation's domain.
    Domain = 2,
    /// Shapes or values that violate a type invariant.
    Validation = 3,
    Config = 4,
    Io = 5,
    /// Bad magic, header or payload.
    Format = 6,
    Training = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
    /// Message buffer too small; the message was truncated.
    Truncated = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SqStatus {
    match e {
        Error::Io { .. } => SqStatus::Io,
        Error::Format(_) | Error::Corruption(_) => SqStatus::Format,
        Error::Validation(_) => SqStatus::Validation,
        Error::Domain(_) => SqStatus::Domain,
        Error::Config(_) => SqStatus::Config,
        Error::Training { .. } => SqStatus::Training,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SqStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SqStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside sparseq".into());
            SqStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn stack_from(
    taus: *const f64,
    n_taus: usize,
    data: *const f32,
    height: usize,
    width: usize,
) -> Result<QuantileStack, Failure> {
    let taus = slice(taus, n_taus, "taus")?.to_vec();
    let len = n_taus
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Failure::Lib(Error::Validation("stack size overflows".into())))?;
    let data = slice(data, len, "stack data")?.to_vec();
    Ok(QuantileStack::new(taus, height, width, data)?)
}

/// Labels from parallel arrays of length `len`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SqLabels {
    pub track_ids: *const u32,
    pub rows: *const usize,
    pub cols: *const usize,
    pub heights: *const f64,
    pub len: usize,
}

unsafe fn labels_from(labels: *const SqLabels, height: usize, width: usize) -> Result<SparseLabels, Failure> {
    let l = labels.as_ref().ok_or(Failure::Null("labels"))?;
    let ids = slice(l.track_ids, l.len, "track_ids")?;
    let rows = slice(l.rows, l.len, "rows")?;
    let cols = slice(l.cols, l.len, "cols")?;
    let heights = slice(l.heights, l.len, "heights")?;
    let points = (0..l.len)
        .map(|i| LabelPoint::new(ids[i], rows[i], cols[i], heights[i]))
        .collect();
    Ok(SparseLabels::new(points, height, width)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `cap > 0`). Returns `Truncated` if it did not fit.
///
/// # Safety
/// `buf` must point to `cap` writable bytes or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn sq_last_error_message(buf: *mut c_char, cap: usize) -> SqStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    if cap == 0 {
        return if msg.is_empty() {
            SqStatus::Ok
        } else {
            SqStatus::Truncated
        };
    }
    if buf.is_null() {
        return SqStatus::NullPointer;
    }
    let n = msg.len().min(cap - 1);
    ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
    *buf.add(n) = 0;
    if n < msg.len() {
        SqStatus::Truncated
    } else {
        SqStatus::Ok
    }
}

/// Pinball loss of prediction `y_hat` for observation `y` at level `tau`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sq_pinball(tau: f64, y: f64, y_hat: f64, out: *mut f64) -> SqStatus {
    guard(|| {
        *self::out(out, "out")? = losses::pinball(tau, y, y_hat)?;
        Ok(())
    })
}

/// Mean multi-quantile pinball loss over the labels. With `use_shift`
/// nonzero, each track is scored at its best of the nine one-pixel shifts.
///
/// # Safety
/// `taus` holds `n_taus` values, `stack` holds `n_taus * height * width`,
/// `labels` describes valid arrays and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sq_quantile_loss(
    taus: *const f64,
    n_taus: usize,
    stack: *const f32,
    height: usize,
    width: usize,
    labels: *const SqLabels,
    use_shift: bool,
    out: *mut f64,
) -> SqStatus {
    guard(|| {
        let s = stack_from(taus, n_taus, stack, height, width)?;
        let l = labels_from(labels, height, width)?;
        let v = if use_shift {
            losses::shift_resilient_loss(s.quantiles(), &l, &s)?
        } else {
            losses::multi_quantile_loss(s.quantiles(), &l, &s)?
        };
        *self::out(out, "out")? = v;
        Ok(())
    })
}

/// Opaque accumulator of (label, predicted quantiles) rows.
pub struct SqLabelTable(LabelTable);

/// # Safety
/// `taus` holds `n_taus` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sq_table_new(taus: *const f64, n_taus: usize, out: *mut *mut SqLabelTable) -> SqStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let table = LabelTable::new(slice(taus, n_taus, "taus")?.to_vec())?;
        *dst = Box::into_raw(Box::new(SqLabelTable(table)));
        Ok(())
    })
}

/// # Safety
/// `table` comes from [`sq_table_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sq_table_free(table: *mut SqLabelTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Appends one scene. The stack's levels must equal the table's.
///
/// # Safety
/// As for [`sq_quantile_loss`], with the table's level count as `N`.
#[no_mangle]
pub unsafe extern "C" fn sq_table_push(
    table: *mut SqLabelTable,
    stack: *const f32,
    height: usize,
    width: usize,
    labels: *const SqLabels,
) -> SqStatus {
    guard(|| {
        let t = self::out(table, "table")?;
        let taus = t.0.quantiles().to_vec();
        let s = stack_from(taus.as_ptr(), taus.len(), stack, height, width)?;
        let l = labels_from(labels, height, width)?;
        t.0.push_scene(&s, &l)?;
        Ok(())
    })
}

/// # Safety
/// `table` is a live handle, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sq_table_len(table: *const SqLabelTable, out: *mut usize) -> SqStatus {
    guard(|| {
        let t = table.as_ref().ok_or(Failure::Null("table"))?;
        *self::out(out, "out")? = t.0.len();
        Ok(())
    })
}

/// Fraction of labels at or below the channel's prediction.
///
/// # Safety
/// `table` is a live handle, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sq_table_empirical_coverage(
    table: *const SqLabelTable,
    channel: usize,
    out: *mut f64,
) -> SqStatus {
    guard(|| {
        let t = table.as_ref().ok_or(Failure::Null("table"))?;
        *self::out(out, "out")? = t.0.empirical_coverage(channel)?;
        Ok(())
    })
}

/// PICP and MPIW of the central interval at level `alpha`.
///
/// # Safety
/// `table` is a live handle; `picp` and `mpiw` are writable.
#[no_mangle]
pub unsafe extern "C" fn sq_table_interval(
    table: *const SqLabelTable,
    alpha: f64,
    picp: *mut f64,
    mpiw: *mut f64,
) -> SqStatus {
    guard(|| {
        let t = table.as_ref().ok_or(Failure::Null("table"))?;
        let (p, w) = (t.0.picp(alpha)?, t.0.mpiw(alpha)?);
        *self::out(picp, "picp")? = p;
        *self::out(mpiw, "mpiw")? = w;
        Ok(())
    })
}

/// Opaque trained model.
pub struct SqModel(SurrogateModel);

/// Loads a `QRM1` checkpoint.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sq_model_load(path: *const c_char, out: *mut *mut SqModel) -> SqStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Validation("path is not UTF-8".into()))?;
        *dst = Box::into_raw(Box::new(SqModel(load_checkpoint(path)?)));
        Ok(())
    })
}

/// # Safety
/// `model` comes from [`sq_model_load`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sq_model_free(model: *mut SqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input feature channels the model expects.
///
/// # Safety
/// `model` is a live handle, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sq_model_input_channels(model: *const SqModel, out: *mut usize) -> SqStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        *self::out(out, "out")? = m.0.arch.c_in;
        Ok(())
    })
}

/// Predicts quantile rasters at `taus` for a channel-major
/// `channels x height x width` input and writes `n_taus x height x width`
/// values to `out`.
///
/// # Safety
/// `input` holds `channels * height * width` values, `taus` holds `n_taus`,
/// `out` has room for `n_taus * height * width`.
#[no_mangle]
pub unsafe extern "C" fn sq_model_predict_quantiles(
    model: *const SqModel,
    input: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    taus: *const f64,
    n_taus: usize,
    out: *mut f32,
) -> SqStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let len = channels * height * width;
        let raster = Raster::new(channels, height, width, slice(input, len, "input")?.to_vec())?;
        let stack = ModelOutput::predict(&m.0, &raster)?.quantile_stack(slice(taus, n_taus, "taus")?)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        ptr::copy_nonoverlapping(stack.data().as_ptr(), out, stack.data().len());
        Ok(())
    })
}
