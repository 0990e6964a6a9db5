//! C ABI over the scan engine.
//!
//! Every function returns a [`Scan2dStatus`]; on failure the message is kept
//! per thread and can be read with [`scan2d_last_error`]. Problems are opaque
//! handles owned by the caller and released with [`scan2d_problem_free`].
//! Panics never cross the boundary; they surface as `SCAN2D_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use scan2d::bench::{run_variant, ScanVariant};
use scan2d::engine::Executor;
use scan2d::memsim::{padding_waste, simulate_traffic, PaddingScheme, Variant};
use scan2d::reference::{impulse_coefficient, ScanKind};
use scan2d::tensor::{FeatureGrid, ScanParams, SelectiveInputs};
use scan2d::{Error, Problem};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scan2dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Forward implementation to run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scan2dVariant {
    Seq1d = 0,
    Seq2d = 1,
    Cub1d = 2,
    Naive2d = 3,
    Tiled2d = 4,
}

/// Arithmetic precision of a forward run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scan2dDtype {
    F32 = 0,
    F64 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scan2dPaddingScheme {
    FullRowScan = 0,
    Segmented = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scan2dScanKind {
    RowMajor1d = 0,
    Grid2d = 1,
}

/// Modeled main-store traffic of one forward pass, in elements.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Scan2dMemReport {
    pub payload_reads: u64,
    pub payload_writes: u64,
    pub intermediate_traffic: u64,
    pub carry_traffic: u64,
    pub padding_elements: u64,
    pub flops: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Scan2dPaddingWaste {
    pub pad_per_row: f64,
    pub pad_per_column: f64,
    pub waste_fraction: f64,
}

/// One scan instance in double precision.
pub struct Scan2dProblem {
    inner: Problem<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(Scan2dStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => Scan2dStatus::Io,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::UnsupportedRank(_)
            | Error::ReservedByte(_)
            | Error::Truncated { .. } => Scan2dStatus::Format,
            Error::NonFinite { .. } => Scan2dStatus::NonFinite,
            Error::ShapeMismatch(_) | Error::LengthMismatch(_) | Error::EmptyDimension(_) => {
                Scan2dStatus::ShapeMismatch
            }
            _ => Scan2dStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(Scan2dStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Scan2dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Scan2dStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            Scan2dStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or valid for `len` reads.
unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn product(dims: &[usize]) -> Result<usize, Failure> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Failure(Scan2dStatus::InvalidArgument, format!("size {dims:?} overflows")))
}

fn variant(v: Scan2dVariant) -> ScanVariant {
    match v {
        Scan2dVariant::Seq1d => ScanVariant::Seq1d,
        Scan2dVariant::Seq2d => ScanVariant::Seq2d,
        Scan2dVariant::Cub1d => ScanVariant::Cub1d,
        Scan2dVariant::Naive2d => ScanVariant::Naive2d,
        Scan2dVariant::Tiled2d => ScanVariant::Tiled2d,
    }
}

/// Static, nul-terminated library version.
#[no_mangle]
pub extern "C" fn scan2d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always nul-terminated when `cap > 0`) and returns the full message length
/// without the terminator. Returns 0 when no error has been recorded.
///
/// # Safety
/// `buf` is null or valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn scan2d_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && cap > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a problem from caller arrays, copied on entry.
///
/// `x` and `z_raw` hold `height·width` values; `b` and `c` hold `state_dim`
/// planes of `height·width` values each; `a` holds `state_dim` values.
///
/// # Safety
/// Every pointer is null or valid for the reads described above; `out` is
/// null or valid for one write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn scan2d_problem_new(
    height: usize,
    width: usize,
    state_dim: usize,
    x: *const f64,
    z_raw: *const f64,
    b: *const f64,
    c: *const f64,
    a: *const f64,
    skip: f64,
    bias: f64,
    out: *mut *mut Scan2dProblem,
) -> Scan2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let l = product(&[height, width])?;
        let ln = product(&[l, state_dim])?;
        let inner = Problem {
            x: FeatureGrid::scalar(height, width, input(x, l, "x")?.to_vec())?,
            inputs: SelectiveInputs::new(
                height,
                width,
                state_dim,
                input(z_raw, l, "z_raw")?.to_vec(),
                input(b, ln, "b")?.to_vec(),
                input(c, ln, "c")?.to_vec(),
            )?,
            params: ScanParams::new(input(a, state_dim, "a")?.to_vec(), skip, bias)?,
        };
        *out = Box::into_raw(Box::new(Scan2dProblem { inner }));
        Ok(())
    })
}

/// Seeded random problem with `A` in `(−1, 0)` and unit-normal inputs.
///
/// # Safety
/// `out` is null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn scan2d_problem_random(
    height: usize,
    width: usize,
    state_dim: usize,
    seed: u64,
    out: *mut *mut Scan2dProblem,
) -> Scan2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Problem::random(height, width, state_dim, seed)?;
        *out = Box::into_raw(Box::new(Scan2dProblem { inner }));
        Ok(())
    })
}

/// Reads a problem from an input tensor file and a parameter bundle, both in
/// the crate's binary tensor format. Single-precision files are widened.
///
/// # Safety
/// Both paths are null or nul-terminated strings; `out` is null or valid for
/// one write.
#[no_mangle]
pub unsafe extern "C" fn scan2d_problem_load(
    input_path: *const c_char,
    params_path: *const c_char,
    out: *mut *mut Scan2dProblem,
) -> Scan2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = |p: *const c_char, what: &str| -> Result<String, Failure> {
            if p.is_null() {
                return Err(null(what));
            }
            CStr::from_ptr(p)
                .to_str()
                .map(str::to_owned)
                .map_err(|_| Failure(Scan2dStatus::InvalidArgument, format!("{what} is not UTF-8")))
        };
        let x = match scan2d::tensor::load(Path::new(&path(input_path, "input_path")?))? {
            scan2d::tensor::AnyGrid::F32(g) => g.cast(),
            scan2d::tensor::AnyGrid::F64(g) => g,
        };
        let file =
            std::fs::File::open(path(params_path, "params_path")?).map_err(|source| Error::Io { offset: 0, source })?;
        let inner = Problem::read_params(x, std::io::BufReader::new(file))?;
        *out = Box::into_raw(Box::new(Scan2dProblem { inner }));
        Ok(())
    })
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `problem` is null or came from a `scan2d_problem_*` constructor and has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn scan2d_problem_free(problem: *mut Scan2dProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Writes the problem's height, width and state count. Any output pointer
/// may be null.
///
/// # Safety
/// `problem` is null or a live handle; each output is null or valid for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn scan2d_problem_dims(
    problem: *const Scan2dProblem,
    height: *mut usize,
    width: *mut usize,
    state_dim: *mut usize,
) -> Scan2dStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        for (dst, v) in [(height, p.height()), (width, p.width()), (state_dim, p.state_dim())] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Runs one forward pass and writes `y` (`height·width` values, row-major)
/// to `y_out`. `tile` is only read by the tiled variant; `threads` of 0 or 1
/// runs on the calling thread. Under `SCAN2D_DTYPE_F32` the problem is
/// narrowed first and the output widened back.
///
/// # Safety
/// `problem` is null or a live handle; `y_out` is null or valid for `y_len`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn scan2d_forward(
    problem: *const Scan2dProblem,
    which: Scan2dVariant,
    dtype: Scan2dDtype,
    tile: usize,
    threads: usize,
    y_out: *mut f64,
    y_len: usize,
) -> Scan2dStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        if y_out.is_null() {
            return Err(null("y_out"));
        }
        let l = p.height() * p.width();
        if y_len < l {
            return Err(Failure(
                Scan2dStatus::BufferTooSmall,
                format!("y_out holds {y_len} values, output has {l}"),
            ));
        }
        let exec = Executor::with_threads(threads.max(1))?;
        let v = variant(which);
        let y: Vec<f64> = match dtype {
            Scan2dDtype::F64 => run_variant(v, p, tile, &exec)?.into_data(),
            Scan2dDtype::F32 => run_variant(v, &p.cast::<f32>(), tile, &exec)?
                .data()
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
        };
        slice::from_raw_parts_mut(y_out, l).copy_from_slice(&y);
        Ok(())
    })
}

/// Closed-form traffic of `variant` (`0` = cub1d, `1` = naive2d,
/// `2` = tiled2d) for an `H×W` grid with `N` states. `tile` is only read by
/// tiled2d.
///
/// # Safety
/// `out` is null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn scan2d_simulate_traffic(
    variant: u32,
    height: usize,
    width: usize,
    state_dim: usize,
    tile: usize,
    out: *mut Scan2dMemReport,
) -> Scan2dStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let v = *Variant::ALL.get(variant as usize).ok_or_else(|| {
            Failure(
                Scan2dStatus::InvalidArgument,
                format!("unknown traffic variant {variant}"),
            )
        })?;
        let r = simulate_traffic(v, height, width, state_dim, Some(tile))?;
        *out = Scan2dMemReport {
            payload_reads: r.payload_reads,
            payload_writes: r.payload_writes,
            intermediate_traffic: r.intermediate_traffic,
            carry_traffic: r.carry_traffic,
            padding_elements: r.padding_elements,
            flops: r.flops,
        };
        Ok(())
    })
}

/// Identity-padding cost of a row pass plus a column pass.
///
/// # Safety
/// `out` is null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn scan2d_padding_waste(
    height: usize,
    width: usize,
    granularity: usize,
    scheme: Scan2dPaddingScheme,
    out: *mut Scan2dPaddingWaste,
) -> Scan2dStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let scheme = match scheme {
            Scan2dPaddingScheme::FullRowScan => PaddingScheme::FullRowScan,
            Scan2dPaddingScheme::Segmented => PaddingScheme::Segmented,
        };
        let w = padding_waste(height, width, granularity, scheme)?;
        *out = Scan2dPaddingWaste {
            pad_per_row: w.pad_per_row,
            pad_per_column: w.pad_per_column,
            waste_fraction: w.waste_fraction,
        };
        Ok(())
    })
}

/// Weight of a unit impulse at `(src_row, src_col)` in the state at
/// `(dst_row, dst_col)` under constant `Ā = a_bar`.
///
/// # Safety
/// `out` is null or valid for one write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn scan2d_impulse_coefficient(
    kind: Scan2dScanKind,
    width: usize,
    a_bar: f64,
    src_row: usize,
    src_col: usize,
    dst_row: usize,
    dst_col: usize,
    out: *mut f64,
) -> Scan2dStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let kind = match kind {
            Scan2dScanKind::RowMajor1d => ScanKind::RowMajor1d,
            Scan2dScanKind::Grid2d => ScanKind::Grid2d,
        };
        *out = impulse_coefficient(kind, (src_row, src_col), (dst_row, dst_col), a_bar, width)?;
        Ok(())
    })
}
