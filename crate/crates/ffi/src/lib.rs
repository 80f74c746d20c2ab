//! C ABI over the core pipeline: preprocessing, R-peak detection, wave
//! delineation, and vocabulary token assignment.
//!
//! Conventions:
//!
//! * Opaque handles (`EcglangPipeline`, `EcglangVocabulary`) are created and
//!   destroyed by this library; never free them any other way.
//! * Every fallible call returns an [`EcglangStatus`]; on error a
//!   thread-local message is readable via `ecglang_last_error`.
//! * Buffers are caller-allocated; `*_len` parameters carry capacities in
//!   elements and receive written counts.

#![deny(unsafe_op_in_unsafe_fn)]

use ecglang::delineation::{delineate, detect_r_peaks, WaveType};
use ecglang::preprocess::preprocess_window;
use ecglang::signal_io::Window;
use ecglang::vocabulary::Vocabulary;
use ecglang::PipelineConfig;
use libc::{c_char, size_t};
use std::cell::RefCell;
use std::ffi::{CStr, CString};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let c = CString::new(msg.to_string()).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcglangStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    ProcessingFailed = 4,
}

/// Pipeline handle: configuration for filtering and delineation.
pub struct EcglangPipeline {
    cfg: PipelineConfig,
}

/// Fitted wave vocabulary handle.
pub struct EcglangVocabulary {
    vocab: Vocabulary,
}

/// One delineated wave segment.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EcglangSegment {
    /// 0 = P, 1 = QRS, 2 = T, 3 = background.
    pub wave_type: u32,
    /// Inclusive start sample.
    pub onset: size_t,
    /// Exclusive end sample.
    pub offset: size_t,
}

fn wave_code(t: WaveType) -> u32 {
    match t {
        WaveType::P => 0,
        WaveType::QRS => 1,
        WaveType::T => 2,
        WaveType::BG => 3,
    }
}

fn wave_from_code(code: u32) -> Option<WaveType> {
    match code {
        0 => Some(WaveType::P),
        1 => Some(WaveType::QRS),
        2 => Some(WaveType::T),
        3 => Some(WaveType::BG),
        _ => None,
    }
}

/// Message for the most recent error on this thread, or NULL when the last
/// call succeeded. The pointer stays valid until the next failing call on
/// the same thread; do not free it.
#[no_mangle]
pub extern "C" fn ecglang_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ecglang_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Create a pipeline with default configuration.
#[no_mangle]
pub extern "C" fn ecglang_pipeline_new_default() -> *mut EcglangPipeline {
    Box::into_raw(Box::new(EcglangPipeline {
        cfg: PipelineConfig::default(),
    }))
}

/// Create a pipeline from a JSON configuration string (same schema as the
/// CLI's --config file). Returns NULL on parse failure; see
/// `ecglang_last_error`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ecglang_pipeline_from_json(json: *const c_char) -> *mut EcglangPipeline {
    if json.is_null() {
        set_error("json is NULL");
        return std::ptr::null_mut();
    }
    let text = match unsafe { CStr::from_ptr(json) }.to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("json is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    match PipelineConfig::from_json(text) {
        Ok(cfg) => Box::into_raw(Box::new(EcglangPipeline { cfg })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// Destroy a pipeline handle. NULL is ignored.
///
/// # Safety
/// `pipeline` must have come from one of the `ecglang_pipeline_*`
/// constructors and not have been freed before.
#[no_mangle]
pub unsafe extern "C" fn ecglang_pipeline_free(pipeline: *mut EcglangPipeline) {
    if !pipeline.is_null() {
        drop(unsafe { Box::from_raw(pipeline) });
    }
}

unsafe fn slice_in<'a, T>(ptr: *const T, len: size_t) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(ptr, len) })
    }
}

/// Remove powerline interference and baseline wander from one window of
/// samples (millivolts). `out` must hold `len` values.
///
/// # Safety
/// `samples` and `out` must point to `len` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ecglang_preprocess(
    pipeline: *const EcglangPipeline,
    samples: *const f64,
    len: size_t,
    fs: u32,
    out: *mut f64,
) -> EcglangStatus {
    let Some(p) = (unsafe { pipeline.as_ref() }) else {
        set_error("pipeline is NULL");
        return EcglangStatus::NullArgument;
    };
    let Some(input) = (unsafe { slice_in(samples, len) }) else {
        set_error("samples is NULL");
        return EcglangStatus::NullArgument;
    };
    if out.is_null() {
        set_error("out is NULL");
        return EcglangStatus::NullArgument;
    }
    let w = Window {
        samples: input.to_vec(),
        source: String::new(),
        start_sample: 0,
    };
    match preprocess_window(&w, fs, &p.cfg.filter) {
        Ok(clean) => {
            unsafe {
                std::ptr::copy_nonoverlapping(clean.samples.as_ptr(), out, len);
            }
            EcglangStatus::Ok
        }
        Err(e) => {
            set_error(e);
            EcglangStatus::ProcessingFailed
        }
    }
}

/// Detect R peaks. Writes up to `*out_len` indices and stores the number
/// found in `*out_len`; returns `BufferTooSmall` when the buffer cannot hold
/// them all (the count is still stored).
///
/// # Safety
/// `samples` must point to `len` doubles; `out_indices` to `*out_len`
/// writable `size_t`s; `out_len` must be non-NULL.
#[no_mangle]
pub unsafe extern "C" fn ecglang_detect_r_peaks(
    pipeline: *const EcglangPipeline,
    samples: *const f64,
    len: size_t,
    fs: u32,
    out_indices: *mut size_t,
    out_len: *mut size_t,
) -> EcglangStatus {
    let Some(p) = (unsafe { pipeline.as_ref() }) else {
        set_error("pipeline is NULL");
        return EcglangStatus::NullArgument;
    };
    let Some(input) = (unsafe { slice_in(samples, len) }) else {
        set_error("samples is NULL");
        return EcglangStatus::NullArgument;
    };
    if out_len.is_null() {
        set_error("out_len is NULL");
        return EcglangStatus::NullArgument;
    }
    if fs == 0 {
        set_error("fs must be positive");
        return EcglangStatus::InvalidArgument;
    }
    let peaks = detect_r_peaks(input, fs, &p.cfg.delineation);
    let capacity = unsafe { *out_len };
    unsafe { *out_len = peaks.len() };
    if peaks.len() > capacity || out_indices.is_null() {
        set_error(format!("need room for {} indices", peaks.len()));
        return EcglangStatus::BufferTooSmall;
    }
    for (i, &idx) in peaks.iter().enumerate() {
        unsafe { *out_indices.add(i) = idx };
    }
    EcglangStatus::Ok
}

/// Delineate one window into P/QRS/T/background segments tiling `[0, len)`.
/// Same buffer protocol as `ecglang_detect_r_peaks`.
///
/// # Safety
/// `samples` must point to `len` doubles; `out_segments` to `*out_len`
/// writable segments; `out_len` must be non-NULL.
#[no_mangle]
pub unsafe extern "C" fn ecglang_delineate(
    pipeline: *const EcglangPipeline,
    samples: *const f64,
    len: size_t,
    fs: u32,
    out_segments: *mut EcglangSegment,
    out_len: *mut size_t,
) -> EcglangStatus {
    let Some(p) = (unsafe { pipeline.as_ref() }) else {
        set_error("pipeline is NULL");
        return EcglangStatus::NullArgument;
    };
    let Some(input) = (unsafe { slice_in(samples, len) }) else {
        set_error("samples is NULL");
        return EcglangStatus::NullArgument;
    };
    if out_len.is_null() {
        set_error("out_len is NULL");
        return EcglangStatus::NullArgument;
    }
    if fs == 0 {
        set_error("fs must be positive");
        return EcglangStatus::InvalidArgument;
    }
    let peaks = detect_r_peaks(input, fs, &p.cfg.delineation);
    let d = delineate(input, fs, &peaks, &p.cfg.delineation);
    let capacity = unsafe { *out_len };
    unsafe { *out_len = d.segments.len() };
    if d.segments.len() > capacity || out_segments.is_null() {
        set_error(format!("need room for {} segments", d.segments.len()));
        return EcglangStatus::BufferTooSmall;
    }
    for (i, seg) in d.segments.iter().enumerate() {
        unsafe {
            *out_segments.add(i) = EcglangSegment {
                wave_type: wave_code(seg.wave_type),
                onset: seg.onset,
                offset: seg.offset,
            };
        }
    }
    EcglangStatus::Ok
}

/// Load a vocabulary from its JSON serialization (fingerprint re-verified).
/// Returns NULL on failure.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ecglang_vocabulary_from_json(
    json: *const c_char,
) -> *mut EcglangVocabulary {
    if json.is_null() {
        set_error("json is NULL");
        return std::ptr::null_mut();
    }
    let text = match unsafe { CStr::from_ptr(json) }.to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("json is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    match Vocabulary::from_json(text) {
        Ok(vocab) => Box::into_raw(Box::new(EcglangVocabulary { vocab })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// Destroy a vocabulary handle. NULL is ignored.
///
/// # Safety
/// `vocab` must have come from `ecglang_vocabulary_from_json` and not have
/// been freed before.
#[no_mangle]
pub unsafe extern "C" fn ecglang_vocabulary_free(vocab: *mut EcglangVocabulary) {
    if !vocab.is_null() {
        drop(unsafe { Box::from_raw(vocab) });
    }
}

/// Number of wave tokens (70 with the default cluster map).
///
/// # Safety
/// `vocab` must be a live vocabulary handle.
#[no_mangle]
pub unsafe extern "C" fn ecglang_vocabulary_wave_tokens(
    vocab: *const EcglangVocabulary,
) -> size_t {
    unsafe { vocab.as_ref() }
        .map(|v| v.vocab.n_wave_tokens())
        .unwrap_or(0)
}

/// Copy the vocabulary's SHA-256 fingerprint (hex) into `out` (capacity
/// `out_len` bytes including the NUL).
///
/// # Safety
/// `vocab` must be live; `out` must point to `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ecglang_vocabulary_fingerprint(
    vocab: *const EcglangVocabulary,
    out: *mut c_char,
    out_len: size_t,
) -> EcglangStatus {
    let Some(v) = (unsafe { vocab.as_ref() }) else {
        set_error("vocab is NULL");
        return EcglangStatus::NullArgument;
    };
    let fp = v.vocab.fingerprint().as_bytes();
    if out.is_null() || out_len < fp.len() + 1 {
        set_error(format!("need {} bytes", fp.len() + 1));
        return EcglangStatus::BufferTooSmall;
    }
    unsafe {
        std::ptr::copy_nonoverlapping(fp.as_ptr() as *const c_char, out, fp.len());
        *out.add(fp.len()) = 0;
    }
    EcglangStatus::Ok
}

/// Assign a wave to its vocabulary token. `wave_type` uses the
/// `EcglangSegment` codes (0 = P, 1 = QRS, 2 = T, 3 = background); the
/// resulting global token id is stored in `*out_token`.
///
/// # Safety
/// `wave` must point to `len` doubles; `out_token` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ecglang_assign(
    vocab: *const EcglangVocabulary,
    wave: *const f64,
    len: size_t,
    wave_type: u32,
    out_token: *mut u32,
) -> EcglangStatus {
    let Some(v) = (unsafe { vocab.as_ref() }) else {
        set_error("vocab is NULL");
        return EcglangStatus::NullArgument;
    };
    let Some(input) = (unsafe { slice_in(wave, len) }) else {
        set_error("wave is NULL");
        return EcglangStatus::NullArgument;
    };
    if out_token.is_null() {
        set_error("out_token is NULL");
        return EcglangStatus::NullArgument;
    }
    let Some(t) = wave_from_code(wave_type) else {
        set_error(format!("wave_type {wave_type} out of range"));
        return EcglangStatus::InvalidArgument;
    };
    match v.vocab.assign(input, t, None) {
        Ok(token) => {
            unsafe { *out_token = token };
            EcglangStatus::Ok
        }
        Err(e) => {
            set_error(e);
            EcglangStatus::ProcessingFailed
        }
    }
}
