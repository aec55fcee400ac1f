//! C interface to the tcb metrics, assertion parsing and corpus loading.
//!
//! Every fallible function returns a [`TcbStatus`]; on failure the message
//! is available from [`tcb_last_error`] on the same thread until the next
//! call. Handles are opaque and must be released with their `_free`
//! function.
//!
//! # Safety
//!
//! Array arguments must point to at least the stated number of elements
//! (NULL is accepted only for zero-length arrays), strings must be
//! NUL-terminated, output pointers must be writable, and handles must come
//! from the matching constructor and not be used after being freed.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tcb_core::analysis::rank_correlation;
use tcb_core::assertion::{parse_assertion_text, AssertionSet, Dimension};
use tcb_core::consistency::{ate, epe, map_similarity, tc_score_i2v_value, FlowField, Trajectory, Weights};
use tcb_core::corpus::{load_corpus, Category, CorpusManifest, ManifestKind};
use tcb_core::verifier::{compute_tc, compute_tc_score_t2v, compute_tcr, Answer, Verdict};
use tcb_core::video_io::{remap_index_from, resample_indices};
use tcb_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcbStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Shape = 3,
    Parse = 4,
    InvalidUtf8 = 5,
    Io = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcbDimension {
    Completion = 0,
    Consistency = 1,
    Other = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcbCategory {
    Attribute = 0,
    ObjectRelation = 1,
    Background = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcbManifestKind {
    T2v = 0,
    I2v = 1,
}

/// Parsed assertion set.
pub struct TcbAssertionSet {
    set: AssertionSet,
}

/// Loaded and validated benchmark corpus.
pub struct TcbCorpus {
    manifest: CorpusManifest,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TcbStatus {
    match e {
        Error::Validation(_) | Error::IndexOutOfRange { .. } | Error::MissingArtifact { .. } => TcbStatus::Validation,
        Error::Shape(_) => TcbStatus::Shape,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => TcbStatus::Parse,
        Error::Io(_) => TcbStatus::Io,
        _ => TcbStatus::Internal,
    }
}

fn fail(status: TcbStatus, msg: impl Into<String>) -> TcbStatus {
    set_error(msg);
    status
}

/// Runs `f`, recording the error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), TcbStatus>) -> TcbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TcbStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(TcbStatus::Internal, "panic inside tcb"),
    }
}

fn core(e: Error) -> TcbStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], TcbStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(TcbStatus::NullPointer, "null array pointer"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, TcbStatus> {
    p.as_mut().ok_or_else(|| fail(TcbStatus::NullPointer, "null output pointer"))
}

unsafe fn string<'a>(p: *const c_char) -> Result<&'a str, TcbStatus> {
    if p.is_null() {
        return Err(fail(TcbStatus::NullPointer, "null string pointer"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TcbStatus::InvalidUtf8, "string is not valid UTF-8"))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn tcb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map(|s| s.as_ptr()).unwrap_or(ptr::null()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tcb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Clamped linear map of a cosine similarity from [0.90, 0.98] onto [0, 1].
#[no_mangle]
pub extern "C" fn tcb_map_similarity(s: f64) -> f64 {
    map_similarity(s)
}

/// `w1 * pass_rate + w2 * mean_mapped`; weights must be non-negative and sum to 1.
#[no_mangle]
pub unsafe extern "C" fn tcb_tc_score_i2v(pass_rate: f64, mean_mapped: f64, w1: f64, w2: f64, result: *mut f64) -> TcbStatus {
    guard(|| {
        let result = out(result)?;
        let w = Weights {
            pass_rate: w1,
            consistency: w2,
        };
        *result = tc_score_i2v_value(pass_rate, mean_mapped, &w).map_err(core)?;
        Ok(())
    })
}

/// Percentage of ones among `n` per-video completion flags (each 0 or 1).
#[no_mangle]
pub unsafe extern "C" fn tcb_compute_tcr(tcs: *const u8, n: usize, result: *mut f64) -> TcbStatus {
    guard(|| {
        let tcs = slice(tcs, n)?;
        if tcs.iter().any(|&t| t > 1) {
            return Err(fail(TcbStatus::Validation, "completion flags must be 0 or 1"));
        }
        *out(result)? = compute_tcr(tcs).map_err(core)?;
        Ok(())
    })
}

/// Endpoint error between `frames` flow fields of `width * height` pixels.
/// Each array holds `frames` consecutive row-major planes.
#[no_mangle]
pub unsafe extern "C" fn tcb_epe(
    u: *const f32,
    v: *const f32,
    ref_u: *const f32,
    ref_v: *const f32,
    width: u32,
    height: u32,
    frames: usize,
    result: *mut f64,
) -> TcbStatus {
    guard(|| {
        let plane = width as usize * height as usize;
        let len = plane * frames;
        let build = |u: &[f32], v: &[f32]| -> Result<Vec<FlowField>, TcbStatus> {
            (0..frames)
                .map(|k| {
                    let r = k * plane..(k + 1) * plane;
                    FlowField::new(width, height, u[r.clone()].to_vec(), v[r].to_vec()).map_err(core)
                })
                .collect()
        };
        let gen = build(slice(u, len)?, slice(v, len)?)?;
        let reference = build(slice(ref_u, len)?, slice(ref_v, len)?)?;
        *out(result)? = epe(&gen, &reference).map_err(core)?;
        Ok(())
    })
}

/// Average trajectory error. Positions are laid out as
/// `[point][frame][x, y]`, i.e. `points * frames * 2` doubles.
#[no_mangle]
pub unsafe extern "C" fn tcb_ate(xy: *const f64, ref_xy: *const f64, points: usize, frames: usize, result: *mut f64) -> TcbStatus {
    guard(|| {
        let len = points * frames * 2;
        let build = |a: &[f64]| -> Result<Trajectory, TcbStatus> {
            let positions = (0..points)
                .map(|p| (0..frames).map(|f| [a[(p * frames + f) * 2], a[(p * frames + f) * 2 + 1]]).collect())
                .collect();
            Trajectory::new(positions).map_err(core)
        };
        let a = build(slice(xy, len)?)?;
        let b = build(slice(ref_xy, len)?)?;
        *out(result)? = ate(&a, &b).map_err(core)?;
        Ok(())
    })
}

/// Spearman's rho (average ranks) and Kendall's tau-b of two length-`n` lists.
#[no_mangle]
pub unsafe extern "C" fn tcb_rank_correlation(x: *const f64, y: *const f64, n: usize, rho: *mut f64, tau: *mut f64) -> TcbStatus {
    guard(|| {
        let c = rank_correlation(slice(x, n)?, slice(y, n)?).map_err(core)?;
        *out(rho)? = c.spearman_rho;
        *out(tau)? = c.kendall_tau;
        Ok(())
    })
}

/// Writes `n` equal-gap 1-based indices into a sequence of `k` frames.
#[no_mangle]
pub unsafe extern "C" fn tcb_resample_indices(k: usize, n: usize, indices: *mut usize) -> TcbStatus {
    guard(|| {
        if k == 0 || n == 0 {
            return Err(fail(TcbStatus::Validation, "resampling needs k >= 1 and n >= 1"));
        }
        if indices.is_null() {
            return Err(fail(TcbStatus::NullPointer, "null output pointer"));
        }
        let dst = std::slice::from_raw_parts_mut(indices, n);
        dst.copy_from_slice(&resample_indices(k, n));
        Ok(())
    })
}

/// Maps a 1-based index authored for `from` frames onto `to` frames.
/// Returns 0 when `index` is outside `1..=from`.
#[no_mangle]
pub extern "C" fn tcb_remap_index(index: usize, from: usize, to: usize) -> usize {
    if index == 0 || index > from || to == 0 {
        return 0;
    }
    remap_index_from(index, from, to)
}

/// Parses assertion text laid out in `- Check` sections of
/// `Input: Frame …` / `Q: …` pairs.
#[no_mangle]
pub unsafe extern "C" fn tcb_assertion_set_parse(text: *const c_char, set: *mut *mut TcbAssertionSet) -> TcbStatus {
    guard(|| {
        let text = string(text)?;
        let slot = out(set)?;
        let assertions = parse_assertion_text(text).map_err(core)?;
        *slot = Box::into_raw(Box::new(TcbAssertionSet {
            set: AssertionSet {
                prompt_id: String::new(),
                assertions,
                generator_fingerprint: String::new(),
                raw_text: Some(text.to_string()),
            },
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tcb_assertion_set_free(set: *mut TcbAssertionSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of assertions, or 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn tcb_assertion_set_len(set: *const TcbAssertionSet) -> usize {
    set.as_ref().map(|s| s.set.assertions.len()).unwrap_or(0)
}

unsafe fn assertion_at<'a>(set: *const TcbAssertionSet, i: usize) -> Result<&'a tcb_core::assertion::Assertion, TcbStatus> {
    let s = set.as_ref().ok_or_else(|| fail(TcbStatus::NullPointer, "null assertion set"))?;
    s.set
        .assertions
        .get(i)
        .ok_or_else(|| fail(TcbStatus::Validation, format!("assertion {i} out of range ({})", s.set.assertions.len())))
}

#[no_mangle]
pub unsafe extern "C" fn tcb_assertion_set_dimension(set: *const TcbAssertionSet, i: usize, dimension: *mut TcbDimension) -> TcbStatus {
    guard(|| {
        let a = assertion_at(set, i)?;
        *out(dimension)? = match a.dimension {
            Dimension::Completion => TcbDimension::Completion,
            Dimension::Consistency => TcbDimension::Consistency,
            Dimension::Other => TcbDimension::Other,
        };
        Ok(())
    })
}

/// Copies up to `cap` frame indices of assertion `i` into `indices` and
/// stores the full count in `len`.
#[no_mangle]
pub unsafe extern "C" fn tcb_assertion_set_frame_indices(
    set: *const TcbAssertionSet,
    i: usize,
    indices: *mut usize,
    cap: usize,
    len: *mut usize,
) -> TcbStatus {
    guard(|| {
        let a = assertion_at(set, i)?;
        *out(len)? = a.frame_indices.len();
        let n = cap.min(a.frame_indices.len());
        if n > 0 {
            if indices.is_null() {
                return Err(fail(TcbStatus::NullPointer, "null output pointer"));
            }
            std::slice::from_raw_parts_mut(indices, n).copy_from_slice(&a.frame_indices[..n]);
        }
        Ok(())
    })
}

unsafe fn verdicts_for<'a>(set: *const TcbAssertionSet, yes: *const u8, n: usize) -> Result<(&'a AssertionSet, Vec<Verdict>), TcbStatus> {
    let s = set.as_ref().ok_or_else(|| fail(TcbStatus::NullPointer, "null assertion set"))?;
    let answers = slice(yes, n)?;
    if n != s.set.assertions.len() {
        return Err(fail(
            TcbStatus::Shape,
            format!("{n} answers for {} assertions", s.set.assertions.len()),
        ));
    }
    let verdicts = s
        .set
        .assertions
        .iter()
        .zip(answers)
        .map(|(a, &y)| Verdict {
            assertion_id: a.id.clone(),
            answer: if y != 0 { Answer::Yes } else { Answer::No },
            raw_response: String::new(),
            degraded: false,
        })
        .collect();
    Ok((&s.set, verdicts))
}

/// Transition completion (0 or 1) given one answer per assertion, in set
/// order (non-zero = Yes).
#[no_mangle]
pub unsafe extern "C" fn tcb_assertion_set_tc(set: *const TcbAssertionSet, yes: *const u8, n: usize, tc: *mut u8) -> TcbStatus {
    guard(|| {
        let (s, verdicts) = verdicts_for(set, yes, n)?;
        *out(tc)? = compute_tc(&verdicts, s).map_err(core)?;
        Ok(())
    })
}

/// Fraction of Yes answers over all assertions.
#[no_mangle]
pub unsafe extern "C" fn tcb_assertion_set_tc_score(set: *const TcbAssertionSet, yes: *const u8, n: usize, score: *mut f64) -> TcbStatus {
    guard(|| {
        let (s, verdicts) = verdicts_for(set, yes, n)?;
        *out(score)? = compute_tc_score_t2v(&verdicts, s).map_err(core)?;
        Ok(())
    })
}

/// Loads and validates a JSON-lines corpus file.
#[no_mangle]
pub unsafe extern "C" fn tcb_corpus_load(path: *const c_char, kind: TcbManifestKind, corpus: *mut *mut TcbCorpus) -> TcbStatus {
    guard(|| {
        let path = string(path)?;
        let slot = out(corpus)?;
        let kind = match kind {
            TcbManifestKind::T2v => ManifestKind::T2V,
            TcbManifestKind::I2v => ManifestKind::I2V,
        };
        let manifest = load_corpus(Path::new(path), kind).map_err(core)?;
        *slot = Box::into_raw(Box::new(TcbCorpus { manifest }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tcb_corpus_free(corpus: *mut TcbCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of prompts, or 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn tcb_corpus_len(corpus: *const TcbCorpus) -> usize {
    corpus.as_ref().map(|c| c.manifest.prompts.len()).unwrap_or(0)
}

/// Number of prompts in one category, or 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn tcb_corpus_category_count(corpus: *const TcbCorpus, category: TcbCategory) -> usize {
    let cat = match category {
        TcbCategory::Attribute => Category::Attribute,
        TcbCategory::ObjectRelation => Category::ObjectRelation,
        TcbCategory::Background => Category::Background,
    };
    corpus
        .as_ref()
        .map(|c| c.manifest.prompts.iter().filter(|p| p.category == cat).count())
        .unwrap_or(0)
}
