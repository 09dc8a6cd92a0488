//! C ABI over the `dnamask` library.
//!
//! Every fallible function returns a [`DmStatus`]; on failure a description is
//! kept per thread and can be fetched with [`dm_last_error_message`]. Objects
//! are opaque handles created by `*_new`/`*_load` and released by `*_free`.
//! Output arrays are caller-owned: when `cap` is too small the call fails with
//! `DM_STATUS_BUFFER_TOO_SMALL` and `*out_len` holds the required length.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dnamask::analysis::{mcc, AttentionStats, ConfusionCounts};
use dnamask::corpus::{CorpusError, DnaSequence};
use dnamask::masking::{expected_mask_fraction, plan_mask, MaskError, MaskSchedule};
use dnamask::model::{forward, load_checkpoint, ModelError, ModelParams};
use dnamask::rng::{domain, RngKey};
use dnamask::tokenizer::{encode, Strategy, TokenizerError, Vocabulary, PAD_ID};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidBase = 3,
    SequenceTooShort = 4,
    BufferTooSmall = 5,
    StepOutOfRange = 6,
    Io = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DmStrategy {
    Overlapping = 0,
    NonOverlapping = 1,
    SameLength = 2,
}

impl From<DmStrategy> for Strategy {
    fn from(s: DmStrategy) -> Self {
        match s {
            DmStrategy::Overlapping => Strategy::Overlapping,
            DmStrategy::NonOverlapping => Strategy::NonOverlapping,
            DmStrategy::SameLength => Strategy::SameLength,
        }
    }
}

/// Opaque k-mer vocabulary.
pub struct DmVocab(Vocabulary);

/// Opaque masking curriculum.
pub struct DmSchedule(MaskSchedule);

/// Opaque model loaded from a checkpoint directory.
pub struct DmModel(ModelParams<f32>);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(DmStatus, String);

impl Failure {
    fn new(status: DmStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<TokenizerError> for Failure {
    fn from(e: TokenizerError) -> Self {
        let status = match e {
            TokenizerError::SequenceTooShort { .. } => DmStatus::SequenceTooShort,
            _ => DmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = match e {
            CorpusError::InvalidBase { .. } => DmStatus::InvalidBase,
            CorpusError::Io(_) => DmStatus::Io,
            _ => DmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<MaskError> for Failure {
    fn from(e: MaskError) -> Self {
        let status = match e {
            MaskError::StepOutOfRange { .. } => DmStatus::StepOutOfRange,
            _ => DmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io(_) => DmStatus::Io,
            ModelError::Checkpoint(_) | ModelError::Json(_) => DmStatus::Io,
            _ => DmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<dnamask::analysis::AnalysisError> for Failure {
    fn from(e: dnamask::analysis::AnalysisError) -> Self {
        Failure(DmStatus::InvalidArgument, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DmStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (DmStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(_) => (DmStatus::Internal, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(DmStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Copies `values` into a caller buffer, reporting the needed length.
unsafe fn emit<T: Copy>(values: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    non_null(out_len, "out_len")?;
    *out_len = values.len();
    if values.len() > cap {
        return Err(Failure::new(
            DmStatus::BufferTooSmall,
            format!("need {} elements, buffer holds {cap}", values.len()),
        ));
    }
    if !values.is_empty() {
        non_null(out, "output buffer")?;
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

unsafe fn bytes<'a>(p: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, "input")?;
    Ok(slice::from_raw_parts(p, len))
}

/// Copies the calling thread's last error message (NUL-terminated, truncated
/// to `cap`) and returns its full length in bytes excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn dm_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// vocabulary and tokenization

#[no_mangle]
pub unsafe extern "C" fn dm_vocab_new(k: usize, out: *mut *mut DmVocab) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        let v = Vocabulary::new(k)?;
        *out = Box::into_raw(Box::new(DmVocab(v)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dm_vocab_free(vocab: *mut DmVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of ids, special tokens included (0 for a null handle).
#[no_mangle]
pub unsafe extern "C" fn dm_vocab_size(vocab: *const DmVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.size())
}

/// Id of a k-mer or special token such as `"[MASK]"`.
#[no_mangle]
pub unsafe extern "C" fn dm_vocab_token_id(vocab: *const DmVocab, token: *const c_char, out_id: *mut u32) -> DmStatus {
    guard(|| {
        non_null(vocab, "vocab")?;
        non_null(token, "token")?;
        non_null(out_id, "out_id")?;
        let text = CStr::from_ptr(token)
            .to_str()
            .map_err(|_| Failure::new(DmStatus::InvalidArgument, "token is not UTF-8"))?;
        *out_id = (*vocab)
            .0
            .token_to_id(text)
            .ok_or_else(|| Failure::new(DmStatus::InvalidArgument, format!("unknown token {text:?}")))?;
        Ok(())
    })
}

/// Encodes `len` bases (A/C/G/T/N, any case) with the given strategy.
#[no_mangle]
pub unsafe extern "C" fn dm_encode(
    vocab: *const DmVocab,
    bases: *const u8,
    len: usize,
    strategy: DmStrategy,
    out_ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(vocab, "vocab")?;
        let seq = DnaSequence::new("ffi", bytes(bases, len)?)?;
        let ids = encode(&seq, &(*vocab).0, strategy.into())?.ids;
        emit(&ids, out_ids, cap, out_len)
    })
}

// ---------------------------------------------------------------------------
// masking

/// Default five-stage curriculum scaled to `total_steps`.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_new(total_steps: u64, out: *mut *mut DmSchedule) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(DmSchedule(MaskSchedule::new(total_steps)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dm_schedule_free(schedule: *mut DmSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

#[no_mangle]
pub unsafe extern "C" fn dm_allowed_widths(
    schedule: *const DmSchedule,
    step: u64,
    out_widths: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(schedule, "schedule")?;
        let w = (*schedule).0.allowed_widths(step)?;
        emit(&w, out_widths, cap, out_len)
    })
}

/// Masked indices for sequence `seq_index` at `step`, drawn from the stream
/// keyed by `(seed, step, seq_index)`. Writes the chosen span width.
#[no_mangle]
pub unsafe extern "C" fn dm_plan_mask(
    schedule: *const DmSchedule,
    seq_len: usize,
    step: u64,
    probability: f64,
    seed: u64,
    seq_index: u64,
    out_ids: *mut usize,
    cap: usize,
    out_len: *mut usize,
    out_width: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(schedule, "schedule")?;
        non_null(out_width, "out_width")?;
        let mut rng = RngKey::new(seed).fork3(domain::MASK, step, seq_index).rng();
        let plan = plan_mask(seq_len, step, probability, &(*schedule).0, None, &mut rng)?;
        emit(&plan.mask_ids, out_ids, cap, out_len)?;
        *out_width = plan.width;
        Ok(())
    })
}

/// Exact masking probability of an interior position and averaged over all
/// `seq_len` positions, for a single width `m`.
#[no_mangle]
pub unsafe extern "C" fn dm_expected_mask_fraction(
    probability: f64,
    m: usize,
    seq_len: usize,
    out_interior: *mut f64,
    out_average: *mut f64,
) -> DmStatus {
    guard(|| {
        non_null(out_interior, "out_interior")?;
        non_null(out_average, "out_average")?;
        let f = expected_mask_fraction(probability, m, seq_len)?;
        *out_interior = f.interior;
        *out_average = f.average;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// metrics

/// Matthews correlation coefficient; 0 when a marginal is empty.
#[no_mangle]
pub extern "C" fn dm_mcc(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    mcc(ConfusionCounts::new(tp, tn, fp, fn_))
}

// ---------------------------------------------------------------------------
// model

/// Loads the parameters of a checkpoint directory.
#[no_mangle]
pub unsafe extern "C" fn dm_model_load(path: *const c_char, out: *mut *mut DmModel) -> DmStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::new(DmStatus::InvalidArgument, "path is not UTF-8"))?;
        let ckpt = load_checkpoint::<f32>(Path::new(p))?;
        *out = Box::into_raw(Box::new(DmModel(ckpt.params)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dm_model_free(model: *mut DmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn dm_model_num_layers(model: *const DmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.num_layers)
}

#[no_mangle]
pub unsafe extern "C" fn dm_model_vocab_size(model: *const DmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.vocab_size)
}

/// Per-layer `[CLS]` attention mass and attention entropy for one framed
/// input (`[PAD]` ids are treated as padding), averaged over the query
/// positions in `masked`. Both outputs need `num_layers` slots.
#[no_mangle]
pub unsafe extern "C" fn dm_model_attention_metrics(
    model: *const DmModel,
    ids: *const u32,
    n: usize,
    masked: *const usize,
    n_masked: usize,
    out_cls_mass: *mut f64,
    out_entropy: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(model, "model")?;
        let params = &(*model).0;
        let ids: &[u32] = if n == 0 { &[] } else { non_null(ids, "ids").map(|_| slice::from_raw_parts(ids, n))? };
        let masked: &[usize] =
            if n_masked == 0 { &[] } else { non_null(masked, "masked").map(|_| slice::from_raw_parts(masked, n_masked))? };
        let mask: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();
        let trace = forward(params, ids, &mask)?;
        let mut stats = AttentionStats::new(params.config.num_layers);
        stats.accumulate(&trace, masked)?;
        let m = stats.finish()?;
        emit(&m.cls_mass, out_cls_mass, cap, out_len)?;
        emit(&m.entropy, out_entropy, cap, out_len)
    })
}
