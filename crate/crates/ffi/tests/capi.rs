use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dnamask::model::{save_checkpoint, Checkpoint, ModelConfig, ModelParams};
use dnamask_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { dm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(s.len(), n.min(255));
    s
}

fn vocab(k: usize) -> *mut DmVocab {
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { dm_vocab_new(k, &mut v) }, DmStatus::Ok);
    assert!(!v.is_null());
    v
}

fn encode(v: *const DmVocab, seq: &[u8], strategy: DmStrategy) -> Result<Vec<u32>, DmStatus> {
    let mut out = vec![0u32; 64];
    let mut len = 0usize;
    let st = unsafe { dm_encode(v, seq.as_ptr(), seq.len(), strategy, out.as_mut_ptr(), out.len(), &mut len) };
    if st != DmStatus::Ok {
        return Err(st);
    }
    out.truncate(len);
    Ok(out)
}

fn id(v: *const DmVocab, token: &str) -> u32 {
    let c = CString::new(token).unwrap();
    let mut out = 0u32;
    assert_eq!(unsafe { dm_vocab_token_id(v, c.as_ptr(), &mut out) }, DmStatus::Ok);
    out
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(dm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn vocabulary_and_special_ids() {
    let v = vocab(6);
    assert_eq!(unsafe { dm_vocab_size(v) }, 4101);
    assert_eq!(id(v, "[PAD]"), 0);
    assert_eq!(id(v, "[MASK]"), 4);
    assert_eq!(id(v, "AAAAAA"), 5);
    assert_eq!(id(v, "TTTTTT"), 4100);
    let bad = CString::new("ACGTAZ").unwrap();
    let mut out = 0;
    assert_eq!(unsafe { dm_vocab_token_id(v, bad.as_ptr(), &mut out) }, DmStatus::InvalidArgument);
    assert!(last_error().contains("ACGTAZ"));
    unsafe { dm_vocab_free(v) };
    assert_eq!(unsafe { dm_vocab_size(ptr::null()) }, 0);
}

#[test]
fn invalid_k_is_rejected() {
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { dm_vocab_new(0, &mut v) }, DmStatus::InvalidArgument);
    assert!(v.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn encode_matches_reference_example() {
    let v = vocab(3);
    let ids = encode(v, b"ATGACG", DmStrategy::Overlapping).unwrap();
    let want: Vec<u32> = ["ATG", "TGA", "GAC", "ACG"].iter().map(|t| id(v, t)).collect();
    assert_eq!(ids, want);
    let ids = encode(v, b"atgacg", DmStrategy::NonOverlapping).unwrap();
    assert_eq!(ids, vec![id(v, "ATG"), id(v, "ACG")]);
    let same = encode(v, b"ATGACG", DmStrategy::SameLength).unwrap();
    assert_eq!(same.len(), 4);
    unsafe { dm_vocab_free(v) };
}

#[test]
fn encode_reports_errors() {
    let v = vocab(6);
    assert_eq!(encode(v, b"ACGTXACGT", DmStrategy::Overlapping), Err(DmStatus::InvalidBase));
    assert_eq!(encode(v, b"ACG", DmStrategy::Overlapping), Err(DmStatus::SequenceTooShort));
    assert_eq!(encode(ptr::null(), b"ACGTACGT", DmStrategy::Overlapping), Err(DmStatus::NullPointer));
    unsafe { dm_vocab_free(v) };
}

#[test]
fn small_buffer_reports_required_length() {
    let v = vocab(6);
    let seq = b"ACGTACGTACGTACGT";
    let mut out = [0u32; 4];
    let mut len = 0;
    let st = unsafe { dm_encode(v, seq.as_ptr(), seq.len(), DmStrategy::Overlapping, out.as_mut_ptr(), 4, &mut len) };
    assert_eq!(st, DmStatus::BufferTooSmall);
    assert_eq!(len, 11);
    unsafe { dm_vocab_free(v) };
}

#[test]
fn schedule_widths_and_mask_plans() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dm_schedule_new(500_000, &mut s) }, DmStatus::Ok);
    let mut widths = [0usize; 8];
    let mut len = 0;
    for (step, want) in [(1u64, vec![6]), (30_001, vec![6, 8]), (500_000, vec![6, 8, 10, 12, 14])] {
        assert_eq!(unsafe { dm_allowed_widths(s, step, widths.as_mut_ptr(), 8, &mut len) }, DmStatus::Ok);
        assert_eq!(&widths[..len], &want[..]);
    }
    assert_eq!(unsafe { dm_allowed_widths(s, 500_001, widths.as_mut_ptr(), 8, &mut len) }, DmStatus::StepOutOfRange);

    let plan = |seed: u64| {
        let mut ids = vec![0usize; 512];
        let (mut n, mut w) = (0, 0);
        let st = unsafe { dm_plan_mask(s, 512, 400_000, 0.025, seed, 3, ids.as_mut_ptr(), 512, &mut n, &mut w) };
        assert_eq!(st, DmStatus::Ok);
        ids.truncate(n);
        (ids, w)
    };
    let (a, wa) = plan(11);
    assert_eq!(plan(11), (a.clone(), wa));
    assert!([6, 8, 10, 12, 14].contains(&wa));
    assert!(a.windows(2).all(|p| p[0] < p[1]));
    assert!(a.iter().all(|&i| i < 512));
    unsafe { dm_schedule_free(s) };
}

#[test]
fn expected_fraction_and_mcc() {
    let (mut interior, mut avg) = (0.0, 0.0);
    assert_eq!(unsafe { dm_expected_mask_fraction(0.025, 6, 512, &mut interior, &mut avg) }, DmStatus::Ok);
    assert!((interior - (1.0 - 0.975f64.powi(6))).abs() < 1e-12);
    assert!(avg < interior);
    assert_eq!(dm_mcc(5, 5, 0, 0), 1.0);
    assert_eq!(dm_mcc(0, 0, 5, 5), -1.0);
    assert_eq!(dm_mcc(1, 1, 1, 1), 0.0);
    assert_eq!(dm_mcc(3, 0, 0, 0), 0.0);
}

#[test]
fn model_handle_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::desk(4101);
    cfg.num_layers = 2;
    cfg.hidden_dim = 16;
    cfg.ff_dim = 32;
    cfg.max_len = 32;
    let params = ModelParams::<f32>::init(&cfg).unwrap();
    let ckpt = Checkpoint { step: 0, params, optimizer: None, extra: Default::default() };
    save_checkpoint(dir.path(), &ckpt).unwrap();

    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dm_model_load(path.as_ptr(), &mut m) }, DmStatus::Ok);
    assert_eq!(unsafe { dm_model_num_layers(m) }, 2);
    assert_eq!(unsafe { dm_model_vocab_size(m) }, 4101);

    let ids: Vec<u32> = [2, 10, 4, 4, 30, 3, 0, 0].to_vec();
    let masked = [2usize, 3];
    let (mut cls, mut ent) = ([0.0f64; 2], [0.0f64; 2]);
    let mut len = 0;
    let st = unsafe {
        dm_model_attention_metrics(m, ids.as_ptr(), ids.len(), masked.as_ptr(), 2, cls.as_mut_ptr(), ent.as_mut_ptr(), 2, &mut len)
    };
    assert_eq!(st, DmStatus::Ok, "{}", last_error());
    assert_eq!(len, 2);
    for l in 0..2 {
        assert!(cls[l] > 0.0 && cls[l] < 1.0);
        assert!(ent[l] > 0.0 && ent[l] <= (6f64).ln() + 1e-9);
    }
    unsafe { dm_model_free(m) };

    let missing = CString::new("/nonexistent/ckpt").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dm_model_load(missing.as_ptr(), &mut m) }, DmStatus::Io);
    assert!(m.is_null());
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dnamask.h");
    assert!(header.exists());
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).status() else {
        eprintln!("no C compiler available; skipping header syntax check");
        return;
    };
    assert!(status.success());
}
