//! Directory checkpoints: `manifest.json` describing every tensor plus one
//! little-endian blob `tensors.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamWConfig, Layout, ModelConfig, ModelError, ModelParams, OptimizerState, Scalar};

pub const CHECKPOINT_FORMAT: &str = "dnamask-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamWConfig,
    step: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    step: u64,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
    optimizer: Option<OptimizerMeta>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Parameters plus optional optimizer state and caller metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub step: u64,
    pub params: ModelParams<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub extra: serde_json::Value,
}

fn push_tensor<T: Scalar>(
    blob: &mut Vec<u8>,
    records: &mut Vec<TensorRecord>,
    name: String,
    shape: Vec<usize>,
    values: &[T],
) {
    let offset = blob.len();
    for &x in values {
        x.write_le(blob);
    }
    records.push(TensorRecord { name, shape, offset, nbytes: blob.len() - offset });
}

pub fn save_checkpoint<T: Scalar>(dir: &Path, ckpt: &Checkpoint<T>) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let p = &ckpt.params;
    let mut blob = Vec::with_capacity(p.data.len() * T::BYTES * 3);
    let mut records = Vec::new();
    for e in &p.layout.entries {
        push_tensor(&mut blob, &mut records, e.name.clone(), e.shape.clone(), &p.data[e.range.clone()]);
    }
    if let Some(opt) = &ckpt.optimizer {
        for (prefix, moments) in [("adamw.m", &opt.m), ("adamw.v", &opt.v)] {
            for e in &p.layout.entries {
                let name = format!("{prefix}/{}", e.name);
                push_tensor(&mut blob, &mut records, name, e.shape.clone(), &moments[e.range.clone()]);
            }
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.into(),
        step: ckpt.step,
        config: p.config.clone(),
        tensors: records,
        optimizer: ckpt.optimizer.as_ref().map(|o| OptimizerMeta { config: o.config.clone(), step: o.step }),
        extra: ckpt.extra.clone(),
    };
    fs::write(dir.join(BLOB), &blob)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

fn read_tensor<T: Scalar>(blob: &[u8], rec: &TensorRecord, want: &[usize], out: &mut [T]) -> Result<(), ModelError> {
    let bad = |m: String| Err(ModelError::Checkpoint(format!("tensor {}: {m}", rec.name)));
    if rec.shape != want {
        return bad(format!("shape {:?}, expected {:?}", rec.shape, want));
    }
    if rec.nbytes != out.len() * T::BYTES {
        return bad(format!("{} bytes, expected {}", rec.nbytes, out.len() * T::BYTES));
    }
    let Some(bytes) = rec.offset.checked_add(rec.nbytes).and_then(|end| blob.get(rec.offset..end)) else {
        return bad("extends past end of blob".into());
    };
    for (x, chunk) in out.iter_mut().zip(bytes.chunks_exact(T::BYTES)) {
        *x = T::read_le(chunk);
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>, ModelError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.dtype != T::DTYPE {
        return Err(ModelError::Checkpoint(format!("dtype {} but {} requested", manifest.dtype, T::DTYPE)));
    }
    let blob = fs::read(dir.join(BLOB))?;
    let mut params = ModelParams::<T>::zeros(&manifest.config)?;
    let layout: Layout = params.layout.clone();
    let find = |name: &str| {
        manifest
            .tensors
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))
    };
    for e in &layout.entries {
        read_tensor(&blob, find(&e.name)?, &e.shape, &mut params.data[e.range.clone()])?;
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(meta) => {
            let mut opt = OptimizerState::new(meta.config.clone(), layout.total)?;
            opt.step = meta.step;
            for e in &layout.entries {
                read_tensor(&blob, find(&format!("adamw.m/{}", e.name))?, &e.shape, &mut opt.m[e.range.clone()])?;
                read_tensor(&blob, find(&format!("adamw.v/{}", e.name))?, &e.shape, &mut opt.v[e.range.clone()])?;
            }
            Some(opt)
        }
    };
    Ok(Checkpoint { step: manifest.step, params, optimizer, extra: manifest.extra })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gradients;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::desk(21);
        let mut params = ModelParams::<f32>::init(&cfg).unwrap();
        let mut opt = OptimizerState::new(AdamWConfig::new(1e-3), params.data.len()).unwrap();
        let g = Gradients { data: (0..params.data.len()).map(|i| (i as f32).sin()).collect() };
        opt.apply(&mut params, &g, None).unwrap();
        let ckpt = Checkpoint { step: 7, params, optimizer: Some(opt), extra: serde_json::json!({"k": 3}) };
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(back.step, 7);
        assert_eq!(back.extra, ckpt.extra);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params.data), bits(&ckpt.params.data));
        let (a, b) = (back.optimizer.unwrap(), ckpt.optimizer.unwrap());
        assert_eq!(bits(&a.m), bits(&b.m));
        assert_eq!(bits(&a.v), bits(&b.v));
        assert_eq!(a.step, b.step);
    }

    #[test]
    fn manifest_offsets_are_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::<f32>::init(&ModelConfig::desk(9)).unwrap();
        save_checkpoint(dir.path(), &Checkpoint { step: 0, params, optimizer: None, extra: serde_json::Value::Null })
            .unwrap();
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        let mut expect = 0;
        for r in &m.tensors {
            assert_eq!(r.offset, expect);
            assert_eq!(r.nbytes, r.shape.iter().product::<usize>() * 4);
            expect += r.nbytes;
        }
        assert_eq!(fs::metadata(dir.path().join(BLOB)).unwrap().len() as usize, expect);
    }

    #[test]
    fn dtype_and_truncation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::<f32>::init(&ModelConfig::desk(9)).unwrap();
        save_checkpoint(dir.path(), &Checkpoint { step: 0, params, optimizer: None, extra: serde_json::Value::Null })
            .unwrap();
        assert!(matches!(load_checkpoint::<f64>(dir.path()), Err(ModelError::Checkpoint(_))));
        let blob = fs::read(dir.path().join(BLOB)).unwrap();
        fs::write(dir.path().join(BLOB), &blob[..blob.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(ModelError::Checkpoint(_))));
    }
}
