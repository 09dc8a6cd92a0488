use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ModelConfig, ModelError, Scalar};
use crate::rng::{domain, RngKey};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Whether a tensor is initialized as a weight, a bias, or a layer-norm scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
}

/// Offsets of every named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<ParamEntry>,
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerSlots>,
    /// `None` when tied to `tok_emb`.
    pub mlm_w: Option<Range<usize>>,
    pub mlm_b: Range<usize>,
    pub cls_w: Range<usize>,
    pub cls_b: Range<usize>,
    pub total: usize,
}

struct Builder {
    entries: Vec<ParamEntry>,
    cursor: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], kind: ParamKind) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.cursor..self.cursor + len;
        self.cursor += len;
        self.entries.push(ParamEntry { name, shape: shape.to_vec(), range: range.clone(), kind });
        range
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        use ParamKind::*;
        let (d, f, v) = (cfg.hidden_dim, cfg.ff_dim, cfg.vocab_size);
        let mut b = Builder { entries: Vec::new(), cursor: 0 };
        let tok_emb = b.add("embeddings.token".into(), &[v, d], Weight);
        let pos_emb = b.add("embeddings.position".into(), &[cfg.max_len, d], Weight);
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let p = |s: &str| format!("layer{l}.{s}");
                LayerSlots {
                    wq: b.add(p("attention.query.weight"), &[d, d], Weight),
                    bq: b.add(p("attention.query.bias"), &[d], Bias),
                    wk: b.add(p("attention.key.weight"), &[d, d], Weight),
                    bk: b.add(p("attention.key.bias"), &[d], Bias),
                    wv: b.add(p("attention.value.weight"), &[d, d], Weight),
                    bv: b.add(p("attention.value.bias"), &[d], Bias),
                    wo: b.add(p("attention.output.weight"), &[d, d], Weight),
                    bo: b.add(p("attention.output.bias"), &[d], Bias),
                    ln1_g: b.add(p("attention.norm.scale"), &[d], NormScale),
                    ln1_b: b.add(p("attention.norm.shift"), &[d], NormShift),
                    w1: b.add(p("ffn.in.weight"), &[d, f], Weight),
                    b1: b.add(p("ffn.in.bias"), &[f], Bias),
                    w2: b.add(p("ffn.out.weight"), &[f, d], Weight),
                    b2: b.add(p("ffn.out.bias"), &[d], Bias),
                    ln2_g: b.add(p("ffn.norm.scale"), &[d], NormScale),
                    ln2_b: b.add(p("ffn.norm.shift"), &[d], NormShift),
                }
            })
            .collect();
        let mlm_w = (!cfg.tie_embeddings).then(|| b.add("mlm.weight".into(), &[d, v], Weight));
        let mlm_b = b.add("mlm.bias".into(), &[v], Bias);
        let cls_w = b.add("classifier.weight".into(), &[d, cfg.num_classes], Weight);
        let cls_b = b.add("classifier.bias".into(), &[cfg.num_classes], Bias);
        Layout {
            total: b.cursor,
            entries: b.entries,
            tok_emb,
            pos_emb,
            layers,
            mlm_w,
            mlm_b,
            cls_w,
            cls_b,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Ranges of the classification head.
    pub fn head_ranges(&self) -> Vec<Range<usize>> {
        vec![self.cls_w.clone(), self.cls_b.clone()]
    }
}

/// All model parameters in one flat vector, addressed through [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

fn truncated_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(config);
        let data = vec![T::zero(); layout.total];
        Ok(ModelParams { config: config.clone(), layout, data })
    }

    /// Weights from a normal(0, 0.02) truncated at two standard deviations,
    /// biases and norm shifts 0, norm scales 1. Each tensor has its own stream.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let root = RngKey::new(config.seed).fork(domain::INIT);
        for (i, e) in p.layout.entries.iter().enumerate() {
            let slot = &mut p.data[e.range.clone()];
            match e.kind {
                ParamKind::Weight => {
                    let mut rng = root.fork(i as u64).rng();
                    for x in slot.iter_mut() {
                        *x = T::from_f64_lossy(truncated_normal(&mut rng, INIT_STD));
                    }
                }
                ParamKind::NormScale => slot.fill(T::one()),
                ParamKind::Bias | ParamKind::NormShift => slot.fill(T::zero()),
            }
        }
        Ok(p)
    }

    /// Re-creates the classification head for `num_classes` outputs.
    pub fn reset_classifier(&mut self, num_classes: usize, seed: u64) -> Result<(), ModelError> {
        let mut cfg = self.config.clone();
        cfg.num_classes = num_classes;
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut data = vec![T::zero(); layout.total];
        // everything before the head keeps its position
        let keep = self.layout.cls_w.start;
        data[..keep].copy_from_slice(&self.data[..keep]);
        let mut rng = RngKey::new(seed).fork2(domain::INIT, u64::MAX).rng();
        for x in &mut data[layout.cls_w.clone()] {
            *x = T::from_f64_lossy(truncated_normal(&mut rng, INIT_STD));
        }
        self.config = cfg;
        self.layout = layout;
        self.data = data;
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.entry(name).map(|e| &self.data[e.range.clone()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row `id` of the token embedding table.
    pub fn token_embedding(&self, id: usize) -> &[T] {
        let d = self.config.hidden_dim;
        let start = self.layout.tok_emb.start + id * d;
        &self.data[start..start + d]
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = ModelConfig::desk(4101);
        let a = ModelParams::<f32>::init(&cfg).unwrap();
        let b = ModelParams::<f32>::init(&cfg).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut cfg2 = cfg.clone();
        cfg2.seed = 1;
        assert_ne!(a.data, ModelParams::<f32>::init(&cfg2).unwrap().data);
    }

    #[test]
    fn init_statistics() {
        let p = ModelParams::<f64>::init(&ModelConfig::desk(4101)).unwrap();
        let w = p.tensor("embeddings.token").unwrap();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 1e-3);
        // truncation at 2σ shrinks the std to about 0.88σ
        assert!((var.sqrt() - 0.02 * 0.8796).abs() < 5e-4, "{}", var.sqrt());
        assert!(w.iter().all(|x| x.abs() <= 0.04));
        assert!(p.tensor("layer0.attention.norm.scale").unwrap().iter().all(|&x| x == 1.0));
        assert!(p.tensor("layer1.ffn.norm.shift").unwrap().iter().all(|&x| x == 0.0));
        assert!(p.tensor("mlm.bias").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = ModelConfig::desk(4101);
        cfg.hidden_dim = 63;
        assert!(matches!(ModelParams::<f32>::init(&cfg), Err(ModelError::ConfigInvalid(_))));
        let mut cfg = ModelConfig::desk(4101);
        cfg.max_len = 2;
        assert!(ModelParams::<f32>::init(&cfg).is_err());
    }

    #[test]
    fn reference_config_is_representable() {
        let cfg = ModelConfig::reference(4101);
        cfg.validate().unwrap();
        let layout = Layout::new(&cfg);
        assert_eq!(layout.total, cfg.parameter_count());
        assert_eq!(layout.layers.len(), 12);
    }

    #[test]
    fn tied_layout_has_no_output_matrix() {
        let mut cfg = ModelConfig::desk(21);
        cfg.tie_embeddings = true;
        let layout = Layout::new(&cfg);
        assert!(layout.mlm_w.is_none());
        assert_eq!(layout.total, cfg.parameter_count());
    }

    #[test]
    fn reset_classifier_keeps_backbone() {
        let mut p = ModelParams::<f32>::init(&ModelConfig::desk(21)).unwrap();
        let before = p.data[..p.layout.cls_w.start].to_vec();
        p.reset_classifier(5, 3).unwrap();
        assert_eq!(p.config.num_classes, 5);
        assert_eq!(p.data.len(), p.config.parameter_count());
        assert_eq!(&p.data[..before.len()], &before[..]);
    }
}
