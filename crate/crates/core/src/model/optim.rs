use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Gradients, Layout, ModelError, ModelParams, ParamKind, Scalar};

/// AdamW hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Rescale the gradient to at most this global L2 norm before the update.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamWConfig {
    pub fn new(lr: f64) -> Self {
        AdamWConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.max_grad_norm.is_none_or(|c| c > 0.0 && c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ModelError::ConfigInvalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moments and step counter of AdamW. Weight decay is decoupled and applied
/// to weight matrices only, never to biases or norm parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

fn decayed_ranges(layout: &Layout) -> Vec<Range<usize>> {
    layout.entries.iter().filter(|e| e.kind == ParamKind::Weight).map(|e| e.range.clone()).collect()
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig, num_params: usize) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(OptimizerState { config, step: 0, m: vec![T::zero(); num_params], v: vec![T::zero(); num_params] })
    }

    /// Applies one update. With `trainable` set, only those ranges move (and
    /// only their moments advance).
    pub fn apply(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &Gradients<T>,
        trainable: Option<&[Range<usize>]>,
    ) -> Result<(), ModelError> {
        let n = params.data.len();
        if grads.data.len() != n || self.m.len() != n {
            return Err(ModelError::ShapeMismatch(format!(
                "params {n}, gradients {}, moments {}",
                grads.data.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let lr = T::from_f64_lossy(c.lr);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let eps = T::from_f64_lossy(c.eps);
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let wd = T::from_f64_lossy(c.lr * c.weight_decay);
        let one = T::one();

        let mut decay = vec![false; n];
        for r in decayed_ranges(&params.layout) {
            decay[r].fill(true);
        }
        let all = [0..n];
        let ranges = trainable.unwrap_or(&all);
        let mut scale = one;
        if let Some(max) = c.max_grad_norm {
            let norm = ranges.iter().flat_map(|r| &grads.data[r.clone()]).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
            if norm > max {
                scale = T::from_f64_lossy(max / norm);
            }
        }
        for r in ranges {
            for i in r.clone() {
                let g = grads.data[i] * scale;
                self.m[i] = b1 * self.m[i] + (one - b1) * g;
                self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                let mut p = params.data[i];
                if decay[i] && c.weight_decay > 0.0 {
                    p = p - wd * p;
                }
                params.data[i] = p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = ModelConfig::desk(9);
        let mut p = ModelParams::<f64>::init(&cfg).unwrap();
        let before = p.data.clone();
        let g: Vec<f64> = (0..p.data.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
        let mut opt = OptimizerState::new(AdamWConfig::new(1e-3), p.data.len()).unwrap();
        opt.apply(&mut p, &Gradients { data: g.clone() }, None).unwrap();
        for i in 0..p.data.len() {
            let delta = p.data[i] - before[i];
            // bias-corrected first step: mhat/sqrt(vhat) = sign(g)
            assert!((delta + 1e-3 * g[i].signum()).abs() < 1e-9, "{i}: {delta}");
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let cfg = ModelConfig::desk(9);
        let mut p = ModelParams::<f32>::init(&cfg).unwrap();
        let before = p.data.clone();
        let mut c = AdamWConfig::new(0.0);
        c.weight_decay = 0.01;
        let mut opt = OptimizerState::new(c, p.data.len()).unwrap();
        let g = Gradients { data: vec![1.0; p.data.len()] };
        opt.apply(&mut p, &g, None).unwrap();
        assert_eq!(p.data, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn weight_decay_skips_biases_and_norms() {
        let cfg = ModelConfig::desk(9);
        let mut p = ModelParams::<f64>::init(&cfg).unwrap();
        let before = p.clone();
        let mut c = AdamWConfig::new(0.1);
        c.weight_decay = 0.5;
        let mut opt = OptimizerState::new(c, p.data.len()).unwrap();
        let g = Gradients { data: vec![0.0; p.data.len()] };
        opt.apply(&mut p, &g, None).unwrap();
        let scale = p.tensor("layer0.attention.norm.scale").unwrap();
        assert!(scale.iter().all(|&x| x == 1.0));
        let w = p.tensor("layer0.ffn.in.weight").unwrap();
        let w0 = before.tensor("layer0.ffn.in.weight").unwrap();
        for (a, b) in w.iter().zip(w0) {
            assert!((a - b * 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_ranges_do_not_move() {
        let cfg = ModelConfig::desk(9);
        let mut p = ModelParams::<f32>::init(&cfg).unwrap();
        let before = p.data.clone();
        let head = p.layout.head_ranges();
        let mut opt = OptimizerState::new(AdamWConfig::new(0.01), p.data.len()).unwrap();
        let g = Gradients { data: vec![1.0; p.data.len()] };
        opt.apply(&mut p, &g, Some(&head)).unwrap();
        let start = p.layout.cls_w.start;
        assert_eq!(p.data[..start], before[..start]);
        assert!(p.data[start..].iter().zip(&before[start..]).all(|(a, b)| a != b));
    }

    #[test]
    fn clipping_rescales_to_the_norm_bound() {
        let cfg = ModelConfig::desk(9);
        let mut p = ModelParams::<f64>::init(&cfg).unwrap();
        let n = p.data.len();
        let g = Gradients { data: vec![3.0; n] };
        let norm = 3.0 * (n as f64).sqrt();
        let mut c = AdamWConfig::new(1e-3);
        c.max_grad_norm = Some(0.5);
        let mut opt = OptimizerState::new(c.clone(), n).unwrap();
        opt.apply(&mut p, &g, None).unwrap();
        let clipped = 3.0 * 0.5 / norm;
        assert!(opt.m.iter().all(|&m| (m - 0.1 * clipped).abs() < 1e-15));

        c.max_grad_norm = Some(2.0 * norm);
        let mut opt = OptimizerState::new(c, n).unwrap();
        opt.apply(&mut p, &g, None).unwrap();
        assert!(opt.m.iter().all(|&m| (m - 0.3).abs() < 1e-15));
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let mut c = AdamWConfig::new(1e-3);
        c.beta2 = 1.0;
        assert!(OptimizerState::<f32>::new(c.clone(), 4).is_err());
        c.beta2 = 0.999;
        c.max_grad_norm = Some(0.0);
        assert!(OptimizerState::<f32>::new(c, 4).is_err());
    }
}
