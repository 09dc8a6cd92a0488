use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    backward, predict_classes, AdamWConfig, BackwardOptions, Batch, ClsExample, MlmExample, ModelError, ModelParams,
    OptimizerState, Scalar,
};
use crate::analysis::multiclass_mcc;
use crate::rng::{domain, RngKey};

/// One optimizer step on a masked-language-model batch. Returns the batch
/// loss measured before the update.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut OptimizerState<T>,
    batch: &[MlmExample],
    dropout: Option<RngKey>,
) -> Result<T, ModelError> {
    let (loss, grads) = backward(params, Batch::Mlm(batch), BackwardOptions { dropout, head_only: false })?;
    let step = opt.step + 1;
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { step, loss: loss.as_f64() });
    }
    opt.apply(params, &grads, None)?;
    if !params.is_finite() {
        return Err(ModelError::NonFiniteParams { step });
    }
    Ok(loss)
}

/// Sequence-classification fine-tuning settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Train only the classification head.
    pub freeze_backbone: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 3,
            lr: 3e-5,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            freeze_backbone: false,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            max_grad_norm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// MCC on the evaluation set after the epoch.
    pub mcc: f64,
    pub accuracy: f64,
}

/// Cross-entropy fine-tuning on the `[CLS]` representation. Evaluates on
/// `eval` after every epoch, or on `train` when `eval` is empty.
pub fn finetune_classify<T: Scalar>(
    params: &mut ModelParams<T>,
    train: &[ClsExample],
    eval: &[ClsExample],
    cfg: &FinetuneConfig,
) -> Result<Vec<EpochMetrics>, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::ConfigInvalid("finetune batch_size must be >= 1".into()));
    }
    let mut opt = OptimizerState::new(cfg.optimizer(), params.data.len())?;
    let head = params.layout.head_ranges();
    let trainable = cfg.freeze_backbone.then_some(head.as_slice());
    let eval = if eval.is_empty() { train } else { eval };
    let eval_labels: Vec<usize> = eval.iter().map(|e| e.label).collect();
    let root = RngKey::new(cfg.seed).fork(domain::FINETUNE);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut root.fork2(epoch as u64, 0).rng());
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<ClsExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let opts = BackwardOptions {
                dropout: Some(root.fork3(domain::DROPOUT, epoch as u64, b as u64)),
                head_only: cfg.freeze_backbone,
            };
            let (loss, grads) = backward(params, Batch::Classify(&batch), opts)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { step: opt.step + 1, loss: loss.as_f64() });
            }
            loss_sum += loss.as_f64() * batch.len() as f64;
            opt.apply(params, &grads, trainable)?;
            if !params.is_finite() {
                return Err(ModelError::NonFiniteParams { step: opt.step });
            }
        }
        let preds = predict_classes(params, eval)?;
        let correct = preds.iter().zip(&eval_labels).filter(|(p, l)| p == l).count();
        let mcc = multiclass_mcc(&eval_labels, &preds).expect("equal lengths");
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / train.len() as f64,
            mcc,
            accuracy: correct as f64 / eval.len() as f64,
        });
    }
    Ok(metrics)
}
