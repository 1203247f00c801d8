use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax_masks, batch_tensor, forward, logits, ArchitectureConfig};
use crate::autodiff::{Graph, ModelParams, RmspropConfig, RmspropState, Var};
use crate::metrics::{average_metrics, ConfusionMatrix, MetricsReport};
use crate::rng::{rng_for, tag};
use crate::signalgen::Sample;
use crate::{Error, Result, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RmspropConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Compute validation mean IoU after every epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 8, optimizer: RmspropConfig::default(), seed: 0, validate: true }
    }
}

impl TrainConfig {
    pub fn validate_config(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.optimizer.learning_rate >= 0.0) || !(self.optimizer.rho >= 0.0 && self.optimizer.rho < 1.0) {
            return Err(Error::Config(format!("invalid optimizer settings {:?}", self.optimizer)));
        }
        Ok(())
    }
}

/// Loss components of one batch or the mean over an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub parts: LossParts,
    pub val_mean_iou: Option<f64>,
}

/// Builds a scalar training loss from the logits of a batch.
/// `batch` holds the training-set indices of the batch samples.
pub trait Objective: Sync {
    fn loss(&self, g: &mut Graph<f32>, logits: Var, batch: &[usize], labels: &[u8]) -> Result<(Var, LossParts)>;
}

/// Class-weighted cross-entropy on `softmax(logits)`.
#[derive(Debug, Clone)]
pub struct CrossEntropyObjective {
    pub weights: [f64; NUM_CLASSES],
}

impl Objective for CrossEntropyObjective {
    fn loss(&self, g: &mut Graph<f32>, logits: Var, _batch: &[usize], labels: &[u8]) -> Result<(Var, LossParts)> {
        let probs = g.softmax_over_classes(logits)?;
        let ce = g.weighted_cross_entropy(probs, labels, &self.weights)?;
        let v = g.value(ce).item()? as f64;
        Ok((ce, LossParts { ce: v, kl: 0.0, total: v }))
    }
}

/// Mini-batch RMSProp over `train`, reshuffled every epoch.
pub fn fit(
    mut params: ModelParams,
    arch: &ArchitectureConfig,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    objective: &dyn Objective,
) -> Result<(ModelParams, Vec<EpochReport>)> {
    cfg.validate_config()?;
    arch.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut opt = RmspropState::new(cfg.optimizer, &params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, &[tag("shuffle"), epoch as u64]));
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<_> = idx.iter().map(|&i| &train[i].spectrogram).collect();
            let labels: Vec<u8> = idx.iter().flat_map(|&i| train[i].labels.labels.iter().copied()).collect();
            let mut g = Graph::new();
            let vars = params.bind(&mut g, true);
            let x = g.leaf(batch_tensor(&images)?, false);
            let z = logits(&mut g, arch, &vars, x)?;
            let (loss, parts) = objective.loss(&mut g, z, idx, &labels)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            g.backward(loss)?;
            let grads: Vec<_> = vars.iter().map(|&v| g.grad(v).expect("parameter leaves track gradients")).collect();
            opt.step(&mut params, &grads)?;
            sum.ce += parts.ce;
            sum.kl += parts.kl;
            sum.total += parts.total;
            batches += 1;
        }
        let n = batches as f64;
        let parts = LossParts { ce: sum.ce / n, kl: sum.kl / n, total: sum.total / n };
        let val_mean_iou = if cfg.validate && !val.is_empty() {
            Some(evaluate(&params, arch, val)?.mean_iou())
        } else {
            None
        };
        log::info!("epoch {epoch}: loss {:.5} val mIoU {:?}", parts.total, val_mean_iou);
        reports.push(EpochReport { epoch, mean_loss: parts.total, parts, val_mean_iou });
    }
    Ok((params, reports))
}

/// Trains with class-weighted cross-entropy.
pub fn train(
    params: ModelParams,
    arch: &ArchitectureConfig,
    train: &[Sample],
    val: &[Sample],
    weights: [f64; NUM_CLASSES],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochReport>)> {
    fit(params, arch, train, val, cfg, &CrossEntropyObjective { weights })
}

const EVAL_BATCH: usize = 16;

/// Pixel confusion of argmax predictions against ground truth.
pub fn evaluate(params: &ModelParams, arch: &ArchitectureConfig, samples: &[Sample]) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(arch.num_classes);
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| &s.spectrogram).collect();
        let masks = argmax_masks(&forward(params, arch, &batch_tensor(&images)?)?)?;
        for (s, m) in chunk.iter().zip(&masks) {
            cm.accumulate(&s.labels.labels, &m.labels)?;
        }
    }
    Ok(average_metrics(&cm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmodel::build_model;
    use crate::signalgen::{LabelMask, Spectrogram};

    fn toy_samples() -> Vec<Sample> {
        // Bright left half is class 1, dim right half class 2, dark band class 0.
        (0..4)
            .map(|i| {
                let (h, w) = (8, 8);
                let mut px = vec![0.0f32; h * w];
                let mut lab = vec![0u8; h * w];
                for r in 0..h {
                    for c in 0..w {
                        let p = r * w + c;
                        if r < 6 && c < 4 {
                            px[p] = 0.9;
                            lab[p] = 1;
                        } else if r < 6 {
                            px[p] = 0.5 + 0.01 * i as f32;
                            lab[p] = 2;
                        } else {
                            px[p] = 0.05;
                        }
                    }
                }
                Sample {
                    spectrogram: Spectrogram::new(1, h, w, px).unwrap(),
                    labels: LabelMask::new(h, w, lab).unwrap(),
                }
            })
            .collect()
    }

    fn tiny() -> ArchitectureConfig {
        ArchitectureConfig { in_channels: 1, base_width: 4, depth: 1, num_classes: 3 }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let arch = tiny();
        let p0 = build_model(&arch, &mut rng_for(1, &[])).unwrap();
        let mut cfg = TrainConfig { epochs: 2, batch_size: 2, ..Default::default() };
        cfg.optimizer.learning_rate = 0.0;
        let data = toy_samples();
        let (p1, reports) = train(p0.clone(), &arch, &data, &data, [1.0; 3], &cfg).unwrap();
        assert_eq!(p0, p1);
        assert_eq!(reports.len(), 2);
        assert!(reports[0].val_mean_iou.is_some());
    }

    #[test]
    fn overfits_a_tiny_set() {
        let arch = tiny();
        let p0 = build_model(&arch, &mut rng_for(5, &[])).unwrap();
        let mut cfg = TrainConfig { epochs: 200, batch_size: 4, validate: false, ..Default::default() };
        cfg.optimizer.learning_rate = 1e-2;
        let data = toy_samples();
        let (p, reports) = train(p0, &arch, &data, &[], [1.0; 3], &cfg).unwrap();
        let last = reports.last().unwrap().mean_loss;
        assert!(last < 0.05, "final loss {last}");
        assert!(reports[0].mean_loss > last);
        assert!(evaluate(&p, &arch, &data).unwrap().global_accuracy > 0.99);
    }

    #[test]
    fn training_is_deterministic() {
        let arch = tiny();
        let cfg = TrainConfig { epochs: 3, batch_size: 3, validate: false, ..Default::default() };
        let data = toy_samples();
        let run = || {
            let p0 = build_model(&arch, &mut rng_for(5, &[])).unwrap();
            train(p0, &arch, &data, &[], [1.0, 2.0, 0.5], &cfg).unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(ra, rb);
    }

    #[test]
    fn rejects_bad_config() {
        let arch = tiny();
        let p0 = build_model(&arch, &mut rng_for(5, &[])).unwrap();
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(train(p0.clone(), &arch, &toy_samples(), &[], [1.0; 3], &cfg).is_err());
        assert!(train(p0, &arch, &[], &[], [1.0; 3], &TrainConfig::default()).is_err());
    }
}
