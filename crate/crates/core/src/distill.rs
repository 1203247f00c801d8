//! Defensive distillation.
//!
//! The teacher is trained with weighted CE. The student minimizes
//! `CE(softmax(z_s/T), y) + λ·KL(softmax(z_s/T) ‖ softmax(z_t/T))` and is
//! deployed at `T = 1`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, ModelParams, Tensor, Var};
use crate::rng::{rng_for, tag};
use crate::segmodel::{
    self, batch_tensor, build_model, forward_logits, ArchitectureConfig, EpochReport, LossParts, Objective, TrainConfig,
};
use crate::signalgen::Sample;
use crate::{Error, Result, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub lambda: f64,
    pub temperature: f64,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    /// Start the student from the teacher's weights instead of a fresh draw.
    pub init_from_teacher: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 20.0,
            arch: ArchitectureConfig::default(),
            train: TrainConfig::default(),
            init_from_teacher: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        self.arch.validate()?;
        self.train.validate_config()
    }
}

/// Fresh He-initialized parameters for a training run seeded by `seed`.
pub fn init_params(arch: &ArchitectureConfig, seed: u64, role: &str) -> Result<ModelParams> {
    build_model(arch, &mut rng_for(seed, &[tag("init"), tag(role)]))
}

/// Trains the teacher with weighted cross-entropy.
pub fn train_teacher(
    arch: &ArchitectureConfig,
    train: &[Sample],
    val: &[Sample],
    weights: [f64; NUM_CLASSES],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochReport>)> {
    let params = init_params(arch, cfg.seed, "teacher")?;
    segmodel::train(params, arch, train, val, weights, cfg)
}

/// `softmax(z/T)` over the class axis of `[N, K, H, W]` logits.
pub fn soften(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f32> = logits.data().iter().map(|&z| (z as f64 / temperature) as f32).collect();
    Tensor::new(logits.shape().to_vec(), kernels::softmax_forward(logits.shape(), &scaled)?)
}

/// Teacher class maps softened by `temperature`. No gradients are tracked.
pub fn soft_targets(teacher: &ModelParams, arch: &ArchitectureConfig, x: &Tensor, temperature: f64) -> Result<Tensor> {
    soften(&forward_logits(teacher, arch, x)?, temperature)
}

const TARGET_BATCH: usize = 16;

struct DistillObjective {
    weights: [f64; NUM_CLASSES],
    lambda: f64,
    temperature: f64,
    /// Soft targets per training sample, `K·H·W` each.
    targets: Vec<Vec<f32>>,
}

impl Objective for DistillObjective {
    fn loss(&self, g: &mut Graph<f32>, logits: Var, batch: &[usize], labels: &[u8]) -> Result<(Var, LossParts)> {
        let shape = g.value(logits).shape().to_vec();
        let scaled = g.scale(logits, 1.0 / self.temperature);
        let s = g.softmax_over_classes(scaled)?;
        let ce = g.weighted_cross_entropy(s, labels, &self.weights)?;
        let t = Tensor::new(shape, batch.iter().flat_map(|&i| self.targets[i].iter().copied()).collect())?;
        let t = g.leaf(t, false);
        let kl = g.kl_divergence(s, t)?;
        let weighted_kl = g.scale(kl, self.lambda);
        let total = g.add(ce, weighted_kl)?;
        let ce_v = g.value(ce).item()? as f64;
        let kl_v = g.value(kl).item()? as f64;
        Ok((total, LossParts { ce: ce_v, kl: kl_v, total: ce_v + self.lambda * kl_v }))
    }
}

/// Trains a student against hard labels and softened teacher outputs.
/// The teacher is only read.
pub fn distill_student(
    teacher: &ModelParams,
    teacher_arch: &ArchitectureConfig,
    train: &[Sample],
    val: &[Sample],
    weights: [f64; NUM_CLASSES],
    cfg: &DistillConfig,
) -> Result<(ModelParams, Vec<EpochReport>)> {
    cfg.validate()?;
    let mut targets = Vec::with_capacity(train.len());
    for chunk in train.chunks(TARGET_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| &s.spectrogram).collect();
        let soft = soft_targets(teacher, teacher_arch, &batch_tensor(&images)?, cfg.temperature)?;
        let per = soft.len() / chunk.len();
        targets.extend(soft.data().chunks(per).map(<[f32]>::to_vec));
    }
    let student = if cfg.init_from_teacher {
        if cfg.arch != *teacher_arch {
            return Err(Error::Config("init_from_teacher needs the student architecture to equal the teacher's".into()));
        }
        teacher.clone()
    } else {
        init_params(&cfg.arch, cfg.train.seed, "student")?
    };
    let objective = DistillObjective { weights, lambda: cfg.lambda, temperature: cfg.temperature, targets };
    segmodel::fit(student, &cfg.arch, train, val, &cfg.train, &objective)
}
