//! FGSM, BIM and PGD against the segmentation network.
//!
//! All three share one projected sign step:
//! `x ← clip(x + α·sign(∇ₓJ), [x₀−ε, x₀+ε] ∩ [0, 1])`.
//! FGSM is a single step with `α = ε` from `x₀`; BIM iterates from `x₀`;
//! PGD iterates from a uniform random point of the ε-ball.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ModelParams, Real, Tensor};
use crate::rng::rng_for;
use crate::segmodel::{logits, ArchitectureConfig};
use crate::signalgen::{LabelMask, Spectrogram};
use crate::{Error, Result, NUM_CLASSES};

/// Slack on the ℓ∞ check of every returned example.
pub const LINF_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Fgsm, AttackKind::Bim, AttackKind::Pgd];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "FGSM",
            AttackKind::Bim => "BIM",
            AttackKind::Pgd => "PGD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// ε in 0–255 pixel units.
    pub epsilon_raw: u32,
    /// Step size in 0–255 pixel units; FGSM ignores it and steps by ε.
    pub alpha_raw: u32,
    pub max_iters: usize,
    /// Seeds the PGD start point.
    pub seed: u64,
    /// PGD only: start from a random point of the ball (otherwise from `x₀`).
    pub random_init: bool,
    /// Class weights for the attack loss; `None` is plain mean CE.
    pub class_weights: Option<[f64; NUM_CLASSES]>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon_raw: 13,
            alpha_raw: 1,
            max_iters: 50,
            seed: 0,
            random_init: true,
            class_weights: None,
        }
    }
}

impl AttackConfig {
    pub fn epsilon(&self) -> f32 {
        self.epsilon_raw as f32 / 255.0
    }

    pub fn alpha(&self) -> f32 {
        self.alpha_raw as f32 / 255.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_raw > 255 {
            return Err(Error::Config(format!("epsilon_raw {} exceeds 255", self.epsilon_raw)));
        }
        if self.kind != AttackKind::Fgsm {
            if self.alpha_raw > self.epsilon_raw {
                return Err(Error::Config(format!(
                    "alpha_raw {} exceeds epsilon_raw {}",
                    self.alpha_raw, self.epsilon_raw
                )));
            }
            if self.max_iters == 0 {
                return Err(Error::Config("max_iters must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialResult {
    pub x_adv: Spectrogram,
    /// `‖x_adv − x₀‖∞`.
    pub linf: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub iterations: usize,
}

/// Mean pixel CE of the network on `x` (`[N, C, H, W]`) against `labels`,
/// and its gradient with respect to `x`. Parameter gradients are not formed.
pub fn attack_loss<F: Real>(
    params: &ModelParams<F>,
    arch: &ArchitectureConfig,
    x: &Tensor<F>,
    labels: &[u8],
    class_weights: Option<&[f64; NUM_CLASSES]>,
) -> Result<(f64, Tensor<F>)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let input = g.leaf(x.clone(), true);
    let z = logits(&mut g, arch, &vars, input)?;
    let probs = g.softmax_over_classes(z)?;
    let weights = class_weights.copied().unwrap_or([1.0; NUM_CLASSES]);
    let loss = g.weighted_cross_entropy(probs, labels, &weights)?;
    g.backward(loss)?;
    let value = g.value(loss).item()?.f64();
    Ok((value, g.grad(input).expect("input leaf tracks its gradient")))
}

fn loss_only(params: &ModelParams, arch: &ArchitectureConfig, x: &Tensor, labels: &[u8], cfg: &AttackConfig) -> Result<f64> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let input = g.leaf(x.clone(), false);
    let z = logits(&mut g, arch, &vars, input)?;
    let probs = g.softmax_over_classes(z)?;
    let weights = cfg.class_weights.unwrap_or([1.0; NUM_CLASSES]);
    let loss = g.weighted_cross_entropy(probs, labels, &weights)?;
    Ok(g.value(loss).item()?.f64())
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One signed step of size `alpha`, projected onto the ε-ball around `x0`
/// intersected with `[0, 1]`.
fn projected_step(x: &mut [f32], x0: &[f32], grad: &[f32], alpha: f32, eps: f32) {
    for ((xi, &oi), &gi) in x.iter_mut().zip(x0).zip(grad) {
        let lo = (oi - eps).max(0.0);
        let hi = (oi + eps).min(1.0);
        *xi = (*xi + alpha * sign(gi)).clamp(lo, hi);
    }
}

fn linf(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}

fn check_inputs(x0: &Spectrogram, y0: &LabelMask) -> Result<()> {
    if (x0.h, x0.w) != (y0.h, y0.w) {
        return Err(Error::Shape(format!("image {}x{} with mask {}x{}", x0.h, x0.w, y0.h, y0.w)));
    }
    if x0.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput("attack input outside [0, 1]".into()));
    }
    Ok(())
}

/// Runs `steps` projected steps from `start`.
fn run(
    params: &ModelParams,
    arch: &ArchitectureConfig,
    x0: &Spectrogram,
    y0: &LabelMask,
    cfg: &AttackConfig,
    start: Vec<f32>,
    alpha: f32,
    steps: usize,
) -> Result<AdversarialResult> {
    check_inputs(x0, y0)?;
    let shape = vec![1, x0.c, x0.h, x0.w];
    let eps = cfg.epsilon();
    let mut x = start;
    let mut loss_before = None;
    for _ in 0..steps {
        let t = Tensor::new(shape.clone(), x)?;
        let (loss, grad) = attack_loss(params, arch, &t, &y0.labels, cfg.class_weights.as_ref())?;
        loss_before.get_or_insert(loss);
        x = t.into_data();
        projected_step(&mut x, &x0.pixels, grad.data(), alpha, eps);
    }
    let loss_after = loss_only(params, arch, &Tensor::new(shape.clone(), x.clone())?, &y0.labels, cfg)?;
    let loss_before = match loss_before {
        Some(l) => l,
        None => loss_after,
    };
    let dist = linf(&x, &x0.pixels);
    assert!(dist <= eps as f64 + LINF_TOLERANCE, "adversarial example leaves the ε-ball: {dist} > {eps}");
    assert!(x.iter().all(|p| (0.0..=1.0).contains(p)), "adversarial example leaves [0, 1]");
    Ok(AdversarialResult {
        x_adv: Spectrogram::new(x0.c, x0.h, x0.w, x)?,
        linf: dist,
        loss_before,
        loss_after,
        iterations: steps,
    })
}

/// `clip(x₀ + ε·sign(∇ₓJ), [0, 1])`.
pub fn fgsm(params: &ModelParams, arch: &ArchitectureConfig, x0: &Spectrogram, y0: &LabelMask, cfg: &AttackConfig) -> Result<AdversarialResult> {
    cfg.validate()?;
    run(params, arch, x0, y0, cfg, x0.pixels.clone(), cfg.epsilon(), 1)
}

/// `max_iters` projected steps of size α from `x₀`.
pub fn bim(params: &ModelParams, arch: &ArchitectureConfig, x0: &Spectrogram, y0: &LabelMask, cfg: &AttackConfig) -> Result<AdversarialResult> {
    cfg.validate()?;
    run(params, arch, x0, y0, cfg, x0.pixels.clone(), cfg.alpha(), cfg.max_iters)
}

/// BIM from `clip(x₀ + U(−ε, ε), [0, 1])`.
pub fn pgd(params: &ModelParams, arch: &ArchitectureConfig, x0: &Spectrogram, y0: &LabelMask, cfg: &AttackConfig) -> Result<AdversarialResult> {
    cfg.validate()?;
    let eps = cfg.epsilon();
    let start = if cfg.random_init && eps > 0.0 {
        let mut rng = rng_for(cfg.seed, &[]);
        x0.pixels
            .iter()
            .map(|&p| {
                let lo = (p - eps).max(0.0);
                let hi = (p + eps).min(1.0);
                (p + rng.random_range(-eps..=eps)).clamp(lo, hi)
            })
            .collect()
    } else {
        x0.pixels.clone()
    };
    run(params, arch, x0, y0, cfg, start, cfg.alpha(), cfg.max_iters)
}

/// Dispatches on `cfg.kind`.
pub fn attack(params: &ModelParams, arch: &ArchitectureConfig, x0: &Spectrogram, y0: &LabelMask, cfg: &AttackConfig) -> Result<AdversarialResult> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(params, arch, x0, y0, cfg),
        AttackKind::Bim => bim(params, arch, x0, y0, cfg),
        AttackKind::Pgd => pgd(params, arch, x0, y0, cfg),
    }
}
