//! U-shaped encoder–decoder producing per-pixel class probabilities.
//!
//! Encoder stage `s` (width `base·2^s`): two 3×3 convolutions with ReLU,
//! then 2×2 max pooling. A bottleneck of the same form runs at
//! `base·2^depth`. Decoder stage `s` upsamples by 2 (nearest), concatenates
//! the encoder skip of stage `s` and applies two 3×3 convolutions with
//! ReLU. A 1×1 convolution maps to class logits.

mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ModelParams, Real, Tensor, Var};
use crate::signalgen::{LabelMask, Spectrogram};
use crate::{Error, Result, NUM_CLASSES};

pub use train::{evaluate, fit, train, CrossEntropyObjective, EpochReport, LossParts, Objective, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub num_classes: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self { in_channels: 1, base_width: 16, depth: 3, num_classes: NUM_CLASSES }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Image sides must be divisible by `2^depth`.
    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.depth;
        if c != self.in_channels {
            return Err(Error::Shape(format!("model expects {} input channels, got {c}", self.in_channels)));
        }
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("image {h}x{w} not divisible by 2^{} = {m}", self.depth)));
        }
        Ok(())
    }

    /// Recovers the architecture from checkpoint tensor names and shapes.
    pub fn infer(params: &ModelParams) -> Result<Self> {
        let bad = || Error::InvalidInput("checkpoint does not hold an encoder-decoder of this crate".into());
        let depth = (0..).take_while(|s| params.get(&format!("enc{s}.conv1.weight")).is_some()).count();
        let first = params.get("enc0.conv1.weight").ok_or_else(bad)?.shape();
        let head = params.get("head.weight").ok_or_else(bad)?.shape();
        let arch = Self { in_channels: first[1], base_width: first[0], depth, num_classes: head[0] };
        arch.validate()?;
        let expected = arch.layers();
        if params.len() != 2 * expected.len() {
            return Err(bad());
        }
        for (name, cout, cin, k) in expected {
            if params.get(&format!("{name}.weight")).map(|t| t.shape()) != Some(&[cout, cin, k, k][..]) {
                return Err(bad());
            }
        }
        Ok(arch)
    }

    /// `(name, out, in, kernel)` of every convolution, in parameter order.
    fn layers(&self) -> Vec<(String, usize, usize, usize)> {
        let mut layers = Vec::new();
        let mut cin = self.in_channels;
        for s in 0..self.depth {
            layers.push((format!("enc{s}.conv1"), self.width(s), cin, 3));
            layers.push((format!("enc{s}.conv2"), self.width(s), self.width(s), 3));
            cin = self.width(s);
        }
        let wb = self.width(self.depth);
        layers.push(("bottleneck.conv1".into(), wb, cin, 3));
        layers.push(("bottleneck.conv2".into(), wb, wb, 3));
        let mut below = wb;
        for s in (0..self.depth).rev() {
            layers.push((format!("dec{s}.conv1"), self.width(s), below + self.width(s), 3));
            layers.push((format!("dec{s}.conv2"), self.width(s), self.width(s), 3));
            below = self.width(s);
        }
        layers.push(("head".into(), self.num_classes, below, 1));
        layers
    }
}

/// He-initialized weights (`N(0, 2/fan_in)`) and zero biases.
pub fn build_model<R: Rng + ?Sized>(arch: &ArchitectureConfig, rng: &mut R) -> Result<ModelParams> {
    arch.validate()?;
    let mut params = ModelParams::new();
    for (name, cout, cin, k) in arch.layers() {
        let fan_in = cin * k * k;
        let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let w = Tensor::from_fn(vec![cout, cin, k, k], |_| normal.sample(rng) as f32);
        params.push(format!("{name}.weight"), w)?;
        params.push(format!("{name}.bias"), Tensor::zeros(vec![cout]))?;
    }
    Ok(params)
}

struct Cursor<'a> {
    vars: &'a [Var],
    next: usize,
}

impl Cursor<'_> {
    fn conv(&mut self) -> (Var, Var) {
        let pair = (self.vars[self.next], self.vars[self.next + 1]);
        self.next += 2;
        pair
    }
}

fn conv_relu<F: Real>(g: &mut Graph<F>, cur: &mut Cursor, x: Var) -> Result<Var> {
    let (w, b) = cur.conv();
    let y = g.conv2d(x, w, Some(b), 1, 1)?;
    Ok(g.relu(y))
}

/// Records the network on `g` and returns the logits node `[N, K, H, W]`.
/// `params` are the bound parameter leaves in [`build_model`] order.
pub fn logits<F: Real>(g: &mut Graph<F>, arch: &ArchitectureConfig, params: &[Var], x: Var) -> Result<Var> {
    let expected = 2 * (2 * arch.depth + 2 + 2 * arch.depth + 1);
    if params.len() != expected {
        return Err(Error::Shape(format!("{} parameter tensors bound, architecture needs {expected}", params.len())));
    }
    let (_, c, h, w) = g.value(x).dims4()?;
    arch.check_input(c, h, w)?;
    let mut cur = Cursor { vars: params, next: 0 };
    let mut skips = Vec::with_capacity(arch.depth);
    let mut y = x;
    for _ in 0..arch.depth {
        y = conv_relu(g, &mut cur, y)?;
        y = conv_relu(g, &mut cur, y)?;
        skips.push(y);
        y = g.maxpool2d(y, 2)?;
    }
    y = conv_relu(g, &mut cur, y)?;
    y = conv_relu(g, &mut cur, y)?;
    for skip in skips.into_iter().rev() {
        y = g.upsample_nearest(y, 2)?;
        y = g.concat_channels(y, skip)?;
        y = conv_relu(g, &mut cur, y)?;
        y = conv_relu(g, &mut cur, y)?;
    }
    let (w, b) = cur.conv();
    g.conv2d(y, w, Some(b), 1, 0)
}

/// Stacks spectrograms into an `[N, C, H, W]` tensor.
pub fn batch_tensor(images: &[&Spectrogram]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Shape("empty batch".into()));
    };
    let mut data = Vec::with_capacity(images.len() * first.pixels.len());
    for s in images {
        if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
            return Err(Error::Shape("spectrograms of different sizes in one batch".into()));
        }
        data.extend_from_slice(&s.pixels);
    }
    Tensor::new(vec![images.len(), first.c, first.h, first.w], data)
}

/// Pre-softmax class maps, without gradient tracking.
pub fn forward_logits(params: &ModelParams, arch: &ArchitectureConfig, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let input = g.leaf(x.clone(), false);
    let out = logits(&mut g, arch, &vars, input)?;
    Ok(g.value(out).clone())
}

/// Softmax-normalized class maps `[N, K, H, W]`.
pub fn forward(params: &ModelParams, arch: &ArchitectureConfig, x: &Tensor) -> Result<Tensor> {
    let z = forward_logits(params, arch, x)?;
    let probs = crate::autodiff::kernels::softmax_forward(z.shape(), z.data())?;
    Tensor::new(z.shape().to_vec(), probs)
}

/// Per-pixel argmax of `[N, K, H, W]` scores; ties go to the lower class.
pub fn argmax_masks<F: Real>(scores: &Tensor<F>) -> Result<Vec<LabelMask>> {
    let (n, k, h, w) = scores.dims4()?;
    let d = scores.data();
    Ok((0..n)
        .map(|s| {
            let labels = (0..h * w)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..k {
                        if d[(s * k + c) * h * w + p] > d[(s * k + best) * h * w + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMask { h, w, labels }
        })
        .collect())
}

pub fn predict_mask(params: &ModelParams, arch: &ArchitectureConfig, x: &Tensor) -> Result<Vec<LabelMask>> {
    argmax_masks(&forward(params, arch, x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    /// Closed-form parameter count, written independently of `layers()`.
    fn expected_params(cin: usize, base: usize, depth: usize, k: usize) -> usize {
        let conv = |i: usize, o: usize, ks: usize| o * i * ks * ks + o;
        let mut total = 0;
        let mut prev = cin;
        for s in 0..depth {
            let w = base * 2usize.pow(s as u32);
            total += conv(prev, w, 3) + conv(w, w, 3);
            prev = w;
        }
        let wb = base * 2usize.pow(depth as u32);
        total += conv(prev, wb, 3) + conv(wb, wb, 3);
        let mut below = wb;
        for s in (0..depth).rev() {
            let w = base * 2usize.pow(s as u32);
            total += conv(below + w, w, 3) + conv(w, w, 3);
            below = w;
        }
        total + conv(base, k, 1)
    }

    #[test]
    fn parameter_count_closed_form() {
        let arch = ArchitectureConfig { in_channels: 1, base_width: 4, depth: 1, num_classes: 3 };
        let p = build_model(&arch, &mut rng_for(1, &[])).unwrap();
        assert_eq!(p.scalar_count(), 1667);
        assert_eq!(p.scalar_count(), expected_params(1, 4, 1, 3));
        for (cin, base, depth) in [(1, 8, 3), (3, 16, 3), (1, 2, 2)] {
            let arch = ArchitectureConfig { in_channels: cin, base_width: base, depth, num_classes: 3 };
            let p = build_model(&arch, &mut rng_for(1, &[])).unwrap();
            assert_eq!(p.scalar_count(), expected_params(cin, base, depth, 3));
        }
    }

    #[test]
    fn output_shape_and_simplex() {
        let arch = ArchitectureConfig { in_channels: 1, base_width: 4, depth: 2, num_classes: 3 };
        let p = build_model(&arch, &mut rng_for(2, &[])).unwrap();
        let mut rng = rng_for(3, &[]);
        let x = Tensor::from_fn(vec![2, 1, 16, 8], |_| rng.random::<f32>());
        let probs = forward(&p, &arch, &x).unwrap();
        assert_eq!(probs.shape(), &[2, 3, 16, 8]);
        for s in 0..2 {
            for px in 0..128 {
                let sum: f64 = (0..3).map(|c| probs.data()[(s * 3 + c) * 128 + px] as f64).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
        // Rejects indivisible sizes and wrong channel counts.
        assert!(forward(&p, &arch, &Tensor::zeros(vec![1, 1, 10, 8])).is_err());
        assert!(forward(&p, &arch, &Tensor::zeros(vec![1, 2, 8, 8])).is_err());
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let arch = ArchitectureConfig { in_channels: 1, base_width: 4, depth: 2, num_classes: 3 };
        let p = build_model(&arch, &mut rng_for(2, &[])).unwrap();
        let mut rng = rng_for(4, &[]);
        let one: Vec<f32> = (0..64).map(|_| rng.random()).collect();
        let x = Tensor::new(vec![2, 1, 8, 8], [one.clone(), one].concat()).unwrap();
        let probs = forward(&p, &arch, &x).unwrap();
        assert_eq!(probs.sample(0), probs.sample(1));
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let arch = ArchitectureConfig::default();
        let a = build_model(&arch, &mut rng_for(9, &[])).unwrap();
        let b = build_model(&arch, &mut rng_for(9, &[])).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = build_model(&arch, &mut rng_for(10, &[])).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn architecture_is_recovered_from_checkpoint() {
        for arch in [ArchitectureConfig::default(), ArchitectureConfig { in_channels: 3, base_width: 4, depth: 1, num_classes: 3 }] {
            let p = build_model(&arch, &mut rng_for(1, &[])).unwrap();
            assert_eq!(ArchitectureConfig::infer(&p).unwrap(), arch);
        }
        assert!(ArchitectureConfig::infer(&ModelParams::new()).is_err());
    }

    #[test]
    fn argmax_and_ties() {
        let t = Tensor::new(vec![1, 3, 1, 2], vec![0.2f32, 1.0 / 3.0, 0.5, 1.0 / 3.0, 0.3, 1.0 / 3.0]).unwrap();
        assert_eq!(argmax_masks(&t).unwrap()[0].labels, vec![1, 0]);
    }
}
