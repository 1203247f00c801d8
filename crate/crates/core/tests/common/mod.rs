//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use ssense::autodiff::gradcheck::{check_gradients, GradCheckReport};
use ssense::autodiff::{Graph, ModelParams, Tensor, Var};
use ssense::metrics::{average_metrics, ClassMetrics, ConfusionMatrix};
use ssense::rng::rng_for;
use ssense::segmodel::{build_model, logits, ArchitectureConfig};
use ssense::signalgen::{FrameSpec, LabelMask};
use ssense::{Result, NUM_CLASSES};

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-3;

pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

/// Direct-definition convolution: `out[n,o,i,j] = b[o] + Σ w[o,c,u,v]·x[n,c,i·s+u−p,j·s+v−p]`.
pub fn conv2d_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad as isize;
                                let q = (j * stride + v) as isize - pad as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= wd as isize {
                                    continue;
                                }
                                acc += wdat[((o * cin + c) * kh + u) * kw + v]
                                    * xd[((s * cin + c) * h + r as usize) * wd + q as usize];
                            }
                        }
                    }
                    out[((s * cout + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, ho, wo], out).unwrap()
}

/// `Σ r ⊙ y` for a fixed random `r`, turning any tensor op into a scalar loss
/// whose gradient exercises every output element.
fn contract(g: &mut Graph<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = g.leaf(r.clone(), false);
    let p = g.mul(y, rv)?;
    Ok(g.sum(p))
}

fn contracted<R: Rng + ?Sized, Op>(
    op: Op,
    inputs: Vec<Tensor<f64>>,
    wrt: &[usize],
    rng: &mut R,
) -> Result<GradCheckReport>
where
    Op: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut probe = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.leaf(t.clone(), false)).collect();
    let y = op(&mut probe, &vars)?;
    let r = randn(probe.value(y).shape(), rng);
    check_gradients(
        |g, v| {
            let y = op(g, v)?;
            contract(g, y, &r)
        },
        &inputs,
        wrt,
        FD_STEP,
        8,
        rng,
    )
}

/// Softmax of `0.5·z`. Keeps every probability far above the FD step: near
/// `p ≈ 2e-3` the truncation error of a central difference of `ln p` alone
/// reaches the tolerance.
fn probs<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let mut z = randn(shape, rng);
    z.data_mut().iter_mut().for_each(|v| *v *= 0.5);
    let mut g = Graph::new();
    let v = g.leaf(z, false);
    let p = g.softmax_over_classes(v).unwrap();
    g.value(p).clone()
}

fn labels<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect()
}

/// Tiny network used for the composite attack-loss check.
pub fn tiny_model(seed: u64) -> (ArchitectureConfig, ModelParams<f64>) {
    let arch = ArchitectureConfig { in_channels: 1, base_width: 2, depth: 1, num_classes: NUM_CLASSES };
    let params = build_model(&arch, &mut rng_for(seed, &[])).unwrap().cast();
    (arch, params)
}

pub const OP_NAMES: [&str; 14] = [
    "conv2d",
    "conv2d_strided",
    "relu",
    "maxpool2d",
    "upsample_nearest",
    "concat_channels",
    "batch_stack",
    "softmax_over_classes",
    "scale",
    "add",
    "mul",
    "weighted_cross_entropy",
    "kl_divergence",
    "attack_loss",
];

/// One random instance of the named op, checked with respect to all of its
/// differentiable inputs.
pub fn check_op_instance<R: Rng + ?Sized>(name: &str, rng: &mut R) -> Result<GradCheckReport> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let h = 2 * rng.random_range(2..=4);
    let w = 2 * rng.random_range(2..=4);
    match name {
        "conv2d" | "conv2d_strided" => {
            let (stride, pad, k) = if name == "conv2d" { (1, 1, 3) } else { (2, 0, 2) };
            let cout = rng.random_range(1..=3);
            let x = randn(&[n, c, h, w], rng);
            let wt = randn(&[cout, c, k, k], rng);
            let b = randn(&[cout], rng);
            contracted(|g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad), vec![x, wt, b], &[0, 1, 2], rng)
        }
        "relu" => contracted(|g, v| Ok(g.relu(v[0])), vec![randn(&[n, c, h, w], rng)], &[0], rng),
        "maxpool2d" => contracted(|g, v| g.maxpool2d(v[0], 2), vec![randn(&[n, c, h, w], rng)], &[0], rng),
        "upsample_nearest" => {
            contracted(|g, v| g.upsample_nearest(v[0], 2), vec![randn(&[n, c, h / 2, w / 2], rng)], &[0], rng)
        }
        "concat_channels" => {
            let c2 = rng.random_range(1..=3);
            let a = randn(&[n, c, h, w], rng);
            let b = randn(&[n, c2, h, w], rng);
            contracted(|g, v| g.concat_channels(v[0], v[1]), vec![a, b], &[0, 1], rng)
        }
        "batch_stack" => {
            let a = randn(&[c, h, w], rng);
            let b = randn(&[c, h, w], rng);
            contracted(|g, v| g.batch_stack(&[v[0], v[1], v[0]]), vec![a, b], &[0, 1], rng)
        }
        "softmax_over_classes" => {
            contracted(|g, v| g.softmax_over_classes(v[0]), vec![randn(&[n, NUM_CLASSES, h, w], rng)], &[0], rng)
        }
        "scale" => {
            let f: f64 = rng.random_range(-3.0..3.0);
            contracted(move |g, v| Ok(g.scale(v[0], f)), vec![randn(&[n, c, h, w], rng)], &[0], rng)
        }
        "add" | "mul" => {
            let a = randn(&[n, c, h, w], rng);
            let b = randn(&[n, c, h, w], rng);
            if name == "add" {
                contracted(|g, v| g.add(v[0], v[1]), vec![a, b], &[0, 1], rng)
            } else {
                contracted(|g, v| g.mul(v[0], v[1]), vec![a, b], &[0, 1], rng)
            }
        }
        "weighted_cross_entropy" => {
            let p = probs(&[n, NUM_CLASSES, h, w], rng);
            let y = labels(n * h * w, rng);
            let wts: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.random_range(0.2..3.0)).collect();
            check_gradients(|g, v| g.weighted_cross_entropy(v[0], &y, &wts), &[p], &[0], FD_STEP, 8, rng)
        }
        "kl_divergence" => {
            let s = probs(&[n, NUM_CLASSES, h, w], rng);
            let t = probs(&[n, NUM_CLASSES, h, w], rng);
            check_gradients(|g, v| g.kl_divergence(v[0], v[1]), &[s, t], &[0, 1], FD_STEP, 8, rng)
        }
        "attack_loss" => {
            let (arch, params) = tiny_model(rng.random());
            let x = Tensor::from_fn(vec![n, 1, h, w], |_| rng.random_range(0.0..1.0));
            let y = labels(n * h * w, rng);
            let wts: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.random_range(0.2..3.0)).collect();
            let np = params.len();
            let mut inputs: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
            inputs.push(x);
            check_gradients(
                |g, v| {
                    let z = logits(g, &arch, &v[..np], v[np])?;
                    let p = g.softmax_over_classes(z)?;
                    g.weighted_cross_entropy(p, &y, &wts)
                },
                &inputs,
                &[np],
                FD_STEP,
                16,
                rng,
            )
        }
        other => panic!("unknown op {other}"),
    }
}

/// Per-op worst case over `instances` random instances of every op.
pub fn gradient_fidelity(instances: usize, seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    OP_NAMES
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let mut rng = rng_for(seed, &[i as u64]);
            let mut total = GradCheckReport::default();
            for _ in 0..instances {
                total.merge(&check_op_instance(name, &mut rng)?);
            }
            Ok((name, total))
        })
        .collect()
}

/// Metrics of class `k` from per-pixel counting, without a confusion matrix.
pub fn brute_force_class(truth: &[u8], pred: &[u8], k: u8) -> ClassMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == k, p == k) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let mut degenerate = false;
    let mut div = |a: u64, b: u64| {
        if b == 0 {
            degenerate = true;
            0.0
        } else {
            a as f64 / b as f64
        }
    };
    let accuracy = div(tp + tn, tp + tn + fp + fn_);
    let recall = div(tp, tp + fn_);
    let precision = div(tp, tp + fp);
    let specificity = div(tn, tn + fp);
    let fpr = div(fp, fp + tn);
    let iou = div(tp, tp + fp + fn_);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    ClassMetrics { accuracy, recall, precision, specificity, f_score, fpr, iou, degenerate }
}

/// Failures of the matrix path against the oracle on `pairs` random 16×16 masks.
pub fn metric_oracle_failures(pairs: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_for(seed, &[]);
    let mut failures = Vec::new();
    for i in 0..pairs {
        // Skewed class frequencies so that empty classes also occur.
        let bias: [f64; NUM_CLASSES] = [rng.random(), rng.random(), rng.random()];
        let draw = |rng: &mut ssense::rng::Rng| -> Vec<u8> {
            (0..256)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * bias.iter().sum::<f64>();
                    if u < bias[0] {
                        0
                    } else if u < bias[0] + bias[1] {
                        1
                    } else {
                        2
                    }
                })
                .collect()
        };
        let truth = draw(&mut rng);
        let pred = if i % 10 == 0 { truth.clone() } else { draw(&mut rng) };
        let mut cm = ConfusionMatrix::new(NUM_CLASSES);
        cm.accumulate(&truth, &pred).unwrap();
        let report = average_metrics(&cm);
        let oracle: Vec<ClassMetrics> = (0..NUM_CLASSES as u8).map(|k| brute_force_class(&truth, &pred, k)).collect();
        for k in 0..NUM_CLASSES {
            if report.per_class[k] != oracle[k] {
                failures.push(format!("pair {i} class {k}: {:?} vs oracle {:?}", report.per_class[k], oracle[k]));
            }
            let m = &report.per_class[k];
            if !m.degenerate {
                if (m.fpr + m.specificity - 1.0).abs() > 1e-12 {
                    failures.push(format!("pair {i} class {k}: FPR + specificity = {}", m.fpr + m.specificity));
                }
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                if (m.f_score - h).abs() > 1e-12 {
                    failures.push(format!("pair {i} class {k}: F {} vs harmonic {h}", m.f_score));
                }
            }
        }
        let mean_iou = oracle.iter().map(|m| m.iou).sum::<f64>() / NUM_CLASSES as f64;
        if report.mean_iou() != mean_iou {
            failures.push(format!("pair {i}: mean IoU {} vs oracle {mean_iou}", report.mean_iou()));
        }
        let agree = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / 256.0;
        if report.global_accuracy != agree {
            failures.push(format!("pair {i}: global accuracy {} vs {agree}", report.global_accuracy));
        }
        if i % 10 == 0 && oracle.iter().any(|m| !m.degenerate && m.iou != 1.0) {
            failures.push(format!("pair {i}: identical masks without perfect IoU"));
        }
    }
    failures
}

/// Label mask drawn from rounded rectangle edges: a carrier covering
/// `[t0, t1) × [f0, f1)` owns rows `round(t0/T·H)..round(t1/T·H)` and
/// columns `round((f0 + fs/2)/fs·W)..round((f1 + fs/2)/fs·W)`.
pub fn rectangle_oracle(frame: &FrameSpec) -> Vec<u8> {
    let (h, w) = (frame.img_h, frame.img_w);
    let mut out = vec![0u8; h * w];
    for c in &frame.carriers {
        let (t0, t1) = c.time_span();
        let (f0, f1) = c.band();
        let row = |t: f64| ((t / frame.frame_duration_s * h as f64).round().max(0.0) as usize).min(h);
        let col = |f: f64| (((f + frame.fs_hz / 2.0) / frame.fs_hz * w as f64).round().max(0.0) as usize).min(w);
        for r in row(t0)..row(t1) {
            for q in col(f0)..col(f1) {
                out[r * w + q] = c.kind.class() as u8;
            }
        }
    }
    out
}

/// Pixels that disagree with the oracle and are not within one pixel of an
/// oracle class boundary.
pub fn off_band_mismatches(mask: &LabelMask, oracle: &[u8]) -> usize {
    let (h, w) = (mask.h, mask.w);
    let near_edge = |r: usize, q: usize| {
        let v = oracle[r * w + q];
        (r.saturating_sub(1)..=(r + 1).min(h - 1))
            .any(|rr| (q.saturating_sub(1)..=(q + 1).min(w - 1)).any(|qq| oracle[rr * w + qq] != v))
    };
    (0..h)
        .flat_map(|r| (0..w).map(move |q| (r, q)))
        .filter(|&(r, q)| mask.labels[r * w + q] != oracle[r * w + q] && !near_edge(r, q))
        .count()
}
