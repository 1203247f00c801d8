//! Experiment orchestration: generate → train teacher → distill student →
//! ε-sweep on both models → CSV, tables, plots and a JSON summary.

mod plot;
mod report;
mod sweep;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{attack, AdversarialResult, AttackConfig, AttackKind, LINF_TOLERANCE};
use crate::autodiff::ModelParams;
use crate::distill::{distill_student, train_teacher, DistillConfig};
use crate::metrics::{average_metrics, ConfusionMatrix, MetricsReport};
use crate::rng::{derive_seed, tag};
use crate::segmodel::{argmax_masks, batch_tensor, evaluate, forward, ArchitectureConfig, EpochReport, TrainConfig};
use crate::signalgen::{class_weights, generate_dataset, load_dataset, Dataset, DatasetConfig, LabelMask, Sample};
use crate::{par, Error, Result, NUM_CLASSES};

pub use plot::{histogram_chart, histogram_counts, line_chart, Series};
pub use report::{block_count, report_tables, TABLE_EPS};
pub use sweep::{
    format_value, inversions, iou_curve, ols_intercept, ols_slope, parse_sweep_csv, sweep_csv, ModelTag, SweepCell,
    SweepRow, GLOBAL_ACCURACY, SWEEP_HEADER,
};

/// ε grid of the published sweep, in 0–255 units.
pub const EPS_GRID: [u32; 10] = [13, 26, 38, 51, 64, 76, 89, 102, 115, 128];
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

pub const DATA_DIR: &str = "data";
pub const TEACHER_FILE: &str = "teacher.sswt";
pub const STUDENT_FILE: &str = "student.sswt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const TABLES_FILE: &str = "tables.md";
pub const PLOTS_DIR: &str = "plots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub attacks: Vec<AttackKind>,
    pub eps_raw: Vec<u32>,
    pub alpha_raw: u32,
    pub iters: usize,
    /// Attack only the first `n` test frames; `None` attacks all of them.
    pub attack_samples: Option<usize>,
    /// Use the training class weights in the attack loss.
    pub weighted_attack_loss: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 64×64 images, 250 frames, 30 epochs, 50 attack iterations.
    pub fn desk() -> Self {
        let arch = ArchitectureConfig { base_width: 8, ..ArchitectureConfig::default() };
        let train = TrainConfig { epochs: 30, batch_size: 8, ..TrainConfig::default() };
        Self {
            dataset: DatasetConfig::desk(),
            arch,
            train: train.clone(),
            distill: DistillConfig { arch, train, ..DistillConfig::default() },
            attacks: AttackKind::ALL.to_vec(),
            eps_raw: EPS_GRID.to_vec(),
            alpha_raw: 1,
            iters: 50,
            attack_samples: Some(20),
            weighted_attack_loss: false,
            seed: 0,
        }
    }

    /// 256×256 images at 61.44 MHz, 2000 attack iterations on every test frame.
    pub fn full_scale() -> Self {
        let arch = ArchitectureConfig::default();
        let train = TrainConfig { epochs: 30, batch_size: 8, ..TrainConfig::default() };
        Self {
            dataset: DatasetConfig::full_scale(),
            arch,
            train: train.clone(),
            distill: DistillConfig { arch, train, ..DistillConfig::default() },
            iters: 2000,
            attack_samples: None,
            ..Self::desk()
        }
    }

    /// Applies a JSON object on top of `self`, key by key.
    pub fn merged_with(&self, overrides: &serde_json::Value) -> Result<Self> {
        fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
            match (base, over) {
                (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
                    for (k, v) in o {
                        merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
                    }
                }
                (b, o) => *b = o.clone(),
            }
        }
        if !overrides.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        let mut value = serde_json::to_value(self)?;
        merge(&mut value, overrides);
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.arch.validate()?;
        self.train.validate_config()?;
        self.distill.validate()?;
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        self.arch.check_input(self.dataset.channels, self.dataset.img_h, self.dataset.img_w)?;
        if self.distill.arch.in_channels != self.dataset.channels {
            return Err(Error::Config("student input channels differ from the dataset".into()));
        }
        if self.attacks.is_empty() || self.eps_raw.is_empty() {
            return Err(Error::Config("attack grid is empty".into()));
        }
        if !self.eps_raw.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!("eps_raw must be strictly increasing, got {:?}", self.eps_raw)));
        }
        for &kind in &self.attacks {
            for &e in &self.eps_raw {
                self.attack_config(kind, e, 0).validate()?;
            }
        }
        if self.attack_samples == Some(0) {
            return Err(Error::Config("attack_samples must be positive".into()));
        }
        Ok(())
    }

    fn attack_config(&self, kind: AttackKind, eps_raw: u32, seed: u64) -> AttackConfig {
        AttackConfig {
            kind,
            epsilon_raw: eps_raw,
            alpha_raw: self.alpha_raw.min(eps_raw),
            max_iters: self.iters,
            seed,
            random_init: true,
            class_weights: None,
        }
    }
}

/// Seed of the PGD start point for one sample, attack and ε.
pub fn attack_seed(seed: u64, sample: usize, kind: AttackKind, eps_raw: u32) -> u64 {
    derive_seed(seed, &[tag("attack"), sample as u64, tag(kind.name()), eps_raw as u64])
}

pub fn dataset_seed(seed: u64) -> u64 {
    derive_seed(seed, &[tag("dataset")])
}

/// Per-sample mean IoU over classes present in the truth or the prediction.
pub fn sample_iou(truth: &LabelMask, pred: &LabelMask) -> Result<f64> {
    let mut cm = ConfusionMatrix::new(NUM_CLASSES);
    cm.accumulate(&truth.labels, &pred.labels)?;
    let mut sum = 0.0;
    let mut n = 0;
    for k in 0..NUM_CLASSES {
        let tp = cm.get(k, k);
        let union = cm.row_sum(k) + cm.col_sum(k) - tp;
        if union > 0 {
            sum += tp as f64 / union as f64;
            n += 1;
        }
    }
    Ok(if n == 0 { 1.0 } else { sum / n as f64 })
}

fn predict(params: &ModelParams, arch: &ArchitectureConfig, images: &[&crate::signalgen::Spectrogram]) -> Result<Vec<LabelMask>> {
    let mut masks = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        masks.extend(argmax_masks(&forward(params, arch, &batch_tensor(chunk)?)?)?);
    }
    Ok(masks)
}

/// Attacks every sample (in parallel) and scores the adversarial examples.
/// `weights` enter the attack loss only when `cfg.weighted_attack_loss` is set.
pub fn attack_and_score(
    params: &ModelParams,
    arch: &ArchitectureConfig,
    samples: &[Sample],
    cfg: &ExperimentConfig,
    weights: [f64; NUM_CLASSES],
    kind: AttackKind,
    eps_raw: u32,
) -> Result<(Vec<AdversarialResult>, MetricsReport, Vec<f64>)> {
    let results: Vec<AdversarialResult> = par::map_range(samples.len(), |i| {
        let mut ac = cfg.attack_config(kind, eps_raw, attack_seed(cfg.seed, i, kind, eps_raw));
        if cfg.weighted_attack_loss {
            ac.class_weights = Some(weights);
        }
        attack(params, arch, &samples[i].spectrogram, &samples[i].labels, &ac)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let images: Vec<_> = results.iter().map(|r| &r.x_adv).collect();
    let masks = predict(params, arch, &images)?;
    let mut cm = ConfusionMatrix::new(NUM_CLASSES);
    let mut per_sample = Vec::with_capacity(samples.len());
    for (s, m) in samples.iter().zip(&masks) {
        cm.accumulate(&s.labels.labels, &m.labels)?;
        per_sample.push(sample_iou(&s.labels, m)?);
    }
    Ok((results, average_metrics(&cm), per_sample))
}

/// ℓ∞ and range checks over every adversarial example of the sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Soundness {
    pub examples: usize,
    pub violations: usize,
    /// Largest `‖x_adv − x₀‖∞ − ε` seen (negative when strictly inside).
    pub max_excess: f64,
}

impl Soundness {
    fn record(&mut self, x0: &Sample, r: &AdversarialResult, eps_raw: u32) {
        let eps = eps_raw as f64 / 255.0;
        let dist = r
            .x_adv
            .pixels
            .iter()
            .zip(&x0.spectrogram.pixels)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max);
        let in_range = r.x_adv.pixels.iter().all(|p| (0.0..=1.0).contains(p));
        if self.examples == 0 {
            self.max_excess = f64::NEG_INFINITY;
        }
        self.examples += 1;
        self.max_excess = self.max_excess.max(dist - eps);
        if dist > eps + LINF_TOLERANCE || !in_range {
            self.violations += 1;
        }
    }
}

/// Largest elementwise gap between FGSM, one-step BIM with α = ε and
/// one-step zero-start PGD.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub comparisons: usize,
    pub max_abs_diff: f64,
}

fn check_equivalence(
    params: &ModelParams,
    arch: &ArchitectureConfig,
    samples: &[Sample],
    eps_raw: u32,
    eq: &mut Equivalence,
) -> Result<()> {
    let diffs = par::map_slice(samples, |s| {
        let base = AttackConfig { epsilon_raw: eps_raw, alpha_raw: eps_raw, max_iters: 1, random_init: false, ..AttackConfig::default() };
        let f = attack(params, arch, &s.spectrogram, &s.labels, &AttackConfig { kind: AttackKind::Fgsm, ..base.clone() })?;
        let b = attack(params, arch, &s.spectrogram, &s.labels, &AttackConfig { kind: AttackKind::Bim, ..base.clone() })?;
        let p = attack(params, arch, &s.spectrogram, &s.labels, &AttackConfig { kind: AttackKind::Pgd, ..base })?;
        let gap = |a: &AdversarialResult, c: &AdversarialResult| {
            a.x_adv.pixels.iter().zip(&c.x_adv.pixels).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
        };
        Ok::<_, Error>(gap(&f, &b).max(gap(&f, &p)))
    });
    for d in diffs {
        eq.max_abs_diff = eq.max_abs_diff.max(d?);
        eq.comparisons += 1;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanBaseline {
    pub mean_iou: f64,
    pub global_accuracy: f64,
    /// On the attacked subset, the reference point of the sweep.
    pub attacked_subset_mean_iou: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub incomplete: bool,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub completed_stages: Vec<String>,
    pub train_frames: usize,
    pub test_frames: usize,
    pub attacked_frames: usize,
    pub class_weights: Option<[f64; NUM_CLASSES]>,
    pub teacher_checksum: Option<String>,
    pub student_checksum: Option<String>,
    pub teacher_epochs: Vec<EpochReport>,
    pub student_epochs: Vec<EpochReport>,
    pub clean: BTreeMap<String, CleanBaseline>,
    /// OLS slope of mean IoU against ε_raw, keyed `model/attack`.
    pub slopes: BTreeMap<String, f64>,
    pub soundness: Soundness,
    pub equivalence: Equivalence,
    pub sweep_rows: usize,
}

/// Wall-clock seconds per stage, kept apart from the deterministic outputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
    pub total: f64,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Generates the dataset into `dir`.
pub fn stage_generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Dataset> {
    generate_dataset(&cfg.dataset, dir, dataset_seed(cfg.seed))?;
    load_dataset(dir)
}

pub fn stage_train(cfg: &ExperimentConfig, data: &Dataset) -> Result<(ModelParams, Vec<EpochReport>)> {
    let weights = class_weights(&data.manifest)?;
    let tc = TrainConfig { seed: derive_seed(cfg.seed, &[tag("teacher")]), ..cfg.train.clone() };
    train_teacher(&cfg.arch, &data.train, &data.test, weights, &tc)
}

pub fn stage_distill(cfg: &ExperimentConfig, teacher: &ModelParams, data: &Dataset) -> Result<(ModelParams, Vec<EpochReport>)> {
    let weights = class_weights(&data.manifest)?;
    let mut dc = cfg.distill.clone();
    dc.train.seed = derive_seed(cfg.seed, &[tag("student")]);
    distill_student(teacher, &cfg.arch, &data.train, &data.test, weights, &dc)
}

/// Output of [`run_sweep`].
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Per-sample IoU values keyed by (model, attack), pooled over ε.
    pub per_sample: BTreeMap<(ModelTag, AttackKind), Vec<f64>>,
    pub soundness: Soundness,
    pub equivalence: Equivalence,
}

/// Attacks both models at every grid point.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    models: &[(ModelTag, &ModelParams, &ArchitectureConfig)],
    samples: &[Sample],
    weights: [f64; NUM_CLASSES],
) -> Result<SweepOutput> {
    let mut out = SweepOutput {
        rows: Vec::new(),
        per_sample: BTreeMap::new(),
        soundness: Soundness::default(),
        equivalence: Equivalence::default(),
    };
    for &(model, params, arch) in models {
        for &eps in &cfg.eps_raw {
            check_equivalence(params, arch, samples, eps, &mut out.equivalence)?;
        }
        for &kind in &cfg.attacks {
            for &eps in &cfg.eps_raw {
                let started = Instant::now();
                let (results, report, per_sample) = attack_and_score(params, arch, samples, cfg, weights, kind, eps)?;
                for (s, r) in samples.iter().zip(&results) {
                    out.soundness.record(s, r, eps);
                }
                log::info!(
                    "{} {} ε={eps}: mean IoU {:.4} ({:.1} s)",
                    model.name(),
                    kind.name(),
                    report.mean_iou(),
                    started.elapsed().as_secs_f64()
                );
                out.per_sample.entry((model, kind)).or_default().extend(per_sample);
                out.rows.push(SweepRow { model, attack: kind, eps_raw: eps, report });
            }
        }
    }
    Ok(out)
}

fn clean_baseline(params: &ModelParams, arch: &ArchitectureConfig, test: &[Sample], subset: &[Sample]) -> Result<CleanBaseline> {
    let report = evaluate(params, arch, test)?;
    Ok(CleanBaseline {
        mean_iou: report.mean_iou(),
        global_accuracy: report.global_accuracy,
        attacked_subset_mean_iou: evaluate(params, arch, subset)?.mean_iou(),
        report,
    })
}

/// Writes `sweep.csv`, `tables.md` and the SVG plots; fills the slopes.
fn write_reports(out: &Path, cfg: &ExperimentConfig, sweep: &SweepOutput, summary: &mut Summary) -> Result<()> {
    let csv = sweep_csv(&sweep.rows);
    write_file(&out.join(SWEEP_FILE), &csv)?;
    let cells = parse_sweep_csv(&csv)?;
    let table_eps: Vec<u32> = TABLE_EPS.iter().copied().filter(|e| cfg.eps_raw.contains(e)).collect();
    if table_eps.len() == TABLE_EPS.len() {
        write_file(&out.join(TABLES_FILE), &report_tables(&cells, &table_eps)?)?;
    } else {
        log::warn!("ε grid lacks some of {TABLE_EPS:?}; tables.md not written");
    }
    let plots = out.join(PLOTS_DIR);
    for &kind in &cfg.attacks {
        let mut series = Vec::new();
        for model in ModelTag::ALL {
            let curve = iou_curve(&sweep.rows, model, kind);
            if let Some(s) = ols_slope(&curve) {
                summary.slopes.insert(format!("{}/{}", model.name(), kind.name()), s);
            }
            series.push(Series { label: model.title().into(), points: curve });
        }
        let lower = kind.name().to_lowercase();
        let title = format!("{} mean IoU vs ε", kind.name());
        write_file(&plots.join(format!("iou_vs_eps_{lower}.svg")), &line_chart(&title, "ε (0–255)", "mean IoU", &series))?;
        let hists: Vec<(String, Vec<usize>)> = ModelTag::ALL
            .iter()
            .map(|&m| {
                let vals = sweep.per_sample.get(&(m, kind)).map(Vec::as_slice).unwrap_or(&[]);
                (m.title().to_string(), histogram_counts(vals, HISTOGRAM_BIN_WIDTH))
            })
            .collect();
        let title = format!("{} per-frame IoU", kind.name());
        write_file(&plots.join(format!("iou_hist_{lower}.svg")), &histogram_chart(&title, "IoU", &hists, HISTOGRAM_BIN_WIDTH))?;
    }
    Ok(())
}

/// Runs the full pipeline into `out`. On failure `summary.json` is still
/// written, marked incomplete with the failing stage.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summary = Summary { seed: cfg.seed, ..Summary::default() };
    let mut timings = Timings::default();
    let started = Instant::now();
    let result = pipeline(cfg, out, &mut summary, &mut timings);
    timings.total = started.elapsed().as_secs_f64();
    if let Err(Error::Stage { stage, source }) = &result {
        summary.incomplete = true;
        summary.failed_stage = Some(stage.to_string());
        summary.error = Some(source.to_string());
    }
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_json(&out.join(TIMINGS_FILE), &timings)?;
    result.map(|_| summary)
}

fn timed<T>(
    name: &'static str,
    summary: &mut Summary,
    timings: &mut Timings,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    log::info!("stage {name}");
    let t = Instant::now();
    let r = f().map_err(|e| e.in_stage(name))?;
    timings.stages.insert(name.to_string(), t.elapsed().as_secs_f64());
    summary.completed_stages.push(name.to_string());
    Ok(r)
}

fn pipeline(cfg: &ExperimentConfig, out: &Path, summary: &mut Summary, timings: &mut Timings) -> Result<()> {
    let data = timed("generate", summary, timings, || stage_generate(cfg, &out.join(DATA_DIR)))?;
    let weights = class_weights(&data.manifest).map_err(|e| e.in_stage("generate"))?;
    summary.class_weights = Some(weights);
    summary.train_frames = data.train.len();
    summary.test_frames = data.test.len();

    let (teacher, reports) = timed("train", summary, timings, || {
        let r = stage_train(cfg, &data)?;
        r.0.save(&out.join(TEACHER_FILE))?;
        Ok(r)
    })?;
    summary.teacher_checksum = Some(teacher.checksum());
    summary.teacher_epochs = reports;

    let (student, reports) = timed("distill", summary, timings, || {
        let r = stage_distill(cfg, &teacher, &data)?;
        r.0.save(&out.join(STUDENT_FILE))?;
        Ok(r)
    })?;
    summary.student_checksum = Some(student.checksum());
    summary.student_epochs = reports;

    let n = cfg.attack_samples.unwrap_or(data.test.len()).min(data.test.len());
    let subset = &data.test[..n];
    summary.attacked_frames = n;
    let student_arch = cfg.distill.arch;
    let clean = timed("evaluate", summary, timings, || {
        Ok([
            (ModelTag::Undefended, clean_baseline(&teacher, &cfg.arch, &data.test, subset)?),
            (ModelTag::Defended, clean_baseline(&student, &student_arch, &data.test, subset)?),
        ])
    })?;
    for (m, c) in clean {
        summary.clean.insert(m.name().to_string(), c);
    }

    let sweep = timed("attack", summary, timings, || {
        run_sweep(cfg, &[(ModelTag::Undefended, &teacher, &cfg.arch), (ModelTag::Defended, &student, &student_arch)], subset, weights)
    })?;
    summary.soundness = sweep.soundness.clone();
    summary.equivalence = sweep.equivalence.clone();
    summary.sweep_rows = sweep.rows.len();

    let t = Instant::now();
    write_reports(out, cfg, &sweep, summary).map_err(|e| e.in_stage("report"))?;
    timings.stages.insert("report".into(), t.elapsed().as_secs_f64());
    summary.completed_stages.push("report".into());
    Ok(())
}
