use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ssense::attacks::AttackKind;
use ssense::autodiff::ModelParams;
use ssense::harness::{self, ExperimentConfig};
use ssense::segmodel::{evaluate, ArchitectureConfig};
use ssense::signalgen::{load_dataset, write_sample, Sample, Split};
use ssense::{par, Error, Result};

#[derive(Parser)]
#[command(name = "ssense", version, about = "Adversarial attacks and defensive distillation for spectrogram segmentation")]
struct Cli {
    /// Global seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the reduced desk profile instead of the full-scale one.
    #[arg(long, global = true)]
    desk: bool,
    /// Output path: dataset directory, checkpoint file or run directory depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON object merged over the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fgsm,
    Bim,
    Pgd,
}

impl From<Kind> for AttackKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Fgsm => AttackKind::Fgsm,
            Kind::Bim => AttackKind::Bim,
            Kind::Pgd => AttackKind::Pgd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled spectrogram dataset.
    Generate {
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the undefended model.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Distill a defended student from a teacher checkpoint.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "lambda")]
        lambda: Option<f64>,
        #[arg(long = "temp")]
        temperature: Option<f64>,
    },
    /// Attack the test split of a dataset.
    Attack {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, value_delimiter = ',', default_values_t = harness::EPS_GRID.to_vec())]
        eps: Vec<u32>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Print the metric table of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Generate, train, distill, sweep and report.
    RunAll,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = if cli.desk { ExperimentConfig::desk() } else { ExperimentConfig::full_scale() };
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            base.merged_with(&value)?
        }
        None => base,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn load_ckpt(path: &Path) -> Result<(ModelParams, ArchitectureConfig)> {
    let params = ModelParams::load(path)?;
    let arch = ArchitectureConfig::infer(&params)?;
    Ok((params, arch))
}

#[derive(Serialize)]
struct AttackLogEntry {
    kind: AttackKind,
    eps_raw: u32,
    file: String,
    linf: f64,
    loss_before: f64,
    loss_after: f64,
    iterations: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate { frames } => {
            let mut cfg = cfg;
            if let Some(n) = frames {
                cfg.dataset.frames = *n;
            }
            let out = out_or(cli, "data");
            let data = harness::stage_generate(&cfg, &out)?;
            println!("{} train / {} test frames in {}", data.train.len(), data.test.len(), out.display());
        }
        Command::Train { data } => {
            cfg.validate()?;
            let data = load_dataset(data)?;
            let (params, reports) = harness::stage_train(&cfg, &data)?;
            let out = out_or(cli, harness::TEACHER_FILE);
            params.save(&out)?;
            for r in &reports {
                println!("epoch {:3}  loss {:.5}  val mIoU {}", r.epoch, r.mean_loss, r.val_mean_iou.map_or("-".into(), |v| format!("{v:.4}")));
            }
            println!("checkpoint {} (sha256 {})", out.display(), params.checksum());
        }
        Command::Distill { teacher, data, lambda, temperature } => {
            let mut cfg = cfg;
            if let Some(l) = lambda {
                cfg.distill.lambda = *l;
            }
            if let Some(t) = temperature {
                cfg.distill.temperature = *t;
            }
            let (teacher, arch) = load_ckpt(teacher)?;
            cfg.arch = arch;
            cfg.validate()?;
            let data = load_dataset(data)?;
            let (params, reports) = harness::stage_distill(&cfg, &teacher, &data)?;
            let out = out_or(cli, harness::STUDENT_FILE);
            params.save(&out)?;
            for r in &reports {
                println!("epoch {:3}  ce {:.5}  kl {:.5}  total {:.5}", r.epoch, r.parts.ce, r.parts.kl, r.parts.total);
            }
            println!("checkpoint {} (sha256 {})", out.display(), params.checksum());
        }
        Command::Attack { ckpt, data, kind, eps, iters } => {
            let (params, arch) = load_ckpt(ckpt)?;
            let data = load_dataset(data)?;
            let kind = AttackKind::from(*kind);
            let mut cfg = cfg;
            cfg.attacks = vec![kind];
            cfg.eps_raw = eps.clone();
            if let Some(n) = iters {
                cfg.iters = *n;
            }
            cfg.validate()?;
            let test_files: Vec<&str> = data
                .manifest
                .samples
                .iter()
                .filter(|s| s.split == Split::Test)
                .map(|s| s.file.as_str())
                .collect();
            let out = out_or(cli, "attacks");
            let weights = ssense::signalgen::class_weights(&data.manifest)?;
            let mut log = Vec::new();
            for &e in eps {
                let (results, report, _) = harness::attack_and_score(&params, &arch, &data.test, &cfg, weights, kind, e)?;
                let dir = out.join(format!("{}_eps{e:03}", kind.name().to_lowercase()));
                std::fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
                for ((r, file), truth) in results.iter().zip(&test_files).zip(&data.test) {
                    write_sample(&dir.join(file), &Sample { spectrogram: r.x_adv.clone(), labels: truth.labels.clone() })?;
                    log.push(AttackLogEntry {
                        kind,
                        eps_raw: e,
                        file: format!("{}/{file}", dir.file_name().unwrap().to_string_lossy()),
                        linf: r.linf,
                        loss_before: r.loss_before,
                        loss_after: r.loss_after,
                        iterations: r.iterations,
                    });
                }
                println!("{} ε={e}: mean IoU {:.6}", kind.name(), report.mean_iou());
            }
            write_json(&out.join("attack_log.json"), &log)?;
        }
        Command::Evaluate { ckpt, data, split } => {
            let (params, arch) = load_ckpt(ckpt)?;
            let data = load_dataset(data)?;
            let samples = match split {
                SplitArg::Train => &data.train,
                SplitArg::Test => &data.test,
            };
            let report = evaluate(&params, &arch, samples)?;
            let csv = report.to_csv();
            print!("{csv}");
            if let Some(out) = &cli.out {
                std::fs::write(out, &csv).map_err(|e| Error::io(out, e))?;
            }
        }
        Command::RunAll => {
            let out = out_or(cli, "run");
            let summary = harness::run_experiment(&cfg, &out)?;
            for (model, clean) in &summary.clean {
                println!("{model}: clean mean IoU {:.4}", clean.mean_iou);
            }
            for (curve, slope) in &summary.slopes {
                println!("{curve}: IoU slope {slope:.3e} per ε unit");
            }
            println!("outputs in {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Stage { source, .. } if matches!(**source, Error::Config(_)) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.sequential {
        par::set_mode(par::Mode::Sequential);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
