// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ltg_core::classifier::{
    config_for, evaluate, load_samples, save_checkpoint_file, train, DecisionPolicy, MultiScaleModel, TrainConfig,
};
use ltg_core::examiner::ExamSession;
use ltg_core::layout::{hierarchy_order, parse_gdsii, Library};
use ltg_core::raster::{size_stats, RasterConfig};
use ltg_core::svm::{load_classifier_file, sample_features, save_svm, train_svm, SvmConfig};
use ltg_core::synth::{build_dataset, DatasetManifest, SpecFile, Split};

/// Layout-to-generator assistant.
#[derive(Debug, Parser)]
#[command(name = "ltg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Raster size distribution of the cells in a GDSII file.
    Stats {
        gdsii: PathBuf,
        /// Only the sub-cells under this top cell.
        #[arg(long)]
        top: Option<String>,
        #[arg(long, env = "LTG_PITCH", default_value_t = 10)]
        pitch: i64,
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic labeled dataset.
    Dataset {
        #[arg(long)]
        specs: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        negatives: usize,
        #[arg(long, env = "LTG_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
        #[arg(long, env = "LTG_PITCH", default_value_t = 10)]
        pitch: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multi-scale CNN.
    Train(TrainArgs),
    /// Score a model (CNN or SVM) on a dataset.
    Eval(EvalArgs),
    /// Train the one-vs-rest linear SVM baseline.
    SvmTrain(SvmTrainArgs),
    /// Score an SVM model on a dataset.
    SvmEval(EvalArgs),
    /// Examine the sub-cells of a layout.
    Examine {
        gdsii: PathBuf,
        #[arg(long)]
        top: String,
        #[arg(long, env = "LTG_MODEL")]
        model: PathBuf,
        /// Approve generatable verdicts and mark NG as manual.
        #[arg(long)]
        auto: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the generator skeleton; needs a complete session.
        #[arg(long)]
        skeleton: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, env = "LTG_PITCH", default_value_t = 10)]
        pitch: i64,
    },
    /// Serve examination sessions over HTTP.
    Serve {
        #[arg(long, env = "LTG_MODEL")]
        model: Option<PathBuf>,
        #[arg(long, env = "LTG_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "LTG_BIND", default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, env = "LTG_PITCH", default_value_t = 10)]
        pitch: i64,
    },
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[arg(long, env = "LTG_THRESHOLD", default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 3)]
    topk: usize,
}

impl PolicyArgs {
    fn policy(&self) -> Result<DecisionPolicy> {
        Ok(DecisionPolicy::new(self.threshold, self.topk)?)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Re-split the manifest with this validation fraction.
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, env = "LTG_SEED", default_value_t = 0)]
    seed: u64,
    /// Stop after this many seconds of training.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Narrow single-block variant for CPU training.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-epoch history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, env = "LTG_MODEL")]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    #[arg(long, default_value_t = 3)]
    topk: usize,
    #[arg(long)]
    per_instance: bool,
    #[arg(long, env = "LTG_THRESHOLD", default_value_t = 0.5)]
    threshold: f64,
    /// Write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SvmTrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    input_size: usize,
    #[arg(long, env = "LTG_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn raster(pitch: i64) -> Result<RasterConfig> {
    let cfg = RasterConfig { pixel_pitch_nm: pitch, ..RasterConfig::default() };
    cfg.validate()?;
    Ok(cfg)
}

fn read_library(path: &Path) -> Result<Library> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_gdsii(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn stats(gdsii: &Path, top: Option<&str>, pitch: i64, json: bool) -> Result<()> {
    let lib = read_library(gdsii)?;
    let names: BTreeSet<String> = match top {
        Some(t) => hierarchy_order(&lib, t)?.into_iter().map(|v| v.child).collect(),
        None => lib.cells.keys().cloned().collect(),
    };
    let cells = names.iter().map(|n| lib.flatten_all(n)).collect::<Result<Vec<_>, _>>()?;
    let s = size_stats(&cells, &raster(pitch)?, lib.dbu_per_nm())?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", s.to_table());
    }
    Ok(())
}

fn load_manifest(dir: &Path, val_frac: Option<f64>, seed: u64) -> Result<DatasetManifest> {
    let mut m = DatasetManifest::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if let Some(f) = val_frac {
        if !(0.0..1.0).contains(&f) {
            bail!("--val-frac must be in [0, 1)");
        }
        m.resplit(f, seed);
    }
    Ok(m)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let m = load_manifest(&a.dataset, a.val_frac, a.seed)?;
    let tr = load_samples(&m, &a.dataset, Some(Split::Train))?;
    let va = load_samples(&m, &a.dataset, Some(Split::Val))?;
    let channels = tr.first().context("no training samples")?.raster.channels.len();
    let model = MultiScaleModel::new(config_for(&m.registry, channels, a.desk), a.seed)?;
    let cfg = TrainConfig {
        batch: a.batch,
        lr: a.lr,
        patience: a.patience,
        max_epochs: a.max_epochs,
        seed: a.seed,
        time_budget_secs: a.time_budget,
    };
    let mut out = train(model, &tr, &va, &m.registry, &cfg)?;
    for e in &out.history {
        log::info!("{e:?}");
    }
    save_checkpoint_file(&mut out.model, &m.registry, &a.out)?;
    if let Some(h) = &a.history {
        fs::write(h, serde_json::to_string_pretty(&out.history)?)?;
    }
    println!("trained {} epochs, best epoch {}, wrote {}", out.history.len(), out.best_epoch, a.out.display());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let (mut model, registry) = load_classifier_file(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let m = DatasetManifest::load(&a.dataset)?;
    if m.registry != registry {
        bail!("model and dataset registries differ");
    }
    let split = match a.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::All => None,
    };
    let samples = load_samples(&m, &a.dataset, split)?;
    let policy = DecisionPolicy::new(a.threshold, a.topk.max(1))?;
    let ks: Vec<usize> = if a.topk > 1 { vec![1, a.topk] } else { vec![1] };
    let report = evaluate(model.as_mut(), &samples, &policy, &registry, &ks, a.per_instance)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        fs::write(p, report.to_json())?;
    }
    Ok(())
}

fn run_svm_train(a: &SvmTrainArgs) -> Result<()> {
    let m = load_manifest(&a.dataset, a.val_frac, a.seed)?;
    let tr = load_samples(&m, &a.dataset, Some(Split::Train))?;
    let channels = tr.first().context("no training samples")?.raster.channels.len();
    let features = sample_features(&tr, a.input_size)?;
    let labels: Vec<usize> = tr.iter().map(|s| s.label).collect();
    let cfg = SvmConfig { lambda: a.lambda, epochs: a.epochs, lr: a.lr, seed: a.seed };
    let model = train_svm(&features, &labels, m.registry.len(), &cfg, channels)?;
    save_svm(&model, &m.registry, fs::File::create(&a.out)?)?;
    println!("trained SVM on {} samples, wrote {}", tr.len(), a.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn examine(
    gdsii: &Path,
    top: &str,
    model: &Path,
    auto: bool,
    report: Option<&Path>,
    skeleton: Option<&Path>,
    policy: DecisionPolicy,
    pitch: i64,
) -> Result<()> {
    let lib = read_library(gdsii)?;
    let (model, registry) = load_classifier_file(model).with_context(|| format!("loading {}", model.display()))?;
    let mut s = ExamSession::start(lib, top, model, policy, registry, raster(pitch)?)?;
    if auto {
        s.auto_examine()?;
    } else {
        s.examine_all()?;
    }
    let r = s.report();
    print!("{}", r.to_text());
    if let Some(p) = report {
        fs::write(p, r.to_json())?;
    }
    if let Some(p) = skeleton {
        fs::write(p, s.emit_generator_skeleton()?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { gdsii, top, pitch, json } => stats(&gdsii, top.as_deref(), pitch, json),
        Command::Dataset { specs, per_class, negatives, seed, val_frac, pitch, out } => {
            let text = fs::read_to_string(&specs).with_context(|| format!("reading {}", specs.display()))?;
            let file: SpecFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", specs.display()))?;
            let m = build_dataset(&file.resolve()?, per_class, negatives, seed, val_frac, &raster(pitch)?, &out)?;
            println!("wrote {} samples over {} classes to {}", m.samples.len(), m.registry.len(), out.display());
            Ok(())
        }
        Command::Train(a) => run_train(&a),
        Command::Eval(a) | Command::SvmEval(a) => run_eval(&a),
        Command::SvmTrain(a) => run_svm_train(&a),
        Command::Examine { gdsii, top, model, auto, report, skeleton, policy, pitch } => {
            examine(&gdsii, &top, &model, auto, report.as_deref(), skeleton.as_deref(), policy.policy()?, pitch)
        }
        Command::Serve { model, port, bind, pitch } => {
            if let Some(m) = &model {
                load_classifier_file(m).with_context(|| format!("loading {}", m.display()))?;
            }
            let state = ltg_service::AppState::new(model, raster(pitch)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(ltg_service::serve(SocketAddr::new(bind, port), state))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LTG_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
