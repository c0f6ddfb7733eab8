//! `aftn`: generate synthetic data, train, track, evaluate, benchmark and plot.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aftn::data::{gen_synthetic, load_sequence, load_split, write_annotations};
use aftn::network::{load_model, save_model, TrackerModel, Variant};
use aftn::parallel::Execution;
use aftn::trackeval::{
    evaluate, export_curves, fps_report, measure_fps, plot_dir, render_fps_svg, track_free, train, GroundTruthTracker,
    ModelTracker, Tracker,
};
use aftn::{Error, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "aftn", version, about = "Attentive two-stream regression tracker")]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence set and its manifest.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Directory that receives the sequences and `manifest.txt`.
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences; overrides `data.sequences`.
        #[arg(long)]
        n: Option<usize>,
        /// Generator seed; overrides `data.synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on the sequences listed in a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training manifest; overrides `data.train_manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// aftn, aftn-no-att, aftn-c or baseline.
        #[arg(long)]
        variant: Option<Variant>,
        /// Seed for initialization, sampling and dropout.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Pairs per step.
        #[arg(long)]
        batch: Option<usize>,
        /// Adam learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a model (or the ground-truth oracle) and write curves.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Trained model file.
        #[arg(long, required_unless_present = "oracle")]
        model: Option<PathBuf>,
        /// Evaluation manifest; overrides `data.eval_manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory for curves, scores, plots and the config echo.
        #[arg(long)]
        out: PathBuf,
        /// Expected variant of the model file.
        #[arg(long)]
        variant: Option<Variant>,
        /// Score the ground-truth oracle instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Track one sequence from its first box and write the predicted boxes.
    Track {
        #[command(flatten)]
        common: Common,
        /// Trained model file.
        #[arg(long)]
        model: PathBuf,
        /// Sequence directory; only its first box is read.
        #[arg(long)]
        sequence: PathBuf,
        /// Annotation file for the predicted boxes.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure tracking throughput; prints frames per second.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Trained model file.
        #[arg(long)]
        model: PathBuf,
        /// Sequences to time; overrides `data.eval_manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Optional directory for the report and its plot.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate SVG plots from the curve CSVs of an eval directory.
    Plot {
        /// Directory written by `eval`.
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::Diverged { .. } => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })
}

/// `<file>.config.json` beside an output file.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("no {what} given (flag or config)")))
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("AFTN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("AFTN_THREADS must be a positive integer, got `{value}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn load_checked_model(path: &Path, expected: Option<Variant>) -> Result<TrackerModel> {
    let model = load_model(path)?;
    if let Some(v) = expected {
        if v != model.variant() {
            return Err(Error::Config(format!(
                "{} holds a {} model, not {v}",
                path.display(),
                model.variant()
            )));
        }
    }
    Ok(model)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Gen { common, out, n, seed } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(n) = n {
                cfg.data.sequences = n;
            }
            if let Some(seed) = seed {
                cfg.data.synth.seed = seed;
            }
            let dirs = gen_synthetic(&cfg.data.synth, cfg.data.sequences, &out, exec)?;
            cfg.echo(&out.join("config.json"))?;
            eprintln!("wrote {} sequences to {}", dirs.len(), out.display());
            println!("manifest={}", out.join("manifest.txt").display());
        }
        Command::Train {
            common,
            manifest,
            out,
            variant,
            seed,
            epochs,
            batch,
            lr,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = lr {
                cfg.optim.learning_rate = lr;
            }
            if let Some(m) = manifest {
                cfg.data.train_manifest = Some(m);
            }
            let manifest = required(cfg.data.train_manifest.clone(), "training manifest")?;
            let split = load_split(&manifest, exec)?;
            let mut model = TrackerModel::new(cfg.variant, cfg.fen, cfg.head, cfg.train.seed)?;
            let report = train(&mut model, &split, &cfg.optim, &cfg.train, exec, |s| {
                if s.step % 50 == 0 {
                    eprintln!("epoch {} step {} loss {:.6}", s.epoch, s.step, s.loss);
                }
            })?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            save_model(&model, &out)?;
            cfg.echo(&sidecar(&out, ".config.json"))?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            fs::write(sidecar(&out, ".report.json"), json).map_err(|e| Error::Io {
                context: "writing training report".into(),
                source: e,
            })?;
            println!("variant={}", cfg.variant);
            println!("seed={}", report.seed);
            println!("steps={}", report.steps);
            for (i, (loss, secs)) in report.epoch_loss.iter().zip(&report.epoch_seconds).enumerate() {
                println!("epoch{}_loss={loss}", i + 1);
                println!("epoch{}_seconds={secs:.3}", i + 1);
            }
            println!("model={}", out.display());
        }
        Command::Eval {
            common,
            model,
            manifest,
            out,
            variant,
            oracle,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(m) = manifest {
                cfg.data.eval_manifest = Some(m);
            }
            let manifest = required(cfg.data.eval_manifest.clone(), "evaluation manifest")?;
            let loaded = match (&model, oracle) {
                (_, true) => None,
                (Some(path), false) => Some(load_checked_model(path, variant)?),
                (None, false) => return Err(Error::Config("eval needs --model or --oracle".into())),
            };
            let split = load_split(&manifest, exec)?;
            let model_tracker = loaded.as_ref().map(ModelTracker::new);
            let tracker: &dyn Tracker = match &model_tracker {
                Some(t) => t,
                None => &GroundTruthTracker,
            };
            let result = evaluate(tracker, &split, cfg.eval.grid_step, exec)?;
            export_curves(&result, &out)?;
            if let Some(m) = &loaded {
                cfg.variant = m.variant();
                cfg.fen = *m.fen_config();
                cfg.head = *m.head_config();
            }
            cfg.echo(&out.join("config.json"))?;
            let s = result.scores;
            println!("accuracy={}", s.accuracy);
            println!("robustness={}", s.robustness);
            println!("overall={}", s.overall);
            println!("fps={}", s.fps);
        }
        Command::Track {
            common,
            model,
            sequence,
            out,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let model = load_model(&model)?;
            let seq = load_sequence(&sequence)?;
            let boxes = track_free(&ModelTracker::new(&model), &seq)?;
            write_annotations(&boxes, &out)?;
            cfg.echo(&sidecar(&out, ".config.json"))?;
            println!("frames={}", boxes.len());
            println!("annotations={}", out.display());
        }
        Command::Bench {
            common,
            model,
            manifest,
            out,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(m) = manifest {
                cfg.data.eval_manifest = Some(m);
            }
            let manifest = required(cfg.data.eval_manifest.clone(), "benchmark manifest")?;
            let model = load_model(&model)?;
            let split = load_split(&manifest, exec)?;
            let (fps, frames) = measure_fps(&ModelTracker::new(&model), &split, exec)?;
            let report = fps_report(fps);
            eprint!("{report}");
            eprintln!("frames={frames}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                let write = |name: &str, text: &str| {
                    fs::write(dir.join(name), text).map_err(|e| Error::Io {
                        context: format!("writing {name}"),
                        source: e,
                    })
                };
                write("bench.txt", &report)?;
                write("bench.svg", &render_fps_svg(fps))?;
                cfg.echo(&dir.join("config.json"))?;
            }
            println!("{fps}");
        }
        Command::Plot { run } => {
            plot_dir(&run)?;
            println!("plots={}", run.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
