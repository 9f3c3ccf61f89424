use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eeg_cloak::classifier::Task;
use eeg_cloak::config::{load_config, RunConfig};
use eeg_cloak::disguiser::ConstraintSet;
use eeg_cloak::pipeline::Pipeline;
use eeg_cloak::Error;

/// Disguise personal identity in EEG spectral-topography images.
///
/// Stages share a work directory; run them in order:
/// ingest, split, preprocess, dummies, train-cls, train-gan, ablate.
#[derive(Parser)]
#[command(name = "eeg-cloak", version)]
struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory for every artifact.
    #[arg(long, global = true, env = "EEG_CLOAK_WORKDIR", default_value = "eeg-cloak-work")]
    workdir: PathBuf,
    /// Worker threads; 1 is the deterministic mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a trial-file corpus and write the manifest.
    Ingest {
        /// Corpus root; overrides `corpus_root` from the config.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Extra copy of the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generate the synthetic corpus into the root first.
        #[arg(long)]
        synthetic_fixtures: bool,
    },
    /// Within-subject train/test/validation split.
    Split {
        /// Manifest to split instead of the work directory's.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Band features, normalizer and real images for every trial.
    Preprocess {
        /// Also write one 64×3 feature CSV per trial under features/.
        #[arg(long)]
        dump_features: bool,
    },
    /// Grand-averaged dummy identities from the training split.
    Dummies,
    /// Train a classifier for one task.
    TrainCls {
        /// identity, alcoholism or stimulus.
        #[arg(long)]
        task: Task,
        /// Add the dummy images to the training set.
        #[arg(long)]
        joint: bool,
    },
    /// Train the disguiser for one constraint regime.
    TrainGan {
        /// none, alc, sti or both; defaults to the configured set.
        #[arg(long)]
        constraints: Option<ConstraintSet>,
    },
    /// Disguise a directory of real images.
    Disguise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image class predictions as CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy, sensitivity and specificity of a classifier.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Image directory; defaults to the configured evaluation split.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Report file stem under reports/.
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Original row plus the four constraint regimes.
    Ablate,
    /// Write PNG copies of a directory of images.
    ExportPng {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixel repetition factor.
        #[arg(long, default_value_t = 8)]
        scale: usize,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Command::Ingest { root: Some(r), .. } = &cli.command {
        config.corpus_root = Some(r.clone());
    }
    if let Command::Split { seed: Some(s), .. } = &cli.command {
        config.seed = *s;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    fs::create_dir_all(&cli.workdir).map_err(Error::io(&cli.workdir))?;
    let mut p = Pipeline::new(config, &cli.workdir)?;
    p.verbose = !cli.quiet;

    match cli.command {
        Command::Ingest { out, synthetic_fixtures, .. } => {
            let m = p.ingest(synthetic_fixtures)?;
            if let Some(out) = out {
                fs::copy(p.ws.manifest(), &out).map_err(Error::io(&out))?;
            }
            println!("{} trials, {} subjects, {} skipped files", m.trials.len(), m.subjects.len(), m.skipped.len());
        }
        Command::Split { manifest, .. } => {
            if let Some(src) = manifest {
                let dst = p.ws.manifest();
                if src != dst {
                    fs::copy(&src, &dst).map_err(Error::io(&src))?;
                }
            }
            let s = p.split()?;
            let n = |sp| s.assignment.values().filter(|v| **v == sp).count();
            use eeg_cloak::dataset::Split;
            println!("train {}, test {}, validation {}", n(Split::Train), n(Split::Test), n(Split::Validation));
        }
        Command::Preprocess { dump_features } => {
            let index = p.preprocess(dump_features)?;
            println!("{} images", index.len());
        }
        Command::Dummies => {
            let ex = p.dummies()?;
            println!("{} dummy exemplars", ex.len());
        }
        Command::TrainCls { task, joint } => {
            let m = p.train_cls(task, joint)?;
            println!("best epoch {}, validation accuracy {:.4}", m.best_epoch, m.best_val_acc());
        }
        Command::TrainGan { constraints } => {
            let c = constraints.unwrap_or(p.config.constraints);
            let m = p.train_gan(c)?;
            let last = m.history.last();
            println!(
                "{} epochs, final cycle loss {:.4}, semantic gate {}",
                m.history.len(),
                last.map_or(f64::NAN, |l| l.cycle),
                if m.gate.open { "open" } else { "closed" }
            );
        }
        Command::Disguise { model, input, out } => {
            let n = p.disguise_dir(&model, &input, &out)?;
            println!("{n} images disguised");
        }
        Command::Predict { model, input, out } => {
            let csv = p.predict(&model, &input)?;
            match out {
                Some(o) => fs::write(&o, csv).map_err(Error::io(&o))?,
                None => print!("{csv}"),
            }
        }
        Command::Eval { model, images, name } => {
            let r = p.evaluate(&model, images.as_deref(), &name)?;
            print!("{}", r.to_text());
        }
        Command::Ablate => {
            let r = p.ablate()?;
            print!("{}", r.to_text());
        }
        Command::ExportPng { input, out, scale } => {
            let n = p.export_png(&input, &out, scale)?;
            println!("{n} PNG files");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // Help and version exit 0; usage errors, unknown commands included, exit 2.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eeg-cloak: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
