use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use physiome::app::{
    backbone_stage, configure_threads, physiome_stage, prepare, run_pipeline, scenarios, write_csv, write_report, write_sweep,
    CheckpointBundle, FoldEval, Prepared, RunConfig, Stage,
};
use physiome::evalkit::SweepReport;
use physiome::physiome::RestorationStrategy;
use physiome::signal::{generate_synthetic_dataset, read_dataset, write_dataset};
use physiome::Result;

#[derive(Parser)]
#[command(name = "physiome", version, about = "Missing-modality robust multimodal pretraining for physiological signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multimodal dataset container.
    GenSynthetic {
        /// Preset name or TOML config path.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the data seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain one dual-path backbone per modality on a fold's pretrain subjects.
    PretrainBackbone {
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Per-epoch loss CSV; defaults to the checkpoint path with a .csv extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the multimodal model on top of a backbone checkpoint.
    PretrainPhysiome {
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fit a linear probe on frozen class-token features and score one scenario.
    LinearEval {
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Observed modalities as a bit string, e.g. 101. Defaults to all.
        #[arg(long)]
        modalities: Option<String>,
        #[arg(long)]
        strategy: Option<String>,
        /// Score CSV; defaults to the checkpoint path with a .csv extension.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Linear evaluation under every missing-modality scenario, averaged over fold checkpoints.
    Sweep {
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        /// One PhysioME checkpoint per fold.
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one scenario, e.g. 101.
        #[arg(long)]
        modalities: Option<String>,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Render loss-curve and sweep plots for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        config: String,
        /// Run directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_data(cfg: &RunConfig, path: &Path) -> Result<Prepared> {
    prepare(read_dataset(path)?, cfg)
}

fn strategy(cfg: &RunConfig, s: Option<&str>) -> Result<RestorationStrategy> {
    s.map_or(Ok(cfg.eval.strategy), str::parse)
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenSynthetic { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.data.synthetic.seed = s;
            }
            let ds = generate_synthetic_dataset(&cfg.data.synthetic)?;
            write_dataset(&out, &ds)?;
            println!("wrote {} samples x {} modalities to {}", ds.len(), ds.n_modalities(), out.display());
        }
        Command::PretrainBackbone { config, data, out, fold, log } => {
            let cfg = RunConfig::load(&config)?;
            let prep = load_data(&cfg, &data)?;
            let (bundle, epochs) = backbone_stage(&prep, &cfg, fold)?;
            bundle.save(&out)?;
            write_csv(&log.unwrap_or_else(|| with_ext(&out, "csv")), &epochs)?;
            println!("stage {} fold {fold} sha256 {}", bundle.stage, bundle.digest());
        }
        Command::PretrainPhysiome { config, data, checkpoint, out, log } => {
            let cfg = RunConfig::load(&config)?;
            let backbone = CheckpointBundle::load_stage(&checkpoint, Stage::DpNeuronet)?;
            let prep = load_data(&cfg, &data)?;
            let (bundle, epochs) = physiome_stage(&prep, &cfg, &backbone)?;
            bundle.save(&out)?;
            write_csv(&log.unwrap_or_else(|| with_ext(&out, "csv")), &epochs)?;
            println!("stage {} fold {} sha256 {}", bundle.stage, bundle.fold, bundle.digest());
        }
        Command::LinearEval { config, data, checkpoint, out, modalities, strategy: s, scores } => {
            let cfg = RunConfig::load(&config)?;
            let physiome = CheckpointBundle::load_stage(&checkpoint, Stage::Physiome)?;
            let cfg = cfg.with_placeholder(physiome.config.physiome.placeholder);
            let prep = load_data(&cfg, &data)?;
            let m = cfg.n_modalities();
            let bits = modalities.unwrap_or_else(|| "1".repeat(m));
            let eval = FoldEval::new(&prep, &cfg, &physiome)?;
            let (bundle, result) = eval.linear_eval(&cfg, prep.n_classes, &scenarios(m, Some(&bits))?, strategy(&cfg, s.as_deref())?)?;
            bundle.save(&out)?;
            write_csv(&scores.unwrap_or_else(|| with_ext(&out, "csv")), &result)?;
            for r in &result {
                println!("scenario {} ACC {:.4} AUC {:.4}", r.scenario, r.acc, r.auc);
            }
        }
        Command::Sweep { config, data, checkpoint, out, modalities, strategy: s } => {
            let cfg = RunConfig::load(&config)?;
            let s = strategy(&cfg, s.as_deref())?;
            let bundles = checkpoint.iter().map(|p| CheckpointBundle::load_stage(p, Stage::Physiome)).collect::<Result<Vec<_>>>()?;
            let prep = load_data(&cfg, &data)?;
            let list = scenarios(cfg.n_modalities(), modalities.as_deref())?;
            let per_fold = bundles
                .iter()
                .map(|b| {
                    let cfg = cfg.with_placeholder(b.config.physiome.placeholder);
                    Ok(FoldEval::new(&prep, &cfg, b)?.linear_eval(&cfg, prep.n_classes, &list, s)?.1)
                })
                .collect::<Result<Vec<_>>>()?;
            let report = SweepReport::from_folds(cfg.data.modality_names.clone(), s, &per_fold)?;
            fs::create_dir_all(&out)?;
            write_sweep(&out, "sweep", &report)?;
            print!("{}", report.to_markdown());
        }
        Command::Report { run } => {
            for f in write_report(&run)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Pipeline { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let summary = run_pipeline(&cfg, &out)?;
            print!("{}", summary.sweep.to_markdown());
            println!("finished in {:.1} s; artifacts in {}", summary.wall_seconds, out.display());
        }
    }
    Ok(())
}

fn fail(code: i32, msg: &str) -> ExitCode {
    let line = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    let line = line.strip_prefix("error: ").unwrap_or(line);
    eprintln!("ERROR {code}: {line}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(2, &e.to_string()),
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.exit_code(), &e.to_string()),
    }
}
