use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqmot_cli::{
    cmd_eval, cmd_generate_data, cmd_report, cmd_simulate, cmd_sweep, cmd_track, cmd_train, load_model, with_jobs, CliError,
    RunConfig,
};

#[derive(Parser)]
#[command(name = "seqmot", version, about = "Sequence-level 3D multi-object tracking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset.
    #[arg(long, global = true, default_value = "synthetic")]
    preset: String,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        scenes: usize,
    },
    /// Track every scene of a dataset.
    Track {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Disable the refinement network.
        #[arg(long)]
        no_ssr: bool,
    },
    /// Build training sequences from a dataset with ground truth.
    GenerateData {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the refinement network.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score track files against ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the MOTAR-vs-recall curve of an evaluation as CSV.
    Report {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track and score at several birth thresholds, with and without
    /// refinement.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.60, 0.75])]
        thresholds: Vec<f64>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(&cli.common.preset)?,
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    let cfg = cfg;
    with_jobs(cli.common.jobs, || match cli.command {
        Command::Simulate { out, scenes } => {
            let files = cmd_simulate(&cfg, &out, scenes)?;
            log::info!("wrote {} scenes to {}", files.len(), out.display());
            Ok(())
        }
        Command::Track {
            data,
            out,
            checkpoint,
            no_ssr,
        } => {
            let tracks = cmd_track(&cfg, &data, &out, checkpoint.as_deref(), no_ssr)?;
            log::info!("tracked {} scenes into {}", tracks.len(), out.display());
            Ok(())
        }
        Command::GenerateData { data, out } => {
            let n = cmd_generate_data(&cfg, &data, &out)?;
            log::info!("wrote {n} training sequences to {}", out.display());
            Ok(())
        }
        Command::Train { data, out, epochs } => {
            let mut cfg = cfg.clone();
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let report = cmd_train(&cfg, &data, &out)?;
            for e in &report.epochs {
                println!("epoch {} loss {:.6}", e.epoch, e.mean.total);
            }
            Ok(())
        }
        Command::Eval { data, tracks, out } => {
            let file = cmd_eval(&cfg, &data, &tracks, &out)?;
            let r = &file.report;
            println!("AMOTA {:.4} AMOTP {} MOTA {:.4}", r.amota, r.amotp.map_or("-".into(), |v| format!("{v:.4}")), r.mota);
            Ok(())
        }
        Command::Report { eval, out } => {
            let n = cmd_report(&eval, &out)?;
            log::info!("wrote {n} recall levels to {}", out.display());
            Ok(())
        }
        Command::Sweep {
            data,
            out,
            checkpoint,
            thresholds,
        } => {
            let model = match checkpoint.as_deref() {
                Some(p) => load_model(&cfg, Some(p), false)?,
                None => None,
            };
            let rows = cmd_sweep(&cfg, &data, model.as_ref(), &thresholds, &out)?;
            for r in &rows {
                println!("{} c_thresh={:.2} MOTA {:.4} AMOTA {:.4}", r.variant, r.birth_thresh, r.report.mota_best, r.report.amota);
            }
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEQMOT_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seqmot: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
