//! `dmlk`: run simulation grids, diagnose a dataset, re-aggregate results.
//!
//! Exit status is 0 on success, 2 for invalid input, 3 for runtime or data
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dmlk::config::ExperimentConfig;
use dmlk::diagnose::{diagnose, DiagnoseOptions, DEFAULT_ALPHA, DEFAULT_FOLDS, DEFAULT_SEED};
use dmlk::io::{read_dataset_file, read_reps};
use dmlk::learners::LearnerKind;
use dmlk::montecarlo::{run_grid, run_highdim_study};
use dmlk::report::write_artifacts;
use dmlk::Error;

#[derive(Parser)]
#[command(
    name = "dmlk",
    version,
    about = "Cross-fitted DML with the kappa condition-number diagnostic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo grid described by a TOML config.
    RunSim {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit DML on a CSV dataset (`y,d,x1..xp`) and report kappa.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = LearnerArg::Las)]
        learner: LearnerArg,
        #[arg(long, default_value_t = DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Rebuild the aggregate tables from a reps.csv file.
    Report {
        #[arg(long)]
        reps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replications of a high-dimensional study to include.
        #[arg(long)]
        highdim_reps: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Lin,
    Las,
    Rf,
}

impl From<LearnerArg> for LearnerKind {
    fn from(l: LearnerArg) -> Self {
        match l {
            LearnerArg::Lin => LearnerKind::Lin,
            LearnerArg::Las => LearnerKind::Las,
            LearnerArg::Rf => LearnerKind::Rf,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> dmlk::Result<()> {
    match command {
        Command::RunSim { config, out } => run_sim(&config, out),
        Command::Diagnose {
            data,
            learner,
            folds,
            alpha,
            seed,
            json,
        } => {
            let ds = read_dataset_file(&data)?;
            let opts = DiagnoseOptions {
                learner: learner.into(),
                k_folds: folds,
                alpha,
                seed,
            };
            let report = diagnose(&ds, &opts)?;
            print!("{report}");
            if let Some(path) = json {
                std::fs::write(path, report.to_json() + "\n")?;
            }
            Ok(())
        }
        Command::Report {
            reps,
            out,
            highdim_reps,
        } => {
            let records = read_reps(std::fs::File::open(&reps)?)?;
            let hd = highdim_reps
                .map(|p| std::fs::File::open(p).map_err(Error::from).and_then(read_reps))
                .transpose()?;
            finish(&out, &records, hd.as_deref())
        }
    }
}

fn run_sim(config: &Path, out: Option<PathBuf>) -> dmlk::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output_dir`".into()))?;
    let cells = cfg.cells()?;
    eprintln!("running {} cells × {} replications", cells.len(), cfg.b_reps);
    let records: Vec<_> = run_grid(&cells)?.into_iter().flatten().collect();
    let hd = match cfg.highdim() {
        Some(hd_cfg) => {
            eprintln!(
                "running high-dimensional study ({} overlap levels × {} replications)",
                hd_cfg.r2_grid.len(),
                hd_cfg.b_reps
            );
            Some(run_highdim_study(&hd_cfg)?.1)
        }
        None => None,
    };
    finish(&out, &records, hd.as_deref())
}

fn finish(
    out: &Path,
    records: &[dmlk::montecarlo::RepRecord],
    hd: Option<&[dmlk::montecarlo::RepRecord]>,
) -> dmlk::Result<()> {
    let existed = out.exists();
    let result = write_artifacts(out, records, hd);
    match &result {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }
        Err(_) if !existed => {
            let _ = std::fs::remove_dir(out);
        }
        Err(_) => {}
    }
    result.map(|_| ())
}
