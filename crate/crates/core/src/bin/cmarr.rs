use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmarr::data::{generate_synthetic, load_dataset, save_dataset, Dataset};
use cmarr::eval::{
    cross_validate, evaluate_checkpoint, export_embeddings, run_ablation, sweep,
    train_and_evaluate, Variant,
};
use cmarr::trainer::{Checkpoint, Config};
use cmarr::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cmarr",
    version,
    about = "Missing-modality emotion recognition experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus described by the config.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model (or every fold when `folds` is set).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Condition matrix of a checkpoint on its test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train every ablation variant over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// One run per value of a loss weight.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the synthetic corpus of the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Pooled reconstructed and real vectors of the test split.
    ExportEmb {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn check_compatible(ck: &Checkpoint, data: &Dataset) -> Result<()> {
    if ck.dims != data.dims || ck.class_names != data.class_names {
        return Err(Error::Argument(format!(
            "checkpoint was trained on widths {:?} with classes {:?}, data has {:?} with {:?}",
            ck.dims, ck.class_names, data.dims, data.class_names
        )));
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = generate_synthetic(&cfg.synth, cfg.data_seed)?;
            save_dataset(&data, &out)?;
            println!("wrote {} instances to {}", data.len(), out.display());
        }
        Cmd::Train { config, data, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = load_dataset(&data)?;
            if cfg.train.folds > 0 {
                let report = cross_validate(&cfg, &data, Some(&out))?;
                write(&out.join("cv_report.tsv"), &report.to_tsv())?;
                print!("{}", report.to_tsv());
            } else {
                let split = cfg.split(&data)?;
                let (report, _) = train_and_evaluate(&cfg, &data, &split, Some(&out))?;
                write(&out.join("test_report.tsv"), &report.to_tsv())?;
                print!("{}", report.to_tsv());
            }
        }
        Cmd::Eval {
            checkpoint,
            data,
            report,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let data = load_dataset(&data)?;
            check_compatible(&ck, &data)?;
            let split = ck.config()?.split(&data)?;
            let r = evaluate_checkpoint(&ck, &data, &split.test)?;
            write(&report, &r.to_tsv())?;
            print!("{}", r.to_tsv());
        }
        Cmd::Ablate {
            config,
            data,
            seeds,
            report,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = load_dataset(&data)?;
            let split = cfg.split(&data)?;
            let table = run_ablation(&cfg, &data, &split, &Variant::ALL, seeds)?;
            write(&report, &table.to_tsv())?;
            print!("{}", table.to_tsv());
        }
        Cmd::Sweep {
            config,
            data,
            param,
            values,
            report,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = match data {
                Some(d) => load_dataset(&d)?,
                None => generate_synthetic(&cfg.synth, cfg.data_seed)?,
            };
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Argument(format!("bad sweep value {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let split = cfg.split(&data)?;
            let text = sweep(&cfg, &data, &split, &param, &values)?;
            write(&report, &text)?;
            print!("{text}");
        }
        Cmd::ExportEmb {
            checkpoint,
            data,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let data = load_dataset(&data)?;
            check_compatible(&ck, &data)?;
            let split = ck.config()?.split(&data)?;
            let n = export_embeddings(&ck.model()?, &ck.params, &data, &split.test, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error\tusage\t{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error\t{}\t{}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
