use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use typsgd::data::{gen_synthetic, write_csv, write_dataset, SyntheticRule};
use typsgd::experiment::{run_train, run_verify, ExperimentConfig, RunStatus, Suite};
use typsgd::{plot, Error};

#[derive(Parser)]
#[command(name = "typsgd", version, about = "Typicality-sampling SGD experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a config and write trajectories and a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the network init and batch-draw seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a verification suite and write a JSON report.
    Verify {
        #[arg(long)]
        suite: String,
        /// Training config for the assumption1 and growth suites.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the report; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render SVG panels from a run directory.
    Plot {
        /// Run directory holding mi.csv and gsnr.csv.
        run: PathBuf,
        /// Where to write the SVGs; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a dataset to disk.
    GenData {
        /// Dataset taken from this config; otherwise the synthetic task.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        rule_seed: u64,
        #[arg(long, default_value_t = 0)]
        label_seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

/// 1: a check failed; 2: usage or config; 3: i/o or file format.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Domain(_) | Error::Capability(_) => 1,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> typsgd::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: &[u8]) -> typsgd::Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(path: &Path) -> typsgd::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> typsgd::Result<bool> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let dir = match (out, &cfg.out_dir) {
                (Some(d), _) => d,
                (None, Some(d)) => cfg.resolve(d),
                (None, None) => return Err(Error::Config("no --out given and the config has no out_dir".into())),
            };
            let m = run_train(&cfg, &dir)?;
            println!(
                "{}: {} epochs, {} files in {}",
                m.name,
                m.end_epoch,
                m.files.len(),
                dir.display()
            );
            Ok(m.status == RunStatus::Ok)
        }
        Command::Verify {
            suite,
            config,
            out,
            seed,
        } => {
            let suite: Suite = suite.parse()?;
            let cfg = config.map(|p| load_config(&p, seed)).transpose()?;
            let report = run_verify(suite, cfg.as_ref())?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let mut json = serde_json::to_vec_pretty(&report).expect("plain data");
            json.push(b'\n');
            if let Some(dir) = out {
                mkdir(&dir)?;
                write(&dir.join(format!("verify-{}.json", suite.as_str())), &json)?;
            }
            Ok(report.passed)
        }
        Command::Plot { run, out } => {
            let dir = out.unwrap_or_else(|| run.clone());
            mkdir(&dir)?;
            for (name, svg) in plot::render_run(&run)? {
                write(&dir.join(&name), svg.as_bytes())?;
                println!("{}", dir.join(name).display());
            }
            Ok(true)
        }
        Command::GenData {
            config,
            out,
            rule_seed,
            label_seed,
            format,
        } => {
            let (train, val) = match config {
                Some(p) => {
                    let cfg = ExperimentConfig::load(&p)?;
                    cfg.dataset.load(&cfg.base_dir)?
                }
                None => (gen_synthetic(&SyntheticRule::from_seed(rule_seed), label_seed)?, None),
            };
            mkdir(&out)?;
            for d in std::iter::once(&train).chain(val.as_ref()) {
                let stem = d.split().as_str();
                let path = match format {
                    Format::Csv => out.join(format!("{stem}.csv")),
                    Format::Binary => out.join(format!("{stem}.tsds")),
                };
                match format {
                    Format::Csv => write_csv(d, &path)?,
                    Format::Binary => write_dataset(d, &path)?,
                }
                println!("{} rows -> {}", d.len(), path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
