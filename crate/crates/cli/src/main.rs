use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fim_core::config::RunConfig;
use fim_core::data::load_jsonl;
use fim_core::harness::{self, GridAxis};
use fim_core::{FimError, Result};

#[derive(Parser)]
#[command(name = "fim", version, about = "Generate data, train, evaluate and ablate the interest model")]
struct Cli {
    /// Default dataset directory.
    #[arg(long, global = true, env = "FIM_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; defaults to the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a dataset and write checkpoint, metrics and vocabularies.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory or JSONL file; defaults to the data directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Score the test split with a trained model directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train once per grid point and write one CSV row each.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Axis as `key=a|b|c`; `views=powerset` enumerates all view subsets.
        #[arg(long = "grid")]
        grid: Vec<String>,
        /// File with one `key = a|b|c` axis per line.
        #[arg(long)]
        grid_file: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check on a toy batch.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, as `key=value`. Repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Shorthand for `fpem.enabled`.
    #[arg(long, value_parser = ["on", "off"])]
    fpem: Option<String>,
    /// Shorthand for `views`, e.g. `author,category` or `none`.
    #[arg(long)]
    views: Option<String>,
    /// Shorthand for `search`.
    #[arg(long, value_parser = ["hard", "soft"])]
    search: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut overrides = self.set.clone();
        let shorthands = [
            ("fpem.enabled", self.fpem.clone()),
            ("views", self.views.clone()),
            ("search", self.search.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("epochs", self.epochs.map(|e| e.to_string())),
        ];
        for (key, value) in shorthands {
            if let Some(v) = value {
                overrides.push(format!("{key}={v}"));
            }
        }
        cfg.apply_overrides(&overrides)?;
        Ok(cfg)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| FimError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let data_dir = cli.data_dir;
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = config.resolve()?;
            let out = out.unwrap_or(data_dir);
            let m = harness::cmd_generate(&cfg, &out)?;
            println!(
                "wrote {} users, {} events, {} samples to {} (config {})",
                m.users,
                m.events,
                m.samples,
                out.display(),
                &m.config_hash[..12]
            );
        }
        Command::Train { config, data, out } => {
            let cfg = config.resolve()?;
            let result = harness::cmd_train(&cfg, &data.unwrap_or(data_dir), &out)?;
            print!("{}", harness::metrics_csv(&result.rows));
        }
        Command::Eval { model, data } => {
            print!("{}", harness::cmd_eval(&model, &data.unwrap_or(data_dir))?);
        }
        Command::Ablate { config, grid, grid_file, data, out } => {
            let cfg = config.resolve()?;
            let mut axes = match grid_file {
                Some(path) => harness::parse_grid(&read_text(&path)?)?,
                None => Vec::new(),
            };
            for g in &grid {
                axes.push(GridAxis::parse(g)?);
            }
            let ds = load_jsonl(&harness::data_file(&data.unwrap_or(data_dir)))?;
            let csv = harness::ablation_csv(&harness::cmd_ablate(&cfg, &axes, &ds)?);
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| FimError::io(&path, e))?,
                None => print!("{csv}"),
            }
        }
        Command::Gradcheck { config } => {
            let report = harness::cmd_gradcheck(&config.resolve()?)?;
            print!("{}", report.render());
            if !report.passed() {
                return Err(FimError::Numeric(format!("max relative error {:.3e}", report.max_rel_err)));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
