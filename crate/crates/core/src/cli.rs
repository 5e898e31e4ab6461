//! Command-line front end: `pretrain`, `train`, `plot` and `report`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{cmd_plot, cmd_pretrain, cmd_report, cmd_train, ExperimentConfig, Figure};

#[derive(Debug, Parser)]
#[command(name = "noisy-ssl", version, about = "Self-supervised pretraining for learning with noisy labels")]
pub struct Cli {
    /// Experiment config (TOML). Without it the desk-scale defaults are used.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of trials; overrides the config.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Use the full epoch budgets instead of the desk-scale ones.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Results directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured pretext task and save encoder checkpoints.
    Pretrain,
    /// Inject label noise and retrain with the configured method.
    Train,
    /// Render figures from the results directory.
    Plot {
        /// noise-curve, ce-bars, lnl-curves or all.
        #[arg(default_value = "all")]
        figure: String,
    },
    /// Print mean +- std of BEST/LAST per method, pretext and noise rate.
    Report,
}

impl Cli {
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if self.paper_scale {
            cfg = cfg.paper_scale();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn results_dir(&self) -> Result<PathBuf> {
        match &self.out {
            Some(out) => Ok(out.clone()),
            None => Ok(self.experiment_config()?.output_dir),
        }
    }
}

/// Execute a parsed command; returns the text to print on success.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Pretrain => {
            let cfg = cli.experiment_config()?;
            let paths = cmd_pretrain(&cfg)?;
            Ok(paths.iter().map(|p| format!("{}\n", p.display())).collect())
        }
        Command::Train => {
            let cfg = cli.experiment_config()?;
            let report = cmd_train(&cfg)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            let mut out = format!(
                "{} runs written to {}\n",
                report.records.len(),
                cfg.output_dir.display()
            );
            for s in &report.summaries {
                out.push_str(&format!(
                    "{} + {} p={:.2} seed={} BEST {:.4} LAST {:.4}\n",
                    s.method, s.pretext, s.p, s.seed, s.best, s.last
                ));
            }
            Ok(out)
        }
        Command::Plot { figure } => {
            let dir = cli.results_dir()?;
            let figures = if figure == "all" {
                Figure::ALL.to_vec()
            } else {
                vec![figure.parse()?]
            };
            let mut out = String::new();
            for f in figures {
                let o = cmd_plot(&dir, f)?;
                out.push_str(&format!("{}\n{}\n{}\n", o.svg.display(), o.png.display(), o.csv.display()));
            }
            Ok(out)
        }
        Command::Report => cmd_report(cli.results_dir()?),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e.category() {
        "usage" | "config" => 2,
        _ => 1,
    }
}

/// Parse, run and report; the return value is the process exit code.
/// Failures print a single `error[<category>]: <message>` line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}
