//! Command-line front end. Exit codes: 0 healthy, 1 usage or data error,
//! 2 damage flagged.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use railstrain::cli::{
    self, BaselineArgs, BicArgs, ConfigFile, DetectArgs, GirderKind, Overrides, ReportArgs,
    SimulateArgs,
};
use railstrain::simulate::Lane;

#[derive(Parser)]
#[command(name = "railstrain", version, about = "Train-induced strain damage detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// Configuration file (TOML or JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Significance level of the confidence boundary.
    #[arg(long)]
    alpha: Option<f64>,
    /// Cumulative-variance threshold for component removal.
    #[arg(long)]
    pca_threshold: Option<f64>,
    /// AR order: "auto" or a fixed positive integer.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    order_min: Option<usize>,
    #[arg(long)]
    order_max: Option<usize>,
    /// Fraction of baseline passages used for fitting.
    #[arg(long)]
    split_fraction: Option<f64>,
    /// Seed for every randomized step.
    #[arg(long)]
    seed: Option<u64>,
    /// Speed bin width in km/h; 0 matches speeds exactly.
    #[arg(long)]
    speed_bin_width: Option<f64>,
    /// Alignment method: "truncate" or "linear_resample".
    #[arg(long)]
    align: Option<String>,
    /// Score passages against a model of a different speed bin.
    #[arg(long)]
    allow_speed_mismatch: bool,
}

impl ConfigFlags {
    fn resolve(&self) -> railstrain::Result<railstrain::detect::DetectConfig> {
        let file = match &self.config {
            Some(path) => Some(ConfigFile::load(path)?),
            None => None,
        };
        let overrides = Overrides {
            alpha: self.alpha,
            pca_threshold: self.pca_threshold,
            order: self.order.clone(),
            order_min: self.order_min,
            order_max: self.order_max,
            split_fraction: self.split_fraction,
            seed: self.seed,
            speed_bin_width: self.speed_bin_width,
            align: self.align.clone(),
            allow_speed_mismatch: self.allow_speed_mismatch,
        };
        cli::resolve_config(file.as_ref(), &overrides)
    }
}

fn default_model_dir() -> PathBuf {
    std::env::var_os("RAILSTRAIN_MODEL_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("models"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic passage dataset from an experiment plan.
    Simulate {
        /// Experiment plan (TOML or JSON); defaults to the built-in plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Output directory for baseline.csv, damaged.csv, manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the plan seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the condition counts without writing files.
        #[arg(long)]
        dry_run: bool,
        /// Sensor set: "full" (all sections) or "quarter".
        #[arg(long, default_value = "full")]
        girder: String,
        /// Lane the train runs on: "up" or "down".
        #[arg(long, default_value = "up")]
        lane: String,
    },
    /// Fit per-(channel, speed bin) baseline models.
    Baseline {
        /// Dataset files (CSV or JSON).
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Model store directory (default: $RAILSTRAIN_MODEL_DIR or ./models).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Dataset manifest carrying sensor metadata.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Write the averaged BIC curve here when the order is auto.
        #[arg(long)]
        bic_csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Score passages against the model store and write a report.
    Detect {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Report output directory.
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Merge detect reports into summary tables and plot-data CSVs.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the averaged BIC order-selection curve for a dataset.
    Bic {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Write the curve CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
    },
}

fn run() -> railstrain::Result<u8> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            plan,
            out,
            seed,
            dry_run,
            girder,
            lane,
        } => {
            let girder = match girder.as_str() {
                "full" => GirderKind::Full,
                "quarter" => GirderKind::Quarter,
                other => {
                    return Err(railstrain::Error::Config(format!(
                        "girder must be \"full\" or \"quarter\", got {other:?}"
                    )))
                }
            };
            let lane = match lane.as_str() {
                "up" => Lane::Up,
                "down" => Lane::Down,
                other => {
                    return Err(railstrain::Error::Config(format!(
                        "lane must be \"up\" or \"down\", got {other:?}"
                    )))
                }
            };
            let summary = cli::cmd_simulate(&SimulateArgs {
                plan,
                out_dir: out,
                seed,
                dry_run,
                girder,
                lane,
            })?;
            println!("{summary}");
            Ok(0)
        }
        Command::Baseline {
            data,
            models,
            manifest,
            bic_csv,
            config,
        } => {
            let cfg = config.resolve()?;
            let summaries = cli::cmd_baseline(
                &BaselineArgs {
                    data,
                    model_dir: models.unwrap_or_else(default_model_dir),
                    manifest,
                    bic_csv,
                },
                &cfg,
            )?;
            for s in &summaries {
                println!("{s}");
            }
            Ok(0)
        }
        Command::Detect {
            data,
            models,
            report,
            config,
        } => {
            let cfg = config.resolve()?;
            let outcome = cli::cmd_detect(
                &DetectArgs {
                    data,
                    model_dir: models.unwrap_or_else(default_model_dir),
                    report_dir: report,
                },
                &cfg,
            )?;
            println!(
                "scored {} rows; report at {}",
                outcome.rows,
                outcome.report_json.display()
            );
            Ok(if outcome.any_outlier { 2 } else { 0 })
        }
        Command::Report { reports, out } => {
            let summary = cli::cmd_report(&ReportArgs {
                reports,
                out_dir: out,
            })?;
            println!(
                "{} rows merged; {} components detected; tables at {} and {}",
                summary.rows,
                summary.components_detected,
                summary.detection_matrix_csv.display(),
                summary.df_vs_delta_csv.display()
            );
            Ok(0)
        }
        Command::Bic { data, out, config } => {
            let cfg = config.resolve()?;
            let curve = cli::cmd_bic(&BicArgs { data, out }, &cfg)?;
            println!("optimal AR order: {}", curve.optimum);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
