use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tpaoi_harness::config::{ExperimentSpec, ExperimentToml, Scale};
use tpaoi_harness::emit;
use tpaoi_harness::experiment;
use tpaoi_harness::HarnessError;
use tpaoi_core::metrics::{HistogramScaling, RunRecord};

/// Experiment runner for the three-phase status-update laboratory.
#[derive(Parser)]
#[command(name = "tpaoi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Train the freshness-aware agent at the config's base grid point.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the experiment master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scale profile.
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        /// Output directory (defaults to `<output_dir>/train`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deploy a checkpoint greedily and write its run record.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the policy-comparison sweep over the lambda grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the transmission cost at fixed lambda (learned agent only).
    AblateOmega {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the in-flight update cap at fixed cost (learned agent only).
    AblateN {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite a training history as a learning-curve CSV.
    Curve {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the interval/age frequency table from a pairs CSV.
    Dist {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scale each count by its interval-column maximum instead of the
        /// global maximum.
        #[arg(long)]
        per_column: bool,
    },
}

fn load_spec(
    path: &PathBuf,
    seed: Option<u64>,
    scale: Option<ScaleArg>,
    out: Option<&PathBuf>,
) -> Result<ExperimentSpec, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut raw: ExperimentToml =
        toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(seed) = seed {
        raw.sim.seed = Some(seed);
    }
    if let Some(scale) = scale {
        raw.scale = Some(match scale {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        });
    }
    if let Some(out) = out {
        raw.output_dir = Some(out.display().to_string());
    }
    ExperimentSpec::resolve(raw)
}

fn print_summary(rows: &[experiment::SummaryRow]) {
    for row in rows {
        println!(
            "{} lambda={} omega={} n={} : mean_tpaoi={:.3} updates_per_access={:.3} (reps {})",
            row.policy,
            row.point.lambda,
            row.point.omega,
            row.point.n_updates,
            row.mean_tpaoi,
            row.updates_per_access,
            row.replications
        );
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, seed, scale, out } => {
            let spec = load_spec(&config, seed, scale, out.as_ref())?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&spec.output_dir).join("train"));
            let ckpt = experiment::train_single(&spec, &dir)?;
            println!("checkpoint written to {}", ckpt.display());
        }
        Command::Evaluate { config, checkpoint, episodes, seed, scale, out } => {
            let spec = load_spec(&config, None, scale, out.as_ref())?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&spec.output_dir).join("eval"));
            let record: RunRecord =
                experiment::evaluate_single(&spec, &checkpoint, episodes, seed, &dir)?;
            println!(
                "episodes={} mean_tpaoi={:.3} updates={} accesses={}",
                episodes,
                record.mean_tpaoi().unwrap_or(f64::NAN),
                record.update_count,
                record.access_count
            );
        }
        Command::Sweep { config, seed, scale, out } => {
            let spec = load_spec(&config, seed, scale, out.as_ref())?;
            let output = experiment::run_experiment(&spec)?;
            print_summary(&output.rows);
            println!("results in {}", spec.output_dir);
        }
        Command::AblateOmega { config, seed, scale, out } => {
            let spec = load_spec(&config, seed, scale, out.as_ref())?;
            let output = experiment::run_ablation_omega(&spec)?;
            print_summary(&output.rows);
            println!("results in {}", spec.output_dir);
        }
        Command::AblateN { config, seed, scale, out } => {
            let spec = load_spec(&config, seed, scale, out.as_ref())?;
            let output = experiment::run_ablation_concurrency(&spec)?;
            print_summary(&output.rows);
            println!("results in {}", spec.output_dir);
        }
        Command::Curve { history, out } => {
            let text = std::fs::read_to_string(&history)?;
            let parsed = emit::history_from_csv(&text)?;
            emit::write_file(&out, &emit::learning_curve_csv(&parsed)?)?;
            println!("curve written to {}", out.display());
        }
        Command::Dist { pairs, out, per_column } => {
            let text = std::fs::read_to_string(&pairs)?;
            let pairs = emit::pairs_from_csv(&text)?;
            let record = RunRecord { interval_aoi_pairs: pairs, ..Default::default() };
            let scaling = if per_column {
                HistogramScaling::ColumnMax
            } else {
                HistogramScaling::GlobalMax
            };
            emit::write_file(&out, &emit::interval_aoi_csv(&record, scaling)?)?;
            println!("distribution written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One machine-readable line on stderr.
            let payload = serde_json::json!({ "error": err.to_string() });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
