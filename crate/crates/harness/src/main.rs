use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use courtcast::data::write_neutral_csv;
use courtcast::models::ModelKind;
use courtcast_harness::checkpoint::Checkpoint;
use courtcast_harness::config::{DatasetManifest, ExperimentConfig, ExperimentId, Targets};
use courtcast_harness::dataset::{load_games, manifest_hash, prepare_series};
use courtcast_harness::experiments::{evaluate_checkpoint, run, run_training, Prepared, RunSummary};
use courtcast_harness::report::{csv_string, ensure_writable};
use courtcast_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "forecast", version, about = "Multi-agent trajectory forecasting benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset manifest, report span counts, optionally export neutral CSV.
    Ingest {
        manifest: PathBuf,
        /// Write one `t,object_id,team_id,x,y` CSV per game here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured models and save checkpoints.
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Input-length sweep.
    Exp1 {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Unseen games, same team.
    Exp2 {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train on one team, test on another.
    Exp3 {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on the test split of a dataset manifest.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Window stride in seconds.
        #[arg(long, default_value_t = 0.16)]
        stride_s: f64,
        /// Write `report.csv` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated horizons for the printed table (all steps when empty).
        #[arg(long, value_delimiter = ',')]
        horizons_s: Vec<f64>,
    },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated model names.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Comma-separated input lengths in seconds.
    #[arg(long = "history-s", value_delimiter = ',')]
    history_s: Option<Vec<f64>>,
    #[arg(long = "forecast-s")]
    forecast_s: Option<f64>,
}

impl Overrides {
    fn apply(self, c: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = self.out {
            c.output = o;
        }
        if let Some(ms) = self.models {
            c.models = ms.iter().map(|m| m.parse::<ModelKind>()).collect::<Result<_, _>>()?;
        }
        if let Some(h) = self.history_s {
            c.history_s = h;
        }
        if let Some(f) = self.forecast_s {
            c.forecast_s = f;
        }
        Ok(())
    }
}

fn load_config(path: &PathBuf, overrides: Overrides, id: Option<ExperimentId>) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(path)?;
    overrides.apply(&mut c)?;
    if let Some(id) = id {
        c.experiment = id;
    }
    Ok(c)
}

fn print_summary(s: &RunSummary) -> Result<()> {
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    let steps: Vec<usize> = s
        .results
        .first()
        .map(|r| courtcast_harness::report::table_steps(&s.config.table_horizons_s, r.report.steps()))
        .unwrap_or_default();
    print!("{}", csv_string(&s.reports(), Some(&steps))?);
    if let Some(d) = &s.deltas {
        print!("{}", courtcast_harness::experiments::deltas_csv(d));
    }
    eprintln!("outputs in {}", s.config.output.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { manifest, out } => {
            let m = DatasetManifest::load(&manifest)?;
            if let Some(dir) = &out {
                ensure_writable(dir)?;
            }
            let games = load_games(&m)?;
            let (series, report) = prepare_series(&games, 2)?;
            println!("manifest_hash {}", manifest_hash(&m)?);
            println!(
                "games {} spans {} series {} frames {} flagged_moments {}",
                games.len(),
                report.spans,
                series.len(),
                series.iter().map(|s| s.len()).sum::<usize>(),
                report.flagged_moments
            );
            if let Some(dir) = out {
                for g in &games {
                    let path = dir.join(format!("{}.csv", g.game_id));
                    std::fs::write(&path, write_neutral_csv(g)).map_err(|e| HarnessError::io(&path, e))?;
                }
            }
        }
        Command::Train { config, overrides } => {
            let c = load_config(&config, overrides, None)?;
            print_summary(&run_training(&Prepared::new(c)?)?)?;
        }
        Command::Exp1 { config, overrides } => {
            let c = load_config(&config, overrides, Some(ExperimentId::InputLengthSweep))?;
            print_summary(&run(&Prepared::new(c)?)?)?;
        }
        Command::Exp2 { config, overrides } => {
            let c = load_config(&config, overrides, Some(ExperimentId::WithinTeam))?;
            print_summary(&run(&Prepared::new(c)?)?)?;
        }
        Command::Exp3 { config, overrides } => {
            let c = load_config(&config, overrides, Some(ExperimentId::CrossTeam))?;
            print_summary(&run(&Prepared::new(c)?)?)?;
        }
        Command::Eval {
            checkpoint,
            dataset,
            stride_s,
            out,
            horizons_s,
        } => {
            if let Some(dir) = &out {
                ensure_writable(dir)?;
            }
            let ckpt = Checkpoint::load(&checkpoint)?;
            let manifest = DatasetManifest::load(&dataset)?;
            let stride = courtcast_harness::config::seconds_to_steps(stride_s)?;
            let (report, warnings) = evaluate_checkpoint(&ckpt, &manifest, Targets::AllPlayers, stride)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let steps = courtcast_harness::report::table_steps(&horizons_s, report.steps());
            let text = csv_string(&[report], (!steps.is_empty()).then_some(&steps[..]))?;
            match out {
                Some(dir) => {
                    let path = dir.join("report.csv");
                    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
