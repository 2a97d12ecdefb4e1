use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use kexchange::bt::{fit_attribute, fit_direct, FitOptions, WinMatrix};
use kexchange::error::{Error, Result};
use kexchange::experiment::{run_experiment, ExperimentSpec};
use kexchange::io as files;
use kexchange::sim::{run_simulation, SimulationConfig};
use kexchange::weights::{monotone_transform, rank_linear, ProfileWeights, Transform};
use kexchange::{clear, Mode};

#[derive(Parser)]
#[command(name = "kexchange", version, about = "Prioritized kidney-exchange clearing and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Prioritized,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Direct,
    Attribute,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Identity,
    Sqrt,
    Rank,
}

#[derive(Subcommand)]
enum Command {
    /// Clear one compatibility graph and print the selected cycles as JSON.
    Clear {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 3)]
        cycle_cap: usize,
        #[arg(long, default_value_t = 0)]
        chain_cap: usize,
        /// Profile weights; defaults to the bundled direct-fit scores.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "standard")]
        mode: ModeArg,
    },
    /// Fit Bradley-Terry scores to pairwise comparisons.
    Estimate {
        #[arg(long)]
        comparisons: PathBuf,
        #[arg(long, value_enum, default_value = "direct")]
        model: ModelArg,
        /// Pseudo-count added to every off-diagonal cell (direct model).
        #[arg(long, default_value_t = 0.5)]
        pseudo_count: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive a weight vector from fitted scores.
    Weights {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value = "identity")]
        transform: TransformArg,
        #[arg(long, default_value_t = 1.0)]
        top: f64,
        #[arg(long, default_value_t = 0.001)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pool simulation; run r uses seed `seed + r`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an experiment spec and write raw.csv and summary.csv.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print a summary.csv as an aligned table.
    Report { summary: PathBuf },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::from(e).context(format!("creating {}", path.display())))
}

/// Writes `text` to `path`, or stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::from(e).context(format!("writing {}", p.display()))),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Clear {
            graph,
            cycle_cap,
            chain_cap,
            weights,
            mode,
        } => {
            let graph = files::read_graph(&graph)?;
            let weights = match weights {
                Some(path) => files::read_weights(&path)?,
                None => ProfileWeights::table5_direct(),
            };
            let mode = match mode {
                ModeArg::Standard => Mode::Standard,
                ModeArg::Prioritized => Mode::Prioritized,
            };
            let result = clear(&graph, cycle_cap, chain_cap, &weights, mode)?;
            let json = serde_json::to_string_pretty(&files::ClearingOutput::from(&result))?;
            emit(None, &(json + "\n"))
        }
        Command::Estimate {
            comparisons,
            model,
            pseudo_count,
            out,
        } => {
            let records = files::read_comparisons_file(&comparisons)?;
            let matrix = WinMatrix::from_records(&records);
            let fit = match model {
                ModelArg::Direct => fit_direct(
                    &matrix,
                    &FitOptions {
                        pseudo_count,
                        ..FitOptions::default()
                    },
                )?,
                ModelArg::Attribute => {
                    let options = FitOptions::default();
                    let model = fit_attribute(&matrix, options.tolerance, 100)?;
                    if model.separated {
                        eprintln!("warning: perfect separation, coefficients capped");
                    }
                    model.derived_scores
                }
            };
            if !fit.converged {
                eprintln!("warning: fit stopped after {} iterations without converging", fit.iterations);
            }
            let file = files::WeightsFile::from_fit(&fit)?;
            emit(out.as_deref(), &(file.to_json() + "\n"))
        }
        Command::Weights {
            scores,
            transform,
            top,
            step,
            out,
        } => {
            let scores = files::read_weights(&scores)?;
            let vector = match transform {
                TransformArg::Identity => monotone_transform(&scores, Transform::Identity)?,
                TransformArg::Sqrt => monotone_transform(&scores, Transform::SquareRoot)?,
                TransformArg::Rank => rank_linear(&scores, top, step)?,
            };
            let file = files::WeightsFile::from_scores(*vector.weights());
            emit(out.as_deref(), &(file.to_json() + "\n"))
        }
        Command::Simulate {
            config,
            runs,
            out,
            trace,
        } => {
            let config: SimulationConfig = read_json(&config)?;
            config.validate()?;
            let metrics = (0..runs)
                .into_par_iter()
                .map(|run| {
                    let seeded = SimulationConfig {
                        seed: config.seed.wrapping_add(run as u64),
                        ..config.clone()
                    };
                    run_simulation(&seeded).map_err(|e| e.context(format!("run {run}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match out {
                Some(path) => files::write_simulation_csv(create(&path)?, &metrics)?,
                None => files::write_simulation_csv(io::stdout().lock(), &metrics)?,
            }
            if let Some(path) = trace {
                files::write_trace_csv(create(&path)?, &metrics)?;
            }
            Ok(())
        }
        Command::Experiment { spec, out_dir } => {
            let spec: ExperimentSpec = read_json(&spec)?;
            let result = run_experiment(&spec)?;
            fs::create_dir_all(&out_dir)
                .map_err(|e| Error::from(e).context(format!("creating {}", out_dir.display())))?;
            files::write_raw_csv(create(&out_dir.join("raw.csv"))?, &result.raw)?;
            files::write_summary_csv(create(&out_dir.join("summary.csv"))?, &result.summary)?;
            Ok(())
        }
        Command::Report { summary } => {
            let file = fs::File::open(&summary)
                .map_err(|e| Error::from(e).context(format!("reading {}", summary.display())))?;
            let rows = files::read_summary_csv(file).map_err(|e| e.context(summary.display().to_string()))?;
            emit(None, &files::render_report(&rows))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
