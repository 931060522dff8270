use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adp_track::experiment::{self, ExperimentConfig};
use adp_track::qfunc::GainDocument;
use adp_track::Error;

#[derive(Parser)]
#[command(name = "adp-track", about = "Data-driven reference tracking on a ball-and-plate rig")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Gain JSON file; repeat for several.
    #[arg(long, global = true)]
    gain: Vec<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Record excitation data.
    Collect,
    /// Learn a tracking gain with LSPI.
    Train,
    /// Closed-loop runs of the given gains.
    Validate,
    /// Learned vs model-based gain.
    Compare,
    /// Two-axis rectangle tracking.
    Rect2d,
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::NotConverged { .. } => 2,
        Error::NumericalFailure(_) | Error::SingularEvaluation { .. } | Error::NonConvexInControl { .. } => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let gains = cli
        .gain
        .iter()
        .map(|p| {
            let file = std::fs::File::open(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            GainDocument::read_json(std::io::BufReader::new(file))
        })
        .collect::<Result<Vec<_>, _>>()?;

    match cli.verb {
        Verb::Collect => {
            let rec = experiment::run_collect(&config, &cli.out)?;
            eprintln!("recorded {} transitions", rec.len());
        }
        Verb::Train => {
            let art = experiment::run_train(&config, &cli.out)?;
            let trace = &art.controller.outcome.trace;
            eprintln!("L = {:?}", art.controller.gain.to_vec());
            if !trace.converged {
                eprintln!("policy iteration stopped after {} iterations without converging", trace.iterations());
                return Ok(2);
            }
            eprintln!("converged after {} iterations", trace.iterations());
        }
        Verb::Validate => {
            if gains.is_empty() {
                return Err(Error::InvalidConfig("validate needs at least one --gain".into()));
            }
            for (i, v) in experiment::run_validate(&config, &gains, &cli.out)?.iter().enumerate() {
                eprintln!("gain {i}: final cost {:.6}", v.final_cost());
            }
        }
        Verb::Compare => {
            let report = experiment::run_compare(&config, &cli.out)?;
            eprintln!("{}", serde_json::to_string_pretty(&report)?);
            if !report.converged {
                return Ok(2);
            }
        }
        Verb::Rect2d => {
            let report = experiment::run_rect2d(&config, &gains, &cli.out)?;
            eprintln!(
                "final cost x {:.6}, y {:.6}",
                report.x.final_cost(),
                report.y.final_cost()
            );
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
