use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use ropnet::config::{keys_help, RunConfig};
use ropnet::pipeline::{self, checkpoint_file};
use ropnet::{Error, ModelKind};

/// Rate-of-penetration models: generate data, train, evaluate, compare,
/// predict and explain.
#[derive(Parser, Debug)]
#[command(name = "ropnet", version)]
struct Cli {
    /// key = value config file; absent keys take their defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides train.seed and data.synthetic.seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides output.dir
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides model.kind
    #[arg(long, global = true, value_name = "KIND")]
    model: Option<ModelKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic benchmark CSV and its ground-truth descriptor
    GenData,
    /// Train one model and write its loss curve, metrics and checkpoint
    Train,
    /// Score a checkpoint on the test split
    Eval {
        /// Defaults to <out>/checkpoint_<kind>.roph
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Predict ROP for every window of a CSV
    Predict {
        /// Defaults to <out>/checkpoint_<kind>.roph
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
    },
    /// Train every kind in compare.models on shared data and seed
    Compare,
    /// Permutation importance and local surrogates for a checkpoint
    Explain {
        /// Defaults to <out>/checkpoint_<kind>.roph
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> ropnet::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(kind) = cli.model {
        cfg.kind = kind;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: &Cli) -> ropnet::Result<i32> {
    let cfg = load_config(cli)?;
    let default_checkpoint = || cfg.output_dir.join(checkpoint_file(cfg.kind));
    match &cli.command {
        Command::GenData => {
            let path = pipeline::run_gen_data(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let outcome = pipeline::run_train(&cfg)?;
            println!("{}", to_json(&outcome.metrics));
        }
        Command::Eval { checkpoint } => {
            let metrics = pipeline::run_eval(&cfg, checkpoint.as_deref())?;
            println!("{}", to_json(&metrics));
        }
        Command::Predict { checkpoint, input } => {
            let checkpoint = checkpoint.clone().unwrap_or_else(default_checkpoint);
            let rows = pipeline::run_predict(&checkpoint, input, &cfg.output_dir)?;
            println!(
                "wrote {} predictions to {}",
                rows.len(),
                cfg.output_dir.join(pipeline::PREDICTIONS_FILE).display()
            );
        }
        Command::Compare => {
            let outcome = pipeline::run_compare(&cfg)?;
            print!("{}", outcome.to_csv());
            for row in &outcome.rows {
                if let Err(e) = &row.result {
                    eprintln!("{}: {e}", row.kind.slug());
                }
            }
            return Ok(outcome.exit_code());
        }
        Command::Explain { checkpoint } => {
            let outcome = pipeline::run_explain(&cfg, checkpoint.as_deref())?;
            print!("{}", outcome.importance.to_csv());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let keys = keys_help();
    let command = Cli::command()
        .after_help(keys.clone())
        .mut_subcommands(|sub| sub.after_help(keys.clone()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            report_hint(&e);
            e.exit_code()
        }
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}

fn report_hint(e: &Error) {
    if matches!(e, Error::Config(_)) {
        eprintln!("run with --help for the accepted config keys");
    }
}
