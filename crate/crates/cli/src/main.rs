use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "stepwise", version, about = "Stepwise content planning: oracles, training, decoding and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EvalTask {
    Rouge,
    Plan,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DldArg {
    Restricted,
    Unrestricted,
}

#[derive(Subcommand)]
enum Command {
    /// Greedy Rouge oracles for a document file.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a model and writes best.ckpt, last.ckpt and report.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rotowire plans for the training games, matched by id.
        #[arg(long)]
        train_plans: Option<PathBuf>,
        #[arg(long)]
        valid_plans: Option<PathBuf>,
    },
    /// Decodes plans with a trained checkpoint.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        triblk: bool,
    },
    /// Scores generated summaries or plans against references.
    Eval {
        #[arg(long, value_enum)]
        task: EvalTask,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stem tokens before Rouge.
        #[arg(long)]
        stem: bool,
        #[arg(long, value_enum, default_value = "restricted")]
        dld: DldArg,
        /// Leave names, cities and dates out of CS.
        #[arg(long)]
        drop_name_city_date: bool,
        /// Games supplying record values for CS.
        #[arg(long)]
        games: Option<PathBuf>,
    },
    /// Renders every game's records as templated unit strings.
    Linearize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs the gradient and invariant suite.
    Selfcheck {
        /// Also write the results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan length histograms as CSV.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Oracle { config, input, out } => commands::oracle(&config, &input, &out),
        Command::Train { config, train, valid, out, train_plans, valid_plans } => {
            commands::train(&config, &train, &valid, &out, train_plans.as_deref(), valid_plans.as_deref())
        }
        Command::Decode { config, ckpt, input, out, beam, max_steps, triblk } => {
            commands::decode(&config, &ckpt, &input, &out, beam, max_steps, triblk)
        }
        Command::Eval { task, gen, reference, out, stem, dld, drop_name_city_date, games } => {
            let options = commands::EvalOptions { stem, dld, drop_name_city_date, games };
            match task {
                EvalTask::Rouge => commands::eval_rouge(&gen, &reference, &out, &options),
                EvalTask::Plan => commands::eval_plan(&gen, &reference, &out, &options),
            }
        }
        Command::Linearize { input, out } => commands::linearize(&input, &out),
        Command::Selfcheck { out } => commands::selfcheck(out.as_deref()),
        Command::Stats { input, out } => commands::stats(&input, &out),
    };
    match outcome {
        Ok(errors) if errors.is_empty() => ExitCode::SUCCESS,
        Ok(errors) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            eprintln!("{} error(s)", errors.len());
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
