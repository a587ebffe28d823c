use std::path::PathBuf;
use std::process::ExitCode;

use bridgekit::runner::{execute, Command, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bridgekit", version, about = "Consistency diffusion bridges on toy data")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a data predictor by bridge score matching
    Pretrain(Common),
    /// Distill a consistency function from a pretrained teacher
    Distill(Common),
    /// Train a consistency function without a teacher
    Cbt(Common),
    /// Draw samples from a checkpoint
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nfe: Option<usize>,
        /// regenerate samples from recorded tapes
        #[arg(long, value_name = "TAPES")]
        replay: Option<PathBuf>,
    },
    /// Score a samples.csv against held-out data
    Eval(Common),
    /// Run the acceptance criteria
    Verify {
        #[command(flatten)]
        common: Common,
        /// run only these criteria (repeatable)
        #[arg(long = "criterion", value_name = "ID")]
        criteria: Vec<u32>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// override train.steps
    #[arg(long)]
    steps: Option<u64>,
    /// replace the dataset with this id and its default parameters
    #[arg(long)]
    dataset: Option<String>,
}

fn overrides(c: Common) -> (PathBuf, Overrides) {
    let o = Overrides { seed: c.seed, out: c.out, steps: c.steps, dataset: c.dataset, ..Overrides::default() };
    (c.config, o)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("BRIDGEKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("bridgekit: cannot size the thread pool: {e}");
        }
    }
    let (cmd, (config, o)) = match cli.command {
        Cmd::Pretrain(c) => (Command::Pretrain, overrides(c)),
        Cmd::Distill(c) => (Command::Distill, overrides(c)),
        Cmd::Cbt(c) => (Command::Cbt, overrides(c)),
        Cmd::Eval(c) => (Command::Eval, overrides(c)),
        Cmd::Sample { common, nfe, replay } => {
            let (config, o) = overrides(common);
            (Command::Sample, (config, Overrides { nfe, replay, ..o }))
        }
        Cmd::Verify { common, criteria } => {
            let (config, o) = overrides(common);
            (Command::Verify, (config, Overrides { criteria, ..o }))
        }
    };
    match execute(cmd, &config, &o) {
        Ok(dir) => {
            println!("{} finished: {}", cmd.name(), dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bridgekit {}: {e}", cmd.name());
            ExitCode::FAILURE
        }
    }
}
