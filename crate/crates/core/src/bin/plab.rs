use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perceptron_lab::cli::{self, Command, ModelBlock, RunConfig, Settings};
use perceptron_lab::{Activation, DisorderSpec, LabError};

/// Exact enumeration and Monte Carlo experiments for Ising perceptron models.
#[derive(Parser)]
#[command(name = "plab", version)]
struct Cli {
    /// Worker threads (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: runs/<command>-<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count the solutions of one sampled instance.
    Enumerate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value = "half_space:0")]
        activation: Activation,
        #[arg(long, default_value = "gaussian")]
        disorder: DisorderSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 30)]
        cap: usize,
        /// Also write results.csv and manifest.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract a certified block-separated family.
    Separation(RunArgs),
    /// Monte Carlo checks of probability bounds.
    Verify {
        #[command(subcommand)]
        check: VerifyCmd,
    },
    /// Satisfiability curve across a grid of constraint densities.
    Threshold(RunArgs),
    /// Spread of the truncated free energy across dimensions.
    Concentration(RunArgs),
    /// Truncated free energy under several disorder laws.
    Universality(RunArgs),
    /// Probability of a sharp drop after adding constraints.
    Slowdec(RunArgs),
    /// Gap between soft-truncated and hard free energies.
    Tempgap(RunArgs),
    /// Closed-form functions.
    Formulas {
        #[command(subcommand)]
        action: FormulasCmd,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Tail of the add-one-constraint ratio.
    Addone(RunArgs),
    /// All-fail frequency of separated gaussian processes.
    Allfail(RunArgs),
    /// Supremum of the canonical process over a point set.
    Sup(RunArgs),
    /// Gap between disorder and gaussian expectations.
    Clt(RunArgs),
}

#[derive(Subcommand)]
enum FormulasCmd {
    /// Evaluate NAME with key=value arguments; prints name=value lines.
    Eval { name: String, args: Vec<String> },
}

fn run_config(command: Command, args: &RunArgs) -> Result<(), LabError> {
    let config = cli::load_config(command, &args.config)?;
    finish(&config, args.out.clone())
}

fn finish(config: &RunConfig, out: Option<PathBuf>) -> Result<(), LabError> {
    let dir = out.unwrap_or_else(|| cli::default_out_dir(config));
    let manifest = cli::run(config, &dir)?;
    let csv = std::fs::read_to_string(dir.join("results.csv"))?;
    print!("{csv}");
    log::info!(
        "wrote {} files to {} in {:.2}s",
        manifest.files.len() + 1,
        dir.display(),
        manifest.wall_seconds
    );
    Ok(())
}

fn dispatch(command: Cmd) -> Result<(), LabError> {
    match command {
        Cmd::Enumerate {
            n,
            m,
            activation,
            disorder,
            seed,
            delta,
            cap,
            out,
        } => {
            let settings = Settings {
                seed: Some(seed),
                n: Some(n),
                m: Some(m),
                delta: Some(delta),
                cap: Some(cap),
                model: Some(ModelBlock {
                    activation: Some(activation),
                    disorder: Some(disorder),
                    disorders: None,
                }),
                ..Default::default()
            };
            let config = cli::from_settings(Command::Enumerate, settings)?;
            match out {
                Some(dir) => finish(&config, Some(dir)),
                None => {
                    print!("{}", cli::execute(&config)?.table.to_csv());
                    Ok(())
                }
            }
        }
        Cmd::Separation(a) => run_config(Command::Separation, &a),
        Cmd::Verify { check } => match check {
            VerifyCmd::Addone(a) => run_config(Command::VerifyAddone, &a),
            VerifyCmd::Allfail(a) => run_config(Command::VerifyAllfail, &a),
            VerifyCmd::Sup(a) => run_config(Command::VerifySup, &a),
            VerifyCmd::Clt(a) => run_config(Command::VerifyClt, &a),
        },
        Cmd::Threshold(a) => run_config(Command::Threshold, &a),
        Cmd::Concentration(a) => run_config(Command::Concentration, &a),
        Cmd::Universality(a) => run_config(Command::Universality, &a),
        Cmd::Slowdec(a) => run_config(Command::Slowdec, &a),
        Cmd::Tempgap(a) => run_config(Command::Tempgap, &a),
        Cmd::Formulas {
            action: FormulasCmd::Eval { name, args },
        } => {
            print!("{}", cli::format_assignments(&cli::eval_formula(&name, &args)?));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Cli::parse();
    let outcome = cli::with_threads(args.threads, || dispatch(args.command)).and_then(|r| r);
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
