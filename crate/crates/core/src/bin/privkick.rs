use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use privkick::experiment::{run_experiment, summarize, ExperimentConfig};
use privkick::mechanism::DirichletMechanism;
use privkick::privacy::{price, MechanismConfig};
use privkick::rng::RngState;
use privkick::simplex::SimplexVector;

#[derive(Parser)]
#[command(name = "privkick", version, about = "Dirichlet-mechanism kickstarting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample from or price the Dirichlet mechanism
    #[command(subcommand)]
    Mech(Mech),
    /// Run or summarize experiments
    #[command(subcommand)]
    Exp(Exp),
}

#[derive(Subcommand)]
enum Mech {
    /// Draw N privatized answers for one policy, one CSV row per draw
    Sample(SampleArgs),
    /// Print the (epsilon, delta) certificate of one mechanism as JSON
    Price(PriceArgs),
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    k: f64,
    /// comma-separated policy entries
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pi: Vec<f64>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// probability floor; defaults to the smallest entry of the policy
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args)]
struct PriceArgs {
    #[arg(long)]
    k: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    b: f64,
    #[arg(long = "L")]
    lipschitz: f64,
    #[arg(long)]
    m: usize,
    /// half-width of the delta estimate
    #[arg(long, default_value_t = 0.005)]
    t: f64,
    #[arg(long, default_value_t = 0.95)]
    conf: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Exp {
    /// Run the experiment described by a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize the seed CSVs of one arm directory
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
}

type BoxError = Box<dyn std::error::Error>;

fn sample(args: SampleArgs) -> Result<(), BoxError> {
    let pi = SimplexVector::new(args.pi)?;
    let eta = args.eta.unwrap_or_else(|| pi.min_entry());
    let pi = pi.restrict(eta)?;
    let mech = DirichletMechanism::new(args.k, eta, pi.dim())?;
    let mut rng = RngState::from_seed(args.seed);
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    out.write_record((1..=pi.dim()).map(|i| format!("z{i}")))?;
    for _ in 0..args.n {
        let z = mech.sample(&pi, &mut rng)?;
        out.write_record(z.entries().iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

fn price_cmd(args: PriceArgs) -> Result<(), BoxError> {
    let cfg = MechanismConfig {
        k: args.k,
        eta: args.eta,
        tau: args.tau,
        b: args.b,
        lipschitz: args.lipschitz,
        m: args.m,
    };
    let mut rng = RngState::from_seed(args.seed);
    let params = price(&cfg, args.t, args.conf, &mut rng)?;
    println!("{}", serde_json::to_string(&params)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), BoxError> {
    match cli.command {
        Command::Mech(Mech::Sample(args)) => sample(args),
        Command::Mech(Mech::Price(args)) => price_cmd(args),
        Command::Exp(Exp::Run { config }) => {
            let cfg = ExperimentConfig::load(&config)?;
            for arm in run_experiment(&cfg)? {
                let last = arm.summary.median.last().copied().flatten();
                eprintln!(
                    "{}: {} seeds, final median return {}",
                    arm.arm.name,
                    arm.runs.len(),
                    last.map_or("n/a".into(), |v| format!("{v:.3}"))
                );
            }
            eprintln!("wrote {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Exp(Exp::Summarize { dir }) => {
            let summary = summarize(&dir)?;
            let json = serde_json::to_string_pretty(&summary)?;
            std::fs::write(dir.join("summary.json"), &json)?;
            println!("{json}");
            Ok(())
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
