use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use meshrl::config::ScenarioConfig;
use meshrl::pipeline::{Evaluation, Pipeline};
use meshrl::Error;

#[derive(Parser)]
#[command(name = "meshrl", version, about = "Surrogate-trained routing and admission control for a two-path service mesh")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a trace from the ground truth.
    Collect(Common),
    /// Fit the surrogate and report its accuracy.
    Fit(Common),
    /// Train one policy per configured objective.
    Train(Common),
    /// Evaluate trained policies and write the results table.
    Evaluate(Common),
    /// Dump the oracle's best action over a grid of load pairs.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Largest load in the sweep.
        #[arg(long, default_value_t = 20)]
        max_load: u32,
    },
    /// Run every stage.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force noiseless ground-truth delays.
    #[arg(long)]
    no_noise: bool,
    /// Exit with status 3 when an evaluation floor is violated.
    #[arg(long)]
    strict: bool,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_STRICT: u8 = 3;

fn load(c: &Common) -> Result<Pipeline, Error> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    cfg.apply_overrides(c.seed, c.out.as_deref(), c.no_noise);
    Pipeline::new(cfg).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        e => e,
    })
}

fn report(eval: &Evaluation) {
    println!("scenario,environment,load_pattern,steps,anr,random_anr");
    for (i, r) in eval.results.iter().enumerate() {
        let base = eval.baseline.get(i).map_or(String::new(), |b| format!("{:.4}", b.anr));
        println!("{},{},{},{},{:.4},{base}", r.scenario, r.environment, r.load_pattern, r.steps, r.anr);
    }
}

fn run(cmd: Command) -> Result<u8, Error> {
    let (common, strict) = match &cmd {
        Command::Collect(c)
        | Command::Fit(c)
        | Command::Train(c)
        | Command::Evaluate(c)
        | Command::Pipeline(c)
        | Command::Sweep { common: c, .. } => (c, c.strict),
    };
    let p = load(common)?;
    let mut status = 0;
    match cmd {
        Command::Collect(_) => {
            let t = p.collect()?;
            println!("{} records in {}", t.len(), p.config.output_dir.display());
        }
        Command::Fit(_) => {
            let (_, a) = p.fit()?;
            println!("target,nmae,naive_nmae,r2");
            println!("d1,{:.4},{:.4},{:.4}", a.nmae_d1, a.naive_nmae_d1, a.r2_d1);
            println!("d2,{:.4},{:.4},{:.4}", a.nmae_d2, a.naive_nmae_d2, a.r2_d2);
        }
        Command::Train(_) => {
            for c in p.train()? {
                println!("trained {} -> {}", c.objective.kind, meshrl::pipeline::policy_file(c.objective.kind));
            }
        }
        Command::Sweep { max_load, .. } => {
            for f in p.sweep(max_load)? {
                println!("{}", f.display());
            }
        }
        Command::Evaluate(_) | Command::Pipeline(_) => {
            let eval = p.run()?;
            report(&eval);
            for v in &eval.violations {
                eprintln!("floor violation: {v}");
            }
            if strict && !eval.violations.is_empty() {
                status = EXIT_STRICT;
            }
        }
    }
    Ok(status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e @ Error::Config(_)) => {
            error!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
