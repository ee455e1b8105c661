use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use symnet::composition::CompositionCertificate;
use symnet::pipeline::{complexity_sweep, CoupledSummary, Pipeline, PipelineConfig, SimulationSummary};

#[derive(Parser)]
#[command(name = "symnet", version, about = "Data-driven symbolic models and safety controllers for black-box networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of subsystems, overriding `M`.
    #[arg(long, global = true)]
    m: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Query the oracle and write the dataset.
    Sample,
    /// Build the symbolic model.
    Abstract,
    /// Solve the scenario program for the certificate.
    Asbf,
    /// Estimate the Lipschitz constants.
    Lipschitz,
    /// Compute the data coverage radius.
    Sigma,
    /// Check the compositional condition and the error bound.
    Compose,
    /// Solve the safety games.
    Synthesize,
    /// Closed-loop and coupled simulations.
    Simulate,
    /// Every stage, retrying with more data or a higher degree on failure.
    Run,
    /// Sample counts against the number of subsystems.
    Sweep {
        /// Increasing list of subsystem counts.
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
        m_values: Vec<usize>,
    },
    /// Render report.md and trajectories.svg from existing artifacts.
    Report,
}

fn load(cli: &Cli) -> symnet::Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| symnet::Error::Config("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = cli.m {
        cfg.m = m;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> symnet::Result<bool> {
    let cfg = load(cli)?;
    if let Command::Sweep { m_values } = &cli.command {
        let t = complexity_sweep(&cfg, None, m_values)?;
        println!("M,compositional,log10_monolithic");
        for r in &t.rows {
            println!("{},{},{:.3}", r.m, r.compositional, r.monolithic_log10);
        }
        println!("linear fit: slope {} intercept {} R^2 {:.6}", t.slope, t.intercept, t.r_squared);
        return Ok(t.r_squared > 0.99);
    }
    let mut p = Pipeline::new(&cfg)?;
    let ok = match cli.command {
        Command::Sample => p.sample().map(|_| true)?,
        Command::Abstract => p.abstraction().map(|_| true)?,
        Command::Asbf => p.asbf().map(|_| true)?,
        Command::Lipschitz => p.lipschitz().map(|_| true)?,
        Command::Sigma => p.sigma().map(|_| true)?,
        Command::Compose => {
            p.compose()?;
            let c: CompositionCertificate = p.store().read_json("certificate.json")?;
            println!("total {:.6e} pass {} epsilon {:.6} psi_bar {:.6}", c.total, c.pass, c.epsilon, c.psi_bar);
            c.pass
        }
        Command::Synthesize => p.synthesize().map(|_| true)?,
        Command::Simulate => {
            p.simulate()?;
            let s: SimulationSummary = p.store().read_json("simulation.json")?;
            let c: CoupledSummary = p.store().read_json("coupled.json")?;
            for sc in &s.scenarios {
                println!("{}: {}/{} runs safe", sc.name, sc.safe_runs, sc.starts);
            }
            println!("coupled relation kept: {}", c.pass);
            s.all_safe
        }
        Command::Run => {
            let r = p.run()?;
            for a in &r.attempts {
                println!("attempt {}: n_per_input {} degree {} total {:?} pass {}", a.attempt, a.n_per_input, a.degree, a.total, a.pass);
            }
            println!("simulation safe: {}, coupled relation kept: {}", r.simulation_safe, r.coupled_pass);
            for t in &r.timings {
                println!("  {:<14} {:>8.2} s{}", t.stage, t.seconds, if t.skipped { " (unchanged)" } else { "" });
            }
            println!("artifacts in {}", p.config().out_dir.display());
            r.success()
        }
        Command::Report => p.report().map(|_| true)?,
        Command::Sweep { .. } => unreachable!(),
    };
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
