//! `heislab`: configuration-driven runner for the Heisenberg-group experiments.

mod config;
mod experiments;
mod presets;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use heislab::report::{compare, ConvergenceReport};

use crate::config::Config;
use crate::experiments::Outcome;

#[derive(Parser, Debug)]
#[command(name = "heislab", version, about = "Numerical experiments on the Heisenberg group")]
struct Cli {
    /// TOML or JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Random seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Group, frame and J identities on random samples.
    Identities,
    /// Difference quotients against their limits along an ε ladder.
    Quotients,
    /// Commutator study along an ε ladder.
    Commutator,
    /// Flow integration: horizontality, Jacobians, push-forward density.
    Flow,
    /// Transport residuals under refinement.
    Transport,
    /// Oscillating generating functions along a β ladder.
    Counterexample,
    /// Deformation functional on a random battery.
    Deformation,
    /// Tolerance-aware comparison of two JSON reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Relative tolerance for table cells.
        #[arg(long, default_value_t = 1e-9)]
        rel_tol: f64,
        /// Judge equality on fitted rates only.
        #[arg(long)]
        rates_only: bool,
    },
}

fn write_outcome(out: &Path, o: &Outcome) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let kind = &o.report.kind;
    std::fs::write(out.join(format!("{kind}.csv")), o.report.to_csv())?;
    std::fs::write(out.join(format!("{kind}.json")), o.report.to_json())?;
    for (stem, text) in &o.artifacts {
        std::fs::write(out.join(format!("{stem}.csv")), text)?;
    }
    Ok(())
}

fn summarize(rep: &ConvergenceReport) {
    for (name, fit) in &rep.rates {
        println!("rate {name}: {:.6} ± {:.3}", fit.rate, fit.confidence);
    }
    if let Some(v) = &rep.verdict {
        println!("verdict: {v}");
    }
    for c in &rep.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let runner = match cli.command {
        Command::Compare { a, b, rel_tol, rates_only } => {
            let read = |p: &Path| -> Result<ConvergenceReport> {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(ConvergenceReport::from_json(&text)?)
            };
            let cmp = compare(&read(&a)?, &read(&b)?, rel_tol)?;
            for l in &cmp.lines {
                println!("{l}");
            }
            let equal = if rates_only { cmp.rates_equal } else { cmp.equal };
            println!("{}", if equal { "EQUAL" } else { "DIFFERENT" });
            return Ok(equal);
        }
        Command::Identities => experiments::identities,
        Command::Quotients => experiments::quotients,
        Command::Commutator => experiments::commutator,
        Command::Flow => experiments::flow,
        Command::Transport => experiments::transport,
        Command::Counterexample => experiments::counterexample,
        Command::Deformation => experiments::deformation,
    };
    cfg.validate()?;
    let outcome = runner(&cfg)?;
    write_outcome(&cli.out, &outcome)?;
    summarize(&outcome.report);
    Ok(outcome.report.all_passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
