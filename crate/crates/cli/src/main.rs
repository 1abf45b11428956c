#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cli;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use commands::Failure;
use config::{BenchmarkRun, GapShiftRun, GenSynthRun, ProbeRun, RunConfig, SweepRun, TheoremRun};

fn run(cli: Cli) -> Result<(), Failure> {
    let base = cli.config.as_deref().map(RunConfig::load).transpose()?;
    match cli.command {
        Command::GenSynth(a) => commands::gen_synth(&GenSynthRun::resolve(a, base)?),
        Command::Benchmark(a) => commands::benchmark(&BenchmarkRun::resolve(a.experiment, base)?),
        Command::VerifyTheorem(a) => commands::verify_theorem(&TheoremRun::resolve(a, base)?),
        Command::GapShift(a) => commands::gap_shift(&GapShiftRun::resolve(a, base)?),
        Command::Probe(a) => commands::probe(&ProbeRun::resolve(a, base)?),
        Command::Sweep(a) => commands::sweep(&SweepRun::resolve(a, base)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
