//! Command-line driver for probegeom.
//!
//! [`run`] parses arguments, resolves every setting (flags over config file
//! over defaults), runs one subcommand and returns the process exit code:
//! 0 on success, 1 for invalid input or settings, 2 when a computation
//! fails.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
pub mod report;

use std::ffi::OsString;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command};
use config::{CliResult, Resolver};
use output::{write_run, Outputs, RunInfo};

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: &Cli, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    match &cli.command {
        Command::GenSynth(a) => commands::gen_synth(a, r),
        Command::Validate(a) => commands::validate(a, r),
        Command::Sweep(a) => commands::sweep(a, r, jobs),
        Command::Classifiers(a) => commands::classifiers(a, r, jobs),
        Command::Unsup(a) => commands::unsup(a, r, jobs),
        Command::Fewshot(a) => commands::fewshot(a, r, jobs),
        Command::NestedCv(a) => commands::nested(a, r, jobs),
        Command::Transfer(a) => commands::transfer(a, r, jobs),
        Command::Confounds(a) => commands::confounds(a, r, jobs),
        Command::Anova(a) => commands::anova(a, r, jobs),
        Command::Geometry(a) => commands::geometry(a, r, jobs),
        Command::SteerBundle(a) => commands::steer_bundle(a, r),
        Command::SteerAnalyze(a) => commands::steer_analyze(a, r),
        Command::Report(a) => {
            let dir = r
                .optional::<String>("out", a.out.as_ref().map(|p| p.display().to_string()))?
                .unwrap_or_else(|| commands::DEFAULT_OUT.to_string());
            r.finish()?;
            report::build(std::path::Path::new(&dir)).map(Some)
        }
    }
}

fn execute(cli: &Cli, argv: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let mut r = Resolver::from_file(cli.config.as_deref())?;
    let jobs = r.optional("jobs", cli.jobs)?;
    if jobs == Some(0) {
        return Err(config::CliError::invalid("--jobs must be at least 1"));
    }
    let outputs = dispatch(cli, &mut r, jobs)?;
    if let Some(out) = outputs {
        let effective = probegeom::exec::with_jobs(jobs, probegeom::exec::current_jobs)?;
        write_run(
            out.dir(),
            &RunInfo {
                command: cli.command.name(),
                argv,
                config_file: r.config_path(),
                resolved: r.resolved(),
                jobs: effective,
                wall_time_seconds: start.elapsed().as_secs_f64(),
                outputs: out.files(),
            },
        )?;
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
