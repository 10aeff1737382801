use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use urns_harness::config::{load_config_file, Cli, ExperimentConfig};
use urns_harness::experiments::{run, validate};
use urns_harness::record::{persist, Format};

const EXIT_VERDICT: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let (experiment, flags) = cli.command.split();
    let cfg = match load_config_file(flags.config.as_ref())
        .and_then(|file| ExperimentConfig::resolve(experiment, flags, &file))
        .and_then(|cfg| validate(&cfg).map(|_| cfg))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }

    let started = Instant::now();
    let rec = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    let written = match &cfg.output_path {
        Some(path) => persist(&rec, path, cfg.format, elapsed).map(|_| {
            println!("{}", rec.summary_line());
        }),
        None => {
            let stdout = std::io::stdout().lock();
            let res = match cfg.format {
                Format::Csv => rec.write_csv(stdout).map_err(std::io::Error::other),
                Format::Json => {
                    let mut out = stdout;
                    rec.write_json(&mut out)
                        .map_err(std::io::Error::other)
                        .and_then(|_| out.write_all(b"\n"))
                }
            };
            res.map(|_| eprintln!("{}", rec.summary_line()))
        }
    };
    if let Err(e) = written {
        eprintln!("error: writing output: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    if rec.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERDICT)
    }
}
