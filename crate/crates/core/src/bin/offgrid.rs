//! Command-line front end. Every subcommand takes an optional config file
//! plus `--key value` overrides for any config key, e.g.
//! `offgrid pipeline --task lowpass --output out/lowpass`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use offgrid::pipeline::{check_conditions, run_pipeline, run_stages, ExperimentConfig, PipelineReport, Stage};
use offgrid::Error;

#[derive(Parser)]
#[command(
    name = "offgrid",
    version,
    about = "Off-the-grid restoration of piecewise-constant images from Fourier samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the scene: spectrum.spc1, truth.png, truth.spc1
    Phantom(Opts),
    /// Sample and add noise: mask.msk1, samples.spc1
    Measure(Opts),
    /// Learn the filter bank from low frequencies: bank.fbk1, learn_trace.csv
    Learn(Opts),
    /// Edge map from the annihilating filters: edges.png, edges.spc1
    Edges(Opts),
    /// Restore with each configured method: restored_<method>.{png,spc1}
    Restore(Opts),
    /// Compare restorations with the truth: metrics.csv
    Metrics(Opts),
    /// All stages plus manifest.txt
    Pipeline(Opts),
    /// Report the identifiability conditions for the configured grids
    Check(Opts),
}

#[derive(Args)]
struct Opts {
    /// Flat `key = value` config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value` or `--key=value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl Opts {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let mut args = self.overrides.iter();
        while let Some(arg) = args.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected --key, got {arg:?}")))?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = args
                        .next()
                        .ok_or_else(|| Error::Config(format!("--{flag} needs a value")))?;
                    (flag.to_string(), v.clone())
                }
            };
            cfg.set(&key.replace('-', "_"), &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(report: &PipelineReport) {
    if let Some(r) = report.rank {
        let iters = report.learn_iters.unwrap_or(0);
        let conv = if report.learn_converged == Some(true) {
            "converged"
        } else {
            "not converged"
        };
        println!("learned rank {r}, {iters} sweeps, {conv}");
    }
    for row in &report.rows {
        println!(
            "{:<10} snr {:>7.2} dB  hfen {:.4e}  ssim {:.4}",
            row.method, row.report.snr_db, row.report.hfen, row.report.ssim
        );
    }
    for (name, _) in &report.files {
        eprintln!("wrote {name}");
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (opts, stage) = match &cli.command {
        Command::Phantom(o) => (o, Some(Stage::Phantom)),
        Command::Measure(o) => (o, Some(Stage::Measure)),
        Command::Learn(o) => (o, Some(Stage::Learn)),
        Command::Edges(o) => (o, Some(Stage::Edges)),
        Command::Restore(o) => (o, Some(Stage::Restore)),
        Command::Metrics(o) => (o, Some(Stage::Metrics)),
        Command::Pipeline(o) | Command::Check(o) => (o, None),
    };
    let cfg = opts.load()?;
    match (&cli.command, stage) {
        (Command::Check(_), _) => print!("{}", check_conditions(&cfg)),
        (_, Some(s)) => print_report(&run_stages(&cfg, &[s])?),
        _ => {
            let conditions = check_conditions(&cfg);
            for w in &conditions.warnings {
                eprintln!("warning: {w}");
            }
            print_report(&run_pipeline(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
