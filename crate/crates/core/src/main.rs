use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use euler_align::cli_io::{execute, num, parse_config_with, read_fluctuation_series, AppError, VERSION};
use euler_align::diagnostics::fit_decay_rate;
use euler_align::integrator::Termination;

#[derive(Parser)]
#[command(name = "euler-align", version, about = "Isothermal Euler-alignment simulations on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file.
    config: PathBuf,
    /// Overrides as `--key value` pairs, e.g. `--n 64 --t_end 5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode named in the configuration (fluid or pressureless).
    Run(ConfigArgs),
    /// Cucker–Smale particle run.
    Particles(ConfigArgs),
    /// Langevin particles compared with the fluid limit.
    Kinetic(ConfigArgs),
    /// Parameter sweep.
    Sweep(ConfigArgs),
    /// Fit the decay rate of the `F` column of a records file.
    Fit {
        records: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        t0: f64,
        /// Defaults to the last recorded time.
        #[arg(long)]
        t1: Option<f64>,
    },
}

fn pairs(raw: &[String]) -> Result<Vec<(String, String)>, AppError> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(AppError::Config(euler_align::cli_io::ConfigError {
                errors: vec![format!("expected `--key value`, got `{flag}`")],
            }));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => match it.next() {
                Some(v) => (key.to_string(), v.clone()),
                None => {
                    return Err(AppError::Config(euler_align::cli_io::ConfigError {
                        errors: vec![format!("flag `--{key}` needs a value")],
                    }))
                }
            },
        };
        out.push((key, value));
    }
    Ok(out)
}

fn configured(args: &ConfigArgs, mode: Option<&str>) -> Result<Termination, AppError> {
    let text = fs::read_to_string(&args.config).map_err(|source| AppError::Io {
        path: args.config.clone(),
        source,
    })?;
    let mut overrides = Vec::new();
    if let Some(m) = mode {
        overrides.push(("mode".to_string(), m.to_string()));
    }
    overrides.extend(pairs(&args.overrides)?);
    let cfg = parse_config_with(&text, &overrides)?;
    execute(&cfg)
}

fn fit(records: &PathBuf, t0: f64, t1: Option<f64>) -> Result<Termination, AppError> {
    let text = fs::read_to_string(records).map_err(|source| AppError::Io {
        path: records.clone(),
        source,
    })?;
    let series = read_fluctuation_series(&text)?;
    let t1 = t1.unwrap_or_else(|| series.last().map_or(0.0, |p| p.0));
    let f = fit_decay_rate(&series, (t0, t1)).map_err(|e| AppError::Run(e.to_string()))?;
    let out = json!({
        "version": VERSION,
        "window": [num(t0), num(t1)],
        "c_hat": num(f.c_hat),
        "r_squared": num(f.r_squared),
        "samples": f.samples,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(Termination::Completed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => configured(a, None),
        Command::Particles(a) => configured(a, Some("particles")),
        Command::Kinetic(a) => configured(a, Some("kinetic")),
        Command::Sweep(a) => configured(a, Some("sweep")),
        Command::Fit { records, t0, t1 } => fit(records, *t0, *t1),
    };
    match result {
        Ok(Termination::Completed) => ExitCode::SUCCESS,
        Ok(t) => {
            eprintln!("run terminated: {}", t.as_str());
            ExitCode::from(2)
        }
        Err(e @ AppError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
