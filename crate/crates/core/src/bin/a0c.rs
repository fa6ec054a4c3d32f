use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use a0c::config::Config;
use a0c::experiment::run_experiment;
use a0c::report::{emit_csv, emit_plot};
use a0c::selftest;

#[derive(Parser)]
#[command(name = "a0c", version, about = "Tree search with learned continuous policies on the pendulum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train for the configured number of repetitions and log a CSV.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "n-trace")]
        n_trace: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Extra `key=value` overrides, applied after the other flags.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Plot learning curves from one or more CSV logs.
    Plot {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in numerical checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn train(
    config: Option<PathBuf>,
    n_trace: Option<usize>,
    seed: Option<u64>,
    out: PathBuf,
    set: Vec<String>,
) -> Result<bool, Box<dyn std::error::Error>> {
    let mut overrides = Vec::new();
    if let Some(n) = n_trace {
        overrides.push(("n_trace".to_string(), n.to_string()));
    }
    if let Some(s) = seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        overrides.push((k.to_string(), v.to_string()));
    }
    let cfg = Config::load(config.as_deref(), &overrides)?;
    fs::create_dir_all(&out)?;
    let stem = format!("ntrace{}_seed{}", cfg.n_trace, cfg.seed);
    fs::write(out.join(format!("{stem}.cfg")), cfg.to_text())?;

    let outcomes = run_experiment(&cfg)?;
    let mut ok = true;
    for o in &outcomes {
        if let Some(msg) = &o.failure {
            eprintln!("{msg}");
            ok = false;
        }
    }
    let records: Vec<_> = outcomes.into_iter().flat_map(|o| o.records).collect();
    let csv = out.join(format!("{stem}.csv"));
    emit_csv(&records, &csv)?;
    println!("wrote {} episodes to {}", records.len(), csv.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            n_trace,
            seed,
            out,
            set,
        } => train(config, n_trace, seed, out, set),
        Command::Plot { inputs, out } => emit_plot(&inputs, &out)
            .map(|()| {
                println!("wrote {}", out.display());
                true
            })
            .map_err(Into::into),
        Command::Selftest { seed } => {
            let checks = selftest::run_all(seed);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
