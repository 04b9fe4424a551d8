use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use symdisc::config::{load_config, parse_config, ConfigError, Experiment, Profile};
use symdisc::harness::{emit_results, mean_curve, run_trials};
use symdisc::service::{router, AppState};

#[derive(Parser)]
#[command(name = "symdisc", version, about = "Sequential experimental design for symbolic model discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials against the configured oracle and write CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        profile: Profile,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Fill the `ms` column with per-round wall time.
        #[arg(long)]
        timing: bool,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the session HTTP API.
    Serve {
        #[arg(long, env = "SYMDISC_ADDR", default_value = "127.0.0.1")]
        addr: IpAddr,
        #[arg(long, env = "SYMDISC_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "SYMDISC_DATA_DIR", default_value = "symdisc-sessions")]
        data_dir: PathBuf,
    },
}

fn config_failure(e: &ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(1)
}

fn prepare(
    config: &PathBuf,
    profile: Profile,
    seed: Option<u64>,
    criterion: Option<String>,
    backend: Option<String>,
    trials: Option<usize>,
    rounds: Option<usize>,
) -> Result<Experiment, ConfigError> {
    let text = std::fs::read_to_string(config).map_err(|source| ConfigError::Io { path: config.clone(), source })?;
    let mut cfg = parse_config(&text)?.with_profile(profile);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(c) = criterion {
        cfg.criterion = c;
    }
    if let Some(b) = backend {
        cfg.backend = b;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(r) = rounds {
        cfg.rounds = r;
    }
    let exp = cfg.build()?;
    if exp.truth.is_none() {
        return Err(ConfigError::invalid("truth", "`run` needs a truth section to simulate responses"));
    }
    Ok(exp)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Validate { config } => match load_config(&config) {
            Ok(exp) => {
                println!("ok: {} models, {} inputs", exp.problem.models.len(), exp.config.inputs.len());
                ExitCode::SUCCESS
            }
            Err(e) => config_failure(&e),
        },
        Command::Run { config, profile, seed, out, criterion, backend, trials, rounds, timing } => {
            let exp = match prepare(&config, profile, seed, criterion, backend, trials, rounds) {
                Ok(e) => e,
                Err(e) => return config_failure(&e),
            };
            let out = out
                .or_else(|| exp.config.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results"));
            let results = run_trials(&exp);
            let mut traces = Vec::new();
            let mut failed = 0;
            for r in results {
                match r {
                    Ok(t) => traces.push(t),
                    Err(f) => {
                        failed += 1;
                        eprintln!("trial {} failed: {}", f.trial, f.message);
                    }
                }
            }
            if !traces.is_empty() {
                if let Err(e) = emit_results(&traces, &out, timing) {
                    eprintln!("failed to write results to {}: {e}", out.display());
                    return ExitCode::from(2);
                }
                let names = exp.model_names();
                for (m, name) in names.iter().enumerate() {
                    let curve = mean_curve(&traces, |t, r| t.probs_at(r)[m]);
                    println!("mean p({name}) after final round: {:.4}", curve.last().copied().unwrap_or(f64::NAN));
                }
                println!("wrote {} trials to {}", traces.len(), out.display());
            }
            if failed > 0 {
                eprintln!("{failed} of {} trials failed", exp.config.trials);
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Serve { addr, port, data_dir } => {
            let state = match AppState::open(&data_dir) {
                Ok(s) => Arc::new(s),
                Err(e) => {
                    eprintln!("cannot open data dir {}: {e}", data_dir.display());
                    return ExitCode::from(1);
                }
            };
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => {
                    eprintln!("cannot start runtime: {e}");
                    return ExitCode::from(2);
                }
            };
            let sock = SocketAddr::new(addr, port);
            let res = rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(sock).await?;
                eprintln!("listening on http://{sock}");
                axum::serve(listener, router(state)).await
            });
            match res {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("server error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
