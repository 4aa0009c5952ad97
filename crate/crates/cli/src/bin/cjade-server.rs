use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use cjade_core::server::{load_and_warm, spawn, ServerConfig};
use clap::Parser;
use log::{error, info};

/// Serves the large model and the feature head over TCP.
#[derive(Debug, Parser)]
#[command(name = "cjade-server", version)]
struct Args {
    #[arg(long, env = "CJADE_LISTEN", default_value = "127.0.0.1:7878")]
    listen: String,
    /// Large model weights.
    #[arg(long, env = "CJADE_WEIGHTS")]
    weights: PathBuf,
    /// Head for feature payloads; without it those requests are refused.
    #[arg(long, env = "CJADE_FEATURE_HEAD")]
    feature_head: Option<PathBuf>,
    #[arg(long, env = "CJADE_MAX_CONCURRENCY", default_value_t = 4)]
    max_concurrency: usize,
    #[arg(long, env = "CJADE_COMPUTE_TIMEOUT_MS", default_value_t = 10_000)]
    compute_timeout_ms: u64,
    #[arg(long, env = "CJADE_LOG_LEVEL", default_value = "info")]
    log_level: String,
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new()
        .parse_filters(&args.log_level)
        .format_timestamp_millis()
        .init();
    let config = ServerConfig {
        listen: args.listen,
        weights: args.weights,
        feature_head: args.feature_head,
        max_concurrency: args.max_concurrency,
        compute_timeout_ms: args.compute_timeout_ms,
    };
    let ready = match load_and_warm(&config) {
        Ok(r) => r,
        Err(e) => {
            error!("startup failed: {e}");
            eprintln!("cjade-server: {e}");
            return ExitCode::from(1);
        }
    };
    info!("ready in {:.1} ms", ready.startup.as_secs_f64() * 1e3);
    let handle = match spawn(
        Arc::new(ready.core),
        &config.listen,
        config.max_concurrency,
        config.compute_timeout_ms,
    ) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("cjade-server: cannot listen on {}: {e}", config.listen);
            return ExitCode::from(1);
        }
    };
    println!("listening on {}", handle.local_addr());

    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        eprintln!("cjade-server: no signal handler: {e}");
        return ExitCode::from(1);
    }
    handle.run_until(&stop);
    info!("stopped");
    ExitCode::SUCCESS
}
