//! Loads a TOML experiment, runs every seed and writes the run directory.
//!
//! ```text
//! cargo run --release --example config_run -- [config.toml] [out_dir]
//! ```
//!
//! Defaults to `examples/configs/tanh.toml` and `runs/example`.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use statflow::algorithm::run_seeds;
use statflow::config::{load_config, LoadOptions};
use statflow::report::{begin_run, emit_reports, RunTiming};

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/tanh.toml")
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs/example"));

    let config = match load_config(&path, &LoadOptions::default()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    println!("config hash {}", config.hash);
    let started = now();
    begin_run(&out, &config, started).unwrap();
    let result = run_seeds(&config.run, &config.seeds).unwrap();
    let timing = RunTiming {
        started_unix: started,
        finished_unix: now(),
        wall_time_secs: result
            .runs
            .iter()
            .map(|r| r.as_ref().map_or(f64::NAN, |l| l.summary.wall_time_secs))
            .collect(),
    };
    let manifest = emit_reports(&out, &config, &result, &timing).unwrap();
    println!(
        "wrote {} artifacts to {}",
        manifest.artifacts.len(),
        out.display()
    );
    for t in &result.summary.terminal_thetas {
        println!("theta_T = {t:?}");
    }
}
