//! Batch runner behind the `clusep` binary.
//!
//! Exit codes: 0 on success, 1 for configuration or other fatal errors, 2
//! when a batch finished but some scenarios failed.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use clusep_core::Pooling;

pub use commands::{cmd_cluster, cmd_datagen, cmd_eval, cmd_nn_forward, cmd_run, cmd_separate};
pub use config::{MethodSpec, RunConfig, TargetKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "clusep", version, about = "Cluster-informed source separation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    count: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, global = true)]
    methods: Option<String>,
    #[arg(long, global = true, value_enum)]
    pooling: Option<PoolingFlag>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingFlag {
    Mean,
    Ref,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and render scenarios to disk.
    Datagen,
    /// Cluster the microphones of one scenario directory.
    Cluster { dir: PathBuf },
    /// Run the classical methods on one scenario directory.
    Separate { dir: PathBuf },
    /// Run the network on one scenario directory.
    NnForward {
        dir: PathBuf,
        /// Print tensor shapes and multiply counts.
        #[arg(long)]
        dump_shapes: bool,
    },
    /// Score the stored estimates of one scenario directory.
    Eval { dir: PathBuf },
    /// Generate, separate and score a whole batch in memory.
    Run,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(count) = cli.count {
        cfg.count = count;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(list) = &cli.methods {
        cfg.methods = config::parse_methods(list)?;
    }
    if let Some(p) = cli.pooling {
        cfg.net.pooling = match p {
            PoolingFlag::Mean => Pooling::Mean,
            PoolingFlag::Ref => Pooling::ReferenceSelect,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn batch_exit(failed: usize) -> i32 {
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<i32> {
    match command {
        Command::Datagen => {
            let statuses = cmd_datagen(cfg)?;
            let failed = commands::BatchStatus::failures(&statuses);
            println!(
                "generated {} of {} scenarios in {}",
                statuses.len() - failed,
                statuses.len(),
                cfg.out.display()
            );
            for s in statuses.iter().filter(|s| s.error.is_some()) {
                eprintln!("{} failed: {}", s.id, s.error.as_deref().unwrap_or(""));
            }
            Ok(batch_exit(failed))
        }
        Command::Cluster { dir } => {
            cmd_cluster(dir, cfg)?;
            print!("{}", std::fs::read_to_string(dir.join(commands::CLUSTER_SUMMARY))?);
            Ok(EXIT_OK)
        }
        Command::Separate { dir } => {
            for e in cmd_separate(dir, cfg)? {
                println!("{} cluster {} (reference {}): {}", e.method, e.cluster, e.reference, e.file);
            }
            Ok(EXIT_OK)
        }
        Command::NnForward { dir, dump_shapes } => {
            let (entries, shapes) = cmd_nn_forward(dir, cfg)?;
            for e in entries.iter().filter(|e| matches!(e.method, MethodSpec::Neural(_))) {
                println!("{} cluster {} (reference {}): {}", e.method, e.cluster, e.reference, e.file);
            }
            if *dump_shapes {
                println!("{}", serde_json::to_string_pretty(&shapes)?);
            }
            Ok(EXIT_OK)
        }
        Command::Eval { dir } => {
            let rows = cmd_eval(dir, cfg)?;
            for a in report::ranked(&rows) {
                println!(
                    "{:<22} median SI-SDR {:>7.2} dB  median improvement {:>7.2} dB",
                    a.method, a.median_si_sdr_db, a.median_improvement_db
                );
            }
            Ok(EXIT_OK)
        }
        Command::Run => {
            let outcomes = cmd_run(cfg)?;
            print!("{}", report::summary_table(&outcomes));
            Ok(batch_exit(outcomes.iter().filter(|o| o.error.is_some()).count()))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return EXIT_CONFIG;
        }
    };
    let result = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| dispatch(&cli.command, &cfg))),
        None => dispatch(&cli.command, &cfg),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
    }
}
