use clap::Parser;
use metis_kit::config::RunConfig;
use metis_kit::{pipeline, Error};
use std::path::PathBuf;
use std::process::ExitCode;

/// Distil controllers into trees and explain routing decisions with masks.
///
/// Runs the pipeline named in the config. Exit status is 0 on success, 1 on
/// a runtime failure (the failing stage is named) and 2 on an invalid config
/// (the offending field is named).
#[derive(Debug, Parser)]
#[command(name = "metis-kit", version)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Leaf budget M of the distilled tree.
    #[arg(long)]
    leaves: Option<usize>,
    /// Weight of the mask norm penalty
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the mask entropy penalty
    #[arg(long)]
    lambda2: Option<f64>,
    /// Master seed; every stage derives its stream from it
    #[arg(long)]
    seed: Option<u64>,
    /// Connections listed in topk.json.
    #[arg(long)]
    topk: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.leaves {
        cfg.distill.max_leaves = m;
    }
    if let Some(l) = cli.lambda1 {
        cfg.mask.lambda1 = l;
    }
    if let Some(l) = cli.lambda2 {
        cfg.mask.lambda2 = l;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = cli.topk {
        cfg.top_k = k;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("METIS_KIT_THREADS") else { return Ok(()) };
    let n: usize = raw.parse().map_err(|_| format!("METIS_KIT_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("METIS_KIT_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("config error at `METIS_KIT_THREADS`: {e}");
        return ExitCode::from(2);
    }
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    log::info!("running {:?} into {}", cfg.pipeline, cfg.out_dir.display());
    match pipeline::run(&cfg) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
