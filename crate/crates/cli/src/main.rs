//! `strainlab`: simulate phantoms, estimate displacement, derive strain,
//! evaluate and benchmark from the command line.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use strainlab::pipeline::{self, PairInput};
use strainlab::{generate_pair, io::FrameMeta, run_bench, run_pipeline, solve, BenchConfig, PhantomSpec};

use config::{ConfigArgs, ConfigError, WORKERS_ENV};

#[derive(Parser, Debug)]
#[command(name = "strainlab", version, about = "Quasi-static ultrasound strain elastography")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantom pairs with ground truth.
    Simulate(ConfigArgs),
    /// Estimate the displacement field of a pair directory.
    Estimate {
        /// Pair directory with `pre` and `post` frames.
        #[arg(long)]
        pair: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Derive LSQSE and direct-gradient strain from an estimate.
    Strain {
        /// Result directory written by `estimate`.
        #[arg(long)]
        result: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compute metrics of an estimate against a pair's ROIs and truth.
    Evaluate {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        result: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run simulate/estimate/strain/evaluate/export over many pairs.
    Pipeline(ConfigArgs),
    /// Measure throughput on synthetic pairs.
    Bench {
        #[arg(long, default_value_t = 8)]
        pairs: usize,
        #[arg(long, default_value_t = 1024)]
        n_axial: usize,
        #[arg(long, default_value_t = 192)]
        n_lateral: usize,
        /// Write the report as JSON here as well.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    /// Bad configuration or unparseable input: exit 2.
    Config(String),
    /// Processing failed: exit 1.
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<strainlab::Error> for Failure {
    fn from(e: strainlab::Error) -> Self {
        use strainlab::Error as E;
        match e {
            E::InvalidArgument(_) | E::Parse { .. } | E::Json(_) => Failure::Config(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

fn resolve(args: &ConfigArgs) -> Result<strainlab::RunConfig, Failure> {
    let env = std::env::var(WORKERS_ENV).ok();
    Ok(args.resolve(env.as_deref())?)
}

fn out_dir(args: &ConfigArgs, cfg: &strainlab::RunConfig, fallback: &Path) -> PathBuf {
    if args.out.is_some() {
        cfg.out_dir.clone()
    } else {
        fallback.to_path_buf()
    }
}

fn simulate(args: &ConfigArgs) -> Result<i32, Failure> {
    let cfg = resolve(args)?;
    let spec = cfg.phantom.clone().unwrap_or_default();
    for k in 0..cfg.phantom_count as u64 {
        let spec = PhantomSpec {
            seed: spec.seed + k,
            ..spec.clone()
        };
        let dir = if cfg.phantom_count == 1 {
            cfg.out_dir.clone()
        } else {
            cfg.out_dir.join(pipeline::phantom_name(spec.seed))
        };
        let truth = generate_pair(&spec)?;
        pipeline::write_phantom(&dir, &truth)?;
        info!("wrote phantom seed {} to {}", spec.seed, dir.display());
    }
    Ok(0)
}

fn estimate(pair_dir: &Path, args: &ConfigArgs) -> Result<i32, Failure> {
    let cfg = resolve(args)?;
    let pair = pipeline::read_pair(pair_dir)?;
    let report = solve(&pair.pre, &pair.post, &cfg.obj, &cfg.solve)?;
    let dir = out_dir(args, &cfg, pair_dir);
    pipeline::write_estimate(&dir, &report, &FrameMeta::of(&pair.pre))?;
    println!(
        "sim {:.6} reg {:.6} total {:.6}; field written to {}",
        report.final_objective.sim,
        report.final_objective.reg,
        report.final_objective.total,
        dir.display()
    );
    Ok(0)
}

fn strain(result: &Path, args: &ConfigArgs) -> Result<i32, Failure> {
    let cfg = resolve(args)?;
    let (u, meta) = pipeline::read_estimate(result)?;
    let strains = pipeline::strain_maps(&u, &cfg.lsqse, meta.axial_spacing_mm)?;
    let dir = out_dir(args, &cfg, result);
    pipeline::write_strain_maps(&dir, &strains, &meta, &cfg.export)?;
    println!("strain maps written to {}", dir.display());
    Ok(0)
}

fn evaluate(pair_dir: &Path, result: &Path, args: &ConfigArgs) -> Result<i32, Failure> {
    let cfg = resolve(args)?;
    let pair: PairInput = pipeline::read_pair(pair_dir)?;
    if pair.manifest.is_none() {
        return Err(Failure::Config(format!(
            "{} has no {}; ROIs are required for evaluation",
            pair_dir.display(),
            pipeline::MANIFEST_FILE
        )));
    }
    let (u, _) = pipeline::read_estimate(result)?;
    let strains = pipeline::read_strain_maps(result)?;
    let metrics = pipeline::evaluate_pair(&pair, &u, &strains, &cfg.obj)?.expect("manifest present");
    let dir = out_dir(args, &cfg, result);
    pipeline::write_metrics(&dir, &metrics, &cfg.export)?;
    let snr_cnr = metrics
        .lsqse
        .as_ref()
        .map_or("snr - cnr -".to_string(), |m| format!("snr {:.4} cnr {:.4}", m.snr, m.cnr));
    println!(
        "{snr_cnr} lncc {:.4} mae {}",
        metrics.lncc_mean,
        metrics.displacement_mae_samples.map_or("-".into(), |v| format!("{v:.4}"))
    );
    for note in &metrics.notes {
        println!("note: {note}");
    }
    Ok(0)
}

fn run(args: &ConfigArgs) -> Result<i32, Failure> {
    let cfg = resolve(args)?;
    let outcome = run_pipeline(&cfg)?;
    let failed = outcome.pairs.iter().filter(|p| !p.ok()).count();
    for p in outcome.pairs.iter().filter(|p| !p.ok()) {
        error!("{}: {}", p.name, p.error.as_deref().unwrap_or(""));
    }
    println!(
        "{} pair(s), {failed} failed; summary at {}",
        outcome.pairs.len(),
        outcome.summary_path.display()
    );
    Ok(outcome.exit_code())
}

fn bench(pairs: usize, n_axial: usize, n_lateral: usize, json: Option<&Path>, args: &ConfigArgs) -> Result<i32, Failure> {
    let cfg = resolve(args)?;
    let bench = BenchConfig {
        pairs,
        workers: cfg.workers,
        n_axial,
        n_lateral,
        seed: cfg.phantom.as_ref().map_or(0, |p| p.seed),
        obj: cfg.obj,
        solve: cfg.solve,
        lsqse: cfg.lsqse,
    };
    let report = run_bench(&bench)?;
    print!("{}", report.render());
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Estimate { pair, cfg } => estimate(pair, cfg),
        Command::Strain { result, cfg } => strain(result, cfg),
        Command::Evaluate { pair, result, cfg } => evaluate(pair, result, cfg),
        Command::Pipeline(args) => run(args),
        Command::Bench {
            pairs,
            n_axial,
            n_lateral,
            json,
            cfg,
        } => bench(*pairs, *n_axial, *n_lateral, json.as_deref(), cfg),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
