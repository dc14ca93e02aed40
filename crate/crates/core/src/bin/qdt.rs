use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qdt::config::ExperimentConfig;
use qdt::pipeline;
use qdt::QdtError;

#[derive(Parser)]
#[command(name = "qdt", version, about = "Regularized quantum detector tomography")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; numeric results do not depend on it.
    #[arg(long, env = "QDT_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate, estimate, correct and report.
    Run(Common),
    /// Write simulated counts as CSV.
    Simulate(Common),
    /// Estimate a detector from a count record.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Count CSV; simulated when absent.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// A-optimal shot allocation.
    OptimizeResources(Common),
    /// Pick kernel hyper-parameters on a held-out probe split.
    CrossValidate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// MSE against N for every configured estimator.
    ScalingStudy(Common),
    /// Range, membership and similarity verdicts.
    CheckTheory(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), QdtError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = pipeline::output_dir(&cfg, common.out.as_deref());
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(QdtError::InvalidConfig("--threads must be positive".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok((cfg, out))
}

/// Like `println!`, but a closed pipe (`qdt ... | head`) is not an error.
macro_rules! emit {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn report(out: &Path, what: &str) {
    eprintln!("{what} written to {}", out.display());
}

fn dispatch(cmd: Cmd) -> Result<(), QdtError> {
    match cmd {
        Cmd::Run(c) => {
            let (cfg, out) = load(&c)?;
            let s = pipeline::run_pipeline(cfg, &out)?;
            for r in &s.results {
                emit!(
                    "{}\tN={}\tmean_mse={:.6e}\tse={:.2e}\ttrials={}",
                    r.estimator, r.n, r.mean_mse, r.std_error, r.trials
                );
            }
            report(&out, "results");
        }
        Cmd::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            pipeline::run_simulate(cfg, &out)?;
            report(&out, "record");
        }
        Cmd::Estimate { common, record } => {
            let (cfg, out) = load(&common)?;
            let b = pipeline::run_estimate(cfg, record.as_deref(), &out)?;
            emit!("final_mse={:.6e}", b.final_mse);
            report(&out, "estimate");
        }
        Cmd::OptimizeResources(c) => {
            let (cfg, out) = load(&c)?;
            let d = pipeline::run_optimize(cfg, &out)?;
            emit!(
                "objective={:.9e}\tuniform={:.9e}\tcertificate={:.3e}\tconverged={}",
                d.objective, d.uniform_objective, d.certificate, d.converged
            );
            report(&out, "allocation");
        }
        Cmd::CrossValidate { common, record } => {
            let (cfg, out) = load(&common)?;
            let r = pipeline::run_cross_validate(cfg, record.as_deref(), &out)?;
            emit!("{}", serde_json::to_string(&r.outcome.selected)?);
            report(&out, "selection");
        }
        Cmd::ScalingStudy(c) => {
            let (cfg, out) = load(&c)?;
            let t = pipeline::run_scaling(cfg, &out)?;
            for r in &t.rows {
                emit!(
                    "{}\tN={}\tmean_mse={:.6e}\tslope={}",
                    r.kernel,
                    r.n,
                    r.mean_mse,
                    r.slope.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into())
                );
            }
            report(&out, "scaling table");
        }
        Cmd::CheckTheory(c) => {
            let (cfg, out) = load(&c)?;
            let t = pipeline::run_check_theory(cfg, &out)?;
            emit!("{}", serde_json::to_string_pretty(&t)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap prints usage and exits with status 2 on bad arguments
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
