use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use caadp::accountant::format_eps;
use caadp::experiment::{
    cmd_compare, cmd_preprocess, cmd_report, cmd_sweep, cmd_train, exit_code, ExperimentConfig,
    SweepConfig,
};
use caadp::Result;

#[derive(Parser)]
#[command(
    name = "caadp",
    version,
    about = "Class-aware adaptive DP training for fall detection"
)]
struct Cli {
    /// print nothing but errors and warnings
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Build and cache the train/test windows of a dataset.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one run per seed and write results, ledgers and traces.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// train this seed only
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train across a noise grid and emit the sigma to epsilon curve.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// only the accounting curve, no training
        #[arg(long)]
        curve_only: bool,
    },
    /// Paired signed-rank tests of results B against baseline results A.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge completed runs into one table with their privacy budgets.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(config)?.with_overrides(seed, out);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32> {
    let say = |s: String| {
        if !cli.quiet {
            println!("{s}");
        }
    };
    match &cli.verb {
        Verb::Preprocess { config, out } => {
            let cfg = load(config, None, out.as_deref())?;
            let s = cmd_preprocess(&cfg)?;
            for e in &s.ingest_errors {
                eprintln!("warning: skipped {e}");
            }
            say(serde_json::to_string_pretty(&s)?);
        }
        Verb::Train { config, out, seed } => {
            let cfg = load(config, *seed, out.as_deref())?;
            for row in cmd_train(&cfg)? {
                say(format!(
                    "{} seed {}: f1 {:.4} recall {:.4} eps_rdp {} after {} epochs",
                    row.model_id, row.seed, row.f1, row.recall, row.eps_rdp_post, row.epochs_actual
                ));
            }
        }
        Verb::Sweep {
            config,
            sweep,
            out,
            seed,
            curve_only,
        } => {
            let cfg = load(config, *seed, out.as_deref())?;
            let sw = match sweep {
                Some(p) => SweepConfig::load(p)?,
                None => SweepConfig::default(),
            };
            let res = cmd_sweep(&cfg, &sw, *curve_only)?;
            say("sigma  eps_analytic  eps_rdp".to_string());
            for c in &res.curve {
                say(format!(
                    "{:<6} {:>12} {:>8}",
                    c.sigma,
                    format_eps(c.eps_analytic),
                    format_eps(c.eps_rdp)
                ));
            }
        }
        Verb::Compare { a, b, out } => {
            let cmp = cmd_compare(a, b, out.as_deref())?;
            say(cmp.render_diffs());
            say(cmp.render_tests());
        }
        Verb::Report { dir, out } => {
            let rep = cmd_report(dir, out.as_deref())?;
            for s in &rep.skipped {
                eprintln!("warning: {s} has no metrics.json, skipped");
            }
            say(rep.table.clone());
            if rep.unaccounted > 0 {
                eprintln!(
                    "warning: {} run(s) have no privacy ledger and are marked unaccounted",
                    rep.unaccounted
                );
                return Ok(2);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
