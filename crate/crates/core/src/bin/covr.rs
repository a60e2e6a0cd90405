use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covr_core::curation::{FilterKind, WeightingKind};
use covr_core::harness::{
    discover_runs, emit_summary, run_experiment, Command, ExperimentConfig, GuidanceSourceKind, Outcome,
};
use covr_core::{CovrError, Result};

#[derive(Parser)]
#[command(name = "covr", version, about = "Teacher-guided SAC experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// eddf, random or topk:q
    #[arg(long)]
    filter: Option<FilterKind>,
    /// ralw, uniform or random
    #[arg(long)]
    weighting: Option<WeightingKind>,
    /// off, teacher or self_topk:q
    #[arg(long)]
    guidance: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run per seed.
    Train(Common),
    /// Evaluate an agent checkpoint or run directory.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep the configured variants over every seed.
    Ablate(Common),
    /// Select and weight a D_f record file.
    Curate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        entropy_hat: f64,
    },
    /// Summarize every run directory under a root.
    Summary {
        root: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.run.seeds = vec![s];
    }
    if let Some(n) = c.steps {
        cfg.run.steps = n;
    }
    if let Some(f) = c.filter {
        cfg.curation.filter = f;
    }
    if let Some(w) = c.weighting {
        cfg.curation.weighting = w;
    }
    match c.guidance.as_deref() {
        None => {}
        Some("off") => cfg.guidance.enabled = false,
        Some(s) => {
            cfg.guidance.enabled = true;
            cfg.guidance.source = s.parse::<GuidanceSourceKind>()?;
        }
    }
    if let Some(o) = &c.out {
        cfg.run.out_dir = o.clone();
    }
    cfg.validate()?;
    let out = cfg.run.out_dir.clone();
    Ok((cfg, out))
}

fn main_inner(cli: Cli) -> Result<bool> {
    let (cfg, out, cmd) = match cli.cmd {
        Cmd::Summary { root, out } => {
            let runs = discover_runs(&root)?;
            let out = out.unwrap_or_else(|| root.join("summary"));
            let report = emit_summary(&runs, &out)?;
            for r in &report.rows {
                println!(
                    "{:<8} n={} ER {:.1} ± {:.1}  DD {:.3} ± {:.3}",
                    r.variant, r.runs, r.er_mean, r.er_std, r.dd_mean, r.dd_std
                );
            }
            for p in &report.incomplete {
                println!("incomplete: {}", p.display());
            }
            return Ok(true);
        }
        Cmd::Train(c) => {
            let (cfg, out) = resolve(&c)?;
            (cfg, out, Command::Train)
        }
        Cmd::Eval { common, checkpoint } => {
            let (cfg, out) = resolve(&common)?;
            (cfg, out, Command::Eval { checkpoint })
        }
        Cmd::Ablate(c) => {
            let (cfg, out) = resolve(&c)?;
            (cfg, out, Command::Ablate)
        }
        Cmd::Curate {
            common,
            input,
            entropy_hat,
        } => {
            let (cfg, out) = resolve(&common)?;
            (cfg, out, Command::Curate { input, entropy_hat })
        }
    };
    let outcome = run_experiment(&cfg, &cmd, &out)?;
    match &outcome {
        Outcome::Trained(runs) => {
            for r in runs {
                println!("seed {}: ER {:.1} ± {:.1}, {} rounds", r.seed, r.final_eval.mean, r.final_eval.std, r.rounds);
            }
        }
        Outcome::Evaluated(e) => println!("ER {:.1} ± {:.1}, progress {:.3}", e.mean, e.std, e.progress),
        Outcome::Ablated(cells) => {
            for c in cells {
                match (&c.error, c.final_er) {
                    (Some(e), _) => println!("{} seed {}: FAILED {e}", c.variant, c.seed),
                    (None, Some(er)) => println!("{} seed {}: ER {er:.1}", c.variant, c.seed),
                    (None, None) => {}
                }
            }
        }
        Outcome::Curated(r) => println!(
            "kept {} ({:.1}%), tau {:.4}{}",
            r.selected.len(),
            100.0 * r.kept_fraction,
            r.tau,
            if r.degenerate { ", degenerate scores" } else { "" }
        ),
    }
    Ok(outcome.failures() == 0)
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            if matches!(e, CovrError::Usage(_) | CovrError::Config { .. } | CovrError::Parse { .. }) {
                ExitCode::from(64)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
