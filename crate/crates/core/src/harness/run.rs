use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::curation::{curate, read_df, write_curated, SelectionReport};
use crate::error::{CovrError, Result};
use crate::numcore::RngStream;
use crate::pipeline::{evaluate_policy, run_training, EvalResult, RunSummary};
use crate::sac::AgentNets;

use super::config::ExperimentConfig;
use super::variants::{apply_variant, find_variant};

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Train,
    /// Evaluates an agent checkpoint file, or `checkpoints/agent_final.ckpt`
    /// inside a run directory.
    Eval { checkpoint: PathBuf },
    Ablate,
    /// Curates a D_f record file with the given standardized entropy.
    Curate { input: PathBuf, entropy_hat: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub variant: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub error: Option<String>,
    pub final_er: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Trained(Vec<RunSummary>),
    Evaluated(EvalResult),
    Ablated(Vec<CellResult>),
    Curated(SelectionReport),
}

impl Outcome {
    /// Failing ablation cells; every other outcome has none.
    pub fn failures(&self) -> usize {
        match self {
            Outcome::Ablated(cells) => cells.iter().filter(|c| c.error.is_some()).count(),
            _ => 0,
        }
    }
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CovrError::format("json", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CovrError::io(path, e))
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunSummary>> {
    cfg.run
        .seeds
        .iter()
        .map(|&seed| run_training(cfg, seed, &seed_dir(out, seed)))
        .collect()
}

fn eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EvalResult> {
    let path = if checkpoint.is_dir() {
        checkpoint.join("checkpoints").join("agent_final.ckpt")
    } else {
        checkpoint.to_path_buf()
    };
    let nets = AgentNets::load(&path)?;
    let seed = cfg.run.seeds.first().copied().unwrap_or(0);
    let episodes = cfg.run.final_eval_episodes.max(1);
    let result = evaluate_policy(&nets, &cfg.env, episodes, RngStream::new(seed).derive(5).next_u64())?;
    fs::create_dir_all(out).map_err(|e| CovrError::io(out, e))?;
    write_json(&out.join("eval.json"), &result)?;
    Ok(result)
}

/// One directory per variant and seed. A failing cell is recorded and the
/// sweep moves on.
fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<CellResult>> {
    if cfg.ablate.variants.is_empty() {
        return Err(CovrError::config("ablate.variants", "no variants listed"));
    }
    for v in &cfg.ablate.variants {
        find_variant(v)?;
    }
    let mut cells = Vec::new();
    for v in &cfg.ablate.variants {
        for &seed in &cfg.run.seeds {
            let dir = seed_dir(&out.join(v), seed);
            let res = apply_variant(cfg, v).and_then(|c| run_training(&c, seed, &dir));
            cells.push(match res {
                Ok(s) => CellResult {
                    variant: v.clone(),
                    seed,
                    dir,
                    error: None,
                    final_er: Some(s.final_eval.mean),
                },
                Err(e) => CellResult {
                    variant: v.clone(),
                    seed,
                    dir,
                    error: Some(e.to_string()),
                    final_er: None,
                },
            });
        }
    }
    fs::create_dir_all(out).map_err(|e| CovrError::io(out, e))?;
    write_json(&out.join("ablate.json"), &cells)?;
    Ok(cells)
}

fn curate_file(cfg: &ExperimentConfig, input: &Path, entropy_hat: f64, out: &Path) -> Result<SelectionReport> {
    let buffer = read_df(input)?;
    let seed = cfg.run.seeds.first().copied().unwrap_or(0);
    let mut rng = RngStream::new(seed).derive(4);
    let curated = curate(&buffer, entropy_hat, &cfg.curation, &mut rng);
    fs::create_dir_all(out).map_err(|e| CovrError::io(out, e))?;
    write_curated(&out.join("curated.jsonl"), &buffer, &curated.report.selected, &curated.weights)?;
    write_json(&out.join("selection_report.json"), &curated.report)?;
    Ok(curated.report)
}

/// Runs one subcommand, writing artifacts under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, cmd: &Command, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    match cmd {
        Command::Train => train(cfg, out).map(Outcome::Trained),
        Command::Eval { checkpoint } => eval(cfg, checkpoint, out).map(Outcome::Evaluated),
        Command::Ablate => ablate(cfg, out).map(Outcome::Ablated),
        Command::Curate { input, entropy_hat } => curate_file(cfg, input, *entropy_hat, out).map(Outcome::Curated),
    }
}
