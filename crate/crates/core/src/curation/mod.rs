//! Fine-tune data curation: the D_f buffer, returns, z-scores, the
//! entropy-adaptive selection threshold, and return-weighted teacher updates.

mod records;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use records::{read_df, write_curated, write_df, DF_FORMAT, DF_VERSION};
pub use stats::{iqr, median, percentile, zscore, RunningStats, ZScore};

use crate::envs::{ActionVec, Observation};
use crate::error::{CovrError, Result};
use crate::numcore::{sigmoid, RngStream};
use crate::teacher::{train_weighted, TeacherModel, TrainReport, WeightedLoss};

/// Backward recursion `g_t = r_t + γ·g_{t+1}`.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneSample {
    pub obs: Observation,
    pub action: ActionVec,
    /// Discounted return-to-go.
    pub g: f64,
    pub reward: f64,
    pub q_value: Option<f64>,
    pub episode: u64,
    pub step: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FineTuneBuffer {
    pub samples: Vec<FineTuneSample>,
}

impl FineTuneBuffer {
    pub fn new() -> Self {
        FineTuneBuffer::default()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, s: FineTuneSample) -> Result<()> {
        if !s.g.is_finite() {
            return Err(CovrError::non_finite("fine-tune sample return", self.samples.len()));
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn scores(&self, kind: ScoreKind) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match kind {
                ScoreKind::Return => s.g,
                ScoreKind::Reward => s.reward,
                ScoreKind::QValue => s.q_value.unwrap_or(s.g),
            })
            .collect()
    }
}

/// Which way entropy moves the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmoidVariant {
    /// `σ(−ε̂)`: high entropy lowers the threshold.
    #[default]
    Negated,
    /// `σ(ε̂)`.
    Raw,
}

impl SigmoidVariant {
    pub fn factor(self, eps_hat: f64) -> f64 {
        match self {
            SigmoidVariant::Negated => sigmoid(-eps_hat),
            SigmoidVariant::Raw => sigmoid(eps_hat),
        }
    }
}

macro_rules! string_enum_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FilterKind {
    #[default]
    Eddf,
    /// Uniformly random subset of the size EDDF would keep.
    Random,
    /// Highest-scoring fraction.
    TopK(f64),
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterKind::Eddf => f.write_str("eddf"),
            FilterKind::Random => f.write_str("random"),
            FilterKind::TopK(q) => write!(f, "topk:{q}"),
        }
    }
}

impl FromStr for FilterKind {
    type Err = CovrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eddf" => Ok(FilterKind::Eddf),
            "random" => Ok(FilterKind::Random),
            _ => {
                let q = s
                    .strip_prefix("topk:")
                    .and_then(|q| q.parse::<f64>().ok())
                    .filter(|q| *q > 0.0 && *q <= 1.0)
                    .ok_or_else(|| CovrError::config("curation.filter", format!("unknown filter {s:?}")))?;
                Ok(FilterKind::TopK(q))
            }
        }
    }
}

string_enum_serde!(FilterKind);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    #[default]
    Return,
    Reward,
    QValue,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Return => "return",
            ScoreKind::Reward => "reward",
            ScoreKind::QValue => "qvalue",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = CovrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "return" => Ok(ScoreKind::Return),
            "reward" => Ok(ScoreKind::Reward),
            "qvalue" => Ok(ScoreKind::QValue),
            other => Err(CovrError::config("curation.score", format!("unknown score {other:?}"))),
        }
    }
}

string_enum_serde!(ScoreKind);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightingKind {
    #[default]
    Ralw,
    Uniform,
    Random,
}

impl fmt::Display for WeightingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingKind::Ralw => "ralw",
            WeightingKind::Uniform => "uniform",
            WeightingKind::Random => "random",
        })
    }
}

impl FromStr for WeightingKind {
    type Err = CovrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ralw" => Ok(WeightingKind::Ralw),
            "uniform" => Ok(WeightingKind::Uniform),
            "random" => Ok(WeightingKind::Random),
            other => Err(CovrError::config("curation.weighting", format!("unknown weighting {other:?}"))),
        }
    }
}

string_enum_serde!(WeightingKind);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub filter: FilterKind,
    pub score: ScoreKind,
    pub weighting: WeightingKind,
    pub sigmoid: SigmoidVariant,
    /// Threshold on z-scores; otherwise on raw scores.
    pub zscore: bool,
    /// Forces every weight to zero so no fine-tune step is taken.
    pub zero_weights: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            filter: FilterKind::Eddf,
            score: ScoreKind::Return,
            weighting: WeightingKind::Ralw,
            sigmoid: SigmoidVariant::Negated,
            zscore: true,
            zero_weights: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub tau: f64,
    pub factor: f64,
    pub median: f64,
    pub iqr: f64,
    pub selected: Vec<usize>,
    pub kept_fraction: f64,
    /// The scores were constant, so their z-scores are all zero.
    pub degenerate: bool,
    /// Standardized entropy fed to the sigmoid.
    pub entropy_hat: f64,
}

/// `(ε − mean)/(std + 1e-8)` against running statistics.
pub fn standardize_entropy(eps: f64, stats: &RunningStats) -> f64 {
    (eps - stats.mean()) / (stats.std() + 1e-8)
}

/// `τ = median(gz) + factor·IQR(gz)`, with the factor from a standardized entropy.
pub fn eddf_threshold_hat(gz: &[f64], eps_hat: f64, variant: SigmoidVariant) -> SelectionReport {
    let factor = variant.factor(eps_hat);
    let (med, spread) = if gz.is_empty() { (0.0, 0.0) } else { (median(gz), iqr(gz)) };
    SelectionReport {
        tau: med + factor * spread,
        factor,
        median: med,
        iqr: spread,
        entropy_hat: eps_hat,
        ..SelectionReport::default()
    }
}

pub fn eddf_threshold(gz: &[f64], eps: f64, stats: &RunningStats, variant: SigmoidVariant) -> SelectionReport {
    eddf_threshold_hat(gz, standardize_entropy(eps, stats), variant)
}

/// z-scores the scores, thresholds them, and keeps indices with `g_z ≥ τ`.
pub fn eddf_select_hat(scores: &[f64], eps_hat: f64, variant: SigmoidVariant, use_zscore: bool) -> SelectionReport {
    let z = zscore(scores);
    let values: &[f64] = if use_zscore { &z.values } else { scores };
    let mut report = eddf_threshold_hat(values, eps_hat, variant);
    report.degenerate = z.degenerate;
    report.selected = (0..values.len()).filter(|&i| values[i] >= report.tau).collect();
    report.kept_fraction = if scores.is_empty() {
        0.0
    } else {
        report.selected.len() as f64 / scores.len() as f64
    };
    report
}

pub fn eddf_select(scores: &[f64], eps: f64, stats: &RunningStats, variant: SigmoidVariant) -> SelectionReport {
    eddf_select_hat(scores, standardize_entropy(eps, stats), variant, true)
}

/// Indices of the top `ceil(q·N)` scores (ties by index), in ascending index order.
pub fn topk_select(scores: &[f64], q: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let k = ((q.clamp(0.0, 1.0) * scores.len() as f64).ceil() as usize).min(scores.len());
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    keep
}

/// Applies the configured filter. `eps_hat` is the standardized entropy.
pub fn select(scores: &[f64], eps_hat: f64, cfg: &CurationConfig, rng: &mut RngStream) -> SelectionReport {
    let mut report = eddf_select_hat(scores, eps_hat, cfg.sigmoid, cfg.zscore);
    match cfg.filter {
        FilterKind::Eddf => {}
        FilterKind::Random => {
            let mut idx = rng.sample_indices(scores.len(), report.selected.len());
            idx.sort_unstable();
            report.selected = idx;
        }
        FilterKind::TopK(q) => report.selected = topk_select(scores, q),
    }
    report.kept_fraction = if scores.is_empty() {
        0.0
    } else {
        report.selected.len() as f64 / scores.len() as f64
    };
    report
}

/// Min-max map to `[−1, 1]`; constant input maps to `+1`.
pub fn ralw_normalize(g: &[f64]) -> Vec<f64> {
    let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![1.0; g.len()];
    }
    g.iter().map(|v| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)).collect()
}

pub fn ralw_weights(gbar: &[f64]) -> Vec<f64> {
    gbar.iter().map(|v| v.max(0.0)).collect()
}

/// Per-sample weights for the selected scores.
pub fn sample_weights(selected_scores: &[f64], cfg: &CurationConfig, rng: &mut RngStream) -> Vec<f64> {
    if cfg.zero_weights {
        return vec![0.0; selected_scores.len()];
    }
    match cfg.weighting {
        WeightingKind::Ralw => ralw_weights(&ralw_normalize(selected_scores)),
        WeightingKind::Uniform => vec![1.0; selected_scores.len()],
        WeightingKind::Random => selected_scores.iter().map(|_| rng.uniform()).collect(),
    }
}

/// Return-weighted smoothed token loss; see [`TeacherModel::weighted_loss`].
pub fn ralw_loss(
    model: &TeacherModel,
    obs: &[&Observation],
    tokens: &[Vec<usize>],
    weights: &[f64],
    smoothing: f64,
) -> Result<WeightedLoss> {
    model.weighted_loss(obs, tokens, weights, smoothing)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub smoothing: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FineTuneReport {
    pub train: TrainReport,
    /// Action components outside `[−1, 1]` that were clamped while tokenizing.
    pub clamped: u64,
}

/// Tokenizes the actions and runs weighted passes over the samples.
pub fn fine_tune_teacher(
    model: &mut TeacherModel,
    samples: &[&FineTuneSample],
    weights: &[f64],
    params: &FineTuneParams,
    rng: &mut RngStream,
) -> Result<FineTuneReport> {
    if samples.is_empty() {
        return Err(CovrError::EmptyEffectiveBatch);
    }
    let mut tok = model.tokenizer();
    let tokens: Vec<Vec<usize>> = samples.iter().map(|s| tok.tokenize(&s.action)).collect();
    let obs: Vec<&Observation> = samples.iter().map(|s| &s.obs).collect();
    let train = train_weighted(
        model,
        &obs,
        &tokens,
        weights,
        params.smoothing,
        params.epochs,
        params.batch_size,
        params.lr,
        rng,
    )?;
    Ok(FineTuneReport {
        train,
        clamped: tok.clamped(),
    })
}

/// Selection plus weights for a whole buffer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curated {
    pub report: SelectionReport,
    pub weights: Vec<f64>,
}

pub fn curate(buffer: &FineTuneBuffer, eps_hat: f64, cfg: &CurationConfig, rng: &mut RngStream) -> Curated {
    let scores = buffer.scores(cfg.score);
    let report = select(&scores, eps_hat, cfg, rng);
    let picked: Vec<f64> = report.selected.iter().map(|&i| buffer.samples[i].g).collect();
    let weights = sample_weights(&picked, cfg, rng);
    Curated { report, weights }
}
