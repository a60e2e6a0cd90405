use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curation::CurationConfig;
use crate::envs::EnvConfig;
use crate::error::{CovrError, Result};
use crate::sac::{GuidanceSource, GuidanceTarget, SacConfig};
use crate::teacher::TeacherConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Where the guidance target `a_v` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GuidanceSourceKind {
    #[default]
    Teacher,
    /// Top fraction of each batch by stored return imitates itself; the rest
    /// get random targets.
    SelfTopK(f64),
}

impl GuidanceSourceKind {
    pub fn to_source(self) -> GuidanceSource {
        match self {
            GuidanceSourceKind::Teacher => GuidanceSource::Teacher,
            GuidanceSourceKind::SelfTopK(q) => GuidanceSource::SelfTopK(q),
        }
    }
}

impl fmt::Display for GuidanceSourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuidanceSourceKind::Teacher => f.write_str("teacher"),
            GuidanceSourceKind::SelfTopK(q) => write!(f, "self_topk:{q}"),
        }
    }
}

impl FromStr for GuidanceSourceKind {
    type Err = CovrError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "teacher" {
            return Ok(GuidanceSourceKind::Teacher);
        }
        s.strip_prefix("self_topk:")
            .and_then(|q| q.parse::<f64>().ok())
            .filter(|q| *q > 0.0 && *q <= 1.0)
            .map(GuidanceSourceKind::SelfTopK)
            .ok_or_else(|| CovrError::config("guidance.source", format!("unknown source {s:?}")))
    }
}

impl Serialize for GuidanceSourceKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GuidanceSourceKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub enabled: bool,
    pub lambda: f64,
    pub target: GuidanceTarget,
    pub source: GuidanceSourceKind,
    /// Lower λ by `anneal_step` every `anneal_every` steps once guidance is active.
    pub anneal: bool,
    pub anneal_step: f64,
    pub anneal_every: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            enabled: true,
            lambda: 2.0,
            target: GuidanceTarget::Sample,
            source: GuidanceSourceKind::Teacher,
            anneal: false,
            anneal_step: 0.01,
            anneal_every: 200,
        }
    }
}

impl GuidanceConfig {
    /// λ after `active_steps` steps of active guidance.
    pub fn lambda_at(&self, active_steps: usize) -> f64 {
        if !self.anneal {
            return self.lambda;
        }
        let decays = (active_steps / self.anneal_every.max(1)) as f64;
        (self.lambda - self.anneal_step * decays).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupSource {
    #[default]
    Random,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColdStartConfig {
    /// Completed fine-tune rounds before guidance switches on.
    pub delay: usize,
    pub warmup_source: WarmupSource,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        ColdStartConfig {
            delay: 2,
            warmup_source: WarmupSource::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub psi0: usize,
    pub fine_tune: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            psi0: 5000,
            fine_tune: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    pub teacher_eval_episodes: usize,
    pub log_every: usize,
    pub out_dir: PathBuf,
    pub checkpoints: bool,
    /// Dump D_f before each fine-tune round as `df_round{c}.jsonl`.
    pub export_df: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: 100_000,
            seeds: vec![0, 1, 2],
            eval_every: 5000,
            eval_episodes: 10,
            final_eval_episodes: 10,
            teacher_eval_episodes: 5,
            log_every: 1000,
            out_dir: PathBuf::from("runs"),
            checkpoints: true,
            export_df: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// Variant names such as `covr`, `sac`, `m3`.
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub teacher: TeacherConfig,
    pub curation: CurationConfig,
    pub guidance: GuidanceConfig,
    pub cold_start: ColdStartConfig,
    pub schedule: ScheduleConfig,
    pub run: RunConfig,
    pub ablate: AblateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            env: EnvConfig::default(),
            sac: SacConfig::default(),
            teacher: TeacherConfig::default(),
            curation: CurationConfig::default(),
            guidance: GuidanceConfig::default(),
            cold_start: ColdStartConfig::default(),
            schedule: ScheduleConfig::default(),
            run: RunConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CovrError::config("version", format!("unsupported version {}", self.version)));
        }
        self.env.validate()?;
        self.sac.validate()?;
        self.teacher.validate()?;
        if !(self.guidance.lambda >= 0.0) {
            return Err(CovrError::config("guidance.lambda", "must be non-negative"));
        }
        if self.schedule.psi0 == 0 {
            return Err(CovrError::config("schedule.psi0", "must be positive"));
        }
        if self.run.log_every == 0 {
            return Err(CovrError::config("run.log_every", "must be positive"));
        }
        Ok(())
    }

    /// A teacher is built when anything reads from it.
    pub fn needs_teacher(&self) -> bool {
        self.schedule.fine_tune
            || (self.guidance.enabled && self.guidance.source == GuidanceSourceKind::Teacher)
            || self.cold_start.warmup_source == WarmupSource::Teacher
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            CovrError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CovrError::io(path, e))?;
        ExperimentConfig::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::FilterKind;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.guidance.lambda, 2.0);
        assert_eq!(cfg.schedule.psi0, 5000);
        assert_eq!(cfg.sac.gamma, 0.99);
    }

    #[test]
    fn filter_variant_parses() {
        let cfg = parse("[curation]\nfilter = \"topk:0.9\"\n").unwrap();
        assert_eq!(cfg.curation.filter, FilterKind::TopK(0.9));
    }

    #[test]
    fn bad_enum_names_value_and_line() {
        let err = parse("[run]\nsteps = 10\n\n[curation]\nfilter = \"bogus\"\n").unwrap_err();
        match err {
            CovrError::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = parse("[sac]\ngamma = 0.9\nbogus_key = 1\n").unwrap_err();
        match err {
            CovrError::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus_key"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_mismatch_is_rejected() {
        assert!(matches!(parse("[run]\nsteps = \"many\"\n"), Err(CovrError::Parse { line: 2, .. })));
    }

    #[test]
    fn infinite_sigma_skips_pretraining() {
        let cfg = parse("[teacher]\nsigma_n = inf\n").unwrap();
        assert!(!cfg.teacher.pretrains());
    }

    #[test]
    fn resolved_config_roundtrips() {
        let mut cfg = ExperimentConfig::default();
        cfg.guidance.source = GuidanceSourceKind::SelfTopK(0.8);
        cfg.curation.filter = FilterKind::TopK(0.95);
        let back = parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn annealing_schedule() {
        let g = GuidanceConfig {
            anneal: true,
            ..GuidanceConfig::default()
        };
        assert_eq!(g.lambda_at(0), 2.0);
        assert_eq!(g.lambda_at(199), 2.0);
        assert!((g.lambda_at(200) - 1.99).abs() < 1e-12);
        assert_eq!(g.lambda_at(10_000_000), 0.0);
    }
}
