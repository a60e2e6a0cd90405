use crate::curation::{FilterKind, ScoreKind, WeightingKind};
use crate::error::{CovrError, Result};

use super::config::{ExperimentConfig, GuidanceSourceKind};

/// A named ablation cell: canonical name, accepted aliases, description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub description: &'static str,
}

pub const VARIANTS: &[Variant] = &[
    Variant {
        name: "covr",
        aliases: &["full", "eddf"],
        description: "full method",
    },
    Variant {
        name: "sac",
        aliases: &["baseline"],
        description: "plain SAC, no teacher",
    },
    Variant {
        name: "dpl",
        aliases: &["frozen"],
        description: "frozen pretrained teacher guides from the start",
    },
    Variant {
        name: "apl",
        aliases: &["anneal"],
        description: "full method with annealed guidance weight",
    },
    Variant {
        name: "m1",
        aliases: &["random"],
        description: "random filtering with the EDDF kept count",
    },
    Variant {
        name: "m2",
        aliases: &["top80"],
        description: "top-80% by return",
    },
    Variant {
        name: "m3",
        aliases: &["top90"],
        description: "top-90% by return",
    },
    Variant {
        name: "m4",
        aliases: &["top95"],
        description: "top-95% by return",
    },
    Variant {
        name: "m5",
        aliases: &["no-zscore"],
        description: "threshold on raw scores",
    },
    Variant {
        name: "m6",
        aliases: &["reward"],
        description: "score by immediate reward",
    },
    Variant {
        name: "m7",
        aliases: &["qvalue"],
        description: "score by critic Q-value",
    },
    Variant {
        name: "m8",
        aliases: &["uniform"],
        description: "uniform loss weights",
    },
    Variant {
        name: "m9",
        aliases: &["random-weight"],
        description: "random loss weights",
    },
    Variant {
        name: "m10",
        aliases: &["self80"],
        description: "top-80% self-imitation, random targets elsewhere",
    },
    Variant {
        name: "m11",
        aliases: &["self50"],
        description: "top-50% self-imitation, random targets elsewhere",
    },
];

pub fn find_variant(name: &str) -> Result<&'static Variant> {
    let key = name.trim().to_ascii_lowercase();
    VARIANTS
        .iter()
        .find(|v| v.name == key || v.aliases.contains(&key.as_str()))
        .ok_or_else(|| CovrError::config("ablate.variants", format!("unknown variant {name:?}")))
}

fn self_imitation(cfg: &mut ExperimentConfig, q: f64) {
    cfg.schedule.fine_tune = false;
    cfg.cold_start.delay = 0;
    cfg.guidance.enabled = true;
    cfg.guidance.source = GuidanceSourceKind::SelfTopK(q);
}

/// Applies a variant on top of `base`.
pub fn apply_variant(base: &ExperimentConfig, name: &str) -> Result<ExperimentConfig> {
    let v = find_variant(name)?;
    let mut cfg = base.clone();
    match v.name {
        "covr" => {}
        "sac" => {
            cfg.guidance.enabled = false;
            cfg.schedule.fine_tune = false;
        }
        "dpl" => {
            cfg.guidance.enabled = true;
            cfg.guidance.source = GuidanceSourceKind::Teacher;
            cfg.cold_start.delay = 0;
            cfg.schedule.fine_tune = false;
        }
        "apl" => cfg.guidance.anneal = true,
        "m1" => cfg.curation.filter = FilterKind::Random,
        "m2" => cfg.curation.filter = FilterKind::TopK(0.8),
        "m3" => cfg.curation.filter = FilterKind::TopK(0.9),
        "m4" => cfg.curation.filter = FilterKind::TopK(0.95),
        "m5" => cfg.curation.zscore = false,
        "m6" => cfg.curation.score = ScoreKind::Reward,
        "m7" => cfg.curation.score = ScoreKind::QValue,
        "m8" => cfg.curation.weighting = WeightingKind::Uniform,
        "m9" => cfg.curation.weighting = WeightingKind::Random,
        "m10" => self_imitation(&mut cfg, 0.8),
        "m11" => self_imitation(&mut cfg, 0.5),
        _ => unreachable!("every table entry is handled"),
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_applies() {
        let base = ExperimentConfig::default();
        for v in VARIANTS {
            apply_variant(&base, v.name).unwrap();
            for a in v.aliases {
                assert_eq!(find_variant(a).unwrap().name, v.name);
            }
        }
    }

    #[test]
    fn baselines_drop_the_teacher() {
        let base = ExperimentConfig::default();
        assert!(!apply_variant(&base, "sac").unwrap().needs_teacher());
        assert!(!apply_variant(&base, "m10").unwrap().needs_teacher());
        let dpl = apply_variant(&base, "DPL").unwrap();
        assert!(dpl.needs_teacher() && !dpl.schedule.fine_tune);
    }

    #[test]
    fn unknown_variant() {
        let e = find_variant("m12").unwrap_err().to_string();
        assert!(e.contains("m12"), "{e}");
    }
}
