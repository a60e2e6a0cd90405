use serde::{Deserialize, Serialize};

use crate::envs::{ActionVec, Env, EnvConfig, Observation};
use crate::error::{CovrError, Result};
use crate::numcore::RngStream;
use crate::sac::AgentNets;
use crate::teacher::{InferMode, TeacherModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub progress: f64,
    pub returns: Vec<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `episodes` episodes from a stream seeded with `seed`.
pub fn evaluate_with<F>(env: &EnvConfig, episodes: usize, seed: u64, mut policy: F) -> Result<EvalResult>
where
    F: FnMut(&Env, &Observation) -> Result<ActionVec>,
{
    if episodes == 0 {
        return Err(CovrError::config("run.eval_episodes", "must be at least 1"));
    }
    let mut rng = RngStream::new(seed);
    let mut returns = Vec::with_capacity(episodes);
    let mut progress = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut e, mut obs) = Env::reset(env, &mut rng)?;
        let mut total = 0.0;
        while !e.is_done() {
            let a = policy(&e, &obs)?;
            let s = e.step(a)?;
            total += s.reward;
            obs = s.observation;
        }
        returns.push(total);
        progress.push(e.progress());
    }
    let (mean, std) = mean_std(&returns);
    Ok(EvalResult {
        mean,
        std,
        progress: mean_std(&progress).0,
        returns,
    })
}

/// Deterministic (`tanh(mean)`) policy evaluation.
pub fn evaluate_policy(nets: &AgentNets, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut unused = RngStream::new(0);
    evaluate_with(env, episodes, seed, |_, obs| {
        Ok(nets.sample_action(obs, &mut unused, true)?.0)
    })
}

/// Greedy teacher actions drive the environment directly.
pub fn evaluate_teacher(model: &TeacherModel, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut unused = RngStream::new(0);
    evaluate_with(env, episodes, seed, |_, obs| {
        Ok(model.infer(obs, InferMode::Greedy, &mut unused)?.action)
    })
}

pub fn evaluate_expert(env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    evaluate_with(env, episodes, seed, |e, _| Ok(e.expert_action()))
}

pub fn evaluate_random(env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut rng = RngStream::new(seed ^ 0x5eed);
    evaluate_with(env, episodes, seed, |_, _| Ok(ActionVec::uniform(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_episode_has_zero_std() {
        let r = evaluate_expert(&EnvConfig::point_reach(), 1, 3).unwrap();
        assert_eq!(r.std, 0.0);
        assert_eq!(r.returns.len(), 1);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[10.0, 20.0, 30.0]);
        assert_eq!(m, 20.0);
        assert!((s - 8.164_965_809).abs() < 1e-6);
    }

    #[test]
    fn expert_matches_rollout() {
        let env = EnvConfig::lane_drive(2);
        let r = evaluate_expert(&env, 3, 9).unwrap();
        let mut rng = RngStream::new(9);
        for want in &r.returns {
            let (got, _) = crate::envs::rollout(&env, &mut rng, |e, _| e.expert_action()).unwrap();
            assert_eq!(got, *want);
        }
    }

    #[test]
    fn evaluation_leaves_networks_untouched() {
        let mut rng = RngStream::new(1);
        let nets = AgentNets::new(crate::envs::OBS_LEN, 2, 8, 16, 0.1, false, &mut rng);
        let before = nets.to_checkpoint().to_bytes();
        let a = evaluate_policy(&nets, &EnvConfig::point_reach(), 2, 5).unwrap();
        let b = evaluate_policy(&nets, &EnvConfig::point_reach(), 2, 5).unwrap();
        assert_eq!(nets.to_checkpoint().to_bytes(), before);
        assert_eq!(a, b);
    }
}
