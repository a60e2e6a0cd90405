use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_policy, evaluate_teacher, EvalResult};
use super::{
    drive, Backend, DriveOptions, JsonlSink, RoundInfo, RoundOutcome, ScheduleState, ScheduleTrace, StepOutcome,
};
use crate::curation::{
    curate, fine_tune_teacher, returns_to_go, standardize_entropy, FineTuneBuffer, FineTuneParams, FineTuneSample,
    RunningStats, ScoreKind, write_df,
};
use crate::envs::{ActionVec, Env, Observation, StepResult};
use crate::error::{CovrError, Result};
use crate::harness::{ExperimentConfig, GuidanceSourceKind, WarmupSource};
use crate::numcore::RngStream;
use crate::sac::{Guidance, ReplayBuffer, SacAgent, Transition, UpdateStats};
use crate::teacher::{teacher_pretrain, TeacherModel};

pub const METRICS_FORMAT: &str = "covr-metrics";
pub const METRICS_VERSION: u32 = 1;

const TAG_ENV: u64 = 1;
const TAG_AGENT: u64 = 2;
const TAG_TEACHER: u64 = 3;
const TAG_CURATION: u64 = 4;
const TAG_EVAL: u64 = 5;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub episodes: u64,
    pub episode_return: Option<f64>,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub eval_progress: Option<f64>,
    pub entropy: Option<f64>,
    pub alpha: Option<f64>,
    pub critic_loss: Option<f64>,
    pub guidance_lambda: Option<f64>,
    pub rounds: usize,
    pub tau: Option<f64>,
    pub kept_fraction: Option<f64>,
    pub ft_loss_before: Option<f64>,
    pub ft_loss_after: Option<f64>,
    pub teacher_return: Option<f64>,
    #[serde(rename = "final")]
    pub is_final: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: usize,
    pub rounds: usize,
    pub final_eval: EvalResult,
    /// Teacher evaluation before the first round and after each completed round.
    pub teacher_returns: Vec<f64>,
}

#[derive(Debug, Default)]
struct Episode {
    id: u64,
    rewards: Vec<f64>,
    replay_ids: Vec<u64>,
    samples: Vec<(Observation, ActionVec)>,
}

struct PendingStep {
    obs: Observation,
    action: ActionVec,
    teacher_action: Option<ActionVec>,
    teacher_age: usize,
    result: StepResult,
}

/// The real backend: owns every piece of training state for one seed.
pub struct Trainer {
    cfg: ExperimentConfig,
    out: PathBuf,
    env: Option<Env>,
    obs: Option<Observation>,
    env_rng: RngStream,
    agent_rng: RngStream,
    teacher_rng: RngStream,
    curation_rng: RngStream,
    eval_seed: u64,
    pub agent: SacAgent,
    pub replay: ReplayBuffer,
    pub teacher: Option<TeacherModel>,
    cached: Option<ActionVec>,
    cached_age: usize,
    pending: Option<PendingStep>,
    episode: Episode,
    episode_step: usize,
    pub df: FineTuneBuffer,
    entropy: RunningStats,
    last_entropy: Option<f64>,
    rounds_done: usize,
    guidance_since: Option<usize>,
    last_update: Option<UpdateStats>,
    last_lambda: Option<f64>,
    last_episode_return: Option<f64>,
    episodes: u64,
    last_round: Option<RoundInfo>,
    last_eval: Option<EvalResult>,
    teacher_returns: Vec<f64>,
    metrics: JsonlSink,
    timing: JsonlSink,
    started: Instant,
}

#[derive(Serialize)]
struct TimingRecord {
    step: usize,
    seconds: f64,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(out).map_err(|e| CovrError::io(out, e))?;
        let root = RngStream::new(seed);
        let mut agent_rng = root.derive(TAG_AGENT);
        let mut teacher_rng = root.derive(TAG_TEACHER);
        let agent = SacAgent::new(cfg.sac.clone(), &mut agent_rng)?;
        let teacher = if cfg.needs_teacher() {
            let mut t = TeacherModel::from_config(&cfg.teacher, &mut teacher_rng);
            teacher_pretrain(&mut t, &cfg.env, &cfg.teacher, &mut teacher_rng)?;
            Some(t)
        } else {
            None
        };
        let metrics = JsonlSink::create(&out.join("metrics.jsonl"), METRICS_FORMAT, METRICS_VERSION)?;
        let timing = JsonlSink::create(&out.join("timing.jsonl"), "covr-timing", 1)?;
        Ok(Trainer {
            out: out.to_path_buf(),
            env: None,
            obs: None,
            env_rng: root.derive(TAG_ENV).derive(cfg.env.seed),
            agent_rng,
            teacher_rng,
            curation_rng: root.derive(TAG_CURATION),
            eval_seed: root.derive(TAG_EVAL).next_u64(),
            agent,
            replay: ReplayBuffer::new(cfg.sac.replay_capacity),
            teacher,
            cached: None,
            cached_age: 0,
            pending: None,
            episode: Episode::default(),
            episode_step: 0,
            df: FineTuneBuffer::new(),
            entropy: RunningStats::new(),
            last_entropy: None,
            rounds_done: 0,
            guidance_since: None,
            last_update: None,
            last_lambda: None,
            last_episode_return: None,
            episodes: 0,
            last_round: None,
            last_eval: None,
            teacher_returns: Vec::new(),
            metrics,
            timing,
            started: Instant::now(),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn rounds_done(&self) -> usize {
        self.rounds_done
    }

    fn collects_df(&self) -> bool {
        self.cfg.schedule.fine_tune && self.teacher.is_some()
    }

    fn guidance(&mut self, t: usize) -> Option<Guidance> {
        let g = &self.cfg.guidance;
        if !g.enabled || self.rounds_done < self.cfg.cold_start.delay {
            return None;
        }
        if g.source == GuidanceSourceKind::Teacher && self.teacher.is_none() {
            return None;
        }
        let since = *self.guidance_since.get_or_insert(t);
        Some(Guidance {
            lambda: g.lambda_at(t - since),
            target: g.target,
            source: g.source.to_source(),
        })
    }

    fn evaluate_teacher_now(&self) -> Result<Option<f64>> {
        match (&self.teacher, self.cfg.run.teacher_eval_episodes) {
            (Some(t), n) if n > 0 => Ok(Some(evaluate_teacher(t, &self.cfg.env, n, self.eval_seed)?.mean)),
            _ => Ok(None),
        }
    }

    fn save_checkpoints(&self, tag: &str) -> Result<()> {
        if !self.cfg.run.checkpoints {
            return Ok(());
        }
        let dir = self.out.join("checkpoints");
        fs::create_dir_all(&dir).map_err(|e| CovrError::io(&dir, e))?;
        self.agent.nets.save(&dir.join(format!("agent_{tag}.ckpt")))?;
        if let Some(t) = &self.teacher {
            t.save(&dir.join(format!("teacher_{tag}.ckpt")))?;
        }
        Ok(())
    }

    fn record(&mut self, t: usize, is_final: bool) -> Result<()> {
        let round = self.last_round.take().unwrap_or_default();
        let eval = self.last_eval.take();
        let rec = MetricsRecord {
            step: t,
            episodes: self.episodes,
            episode_return: self.last_episode_return,
            eval_mean: eval.as_ref().map(|e| e.mean),
            eval_std: eval.as_ref().map(|e| e.std),
            eval_progress: eval.as_ref().map(|e| e.progress),
            entropy: self.last_entropy,
            alpha: Some(self.agent.nets.alpha()),
            critic_loss: self.last_update.as_ref().map(|u| u.critic_loss),
            guidance_lambda: self.last_lambda,
            rounds: self.rounds_done,
            tau: round.tau,
            kept_fraction: round.kept_fraction,
            ft_loss_before: round.loss_before,
            ft_loss_after: round.loss_after,
            teacher_return: round.teacher_after,
            is_final,
        };
        self.metrics.write(&rec)?;
        self.timing.write(&TimingRecord {
            step: t,
            seconds: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Closes the run: final evaluation, metrics line and checkpoints.
    pub fn finish(mut self, steps: usize) -> Result<RunSummary> {
        let final_eval = evaluate_policy(
            &self.agent.nets,
            &self.cfg.env,
            self.cfg.run.final_eval_episodes.max(1),
            self.eval_seed,
        )?;
        self.last_eval = Some(final_eval.clone());
        self.record(steps, true)?;
        self.save_checkpoints("final")?;
        Ok(RunSummary {
            seed: self.eval_seed,
            steps,
            rounds: self.rounds_done,
            final_eval,
            teacher_returns: self.teacher_returns,
        })
    }
}

impl Backend for Trainer {
    fn needs_reset(&self) -> bool {
        self.env.as_ref().is_none_or(Env::is_done)
    }

    fn reset_env(&mut self, _t: usize) -> Result<()> {
        let (env, obs) = Env::reset(&self.cfg.env, &mut self.env_rng)?;
        self.env = Some(env);
        self.obs = Some(obs);
        self.episode_step = 0;
        self.episode = Episode {
            id: self.episodes,
            ..Episode::default()
        };
        Ok(())
    }

    fn teacher_infer(&mut self, t: usize) -> Result<()> {
        let Some(teacher) = &self.teacher else {
            return Ok(());
        };
        if self.episode_step == 0 || t % self.cfg.teacher.cadence == 0 {
            let obs = self.obs.as_ref().expect("environment reset before inference");
            let out = teacher.infer(obs, self.cfg.teacher.mode, &mut self.teacher_rng)?;
            self.cached = Some(out.action);
            self.cached_age = 0;
        } else {
            self.cached_age += 1;
        }
        Ok(())
    }

    fn act(&mut self, t: usize) -> Result<StepOutcome> {
        let obs = self.obs.take().expect("environment reset before acting");
        let action = if t < self.cfg.sac.warmup_steps {
            match (self.cfg.cold_start.warmup_source, self.cached) {
                (WarmupSource::Teacher, Some(a)) => a,
                _ => ActionVec::uniform(&mut self.agent_rng),
            }
        } else {
            self.agent.act(&obs, &mut self.agent_rng, false)?
        };
        let env = self.env.as_mut().expect("environment reset before acting");
        let result = env.step(action)?;
        let teacher_action = match self.cached {
            Some(a) if self.cached_age == 0 || self.cfg.teacher.cache_between => Some(a),
            _ => None,
        };
        let done = result.done;
        self.obs = Some(result.observation.clone());
        self.pending = Some(PendingStep {
            obs,
            action,
            teacher_action,
            teacher_age: self.cached_age,
            result,
        });
        self.episode_step += 1;
        Ok(StepOutcome { episode_done: done })
    }

    fn store_transition(&mut self, _t: usize) -> Result<()> {
        let p = self.pending.take().expect("act precedes store");
        let id = self.replay.push(Transition {
            obs: p.obs.clone(),
            action: p.action,
            reward: p.result.reward,
            next_obs: p.result.observation,
            done: p.result.terminated,
            teacher_action: p.teacher_action,
            teacher_age: p.teacher_age,
            ret: None,
        });
        self.episode.rewards.push(p.result.reward);
        self.episode.replay_ids.push(id);
        self.episode.samples.push((p.obs, p.action));
        Ok(())
    }

    fn flush_episode(&mut self, _t: usize) -> Result<()> {
        let ep = std::mem::take(&mut self.episode);
        let g = returns_to_go(&ep.rewards, self.cfg.sac.gamma);
        for (id, &gi) in ep.replay_ids.iter().zip(&g) {
            self.replay.set_return(*id, gi);
        }
        if self.collects_df() {
            for (step, ((obs, action), (&gi, &r))) in ep.samples.into_iter().zip(g.iter().zip(&ep.rewards)).enumerate() {
                self.df.push(FineTuneSample {
                    obs,
                    action,
                    g: gi,
                    reward: r,
                    q_value: None,
                    episode: ep.id,
                    step,
                })?;
            }
        }
        self.last_episode_return = Some(ep.rewards.iter().sum());
        self.episodes += 1;
        Ok(())
    }

    fn ready_to_update(&self, t: usize) -> bool {
        t >= self.cfg.sac.warmup_steps && self.replay.len() >= self.cfg.sac.batch_size
    }

    fn update(&mut self, t: usize) -> Result<()> {
        let guidance = self.guidance(t);
        self.last_lambda = guidance.map(|g| g.lambda);
        let stats = self.agent.update(&self.replay, &mut self.agent_rng, guidance)?;
        if let Some(e) = stats.entropy {
            self.entropy.push(e);
            self.last_entropy = Some(e);
        }
        self.last_update = Some(stats);
        Ok(())
    }

    fn fine_tune(&mut self, _t: usize, s: &ScheduleState) -> Result<RoundOutcome> {
        let mut info = RoundInfo {
            samples: self.df.len(),
            ..RoundInfo::default()
        };
        if self.teacher.is_none() || self.df.is_empty() || self.replay.is_empty() {
            info.reason = Some("empty fine-tune buffer".into());
            self.last_round = Some(info.clone());
            return Ok(RoundOutcome::Skipped(info));
        }
        if self.teacher_returns.is_empty() {
            if let Some(r) = self.evaluate_teacher_now()? {
                self.teacher_returns.push(r);
            }
        }
        if self.cfg.curation.score == ScoreKind::QValue {
            for x in &mut self.df.samples {
                x.q_value = Some(self.agent.nets.q_value(&x.obs, x.action)?);
            }
        }
        if self.cfg.run.export_df {
            write_df(&self.out.join(format!("df_round{}.jsonl", s.c)), &self.df)?;
        }
        let eps = self.agent.entropy_estimate(&self.replay, &mut self.curation_rng)?;
        if self.entropy.count() == 0 {
            self.entropy.push(eps);
        }
        let eps_hat = standardize_entropy(eps, &self.entropy);
        let curated = curate(&self.df, eps_hat, &self.cfg.curation, &mut self.curation_rng);
        let r = &curated.report;
        info.selected = r.selected.len();
        info.tau = Some(r.tau);
        info.factor = Some(r.factor);
        info.kept_fraction = Some(r.kept_fraction);
        info.entropy = Some(eps);
        info.entropy_hat = Some(eps_hat);
        info.teacher_before = self.teacher_returns.last().copied();
        if r.selected.is_empty() {
            info.reason = Some("empty selection".into());
            self.last_round = Some(info.clone());
            return Ok(RoundOutcome::Skipped(info));
        }
        let picked: Vec<&FineTuneSample> = r.selected.iter().map(|&i| &self.df.samples[i]).collect();
        let params = FineTuneParams {
            epochs: self.cfg.teacher.epochs,
            batch_size: self.cfg.teacher.batch_size,
            lr: self.cfg.teacher.lr,
            smoothing: self.cfg.teacher.smoothing,
        };
        let teacher = self.teacher.as_mut().expect("checked above");
        match fine_tune_teacher(teacher, &picked, &curated.weights, &params, &mut self.curation_rng) {
            Ok(report) => {
                info.loss_before = Some(report.train.initial_loss);
                info.loss_after = Some(report.train.final_loss);
            }
            Err(CovrError::EmptyEffectiveBatch) => {
                info.reason = Some("empty effective batch".into());
                self.last_round = Some(info.clone());
                return Ok(RoundOutcome::Skipped(info));
            }
            Err(e) => return Err(e),
        }
        info.teacher_after = self.evaluate_teacher_now()?;
        if let Some(r) = info.teacher_after {
            self.teacher_returns.push(r);
        }
        self.last_round = Some(info.clone());
        Ok(RoundOutcome::Completed(info))
    }

    fn clear_fine_tune_buffer(&mut self) {
        self.df.clear();
    }

    fn round_completed(&mut self, _t: usize, s: &ScheduleState) -> Result<()> {
        self.rounds_done = s.c;
        self.save_checkpoints(&format!("round{}", s.c))
    }

    fn end_step(&mut self, t: usize) -> Result<()> {
        let run = &self.cfg.run;
        if run.eval_every > 0 && run.eval_episodes > 0 && (t + 1) % run.eval_every == 0 {
            self.last_eval = Some(evaluate_policy(
                &self.agent.nets,
                &self.cfg.env,
                run.eval_episodes,
                self.eval_seed,
            )?);
        }
        if (t + 1) % self.cfg.run.log_every == 0 {
            self.record(t + 1, false)?;
        }
        Ok(())
    }
}

/// Full training run for one seed, writing every artifact into `out`.
pub fn run_training(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<RunSummary> {
    let mut trainer = Trainer::new(cfg, seed, out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| CovrError::io(out, e))?;
    let opts = DriveOptions {
        steps: cfg.run.steps,
        psi0: cfg.schedule.psi0,
        fine_tune: cfg.schedule.fine_tune && trainer.teacher.is_some(),
    };
    let mut trace = ScheduleTrace::to_file(&out.join("schedule_trace.jsonl"))?;
    drive(&mut trainer, &opts, &mut trace)?;
    let mut summary = trainer.finish(cfg.run.steps)?;
    summary.seed = seed;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CovrError::format("summary", e.to_string()))?;
    fs::write(out.join("summary.json"), json).map_err(|e| CovrError::io(out, e))?;
    Ok(summary)
}
