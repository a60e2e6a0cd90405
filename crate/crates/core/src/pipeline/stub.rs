use super::{Backend, RoundInfo, RoundOutcome, ScheduleState, StepOutcome};
use crate::error::{CovrError, Result};

/// Records the call sequence without doing any work. Episodes last
/// `episode_len` steps; updates start at `warmup`.
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    pub calls: Vec<&'static str>,
    pub episode_len: usize,
    pub warmup: usize,
    pub fail_at: Option<usize>,
    /// Steps at which a fine-tune round was completed.
    pub rounds: Vec<usize>,
    /// Skip calls from the stubbed steps themselves to save memory in long runs.
    pub quiet: bool,
    started: bool,
    episode_step: usize,
    done: bool,
    df_len: usize,
}

impl StubBackend {
    pub fn new(episode_len: usize, warmup: usize) -> Self {
        StubBackend {
            episode_len: episode_len.max(1),
            warmup,
            ..StubBackend::default()
        }
    }

    fn log(&mut self, name: &'static str) {
        if !self.quiet {
            self.calls.push(name);
        }
    }

    pub fn fine_tune_buffer_len(&self) -> usize {
        self.df_len
    }
}

impl Backend for StubBackend {
    fn needs_reset(&self) -> bool {
        !self.started || self.done
    }

    fn reset_env(&mut self, _t: usize) -> Result<()> {
        self.log("reset");
        self.started = true;
        self.done = false;
        self.episode_step = 0;
        Ok(())
    }

    fn teacher_infer(&mut self, _t: usize) -> Result<()> {
        self.log("infer");
        Ok(())
    }

    fn act(&mut self, t: usize) -> Result<StepOutcome> {
        if self.fail_at == Some(t) {
            return Err(CovrError::Usage("stub failure".into()));
        }
        self.log("act");
        self.episode_step += 1;
        self.done = self.episode_step >= self.episode_len;
        Ok(StepOutcome {
            episode_done: self.done,
        })
    }

    fn store_transition(&mut self, _t: usize) -> Result<()> {
        self.log("store");
        Ok(())
    }

    fn flush_episode(&mut self, _t: usize) -> Result<()> {
        self.log("flush");
        self.df_len += self.episode_step;
        Ok(())
    }

    fn ready_to_update(&self, t: usize) -> bool {
        t >= self.warmup
    }

    fn update(&mut self, _t: usize) -> Result<()> {
        self.log("update");
        Ok(())
    }

    fn fine_tune(&mut self, t: usize, _s: &ScheduleState) -> Result<RoundOutcome> {
        let info = RoundInfo {
            samples: self.df_len,
            selected: self.df_len,
            ..RoundInfo::default()
        };
        if self.df_len == 0 {
            return Ok(RoundOutcome::Skipped(RoundInfo {
                reason: Some("empty selection".into()),
                ..info
            }));
        }
        self.calls.push("fine_tune");
        self.rounds.push(t);
        Ok(RoundOutcome::Completed(info))
    }

    fn clear_fine_tune_buffer(&mut self) {
        self.calls.push("clear");
        self.df_len = 0;
    }

    fn round_completed(&mut self, _t: usize, _s: &ScheduleState) -> Result<()> {
        self.calls.push("advance");
        Ok(())
    }

    fn end_step(&mut self, _t: usize) -> Result<()> {
        self.log("end");
        Ok(())
    }
}
