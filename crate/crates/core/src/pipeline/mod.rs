//! The training loop: interaction, cached teacher queries, replay and D_f
//! maintenance, SAC updates, and progressive teacher fine-tuning.
//!
//! [`drive`] fixes the per-step call order; a [`Backend`] supplies the work.
//! [`Trainer`] is the real backend and [`StubBackend`] records calls only.

mod eval;
mod schedule;
mod stub;
mod train;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use eval::{evaluate_expert, evaluate_policy, evaluate_random, evaluate_teacher, evaluate_with, mean_std, EvalResult};
pub use schedule::ScheduleState;
pub use stub::StubBackend;
pub use train::{run_training, MetricsRecord, RunSummary, Trainer, METRICS_FORMAT, METRICS_VERSION};

use crate::error::{CovrError, Result};

pub const TRACE_FORMAT: &str = "covr-schedule";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub episode_done: bool,
}

/// What happened at a fine-tune trigger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub samples: usize,
    pub selected: usize,
    pub tau: Option<f64>,
    pub factor: Option<f64>,
    pub kept_fraction: Option<f64>,
    pub entropy: Option<f64>,
    pub entropy_hat: Option<f64>,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    pub teacher_before: Option<f64>,
    pub teacher_after: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    Completed(RoundInfo),
    /// Nothing was trained; `c`, `f_t` and D_f stay as they were.
    Skipped(RoundInfo),
}

/// One line of the schedule trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub step: usize,
    /// Completed rounds before this trigger.
    pub round: usize,
    pub psi: usize,
    pub completed: bool,
    pub loss_delta: Option<f64>,
    #[serde(flatten)]
    pub info: RoundInfo,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Line-delimited writer with a format header; every line is flushed.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    w: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path, format: &str, version: u32) -> Result<Self> {
        let w = BufWriter::new(File::create(path).map_err(|e| CovrError::io(path, e))?);
        let mut sink = JsonlSink {
            path: path.to_path_buf(),
            w,
        };
        sink.write(&Header {
            format: format.into(),
            version,
        })?;
        Ok(sink)
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| CovrError::format("jsonl record", e.to_string()))?;
        writeln!(self.w, "{line}").map_err(|e| CovrError::io(&self.path, e))?;
        self.w.flush().map_err(|e| CovrError::io(&self.path, e))
    }
}

/// Reads a file written by [`JsonlSink`], checking its header.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, format: &str, version: u32) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CovrError::io(path, e))?;
    let parse = |line: usize, message: String| CovrError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CovrError::io(path, e))?;
        if i == 0 {
            let h: Header = serde_json::from_str(&line).map_err(|e| parse(1, e.to_string()))?;
            if h.format != format || h.version != version {
                return Err(parse(1, format!("expected {format} v{version}, found {} v{}", h.format, h.version)));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Schedule events, kept in memory and optionally streamed to a file.
#[derive(Debug, Default)]
pub struct ScheduleTrace {
    pub events: Vec<ScheduleEvent>,
    sink: Option<JsonlSink>,
}

impl ScheduleTrace {
    pub fn memory() -> Self {
        ScheduleTrace::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        Ok(ScheduleTrace {
            events: Vec::new(),
            sink: Some(JsonlSink::create(path, TRACE_FORMAT, TRACE_VERSION)?),
        })
    }

    pub fn record(&mut self, event: ScheduleEvent) -> Result<()> {
        if let Some(s) = &mut self.sink {
            s.write(&event)?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<ScheduleEvent>> {
        read_jsonl(path, TRACE_FORMAT, TRACE_VERSION)
    }
}

/// The work behind each line of the training loop.
pub trait Backend {
    fn needs_reset(&self) -> bool;
    fn reset_env(&mut self, t: usize) -> Result<()>;
    fn teacher_infer(&mut self, t: usize) -> Result<()>;
    fn act(&mut self, t: usize) -> Result<StepOutcome>;
    fn store_transition(&mut self, t: usize) -> Result<()>;
    /// Attaches returns to the finished episode and appends it to D_f.
    fn flush_episode(&mut self, t: usize) -> Result<()>;
    fn ready_to_update(&self, t: usize) -> bool;
    fn update(&mut self, t: usize) -> Result<()>;
    fn fine_tune(&mut self, t: usize, schedule: &ScheduleState) -> Result<RoundOutcome>;
    fn clear_fine_tune_buffer(&mut self);
    fn round_completed(&mut self, t: usize, schedule: &ScheduleState) -> Result<()>;
    fn end_step(&mut self, t: usize) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriveOptions {
    pub steps: usize,
    pub psi0: usize,
    pub fine_tune: bool,
}

fn step_once<B: Backend>(
    b: &mut B,
    t: usize,
    opts: &DriveOptions,
    s: &mut ScheduleState,
    trace: &mut ScheduleTrace,
) -> Result<()> {
    if b.needs_reset() {
        b.reset_env(t)?;
    }
    b.teacher_infer(t)?;
    let out = b.act(t)?;
    b.store_transition(t)?;
    if out.episode_done {
        b.flush_episode(t)?;
    }
    if b.ready_to_update(t) {
        b.update(t)?;
    }
    if opts.fine_tune && s.should_fine_tune() {
        let (round, psi) = (s.c, s.psi);
        match b.fine_tune(t, s)? {
            RoundOutcome::Completed(info) => {
                b.clear_fine_tune_buffer();
                s.advance();
                b.round_completed(t, s)?;
                trace.record(ScheduleEvent {
                    step: t,
                    round,
                    psi,
                    completed: true,
                    loss_delta: info.loss_after.zip(info.loss_before).map(|(a, b)| a - b),
                    info,
                })?;
            }
            RoundOutcome::Skipped(info) => trace.record(ScheduleEvent {
                step: t,
                round,
                psi,
                completed: false,
                loss_delta: None,
                info,
            })?,
        }
    }
    s.tick();
    b.end_step(t)
}

/// Runs the loop for `opts.steps` environment steps. Any error aborts with
/// the failing step index.
pub fn drive<B: Backend>(b: &mut B, opts: &DriveOptions, trace: &mut ScheduleTrace) -> Result<ScheduleState> {
    let mut s = ScheduleState::new(opts.psi0);
    for t in 0..opts.steps {
        step_once(b, t, opts, &mut s, trace).map_err(|e| CovrError::Aborted {
            step: t,
            source: Box::new(e),
        })?;
    }
    Ok(s)
}
