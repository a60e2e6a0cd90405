//! Python bindings: environments, curation math, the fine-tune schedule,
//! the teacher and full training runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use covr_core::curation::{self, SigmoidVariant};
use covr_core::envs::{ActionVec, Env as CoreEnv, EnvConfig};
use covr_core::harness::ExperimentConfig;
use covr_core::numcore::RngStream;
use covr_core::pipeline::{self, ScheduleState};
use covr_core::teacher::{InferMode, TeacherConfig, TeacherModel};
use covr_core::CovrError;

fn err(e: CovrError) -> PyErr {
    match e {
        CovrError::Config { .. } | CovrError::Parse { .. } | CovrError::Usage(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn env_config(name: &str, obstacles: usize) -> PyResult<EnvConfig> {
    match name {
        "lane_drive" => Ok(EnvConfig::lane_drive(obstacles)),
        "point_reach" => Ok(EnvConfig::point_reach()),
        other => Err(PyValueError::new_err(format!("unknown environment {other:?}"))),
    }
}

/// Experiment configuration, round-tripped through TOML text.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => ExperimentConfig::parse(t, std::path::Path::new("<python>")).map_err(err)?,
            None => ExperimentConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.run.steps
    }

    #[setter]
    fn set_steps(&mut self, steps: usize) {
        self.inner.run.steps = steps;
    }

    #[getter]
    fn psi0(&self) -> usize {
        self.inner.schedule.psi0
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.guidance.lambda
    }

    /// Applies a named ablation variant such as "sac", "dpl" or "m3".
    fn variant(&self, name: &str) -> PyResult<PyConfig> {
        covr_core::harness::apply_variant(&self.inner, name)
            .map(|inner| PyConfig { inner })
            .map_err(err)
    }
}

#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    env: CoreEnv,
}

#[pymethods]
impl PyEnv {
    /// Returns the environment and its first observation.
    #[staticmethod]
    #[pyo3(signature = (name = "lane_drive", seed = 0, obstacles = 2))]
    fn reset(name: &str, seed: u64, obstacles: usize) -> PyResult<(PyEnv, Vec<f64>)> {
        let cfg = env_config(name, obstacles)?;
        let (env, obs) = CoreEnv::reset(&cfg, &mut RngStream::new(seed)).map_err(err)?;
        Ok((PyEnv { env }, obs.pixels()))
    }

    /// `(observation, reward, done)` after one step.
    fn step(&mut self, a0: f64, a1: f64) -> PyResult<(Vec<f64>, f64, bool)> {
        let s = self.env.step(ActionVec::new(a0, a1)).map_err(err)?;
        Ok((s.observation.pixels(), s.reward, s.done))
    }

    fn expert_action(&self) -> (f64, f64) {
        let a = self.env.expert_action();
        (a.0[0], a.0[1])
    }

    fn is_done(&self) -> bool {
        self.env.is_done()
    }
}

#[pyclass(name = "Teacher", unsendable)]
struct PyTeacher {
    model: TeacherModel,
}

#[pymethods]
impl PyTeacher {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        let model = TeacherModel::from_config(&TeacherConfig::default(), &mut RngStream::new(seed));
        PyTeacher { model }
    }

    /// Greedy action text and parsed action for an observation.
    fn infer(&self, obs: Vec<f64>) -> PyResult<(String, (f64, f64))> {
        let o = covr_core::envs::Observation::from_pixels(&obs).map_err(err)?;
        let out = self
            .model
            .infer(&o, InferMode::Greedy, &mut RngStream::new(0))
            .map_err(err)?;
        Ok((out.text, (out.action.0[0], out.action.0[1])))
    }
}

#[pyfunction]
fn returns_to_go(rewards: Vec<f64>, gamma: f64) -> Vec<f64> {
    curation::returns_to_go(&rewards, gamma)
}

/// `(selected indices, tau)` for a score buffer and standardized entropy.
#[pyfunction]
fn eddf_select(scores: Vec<f64>, entropy_hat: f64) -> (Vec<usize>, f64) {
    let r = curation::eddf_select_hat(&scores, entropy_hat, SigmoidVariant::Negated, true);
    (r.selected, r.tau)
}

#[pyfunction]
fn ralw_weights(returns: Vec<f64>) -> Vec<f64> {
    curation::ralw_weights(&curation::ralw_normalize(&returns))
}

#[pyfunction]
fn schedule_intervals(psi0: usize, n: usize) -> PyResult<Vec<usize>> {
    if psi0 == 0 {
        return Err(PyValueError::new_err("psi0 must be positive"));
    }
    Ok(ScheduleState::intervals(psi0, n))
}

#[pyfunction]
#[pyo3(signature = (name = "lane_drive", episodes = 10, seed = 0, obstacles = 2))]
fn evaluate_expert(name: &str, episodes: usize, seed: u64, obstacles: usize) -> PyResult<(f64, f64)> {
    let r = pipeline::evaluate_expert(&env_config(name, obstacles)?, episodes, seed).map_err(err)?;
    Ok((r.mean, r.std))
}

/// Runs training for one seed; returns `(final mean return, rounds, teacher returns)`.
#[pyfunction]
fn train(config: &PyConfig, seed: u64, out: PathBuf) -> PyResult<(f64, usize, Vec<f64>)> {
    let s = pipeline::run_training(&config.inner, seed, &out).map_err(err)?;
    Ok((s.final_eval.mean, s.rounds, s.teacher_returns))
}

#[pymodule]
fn covr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyTeacher>()?;
    m.add_function(wrap_pyfunction!(returns_to_go, m)?)?;
    m.add_function(wrap_pyfunction!(eddf_select, m)?)?;
    m.add_function(wrap_pyfunction!(ralw_weights, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_expert, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
