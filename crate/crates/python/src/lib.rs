//! Python bindings for the VGDL interpreter, prompt builder, agents and metrics.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vgdl_bench::agents::{mcts_select, parse_llm_action};
use vgdl_bench::engine::{init_state, Action, GameState, Outcome};
use vgdl_bench::games::{LoadedGame, BUNDLED};
use vgdl_bench::harness::{self, AgentFactory, AgentSpec, RunConfig};
use vgdl_bench::metrics;
use vgdl_bench::textualizer::{self, PromptOptions};
use vgdl_bench::vgdl;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_python<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn action(code: i64) -> PyResult<Action> {
    Action::from_code(code).ok_or_else(|| PyValueError::new_err(format!("no action with code {code}")))
}

/// Names of the bundled games.
#[pyfunction]
fn games() -> Vec<&'static str> {
    BUNDLED.to_vec()
}

/// Parses a game description and returns it in canonical form.
#[pyfunction]
fn parse_game(text: &str) -> PyResult<String> {
    vgdl::parse_game(text).map(|s| s.to_canonical()).map_err(value_err)
}

/// Extracts the action code from a model reply. Returns `(code, failed)`.
#[pyfunction]
fn parse_action(text: &str, legal: Vec<i64>) -> PyResult<(i64, bool)> {
    let legal = legal.into_iter().map(action).collect::<PyResult<Vec<_>>>()?;
    let parsed = parse_llm_action(text, &legal);
    Ok((i64::from(parsed.action.code()), parsed.failed))
}

#[pyfunction]
#[pyo3(signature = (r, r_min, r_max, epsilon=metrics::DEFAULT_EPSILON))]
fn normalized_reward(r: f64, r_min: f64, r_max: f64, epsilon: f64) -> PyResult<f64> {
    metrics::normalized_reward(r, r_min, r_max, epsilon).map_err(value_err)
}

#[pyfunction]
fn overall_score(meaningful_ratio: f64, inverted_steps: f64, normalized_reward: f64, win_rate: f64) -> PyResult<f64> {
    metrics::overall_score(meaningful_ratio, inverted_steps, normalized_reward, win_rate).map_err(value_err)
}

#[pyfunction]
fn step_efficiency(terminal_ticks: Vec<u32>, max_steps: u32) -> f64 {
    metrics::step_efficiency_from_ticks(&terminal_ticks, max_steps)
}

#[pyclass(name = "Game", frozen)]
struct PyGame {
    inner: LoadedGame,
}

#[pymethods]
impl PyGame {
    #[new]
    #[pyo3(signature = (name, games_dir=None))]
    fn new(name: &str, games_dir: Option<PathBuf>) -> PyResult<Self> {
        let inner = LoadedGame::load(name, games_dir.as_deref()).map_err(value_err)?;
        Ok(PyGame { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn level_count(&self) -> usize {
        self.inner.levels.len()
    }

    #[getter]
    fn actions(&self) -> Vec<i64> {
        self.inner.game.actions().iter().map(|a| i64::from(a.code())).collect()
    }

    /// Natural-language rules, with the strategy notes when the game has them.
    fn rules_text(&self) -> String {
        textualizer::translate_rules(&self.inner.game.spec, self.inner.strategy.as_deref())
    }

    #[pyo3(signature = (level=0, seed=0))]
    fn new_state(&self, level: usize, seed: u64) -> PyResult<PyState> {
        let grid = self
            .inner
            .levels
            .get(level)
            .ok_or_else(|| PyValueError::new_err(format!("no level {level}")))?;
        let state = init_state(Arc::clone(&self.inner.game), grid, seed).map_err(value_err)?;
        Ok(PyState {
            inner: state,
            strategy: self.inner.strategy.clone(),
        })
    }

    /// Plays one episode and returns its log as a dict.
    #[pyo3(signature = (level, agent, seed=0, max_steps=2000, mock_llm=None))]
    fn run_episode<'py>(
        &self,
        py: Python<'py>,
        level: usize,
        agent: &str,
        seed: u64,
        max_steps: u32,
        mock_llm: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let grid = self
            .inner
            .levels
            .get(level)
            .ok_or_else(|| PyValueError::new_err(format!("no level {level}")))?;
        let spec = AgentSpec::parse(agent).map_err(value_err)?;
        let config = RunConfig {
            games: vec![self.inner.name.clone()],
            agents: vec![agent.to_string()],
            mock_llm,
            ..RunConfig::default()
        };
        let factory = AgentFactory::new(&config, std::slice::from_ref(&spec)).map_err(value_err)?;
        let mut built = factory
            .build(&spec, &config, self.inner.strategy.as_deref())
            .map_err(value_err)?;
        let log = py.detach(|| {
            harness::run_episode(
                &self.inner.name,
                &self.inner.game,
                level,
                grid,
                built.as_mut(),
                &spec.label,
                seed,
                max_steps,
            )
        });
        to_python(py, &log)
    }
}

#[pyclass(name = "State", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: GameState,
    strategy: Option<String>,
}

#[pymethods]
impl PyState {
    #[getter]
    fn tick(&self) -> u32 {
        self.inner.tick
    }

    #[getter]
    fn score(&self) -> f64 {
        self.inner.score
    }

    /// `"ongoing"`, `"win"` or `"loss"`.
    #[getter]
    fn outcome(&self) -> &'static str {
        match self.inner.outcome {
            Outcome::Ongoing => "ongoing",
            Outcome::Win => "win",
            Outcome::Loss => "loss",
        }
    }

    #[getter]
    fn is_terminal(&self) -> bool {
        self.inner.is_terminal()
    }

    #[getter]
    fn legal_actions(&self) -> Vec<i64> {
        self.inner.legal_actions().iter().map(|a| i64::from(a.code())).collect()
    }

    #[getter]
    fn avatar_position(&self) -> Option<(i32, i32)> {
        self.inner.avatar().map(|a| a.pos())
    }

    /// Advances one tick. Returns `(reward, state_changed)`.
    fn step(&mut self, action_code: i64) -> PyResult<(f64, bool)> {
        let result = self.inner.step(action(action_code)?).map_err(value_err)?;
        Ok((result.reward, result.changed))
    }

    fn render(&self) -> String {
        textualizer::serialize_state(&self.inner).map
    }

    /// Returns the `(system, user)` prompt pair for this state.
    #[pyo3(signature = (coordinate_tagging=false, verbose_grounding=false))]
    fn prompt(&self, coordinate_tagging: bool, verbose_grounding: bool) -> (String, String) {
        let options = PromptOptions {
            coordinate_tagging,
            verbose_grounding,
        };
        let bundle = textualizer::assemble_prompt(&self.inner, self.strategy.as_deref(), options);
        (bundle.system_text(), bundle.user_text())
    }

    fn copy(&self) -> PyState {
        self.clone()
    }

    #[pyo3(signature = (budget_ms=40.0, seed=0))]
    fn mcts_action(&self, py: Python<'_>, budget_ms: f64, seed: u64) -> i64 {
        i64::from(py.detach(|| mcts_select(&self.inner, budget_ms, seed)).code())
    }
}

/// Runs a batch described by a TOML document and returns the summary.
#[pyfunction]
fn run_batch<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = RunConfig::from_toml(config_toml).map_err(value_err)?;
    let result = py.detach(|| harness::run_batch(&config)).map_err(value_err)?;
    to_python(py, &result.summary)
}

#[pymodule]
fn vgdl_bench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(games, m)?)?;
    m.add_function(wrap_pyfunction!(parse_game, m)?)?;
    m.add_function(wrap_pyfunction!(parse_action, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_reward, m)?)?;
    m.add_function(wrap_pyfunction!(overall_score, m)?)?;
    m.add_function(wrap_pyfunction!(step_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_class::<PyGame>()?;
    m.add_class::<PyState>()?;
    Ok(())
}
