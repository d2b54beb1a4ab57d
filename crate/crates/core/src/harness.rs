//! Episode loop, batch runner and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::{Agent, LlmAgent, MctsAgent, MctsBudget, MctsConfig, RandomAgent, ScriptedAgent};
use crate::engine::{init_state, Action, Game, GameState, Outcome};
use crate::games::{GameLoadError, LoadedGame};
use crate::llm::{Decoding, LlmClient, LlmError, MockScript, MockServer, ModelEndpoint};
use crate::metrics::{self, mark_meaningful, EpisodeLog, EpisodeOutcome, MetricsError, MetricsReport, StepRecord};
use crate::textualizer::PromptOptions;
use crate::vgdl::LevelGrid;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Game(#[from] GameLoadError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("output directory {0} is not empty; pass --overwrite to reuse it")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {message}")]
    BadLog { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `"all"` or an explicit list of level indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Levels {
    #[default]
    All,
    List(Vec<usize>),
}

impl Levels {
    pub fn parse(text: &str) -> Result<Levels, HarnessError> {
        if text.trim() == "all" {
            return Ok(Levels::All);
        }
        text.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("bad level `{t}`")))
            })
            .collect::<Result<Vec<usize>, _>>()
            .map(Levels::List)
    }

    fn resolve(&self, available: usize) -> Result<Vec<usize>, HarnessError> {
        match self {
            Levels::All => Ok((0..available).collect()),
            Levels::List(list) => {
                if let Some(bad) = list.iter().find(|&&l| l >= available) {
                    return Err(HarnessError::Config(format!(
                        "level {bad} requested but only {available} exist"
                    )));
                }
                Ok(list.clone())
            }
        }
    }
}

impl Serialize for Levels {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Levels::All => s.serialize_str("all"),
            Levels::List(l) => l.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Levels {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            List(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "all" => Ok(Levels::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected \"all\" or a list, got `{w}`"))),
            Raw::List(l) => Ok(Levels::List(l)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentKind {
    Random,
    Scripted(Vec<Action>),
    Mcts(MctsBudget),
    Llm,
}

/// An agent as named on the command line: `random`, `mcts`, `mcts:<ms>`,
/// `mcts-iters:<n>`, `scripted:R,R,U`, `scripted:@<file>` or `llm`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub label: String,
    pub kind: AgentKind,
}

fn parse_script(text: &str) -> Result<Vec<Action>, HarnessError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let action = match t.to_ascii_uppercase().as_str() {
                "N" | "NIL" => Some(Action::Nil),
                "L" | "LEFT" => Some(Action::Left),
                "R" | "RIGHT" => Some(Action::Right),
                "D" | "DOWN" => Some(Action::Down),
                "U" | "UP" => Some(Action::Up),
                "S" | "USE" => Some(Action::Use),
                other => other.parse::<i64>().ok().and_then(Action::from_code),
            };
            action.ok_or_else(|| HarnessError::Config(format!("unknown scripted action `{t}`")))
        })
        .collect()
}

impl AgentSpec {
    pub fn parse(text: &str) -> Result<AgentSpec, HarnessError> {
        let text = text.trim();
        let (head, arg) = match text.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (text, None),
        };
        let kind = match (head, arg) {
            ("random", None) => AgentKind::Random,
            ("llm", None) => AgentKind::Llm,
            ("mcts", None) => AgentKind::Mcts(MctsBudget::Time(Duration::from_millis(40))),
            ("mcts", Some(ms)) => {
                let ms: f64 = ms
                    .parse()
                    .ok()
                    .filter(|v: &f64| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| HarnessError::Config(format!("bad MCTS budget `{ms}`")))?;
                AgentKind::Mcts(MctsBudget::Time(Duration::from_secs_f64(ms / 1000.0)))
            }
            ("mcts-iters", Some(n)) => {
                let n: u32 = n
                    .parse()
                    .ok()
                    .filter(|v| *v > 0)
                    .ok_or_else(|| HarnessError::Config(format!("bad iteration count `{n}`")))?;
                AgentKind::Mcts(MctsBudget::Iterations(n))
            }
            ("scripted", Some(arg)) => {
                let body = match arg.strip_prefix('@') {
                    Some(path) => fs::read_to_string(path).map_err(io_err(Path::new(path)))?,
                    None => arg.to_string(),
                };
                AgentKind::Scripted(parse_script(&body)?)
            }
            _ => return Err(HarnessError::Config(format!("unknown agent `{text}`"))),
        };
        Ok(AgentSpec {
            label: text.to_string(),
            kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    #[serde(flatten)]
    pub endpoint: ModelEndpoint,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            endpoint: ModelEndpoint::default(),
            temperature: 0.9,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsSettings {
    pub rollout_depth: u32,
    pub exploration: f64,
    pub score_scale: f64,
}

impl Default for MctsSettings {
    fn default() -> Self {
        let d = MctsConfig::default();
        MctsSettings {
            rollout_depth: d.rollout_depth,
            exploration: d.exploration,
            score_scale: d.score_scale,
        }
    }
}

/// Batch configuration, readable from TOML. Command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub games: Vec<String>,
    pub levels: Levels,
    pub agents: Vec<String>,
    pub episodes_per_level: u32,
    pub max_steps: u32,
    pub seed_base: u64,
    pub output_dir: Option<PathBuf>,
    pub overwrite: bool,
    pub parallelism: usize,
    pub games_dir: Option<PathBuf>,
    pub prompt: PromptOptions,
    pub mock_llm: Option<PathBuf>,
    pub epsilon: f64,
    pub llm: LlmSettings,
    pub mcts: MctsSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            games: Vec::new(),
            levels: Levels::All,
            agents: vec!["random".to_string()],
            episodes_per_level: 5,
            max_steps: 2000,
            seed_base: 0,
            output_dir: None,
            overwrite: false,
            parallelism: 1,
            games_dir: None,
            prompt: PromptOptions::default(),
            mock_llm: None,
            epsilon: metrics::DEFAULT_EPSILON,
            llm: LlmSettings::default(),
            mcts: MctsSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, HarnessError> {
        RunConfig::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<Vec<AgentSpec>, HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.games.is_empty() {
            return fail("no games selected");
        }
        if self.agents.is_empty() {
            return fail("no agents selected");
        }
        if self.episodes_per_level == 0 {
            return fail("episodes_per_level must be at least 1");
        }
        if self.max_steps == 0 {
            return fail("max_steps must be at least 1");
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return fail("temperature must lie in [0, 2]");
        }
        if self.mcts.rollout_depth == 0 {
            return fail("mcts rollout_depth must be at least 1");
        }
        let specs = self
            .agents
            .iter()
            .map(|a| AgentSpec::parse(a))
            .collect::<Result<Vec<_>, _>>()?;
        let mut labels: Vec<&str> = specs.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return fail("agent list contains duplicates");
        }
        Ok(specs)
    }

    fn mcts_config(&self, budget: MctsBudget) -> MctsConfig {
        MctsConfig {
            budget,
            rollout_depth: self.mcts.rollout_depth,
            exploration: self.mcts.exploration,
            score_scale: self.mcts.score_scale,
        }
    }
}

/// Shared resources needed to build agents for one batch.
pub struct AgentFactory {
    client: Option<Arc<LlmClient>>,
    _mock: Option<MockServer>,
    prompt: PromptOptions,
    decoding: Decoding,
}

impl AgentFactory {
    pub fn new(config: &RunConfig, specs: &[AgentSpec]) -> Result<AgentFactory, HarnessError> {
        let needs_llm = specs.iter().any(|s| s.kind == AgentKind::Llm);
        let (client, mock) = match (needs_llm, &config.mock_llm) {
            (false, _) => (None, None),
            (true, Some(script)) => {
                let server = MockServer::start(&MockScript::from_file(script)?)?;
                let client = LlmClient::new(server.endpoint())?;
                (Some(Arc::new(client)), Some(server))
            }
            (true, None) => (Some(Arc::new(LlmClient::new(config.llm.endpoint.clone())?)), None),
        };
        Ok(AgentFactory {
            client,
            _mock: mock,
            prompt: config.prompt,
            decoding: Decoding {
                temperature: config.llm.temperature,
                max_tokens: config.llm.max_tokens,
            },
        })
    }

    /// Uses an existing client for `llm` agents.
    pub fn with_client(client: Arc<LlmClient>, prompt: PromptOptions, decoding: Decoding) -> AgentFactory {
        AgentFactory {
            client: Some(client),
            _mock: None,
            prompt,
            decoding,
        }
    }

    pub fn build(
        &self,
        spec: &AgentSpec,
        config: &RunConfig,
        strategy: Option<&str>,
    ) -> Result<Box<dyn Agent>, HarnessError> {
        Ok(match &spec.kind {
            AgentKind::Random => Box::new(RandomAgent::new(0)),
            AgentKind::Scripted(script) => Box::new(ScriptedAgent::new(script.clone())),
            AgentKind::Mcts(budget) => Box::new(MctsAgent::new(config.mcts_config(*budget), 0)),
            AgentKind::Llm => {
                let client = self
                    .client
                    .clone()
                    .ok_or_else(|| HarnessError::Config("no model endpoint configured".into()))?;
                Box::new(LlmAgent::new(
                    client,
                    self.prompt,
                    self.decoding,
                    strategy.map(str::to_string),
                ))
            }
        })
    }
}

/// Plays one episode. `observe` sees the state after every step.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_observed(
    game_name: &str,
    game: &Arc<Game>,
    level_index: usize,
    level: &LevelGrid,
    agent: &mut dyn Agent,
    agent_label: &str,
    seed: u64,
    max_steps: u32,
    observe: &mut dyn FnMut(&GameState, &StepRecord),
) -> EpisodeLog {
    let mut log = EpisodeLog {
        game: game_name.to_string(),
        level: level_index,
        agent: agent_label.to_string(),
        seed,
        steps: Vec::new(),
        outcome: EpisodeOutcome::Loss,
        terminal_tick: 0,
        total_reward: 0.0,
        max_steps,
        failure: None,
    };
    agent.reset(seed);
    let mut state = match init_state(Arc::clone(game), level, seed) {
        Ok(s) => s,
        Err(e) => {
            log.failure = Some(e.to_string());
            return log;
        }
    };
    while !state.is_terminal() && state.tick < max_steps {
        let before = state.avatar().map(|a| a.pos());
        let (decision, agent_error) = match agent.act(&state) {
            Ok(d) => (d, None),
            Err(e) => (crate::agents::Decision::plain(Action::Nil), Some(e.to_string())),
        };
        let tick = state.tick;
        let result = match state.step(decision.action) {
            Ok(r) => r,
            Err(e) => {
                log.failure = Some(e.to_string());
                break;
            }
        };
        let record = StepRecord {
            tick,
            action: decision.action,
            reward: result.reward,
            state_changed: result.changed,
            avatar_before: before,
            avatar_after: state.avatar().map(|a| a.pos()),
            meaningful: false,
            parse_failure: decision.parse_failure,
            agent_error,
            prompt_tokens: decision.prompt_tokens,
        };
        observe(&state, &record);
        log.total_reward += record.reward;
        log.steps.push(record);
    }
    mark_meaningful(&mut log.steps);
    log.terminal_tick = log.steps.len() as u32;
    log.outcome = match state.outcome {
        Outcome::Win => EpisodeOutcome::Win,
        Outcome::Loss => EpisodeOutcome::Loss,
        Outcome::Ongoing => EpisodeOutcome::Timeout,
    };
    log
}

#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    game_name: &str,
    game: &Arc<Game>,
    level_index: usize,
    level: &LevelGrid,
    agent: &mut dyn Agent,
    agent_label: &str,
    seed: u64,
    max_steps: u32,
) -> EpisodeLog {
    run_episode_observed(
        game_name,
        game,
        level_index,
        level,
        agent,
        agent_label,
        seed,
        max_steps,
        &mut |_, _| {},
    )
}

/// One summary row: a (game, level, agent) group of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub game: String,
    pub level: usize,
    pub agent: String,
    pub r_min: f64,
    pub r_max: f64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAggregate {
    pub agent: String,
    pub average_meaningful_ratio: f64,
    pub overall_win_rate: f64,
    pub average_overall_score: f64,
    pub average_step_efficiency: f64,
    pub average_normalized_reward: f64,
    pub episodes: usize,
    pub wins: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRollup {
    pub game: String,
    #[serde(flatten)]
    pub aggregate: AgentAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<ReportRow>,
    pub aggregate: Vec<AgentAggregate>,
    pub per_game: Vec<GameRollup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub logs: Vec<EpisodeLog>,
    pub summary: Summary,
}

fn aggregate(agent: &str, rows: &[&ReportRow]) -> AgentAggregate {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&MetricsReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    let episodes: usize = rows.iter().map(|r| r.report.episodes).sum();
    let wins: usize = rows.iter().map(|r| r.report.wins).sum();
    AgentAggregate {
        agent: agent.to_string(),
        average_meaningful_ratio: mean(|r| r.meaningful_ratio),
        overall_win_rate: if episodes == 0 { 0.0 } else { wins as f64 / episodes as f64 },
        average_overall_score: mean(|r| r.overall_score),
        average_step_efficiency: mean(|r| r.step_efficiency),
        average_normalized_reward: mean(|r| r.normalized_reward),
        episodes,
        wins,
        excluded: rows.iter().map(|r| r.report.excluded).sum(),
    }
}

/// Groups logs by (game, level, agent) and computes every report. Reward
/// bounds are shared by all agents on the same level.
pub fn summarize(logs: &[EpisodeLog], epsilon: f64) -> Result<Summary, HarnessError> {
    let mut groups: BTreeMap<(String, usize), BTreeMap<String, Vec<EpisodeLog>>> = BTreeMap::new();
    let mut agent_order: Vec<String> = Vec::new();
    for log in logs {
        if !agent_order.contains(&log.agent) {
            agent_order.push(log.agent.clone());
        }
        groups
            .entry((log.game.clone(), log.level))
            .or_default()
            .entry(log.agent.clone())
            .or_default()
            .push(log.clone());
    }
    let mut rows = Vec::new();
    for ((game, level), by_agent) in &groups {
        let rewards = by_agent
            .values()
            .flatten()
            .filter(|l| l.failure.is_none())
            .map(|l| l.total_reward);
        let (r_min, r_max) = rewards.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
        let (r_min, r_max) = if r_min.is_finite() { (r_min, r_max) } else { (0.0, 0.0) };
        for agent in &agent_order {
            let Some(group) = by_agent.get(agent) else { continue };
            rows.push(ReportRow {
                game: game.clone(),
                level: *level,
                agent: agent.clone(),
                r_min,
                r_max,
                report: metrics::report(group, r_min, r_max, epsilon)?,
            });
        }
    }
    let overall: Vec<AgentAggregate> = agent_order
        .iter()
        .map(|a| aggregate(a, &rows.iter().filter(|r| &r.agent == a).collect::<Vec<_>>()))
        .collect();
    let games: Vec<&String> = {
        let mut g: Vec<&String> = rows.iter().map(|r| &r.game).collect();
        g.dedup();
        g
    };
    let mut per_game = Vec::new();
    for game in games {
        for agent in &agent_order {
            let subset: Vec<&ReportRow> = rows.iter().filter(|r| &r.game == game && &r.agent == agent).collect();
            if !subset.is_empty() {
                per_game.push(GameRollup {
                    game: game.clone(),
                    aggregate: aggregate(agent, &subset),
                });
            }
        }
    }
    Ok(Summary {
        rows,
        aggregate: overall,
        per_game,
    })
}

fn ensure_writable(dir: &Path, overwrite: bool) -> Result<(), HarnessError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
        if entries.next().is_some() && !overwrite {
            return Err(HarnessError::OutputExists(dir.to_path_buf()));
        }
    }
    Ok(())
}

/// Runs every (game, level, agent, episode) of the config. Episode `i` uses
/// seed `seed_base + i`.
pub fn run_batch(config: &RunConfig) -> Result<BatchResult, HarnessError> {
    let specs = config.validate()?;
    if let Some(dir) = &config.output_dir {
        ensure_writable(dir, config.overwrite)?;
    }
    let games = config
        .games
        .iter()
        .map(|g| LoadedGame::load(g, config.games_dir.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for game in &games {
        for level in config.levels.resolve(game.levels.len())? {
            for spec in &specs {
                for episode in 0..config.episodes_per_level {
                    jobs.push((game, level, spec, config.seed_base + u64::from(episode)));
                }
            }
        }
    }
    let factory = AgentFactory::new(config, &specs)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let logs: Vec<EpisodeLog> = pool.install(|| {
        jobs.par_iter()
            .map(|&(game, level, spec, seed)| {
                match factory.build(spec, config, game.strategy.as_deref()) {
                    Ok(mut agent) => run_episode(
                        &game.name,
                        &game.game,
                        level,
                        &game.levels[level],
                        agent.as_mut(),
                        &spec.label,
                        seed,
                        config.max_steps,
                    ),
                    Err(e) => EpisodeLog {
                        game: game.name.clone(),
                        level,
                        agent: spec.label.clone(),
                        seed,
                        steps: Vec::new(),
                        outcome: EpisodeOutcome::Loss,
                        terminal_tick: 0,
                        total_reward: 0.0,
                        max_steps: config.max_steps,
                        failure: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let summary = summarize(&logs, config.epsilon)?;
    let result = BatchResult { logs, summary };
    if let Some(dir) = &config.output_dir {
        emit_report(&result, dir, config.overwrite)?;
    }
    Ok(result)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn log_file_name(log: &EpisodeLog) -> String {
    format!(
        "{}_lvl{}_{}_seed{}.jsonl",
        log.game,
        log.level,
        sanitize(&log.agent),
        log.seed
    )
}

/// Serializes one episode as line-delimited JSON: a header line, then one
/// line per step.
pub fn episode_to_jsonl(log: &EpisodeLog) -> String {
    let header = json!({
        "type": "episode",
        "game": log.game,
        "level": log.level,
        "agent": log.agent,
        "seed": log.seed,
        "outcome": log.outcome,
        "terminal_tick": log.terminal_tick,
        "total_reward": log.total_reward,
        "max_steps": log.max_steps,
        "failure": log.failure,
    });
    let mut out = header.to_string();
    out.push('\n');
    for step in &log.steps {
        let mut line = serde_json::to_value(step).expect("step records serialize");
        line["type"] = json!("step");
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn episode_from_jsonl(text: &str) -> Result<EpisodeLog, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Value = serde_json::from_str(lines.next().ok_or("empty log")?).map_err(|e| e.to_string())?;
    if header["type"] != "episode" {
        return Err("first line is not an episode header".into());
    }
    fn field<T: serde::de::DeserializeOwned>(header: &Value, k: &str) -> Result<T, String> {
        serde_json::from_value(header[k].clone()).map_err(|e| format!("{k}: {e}"))
    }
    let mut steps = Vec::new();
    for line in lines {
        let mut v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("type");
        }
        steps.push(serde_json::from_value(v).map_err(|e| e.to_string())?);
    }
    Ok(EpisodeLog {
        game: field(&header, "game")?,
        level: field(&header, "level")?,
        agent: field(&header, "agent")?,
        seed: field(&header, "seed")?,
        steps,
        outcome: field(&header, "outcome")?,
        terminal_tick: field(&header, "terminal_tick")?,
        total_reward: field(&header, "total_reward")?,
        max_steps: field(&header, "max_steps")?,
        failure: field(&header, "failure")?,
    })
}

/// Writes `logs/*.jsonl`, `summary.json` and `summary.csv` into `dir`.
pub fn emit_report(result: &BatchResult, dir: &Path, overwrite: bool) -> Result<(), HarnessError> {
    ensure_writable(dir, overwrite)?;
    let logs_dir = dir.join("logs");
    fs::create_dir_all(&logs_dir).map_err(io_err(&logs_dir))?;
    for log in &result.logs {
        let path = logs_dir.join(log_file_name(log));
        fs::write(&path, episode_to_jsonl(log)).map_err(io_err(&path))?;
    }
    write_summary(&result.summary, dir)
}

pub fn write_summary(summary: &Summary, dir: &Path) -> Result<(), HarnessError> {
    let json_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&json_path, text + "\n").map_err(io_err(&json_path))?;

    let csv_path = dir.join("summary.csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::Io {
        path: csv_path.clone(),
        source: e.into(),
    })?;
    for row in &summary.rows {
        writer.serialize(CsvRow::from(row)).map_err(|e| HarnessError::Io {
            path: csv_path.clone(),
            source: e.into(),
        })?;
    }
    writer.flush().map_err(io_err(&csv_path))
}

#[derive(Serialize)]
struct CsvRow<'a> {
    game: &'a str,
    level: usize,
    agent: &'a str,
    meaningful_ratio: f64,
    step_efficiency: f64,
    win_rate: f64,
    normalized_reward: f64,
    inverted_steps: f64,
    overall_score: f64,
    mean_reward: f64,
    r_min: f64,
    r_max: f64,
    episodes: usize,
    wins: usize,
    excluded: usize,
}

impl<'a> From<&'a ReportRow> for CsvRow<'a> {
    fn from(r: &'a ReportRow) -> Self {
        CsvRow {
            game: &r.game,
            level: r.level,
            agent: &r.agent,
            meaningful_ratio: r.report.meaningful_ratio,
            step_efficiency: r.report.step_efficiency,
            win_rate: r.report.win_rate,
            normalized_reward: r.report.normalized_reward,
            inverted_steps: r.report.inverted_steps,
            overall_score: r.report.overall_score,
            mean_reward: r.report.mean_reward,
            r_min: r.r_min,
            r_max: r.r_max,
            episodes: r.report.episodes,
            wins: r.report.wins,
            excluded: r.report.excluded,
        }
    }
}

/// Reads every `*.jsonl` episode log under `dir/logs` (or `dir` itself).
pub fn read_logs(dir: &Path) -> Result<Vec<EpisodeLog>, HarnessError> {
    let logs_dir = if dir.join("logs").is_dir() { dir.join("logs") } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = fs::read_dir(&logs_dir)
        .map_err(io_err(&logs_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            episode_from_jsonl(&text).map_err(|message| HarnessError::BadLog {
                path: p.clone(),
                message,
            })
        })
        .collect()
}
