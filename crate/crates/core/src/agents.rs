//! Agents that pick one action per step: random, scripted replay, MCTS and
//! a language-model agent.

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Action, GameState, Outcome};
use crate::llm::{Decoding, LlmClient, LlmError};
use crate::textualizer::{assemble_prompt, PromptOptions};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("model call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("agent cannot act: {0}")]
    Other(String),
}

/// What an agent chose, plus bookkeeping for the step log.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub parse_failure: bool,
    pub prompt_tokens: Option<u64>,
}

impl Decision {
    pub fn plain(action: Action) -> Decision {
        Decision {
            action,
            parse_failure: false,
            prompt_tokens: None,
        }
    }
}

pub trait Agent: Send {
    fn name(&self) -> String;

    /// Prepares for a new episode.
    fn reset(&mut self, seed: u64);

    fn act(&mut self, state: &GameState) -> Result<Decision, AgentError>;
}

pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> RandomAgent {
        RandomAgent {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> String {
        "random".to_string()
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, state: &GameState) -> Result<Decision, AgentError> {
        let legal = state.legal_actions();
        Ok(Decision::plain(legal[self.rng.random_range(0..legal.len())]))
    }
}

/// Replays a fixed sequence, then NIL forever. Unavailable actions become NIL.
pub struct ScriptedAgent {
    script: Vec<Action>,
    next: usize,
}

impl ScriptedAgent {
    pub fn new(script: Vec<Action>) -> ScriptedAgent {
        ScriptedAgent { script, next: 0 }
    }
}

impl Agent for ScriptedAgent {
    fn name(&self) -> String {
        "scripted".to_string()
    }

    fn reset(&mut self, _seed: u64) {
        self.next = 0;
    }

    fn act(&mut self, state: &GameState) -> Result<Decision, AgentError> {
        let action = self.script.get(self.next).copied().unwrap_or(Action::Nil);
        self.next += 1;
        let action = if state.legal_actions().contains(&action) {
            action
        } else {
            Action::Nil
        };
        Ok(Decision::plain(action))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MctsBudget {
    Time(Duration),
    Iterations(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub budget: MctsBudget,
    /// Maximum simulated depth below the root, tree part included.
    pub rollout_depth: u32,
    pub exploration: f64,
    pub score_scale: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            budget: MctsBudget::Time(Duration::from_millis(40)),
            rollout_depth: 10,
            exploration: std::f64::consts::SQRT_2,
            score_scale: 10.0,
        }
    }
}

pub const WIN_VALUE: f64 = 1.0;
pub const LOSS_VALUE: f64 = -1.0;

struct Node {
    children: Vec<Option<usize>>,
    visits: u32,
    value_sum: f64,
}

impl Node {
    fn new(width: usize) -> Node {
        Node {
            children: vec![None; width],
            visits: 0,
            value_sum: 0.0,
        }
    }
}

/// Root statistics of one search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub action: Action,
    pub iterations: u32,
    pub visits: Vec<(Action, u32)>,
    pub values: Vec<(Action, f64)>,
}

/// Open-loop UCT. Every iteration re-seeds its copy of the state so that the
/// search never sees the real game's future random draws.
pub fn mcts_search(root: &GameState, config: &MctsConfig, rng: &mut ChaCha8Rng) -> SearchResult {
    let actions = root.legal_actions().to_vec();
    let width = actions.len();
    let mut nodes = vec![Node::new(width)];
    let started = Instant::now();
    let mut iterations = 0u32;
    let mut path: Vec<usize> = Vec::with_capacity(config.rollout_depth as usize + 1);
    let scale = if config.score_scale > 0.0 { config.score_scale } else { 1.0 };

    loop {
        let mut sim = root.clone();
        sim.reseed(rng.next_u64());
        path.clear();
        path.push(0);
        let mut node = 0;
        let mut depth = 0;

        while !sim.is_terminal() && depth < config.rollout_depth {
            let untried: Vec<usize> = (0..width).filter(|&a| nodes[node].children[a].is_none()).collect();
            if !untried.is_empty() {
                let a = untried[rng.random_range(0..untried.len())];
                let _ = sim.advance(actions[a]);
                depth += 1;
                nodes.push(Node::new(width));
                let child = nodes.len() - 1;
                nodes[node].children[a] = Some(child);
                path.push(child);
                break;
            }
            let parent_visits = f64::from(nodes[node].visits.max(1));
            let mut best: Vec<usize> = Vec::new();
            let mut best_score = f64::NEG_INFINITY;
            for a in 0..width {
                let c = &nodes[nodes[node].children[a].expect("fully expanded")];
                let n = f64::from(c.visits.max(1));
                let ucb = c.value_sum / n + config.exploration * (parent_visits.ln() / n).sqrt();
                if ucb > best_score {
                    best_score = ucb;
                    best.clear();
                }
                if ucb == best_score {
                    best.push(a);
                }
            }
            let a = best[rng.random_range(0..best.len())];
            let _ = sim.advance(actions[a]);
            depth += 1;
            node = nodes[node].children[a].expect("fully expanded");
            path.push(node);
        }

        while !sim.is_terminal() && depth < config.rollout_depth {
            let a = actions[rng.random_range(0..width)];
            let _ = sim.advance(a);
            depth += 1;
        }

        let value = match sim.outcome {
            Outcome::Win => WIN_VALUE,
            Outcome::Loss => LOSS_VALUE,
            Outcome::Ongoing => ((sim.score - root.score) / scale).tanh(),
        };
        for &n in &path {
            nodes[n].visits += 1;
            nodes[n].value_sum += value;
        }
        iterations += 1;

        let done = match config.budget {
            MctsBudget::Iterations(n) => iterations >= n.max(1),
            MctsBudget::Time(limit) => started.elapsed() >= limit,
        };
        if done {
            break;
        }
    }

    let visits: Vec<(Action, u32)> = (0..width)
        .map(|a| (actions[a], nodes[0].children[a].map_or(0, |c| nodes[c].visits)))
        .collect();
    let values: Vec<(Action, f64)> = (0..width)
        .map(|a| {
            let v = nodes[0].children[a].map_or(0.0, |c| {
                nodes[c].value_sum / f64::from(nodes[c].visits.max(1))
            });
            (actions[a], v)
        })
        .collect();
    let most = visits.iter().map(|v| v.1).max().unwrap_or(0);
    let tied: Vec<Action> = visits.iter().filter(|v| v.1 == most).map(|v| v.0).collect();
    let action = tied[rng.random_range(0..tied.len())];
    SearchResult {
        action,
        iterations,
        visits,
        values,
    }
}

pub struct MctsAgent {
    config: MctsConfig,
    rng: ChaCha8Rng,
}

impl MctsAgent {
    pub fn new(config: MctsConfig, seed: u64) -> MctsAgent {
        MctsAgent {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for MctsAgent {
    fn name(&self) -> String {
        "mcts".to_string()
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, state: &GameState) -> Result<Decision, AgentError> {
        Ok(Decision::plain(mcts_search(state, &self.config, &mut self.rng).action))
    }
}

/// Convenience wrapper: one search with a wall-clock budget.
pub fn mcts_select(state: &GameState, budget_ms: f64, seed: u64) -> Action {
    let config = MctsConfig {
        budget: MctsBudget::Time(Duration::from_secs_f64(budget_ms.max(0.0) / 1000.0)),
        ..MctsConfig::default()
    };
    mcts_search(state, &config, &mut ChaCha8Rng::seed_from_u64(seed)).action
}

/// Result of reading an action out of model text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedAction {
    pub action: Action,
    pub failed: bool,
}

/// Takes the first `Action:<n>` in the text. Anything unreadable or not in
/// `legal` gives NIL with `failed` set.
pub fn parse_llm_action(text: &str, legal: &[Action]) -> ParsedAction {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    let re = PATTERN.get_or_init(|| Regex::new(r"Action:\s*([+-]?\d+)").expect("valid pattern"));
    let found = re
        .captures(text)
        .and_then(|c| c[1].parse::<i64>().ok())
        .and_then(Action::from_code)
        .filter(|a| legal.contains(a));
    match found {
        Some(action) => ParsedAction { action, failed: false },
        None => ParsedAction {
            action: Action::Nil,
            failed: true,
        },
    }
}

/// Zero-shot model agent: every call sees only the current prompt.
pub struct LlmAgent {
    client: Arc<LlmClient>,
    options: PromptOptions,
    decoding: Decoding,
    strategy: Option<String>,
}

impl LlmAgent {
    pub fn new(client: Arc<LlmClient>, options: PromptOptions, decoding: Decoding, strategy: Option<String>) -> LlmAgent {
        LlmAgent {
            client,
            options,
            decoding,
            strategy,
        }
    }
}

impl Agent for LlmAgent {
    fn name(&self) -> String {
        "llm".to_string()
    }

    fn reset(&mut self, _seed: u64) {}

    fn act(&mut self, state: &GameState) -> Result<Decision, AgentError> {
        let bundle = assemble_prompt(state, self.strategy.as_deref(), self.options);
        let completion = self
            .client
            .complete(&bundle.system_text(), &bundle.user_text(), self.decoding)?;
        let parsed = parse_llm_action(&completion.text, state.legal_actions());
        if parsed.failed {
            log::debug!("unparseable model reply: {:?}", completion.text);
        }
        Ok(Decision {
            action: parsed.action,
            parse_failure: parsed.failed,
            prompt_tokens: Some(completion.usage.prompt_tokens),
        })
    }
}
