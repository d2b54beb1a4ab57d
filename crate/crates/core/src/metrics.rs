//! Episode records and the evaluation metrics computed from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Action;

pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Number of preceding steps searched for a move that the current one undoes.
pub const CANCEL_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("episodes use different step caps ({0} and {1})")]
    MixedMaxSteps(u32, u32),
    #[error("reward {r} outside [{r_min}, {r_max}]")]
    RangeViolation { r: f64, r_min: f64, r_max: f64 },
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("input {0} is outside [0, 1]")]
    OutOfRangeInput(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u32,
    pub action: Action,
    pub reward: f64,
    pub state_changed: bool,
    pub avatar_before: Option<(i32, i32)>,
    pub avatar_after: Option<(i32, i32)>,
    #[serde(default)]
    pub meaningful: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
}

impl StepRecord {
    pub fn new(tick: u32, action: Action, reward: f64, state_changed: bool) -> StepRecord {
        StepRecord {
            tick,
            action,
            reward,
            state_changed,
            avatar_before: None,
            avatar_after: None,
            meaningful: false,
            parse_failure: false,
            agent_error: None,
            prompt_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    Win,
    Loss,
    /// Step cap reached; counts as a loss.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub game: String,
    pub level: usize,
    pub agent: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub outcome: EpisodeOutcome,
    pub terminal_tick: u32,
    pub total_reward: f64,
    pub max_steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EpisodeLog {
    pub fn is_win(&self) -> bool {
        self.outcome == EpisodeOutcome::Win
    }

    pub fn meaningful_ratio(&self) -> f64 {
        meaningful_ratio(&self.steps)
    }

    /// `1 - terminal_tick / max_steps`; an episode without steps scores 0.
    pub fn inverted_steps(&self) -> f64 {
        if self.steps.is_empty() || self.max_steps == 0 {
            return 0.0;
        }
        (1.0 - f64::from(self.terminal_tick) / f64::from(self.max_steps)).clamp(0.0, 1.0)
    }
}

/// Sets `meaningful` on each record.
///
/// A step is meaningful when it is not NIL and it earned reward or changed
/// the world. A directional step that undoes one of the previous
/// [`CANCEL_WINDOW`] steps (inverse direction, avatar back where that step
/// started, neither step rewarded) makes both steps non-meaningful.
pub fn mark_meaningful(steps: &mut [StepRecord]) {
    let mut keep: Vec<bool> = steps
        .iter()
        .map(|s| s.action != Action::Nil && (s.reward != 0.0 || s.state_changed))
        .collect();
    for i in 0..steps.len() {
        let Some(inverse) = steps[i].action.inverse() else { continue };
        for j in i.saturating_sub(CANCEL_WINDOW)..i {
            let cancels = steps[j].action == inverse
                && steps[i].avatar_after.is_some()
                && steps[i].avatar_after == steps[j].avatar_before
                && steps[i].reward == 0.0
                && steps[j].reward == 0.0;
            if cancels {
                keep[i] = false;
                keep[j] = false;
            }
        }
    }
    for (s, k) in steps.iter_mut().zip(keep) {
        s.meaningful = k;
    }
}

pub fn meaningful_ratio(steps: &[StepRecord]) -> f64 {
    if steps.is_empty() {
        return 0.0;
    }
    steps.iter().filter(|s| s.meaningful).count() as f64 / steps.len() as f64
}

/// `1 - mean(terminal_tick) / max_steps`, clamped to [0, 1].
pub fn step_efficiency(logs: &[EpisodeLog]) -> Result<f64, MetricsError> {
    let Some(first) = logs.first() else {
        return Ok(0.0);
    };
    if let Some(other) = logs.iter().find(|l| l.max_steps != first.max_steps) {
        return Err(MetricsError::MixedMaxSteps(first.max_steps, other.max_steps));
    }
    let ticks: Vec<u32> = logs.iter().map(|l| l.terminal_tick).collect();
    Ok(step_efficiency_from_ticks(&ticks, first.max_steps))
}

pub fn step_efficiency_from_ticks(ticks: &[u32], max_steps: u32) -> f64 {
    if ticks.is_empty() || max_steps == 0 {
        return 0.0;
    }
    let mean = ticks.iter().map(|&t| f64::from(t)).sum::<f64>() / ticks.len() as f64;
    (1.0 - mean / f64::from(max_steps)).clamp(0.0, 1.0)
}

pub fn win_rate(logs: &[EpisodeLog]) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    logs.iter().filter(|l| l.is_win()).count() as f64 / logs.len() as f64
}

/// Min-max scaling `(r - r_min) / (r_max - r_min + epsilon)`.
pub fn normalized_reward(r: f64, r_min: f64, r_max: f64, epsilon: f64) -> Result<f64, MetricsError> {
    if !(epsilon > 0.0) {
        return Err(MetricsError::InvalidEpsilon(epsilon));
    }
    if !(r_min <= r && r <= r_max) {
        return Err(MetricsError::RangeViolation { r, r_min, r_max });
    }
    Ok((r - r_min) / (r_max - r_min + epsilon))
}

/// Equal-weight mean of the four normalized metrics.
pub fn overall_score(
    meaningful_ratio: f64,
    inverted_steps: f64,
    normalized_reward: f64,
    win_rate: f64,
) -> Result<f64, MetricsError> {
    let inputs = [meaningful_ratio, inverted_steps, normalized_reward, win_rate];
    if let Some(&bad) = inputs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MetricsError::OutOfRangeInput(bad));
    }
    Ok(inputs.iter().sum::<f64>() / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meaningful_ratio: f64,
    pub step_efficiency: f64,
    pub win_rate: f64,
    pub normalized_reward: f64,
    pub inverted_steps: f64,
    pub overall_score: f64,
    pub mean_reward: f64,
    pub episodes: usize,
    pub wins: usize,
    pub excluded: usize,
}

/// Aggregates a group of episodes. Episodes with a recorded failure are left
/// out of every mean and counted in `excluded`.
pub fn report(logs: &[EpisodeLog], r_min: f64, r_max: f64, epsilon: f64) -> Result<MetricsReport, MetricsError> {
    let used: Vec<EpisodeLog> = logs.iter().filter(|l| l.failure.is_none()).cloned().collect();
    let excluded = logs.len() - used.len();
    let n = used.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeLog) -> Result<f64, MetricsError>| -> Result<f64, MetricsError> {
        if used.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for l in &used {
            total += f(l)?;
        }
        Ok(total / n)
    };
    let meaningful = mean(&|l| Ok(l.meaningful_ratio()))?;
    let inverted = mean(&|l| Ok(l.inverted_steps()))?;
    let normalized = mean(&|l| normalized_reward(l.total_reward, r_min, r_max, epsilon))?;
    let mean_reward = mean(&|l| Ok(l.total_reward))?;
    let wins = used.iter().filter(|l| l.is_win()).count();
    let win = win_rate(&used);
    Ok(MetricsReport {
        meaningful_ratio: meaningful,
        step_efficiency: step_efficiency(&used)?,
        win_rate: win,
        normalized_reward: normalized,
        inverted_steps: inverted,
        overall_score: overall_score(meaningful, inverted, normalized, win)?,
        mean_reward,
        episodes: used.len(),
        wins,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(action: Action, reward: f64, changed: bool, before: (i32, i32), after: (i32, i32)) -> StepRecord {
        StepRecord {
            avatar_before: Some(before),
            avatar_after: Some(after),
            ..StepRecord::new(0, action, reward, changed)
        }
    }

    fn flags(steps: &mut [StepRecord]) -> Vec<bool> {
        mark_meaningful(steps);
        steps.iter().map(|s| s.meaningful).collect()
    }

    fn log(ticks: u32, max_steps: u32, reward: f64, outcome: EpisodeOutcome) -> EpisodeLog {
        EpisodeLog {
            game: "g".into(),
            level: 0,
            agent: "a".into(),
            seed: 0,
            steps: (0..ticks).map(|t| StepRecord::new(t, Action::Nil, 0.0, false)).collect(),
            outcome,
            terminal_tick: ticks,
            total_reward: reward,
            max_steps,
            failure: None,
        }
    }

    #[test]
    fn nil_is_never_meaningful() {
        assert_eq!(flags(&mut [rec(Action::Nil, 0.0, true, (0, 0), (0, 0))]), [false]);
    }

    #[test]
    fn wall_bump_is_not_meaningful() {
        assert_eq!(flags(&mut [rec(Action::Right, 0.0, false, (0, 0), (0, 0))]), [false]);
    }

    #[test]
    fn back_and_forth_cancels() {
        let mut steps = [
            rec(Action::Right, 0.0, true, (0, 0), (0, 1)),
            rec(Action::Left, 0.0, true, (0, 1), (0, 0)),
        ];
        assert_eq!(flags(&mut steps), [false, false]);
    }

    #[test]
    fn rewarded_step_blocks_cancellation() {
        let mut steps = [
            rec(Action::Right, 1.0, true, (0, 0), (0, 1)),
            rec(Action::Left, 0.0, true, (0, 1), (0, 0)),
        ];
        assert_eq!(flags(&mut steps), [true, true]);
    }

    #[test]
    fn cancellation_reaches_three_back() {
        let mut steps = [
            rec(Action::Up, 0.0, true, (3, 0), (2, 0)),
            rec(Action::Nil, 0.0, false, (2, 0), (2, 0)),
            rec(Action::Right, 0.0, false, (2, 0), (2, 0)),
            rec(Action::Down, 0.0, true, (2, 0), (3, 0)),
            rec(Action::Right, 0.0, true, (3, 0), (3, 1)),
        ];
        assert_eq!(flags(&mut steps), [false, false, false, false, true]);
        let mut far = [
            rec(Action::Up, 0.0, true, (3, 0), (2, 0)),
            rec(Action::Nil, 0.0, false, (2, 0), (2, 0)),
            rec(Action::Nil, 0.0, false, (2, 0), (2, 0)),
            rec(Action::Nil, 0.0, false, (2, 0), (2, 0)),
            rec(Action::Down, 0.0, true, (2, 0), (3, 0)),
        ];
        assert_eq!(flags(&mut far), [true, false, false, false, true]);
    }

    #[test]
    fn ratio() {
        let mut steps: Vec<StepRecord> = (0..10)
            .map(|i| rec(if i % 2 == 0 { Action::Up } else { Action::Nil }, 0.0, true, (20 - i, 0), (19 - i, 0)))
            .collect();
        mark_meaningful(&mut steps);
        assert_eq!(meaningful_ratio(&steps), 0.5);
        assert_eq!(meaningful_ratio(&[]), 0.0);
        let nil: Vec<StepRecord> = (0..4).map(|t| StepRecord::new(t, Action::Nil, 0.0, true)).collect();
        assert_eq!(meaningful_ratio(&nil), 0.0);
    }

    #[test]
    fn efficiency() {
        let logs = [log(400, 2000, 0.0, EpisodeOutcome::Loss), log(600, 2000, 0.0, EpisodeOutcome::Win)];
        assert!((step_efficiency(&logs).unwrap() - 0.75).abs() < 1e-12);
        let capped = [log(50, 50, 0.0, EpisodeOutcome::Timeout)];
        assert_eq!(step_efficiency(&capped).unwrap(), 0.0);
        assert_eq!(step_efficiency(&[log(0, 100, 0.0, EpisodeOutcome::Win)]).unwrap(), 1.0);
        let mixed = [log(1, 10, 0.0, EpisodeOutcome::Win), log(1, 20, 0.0, EpisodeOutcome::Win)];
        assert_eq!(step_efficiency(&mixed), Err(MetricsError::MixedMaxSteps(10, 20)));
    }

    #[test]
    fn empty_episode_inverted_steps_is_zero() {
        assert_eq!(log(0, 100, 0.0, EpisodeOutcome::Loss).inverted_steps(), 0.0);
        assert_eq!(log(25, 100, 0.0, EpisodeOutcome::Loss).inverted_steps(), 0.75);
    }

    #[test]
    fn normalization() {
        assert!((normalized_reward(10.0, 0.0, 10.0, 1e-9).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(normalized_reward(0.0, 0.0, 10.0, 1e-9).unwrap(), 0.0);
        assert_eq!(normalized_reward(5.0, 5.0, 5.0, 1e-9).unwrap(), 0.0);
        assert!(matches!(
            normalized_reward(11.0, 0.0, 10.0, 1e-9),
            Err(MetricsError::RangeViolation { .. })
        ));
        assert!(normalized_reward(1.0, 0.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn overall() {
        assert_eq!(overall_score(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!((overall_score(0.5, 0.8, 1.0, 0.3).unwrap() - 0.65).abs() < 1e-12);
        assert_eq!(overall_score(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(overall_score(1.5, 0.0, 0.0, 0.0), Err(MetricsError::OutOfRangeInput(1.5)));
    }

    #[test]
    fn report_excludes_failures() {
        let mut failed = log(3, 10, 0.0, EpisodeOutcome::Loss);
        failed.failure = Some("boom".into());
        let logs = [log(5, 10, 2.0, EpisodeOutcome::Win), failed];
        let r = report(&logs, 0.0, 2.0, DEFAULT_EPSILON).unwrap();
        assert_eq!((r.episodes, r.excluded, r.wins), (1, 1, 1));
        assert_eq!(r.win_rate, 1.0);
        assert!((r.step_efficiency - 0.5).abs() < 1e-12);
    }
}
