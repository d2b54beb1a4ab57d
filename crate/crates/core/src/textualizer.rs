//! Text observations: rule sentences, the ASCII map, coordinate lines,
//! neighbourhood descriptions and the per-step prompt.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{Dir, Game, GameState, Sprite};
use crate::vgdl::{Effect, GameSpec, InteractionRule, SpriteClass, TerminationKind, TerminationRule, BACKGROUND, EOS};

pub const MECHANICS_NOTICE: &str = "Some directional actions may rotate the avatar without movement. \
Repeating the direction may be needed. Avoid null actions. Interpret the state carefully and act meaningfully.";

pub const RESPONSE_FORMAT: &str =
    "Reply with a one-line justification of your action, followed by \\\\ Action:<action number>";

pub const SECTION_HEADERS: [&str; 5] = [
    "=== Game Rules ===",
    "=== Available Actions ===",
    "=== Important Mechanics Notice ===",
    "=== Sprite Mapping ===",
    "=== Current State ===",
];

const CHAR_POOL: &str = "*=~^!?<>:;%$&@+-/|abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("the avatar is not on the board")]
    AvatarDead,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct PromptOptions {
    #[serde(default)]
    pub coordinate_tagging: bool,
    #[serde(default)]
    pub verbose_grounding: bool,
}

/// Display character and draw priority of every sprite type.
#[derive(Debug, Clone)]
pub struct DisplayTable {
    chars: Vec<char>,
    tiers: Vec<u8>,
}

impl DisplayTable {
    pub fn new(game: &Game) -> DisplayTable {
        let spec = &game.spec;
        let n = game.kinds.len();
        let mut chars: Vec<Option<char>> = vec![None; n];
        // The last sprite of a mapping entry is the one drawn on top.
        for entry in &spec.level_mapping {
            if let Some(k) = entry.sprites.last().and_then(|s| spec.sprite_index(s)) {
                chars[k].get_or_insert(entry.symbol);
            }
        }
        let mut used: BTreeSet<char> = chars.iter().flatten().copied().collect();
        used.insert(BACKGROUND);
        let mut pool = CHAR_POOL.chars().filter(|c| !used.contains(c));
        let chars = chars
            .into_iter()
            .map(|c| c.or_else(|| pool.next()).unwrap_or('?'))
            .collect();
        let tiers = (0..n)
            .map(|k| {
                let kind = &game.kinds[k];
                if kind.hidden {
                    0
                } else if game.is_avatar_kind(k as u16) {
                    4
                } else {
                    match kind.class {
                        SpriteClass::Missile
                        | SpriteClass::Bomber
                        | SpriteClass::RandomNPC
                        | SpriteClass::Chaser
                        | SpriteClass::Fleeing
                        | SpriteClass::Passive
                        | SpriteClass::Flicker => 3,
                        SpriteClass::Portal
                        | SpriteClass::Resource
                        | SpriteClass::Door
                        | SpriteClass::SpawnPoint => 2,
                        _ => 1,
                    }
                }
            })
            .collect();
        DisplayTable { chars, tiers }
    }

    /// Character drawn for a sprite type; hidden sprites draw as floor.
    pub fn char_of(&self, kind: u16) -> char {
        if self.tiers[kind as usize] == 0 {
            BACKGROUND
        } else {
            self.chars[kind as usize]
        }
    }

    fn top<'a>(&self, sprites: impl Iterator<Item = &'a Sprite>) -> Option<&'a Sprite> {
        sprites
            .filter(|s| self.tiers[s.kind as usize] > 0)
            .max_by_key(|s| (self.tiers[s.kind as usize], s.id))
    }
}

/// The rendered map and the mapping entries for what it shows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateView {
    pub map: String,
    pub mapping: Vec<(String, char)>,
}

pub fn serialize_state(state: &GameState) -> StateView {
    let game = state.game();
    let table = DisplayTable::new(game);
    let (w, h) = (state.width, state.height);
    let mut grid = vec![BACKGROUND; w * h];
    let mut tops: Vec<Option<&Sprite>> = vec![None; w * h];
    for s in state.sprites() {
        let cell = s.row as usize * w + s.col as usize;
        tops[cell] = table.top(tops[cell].into_iter().chain(std::iter::once(s)));
    }
    for (cell, top) in tops.iter().enumerate() {
        if let Some(s) = top {
            grid[cell] = table.char_of(s.kind);
        }
    }
    let mut map = String::with_capacity((w + 1) * h);
    for row in grid.chunks(w) {
        map.extend(row);
        map.push('\n');
    }
    map.pop();

    let present: BTreeSet<u16> = state
        .sprites()
        .iter()
        .filter(|s| table.tiers[s.kind as usize] > 0)
        .map(|s| s.kind)
        .collect();
    let mut mapping = Vec::new();
    let avatar_kind = state.avatar().map(|a| a.kind);
    if let Some(k) = avatar_kind {
        mapping.push((game.kinds[k as usize].name.clone(), table.char_of(k)));
    }
    mapping.push(("background floor".to_string(), BACKGROUND));
    for &k in present.iter().filter(|&&k| Some(k) != avatar_kind) {
        mapping.push((game.kinds[k as usize].name.clone(), table.char_of(k)));
    }
    StateView { map, mapping }
}

fn on_border(state: &GameState, s: &Sprite) -> bool {
    s.row == 0 || s.col == 0 || s.row as usize + 1 == state.height || s.col as usize + 1 == state.width
}

/// One line per visible sprite, row-major, then by instance id. Border walls
/// are left out.
pub fn coordinate_tags(state: &GameState) -> Vec<String> {
    let game = state.game();
    let table = DisplayTable::new(game);
    let wall = game.kind_index("wall");
    let mut sprites: Vec<&Sprite> = state
        .sprites()
        .iter()
        .filter(|s| table.tiers[s.kind as usize] > 0)
        .filter(|s| {
            let is_wall = game.kinds[s.kind as usize].class == SpriteClass::Immovable
                && wall.is_some_and(|w| game.is_a(s.kind, w));
            !(is_wall && on_border(state, s))
        })
        .collect();
    sprites.sort_by_key(|s| (s.row, s.col, s.id));
    sprites
        .into_iter()
        .map(|s| {
            format!(
                "row={}, col={} -> {} ({})",
                s.row,
                s.col,
                table.char_of(s.kind),
                game.kinds[s.kind as usize].name
            )
        })
        .collect()
}

pub fn avatar_position_line(state: &GameState) -> String {
    match state.avatar() {
        Some(a) => format!("Avatar position: row={}, col={}", a.row, a.col),
        None => "Avatar position: none (the avatar is gone)".to_string(),
    }
}

/// Four lines naming what lies up, down, left and right of the avatar.
pub fn verbose_grounding(state: &GameState) -> Result<String, TextError> {
    let avatar = state.avatar().ok_or(TextError::AvatarDead)?;
    let game = state.game();
    let table = DisplayTable::new(game);
    let mut out = String::new();
    for (dir, label) in [
        (Dir::Up, "Up"),
        (Dir::Down, "Down"),
        (Dir::Left, "Left"),
        (Dir::Right, "Right"),
    ] {
        let (dr, dc) = dir.delta();
        let (r, c) = (avatar.row + dr, avatar.col + dc);
        let inside = r >= 0 && c >= 0 && (r as usize) < state.height && (c as usize) < state.width;
        let what = if !inside {
            "boundary".to_string()
        } else {
            table
                .top(state.sprites().iter().filter(|s| s.pos() == (r, c)))
                .map(|s| game.kinds[s.kind as usize].name.clone())
                .unwrap_or_else(|| "floor".to_string())
        };
        if inside {
            let _ = writeln!(out, "{label} of the avatar (row={r}, col={c}): {what}");
        } else {
            let _ = writeln!(out, "{label} of the avatar: {what}");
        }
    }
    out.pop();
    Ok(out)
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn fmt_number(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn rule_sentence(spec: &GameSpec, rule: &InteractionRule) -> String {
    let x = rule.actor.as_str();
    let y = rule.collider.as_str();
    let avatar = spec.avatar_root().name.as_str();
    let condition = if y == EOS {
        format!("If the {x} reaches the edge of the screen")
    } else if spec.is_a(y, avatar) && !spec.is_a(x, avatar) {
        format!("If the {y} touches {} {x}", article(x))
    } else {
        format!("If the {x} touches {} {y}", article(y))
    };
    let param = |k: &str| {
        rule.params
            .get(k)
            .map(|v| v.to_string())
            .unwrap_or_default()
    };
    let effect = match rule.effect {
        Effect::StepBack => format!("the {x} is blocked and stays where it was"),
        Effect::UndoAll => "every movement of this turn is undone".to_string(),
        Effect::KillSprite => format!("the {x} disappears"),
        Effect::KillBoth => format!("both the {x} and the {y} disappear"),
        Effect::TransformTo => {
            let to = param("stype");
            format!("the {x} turns into {} {to}", article(&to))
        }
        Effect::BounceForward => format!("the {x} is pushed one cell in the direction the {y} moved"),
        Effect::CollectResource => format!("the {x} disappears and the {y} obtains it"),
        Effect::ChangeResource => format!(
            "the {x}'s {} count changes by {}",
            param("resource"),
            param("value")
        ),
        Effect::KillIfHasLess => format!(
            "the {x} disappears if it holds fewer than {} {}",
            param("limit"),
            param("resource")
        ),
        Effect::KillIfOtherHasMore => format!(
            "the {x} disappears if the {y} holds at least {} {}",
            param("limit"),
            param("resource")
        ),
        Effect::KillIfFromAbove => format!("the {x} is destroyed if the {y} falls onto it from above"),
        Effect::TurnAround => format!("the {x} moves down one row and reverses direction"),
        Effect::ReverseDirection => format!("the {x} reverses direction"),
        Effect::TeleportToExit => {
            let exit = spec
                .sprite(y)
                .and_then(|s| s.param_str("stype"))
                .unwrap_or("exit");
            format!("the {x} is teleported to {} {exit}", article(exit))
        }
    };
    let score = rule.score_change();
    let suffix = if score > 0.0 {
        format!(" (score +{})", fmt_number(score))
    } else if score < 0.0 {
        format!(" (score {})", fmt_number(score))
    } else {
        String::new()
    };
    format!("{condition}, {effect}{suffix}.")
}

fn termination_sentence(term: &TerminationRule) -> String {
    let verdict = if term.win { "won" } else { "lost" };
    let names = term.sprites.join(" or ");
    match term.kind {
        TerminationKind::Timeout => format!("The game is {verdict} after {} ticks.", term.limit),
        TerminationKind::SpriteCounter | TerminationKind::MultiSpriteCounter => {
            if term.limit == 0 {
                format!("The game is {verdict} when no {names} remains.")
            } else {
                format!(
                    "The game is {verdict} when at most {} {names} remain.",
                    term.limit
                )
            }
        }
    }
}

fn genre(spec: &GameSpec) -> &'static str {
    let has = |e: Effect| spec.interactions.iter().any(|r| r.effect == e);
    let class = |c: SpriteClass| spec.sprites.iter().any(|s| s.class == c);
    let avatar = spec.avatar_root().class;
    if has(Effect::BounceForward) {
        "This is a puzzle game about pushing objects into the right places."
    } else if avatar == SpriteClass::FlakAvatar || class(SpriteClass::SpawnPoint) {
        "This is a shooting game against waves of enemies."
    } else if has(Effect::CollectResource) || has(Effect::TransformTo) {
        "This is an adventure game with item collection and enemies."
    } else if class(SpriteClass::Chaser) || class(SpriteClass::RandomNPC) {
        "This is an action game with moving opponents."
    } else {
        "This is a grid puzzle game."
    }
}

/// Rule description used in the `Game Rules` section. Strategy notes, when
/// given, are appended as a bullet list.
pub fn translate_rules(spec: &GameSpec, strategy: Option<&str>) -> String {
    let mut out = String::from("Game rules in natural language:\n\n# Game Analysis\n\n");
    let _ = writeln!(out, "**Genre:** {}\n", genre(spec));
    out.push_str("**Mechanics:**\n");
    let names: Vec<&str> = spec.sprites.iter().map(|s| s.name.as_str()).collect();
    let _ = writeln!(out, "1. **Sprites:** The game includes {}.", names.join(", "));
    let mut item = 2;
    if !spec.interactions.is_empty() {
        let _ = writeln!(out, "{item}. **Transformation and Interaction:**");
        for rule in &spec.interactions {
            let _ = writeln!(out, "- {}", rule_sentence(spec, rule));
        }
        item += 1;
    }
    let _ = writeln!(out, "{item}. **Win/Loss:**");
    for term in &spec.terminations {
        let _ = writeln!(out, "- {}", termination_sentence(term));
    }
    if let Some(text) = strategy.map(str::trim).filter(|t| !t.is_empty()) {
        out.push_str("\n**Strategy Suggestions:**\n");
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let line = line.trim_start_matches("- ");
            let _ = writeln!(out, "- {line}");
        }
    }
    out.pop();
    out
}

pub fn action_text(game: &Game) -> String {
    game.actions()
        .iter()
        .map(|a| format!("{}: {}", a.code(), a.label()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Everything shown to the model for one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub rule_text: String,
    pub action_text: String,
    pub mechanics_notice: String,
    pub sprite_mapping_text: String,
    pub state_text: String,
    pub avatar_position_line: String,
    pub coordinate_lines: Vec<String>,
    pub grounding_text: Option<String>,
}

impl PromptBundle {
    /// Static part: rules, actions, notice and the reply format.
    pub fn system_text(&self) -> String {
        format!(
            "{}\n{}\n\n{}\n{}\n\n{}\n{}\n\n{}",
            SECTION_HEADERS[0],
            self.rule_text,
            SECTION_HEADERS[1],
            self.action_text,
            SECTION_HEADERS[2],
            self.mechanics_notice,
            RESPONSE_FORMAT
        )
    }

    /// Per-step part: mapping, map, position and optional extras.
    pub fn user_text(&self) -> String {
        let mut out = format!(
            "{}\n{}\n\n{}\n{}\n{}",
            SECTION_HEADERS[3],
            self.sprite_mapping_text,
            SECTION_HEADERS[4],
            self.state_text,
            self.avatar_position_line
        );
        if !self.coordinate_lines.is_empty() {
            out.push_str("\nEach line shows entity at (row, col).");
            for line in &self.coordinate_lines {
                out.push('\n');
                out.push_str(line);
            }
        }
        if let Some(g) = &self.grounding_text {
            out.push_str("\nSurroundings of the avatar:\n");
            out.push_str(g);
        }
        out
    }

    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.system_text(), self.user_text())
    }

    /// Rough token count (four characters per token).
    pub fn approx_tokens(&self) -> usize {
        (self.system_text().len() + self.user_text().len()).div_ceil(4)
    }
}

pub fn assemble_prompt(state: &GameState, strategy: Option<&str>, options: PromptOptions) -> PromptBundle {
    let view = serialize_state(state);
    let sprite_mapping_text = view
        .mapping
        .iter()
        .map(|(name, c)| format!("{name} -> '{c}'"))
        .collect::<Vec<_>>()
        .join("\n");
    let coordinate_lines = if options.coordinate_tagging {
        coordinate_tags(state)
    } else {
        Vec::new()
    };
    let grounding_text = if options.verbose_grounding {
        verbose_grounding(state).ok()
    } else {
        None
    };
    PromptBundle {
        rule_text: translate_rules(state.spec(), strategy),
        action_text: action_text(state.game()),
        mechanics_notice: MECHANICS_NOTICE.to_string(),
        sprite_mapping_text,
        state_text: view.map,
        avatar_position_line: avatar_position_line(state),
        coordinate_lines,
        grounding_text,
    }
}
