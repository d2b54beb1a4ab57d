//! Tick-based simulation of a parsed game.
//!
//! Order of one tick:
//! 1. the avatar applies the chosen action;
//! 2. every other sprite whose timer fires acts, in ascending instance id;
//! 3. interaction rules are applied once each, in declaration order. For a
//!    rule, colliding pairs are gathered first (actor id, then collider id)
//!    and each pair is re-checked before its effect runs;
//! 4. termination rules are checked in declaration order; the first one that
//!    holds decides the outcome.
//!
//! Moves that would leave the grid keep the sprite in place and raise an
//! `EOS` collision for it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vgdl::{
    Effect, GameSpec, LevelGrid, SpriteClass, TerminationKind, BACKGROUND, EOS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum Action {
    Nil = 0,
    Left = 1,
    Right = 2,
    Down = 3,
    Up = 4,
    Use = 5,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Nil,
        Action::Left,
        Action::Right,
        Action::Down,
        Action::Up,
        Action::Use,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Option<Action> {
        match code {
            0 => Some(Action::Nil),
            1 => Some(Action::Left),
            2 => Some(Action::Right),
            3 => Some(Action::Down),
            4 => Some(Action::Up),
            5 => Some(Action::Use),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Nil => "ACTION_NIL",
            Action::Left => "ACTION_LEFT",
            Action::Right => "ACTION_RIGHT",
            Action::Down => "ACTION_DOWN",
            Action::Up => "ACTION_UP",
            Action::Use => "ACTION_USE",
        }
    }

    pub fn direction(self) -> Option<Dir> {
        match self {
            Action::Left => Some(Dir::Left),
            Action::Right => Some(Dir::Right),
            Action::Down => Some(Dir::Down),
            Action::Up => Some(Dir::Up),
            _ => None,
        }
    }

    /// The opposite directional action, if any.
    pub fn inverse(self) -> Option<Action> {
        match self {
            Action::Left => Some(Action::Right),
            Action::Right => Some(Action::Left),
            Action::Down => Some(Action::Up),
            Action::Up => Some(Action::Down),
            _ => None,
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.code()
    }
}

impl TryFrom<u8> for Action {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Action::from_code(v as i64).ok_or_else(|| format!("invalid action code {v}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    Up,
    Down,
    Left,
    Right,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Up, Dir::Down, Dir::Left, Dir::Right];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::Up => (-1, 0),
            Dir::Down => (1, 0),
            Dir::Left => (0, -1),
            Dir::Right => (0, 1),
        }
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::Up => Dir::Down,
            Dir::Down => Dir::Up,
            Dir::Left => Dir::Right,
            Dir::Right => Dir::Left,
        }
    }

    fn from_name(s: &str) -> Option<Dir> {
        match s {
            "UP" => Some(Dir::Up),
            "DOWN" => Some(Dir::Down),
            "LEFT" => Some(Dir::Left),
            "RIGHT" => Some(Dir::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Ongoing,
    Win,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("level has no avatar placement")]
    NoAvatar,
    #[error("level has {0} avatar placements, expected one")]
    MultipleAvatars(usize),
    #[error("step called on a finished game")]
    SteppedTerminal,
    #[error("action {0:?} is not available in this game")]
    IllegalAction(Action),
}

/// Per-sprite-type data resolved from the game description.
#[derive(Debug, Clone, PartialEq)]
pub struct Kind {
    pub name: String,
    pub class: SpriteClass,
    pub orientation: Option<Dir>,
    pub speed: f64,
    pub cooldown: u32,
    pub prob: f64,
    pub stype: Option<u16>,
    pub limit: i64,
    pub total: u32,
    pub value: i32,
    pub singleton: bool,
    pub hidden: bool,
}

impl Kind {
    /// Ticks between two actions of an autonomous sprite; `None` when it
    /// never acts on its own.
    fn period(&self) -> Option<u32> {
        if self.speed <= 0.0 {
            return None;
        }
        let mut period = self.cooldown.max(1);
        if self.speed < 1.0 {
            period *= (1.0 / self.speed).round().max(1.0) as u32;
        }
        Some(period)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Rule {
    actor: u16,
    collider: Option<u16>,
    effect: Effect,
    score: f64,
    stype: Option<u16>,
    resource: Option<u16>,
    limit: i64,
    value: i32,
}

#[derive(Debug, Clone, PartialEq)]
struct Termination {
    kind: TerminationKind,
    sprites: Vec<u16>,
    limit: u64,
    win: bool,
}

/// A game compiled for simulation. Shared between states through an `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    pub spec: GameSpec,
    pub kinds: Vec<Kind>,
    lineage: Vec<bool>,
    push_block: Vec<bool>,
    rules: Vec<Rule>,
    terminations: Vec<Termination>,
    avatar_root: u16,
    actions: Vec<Action>,
}

impl Game {
    pub fn new(spec: GameSpec) -> Game {
        let n = spec.sprites.len();
        let idx = |name: &str| spec.sprite_index(name).map(|i| i as u16);
        let kinds: Vec<Kind> = spec
            .sprites
            .iter()
            .map(|s| {
                let class = s.class;
                let default_limit = match class {
                    SpriteClass::Flicker => 1,
                    SpriteClass::Resource => i64::from(i32::MAX),
                    _ => 0,
                };
                Kind {
                    name: s.name.clone(),
                    class,
                    orientation: s.param_str("orientation").and_then(Dir::from_name),
                    speed: s.param_f64("speed").unwrap_or(1.0),
                    cooldown: s.param_f64("cooldown").unwrap_or(1.0) as u32,
                    prob: s.param_f64("prob").unwrap_or(match class {
                        SpriteClass::Bomber => 0.1,
                        _ => 1.0,
                    }),
                    stype: s.param_str("stype").and_then(idx),
                    limit: s.param_f64("limit").map(|v| v as i64).unwrap_or(default_limit),
                    total: s.param_f64("total").unwrap_or(0.0) as u32,
                    value: s.param_f64("value").unwrap_or(1.0) as i32,
                    singleton: s.param_bool("singleton").unwrap_or(false),
                    hidden: s.param_bool("hidden").unwrap_or(false)
                        || s.param_bool("invisible").unwrap_or(false),
                }
            })
            .collect();

        let mut lineage = vec![false; n * n];
        for (k, sprite) in spec.sprites.iter().enumerate() {
            for (a, ancestor) in spec.sprites.iter().enumerate() {
                lineage[k * n + a] = spec.is_a(&sprite.name, &ancestor.name);
            }
        }

        let rules: Vec<Rule> = spec
            .interactions
            .iter()
            .map(|r| Rule {
                actor: idx(&r.actor).expect("validated"),
                collider: if r.collider == EOS { None } else { idx(&r.collider) },
                effect: r.effect,
                score: r.score_change(),
                stype: r.params.get("stype").and_then(|v| v.as_str()).and_then(idx),
                resource: r.params.get("resource").and_then(|v| v.as_str()).and_then(idx),
                limit: r.params.get("limit").and_then(|v| v.as_f64()).unwrap_or(0.0) as i64,
                value: r.params.get("value").and_then(|v| v.as_f64()).unwrap_or(0.0) as i32,
            })
            .collect();

        let mut push_block = vec![false; n * n];
        for rule in &rules {
            let Some(collider) = rule.collider else { continue };
            if !matches!(rule.effect, Effect::StepBack | Effect::UndoAll) {
                continue;
            }
            for k in 0..n {
                if !lineage[k * n + rule.actor as usize] {
                    continue;
                }
                for s in 0..n {
                    if lineage[s * n + collider as usize] {
                        push_block[k * n + s] = true;
                    }
                }
            }
        }

        let terminations = spec
            .terminations
            .iter()
            .map(|t| Termination {
                kind: t.kind,
                sprites: t.sprites.iter().filter_map(|s| idx(s)).collect(),
                limit: t.limit,
                win: t.win,
            })
            .collect();

        let root = spec.avatar_root();
        let avatar_root = idx(&root.name).expect("validated");
        let mut actions = vec![Action::Nil];
        match root.class {
            SpriteClass::FlakAvatar => actions.extend([Action::Left, Action::Right, Action::Use]),
            SpriteClass::ShootAvatar => actions.extend([
                Action::Left,
                Action::Right,
                Action::Down,
                Action::Up,
                Action::Use,
            ]),
            _ => actions.extend([Action::Left, Action::Right, Action::Down, Action::Up]),
        }

        Game {
            spec,
            kinds,
            lineage,
            push_block,
            rules,
            terminations,
            avatar_root,
            actions,
        }
    }

    pub fn kind_index(&self, name: &str) -> Option<u16> {
        self.kinds.iter().position(|k| k.name == name).map(|i| i as u16)
    }

    /// True when sprite type `kind` belongs to the lineage rooted at `ancestor`.
    pub fn is_a(&self, kind: u16, ancestor: u16) -> bool {
        self.lineage[kind as usize * self.kinds.len() + ancestor as usize]
    }

    pub fn is_avatar_kind(&self, kind: u16) -> bool {
        self.is_a(kind, self.avatar_root)
    }

    /// Actions available in this game; independent of the state.
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    fn blocks_push(&self, pushee: u16, occupant: u16) -> bool {
        self.push_block[pushee as usize * self.kinds.len() + occupant as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub id: u32,
    pub kind: u16,
    pub row: i32,
    pub col: i32,
    pub orientation: Dir,
    pub resources: Vec<(u16, i32)>,
    born: u32,
    prev: (i32, i32),
    moved: Option<Dir>,
    spawned: u32,
    eos: bool,
    alive: bool,
}

impl Sprite {
    pub fn pos(&self) -> (i32, i32) {
        (self.row, self.col)
    }

    pub fn resource(&self, kind: u16) -> i32 {
        self.resources
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| *v)
            .unwrap_or(0)
    }

    fn add_resource(&mut self, kind: u16, delta: i32, cap: i64) {
        let current = self.resource(kind) as i64;
        let next = (current + delta as i64).clamp(0, cap.max(0)) as i32;
        match self.resources.iter_mut().find(|(k, _)| *k == kind) {
            Some(entry) => entry.1 = next,
            None => {
                self.resources.push((kind, next));
                self.resources.sort_unstable();
            }
        }
    }
}

/// Result of a single tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub changed: bool,
}

/// Snapshot of the parts of the world that count as a visible change.
type Fingerprint = Vec<(u32, u16, i32, i32, Vec<(u16, i32)>)>;

#[derive(Debug, Clone)]
pub struct GameState {
    game: Arc<Game>,
    pub tick: u32,
    pub score: f64,
    pub outcome: Outcome,
    pub width: usize,
    pub height: usize,
    sprites: Vec<Sprite>,
    next_id: u32,
    avatar: Option<u32>,
    rng: ChaCha8Rng,
    cells: CellIndex,
}

impl PartialEq for GameState {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.game, &other.game) || self.game == other.game)
            && self.tick == other.tick
            && self.score == other.score
            && self.outcome == other.outcome
            && self.width == other.width
            && self.height == other.height
            && self.sprites == other.sprites
            && self.next_id == other.next_id
            && self.avatar == other.avatar
            && self.rng == other.rng
    }
}

/// Compressed per-cell lists of live sprite indices, rebuilt on demand.
#[derive(Debug, Clone, Default)]
struct CellIndex {
    start: Vec<u32>,
    items: Vec<u32>,
    dirty: bool,
}

impl CellIndex {
    fn rebuild(&mut self, sprites: &[Sprite], width: usize, height: usize) {
        let cells = width * height;
        self.start.clear();
        self.start.resize(cells + 1, 0);
        for s in sprites.iter().filter(|s| s.alive) {
            self.start[s.row as usize * width + s.col as usize + 1] += 1;
        }
        for i in 0..cells {
            self.start[i + 1] += self.start[i];
        }
        self.items.clear();
        self.items.resize(self.start[cells] as usize, 0);
        let mut fill = self.start.clone();
        // Sprites are sorted by id, so each cell list is too.
        for (i, s) in sprites.iter().enumerate().filter(|(_, s)| s.alive) {
            let cell = s.row as usize * width + s.col as usize;
            self.items[fill[cell] as usize] = i as u32;
            fill[cell] += 1;
        }
        self.dirty = false;
    }

    fn at(&self, cell: usize) -> &[u32] {
        &self.items[self.start[cell] as usize..self.start[cell + 1] as usize]
    }
}

/// Creates the initial state for a level.
pub fn init_state(game: Arc<Game>, level: &LevelGrid, seed: u64) -> Result<GameState, EngineError> {
    let mut state = GameState {
        width: level.width,
        height: level.height,
        tick: 0,
        score: 0.0,
        outcome: Outcome::Ongoing,
        sprites: Vec::new(),
        next_id: 0,
        avatar: None,
        rng: ChaCha8Rng::seed_from_u64(seed),
        cells: CellIndex {
            dirty: true,
            ..CellIndex::default()
        },
        game: game.clone(),
    };
    let mut avatars = Vec::new();
    for (r, row) in level.cells.iter().enumerate() {
        for (c, &ch) in row.iter().enumerate() {
            let Some(names) = game.spec.mapping(ch) else {
                debug_assert_eq!(ch, BACKGROUND);
                continue;
            };
            for name in names {
                let kind = game.kind_index(name).expect("validated mapping");
                let id = state.spawn(kind, r as i32, c as i32, None, 0);
                if game.is_avatar_kind(kind) {
                    avatars.push(id);
                }
            }
        }
    }
    match avatars.len() {
        0 => Err(EngineError::NoAvatar),
        1 => {
            state.avatar = Some(avatars[0]);
            Ok(state)
        }
        n => Err(EngineError::MultipleAvatars(n)),
    }
}

impl GameState {
    pub fn game(&self) -> &Arc<Game> {
        &self.game
    }

    pub fn spec(&self) -> &GameSpec {
        &self.game.spec
    }

    /// Live sprites ordered by instance id.
    pub fn sprites(&self) -> &[Sprite] {
        &self.sprites
    }

    pub fn avatar(&self) -> Option<&Sprite> {
        let id = self.avatar?;
        self.find(id).map(|i| &self.sprites[i]).filter(|s| s.alive)
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome != Outcome::Ongoing
    }

    pub fn legal_actions(&self) -> &[Action] {
        self.game.actions()
    }

    /// Replaces the random generator, e.g. to decorrelate simulated futures.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn count_of(&self, ancestor: u16) -> usize {
        self.sprites
            .iter()
            .filter(|s| s.alive && self.game.is_a(s.kind, ancestor))
            .count()
    }

    fn find(&self, id: u32) -> Option<usize> {
        self.sprites.binary_search_by_key(&id, |s| s.id).ok()
    }

    fn in_bounds(&self, row: i32, col: i32) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    fn spawn(&mut self, kind: u16, row: i32, col: i32, orientation: Option<Dir>, born: u32) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        let k = &self.game.kinds[kind as usize];
        self.sprites.push(Sprite {
            id,
            kind,
            row,
            col,
            orientation: orientation.or(k.orientation).unwrap_or(Dir::Right),
            resources: Vec::new(),
            born,
            prev: (row, col),
            moved: None,
            spawned: 0,
            eos: false,
            alive: true,
        });
        self.cells.dirty = true;
        id
    }

    fn try_spawn(&mut self, kind: u16, row: i32, col: i32, orientation: Option<Dir>) {
        if !self.in_bounds(row, col) {
            return;
        }
        if self.game.kinds[kind as usize].singleton
            && self.sprites.iter().any(|s| s.alive && s.kind == kind)
        {
            return;
        }
        let born = self.tick + 1;
        self.spawn(kind, row, col, orientation, born);
    }

    fn move_sprite(&mut self, i: usize, dir: Dir) {
        let (dr, dc) = dir.delta();
        let s = &self.sprites[i];
        let (nr, nc) = (s.row + dr, s.col + dc);
        if self.in_bounds(nr, nc) {
            let s = &mut self.sprites[i];
            s.row = nr;
            s.col = nc;
            s.moved = Some(dir);
            self.cells.dirty = true;
        } else {
            self.sprites[i].eos = true;
        }
    }

    fn fingerprint(&self) -> Fingerprint {
        self.sprites
            .iter()
            .filter(|s| s.alive)
            .map(|s| (s.id, s.kind, s.row, s.col, s.resources.clone()))
            .collect()
    }

    /// Advances one tick with the given action.
    pub fn step(&mut self, action: Action) -> Result<StepResult, EngineError> {
        let before = self.fingerprint();
        let reward = self.advance(action)?;
        let changed = self.fingerprint() != before;
        Ok(StepResult { reward, changed })
    }

    /// Like [`GameState::step`] without computing the change flag.
    pub fn advance(&mut self, action: Action) -> Result<f64, EngineError> {
        if self.is_terminal() {
            return Err(EngineError::SteppedTerminal);
        }
        if !self.game.actions.contains(&action) {
            return Err(EngineError::IllegalAction(action));
        }
        let score_before = self.score;
        for s in &mut self.sprites {
            s.prev = (s.row, s.col);
            s.moved = None;
            s.eos = false;
        }
        self.avatar_phase(action);
        self.npc_phase();
        self.resolve_collisions();
        self.tick += 1;
        self.check_terminations();
        self.sprites.retain(|s| s.alive);
        self.cells.dirty = true;
        Ok(self.score - score_before)
    }

    fn avatar_phase(&mut self, action: Action) {
        let Some(i) = self.avatar.and_then(|id| self.find(id)) else {
            return;
        };
        if !self.sprites[i].alive {
            return;
        }
        let kind = &self.game.kinds[self.sprites[i].kind as usize];
        let (class, stype) = (kind.class, kind.stype);
        match (class, action) {
            (_, Action::Nil) => {}
            (SpriteClass::FlakAvatar, Action::Use) => {
                let (r, c) = self.sprites[i].pos();
                if let Some(st) = stype {
                    self.try_spawn(st, r, c, Some(Dir::Up));
                }
            }
            (SpriteClass::FlakAvatar, a) => {
                if let Some(d @ (Dir::Left | Dir::Right)) = a.direction() {
                    self.move_sprite(i, d);
                }
            }
            (SpriteClass::ShootAvatar, Action::Use) => {
                let s = &self.sprites[i];
                let dir = s.orientation;
                let (dr, dc) = dir.delta();
                let (r, c) = (s.row + dr, s.col + dc);
                if let Some(st) = stype {
                    self.try_spawn(st, r, c, Some(dir));
                }
            }
            (SpriteClass::OrientedAvatar | SpriteClass::ShootAvatar, a) => {
                if let Some(d) = a.direction() {
                    if self.sprites[i].orientation != d {
                        self.sprites[i].orientation = d;
                    } else {
                        self.move_sprite(i, d);
                    }
                }
            }
            (_, a) => {
                if let Some(d) = a.direction() {
                    self.move_sprite(i, d);
                }
            }
        }
    }

    fn npc_phase(&mut self) {
        let t = self.tick;
        let count = self.sprites.len();
        for i in 0..count {
            let s = &self.sprites[i];
            if !s.alive || t < s.born {
                continue;
            }
            let kind = &self.game.kinds[s.kind as usize];
            let age = t - s.born;
            if kind.class == SpriteClass::Flicker {
                if i64::from(age) + 1 >= kind.limit {
                    self.sprites[i].alive = false;
                }
                continue;
            }
            let Some(period) = kind.period() else { continue };
            if !age.is_multiple_of(period) {
                continue;
            }
            let (class, stype, prob, total) = (kind.class, kind.stype, kind.prob, kind.total);
            match class {
                SpriteClass::Missile => {
                    let d = self.sprites[i].orientation;
                    self.move_sprite(i, d);
                }
                SpriteClass::Bomber => {
                    let d = self.sprites[i].orientation;
                    self.move_sprite(i, d);
                    if let Some(st) = stype {
                        if self.rng.random::<f64>() < prob {
                            let (r, c) = self.sprites[i].pos();
                            self.try_spawn(st, r, c, None);
                        }
                    }
                }
                SpriteClass::RandomNPC => {
                    let d = Dir::ALL[self.rng.random_range(0..4)];
                    self.move_sprite(i, d);
                }
                SpriteClass::Chaser | SpriteClass::Fleeing => {
                    if let Some(d) = self.pursuit_dir(i, class == SpriteClass::Chaser, stype) {
                        self.move_sprite(i, d);
                    }
                }
                SpriteClass::SpawnPoint => {
                    if let Some(st) = stype {
                        if prob >= 1.0 || self.rng.random::<f64>() < prob {
                            let (r, c) = self.sprites[i].pos();
                            self.try_spawn(st, r, c, None);
                            self.sprites[i].spawned += 1;
                        }
                        if total > 0 && self.sprites[i].spawned >= total {
                            self.sprites[i].alive = false;
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Direction that best approaches (or escapes) the nearest target.
    fn pursuit_dir(&mut self, i: usize, chase: bool, target: Option<u16>) -> Option<Dir> {
        let target = target?;
        let (r, c) = self.sprites[i].pos();
        let dist = |a: (i32, i32), b: (i32, i32)| (a.0 - b.0).abs() + (a.1 - b.1).abs();
        let nearest = self
            .sprites
            .iter()
            .filter(|s| s.alive && self.game.is_a(s.kind, target))
            .map(|s| s.pos())
            .min_by_key(|&p| (dist((r, c), p), p))?;
        let mut best: Vec<Dir> = Vec::with_capacity(4);
        let mut best_d = 0;
        for d in Dir::ALL {
            let (dr, dc) = d.delta();
            if !self.in_bounds(r + dr, c + dc) {
                continue;
            }
            let nd = dist((r + dr, c + dc), nearest);
            let better = best.is_empty() || if chase { nd < best_d } else { nd > best_d };
            if better {
                best.clear();
                best_d = nd;
            }
            if nd == best_d {
                best.push(d);
            }
        }
        if best.is_empty() {
            return None;
        }
        let pick = self.rng.random_range(0..best.len());
        Some(best[pick])
    }

    fn resolve_collisions(&mut self) {
        let game = self.game.clone();
        let mut pairs: Vec<(usize, Option<usize>)> = Vec::new();
        for rule in &game.rules {
            pairs.clear();
            match rule.collider {
                None => {
                    for (i, s) in self.sprites.iter().enumerate() {
                        if s.alive && s.eos && game.is_a(s.kind, rule.actor) {
                            pairs.push((i, None));
                        }
                    }
                }
                Some(collider) => {
                    if self.cells.dirty {
                        self.cells.rebuild(&self.sprites, self.width, self.height);
                    }
                    for (i, s) in self.sprites.iter().enumerate() {
                        if !s.alive || !game.is_a(s.kind, rule.actor) {
                            continue;
                        }
                        let cell = s.row as usize * self.width + s.col as usize;
                        for &j in self.cells.at(cell) {
                            let j = j as usize;
                            if j != i && game.is_a(self.sprites[j].kind, collider) {
                                pairs.push((i, Some(j)));
                            }
                        }
                    }
                }
            }
            for &(a, b) in &pairs {
                if !self.sprites[a].alive {
                    continue;
                }
                if let Some(b) = b {
                    if !self.sprites[b].alive || self.sprites[a].pos() != self.sprites[b].pos() {
                        continue;
                    }
                }
                if self.apply_effect(rule, a, b) {
                    self.score += rule.score;
                }
            }
        }
    }

    /// Applies one effect; returns whether it fired.
    fn apply_effect(&mut self, rule: &Rule, a: usize, b: Option<usize>) -> bool {
        match rule.effect {
            Effect::StepBack => {
                let s = &mut self.sprites[a];
                (s.row, s.col) = s.prev;
                self.cells.dirty = true;
            }
            Effect::UndoAll => {
                for s in &mut self.sprites {
                    (s.row, s.col) = s.prev;
                }
                self.cells.dirty = true;
            }
            Effect::KillSprite => self.sprites[a].alive = false,
            Effect::KillBoth => {
                self.sprites[a].alive = false;
                if let Some(b) = b {
                    self.sprites[b].alive = false;
                }
            }
            Effect::TransformTo => {
                let Some(st) = rule.stype else { return false };
                let s = &mut self.sprites[a];
                s.kind = st;
                if let Some(o) = self.game.kinds[st as usize].orientation {
                    s.orientation = o;
                }
            }
            Effect::BounceForward => {
                let Some(b) = b else { return false };
                let Some(dir) = self.sprites[b].moved else { return false };
                let (dr, dc) = dir.delta();
                let (r, c) = self.sprites[a].pos();
                let (nr, nc) = (r + dr, c + dc);
                let pushee = self.sprites[a].kind;
                let blocked = !self.in_bounds(nr, nc)
                    || self.sprites.iter().any(|s| {
                        s.alive && s.pos() == (nr, nc) && self.game.blocks_push(pushee, s.kind)
                    });
                if blocked {
                    let s = &mut self.sprites[b];
                    (s.row, s.col) = s.prev;
                } else {
                    let s = &mut self.sprites[a];
                    (s.row, s.col) = (nr, nc);
                    s.moved = Some(dir);
                }
                self.cells.dirty = true;
            }
            Effect::CollectResource => {
                let Some(b) = b else { return false };
                let kind = self.sprites[a].kind;
                let k = &self.game.kinds[kind as usize];
                let (value, cap) = (k.value, k.limit);
                self.sprites[b].add_resource(kind, value, cap);
                self.sprites[a].alive = false;
            }
            Effect::ChangeResource => {
                let Some(res) = rule.resource else { return false };
                let cap = self.game.kinds[res as usize].limit;
                let cap = if cap > 0 { cap } else { i64::from(i32::MAX) };
                self.sprites[a].add_resource(res, rule.value, cap);
            }
            Effect::KillIfHasLess => {
                let Some(res) = rule.resource else { return false };
                if i64::from(self.sprites[a].resource(res)) >= rule.limit {
                    return false;
                }
                self.sprites[a].alive = false;
            }
            Effect::KillIfOtherHasMore => {
                let (Some(res), Some(b)) = (rule.resource, b) else { return false };
                if i64::from(self.sprites[b].resource(res)) < rule.limit {
                    return false;
                }
                self.sprites[a].alive = false;
            }
            Effect::KillIfFromAbove => {
                let Some(b) = b else { return false };
                if self.sprites[b].moved != Some(Dir::Down) {
                    return false;
                }
                self.sprites[a].alive = false;
            }
            Effect::TurnAround => {
                let (pr, pc) = self.sprites[a].prev;
                let below = if self.in_bounds(pr + 1, pc) { (pr + 1, pc) } else { (pr, pc) };
                let s = &mut self.sprites[a];
                (s.row, s.col) = below;
                s.orientation = s.orientation.opposite();
                self.cells.dirty = true;
            }
            Effect::ReverseDirection => {
                let s = &mut self.sprites[a];
                s.orientation = s.orientation.opposite();
            }
            Effect::TeleportToExit => {
                let Some(b) = b else { return false };
                let Some(exit) = self.game.kinds[self.sprites[b].kind as usize].stype else {
                    return false;
                };
                let exits: Vec<(i32, i32)> = self
                    .sprites
                    .iter()
                    .filter(|s| s.alive && self.game.is_a(s.kind, exit))
                    .map(|s| s.pos())
                    .collect();
                if exits.is_empty() {
                    return false;
                }
                let pick = exits[self.rng.random_range(0..exits.len())];
                let s = &mut self.sprites[a];
                (s.row, s.col) = pick;
                self.cells.dirty = true;
            }
        }
        true
    }

    fn check_terminations(&mut self) {
        let game = self.game.clone();
        for term in &game.terminations {
            let hit = match term.kind {
                TerminationKind::Timeout => u64::from(self.tick) >= term.limit,
                TerminationKind::SpriteCounter | TerminationKind::MultiSpriteCounter => {
                    let count: usize = term.sprites.iter().map(|&k| self.count_of(k)).sum();
                    count as u64 <= term.limit
                }
            };
            if hit {
                self.outcome = if term.win { Outcome::Win } else { Outcome::Loss };
                return;
            }
        }
    }
}
