//! Parser for the VGDL subset used by the bundled games.
//!
//! A game file has a `BasicGame` header followed by four indented blocks:
//! `SpriteSet`, `LevelMapping`, `InteractionSet` and `TerminationSet`.
//! Nesting inside `SpriteSet` is expressed by indentation (tabs count as four
//! spaces); a child sprite inherits its parent's class and parameters. The
//! supported classes, effects and termination kinds are listed in the
//! README; anything else is rejected with a line number.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Character used for empty floor cells in level files and rendered maps.
pub const BACKGROUND: char = '.';

/// Pseudo-sprite that an interaction can name to react to leaving the grid.
pub const EOS: &str = "EOS";

const TAB_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SpriteClass {
    Immovable,
    Passive,
    Missile,
    Bomber,
    RandomNPC,
    Chaser,
    Fleeing,
    Flicker,
    Resource,
    Portal,
    SpawnPoint,
    Door,
    MovingAvatar,
    OrientedAvatar,
    ShootAvatar,
    FlakAvatar,
}

impl SpriteClass {
    pub const ALL: [SpriteClass; 16] = [
        SpriteClass::Immovable,
        SpriteClass::Passive,
        SpriteClass::Missile,
        SpriteClass::Bomber,
        SpriteClass::RandomNPC,
        SpriteClass::Chaser,
        SpriteClass::Fleeing,
        SpriteClass::Flicker,
        SpriteClass::Resource,
        SpriteClass::Portal,
        SpriteClass::SpawnPoint,
        SpriteClass::Door,
        SpriteClass::MovingAvatar,
        SpriteClass::OrientedAvatar,
        SpriteClass::ShootAvatar,
        SpriteClass::FlakAvatar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpriteClass::Immovable => "Immovable",
            SpriteClass::Passive => "Passive",
            SpriteClass::Missile => "Missile",
            SpriteClass::Bomber => "Bomber",
            SpriteClass::RandomNPC => "RandomNPC",
            SpriteClass::Chaser => "Chaser",
            SpriteClass::Fleeing => "Fleeing",
            SpriteClass::Flicker => "Flicker",
            SpriteClass::Resource => "Resource",
            SpriteClass::Portal => "Portal",
            SpriteClass::SpawnPoint => "SpawnPoint",
            SpriteClass::Door => "Door",
            SpriteClass::MovingAvatar => "MovingAvatar",
            SpriteClass::OrientedAvatar => "OrientedAvatar",
            SpriteClass::ShootAvatar => "ShootAvatar",
            SpriteClass::FlakAvatar => "FlakAvatar",
        }
    }

    pub fn from_name(name: &str) -> Option<SpriteClass> {
        SpriteClass::ALL.iter().copied().find(|c| c.name() == name)
    }

    pub fn is_avatar(self) -> bool {
        matches!(
            self,
            SpriteClass::MovingAvatar
                | SpriteClass::OrientedAvatar
                | SpriteClass::ShootAvatar
                | SpriteClass::FlakAvatar
        )
    }
}

impl fmt::Display for SpriteClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Effect {
    StepBack,
    UndoAll,
    KillSprite,
    KillBoth,
    TransformTo,
    BounceForward,
    CollectResource,
    ChangeResource,
    KillIfHasLess,
    KillIfOtherHasMore,
    KillIfFromAbove,
    TurnAround,
    ReverseDirection,
    TeleportToExit,
}

impl Effect {
    pub const ALL: [Effect; 14] = [
        Effect::StepBack,
        Effect::UndoAll,
        Effect::KillSprite,
        Effect::KillBoth,
        Effect::TransformTo,
        Effect::BounceForward,
        Effect::CollectResource,
        Effect::ChangeResource,
        Effect::KillIfHasLess,
        Effect::KillIfOtherHasMore,
        Effect::KillIfFromAbove,
        Effect::TurnAround,
        Effect::ReverseDirection,
        Effect::TeleportToExit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Effect::StepBack => "stepBack",
            Effect::UndoAll => "undoAll",
            Effect::KillSprite => "killSprite",
            Effect::KillBoth => "killBoth",
            Effect::TransformTo => "transformTo",
            Effect::BounceForward => "bounceForward",
            Effect::CollectResource => "collectResource",
            Effect::ChangeResource => "changeResource",
            Effect::KillIfHasLess => "killIfHasLess",
            Effect::KillIfOtherHasMore => "killIfOtherHasMore",
            Effect::KillIfFromAbove => "killIfFromAbove",
            Effect::TurnAround => "turnAround",
            Effect::ReverseDirection => "reverseDirection",
            Effect::TeleportToExit => "teleportToExit",
        }
    }

    pub fn from_name(name: &str) -> Option<Effect> {
        Effect::ALL.iter().copied().find(|e| e.name() == name)
    }

    /// Parameters (besides `scoreChange`) that must be present.
    fn required_params(self) -> &'static [&'static str] {
        match self {
            Effect::TransformTo => &["stype"],
            Effect::ChangeResource => &["resource", "value"],
            Effect::KillIfHasLess | Effect::KillIfOtherHasMore => &["resource", "limit"],
            _ => &[],
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Bool(bool),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(n) => write!(f, "{n}"),
            ParamValue::Bool(true) => f.write_str("True"),
            ParamValue::Bool(false) => f.write_str("False"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpriteDef {
    pub name: String,
    pub class: SpriteClass,
    /// Effective parameters: the parent's, overridden by the sprite's own.
    pub params: Params,
    pub parent: Option<String>,
}

impl SpriteDef {
    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(ParamValue::as_f64)
    }

    pub fn param_bool(&self, key: &str) -> Option<bool> {
        self.params.get(key).and_then(ParamValue::as_bool)
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(ParamValue::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingEntry {
    pub symbol: char,
    pub sprites: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionRule {
    pub actor: String,
    pub collider: String,
    pub effect: Effect,
    pub params: Params,
}

impl InteractionRule {
    pub fn score_change(&self) -> f64 {
        self.params
            .get("scoreChange")
            .and_then(ParamValue::as_f64)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminationKind {
    SpriteCounter,
    MultiSpriteCounter,
    Timeout,
}

impl TerminationKind {
    pub fn name(self) -> &'static str {
        match self {
            TerminationKind::SpriteCounter => "SpriteCounter",
            TerminationKind::MultiSpriteCounter => "MultiSpriteCounter",
            TerminationKind::Timeout => "Timeout",
        }
    }

    fn from_name(name: &str) -> Option<TerminationKind> {
        match name {
            "SpriteCounter" => Some(TerminationKind::SpriteCounter),
            "MultiSpriteCounter" => Some(TerminationKind::MultiSpriteCounter),
            "Timeout" => Some(TerminationKind::Timeout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminationRule {
    pub kind: TerminationKind,
    pub sprites: Vec<String>,
    pub limit: u64,
    pub win: bool,
}

/// A parsed and validated game description.
#[derive(Debug, Clone, Serialize)]
pub struct GameSpec {
    pub sprites: Vec<SpriteDef>,
    pub level_mapping: Vec<MappingEntry>,
    pub interactions: Vec<InteractionRule>,
    pub terminations: Vec<TerminationRule>,
    /// Non-fatal findings such as duplicated mapping characters.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

// Warnings are diagnostics, not structure.
impl PartialEq for GameSpec {
    fn eq(&self, other: &Self) -> bool {
        self.sprites == other.sprites
            && self.level_mapping == other.level_mapping
            && self.interactions == other.interactions
            && self.terminations == other.terminations
    }
}

impl GameSpec {
    pub fn sprite(&self, name: &str) -> Option<&SpriteDef> {
        self.sprites.iter().find(|s| s.name == name)
    }

    pub fn sprite_index(&self, name: &str) -> Option<usize> {
        self.sprites.iter().position(|s| s.name == name)
    }

    pub fn mapping(&self, symbol: char) -> Option<&[String]> {
        self.level_mapping
            .iter()
            .find(|m| m.symbol == symbol)
            .map(|m| m.sprites.as_slice())
    }

    /// True when `name` is `ancestor` or one of its descendants.
    pub fn is_a(&self, name: &str, ancestor: &str) -> bool {
        let mut current = Some(name);
        while let Some(n) = current {
            if n == ancestor {
                return true;
            }
            current = self.sprite(n).and_then(|s| s.parent.as_deref());
        }
        false
    }

    /// Root of the avatar lineage (the topmost avatar-class sprite).
    pub fn avatar_root(&self) -> &SpriteDef {
        self.sprites
            .iter()
            .find(|s| s.class.is_avatar() && !self.parent_is_avatar(s))
            .expect("validated spec has an avatar lineage")
    }

    fn parent_is_avatar(&self, sprite: &SpriteDef) -> bool {
        sprite
            .parent
            .as_deref()
            .and_then(|p| self.sprite(p))
            .is_some_and(|p| p.class.is_avatar())
    }

    fn depth(&self, sprite: &SpriteDef) -> usize {
        let mut depth = 0;
        let mut current = sprite.parent.as_deref();
        while let Some(p) = current {
            depth += 1;
            current = self.sprite(p).and_then(|s| s.parent.as_deref());
        }
        depth
    }

    /// Renders the game in canonical VGDL text. Reparsing the output yields
    /// an equal `GameSpec`.
    pub fn to_canonical(&self) -> String {
        let mut out = String::from("BasicGame\n    SpriteSet\n");
        for sprite in &self.sprites {
            let indent = 8 + 4 * self.depth(sprite);
            out.push_str(&" ".repeat(indent));
            out.push_str(&sprite.name);
            out.push_str(" > ");
            out.push_str(sprite.class.name());
            push_params(&mut out, &sprite.params);
            out.push('\n');
        }
        out.push_str("    LevelMapping\n");
        for entry in &self.level_mapping {
            out.push_str(&format!(
                "        {} > {}\n",
                entry.symbol,
                entry.sprites.join(" ")
            ));
        }
        out.push_str("    InteractionSet\n");
        for rule in &self.interactions {
            out.push_str(&format!(
                "        {} {} > {}",
                rule.actor, rule.collider, rule.effect
            ));
            push_params(&mut out, &rule.params);
            out.push('\n');
        }
        out.push_str("    TerminationSet\n");
        for term in &self.terminations {
            out.push_str("        ");
            out.push_str(term.kind.name());
            match term.kind {
                TerminationKind::SpriteCounter => {
                    out.push_str(&format!(" stype={}", term.sprites[0]))
                }
                TerminationKind::MultiSpriteCounter => {
                    for (i, s) in term.sprites.iter().enumerate() {
                        out.push_str(&format!(" stype{}={}", i + 1, s));
                    }
                }
                TerminationKind::Timeout => {}
            }
            out.push_str(&format!(
                " limit={} win={}",
                term.limit,
                if term.win { "True" } else { "False" }
            ));
            out.push('\n');
        }
        out
    }
}

fn push_params(out: &mut String, params: &Params) {
    for (k, v) in params {
        out.push_str(&format!(" {k}={v}"));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("missing header line `BasicGame`")]
    MissingHeader,
    #[error("missing block `{0}`")]
    MissingBlock(&'static str),
    #[error("block `{0}` declared twice")]
    DuplicateBlock(String),
    #[error("bad indentation: {0}")]
    BadIndentation(String),
    #[error("unknown sprite class `{0}`")]
    UnknownSpriteClass(String),
    #[error("unknown effect `{0}`")]
    UnknownEffect(String),
    #[error("unknown termination `{0}`")]
    UnknownTermination(String),
    #[error("unresolved sprite reference `{0}`")]
    UnresolvedSprite(String),
    #[error("malformed key=value pair `{0}`")]
    MalformedParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidParamValue { key: String, reason: String },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("sprite `{0}` defined twice")]
    DuplicateSprite(String),
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("expected exactly one avatar lineage, found {0}")]
    AvatarLineage(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(line: usize, kind: ParseErrorKind) -> Self {
        ParseError { line, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LevelError {
    #[error("unknown tile `{ch}` at row {row}, col {col}")]
    UnknownTile { ch: char, row: usize, col: usize },
    #[error("level is empty")]
    EmptyLevel,
}

/// Level layout as a character matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelGrid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Vec<char>>,
    pub source: Vec<String>,
    pub warnings: Vec<String>,
}

impl LevelGrid {
    pub fn get(&self, row: usize, col: usize) -> char {
        self.cells[row][col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Sprites,
    Mapping,
    Interactions,
    Terminations,
}

impl Block {
    fn from_keyword(s: &str) -> Option<Block> {
        match s {
            "SpriteSet" => Some(Block::Sprites),
            "LevelMapping" => Some(Block::Mapping),
            "InteractionSet" => Some(Block::Interactions),
            "TerminationSet" => Some(Block::Terminations),
            _ => None,
        }
    }

    fn keyword(self) -> &'static str {
        match self {
            Block::Sprites => "SpriteSet",
            Block::Mapping => "LevelMapping",
            Block::Interactions => "InteractionSet",
            Block::Terminations => "TerminationSet",
        }
    }
}

struct Line<'a> {
    number: usize,
    indent: usize,
    text: &'a str,
}

fn logical_lines(source: &str) -> Vec<Line<'_>> {
    let mut lines = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let without_comment = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let text = without_comment.trim();
        if text.is_empty() {
            continue;
        }
        let mut indent = 0;
        for ch in without_comment.chars() {
            match ch {
                ' ' => indent += 1,
                '\t' => indent += TAB_WIDTH,
                _ => break,
            }
        }
        lines.push(Line {
            number: i + 1,
            indent,
            text,
        });
    }
    lines
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Copy)]
enum ParamContext {
    Sprite,
    Effect,
}

enum ParamKind {
    Number { signed: bool },
    Bool,
    Orientation,
    SpriteRef,
    Text,
}

fn param_kind(ctx: ParamContext, key: &str) -> Option<ParamKind> {
    match ctx {
        ParamContext::Sprite => match key {
            "speed" | "cooldown" | "prob" | "limit" | "total" | "value" => {
                Some(ParamKind::Number { signed: false })
            }
            "singleton" | "hidden" | "invisible" => Some(ParamKind::Bool),
            "orientation" => Some(ParamKind::Orientation),
            "stype" => Some(ParamKind::SpriteRef),
            "color" | "img" => Some(ParamKind::Text),
            _ => None,
        },
        ParamContext::Effect => match key {
            "scoreChange" | "value" => Some(ParamKind::Number { signed: true }),
            "limit" => Some(ParamKind::Number { signed: false }),
            "stype" | "resource" => Some(ParamKind::SpriteRef),
            _ => None,
        },
    }
}

fn split_param(token: &str, line: usize) -> Result<(&str, &str), ParseError> {
    match token.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() && !v.contains('=') => Ok((k, v)),
        _ => Err(ParseError::new(
            line,
            ParseErrorKind::MalformedParam(token.to_string()),
        )),
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "True" | "true" => Some(true),
        "False" | "false" => Some(false),
        _ => None,
    }
}

fn parse_params(
    tokens: &[&str],
    ctx: ParamContext,
    line: usize,
    refs: &mut Vec<(String, usize)>,
) -> Result<Params, ParseError> {
    let mut params = Params::new();
    for token in tokens {
        let (key, raw) = split_param(token, line)?;
        let kind = param_kind(ctx, key)
            .ok_or_else(|| ParseError::new(line, ParseErrorKind::UnknownParam(key.to_string())))?;
        let invalid = |reason: &str| {
            ParseError::new(
                line,
                ParseErrorKind::InvalidParamValue {
                    key: key.to_string(),
                    reason: reason.to_string(),
                },
            )
        };
        let value = match kind {
            ParamKind::Number { signed } => {
                let n: f64 = raw.parse().map_err(|_| invalid("not a number"))?;
                if !n.is_finite() {
                    return Err(invalid("must be finite"));
                }
                if !signed && n < 0.0 {
                    return Err(invalid("must be non-negative"));
                }
                if key == "prob" && n > 1.0 {
                    return Err(invalid("probability above 1"));
                }
                ParamValue::Number(n)
            }
            ParamKind::Bool => ParamValue::Bool(parse_bool(raw).ok_or_else(|| invalid("not a boolean"))?),
            ParamKind::Orientation => {
                if !matches!(raw, "UP" | "DOWN" | "LEFT" | "RIGHT") {
                    return Err(invalid("expected UP, DOWN, LEFT or RIGHT"));
                }
                ParamValue::Text(raw.to_string())
            }
            ParamKind::SpriteRef => {
                if !is_identifier(raw) {
                    return Err(invalid("not a sprite name"));
                }
                refs.push((raw.to_string(), line));
                ParamValue::Text(raw.to_string())
            }
            ParamKind::Text => ParamValue::Text(raw.to_string()),
        };
        params.insert(key.to_string(), value);
    }
    Ok(params)
}

struct RawSprite {
    name: String,
    class: Option<SpriteClass>,
    own: Params,
    parent: Option<usize>,
    line: usize,
}

/// Parses a VGDL game description.
pub fn parse_game(source: &str) -> Result<GameSpec, ParseError> {
    let lines = logical_lines(source);
    let end_line = source.lines().count() + 1;

    let Some(header) = lines.first() else {
        return Err(ParseError::new(1, ParseErrorKind::MissingHeader));
    };
    let mut header_tokens = header.text.split_whitespace();
    if header_tokens.next() != Some("BasicGame") {
        return Err(ParseError::new(header.number, ParseErrorKind::MissingHeader));
    }
    for token in header_tokens {
        let (key, _) = split_param(token, header.number)?;
        if key != "square_size" {
            return Err(ParseError::new(
                header.number,
                ParseErrorKind::UnknownParam(key.to_string()),
            ));
        }
    }

    let mut block_indent: Option<usize> = None;
    let mut current: Option<Block> = None;
    let mut sections: Vec<(Block, usize, Vec<&Line<'_>>)> = Vec::new();
    for line in &lines[1..] {
        if line.indent <= header.indent {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::BadIndentation("content must be indented below `BasicGame`".into()),
            ));
        }
        let indent = *block_indent.get_or_insert(line.indent);
        if line.indent == indent {
            let block = Block::from_keyword(line.text).ok_or_else(|| {
                ParseError::new(
                    line.number,
                    ParseErrorKind::BadIndentation(format!(
                        "`{}` is at block level but is not a block keyword",
                        line.text
                    )),
                )
            })?;
            if sections.iter().any(|(b, _, _)| *b == block) {
                return Err(ParseError::new(
                    line.number,
                    ParseErrorKind::DuplicateBlock(block.keyword().to_string()),
                ));
            }
            sections.push((block, line.number, Vec::new()));
            current = Some(block);
        } else if line.indent < indent || current.is_none() {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::BadIndentation("line is not inside a block".into()),
            ));
        } else if let Some(section) = sections.last_mut() {
            section.2.push(line);
        }
    }

    for block in [
        Block::Sprites,
        Block::Mapping,
        Block::Interactions,
        Block::Terminations,
    ] {
        if !sections.iter().any(|(b, _, _)| *b == block) {
            return Err(ParseError::new(
                end_line,
                ParseErrorKind::MissingBlock(block.keyword()),
            ));
        }
    }
    let section = |block: Block| {
        sections
            .iter()
            .find(|(b, _, _)| *b == block)
            .expect("presence checked above")
    };

    let mut refs: Vec<(String, usize)> = Vec::new();
    let mut warnings = Vec::new();

    let (_, sprites_line, sprite_lines) = section(Block::Sprites);
    let raw = parse_sprite_block(sprite_lines, &mut refs)?;
    let sprites = flatten_sprites(&raw);
    let known: HashSet<&str> = sprites.iter().map(|s| s.name.as_str()).collect();

    let (_, _, mapping_lines) = section(Block::Mapping);
    let mut level_mapping: Vec<MappingEntry> = Vec::new();
    check_flat_indent(mapping_lines)?;
    for line in mapping_lines {
        let (left, right) = split_arrow(line)?;
        let mut symbols = left.chars();
        let symbol = match (symbols.next(), symbols.next()) {
            (Some(c), None) if !c.is_whitespace() => c,
            _ => {
                return Err(ParseError::new(
                    line.number,
                    ParseErrorKind::Malformed(format!("mapping key `{left}` must be one character")),
                ))
            }
        };
        let names: Vec<String> = right.split_whitespace().map(str::to_string).collect();
        if names.is_empty() {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::Malformed("mapping lists no sprites".into()),
            ));
        }
        for name in &names {
            refs.push((name.clone(), line.number));
        }
        if let Some(pos) = level_mapping.iter().position(|m| m.symbol == symbol) {
            warnings.push(format!(
                "line {}: mapping for `{symbol}` redefined; last definition wins",
                line.number
            ));
            level_mapping.remove(pos);
        }
        level_mapping.push(MappingEntry {
            symbol,
            sprites: names,
        });
    }

    let (_, _, rule_lines) = section(Block::Interactions);
    check_flat_indent(rule_lines)?;
    let mut interactions = Vec::new();
    for line in rule_lines {
        let (left, right) = split_arrow(line)?;
        let names: Vec<&str> = left.split_whitespace().collect();
        if names.len() < 2 {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::Malformed("an interaction needs an actor and at least one collider".into()),
            ));
        }
        let mut tokens = right.split_whitespace();
        let effect_name = tokens.next().ok_or_else(|| {
            ParseError::new(line.number, ParseErrorKind::Malformed("missing effect".into()))
        })?;
        let effect = Effect::from_name(effect_name).ok_or_else(|| {
            ParseError::new(
                line.number,
                ParseErrorKind::UnknownEffect(effect_name.to_string()),
            )
        })?;
        let rest: Vec<&str> = tokens.collect();
        let params = parse_params(&rest, ParamContext::Effect, line.number, &mut refs)?;
        for required in effect.required_params() {
            if !params.contains_key(*required) {
                return Err(ParseError::new(
                    line.number,
                    ParseErrorKind::MissingParam((*required).to_string()),
                ));
            }
        }
        let actor = names[0];
        if actor == EOS {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::Malformed("EOS can only appear as a collider".into()),
            ));
        }
        refs.push((actor.to_string(), line.number));
        for collider in &names[1..] {
            if *collider != EOS {
                refs.push((collider.to_string(), line.number));
            }
            interactions.push(InteractionRule {
                actor: actor.to_string(),
                collider: collider.to_string(),
                effect,
                params: params.clone(),
            });
        }
    }

    let (_, _, term_lines) = section(Block::Terminations);
    check_flat_indent(term_lines)?;
    let mut terminations = Vec::new();
    for line in term_lines {
        terminations.push(parse_termination(line, &mut refs)?);
    }

    for (name, line) in &refs {
        if !known.contains(name.as_str()) {
            return Err(ParseError::new(
                *line,
                ParseErrorKind::UnresolvedSprite(name.clone()),
            ));
        }
    }

    let spec = GameSpec {
        sprites,
        level_mapping,
        interactions,
        terminations,
        warnings,
    };
    let lineages = spec
        .sprites
        .iter()
        .filter(|s| s.class.is_avatar() && !spec.parent_is_avatar(s))
        .count();
    if lineages != 1 {
        return Err(ParseError::new(
            *sprites_line,
            ParseErrorKind::AvatarLineage(lineages),
        ));
    }
    Ok(spec)
}

fn split_arrow<'a>(line: &Line<'a>) -> Result<(&'a str, &'a str), ParseError> {
    match line.text.split_once('>') {
        Some((l, r)) => Ok((l.trim(), r.trim())),
        None => Err(ParseError::new(
            line.number,
            ParseErrorKind::Malformed(format!("expected `>` in `{}`", line.text)),
        )),
    }
}

fn check_flat_indent(lines: &[&Line<'_>]) -> Result<(), ParseError> {
    if let Some(first) = lines.first() {
        if let Some(bad) = lines.iter().find(|l| l.indent != first.indent) {
            return Err(ParseError::new(
                bad.number,
                ParseErrorKind::BadIndentation(format!(
                    "expected {} leading spaces, found {}",
                    first.indent, bad.indent
                )),
            ));
        }
    }
    Ok(())
}

fn parse_sprite_block(
    lines: &[&Line<'_>],
    refs: &mut Vec<(String, usize)>,
) -> Result<Vec<RawSprite>, ParseError> {
    let mut raw: Vec<RawSprite> = Vec::new();
    // (indent, index into raw)
    let mut stack: Vec<(usize, usize)> = Vec::new();
    // indentation already used by the children of each parent (None = top level)
    let mut child_indent: HashMap<Option<usize>, usize> = HashMap::new();

    for line in lines {
        while stack.last().is_some_and(|(indent, _)| *indent >= line.indent) {
            stack.pop();
        }
        let parent = stack.last().map(|(_, idx)| *idx);
        let expected = *child_indent.entry(parent).or_insert(line.indent);
        if expected != line.indent {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::BadIndentation(format!(
                    "sibling sprites must share indentation ({expected} spaces, found {})",
                    line.indent
                )),
            ));
        }

        let (name, right) = split_arrow(line)?;
        if !is_identifier(name) {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::Malformed(format!("invalid sprite name `{name}`")),
            ));
        }
        if name == EOS || raw.iter().any(|s| s.name == name) {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::DuplicateSprite(name.to_string()),
            ));
        }
        let tokens: Vec<&str> = right.split_whitespace().collect();
        let (class, param_tokens) = match tokens.first() {
            Some(first) if !first.contains('=') => {
                let class = SpriteClass::from_name(first).ok_or_else(|| {
                    ParseError::new(
                        line.number,
                        ParseErrorKind::UnknownSpriteClass(first.to_string()),
                    )
                })?;
                (Some(class), &tokens[1..])
            }
            _ => (None, &tokens[..]),
        };
        let own = parse_params(param_tokens, ParamContext::Sprite, line.number, refs)?;
        raw.push(RawSprite {
            name: name.to_string(),
            class,
            own,
            parent,
            line: line.number,
        });
        stack.push((line.indent, raw.len() - 1));
    }
    Ok(raw)
}

fn flatten_sprites(raw: &[RawSprite]) -> Vec<SpriteDef> {
    let mut out: Vec<SpriteDef> = Vec::with_capacity(raw.len());
    // Parents always precede children, so their effective values are ready.
    for sprite in raw {
        let (mut params, inherited_class) = match sprite.parent {
            Some(p) => (out[p].params.clone(), Some(out[p].class)),
            None => (Params::new(), None),
        };
        for (k, v) in &sprite.own {
            params.insert(k.clone(), v.clone());
        }
        let _ = sprite.line;
        out.push(SpriteDef {
            name: sprite.name.clone(),
            class: sprite
                .class
                .or(inherited_class)
                .unwrap_or(SpriteClass::Immovable),
            params,
            parent: sprite.parent.map(|p| raw[p].name.clone()),
        });
    }
    out
}

fn parse_termination(
    line: &Line<'_>,
    refs: &mut Vec<(String, usize)>,
) -> Result<TerminationRule, ParseError> {
    let mut tokens = line.text.split_whitespace();
    let kind_name = tokens.next().unwrap_or_default();
    let kind = TerminationKind::from_name(kind_name).ok_or_else(|| {
        ParseError::new(
            line.number,
            ParseErrorKind::UnknownTermination(kind_name.to_string()),
        )
    })?;
    let mut limit = 0u64;
    let mut win = true;
    let mut numbered: BTreeMap<u32, String> = BTreeMap::new();
    let mut single: Option<String> = None;
    for token in tokens {
        let (key, value) = split_param(token, line.number)?;
        let invalid = |reason: &str| {
            ParseError::new(
                line.number,
                ParseErrorKind::InvalidParamValue {
                    key: key.to_string(),
                    reason: reason.to_string(),
                },
            )
        };
        match key {
            "limit" => limit = value.parse().map_err(|_| invalid("expected a non-negative integer"))?,
            "win" => win = parse_bool(value).ok_or_else(|| invalid("not a boolean"))?,
            "stype" if kind == TerminationKind::SpriteCounter => single = Some(value.to_string()),
            _ if kind == TerminationKind::MultiSpriteCounter && key.starts_with("stype") => {
                let idx: u32 = key["stype".len()..]
                    .parse()
                    .map_err(|_| ParseError::new(line.number, ParseErrorKind::UnknownParam(key.to_string())))?;
                numbered.insert(idx, value.to_string());
            }
            _ => {
                return Err(ParseError::new(
                    line.number,
                    ParseErrorKind::UnknownParam(key.to_string()),
                ))
            }
        }
    }
    let sprites: Vec<String> = match kind {
        TerminationKind::SpriteCounter => vec![single.ok_or_else(|| {
            ParseError::new(line.number, ParseErrorKind::MissingParam("stype".into()))
        })?],
        TerminationKind::MultiSpriteCounter => {
            if numbered.is_empty() {
                return Err(ParseError::new(
                    line.number,
                    ParseErrorKind::MissingParam("stype1".into()),
                ));
            }
            numbered.into_values().collect()
        }
        TerminationKind::Timeout => Vec::new(),
    };
    for s in &sprites {
        if !is_identifier(s) {
            return Err(ParseError::new(
                line.number,
                ParseErrorKind::InvalidParamValue {
                    key: "stype".into(),
                    reason: "not a sprite name".into(),
                },
            ));
        }
        refs.push((s.clone(), line.number));
    }
    Ok(TerminationRule {
        kind,
        sprites,
        limit,
        win,
    })
}

/// Parses a level layout against the game's character mapping.
pub fn parse_level(spec: &GameSpec, source: &str) -> Result<LevelGrid, LevelError> {
    let mut rows: Vec<String> = source
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect();
    while rows.last().is_some_and(|r| r.trim().is_empty()) {
        rows.pop();
    }
    if rows.is_empty() {
        return Err(LevelError::EmptyLevel);
    }
    let width = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
    if width == 0 {
        return Err(LevelError::EmptyLevel);
    }

    let mut cells = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    for (row, text) in rows.iter().enumerate() {
        let mut line: Vec<char> = text.chars().collect();
        for (col, &ch) in line.iter().enumerate() {
            if ch != BACKGROUND && spec.mapping(ch).is_none() {
                return Err(LevelError::UnknownTile { ch, row, col });
            }
        }
        if line.len() < width {
            warnings.push(format!(
                "row {row} padded from {} to {width} columns",
                line.len()
            ));
            line.resize(width, BACKGROUND);
        }
        cells.push(line);
    }
    Ok(LevelGrid {
        width,
        height: cells.len(),
        cells,
        source: rows,
        warnings,
    })
}
