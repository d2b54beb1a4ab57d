#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use vgdl_bench::engine::{Action, Game};
use vgdl_bench::games::GameSource;
use vgdl_bench::metrics::StepRecord;
use vgdl_bench::vgdl::{parse_game, parse_level, LevelGrid};

/// Hand-traced solutions for the bundled levels.
pub const SOKOBAN_LVL0: &str = "R R R D L L L D R R R";
pub const ESCAPE_LVL0: &str = "D D R R R R U R";

/// Avatar positions along the escape solution, paired with the move taken there.
pub const ESCAPE_LVL0_PATH: [((i32, i32), Action); 8] = [
    ((1, 1), Action::Down),
    ((2, 1), Action::Down),
    ((3, 1), Action::Right),
    ((3, 2), Action::Right),
    ((3, 3), Action::Right),
    ((3, 4), Action::Right),
    ((3, 5), Action::Up),
    ((2, 5), Action::Right),
];

pub const PROMPT_HEADERS: [&[u8]; 5] = [
    b"=== Game Rules ===",
    b"=== Available Actions ===",
    b"=== Important Mechanics Notice ===",
    b"=== Sprite Mapping ===",
    b"=== Current State ===",
];

pub fn actions(text: &str) -> Vec<Action> {
    text.split_whitespace()
        .map(|t| match t {
            "N" => Action::Nil,
            "L" => Action::Left,
            "R" => Action::Right,
            "D" => Action::Down,
            "U" => Action::Up,
            "S" => Action::Use,
            other => panic!("bad action {other}"),
        })
        .collect()
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Debug dump of the parsed rules and every parsed level.
pub fn snapshot(name: &str) -> String {
    let source = GameSource::bundled(name).unwrap();
    let spec = source.spec().unwrap();
    let mut out = format!("{spec:#?}\n");
    for k in 0..source.levels.len() {
        let grid = source.level(&spec, k).unwrap();
        out.push_str(&format!("level {k}: {}x{}\n", grid.width, grid.height));
        for row in &grid.cells {
            out.push_str(&row.iter().collect::<String>());
            out.push('\n');
        }
    }
    out
}

pub const CORRIDOR_GAME: &str = "\
BasicGame
    SpriteSet
        coin   > Immovable
        avatar > MovingAvatar
        wall   > Immovable
    LevelMapping
        c > coin
        w > wall
        A > avatar
    InteractionSet
        avatar wall > stepBack
        coin avatar > killSprite scoreChange=1
    TerminationSet
        Timeout limit=100 win=False
";

pub const CORRIDOR_LEVEL: &str = "wwwwww\nw.A.cw\nwwwwww\n";

pub fn corridor() -> (Arc<Game>, LevelGrid) {
    let spec = parse_game(CORRIDOR_GAME).unwrap();
    let level = parse_level(&spec, CORRIDOR_LEVEL).unwrap();
    (Arc::new(Game::new(spec)), level)
}

fn inverse(a: Action) -> Option<Action> {
    match a {
        Action::Left => Some(Action::Right),
        Action::Right => Some(Action::Left),
        Action::Up => Some(Action::Down),
        Action::Down => Some(Action::Up),
        _ => None,
    }
}

/// Direct enumeration of the meaningful-step predicate: every step passes the
/// base test, then every pair (a, b) with 1 <= b - a <= 3 is examined.
pub fn brute_force_meaningful(steps: &[StepRecord]) -> Vec<bool> {
    let n = steps.len();
    let mut out: Vec<bool> = steps
        .iter()
        .map(|s| s.action != Action::Nil && (s.reward != 0.0 || s.state_changed))
        .collect();
    for a in 0..n {
        for b in 0..n {
            if b <= a || b - a > 3 {
                continue;
            }
            let (early, late) = (&steps[a], &steps[b]);
            let inverse_pair = inverse(late.action) == Some(early.action);
            let returned = match (late.avatar_after, early.avatar_before) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            };
            let unrewarded = early.reward == 0.0 && late.reward == 0.0;
            if inverse_pair && returned && unrewarded {
                out[a] = false;
                out[b] = false;
            }
        }
    }
    out
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
