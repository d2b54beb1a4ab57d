use std::sync::Arc;

use proptest::prelude::*;
use vgdl_bench::engine::{init_state, Action, GameState, Outcome};
use vgdl_bench::games::{LoadedGame, BUNDLED};

fn start(name: &str, level: usize, seed: u64) -> GameState {
    let game = LoadedGame::load(name, None).unwrap();
    init_state(Arc::clone(&game.game), &game.levels[level], seed).unwrap()
}

fn actions(script: &str) -> Vec<Action> {
    script
        .split_whitespace()
        .map(|t| match t {
            "L" => Action::Left,
            "R" => Action::Right,
            "D" => Action::Down,
            "U" => Action::Up,
            "S" => Action::Use,
            _ => Action::Nil,
        })
        .collect()
}

fn play(state: &mut GameState, script: &str) -> f64 {
    let mut total = 0.0;
    for a in actions(script) {
        total += state.step(a).unwrap().reward;
    }
    total
}

#[test]
fn sokoban_level0_hand_solution() {
    let mut s = start("sokoban", 0, 7);
    assert_eq!((s.tick, s.score, s.outcome), (0, 0.0, Outcome::Ongoing));
    let total = play(&mut s, "R R R D L L L D R R R");
    assert_eq!(s.outcome, Outcome::Win);
    assert_eq!(s.tick, 11);
    assert_eq!(total, 2.0);
    assert_eq!(s.score, 2.0);
}

#[test]
fn escape_level0_hand_solution() {
    let mut s = start("escape", 0, 7);
    play(&mut s, "D D R R R R U");
    assert_eq!(s.outcome, Outcome::Ongoing);
    play(&mut s, "R");
    assert_eq!(s.outcome, Outcome::Win);
    assert_eq!(s.tick, 8);
}

#[test]
fn escape_hole_kills_avatar() {
    let mut s = start("escape", 0, 7);
    // Walk around the box and straight into the hole.
    play(&mut s, "D D D R R U R");
    assert_eq!(s.outcome, Outcome::Loss);
}

#[test]
fn zelda_key_then_door() {
    let mut s = start("zelda", 0, 1);
    let withkey = s.game().kind_index("withkey").unwrap();
    let nokey = s.game().kind_index("nokey").unwrap();
    assert_eq!(s.avatar().unwrap().kind, nokey);
    for _ in 0..200 {
        if s.is_terminal() || s.avatar().unwrap().kind == withkey {
            break;
        }
        s.step(Action::Nil).unwrap();
    }
    // Standing still never picks up the key.
    assert!(s.is_terminal() || s.avatar().unwrap().kind == nokey);
}

#[test]
fn identical_runs_match() {
    for name in BUNDLED {
        let mut a = start(name, 0, 42);
        let mut b = start(name, 0, 42);
        let legal = a.legal_actions().to_vec();
        for i in 0..150 {
            if a.is_terminal() {
                break;
            }
            let act = legal[(i * 7 + 3) % legal.len()];
            assert_eq!(a.step(act), b.step(act), "{name}");
            assert_eq!(a, b, "{name}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_sum_of_rewards_and_outcome_sticks(
        game in 0..BUNDLED.len(),
        level in 0usize..5,
        seed in any::<u64>(),
        picks in proptest::collection::vec(0usize..6, 1..120),
    ) {
        let mut s = start(BUNDLED[game], level, seed);
        let legal = s.legal_actions().to_vec();
        let mut total = 0.0;
        let mut finished = None;
        for p in picks {
            if s.is_terminal() {
                finished.get_or_insert(s.outcome);
                prop_assert!(s.clone().step(Action::Nil).is_err());
                break;
            }
            total += s.step(legal[p % legal.len()]).unwrap().reward;
            prop_assert!(s.avatar().is_none() || s.sprites().iter().filter(|x| x.id == s.avatar().unwrap().id).count() == 1);
        }
        prop_assert!((s.score - total).abs() < 1e-9);
        if let Some(o) = finished {
            prop_assert_eq!(o, s.outcome);
        }
    }

    #[test]
    fn nil_changes_nothing_in_sokoban(level in 0usize..5, seed in any::<u64>()) {
        let mut s = start("sokoban", level, seed);
        let before = s.sprites().to_vec();
        let r = s.step(Action::Nil).unwrap();
        prop_assert!(!r.changed);
        prop_assert_eq!(before, s.sprites().to_vec());
    }
}
