mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgdl_bench::agents::{mcts_search, mcts_select, MctsBudget, MctsConfig};
use vgdl_bench::engine::{init_state, Action, Game};
use vgdl_bench::games::LoadedGame;
use vgdl_bench::vgdl::{parse_game, parse_level};

const OPEN_FIELD: &str = "\
BasicGame
    SpriteSet
        avatar > MovingAvatar
    LevelMapping
        A > avatar
    InteractionSet
        avatar EOS > stepBack
    TerminationSet
        Timeout limit=1000 win=False
";

#[test]
fn symmetric_choices_are_not_biased() {
    let spec = parse_game(OPEN_FIELD).unwrap();
    let level = parse_level(&spec, ".......\n.......\n.......\n...A...\n.......\n.......\n.......\n").unwrap();
    let game = Arc::new(Game::new(spec));
    let state = init_state(game, &level, 0).unwrap();
    let config = MctsConfig {
        budget: MctsBudget::Iterations(60),
        rollout_depth: 3,
        ..MctsConfig::default()
    };
    let actions = state.legal_actions().to_vec();
    let mut counts = vec![0usize; actions.len()];
    let trials = 1000;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = mcts_search(&state, &config, &mut rng).action;
        counts[actions.iter().position(|&a| a == chosen).unwrap()] += 1;
    }
    let expected = trials as f64 / actions.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // df = 4, p = 0.001
    assert!(chi2 < 18.47, "chi-square {chi2} for {counts:?}");
}

#[test]
fn search_prefers_the_winning_push() {
    let game = LoadedGame::load("sokoban", None).unwrap();
    let mut state = init_state(Arc::clone(&game.game), &game.levels[0], 0).unwrap();
    for a in common::actions("R R R D L L L D R R") {
        state.step(a).unwrap();
    }
    assert_eq!(mcts_select(&state, 30.0, 3), Action::Right);
}

#[test]
fn search_leaves_the_state_untouched() {
    let game = LoadedGame::load("aliens", None).unwrap();
    let state = init_state(Arc::clone(&game.game), &game.levels[0], 5).unwrap();
    let before = format!("{:?}", state.sprites());
    let config = MctsConfig {
        budget: MctsBudget::Iterations(50),
        ..MctsConfig::default()
    };
    let result = mcts_search(&state, &config, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(result.iterations, 50);
    assert_eq!(result.visits.iter().map(|v| v.1).sum::<u32>(), 50);
    assert_eq!(format!("{:?}", state.sprites()), before);
    assert_eq!(state.tick, 0);
}
