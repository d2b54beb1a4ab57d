mod common;

use std::fs;

use proptest::prelude::*;
use vgdl_bench::games::{GameSource, BUNDLED};
use vgdl_bench::vgdl::{parse_game, parse_level, LevelError};

/// Set `UPDATE_GOLDEN=1` to rewrite the snapshots.
#[test]
fn golden_snapshots() {
    let dir = common::golden_dir();
    for name in BUNDLED {
        let path = dir.join(format!("{name}.snap"));
        let snap = common::snapshot(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&path, &snap).unwrap();
        }
        let golden = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(snap, golden, "{name} snapshot drifted");
    }
}

#[test]
fn canonical_form_round_trips_for_bundled_games() {
    for name in BUNDLED {
        let spec = GameSource::bundled(name).unwrap().spec().unwrap();
        let again = parse_game(&spec.to_canonical()).unwrap();
        assert_eq!(spec, again, "{name}");
    }
}

#[test]
fn nested_sprites_inherit_class_and_params() {
    let text = "\
BasicGame
    SpriteSet
        moving > RandomNPC speed=0.5
            fast > cooldown=2
            slow >
        avatar > MovingAvatar
    LevelMapping
        f > fast
        s > slow
        A > avatar
    InteractionSet
        moving EOS > stepBack
    TerminationSet
        Timeout limit=10 win=True
";
    let spec = parse_game(text).unwrap();
    let fast = spec.sprite("fast").unwrap();
    assert_eq!(fast.parent.as_deref(), Some("moving"));
    assert_eq!(fast.class.name(), "RandomNPC");
    assert_eq!(fast.param_f64("speed"), Some(0.5));
    assert_eq!(fast.param_f64("cooldown"), Some(2.0));
    assert_eq!(spec.sprite("slow").unwrap().param_f64("cooldown"), None);
    assert!(spec.is_a("slow", "moving"));
    assert_eq!(parse_game(&spec.to_canonical()).unwrap(), spec);
}

#[test]
fn unknown_level_tile() {
    let spec = GameSource::bundled("sokoban").unwrap().spec().unwrap();
    let err = parse_level(&spec, "www\nwAQ\nwww\n").unwrap_err();
    assert_eq!(err, LevelError::UnknownTile { ch: 'Q', row: 1, col: 2 });
}

#[test]
fn errors_carry_line_numbers() {
    let text = "BasicGame\n    SpriteSet\n        a > Flying\n    LevelMapping\n        a > a\n    InteractionSet\n    TerminationSet\n        Timeout limit=1 win=True\n";
    let err = parse_game(text).unwrap_err();
    assert_eq!(err.line, 3);
    let missing = parse_game("BasicGame\n    SpriteSet\n        a > Immovable\n").unwrap_err();
    assert_eq!(missing.line, 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parser_never_panics(text in "[ a-zA-Z=>.0-9\n]{0,200}") {
        let _ = parse_game(&text);
    }

    #[test]
    fn parser_never_panics_on_mutated_games(idx in 0usize..8, cut in 0usize..2000, junk in "[ a-z>=\n]{0,12}") {
        let source = GameSource::bundled(BUNDLED[idx]).unwrap();
        let mut text = source.rules.clone();
        let at = cut.min(text.len());
        let at = (0..=at).rev().find(|&i| text.is_char_boundary(i)).unwrap();
        text.insert_str(at, &junk);
        let _ = parse_game(&text);
    }

    #[test]
    fn level_parse_is_total(rows in proptest::collection::vec("[w.A0-9x]{1,8}", 0..6)) {
        let spec = GameSource::bundled("sokoban").unwrap().spec().unwrap();
        let text = rows.join("\n");
        if let Ok(grid) = parse_level(&spec, &text) {
            prop_assert!(grid.height > 0);
            prop_assert!(grid.cells.iter().all(|r| r.len() == grid.width));
        }
    }
}
