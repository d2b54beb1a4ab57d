//! Game files shipped with the crate, plus loading from a games directory
//! laid out as `<dir>/<name>/<name>.txt` and `<dir>/<name>/<name>_lvl<k>.txt`.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::engine::Game;
use crate::vgdl::{parse_game, parse_level, GameSpec, LevelError, LevelGrid, ParseError};

#[derive(Debug, Error)]
pub enum GameLoadError {
    #[error("unknown game `{0}`")]
    UnknownGame(String),
    #[error("game `{game}` has no level {level}")]
    UnknownLevel { game: String, level: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{game}: {source}")]
    Parse { game: String, source: ParseError },
    #[error("{game} level {level}: {source}")]
    Level {
        game: String,
        level: usize,
        source: LevelError,
    },
}

/// Raw text of one game: rules, levels and optional strategy notes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameSource {
    pub name: String,
    pub rules: String,
    pub levels: Vec<String>,
    pub strategy: Option<String>,
}

macro_rules! bundled {
    ($($name:literal => strategy: $strategy:expr),* $(,)?) => {
        /// Names of the bundled games.
        pub const BUNDLED: &[&str] = &[$($name),*];

        fn bundled_source(name: &str) -> Option<GameSource> {
            match name {
                $($name => Some(GameSource {
                    name: $name.to_string(),
                    rules: include_str!(concat!("../games/", $name, "/", $name, ".txt")).to_string(),
                    levels: vec![
                        include_str!(concat!("../games/", $name, "/", $name, "_lvl0.txt")).to_string(),
                        include_str!(concat!("../games/", $name, "/", $name, "_lvl1.txt")).to_string(),
                        include_str!(concat!("../games/", $name, "/", $name, "_lvl2.txt")).to_string(),
                        include_str!(concat!("../games/", $name, "/", $name, "_lvl3.txt")).to_string(),
                        include_str!(concat!("../games/", $name, "/", $name, "_lvl4.txt")).to_string(),
                    ],
                    strategy: $strategy.map(str::to_string),
                }),)*
                _ => None,
            }
        }
    };
}

bundled! {
    "aliens" => strategy: Some(include_str!("../games/aliens/aliens_strategy.txt")),
    "boulderdash" => strategy: Some(include_str!("../games/boulderdash/boulderdash_strategy.txt")),
    "chase" => strategy: None::<&str>,
    "escape" => strategy: Some(include_str!("../games/escape/escape_strategy.txt")),
    "portals" => strategy: None::<&str>,
    "realsokoban" => strategy: None::<&str>,
    "sokoban" => strategy: Some(include_str!("../games/sokoban/sokoban_strategy.txt")),
    "zelda" => strategy: Some(include_str!("../games/zelda/zelda_strategy.txt")),
}

impl GameSource {
    pub fn bundled(name: &str) -> Result<GameSource, GameLoadError> {
        bundled_source(name).ok_or_else(|| GameLoadError::UnknownGame(name.to_string()))
    }

    /// Reads a game from `dir/<name>/`. Levels are read from `_lvl0` upwards
    /// until the first missing file.
    pub fn from_dir(dir: &Path, name: &str) -> Result<GameSource, GameLoadError> {
        let base = dir.join(name);
        let read = |file: String| {
            let path = base.join(file);
            std::fs::read_to_string(&path).map_err(|source| GameLoadError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let rules = read(format!("{name}.txt"))?;
        let mut levels = Vec::new();
        while base.join(format!("{name}_lvl{}.txt", levels.len())).exists() {
            levels.push(read(format!("{name}_lvl{}.txt", levels.len()))?);
        }
        let strategy_path = base.join(format!("{name}_strategy.txt"));
        let strategy = if strategy_path.exists() {
            Some(read(format!("{name}_strategy.txt"))?)
        } else {
            None
        };
        Ok(GameSource {
            name: name.to_string(),
            rules,
            levels,
            strategy,
        })
    }

    /// Bundled game, or one read from `dir` when given.
    pub fn load(name: &str, dir: Option<&Path>) -> Result<GameSource, GameLoadError> {
        match dir {
            Some(d) => GameSource::from_dir(d, name),
            None => GameSource::bundled(name),
        }
    }

    pub fn spec(&self) -> Result<GameSpec, GameLoadError> {
        parse_game(&self.rules).map_err(|source| GameLoadError::Parse {
            game: self.name.clone(),
            source,
        })
    }

    pub fn level(&self, spec: &GameSpec, level: usize) -> Result<LevelGrid, GameLoadError> {
        let text = self.levels.get(level).ok_or_else(|| GameLoadError::UnknownLevel {
            game: self.name.clone(),
            level,
        })?;
        parse_level(spec, text).map_err(|source| GameLoadError::Level {
            game: self.name.clone(),
            level,
            source,
        })
    }
}

/// A parsed game ready to simulate, with its levels.
#[derive(Debug, Clone)]
pub struct LoadedGame {
    pub name: String,
    pub game: Arc<Game>,
    pub levels: Vec<LevelGrid>,
    pub strategy: Option<String>,
}

impl LoadedGame {
    pub fn from_source(source: &GameSource) -> Result<LoadedGame, GameLoadError> {
        let spec = source.spec()?;
        let levels = (0..source.levels.len())
            .map(|k| source.level(&spec, k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LoadedGame {
            name: source.name.clone(),
            game: Arc::new(Game::new(spec)),
            levels,
            strategy: source.strategy.clone(),
        })
    }

    pub fn load(name: &str, dir: Option<&Path>) -> Result<LoadedGame, GameLoadError> {
        LoadedGame::from_source(&GameSource::load(name, dir)?)
    }
}
