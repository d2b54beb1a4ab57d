use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use vgdl_bench::engine::init_state;
use vgdl_bench::games::{GameSource, LoadedGame, BUNDLED};
use vgdl_bench::harness::{self, AgentFactory, AgentSpec, HarnessError, Levels, RunConfig, Summary};
use vgdl_bench::textualizer::{self, assemble_prompt, PromptOptions};

#[derive(Parser)]
#[command(name = "vgdl-bench", version, about = "Run VGDL games with text-driven and search agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of episodes and write logs plus summaries.
    Run(RunArgs),
    /// Play one episode and print every frame.
    Play(PlayArgs),
    /// Print the natural-language rules and, with --level, a full prompt.
    Translate(TranslateArgs),
    /// Recompute summaries from existing episode logs.
    Metrics(MetricsArgs),
    /// List bundled games.
    Games,
}

#[derive(Args, Default)]
struct PromptFlags {
    /// Add per-entity coordinate lines to prompts.
    #[arg(long)]
    coord_tags: bool,
    /// Describe the four cells next to the avatar.
    #[arg(long)]
    verbose_grounding: bool,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated game names.
    #[arg(long, value_delimiter = ',')]
    games: Vec<String>,
    /// `all` or comma-separated level indices.
    #[arg(long)]
    levels: Option<String>,
    /// Agent spec; repeat for several agents.
    #[arg(long = "agent")]
    agents: Vec<String>,
    #[arg(long)]
    episodes: Option<u32>,
    #[arg(long)]
    max_steps: Option<u32>,
    /// Base seed; episode i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Directory holding game folders instead of the bundled set.
    #[arg(long)]
    games_dir: Option<PathBuf>,
    /// JSON mock script; `llm` agents talk to a local mock server.
    #[arg(long)]
    mock_llm: Option<PathBuf>,
    #[command(flatten)]
    prompt: PromptFlags,
}

#[derive(Args)]
struct PlayArgs {
    #[arg(long)]
    game: String,
    #[arg(long, default_value_t = 0)]
    level: usize,
    #[arg(long, default_value = "random")]
    agent: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_steps: u32,
    #[arg(long)]
    games_dir: Option<PathBuf>,
    #[arg(long)]
    mock_llm: Option<PathBuf>,
    /// Only print the final result.
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    prompt: PromptFlags,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    game: String,
    #[arg(long)]
    level: Option<usize>,
    #[arg(long)]
    games_dir: Option<PathBuf>,
    #[command(flatten)]
    prompt: PromptFlags,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run directory (or its logs/ folder).
    #[arg(long)]
    logs: PathBuf,
    /// Where to write summary files; defaults to printing only.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = vgdl_bench::metrics::DEFAULT_EPSILON)]
    epsilon: f64,
}

fn prompt_options(flags: &PromptFlags) -> PromptOptions {
    PromptOptions {
        coordinate_tagging: flags.coord_tags,
        verbose_grounding: flags.verbose_grounding,
    }
}

fn print_summary(summary: &Summary) {
    println!(
        "{:<12} {:>3} {:<16} {:>6} {:>6} {:>6} {:>6} {:>7} {:>6}",
        "game", "lvl", "agent", "M", "E", "W", "R~", "inv", "S"
    );
    for row in &summary.rows {
        let r = &row.report;
        println!(
            "{:<12} {:>3} {:<16} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>7.2} {:>6.3}",
            row.game,
            row.level,
            row.agent,
            r.meaningful_ratio,
            r.step_efficiency,
            r.win_rate,
            r.normalized_reward,
            r.inverted_steps,
            r.overall_score
        );
    }
    println!();
    for agg in &summary.aggregate {
        println!(
            "{:<16} win rate {:.3}  avg score {:.3}  avg meaningful {:.3}  episodes {} (excluded {})",
            agg.agent,
            agg.overall_win_rate,
            agg.average_overall_score,
            agg.average_meaningful_ratio,
            agg.episodes,
            agg.excluded
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<(), HarnessError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if !args.games.is_empty() {
        config.games = args.games;
    }
    if let Some(levels) = &args.levels {
        config.levels = Levels::parse(levels)?;
    }
    if !args.agents.is_empty() {
        config.agents = args.agents;
    }
    if let Some(v) = args.episodes {
        config.episodes_per_level = v;
    }
    if let Some(v) = args.max_steps {
        config.max_steps = v;
    }
    if let Some(v) = args.seed {
        config.seed_base = v;
    }
    if args.out.is_some() {
        config.output_dir = args.out;
    }
    if let Some(v) = args.parallelism {
        config.parallelism = v;
    }
    if args.games_dir.is_some() {
        config.games_dir = args.games_dir;
    }
    if args.mock_llm.is_some() {
        config.mock_llm = args.mock_llm;
    }
    config.overwrite |= args.overwrite;
    config.prompt.coordinate_tagging |= args.prompt.coord_tags;
    config.prompt.verbose_grounding |= args.prompt.verbose_grounding;

    let result = harness::run_batch(&config)?;
    print_summary(&result.summary);
    if let Some(dir) = &config.output_dir {
        println!("\nwrote {} episode logs to {}", result.logs.len(), dir.display());
    }
    Ok(())
}

fn cmd_play(args: PlayArgs) -> Result<(), HarnessError> {
    let game = LoadedGame::load(&args.game, args.games_dir.as_deref())?;
    let level = game
        .levels
        .get(args.level)
        .ok_or_else(|| HarnessError::Config(format!("{} has no level {}", game.name, args.level)))?;
    let spec = AgentSpec::parse(&args.agent)?;
    let config = RunConfig {
        games: vec![game.name.clone()],
        agents: vec![args.agent.clone()],
        mock_llm: args.mock_llm.clone(),
        prompt: prompt_options(&args.prompt),
        ..RunConfig::default()
    };
    let factory = AgentFactory::new(&config, std::slice::from_ref(&spec))?;
    let mut agent = factory.build(&spec, &config, game.strategy.as_deref())?;
    let quiet = args.quiet;
    if !quiet {
        if let Ok(state) = init_state(Arc::clone(&game.game), level, args.seed) {
            println!("{}", textualizer::serialize_state(&state).map);
        }
    }
    let log = harness::run_episode_observed(
        &game.name,
        &game.game,
        args.level,
        level,
        agent.as_mut(),
        &spec.label,
        args.seed,
        args.max_steps,
        &mut |state, step| {
            if quiet {
                return;
            }
            println!(
                "tick {} action {} reward {} score {}",
                step.tick + 1,
                step.action.label(),
                step.reward,
                state.score
            );
            println!("{}", textualizer::serialize_state(state).map);
        },
    );
    println!(
        "{} level {} with {}: {:?} after {} steps, reward {}, meaningful ratio {:.3}",
        log.game,
        log.level,
        log.agent,
        log.outcome,
        log.terminal_tick,
        log.total_reward,
        log.meaningful_ratio()
    );
    if let Some(f) = &log.failure {
        println!("episode failed: {f}");
    }
    Ok(())
}

fn cmd_translate(args: TranslateArgs) -> Result<(), HarnessError> {
    let source = GameSource::load(&args.game, args.games_dir.as_deref())?;
    let game = LoadedGame::from_source(&source)?;
    match args.level {
        None => {
            println!("{}", textualizer::translate_rules(&game.game.spec, game.strategy.as_deref()));
            println!();
            println!("{}", textualizer::action_text(&game.game));
        }
        Some(k) => {
            let level = game
                .levels
                .get(k)
                .ok_or_else(|| HarnessError::Config(format!("{} has no level {k}", game.name)))?;
            let state = init_state(Arc::clone(&game.game), level, 0)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let bundle = assemble_prompt(&state, game.strategy.as_deref(), prompt_options(&args.prompt));
            println!("{}", bundle.system_text());
            println!();
            println!("{}", bundle.user_text());
        }
    }
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), HarnessError> {
    let logs = harness::read_logs(&args.logs)?;
    let summary = harness::summarize(&logs, args.epsilon)?;
    print_summary(&summary);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|source| HarnessError::Io {
            path: out.clone(),
            source,
        })?;
        harness::write_summary(&summary, out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Play(a) => cmd_play(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Games => {
            for name in BUNDLED {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
