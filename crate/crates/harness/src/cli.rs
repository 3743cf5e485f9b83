//! The `crafter` command line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crafter_agents::{checkpoint, extract_attention, AgentConfig, Policy};
use crafter_core::env::{build_world, read_stats, replay, ledger_from_stats, EpisodeRecord};
use crafter_core::observe::render_full_map;
use crafter_core::scoring::score;
use crafter_core::{count_materials, success_rates, Achievement, Action, CreatureKind, Env, EnvSpec, Rules, StatsLog};
use crafter_ppo::{
    cartesian, evaluate, one_at_a_time, published_grid, train, ActionMode, Actor, EvalReport, PolicyActor,
    RandomActor, TrainOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{resolve_env, RunConfig};
use crate::error::{HarnessError, Result};
use crate::server::{self, ServerConfig, SpectatorPolicy};

#[derive(Debug, Parser)]
#[command(name = "crafter", version, about = "Crafter worlds, agents and training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration (TOML with env/agent/ppo/server sections).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a setting, e.g. `--set ppo.learning_rate=1e-4`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepMode {
    OneAtATime,
    Cartesian,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate worlds and print a census of materials and creatures.
    Gen {
        /// Number preset, appearance preset or scenario name.
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worlds to generate, with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Also write a full-map image of the first world.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Train an agent with PPO.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or a random policy) on the evaluation environment.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, required_unless_present = "random")]
        checkpoint: Option<PathBuf>,
        /// Uniform random actions instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        random: bool,
        /// Use the checkpoint's own agent config instead of requiring a match.
        #[arg(long)]
        trust_checkpoint: bool,
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stats_log: Option<PathBuf>,
    },
    /// Recompute the crafter score from stats logs.
    Score {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Verify an episode record, or create one from random actions.
    Replay {
        record: PathBuf,
        #[arg(long)]
        create: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        steps: u32,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Export attention overlays and a montage for an attention agent.
    VizAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Columns in the montage.
        #[arg(long, default_value_t = 6)]
        frames: usize,
        /// Environment steps between columns.
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[arg(long, default_value_t = 4)]
        scale: u32,
        #[arg(long, default_value = "attention")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Start the human-play server.
    Play {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Train and evaluate over a grid of PPO settings.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value_t = SweepMode::OneAtATime)]
        mode: SweepMode,
        /// Restrict to these keys of the tuned grid.
        #[arg(long, value_delimiter = ',')]
        axes: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
        /// List the configurations without running them.
        #[arg(long)]
        dry_run: bool,
    },
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = write!(out, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gen {
            preset,
            seed,
            count,
            png,
        } => gen(&preset, seed, count, png.as_deref(), out),
        Command::Train { config, seed, out: dir } => train_cmd(&config.load()?, seed, &dir, out),
        Command::Eval {
            config,
            checkpoint,
            random,
            trust_checkpoint,
            greedy,
            episodes,
            seed,
            stats_log,
        } => {
            let cfg = config.load()?;
            let episodes = episodes.unwrap_or(cfg.ppo.eval_episodes);
            let (_, spec) = cfg.env.specs()?;
            let log = stats_log.as_deref().map(StatsLog::open).transpose()?;
            let report = match (random, checkpoint) {
                (true, _) => evaluate(&mut RandomActor::new(seed), &spec, episodes, seed, log)?,
                (false, Some(path)) => {
                    let (policy, store) = load_policy(&path, &cfg, trust_checkpoint)?;
                    let mode = if greedy { ActionMode::Greedy } else { ActionMode::Sample };
                    let mut actor = PolicyActor::new(&policy, &store, mode, seed);
                    evaluate(&mut actor, &spec, episodes, seed, log)?
                }
                (false, None) => return Err(HarnessError::Usage("give --checkpoint or --random".into())),
            };
            print_report(&report, out)
        }
        Command::Score { logs } => score_cmd(&logs, out),
        Command::Replay {
            record,
            create,
            seed,
            steps,
            config,
        } => replay_cmd(&record, create, seed, steps, &config, out),
        Command::VizAttn {
            checkpoint,
            seed,
            frames,
            every,
            scale,
            out: dir,
            config,
        } => viz_attn(&checkpoint, seed, frames, every, scale, &dir, &config, out),
        Command::Play { config, port } => {
            let mut cfg = config.load()?;
            if let Some(p) = port {
                cfg.server.port = p;
            }
            play(&cfg, out)
        }
        Command::Sweep {
            config,
            mode,
            axes,
            seeds,
            out: dir,
            dry_run,
        } => sweep(&config.load()?, mode, &axes, seeds, &dir, dry_run, out),
    }
}

fn rt<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

fn gen(preset: &str, seed: u64, count: u64, png: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if count == 0 {
        return Err(HarnessError::Usage("--count must be positive".into()));
    }
    let spec = resolve_env(preset, &EnvSpec::default())?;
    for s in seed..seed + count {
        let state = build_world(&spec, s)?;
        let mut census: BTreeMap<String, usize> = count_materials(&state.map)
            .into_iter()
            .map(|(m, c)| (m.name().to_string(), c))
            .collect();
        for kind in CreatureKind::ALL {
            census.insert(kind.name().to_string(), state.count_of(kind));
        }
        writeln!(out, "world {s} ({})", spec.numbers)?;
        for (name, c) in &census {
            writeln!(out, "  {name:<10} {c}")?;
        }
        if s == seed {
            if let Some(path) = png {
                render_full_map(&state, 8).save(path).map_err(rt)?;
                writeln!(out, "map image: {}", path.display())?;
            }
        }
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig, seed: u64, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let (train_spec, eval_spec) = cfg.env.specs()?;
    let agent = cfg.agent.build()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let options = TrainOptions {
        out_dir: Some(dir.to_path_buf()),
        eval_spec: Some(eval_spec),
    };
    writeln!(
        out,
        "training {} ({} parameters) for {} steps",
        agent.architecture,
        crafter_agents::count_params(&agent)?,
        cfg.ppo.total_steps
    )?;
    let outcome = train::<f32>(&train_spec, &agent, &cfg.ppo, seed, &options, |r| {
        let eval = r.eval_score.map(|s| format!(" eval {s:.2}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "steps {:>9} policy {:+.4} value {:.4} entropy {:.3} clip {:.3} ev {:+.3} {:.0} sps{eval}",
            r.steps,
            r.update.policy_loss,
            r.update.value_loss,
            r.update.entropy,
            r.update.clip_fraction,
            r.update.explained_variance,
            r.steps_per_second
        );
    })?;
    if let Some((_, last)) = outcome.report.evaluations.last() {
        print_report(last, out)?;
    }
    writeln!(out, "checkpoint: {}", dir.join("final.ckpt").display())?;
    Ok(())
}

fn load_policy(path: &Path, cfg: &RunConfig, trust: bool) -> Result<(Policy, crafter_nnet::ParamStore<f32>)> {
    if trust {
        let (_, policy, store) = checkpoint::load::<f32>(path)?;
        Ok((policy, store))
    } else {
        Ok(checkpoint::load_matching::<f32>(path, &cfg.agent.build()?)?)
    }
}

fn print_report(report: &EvalReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "score {:.2} over {} episodes", report.score, report.episodes)?;
    writeln!(out, "mean reward {:.2}, mean length {:.1}", report.mean_reward, report.mean_length)?;
    for a in Achievement::ALL {
        writeln!(out, "  {:<22} {:6.2}%", a.name(), report.rate(a))?;
    }
    Ok(())
}

fn score_cmd(logs: &[PathBuf], out: &mut dyn Write) -> Result<()> {
    let mut lines = Vec::new();
    for path in logs {
        lines.extend(read_stats(path)?);
    }
    if lines.is_empty() {
        return Err(HarnessError::Runtime("stats logs contain no episodes".into()));
    }
    let rates = success_rates(&ledger_from_stats(&lines))?;
    writeln!(out, "{:.1}", score(&rates))?;
    writeln!(out, "episodes {}", lines.len())?;
    for a in Achievement::ALL {
        writeln!(out, "  {:<22} {:6.2}%", a.name(), rates.rate(a))?;
    }
    Ok(())
}

fn replay_cmd(path: &Path, create: bool, seed: u64, steps: u32, config: &ConfigArgs, out: &mut dyn Write) -> Result<()> {
    if create {
        let (spec, _) = config.load()?.env.specs()?;
        let mut env = Env::new(spec)?;
        env.record_episodes(true);
        env.reset(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            if env.is_done() {
                break;
            }
            env.step(Action::ALL[rng.random_range(0..Action::COUNT)])?;
        }
        let record = env
            .last_record()
            .cloned()
            .or_else(|| env.current_record())
            .ok_or_else(|| HarnessError::Runtime("no record produced".into()))?;
        record.save(path)?;
        writeln!(out, "recorded {} steps to {}", record.length, path.display())?;
        return Ok(());
    }
    let record = EpisodeRecord::load(path)?;
    let report = replay(&record, Arc::new(Rules::default()))?;
    if report.byte_exact {
        writeln!(out, "OK, byte-exact ({} steps)", report.steps)?;
        Ok(())
    } else {
        Err(HarnessError::Runtime(format!(
            "replay diverged: {}",
            report.first_divergence.unwrap_or_default()
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn viz_attn(
    path: &Path,
    seed: u64,
    frames: usize,
    every: usize,
    scale: u32,
    dir: &Path,
    config: &ConfigArgs,
    out: &mut dyn Write,
) -> Result<()> {
    if frames == 0 || every == 0 || scale == 0 {
        return Err(HarnessError::Usage("--frames, --every and --scale must be positive".into()));
    }
    let (agent, policy, store): (AgentConfig, Policy, _) = checkpoint::load::<f32>(path)?;
    if agent.architecture.is_object_centric() {
        let (spec, _) = config.load()?.env.specs()?;
        let mut env = Env::new(spec)?;
        let mut obs = env.reset(seed)?;
        let mut actor = PolicyActor::new(&policy, &store, ActionMode::Sample, seed);
        actor.begin(1);
        let mut observations = Vec::new();
        let mut maps = Vec::new();
        let mut t = 0;
        while observations.len() < frames {
            if t % every == 0 {
                let output = policy.forward(&store, std::slice::from_ref(&obs), None)?;
                maps.extend(extract_attention(&output)?);
                observations.push(obs.clone());
            }
            let action = actor.act(&[0], std::slice::from_ref(&obs))?[0];
            let step = env.step(action)?;
            obs = step.observation;
            t += 1;
            if step.done {
                break;
            }
        }
        let montage = crafter_agents::export(dir, &observations, &maps, scale)?;
        writeln!(out, "wrote {} frames; montage {}", observations.len(), montage.display())?;
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "{} has no attention maps; use oc-sa or oc-ca",
            agent.architecture
        )))
    }
}

fn play(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (spec, _) = cfg.env.specs()?;
    let spectator = match &cfg.server.checkpoint {
        Some(path) => {
            let (_, policy, store) = checkpoint::load::<f32>(path)?;
            Some(SpectatorPolicy { policy, store })
        }
        None => None,
    };
    let config = ServerConfig {
        spec,
        seed: cfg.server.seed,
        stats_log: Some(StatsLog::open(&cfg.server.stats_log)?),
        static_dir: cfg.server.static_dir.clone(),
        spectator,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let (listener, addr) = server::bind(&format!("{}:{}", cfg.server.host, cfg.server.port)).await?;
        writeln!(out, "play server on http://{addr} (websocket at /ws)")?;
        writeln!(out, "stats log: {}", cfg.server.stats_log.display())?;
        out.flush()?;
        server::serve(listener, config).await
    })
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    cfg: &RunConfig,
    mode: SweepMode,
    keys: &[String],
    seeds: u64,
    dir: &Path,
    dry_run: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let grid = published_grid();
    let axes: Vec<_> = if keys.is_empty() {
        grid
    } else {
        let mut chosen = Vec::new();
        for k in keys {
            let axis = grid
                .iter()
                .find(|a| &a.key == k)
                .ok_or_else(|| HarnessError::Usage(format!("`{k}` is not a swept setting")))?;
            chosen.push(axis.clone());
        }
        chosen
    };
    let configs = match mode {
        SweepMode::OneAtATime => one_at_a_time(&cfg.ppo, &axes)?,
        SweepMode::Cartesian => cartesian(&cfg.ppo, &axes)?,
    };
    writeln!(out, "{} configurations x {seeds} seeds", configs.len())?;
    if dry_run {
        for (label, _) in &configs {
            writeln!(out, "  {label}")?;
        }
        return Ok(());
    }
    let (train_spec, eval_spec) = cfg.env.specs()?;
    let agent = cfg.agent.build()?;
    std::fs::create_dir_all(dir)?;
    let mut results = std::fs::File::create(dir.join("results.jsonl"))?;
    for (label, ppo) in &configs {
        for seed in 0..seeds {
            let run_dir = dir.join(label.replace([',', '='], "_")).join(format!("seed{seed}"));
            let options = TrainOptions {
                out_dir: Some(run_dir),
                eval_spec: Some(eval_spec.clone()),
            };
            let outcome = train::<f32>(&train_spec, &agent, ppo, seed, &options, |_| {})?;
            let mut actor = PolicyActor::new(&outcome.policy, &outcome.store, ActionMode::Sample, seed);
            let report = evaluate(&mut actor, &eval_spec, ppo.eval_episodes, seed, None)?;
            writeln!(results, "{}", json!({"config": label, "seed": seed, "score": report.score, "rates": report.rates}))?;
            writeln!(out, "{label} seed {seed}: score {:.2}", report.score)?;
        }
    }
    Ok(())
}
