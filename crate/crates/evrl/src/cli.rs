//! Subcommands of the `evrl` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evrl_core::env::{Environment, EventEnv, Task};
use evrl_core::qnet::QNetwork;
use evrl_core::trainer::{self, episode_seed, summarize, EpisodeStats, TerminalCause, TrainEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::bench_pipeline;
use crate::config::RunConfig;
use crate::io::{self, Checkpoint};
use crate::log::{write_line, StepRecord, TrainRecord};
use crate::record::record_episode;
use crate::service::Server;

/// Event-camera reinforcement learning in simulation.
#[derive(Debug, Parser)]
#[command(name = "evrl", version)]
pub struct Cli {
    /// Subcommand.
    #[command(subcommand)]
    pub command: Command,
}

/// Run settings: a TOML file overlaid by flags.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

impl RunArgs {
    /// File settings overlaid by flags.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(self.flags.clone()))
    }
}

/// Policy for commands that roll out episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyName {
    /// Greedy on a checkpoint.
    Greedy,
    /// Uniform random.
    Random,
    /// Always the first action (forward).
    Forward,
    /// Avoidance: always stop.
    Stop,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with Double DQN and write a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Report mean ± standard error of greedy returns.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to evaluate; omit with --policy random.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Policy to evaluate.
        #[arg(long, value_enum, default_value = "greedy")]
        policy: PolicyName,
        /// Per-step episode log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Roll out a policy and write each episode's events as EVT1.
    Record {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint for the greedy policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Policy to roll out.
        #[arg(long, value_enum, default_value = "greedy")]
        policy: PolicyName,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Window length in microseconds.
        #[arg(long, default_value_t = 10_000)]
        dt_us: u64,
        /// Stop each episode after this many steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Dump every observation of one episode as PGM.
    RenderDemo {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint for the greedy policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Policy to roll out.
        #[arg(long, value_enum, default_value = "forward")]
        policy: PolicyName,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Never release the avoidance sphere.
        #[arg(long = "static")]
        static_scene: bool,
        /// Also dump the rendered intensity frames.
        #[arg(long)]
        intensity: bool,
    },
    /// Serve greedy actions over TCP.
    Serve {
        /// Address to listen on.
        #[arg(long)]
        bind: String,
        /// Checkpoint to serve.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Window length in microseconds.
        #[arg(long, default_value_t = 10_000)]
        dt_us: u64,
        /// Per-window latency log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Time the per-step pipeline stages.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to time; a freshly initialized network otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Steps to time.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Loads a checkpoint and fills in resolution and network shape the user did not set.
fn load_for_run(path: &Path, run: &mut RunConfig) -> anyhow::Result<Checkpoint> {
    let ckpt = io::load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let c = *ckpt.network.config();
    run.width.get_or_insert(c.width);
    run.height.get_or_insert(c.height);
    run.stride.get_or_insert(c.stride);
    run.padding.get_or_insert(c.padding);
    run.hidden.get_or_insert(c.hidden);
    let env = run.env_config()?;
    let expected = run.network_config(&env)?;
    if expected != c {
        bail!(
            "checkpoint {} expects {}x{} input with {} actions; the run uses {}x{} with {}",
            path.display(),
            c.width,
            c.height,
            c.actions,
            expected.width,
            expected.height,
            expected.actions
        );
    }
    Ok(ckpt)
}

type Policy = Box<dyn FnMut(&evrl_core::event::EventFrame) -> evrl_core::Result<usize>>;

fn policy(name: PolicyName, network: Option<QNetwork<f32>>, task: Task, seed: u64) -> anyhow::Result<Policy> {
    let actions = task.actions().len();
    Ok(match name {
        PolicyName::Greedy => {
            let net = network.context("the greedy policy needs --checkpoint")?;
            Box::new(move |obs| net.greedy_action(obs))
        }
        PolicyName::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            Box::new(move |_| Ok(rng.gen_range(0..actions)))
        }
        PolicyName::Forward => Box::new(|_| Ok(0)),
        PolicyName::Stop => {
            if task != Task::Avoidance {
                bail!("the stop policy exists only for avoidance");
            }
            Box::new(|_| Ok(1))
        }
    })
}

fn network_for(
    name: PolicyName,
    checkpoint: &Option<PathBuf>,
    run: &mut RunConfig,
) -> anyhow::Result<Option<QNetwork<f32>>> {
    match (checkpoint, name) {
        (Some(p), PolicyName::Greedy) => Ok(Some(load_for_run(p, run)?.network)),
        (Some(_), _) => bail!("--checkpoint is only used by the greedy policy"),
        (None, PolicyName::Greedy) => bail!("the greedy policy needs --checkpoint"),
        (None, _) => Ok(None),
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { run, out, log } => train(run.resolve()?, &out, log.as_deref()),
        Command::Eval {
            run,
            checkpoint,
            policy: name,
            log,
        } => {
            let mut run = run.resolve()?;
            let network = network_for(name, &checkpoint, &mut run)?;
            eval(run, name, network, log.as_deref())
        }
        Command::Record {
            run,
            checkpoint,
            policy: name,
            out,
            dt_us,
            steps,
        } => {
            let mut run = run.resolve()?;
            let network = network_for(name, &checkpoint, &mut run)?;
            record(run, name, network, &out, dt_us, steps)
        }
        Command::RenderDemo {
            run,
            checkpoint,
            policy: name,
            out,
            static_scene,
            intensity,
        } => {
            let mut run = run.resolve()?;
            let network = network_for(name, &checkpoint, &mut run)?;
            render_demo(run, name, network, &out, static_scene, intensity)
        }
        Command::Serve {
            bind,
            checkpoint,
            dt_us,
            log,
        } => serve(&bind, &checkpoint, dt_us, log.as_deref()),
        Command::Bench {
            run,
            checkpoint,
            steps,
            json,
        } => {
            let mut run = run.resolve()?;
            let network = match &checkpoint {
                Some(p) => Some(load_for_run(p, &mut run)?.network),
                None => None,
            };
            bench(run, network, steps, json)
        }
    }
}

fn train(run: RunConfig, out: &Path, log: Option<&Path>) -> anyhow::Result<()> {
    let env_cfg = run.env_config()?;
    let net_cfg = run.network_config(&env_cfg)?;
    let cfg = run.trainer_config()?;
    let mut log = log.map(create).transpose()?;
    let mut env = EventEnv::new(env_cfg)?;
    let mut clock = Instant::now();
    let mut log_err = None;
    let outcome = trainer::train_with(&mut env, &cfg, net_cfg, |event| {
        let record = match event {
            TrainEvent::Episode(e) => {
                let per_step = clock.elapsed().as_secs_f64() * 1e6 / e.stats.steps.max(1) as f64;
                TrainRecord::episode(e, per_step)
            }
            TrainEvent::Evaluation(e) => {
                eprintln!(
                    "episode {}: greedy return {:.3} ± {:.3}",
                    e.after_episode, e.summary.mean, e.summary.std_error
                );
                TrainRecord::eval(e)
            }
        };
        if let Some(w) = log.as_mut() {
            if let Err(e) = write_line(w, &record) {
                log_err.get_or_insert(e);
            }
        }
        clock = Instant::now();
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing the training log");
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    io::save_checkpoint(out, &outcome.network, outcome.grad_steps)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "trained {} episodes, {} gradient steps; checkpoint {}",
        outcome.episodes.len(),
        outcome.grad_steps,
        out.display()
    );
    Ok(())
}

fn eval(run: RunConfig, name: PolicyName, network: Option<QNetwork<f32>>, log: Option<&Path>) -> anyhow::Result<()> {
    let env_cfg = run.env_config()?;
    let episodes = run.episodes.unwrap_or(10);
    let seed = run.seed();
    let mut env = EventEnv::new(env_cfg)?;
    let mut act = policy(name, network, env_cfg.task, seed)?;
    let mut log = log.map(create).transpose()?;
    let mut stats: Vec<EpisodeStats> = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let r = trainer::rollout(&mut env, episode_seed(seed, i), i, &mut act)?;
        if let Some(w) = log.as_mut() {
            for (k, ((a, reward), info)) in r.actions.iter().zip(&r.rewards).zip(&r.infos).enumerate() {
                let record = StepRecord::new(i, k + 1, env_cfg.task.actions()[*a], *reward, info, k + 1 == r.actions.len());
                write_line(w, &record)?;
            }
        }
        stats.push(r.stats);
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    let s = summarize(&stats);
    let collisions = stats.iter().filter(|s| s.terminal == TerminalCause::Collision).count();
    println!(
        "return {:.6} ± {:.6} over {} episodes; collisions {}/{}",
        s.mean, s.std_error, s.count, collisions, s.count
    );
    Ok(())
}

fn record(
    run: RunConfig,
    name: PolicyName,
    network: Option<QNetwork<f32>>,
    out: &Path,
    dt_us: u64,
    steps: Option<usize>,
) -> anyhow::Result<()> {
    if dt_us == 0 {
        bail!("--dt-us must be positive");
    }
    let env_cfg = run.env_config()?;
    let episodes = run.episodes.unwrap_or(1);
    let seed = run.seed();
    let mut env = EventEnv::new(env_cfg)?;
    let mut act = policy(name, network, env_cfg.task, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut index = create(&out.join("actions.jsonl"))?;
    for i in 0..episodes {
        let ep = record_episode(&mut env, episode_seed(seed, i), i, dt_us, steps, &mut act)?;
        let file = format!("episode_{i:04}.evt");
        io::write_events_file(out.join(&file), &ep.stream)?;
        write_line(
            &mut index,
            &serde_json::json!({
                "episode": i,
                "file": file,
                "dt_us": dt_us,
                "windows": ep.actions.len(),
                "actions": ep.actions,
                "return_sum": ep.stats.return_sum,
            }),
        )?;
    }
    index.flush()?;
    println!("recorded {episodes} episodes to {}", out.display());
    Ok(())
}

fn render_demo(
    run: RunConfig,
    name: PolicyName,
    network: Option<QNetwork<f32>>,
    out: &Path,
    static_scene: bool,
    intensity: bool,
) -> anyhow::Result<()> {
    let mut env_cfg = run.env_config()?;
    if static_scene {
        if env_cfg.task != Task::Avoidance {
            bail!("--static applies to the avoidance task");
        }
        let never = (env_cfg.max_steps + 1) as f64;
        env_cfg.avoidance.trigger_step = evrl_core::env::Span::new(never, never);
    }
    let seed = run.seed();
    let mut env = EventEnv::new(env_cfg)?;
    let mut act = policy(name, network, env_cfg.task, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut obs = env.reset(episode_seed(seed, 0));
    let mut n = 0;
    loop {
        let step = env.step(act(&obs)?)?;
        n += 1;
        io::write_frame_pgm(out.join(format!("events_{n:04}.pgm")), &step.observation)?;
        if intensity {
            io::write_intensity_pgm(out.join(format!("intensity_{n:04}.pgm")), &env.render_current())?;
        }
        if step.done {
            break;
        }
        obs = step.observation;
    }
    println!("wrote {n} frames to {}", out.display());
    Ok(())
}

fn serve(bind: &str, checkpoint: &Path, dt_us: u64, log: Option<&Path>) -> anyhow::Result<()> {
    let ckpt = io::load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let server = Server::bind(bind, ckpt.network, dt_us).with_context(|| format!("binding {bind}"))?;
    let flag = server.shutdown_flag();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing the signal handler")?;
    let mut log = log.map(create).transpose()?;
    eprintln!("listening on {}", server.local_addr()?);
    server.run(log.as_mut().map(|w| w as &mut (dyn Write + Send)))?;
    Ok(())
}

fn bench(run: RunConfig, network: Option<QNetwork<f32>>, steps: usize, json: bool) -> anyhow::Result<()> {
    if steps == 0 {
        bail!("--steps must be positive");
    }
    let env_cfg = run.env_config()?;
    let network = match network {
        Some(n) => n,
        None => QNetwork::new(run.network_config(&env_cfg)?, &mut ChaCha8Rng::seed_from_u64(run.seed()))?,
    };
    let report = bench_pipeline(env_cfg, &network, steps, run.seed())?.report();
    if json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!(
            "{}x{}, {} steps (microseconds)",
            env_cfg.camera.width, env_cfg.camera.height, report.steps
        );
        println!("{:<8} {:>10} {:>10} {:>10}", "stage", "p50", "p90", "p99");
        for (name, p) in [
            ("render", report.render),
            ("emulate", report.emulate),
            ("noise", report.noise),
            ("forward", report.forward),
            ("total", report.total),
        ] {
            println!("{name:<8} {:>10.1} {:>10.1} {:>10.1}", p.p50, p.p90, p.p99);
        }
    }
    Ok(())
}
