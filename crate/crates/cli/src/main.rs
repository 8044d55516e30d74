use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use blendnav_bridge::{Bridge, BridgeConfig, BridgeError};
use blendnav_core::experiment::{analyze, run_experiment, ExperimentPlan, Report};
use blendnav_core::metrics::ControlMode;
use blendnav_core::replay::replay_file;
use blendnav_core::sim::SimConfig;
use blendnav_core::world::load_scenario_file;

const EXIT_PLAN: u8 = 2;
const EXIT_INTEGRITY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "blendnav",
    version,
    about = "Blended shared control simulator and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment plan and write logs and the report.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        parallel: Option<usize>,
        /// Output directory (overrides the plan's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the statistical report from a log directory.
    Analyze {
        #[arg(long)]
        logs: PathBuf,
    },
    /// Re-derive logged arbitration values and motion; exits 3 on any mismatch.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Serve a live teleoperation session over a web socket at `/ws`.
    Serve(ServeArgs),
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, value_enum, default_value_t = Mode::Bsc)]
    mode: Mode,
    /// Command latency, seconds.
    #[arg(long, default_value_t = 0.0)]
    delay: f64,
    /// Odometry heading drift, rad/s.
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    /// Age of the telemetry sent to clients, seconds.
    #[arg(long, default_value_t = 0.0)]
    feedback_delay: f64,
    /// Seeds the start phases of moving obstacles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    Manual,
    Bsc,
}

/// Error carrying a specific process exit code.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Exit {
    fn from(e: E) -> Self {
        Exit(1, e.into())
    }
}

fn print_report(report: &Report) {
    println!(
        "{:<12} {:<20} {:<22} {:>3} {:>4} {:>4} {:>10} {:>10} {:<13}",
        "scenario", "metric", "condition", "n", "done", "coll", "median", "p", "method"
    );
    for r in &report.rows {
        println!(
            "{:<12} {:<20} {:<22} {:>3} {:>4} {:>4} {:>10} {:>10} {:<13} {}",
            r.scenario,
            r.metric,
            r.condition,
            r.n,
            r.completed,
            r.collisions,
            r.median.map_or("-".into(), |m| format!("{m:.3}")),
            r.p_vs_baseline.map_or("-".into(), |p| format!("{p:.4e}")),
            r.method.as_deref().unwrap_or("-"),
            r.note
        );
    }
}

fn cmd_run(plan_path: &Path, parallel: Option<usize>, out: Option<PathBuf>) -> Result<(), Exit> {
    let plan = ExperimentPlan::from_file(plan_path).map_err(|e| {
        Exit(
            EXIT_PLAN,
            anyhow::Error::new(e).context(format!("loading {}", plan_path.display())),
        )
    })?;
    let out = out
        .or_else(|| plan.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&plan.name));
    let started = std::time::Instant::now();
    let (batch, report) =
        run_experiment(&plan, parallel, &out).context("writing experiment output")?;
    print_report(&report);
    println!(
        "{} runs, {} failed cells, {:.1} s -> {}",
        batch.records.len(),
        batch.failures.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    for f in &batch.failures {
        log::error!(
            "{}/{}/seed {}: {}",
            f.scenario,
            f.condition,
            f.seed,
            f.error
        );
    }
    Ok(())
}

fn cmd_replay(log: &Path) -> Result<(), Exit> {
    let reports = replay_file(log).map_err(|e| Exit(EXIT_INTEGRITY, e.into()))?;
    let mut bad = 0;
    for r in &reports {
        match r.first_divergent_tick() {
            None => println!(
                "ok       {}/{}/seed {} ({} ticks)",
                r.scenario, r.condition, r.seed, r.ticks_checked
            ),
            Some(t) => {
                bad += 1;
                let m = &r.mismatches[0];
                println!(
                    "MISMATCH {}/{}/seed {}: first divergent tick {t} ({} logged {} replayed {}), {} mismatches",
                    r.scenario,
                    r.condition,
                    r.seed,
                    m.field,
                    m.logged,
                    m.replayed,
                    r.mismatches.len()
                );
            }
        }
    }
    println!("{} runs replayed, {bad} with mismatches", reports.len());
    if bad > 0 {
        return Err(Exit(
            EXIT_INTEGRITY,
            anyhow::anyhow!("replay integrity failure in {bad} run(s)"),
        ));
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), Exit> {
    let scenario = load_scenario_file(&args.scenario).map_err(|e| {
        Exit(
            EXIT_PLAN,
            anyhow::Error::new(e).context(format!("loading {}", args.scenario.display())),
        )
    })?;
    let sim = SimConfig {
        mode: match args.mode {
            Mode::Manual => ControlMode::Manual,
            Mode::Bsc => ControlMode::Bsc,
        },
        delay: args.delay,
        drift: args.drift,
        feedback_delay: args.feedback_delay,
        ..SimConfig::default()
    };
    let mut config = BridgeConfig::new(scenario, sim);
    config.seed = args.seed;
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async {
        let bridge = Bridge::start(config, (args.host.as_str(), args.port))
            .await
            .map_err(|e| match e {
                BridgeError::Config(_) | BridgeError::Delay(_) => Exit(EXIT_PLAN, e.into()),
                other => Exit(1, other.into()),
            })?;
        println!("serving ws://{}/ws (ctrl-c to stop)", bridge.local_addr());
        tokio::signal::ctrl_c()
            .await
            .context("waiting for ctrl-c")?;
        let dropped = bridge.dropped_frames();
        let report = bridge.shutdown().await;
        println!(
            "stopped after {} ticks, status {:?}, {dropped} frames dropped for slow clients",
            report.log.len(),
            report.status
        );
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            plan,
            parallel,
            out,
        } => cmd_run(&plan, parallel, out),
        Command::Analyze { logs } => analyze(&logs).map(|r| print_report(&r)).map_err(Exit::from),
        Command::Replay { log } => cmd_replay(&log),
        Command::Serve(args) => cmd_serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
