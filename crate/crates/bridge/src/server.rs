//! The live server: a simulation thread paced by the wall clock and the `/ws`
//! endpoint. The two sides only talk through a command mailbox (network to
//! simulation) and a broadcast queue of serialized frames (simulation to
//! network), so a slow client can never hold up a tick.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::sync::{broadcast, watch};

use blendnav_core::blend::command_difference;
use blendnav_core::error::DelayError;
use blendnav_core::geometry::distance_to_goal;
use blendnav_core::kinematics::{KinematicLimits, TICK_DT};
use blendnav_core::metrics::{ControlMode, RunStatus, TickRecord};
use blendnav_core::sim::{SimConfig, Simulation, TickOutput};
use blendnav_core::world::Scenario;
use blendnav_core::Twist2D;

use crate::ingest::CommandIngest;
use crate::wire::{
    ClientMessage, ConfigFrame, CostmapFrame, RunEventFrame, ServerMessage, StateFrame, WirePoint,
};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid bridge configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub scenario: Scenario,
    /// Mode, delay, drift and `feedback_delay` (applied to outgoing telemetry)
    /// are taken from here.
    pub sim: SimConfig,
    /// Seeds the start phases of moving obstacles.
    pub seed: u64,
    pub state_rate: f64,
    pub costmap_rate: f64,
    /// Frames queued per client before the oldest are dropped.
    pub client_buffer: usize,
}

impl BridgeConfig {
    pub fn new(scenario: Scenario, sim: SimConfig) -> Self {
        Self {
            scenario,
            sim,
            seed: 0,
            state_rate: 10.0,
            costmap_rate: 2.0,
            client_buffer: 32,
        }
    }

    /// Ticks between frames for a rate in Hz.
    fn every(rate: f64) -> Result<u64, BridgeError> {
        let n = (1.0 / (rate * TICK_DT)).round();
        if !(n >= 1.0 && n.is_finite()) {
            return Err(BridgeError::Config(format!(
                "frame rate {rate} Hz must lie in (0, {}] Hz",
                1.0 / TICK_DT
            )));
        }
        Ok(n as u64)
    }
}

/// An operator command as the simulation received it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receipt {
    /// `None` for the zero command substituted when the operator disconnects.
    pub seq: Option<u64>,
    /// Receipt time on the simulation clock, seconds.
    pub stamp: f64,
    pub cmd: Twist2D,
}

/// What the simulation thread hands back on shutdown.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub log: Vec<TickRecord>,
    pub receipts: Vec<Receipt>,
    /// Wall-clock start of every loop iteration, relative to the sim epoch.
    pub tick_starts: Vec<Duration>,
    pub status: RunStatus,
}

impl SimReport {
    /// Largest deviation of a tick interval from the nominal period.
    pub fn max_jitter(&self) -> Duration {
        let period = Duration::from_secs_f64(TICK_DT);
        self.tick_starts
            .windows(2)
            .map(|w| (w[1] - w[0]).abs_diff(period))
            .max()
            .unwrap_or_default()
    }
}

enum SimInput {
    Command {
        seq: u64,
        cmd: Twist2D,
        received: Instant,
    },
    Mode(ControlMode),
    Release {
        received: Instant,
    },
}

struct Shared {
    mailbox: mpsc::Sender<SimInput>,
    frames: broadcast::Sender<Utf8Bytes>,
    config: watch::Receiver<Utf8Bytes>,
    shutdown: watch::Receiver<bool>,
    operator_taken: AtomicBool,
    limits: KinematicLimits,
    dropped: AtomicU64,
}

/// A running server. Dropping it without [`Bridge::shutdown`] leaves the
/// simulation thread running until the process exits.
pub struct Bridge {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    shutdown_tx: watch::Sender<bool>,
    sim: thread::JoinHandle<SimReport>,
    server: tokio::task::JoinHandle<()>,
}

impl Bridge {
    /// Binds `addr`, starts the simulation clock and begins accepting
    /// connections on `/ws`. Must be called inside a Tokio runtime.
    pub async fn start(
        config: BridgeConfig,
        addr: impl ToSocketAddrs,
    ) -> Result<Self, BridgeError> {
        config.sim.validate().map_err(BridgeError::Config)?;
        let pacing = Pacing {
            state_every: BridgeConfig::every(config.state_rate)?,
            costmap_every: BridgeConfig::every(config.costmap_rate)?,
            feedback_delay: config.sim.feedback_delay,
        };
        let limits = config.sim.limits;
        let sim = Simulation::live(config.scenario, config.sim, config.seed)?;
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;

        let (mailbox, inputs) = mpsc::channel();
        let (frames, _) = broadcast::channel(config.client_buffer.max(1));
        let (config_tx, config_rx) = watch::channel(config_json(&sim));
        let (shutdown_tx, shutdown_rx) = watch::channel(false);
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            mailbox,
            frames: frames.clone(),
            config: config_rx,
            shutdown: shutdown_rx,
            operator_taken: AtomicBool::new(false),
            limits,
            dropped: AtomicU64::new(0),
        });

        let sim = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("blendnav-sim".into())
                .spawn(move || sim_loop(sim, pacing, inputs, frames, config_tx, stop))?
        };
        let app = Router::new()
            .route("/ws", get(ws_handler))
            .with_state(shared.clone());
        let server = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                log::error!("server stopped: {e}");
            }
        });
        log::info!("listening on ws://{addr}/ws");
        Ok(Self {
            addr,
            shared,
            stop,
            shutdown_tx,
            sim,
            server,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Frames skipped so far because a client fell behind.
    pub fn dropped_frames(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    /// Stops the clock, closes every session and returns the run record.
    pub async fn shutdown(self) -> SimReport {
        self.stop.store(true, Ordering::Release);
        let _ = self.shutdown_tx.send(true);
        self.server.abort();
        let sim = self.sim;
        tokio::task::spawn_blocking(move || sim.join().expect("simulation thread panicked"))
            .await
            .expect("join task")
    }
}

#[derive(Debug, Clone, Copy)]
struct Pacing {
    state_every: u64,
    costmap_every: u64,
    feedback_delay: f64,
}

fn config_json(sim: &Simulation) -> Utf8Bytes {
    let c = sim.config();
    ServerMessage::Config(ConfigFrame {
        v_max: c.limits.v_max,
        omega_max: c.limits.omega_max,
        mode: c.mode,
        delay: c.delay,
        drift: c.drift,
    })
    .to_json()
    .into()
}

fn state_frame(sim: &Simulation, out: &TickOutput) -> StateFrame {
    let r = &out.record;
    let goal = sim.world().scenario().goal;
    let (alpha, d, delta, blended) = match &out.blend {
        Some(b) => (b.alpha, b.d, b.delta, b.blended_cmd),
        // manual control: the operator holds full authority
        None => (
            1.0,
            distance_to_goal(&r.odom_pose, &goal),
            command_difference(&r.user_cmd, &r.agent_cmd, sim.config().delta_mode),
            r.user_cmd,
        ),
    };
    StateFrame {
        tick: r.tick,
        sim_time: r.t,
        pose: r.odom_pose.into(),
        goal: WirePoint {
            x: goal.x,
            y: goal.y,
        },
        alpha,
        d,
        delta,
        user_cmd: r.user_cmd.into(),
        agent_cmd: r.agent_cmd.into(),
        blended_cmd: blended.into(),
        status: sim.status(),
    }
}

/// Sleeps until shortly before `deadline`, then yields until it passes.
/// Asks the OS to run the calling thread ahead of the network threads.
/// Real-time scheduling needs privileges; a lower nice value is the
/// fallback. Failing both only costs timing precision.
#[cfg(target_os = "linux")]
fn raise_priority() {
    // SAFETY: plain syscalls on the calling thread with valid arguments
    unsafe {
        let param = libc::sched_param { sched_priority: 10 };
        if libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) == 0 {
            return;
        }
        let tid = libc::gettid() as libc::id_t;
        if libc::setpriority(libc::PRIO_PROCESS, tid, -10) != 0 {
            log::warn!("could not raise simulation thread priority; tick timing may jitter");
        }
    }
}

#[cfg(not(target_os = "linux"))]
fn raise_priority() {}

fn wait_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(400);
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN {
            thread::sleep(left - SPIN);
        } else {
            thread::yield_now();
        }
    }
}

fn sim_loop(
    mut sim: Simulation,
    pacing: Pacing,
    inputs: mpsc::Receiver<SimInput>,
    frames: broadcast::Sender<Utf8Bytes>,
    config_tx: watch::Sender<Utf8Bytes>,
    stop: Arc<AtomicBool>,
) -> SimReport {
    raise_priority();
    let period = Duration::from_secs_f64(TICK_DT);
    let epoch = Instant::now();
    let mut receipts = Vec::new();
    let mut tick_starts = Vec::new();
    // frames waiting out the feedback delay: (release time, payload)
    let mut pending: VecDeque<(f64, Utf8Bytes)> = VecDeque::new();
    let mut last_state: Option<Utf8Bytes> = None;
    let mut last_stamp = 0.0f64;
    let mut k: u32 = 0;
    loop {
        wait_until(epoch + period * k);
        if stop.load(Ordering::Acquire) {
            break;
        }
        tick_starts.push(epoch.elapsed());
        let now = f64::from(k) * TICK_DT;

        while let Ok(input) = inputs.try_recv() {
            let (seq, cmd, received) = match input {
                SimInput::Mode(mode) => {
                    if sim.config().mode != mode {
                        sim.set_mode(mode);
                        config_tx.send_replace(config_json(&sim));
                    }
                    continue;
                }
                SimInput::Command { seq, cmd, received } => (Some(seq), cmd, received),
                SimInput::Release { received } => (None, Twist2D::ZERO, received),
            };
            let stamp = received
                .saturating_duration_since(epoch)
                .as_secs_f64()
                .max(last_stamp);
            last_stamp = stamp;
            sim.push_user_command(cmd, stamp)
                .expect("receipt stamps are monotonic");
            receipts.push(Receipt { seq, stamp, cmd });
        }

        let release = now + pacing.feedback_delay;
        let mut queue = |msg: ServerMessage| {
            let text: Utf8Bytes = msg.to_json().into();
            pending.push_back((release, text.clone()));
            text
        };
        if let Some(out) = sim.run_tick() {
            for kind in &out.events {
                queue(ServerMessage::RunEvent(RunEventFrame {
                    kind: *kind,
                    sim_time: out.record.t,
                }));
            }
            let tick = out.record.tick;
            if tick % pacing.state_every == 0 || sim.status() != RunStatus::Running {
                last_state = Some(queue(ServerMessage::State(state_frame(&sim, &out))));
            }
            if tick % pacing.costmap_every == 0 {
                queue(ServerMessage::Costmap(CostmapFrame::from_grid(
                    sim.costmap().grid(),
                )));
            }
        } else if u64::from(k) % pacing.state_every == 0 {
            // the run is over; keep the final state on screen
            if let Some(s) = &last_state {
                pending.push_back((release, s.clone()));
            }
        }
        while pending.front().is_some_and(|(t, _)| *t <= now + 1e-9) {
            let (_, text) = pending.pop_front().expect("front checked");
            // no receivers is fine
            let _ = frames.send(text);
        }
        k += 1;
    }
    SimReport {
        log: sim.log().to_vec(),
        receipts,
        tick_starts,
        status: sim.status(),
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, shared))
}

fn handle_text(text: &str, ingest: &mut CommandIngest, shared: &Shared) {
    let received = Instant::now();
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("dropping malformed message: {e}");
            return;
        }
    };
    let ClientMessage::Cmd(c) = msg;
    match ingest.ingest(&c) {
        Ok(cmd) => {
            if let Some(mode) = c.mode_request {
                let _ = shared.mailbox.send(SimInput::Mode(mode));
            }
            let _ = shared.mailbox.send(SimInput::Command {
                seq: c.seq,
                cmd,
                received,
            });
        }
        Err(e) => log::warn!("dropping command: {e}"),
    }
}

/// One connection. The first client to connect while nobody is driving
/// becomes the operator; everyone else only watches.
async fn session(socket: WebSocket, shared: Arc<Shared>) {
    let operator = shared
        .operator_taken
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_ok();
    log::info!(
        "client connected as {}",
        if operator { "operator" } else { "spectator" }
    );
    let (mut sink, mut stream) = socket.split();
    let mut frames = shared.frames.subscribe();
    let mut config = shared.config.clone();
    let mut shutdown = shared.shutdown.clone();
    let mut ingest = CommandIngest::new(&shared.limits);
    let first = config.borrow_and_update().clone();
    let mut open = sink.send(Message::Text(first)).await.is_ok();
    while open {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => open = sink.send(Message::Text(text)).await.is_ok(),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    shared.dropped.fetch_add(n, Ordering::Relaxed);
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            changed = config.changed() => {
                if changed.is_err() {
                    break;
                }
                let text = config.borrow_and_update().clone();
                open = sink.send(Message::Text(text)).await.is_ok();
            }
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) if operator => handle_text(&text, &mut ingest, &shared),
                Some(Ok(Message::Text(_))) => log::debug!("ignoring input from a spectator"),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            _ = shutdown.changed() => break,
        }
    }
    if operator {
        // fail-safe: nobody is driving any more
        let _ = shared.mailbox.send(SimInput::Release {
            received: Instant::now(),
        });
        shared.operator_taken.store(false, Ordering::Release);
        log::info!("operator disconnected");
    }
}
