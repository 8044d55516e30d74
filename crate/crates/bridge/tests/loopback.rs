mod common;

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blendnav_bridge::wire::{ServerMessage, StateFrame};
use blendnav_bridge::{Receipt, SimReport};
use blendnav_core::kinematics::TICK_DT;
use blendnav_core::metrics::RunStatus;
use blendnav_core::operator::{Operator, OperatorConfig, ScriptedOperator};
use blendnav_core::sim::{RunEventKind, SimConfig};
use blendnav_core::{Pose2D, Twist2D};

use common::{doorway, start, Client};

/// The operator command each tick must have seen: the newest receipt whose
/// stamp plus delay has passed, or zero before anything matured.
fn check_delivery(report: &SimReport, delay: f64) {
    let due = |r: &Receipt| r.stamp + delay;
    for t in &report.log {
        let want = report
            .receipts
            .iter()
            .rev()
            .find(|r| due(r) <= t.t + 1e-9)
            .map(|r| r.cmd)
            .unwrap_or(Twist2D::ZERO);
        assert_eq!(t.user_cmd, want, "tick {} at {:.2} s", t.tick, t.t);
    }
    // every command that is still the newest when it matures is delivered
    // at the first tick at or after its due time
    for (i, r) in report.receipts.iter().enumerate() {
        let first = report.log.iter().find(|t| t.t >= due(r) - 1e-9);
        let Some(first) = first else { continue };
        let superseded = report.receipts[i + 1..]
            .iter()
            .any(|n| due(n) <= first.t + 1e-9);
        if !superseded {
            assert_eq!(first.user_cmd, r.cmd, "receipt {i} not delivered on time");
            assert!(
                first.t - due(r) < TICK_DT,
                "receipt {i} more than a tick late"
            );
        }
    }
}

fn check_frames(report: &SimReport, frames: &[StateFrame]) {
    assert!(!frames.is_empty());
    for f in frames {
        let t = &report.log[f.tick as usize];
        assert_eq!(t.tick, f.tick);
        let alpha = t.blend.map(|b| b.alpha).unwrap_or(1.0);
        assert_eq!(
            f.alpha.to_bits(),
            alpha.to_bits(),
            "alpha at tick {}",
            f.tick
        );
        assert_eq!(f.user_cmd.vx, t.user_cmd.vx);
        assert_eq!(f.user_cmd.omega, t.user_cmd.omega);
        assert_eq!((f.pose.x, f.pose.y), (t.odom_pose.x, t.odom_pose.y));
    }
}

fn assert_no_seq_gaps(report: &SimReport, sent: u64) {
    let seqs: Vec<u64> = report.receipts.iter().filter_map(|r| r.seq).collect();
    assert_eq!(seqs, (1..=sent).collect::<Vec<_>>());
}

async fn random_pushes(delay: f64, seed: u64) {
    let sim = SimConfig {
        delay,
        ..SimConfig::default()
    };
    let bridge = start(sim, |_| {}).await;
    let mut op = Client::connect(&bridge).await;
    op.next().await;
    let mut watcher = Client::connect(&bridge).await;
    watcher.next().await;
    let frames = tokio::spawn(async move {
        watcher
            .collect_for(Duration::from_secs_f64(2.5 + delay))
            .await
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sent = 0;
    let end = tokio::time::Instant::now() + Duration::from_millis(2000);
    while tokio::time::Instant::now() < end {
        // distinct values so every delivery can be traced to its receipt
        let v = (sent + 1) as f64 / 1000.0;
        sent = op.send_cmd(v, -v).await;
        if rng.random_bool(0.3) {
            continue; // bursts inside one tick
        }
        tokio::time::sleep(Duration::from_millis(rng.random_range(1..60))).await;
    }
    let frames: Vec<StateFrame> = frames
        .await
        .unwrap()
        .into_iter()
        .filter_map(|(_, m)| match m {
            ServerMessage::State(s) => Some(s),
            _ => None,
        })
        .collect();
    let report = bridge.shutdown().await;
    assert_no_seq_gaps(&report, sent);
    check_delivery(&report, delay);
    check_frames(&report, &frames);
    let delivered = report
        .log
        .iter()
        .filter(|t| t.user_cmd != Twist2D::ZERO)
        .count();
    assert!(delivered > 0, "nothing matured within the run");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn half_second_delay_over_the_socket() {
    random_pushes(0.5, 1).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn one_second_delay_over_the_socket() {
    random_pushes(1.0, 2).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_client_drives_through_the_doorway() {
    let delay = 0.5;
    let sim = SimConfig {
        delay,
        ..SimConfig::default()
    };
    let bridge = start(sim.clone(), |c| c.seed = 3).await;
    let mut client = Client::connect(&bridge).await;
    let mut driver = ScriptedOperator::new(doorway().route, OperatorConfig::default(), 3);
    driver.set_latency(delay);
    let mut frames = Vec::new();
    let mut sent = 0;
    let mut reached = false;
    let deadline = tokio::time::Instant::now() + Duration::from_secs(45);
    while tokio::time::Instant::now() < deadline {
        match client.next().await.expect("server open") {
            ServerMessage::State(s) => {
                if s.status == RunStatus::Running {
                    let pose = Pose2D::new(s.pose.x, s.pose.y, s.pose.theta);
                    let cmd = driver.command(&pose, s.sim_time);
                    sent = client
                        .send_cmd(cmd.vx / sim.limits.v_max, cmd.omega / sim.limits.omega_max)
                        .await;
                }
                frames.push(s);
            }
            ServerMessage::RunEvent(e) if e.kind == RunEventKind::Goal => {
                reached = true;
                break;
            }
            ServerMessage::RunEvent(e) => assert_ne!(e.kind, RunEventKind::Timeout),
            _ => {}
        }
    }
    let report = bridge.shutdown().await;
    assert!(reached, "no goal event; run ended as {:?}", report.status);
    assert_eq!(report.status, RunStatus::Goal);
    assert_no_seq_gaps(&report, sent);
    check_delivery(&report, delay);
    check_frames(&report, &frames);
}
