//! JSON messages exchanged over `/ws`. Every message carries a `type` tag;
//! field names are part of the protocol and must not change.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use blendnav_core::grid::OccupancyGrid;
use blendnav_core::metrics::{ControlMode, RunStatus};
use blendnav_core::sim::RunEventKind;
use blendnav_core::{Pose2D, Twist2D};

/// Messages a client may send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Cmd(ClientCommand),
}

/// Operator input. Norms are fractions of the velocity limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientCommand {
    pub seq: u64,
    /// Client clock, milliseconds. Informational only; the server stamps on receipt.
    pub stamp: f64,
    pub vx_norm: f64,
    pub omega_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_request: Option<ControlMode>,
}

/// Messages the server sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    Costmap(CostmapFrame),
    Config(ConfigFrame),
    RunEvent(RunEventFrame),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl From<Pose2D> for WirePose {
    fn from(p: Pose2D) -> Self {
        Self {
            x: p.x,
            y: p.y,
            theta: p.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireTwist {
    pub vx: f64,
    pub omega: f64,
}

impl From<Twist2D> for WireTwist {
    fn from(t: Twist2D) -> Self {
        Self {
            vx: t.vx,
            omega: t.omega,
        }
    }
}

/// Snapshot of one control tick. `pose` is the odometry pose the controllers
/// saw; in manual mode `alpha` is 1 and the blended command is the operator's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub sim_time: f64,
    pub pose: WirePose,
    pub goal: WirePoint,
    pub alpha: f64,
    pub d: f64,
    pub delta: f64,
    pub user_cmd: WireTwist,
    pub agent_cmd: WireTwist,
    pub blended_cmd: WireTwist,
    pub status: RunStatus,
}

/// Row-major cost bytes of the rolling costmap, base64 encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostmapFrame {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: WirePose,
    pub data_b64: String,
}

impl CostmapFrame {
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution: grid.resolution(),
            origin: grid.origin().into(),
            data_b64: STANDARD.encode(grid.costs()),
        }
    }

    pub fn decode(&self) -> Result<Vec<u8>, base64::DecodeError> {
        STANDARD.decode(&self.data_b64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigFrame {
    pub v_max: f64,
    pub omega_max: f64,
    pub mode: ControlMode,
    pub delay: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunEventFrame {
    pub kind: RunEventKind,
    pub sim_time: f64,
}
