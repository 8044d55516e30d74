//! Turning client commands into operator twists.

use thiserror::Error;

use blendnav_core::kinematics::KinematicLimits;
use blendnav_core::Twist2D;

use crate::wire::ClientCommand;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IngestError {
    #[error("command seq {seq} does not follow {last}")]
    StaleSeq { seq: u64, last: u64 },
    #[error("command contains a non-finite value")]
    NonFinite,
}

/// Per-session sequence check and scaling of normalized commands.
#[derive(Debug, Clone)]
pub struct CommandIngest {
    v_max: f64,
    omega_max: f64,
    last_seq: Option<u64>,
    accepted: u64,
}

impl CommandIngest {
    pub fn new(limits: &KinematicLimits) -> Self {
        Self {
            v_max: limits.v_max,
            omega_max: limits.omega_max,
            last_seq: None,
            accepted: 0,
        }
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Clamps both norms to `[-1, 1]` and scales them by the velocity limits.
    /// A seq that is not strictly greater than the last accepted one is stale.
    pub fn ingest(&mut self, cmd: &ClientCommand) -> Result<Twist2D, IngestError> {
        if let Some(last) = self.last_seq {
            if cmd.seq <= last {
                return Err(IngestError::StaleSeq { seq: cmd.seq, last });
            }
        }
        if !(cmd.vx_norm.is_finite() && cmd.omega_norm.is_finite()) {
            return Err(IngestError::NonFinite);
        }
        self.last_seq = Some(cmd.seq);
        self.accepted += 1;
        Ok(Twist2D::new(
            cmd.vx_norm.clamp(-1.0, 1.0) * self.v_max,
            cmd.omega_norm.clamp(-1.0, 1.0) * self.omega_max,
        ))
    }
}
