//! Live teleoperation over a web socket.
//!
//! A single `/ws` endpoint carries JSON messages both ways: the operator
//! sends `cmd` messages, every client receives `config` on connect, `state`
//! at 10 Hz, `costmap` at 2 Hz and `run_event` as they happen. The
//! simulation advances at 50 Hz of wall-clock time on its own thread.

pub mod ingest;
pub mod server;
pub mod wire;

pub use ingest::{CommandIngest, IngestError};
pub use server::{Bridge, BridgeConfig, BridgeError, Receipt, SimReport};
pub use wire::{ClientCommand, ClientMessage, ServerMessage};
