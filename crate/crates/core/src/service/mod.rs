//! Live sessions for an interactive client: frames and FSM state out,
//! target clicks, mode switches and teleop keys in.

use thiserror::Error;

use crate::harness::HarnessError;

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{
    ClientCommand, ClientEnvelope, ControlMode, Hello, KeyDirection, MessageKind, Payload, ServerMessage, HEADER_LEN, MAGIC,
};
pub use server::{Pacing, Server, ServerConfig, ServerHandle};
pub use session::{ClientQueue, FrameSeqs, Session};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error("session limit of {0} reached")]
    SessionLimitReached(usize),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
