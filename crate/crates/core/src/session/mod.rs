//! Client and server session state machines.
//!
//! A session is a strict alternation of packages. The client opens with package 1
//! (Alert 1200, credentials and its DevInfo). Each server package answers the previous
//! client package and may carry management commands; the client answers those with
//! Status and Results. The session ends once the server sends a package with nothing
//! left to answer.

mod client;
mod server;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode, CodecError, DmHeader, Violation, PROTO_VERSION};
use crate::device::{Device, DeviceError};

pub use client::{ClientSession, ClientStep};
pub use server::{Batch, CommandReport, DeviceSecret, ServerSession, ServerStep};
pub use transcript::{CloseRecord, Direction, Transcript, TranscriptEntry, TranscriptError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Aborted { reason: String },
}

impl Outcome {
    pub fn aborted(reason: impl Into<String>) -> Self {
        Outcome::Aborted { reason: reason.into() }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Setup,
    Management,
    Closed(Outcome),
}

impl SessionPhase {
    pub fn label(&self) -> &'static str {
        match self {
            SessionPhase::Setup => "setup",
            SessionPhase::Management => "management",
            SessionPhase::Closed(_) => "closed",
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, SessionPhase::Closed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("package belongs to session {found:?}, expected {expected:?}")]
    SessionMismatch { expected: String, found: String },
    #[error("expected msg_id {expected}, got {found}")]
    OutOfOrderMessage { expected: u32, found: u32 },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("undecodable package: {0}")]
    ParseFailure(#[from] CodecError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

impl SessionError {
    fn violations(vs: &[Violation]) -> Self {
        let names: Vec<String> = vs.iter().map(|v| format!("{v:?}")).collect();
        SessionError::ProtocolViolation(names.join(", "))
    }
}

pub(crate) fn header(session_id: &str, msg_id: u32, source: &str, target: &str) -> DmHeader {
    DmHeader {
        proto_version: PROTO_VERSION.to_string(),
        session_id: session_id.to_string(),
        msg_id,
        source: source.to_string(),
        target: target.to_string(),
        credentials: None,
    }
}

/// Checks session id and msg_id ordering of an incoming package.
pub(crate) fn check_incoming(
    phase: &SessionPhase,
    session_id: &str,
    expected_msg: u32,
    h: &DmHeader,
) -> Result<(), SessionError> {
    if phase.is_closed() || h.session_id != session_id {
        return Err(SessionError::SessionMismatch {
            expected: if phase.is_closed() {
                String::new()
            } else {
                session_id.to_string()
            },
            found: h.session_id.clone(),
        });
    }
    if h.msg_id != expected_msg {
        return Err(SessionError::OutOfOrderMessage {
            expected: expected_msg,
            found: h.msg_id,
        });
    }
    Ok(())
}

/// Transcript phase of a package: each side's first package belongs to setup.
pub fn package_phase(msg_id: u32) -> &'static str {
    if msg_id == 1 {
        "setup"
    } else {
        "management"
    }
}

/// Runs a whole session in-process, passing encoded packages directly between the two
/// state machines. Returns the transcript; the server session is left closed.
pub fn run_in_process(server: &mut ServerSession, device: &mut Device) -> Result<Transcript, SessionError> {
    let mut t = Transcript::default();
    let result = drive(server, device, &mut t);
    let outcome = match (&result, server.phase()) {
        (_, SessionPhase::Closed(o)) => o.clone(),
        (Err(e), _) => Outcome::aborted(e.to_string()),
        (Ok(()), _) => Outcome::Ok,
    };
    t.close(outcome);
    result.map(|()| t)
}

fn drive(server: &mut ServerSession, device: &mut Device, t: &mut Transcript) -> Result<(), SessionError> {
    let (mut client, first) = ClientSession::open(device)?;
    let mut bytes = encode(&first)?;
    t.push(Direction::ClientToServer, package_phase(1), 1, &bytes);
    loop {
        let pkg = match server.on_bytes(&bytes)? {
            ServerStep::Reply(pkg) => pkg,
            ServerStep::Close { package: None, .. } => return Ok(()),
            ServerStep::Close { package: Some(pkg), .. } => {
                let out = encode(&pkg)?;
                t.push(
                    Direction::ServerToClient,
                    package_phase(pkg.header.msg_id),
                    pkg.header.msg_id,
                    &out,
                );
                client.on_bytes(device, &out)?;
                return Ok(());
            }
        };
        bytes = encode(&pkg)?;
        t.push(
            Direction::ServerToClient,
            package_phase(pkg.header.msg_id),
            pkg.header.msg_id,
            &bytes,
        );
        match client.on_bytes(device, &bytes)? {
            ClientStep::Reply(reply) => {
                bytes = encode(&reply)?;
                t.push(
                    Direction::ClientToServer,
                    package_phase(reply.header.msg_id),
                    reply.header.msg_id,
                    &bytes,
                );
            }
            ClientStep::Done(_) => return Ok(()),
        }
    }
}

#[cfg(test)]
mod tests;
