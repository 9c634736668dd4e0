//! Drives the client and server session state machines over a link.

use scm_forge_core::codec::encode;
use scm_forge_core::device::Device;
use scm_forge_core::session::{
    package_phase, ClientSession, ClientStep, Direction, Outcome, ServerSession, ServerStep, SessionPhase, Transcript,
};
use tracing::debug;

use crate::link::{link_pair, FaultPlan, LinkConfig, TransportError, TransportLink, WireLog};
use crate::tcp::loopback_pair;

/// Runs the device side of one session to completion.
pub async fn run_client(device: &mut Device, link: &mut TransportLink) -> Outcome {
    let (mut client, first) = match ClientSession::open(device) {
        Ok(opened) => opened,
        Err(e) => {
            link.close().await;
            return Outcome::aborted(e.to_string());
        }
    };
    let mut out = match encode(&first) {
        Ok(bytes) => bytes,
        Err(e) => {
            link.close().await;
            return Outcome::aborted(e.to_string());
        }
    };
    loop {
        if let Err(e) = link.send(&out).await {
            client.abort(e.to_string());
            break;
        }
        let bytes = match link.recv().await {
            Ok(bytes) => bytes,
            Err(e) => {
                client.abort(e.to_string());
                break;
            }
        };
        match client.on_bytes(device, &bytes) {
            Ok(ClientStep::Reply(pkg)) => match encode(&pkg) {
                Ok(bytes) => out = bytes,
                Err(e) => {
                    client.abort(e.to_string());
                    break;
                }
            },
            Ok(ClientStep::Done(_)) => break,
            Err(e) => {
                debug!(session = client.session_id(), error = %e, "client aborted");
                break;
            }
        }
    }
    link.close().await;
    match client.phase() {
        SessionPhase::Closed(o) => o.clone(),
        _ => Outcome::aborted("session ended early"),
    }
}

/// Runs the server side of one session and returns what the server saw and sent.
///
/// Client packages are recorded with the msg_id they were due to carry, so damaged
/// packages keep their place in the transcript.
pub async fn run_server(server: &mut ServerSession, link: &mut TransportLink) -> Transcript {
    let mut t = Transcript::default();
    let mut client_msg = 0u32;
    loop {
        let bytes = match link.recv().await {
            Ok(bytes) => bytes,
            Err(e) => {
                server.abort(e.to_string());
                break;
            }
        };
        client_msg += 1;
        t.push(Direction::ClientToServer, package_phase(client_msg), client_msg, &bytes);
        let (pkg, done) = match server.on_bytes(&bytes) {
            Ok(ServerStep::Reply(pkg)) => (Some(pkg), false),
            Ok(ServerStep::Close { package, .. }) => (package, true),
            Err(e) => {
                debug!(error = %e, "server aborted");
                break;
            }
        };
        if let Some(pkg) = pkg {
            let msg_id = pkg.header.msg_id;
            let out = match encode(&pkg) {
                Ok(out) => out,
                Err(e) => {
                    server.abort(e.to_string());
                    break;
                }
            };
            t.push(Direction::ServerToClient, package_phase(msg_id), msg_id, &out);
            if let Err(e) = link.send(&out).await {
                server.abort(e.to_string());
                break;
            }
        }
        if done {
            break;
        }
    }
    link.close().await;
    let outcome = match server.phase() {
        SessionPhase::Closed(o) => o.clone(),
        _ => Outcome::aborted("session ended early"),
    };
    t.close(outcome);
    t
}

/// Both sides of one session.
#[derive(Debug, Clone)]
pub struct SessionRun {
    /// Packages as the server received and sent them, closed with the server's outcome.
    pub transcript: Transcript,
    pub client: Outcome,
    pub server: Outcome,
}

impl SessionRun {
    /// Ok only when both sides finished cleanly.
    pub fn outcome(&self) -> &Outcome {
        if !self.server.is_ok() {
            &self.server
        } else {
            &self.client
        }
    }
}

/// One session over an in-memory pair with `plan` applied.
pub async fn run_session(
    server: &mut ServerSession,
    device: &mut Device,
    plan: FaultPlan,
    config: LinkConfig,
) -> (SessionRun, WireLog) {
    let (mut device_end, mut server_end, log) = link_pair(plan, config);
    let (client, transcript) = tokio::join!(run_client(device, &mut device_end), run_server(server, &mut server_end));
    let server_outcome = transcript
        .outcome()
        .cloned()
        .unwrap_or(Outcome::aborted("no close record"));
    (
        SessionRun {
            transcript,
            client,
            server: server_outcome,
        },
        log,
    )
}

/// One session over a fresh loopback TCP connection.
pub async fn run_session_tcp(
    server: &mut ServerSession,
    device: &mut Device,
    config: LinkConfig,
) -> Result<SessionRun, TransportError> {
    let (mut device_end, mut server_end) = loopback_pair(config).await?;
    server_end.set_config(config.server_side());
    let (client, transcript) = tokio::join!(run_client(device, &mut device_end), run_server(server, &mut server_end));
    let server_outcome = transcript
        .outcome()
        .cloned()
        .unwrap_or(Outcome::aborted("no close record"));
    Ok(SessionRun {
        transcript,
        client,
        server: server_outcome,
    })
}
