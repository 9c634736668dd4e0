use super::{check_incoming, header, Outcome, SessionError, SessionPhase};
use crate::codec::{decode, validate_reply_shape, CommandName, DmCommand, DmMessage};
use crate::device::Device;
use crate::status::{StatusCode, ALERT_CLIENT_INITIATED};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientStep {
    Reply(DmMessage),
    Done(Outcome),
}

/// Device side of a session.
#[derive(Debug, Clone)]
pub struct ClientSession {
    phase: SessionPhase,
    session_id: String,
    device_id: String,
    server_id: String,
    next_msg_id: u32,
    expected_server_msg: u32,
    last_sent: DmMessage,
}

impl ClientSession {
    /// Starts a session on `device` and builds package 1.
    pub fn open(device: &mut Device) -> Result<(ClientSession, DmMessage), SessionError> {
        let items = device.devinfo_items()?;
        let server_id = device.server_id()?;
        let session_id = device.begin_session();
        let device_id = device.device_id().to_string();
        let mut h = header(&session_id, 1, &device_id, &server_id);
        h.credentials = Some(device.credentials(&session_id)?);
        let pkg = DmMessage {
            header: h,
            body: vec![
                DmCommand::Alert {
                    cmd_id: 1,
                    code: ALERT_CLIENT_INITIATED,
                },
                DmCommand::Replace { cmd_id: 2, items },
                DmCommand::Final,
            ],
        };
        let sess = ClientSession {
            phase: SessionPhase::Setup,
            session_id,
            device_id,
            server_id,
            next_msg_id: 2,
            expected_server_msg: 1,
            last_sent: pkg.clone(),
        };
        Ok((sess, pkg))
    }

    pub fn phase(&self) -> &SessionPhase {
        &self.phase
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Marks the session aborted, e.g. when the link fails.
    pub fn abort(&mut self, reason: impl Into<String>) {
        if !self.phase.is_closed() {
            self.phase = SessionPhase::Closed(Outcome::aborted(reason));
        }
    }

    fn fail(&mut self, e: SessionError) -> SessionError {
        self.abort(e.to_string());
        e
    }

    pub fn on_bytes(&mut self, device: &mut Device, bytes: &[u8]) -> Result<ClientStep, SessionError> {
        match decode(bytes) {
            Ok(pkg) => self.on_package(device, &pkg),
            Err(e) => Err(self.fail(SessionError::ParseFailure(e))),
        }
    }

    /// Handles one server package, executing its commands in body order.
    pub fn on_package(&mut self, device: &mut Device, pkg: &DmMessage) -> Result<ClientStep, SessionError> {
        check_incoming(&self.phase, &self.session_id, self.expected_server_msg, &pkg.header)
            .map_err(|e| self.fail(e))?;
        if pkg.header.source != self.server_id {
            return Err(self.fail(SessionError::ProtocolViolation(format!(
                "package from {:?}, session is with {:?}",
                pkg.header.source, self.server_id
            ))));
        }
        if !pkg.has_final() {
            return Err(self.fail(SessionError::ProtocolViolation("package lacks Final".into())));
        }
        let violations = validate_reply_shape(&self.last_sent, pkg);
        if !violations.is_empty() {
            return Err(self.fail(SessionError::violations(&violations)));
        }
        self.expected_server_msg += 1;

        if self.phase == SessionPhase::Setup {
            let alert_code = pkg.body.iter().find_map(|c| match c {
                DmCommand::Status {
                    cmd: CommandName::Alert,
                    code,
                    ..
                } => Some(*code),
                _ => None,
            });
            match alert_code {
                Some(StatusCode::Ok) => self.phase = SessionPhase::Management,
                other => {
                    let reason = match other {
                        Some(code) => format!("server refused session with status {}", code.code()),
                        None => "server did not answer the session alert".to_string(),
                    };
                    self.phase = SessionPhase::Closed(Outcome::aborted(reason.clone()));
                    return Ok(ClientStep::Done(Outcome::aborted(reason)));
                }
            }
        }

        let msg_ref = pkg.header.msg_id;
        let mut body = Vec::new();
        let mut next_id = 1;
        for cmd in pkg.body.iter().filter(|c| c.needs_status()) {
            let out = device.execute(cmd, &self.server_id);
            body.push(DmCommand::Status {
                cmd_id: next_id,
                msg_ref,
                cmd_ref: cmd.cmd_id().expect("needs status"),
                cmd: cmd.name().expect("needs status"),
                code: out.code,
            });
            next_id += 1;
            if let Some(items) = out.results {
                body.push(DmCommand::Results {
                    cmd_id: next_id,
                    msg_ref,
                    cmd_ref: cmd.cmd_id().expect("needs status"),
                    items,
                });
                next_id += 1;
            }
        }
        if body.is_empty() {
            self.phase = SessionPhase::Closed(Outcome::Ok);
            return Ok(ClientStep::Done(Outcome::Ok));
        }
        body.push(DmCommand::Final);
        let reply = DmMessage {
            header: header(&self.session_id, self.next_msg_id, &self.device_id, &self.server_id),
            body,
        };
        self.next_msg_id += 1;
        self.last_sent = reply.clone();
        Ok(ClientStep::Reply(reply))
    }
}
