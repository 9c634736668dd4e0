use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{check_incoming, header, Outcome, SessionError, SessionPhase};
use crate::codec::{credential_digest, decode, validate_reply_shape, DmCommand, DmItem, DmMessage};
use crate::scm::{inventory_followups, TreeReader};
use crate::status::{StatusCode, ALERT_CLIENT_INITIATED};
use crate::tree::{Format, GetResult};
use crate::uri::NodeUri;

/// A group of commands queued for one device, e.g. one compiled job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tag: u64,
    pub commands: Vec<DmCommand>,
    /// Start a new iteration instead of joining the previous batch's package.
    pub barrier: bool,
    /// The batch's Get results drive an inventory crawl; later batches wait for it.
    pub crawl: bool,
}

impl Batch {
    pub fn new(tag: u64, commands: Vec<DmCommand>) -> Self {
        Batch {
            tag,
            commands,
            barrier: false,
            crawl: false,
        }
    }

    pub fn barrier(mut self) -> Self {
        self.barrier = true;
        self
    }

    pub fn crawl(mut self) -> Self {
        self.crawl = true;
        self
    }
}

/// The answer to one command the server issued.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandReport {
    pub tag: u64,
    pub msg_id: u32,
    pub command: DmCommand,
    pub code: StatusCode,
    pub results: Vec<DmItem>,
}

/// Credentials the server expects from a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSecret {
    pub auth_name: String,
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerStep {
    Reply(DmMessage),
    /// The session is over; `package`, if any, is the last one to send.
    Close {
        package: Option<DmMessage>,
        outcome: Outcome,
    },
}

#[derive(Debug, Clone)]
struct Issued {
    tag: u64,
    crawl: bool,
    command: DmCommand,
}

/// Remote view of a device subtree assembled from Get results.
pub type CrawlMap = BTreeMap<NodeUri, GetResult>;

impl TreeReader for CrawlMap {
    fn read(&self, uri: &NodeUri) -> Option<GetResult> {
        self.get(uri).cloned()
    }
}

/// Server side of a session with one device.
#[derive(Debug, Clone)]
pub struct ServerSession {
    phase: SessionPhase,
    server_id: String,
    device_id: String,
    secret: DeviceSecret,
    session_id: Option<String>,
    next_msg_id: u32,
    expected_client_msg: u32,
    queue: VecDeque<Batch>,
    last_sent: Option<DmMessage>,
    ledger: BTreeMap<u32, Issued>,
    reports: Vec<CommandReport>,
    devinfo: BTreeMap<String, String>,
    crawls: BTreeMap<u64, CrawlMap>,
}

fn result_value(item: &DmItem) -> Option<(NodeUri, GetResult)> {
    let uri = NodeUri::parse(item.source.as_deref()?).ok()?;
    let data = item.data.clone().unwrap_or_default();
    let value = if item.format() == Some(Format::Node) {
        let text = String::from_utf8(data).ok()?;
        GetResult::ChildNames(if text.is_empty() {
            Vec::new()
        } else {
            text.split('/').map(String::from).collect()
        })
    } else {
        let meta = item.meta.clone().unwrap_or_default();
        GetResult::LeafValue {
            size: data.len() as u64,
            value: data,
            format: meta.format.unwrap_or(Format::Chr),
            mime_type: meta.mime_type.unwrap_or_default(),
        }
    };
    Some((uri, value))
}

impl ServerSession {
    pub fn new(server_id: &str, device_id: &str, secret: DeviceSecret, queue: Vec<Batch>) -> Self {
        ServerSession {
            phase: SessionPhase::Setup,
            server_id: server_id.to_string(),
            device_id: device_id.to_string(),
            secret,
            session_id: None,
            next_msg_id: 1,
            expected_client_msg: 1,
            queue: queue.into(),
            last_sent: None,
            ledger: BTreeMap::new(),
            reports: Vec::new(),
            devinfo: BTreeMap::new(),
            crawls: BTreeMap::new(),
        }
    }

    pub fn phase(&self) -> &SessionPhase {
        &self.phase
    }

    pub fn session_id(&self) -> Option<&str> {
        self.session_id.as_deref()
    }

    /// Answers received so far, in the order they arrived.
    pub fn reports(&self) -> &[CommandReport] {
        &self.reports
    }

    /// DevInfo leaves the device reported in package 1.
    pub fn devinfo(&self) -> &BTreeMap<String, String> {
        &self.devinfo
    }

    /// Nodes gathered by the inventory crawl of batch `tag`.
    pub fn crawl(&self, tag: u64) -> Option<&CrawlMap> {
        self.crawls.get(&tag)
    }

    /// Batches never sent because the session ended.
    pub fn unsent(&self) -> impl Iterator<Item = &Batch> {
        self.queue.iter()
    }

    pub fn abort(&mut self, reason: impl Into<String>) {
        if !self.phase.is_closed() {
            self.phase = SessionPhase::Closed(Outcome::aborted(reason));
        }
    }

    fn fail(&mut self, e: SessionError) -> SessionError {
        self.abort(e.to_string());
        e
    }

    pub fn on_bytes(&mut self, bytes: &[u8]) -> Result<ServerStep, SessionError> {
        match decode(bytes) {
            Ok(pkg) => self.on_package(&pkg),
            Err(e) => Err(self.fail(SessionError::ParseFailure(e))),
        }
    }

    pub fn on_package(&mut self, pkg: &DmMessage) -> Result<ServerStep, SessionError> {
        if self.phase == SessionPhase::Setup && self.session_id.is_none() {
            self.session_id = Some(pkg.header.session_id.clone());
        }
        let sid = self.session_id.clone().unwrap_or_default();
        check_incoming(&self.phase, &sid, self.expected_client_msg, &pkg.header).map_err(|e| self.fail(e))?;
        if pkg.header.source != self.device_id {
            return Err(self.fail(SessionError::ProtocolViolation(format!(
                "package from {:?}, session is with {:?}",
                pkg.header.source, self.device_id
            ))));
        }
        if !pkg.has_final() {
            return Err(self.fail(SessionError::ProtocolViolation("package lacks Final".into())));
        }
        self.expected_client_msg += 1;
        match self.phase {
            SessionPhase::Setup => self.on_setup(pkg),
            _ => self.on_management(pkg),
        }
    }

    fn authenticated(&self, pkg: &DmMessage) -> bool {
        let Some(c) = &pkg.header.credentials else { return false };
        c.username == self.secret.auth_name
            && c.digest == credential_digest(&c.username, &self.secret.secret, &pkg.header.session_id)
    }

    fn on_setup(&mut self, pkg: &DmMessage) -> Result<ServerStep, SessionError> {
        let alert_ok = matches!(
            pkg.body.first(),
            Some(DmCommand::Alert { code, .. }) if *code == ALERT_CLIENT_INITIATED
        );
        if !alert_ok {
            return Err(self.fail(SessionError::ProtocolViolation(
                "package 1 must open with a client-initiated Alert".into(),
            )));
        }
        let authed = self.authenticated(pkg);
        let code = if authed {
            StatusCode::Ok
        } else {
            StatusCode::Unauthorized
        };
        let body: Vec<DmCommand> = pkg
            .body
            .iter()
            .filter(|c| c.needs_status())
            .map(|c| DmCommand::Status {
                cmd_id: 0,
                msg_ref: pkg.header.msg_id,
                cmd_ref: c.cmd_id().expect("needs status"),
                cmd: c.name().expect("needs status"),
                code,
            })
            .collect();
        if !authed {
            let out = self.finish(body, Outcome::aborted("authentication failed"));
            return Ok(out);
        }
        for cmd in &pkg.body {
            if let DmCommand::Replace { items, .. } = cmd {
                for item in items {
                    let (Some(t), Some(d)) = (&item.target, &item.data) else {
                        continue;
                    };
                    if t.parent().is_some_and(|p| p.to_string() == crate::device::DEVINFO) {
                        self.devinfo
                            .insert(t.name().to_string(), String::from_utf8_lossy(d).into_owned());
                    }
                }
            }
        }
        self.phase = SessionPhase::Management;
        let window = self.next_window();
        Ok(self.send_or_close(body, window))
    }

    fn on_management(&mut self, pkg: &DmMessage) -> Result<ServerStep, SessionError> {
        let last = self.last_sent.clone().expect("management follows a sent package");
        let violations = validate_reply_shape(&last, pkg);
        if !violations.is_empty() {
            return Err(self.fail(SessionError::violations(&violations)));
        }
        if pkg
            .body
            .iter()
            .any(|c| c.needs_status() && !matches!(c, DmCommand::Results { .. }))
        {
            return Err(self.fail(SessionError::ProtocolViolation(
                "client sent a command during the management phase".into(),
            )));
        }
        let ledger = std::mem::take(&mut self.ledger);
        let mut followups: BTreeMap<u64, Vec<NodeUri>> = BTreeMap::new();
        for (cmd_id, issued) in ledger {
            let code = pkg
                .body
                .iter()
                .find_map(|c| match c {
                    DmCommand::Status { cmd_ref, code, .. } if *cmd_ref == cmd_id => Some(*code),
                    _ => None,
                })
                .expect("checked by validate_reply_shape");
            let results: Vec<DmItem> = pkg
                .body
                .iter()
                .filter_map(|c| match c {
                    DmCommand::Results { cmd_ref, items, .. } if *cmd_ref == cmd_id => Some(items.clone()),
                    _ => None,
                })
                .flatten()
                .collect();
            if issued.crawl {
                let map = self.crawls.entry(issued.tag).or_default();
                for (uri, value) in results.iter().filter_map(result_value) {
                    followups
                        .entry(issued.tag)
                        .or_default()
                        .extend(inventory_followups(&uri, &value));
                    map.insert(uri, value);
                }
            }
            self.reports.push(CommandReport {
                tag: issued.tag,
                msg_id: last.header.msg_id,
                command: issued.command,
                code,
                results,
            });
        }
        for (tag, uris) in followups.into_iter().rev() {
            if uris.is_empty() {
                continue;
            }
            let gets = uris
                .into_iter()
                .map(|u| DmCommand::Get {
                    cmd_id: 0,
                    items: vec![DmItem::target(u)],
                })
                .collect();
            self.queue.push_front(Batch::new(tag, gets).crawl());
        }
        let acks = pkg
            .body
            .iter()
            .filter(|c| c.needs_status())
            .map(|c| DmCommand::Status {
                cmd_id: 0,
                msg_ref: pkg.header.msg_id,
                cmd_ref: c.cmd_id().expect("needs status"),
                cmd: c.name().expect("needs status"),
                code: StatusCode::Ok,
            })
            .collect();
        let window = self.next_window();
        Ok(self.send_or_close(acks, window))
    }

    /// Commands for the next server package.
    fn next_window(&mut self) -> Vec<(u64, bool, DmCommand)> {
        let mut out = Vec::new();
        let mut first = true;
        while let Some(batch) = self.queue.front() {
            if !first && batch.barrier {
                break;
            }
            let batch = self.queue.pop_front().expect("peeked");
            first = false;
            let crawl = batch.crawl;
            for cmd in batch.commands {
                out.push((batch.tag, crawl, cmd));
            }
            if crawl {
                break;
            }
        }
        out
    }

    fn header(&self) -> crate::codec::DmHeader {
        header(
            self.session_id.as_deref().unwrap_or_default(),
            self.next_msg_id,
            &self.server_id,
            &self.device_id,
        )
    }

    fn send_or_close(&mut self, mut body: Vec<DmCommand>, window: Vec<(u64, bool, DmCommand)>) -> ServerStep {
        for (i, cmd) in body.iter_mut().enumerate() {
            cmd.set_cmd_id(i as u32 + 1);
        }
        for (tag, crawl, mut command) in window {
            let cmd_id = body.len() as u32 + 1;
            command.set_cmd_id(cmd_id);
            body.push(command.clone());
            self.ledger.insert(cmd_id, Issued { tag, crawl, command });
        }
        if self.ledger.is_empty() {
            return self.finish(body, Outcome::Ok);
        }
        body.push(DmCommand::Final);
        let pkg = DmMessage {
            header: self.header(),
            body,
        };
        self.next_msg_id += 1;
        self.last_sent = Some(pkg.clone());
        ServerStep::Reply(pkg)
    }

    fn finish(&mut self, mut body: Vec<DmCommand>, outcome: Outcome) -> ServerStep {
        for (i, cmd) in body.iter_mut().enumerate() {
            cmd.set_cmd_id(i as u32 + 1);
        }
        body.push(DmCommand::Final);
        let pkg = DmMessage {
            header: self.header(),
            body,
        };
        self.next_msg_id += 1;
        self.last_sent = Some(pkg.clone());
        self.phase = SessionPhase::Closed(outcome.clone());
        ServerStep::Close {
            package: Some(pkg),
            outcome,
        }
    }
}
