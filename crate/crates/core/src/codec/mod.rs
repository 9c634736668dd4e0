//! DM packages and their XML wire form.
//!
//! One package is one [`DmMessage`]: a header and an ordered command body. [`encode`] and
//! [`decode`] are inverse on every message that passes [`DmMessage::validate`].

mod decode;
mod encode;
mod reply;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::status::StatusCode;
use crate::tree::Format;
use crate::uri::NodeUri;
use crate::xml::is_xml_text;

pub use decode::decode;
pub use encode::encode;
pub use reply::{validate_reply_shape, Violation};

pub const PROTO_VERSION: &str = "1.2";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("parse error at {line}:{column}: {message}")]
    ParseError { line: u32, column: u32, message: String },
    #[error("unknown command <{name}> at {line}:{column}")]
    UnknownCommand { name: String, line: u32, column: u32 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthScheme {
    Basic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials {
    pub scheme: AuthScheme,
    pub username: String,
    /// Lowercase hex SHA-256 of `username:password:session_id`.
    pub digest: String,
}

impl Credentials {
    pub fn basic(username: &str, password: &str, session_id: &str) -> Self {
        Credentials {
            scheme: AuthScheme::Basic,
            username: username.to_string(),
            digest: credential_digest(username, password, session_id),
        }
    }
}

pub fn credential_digest(username: &str, password: &str, session_id: &str) -> String {
    hex::encode(Sha256::digest(format!("{username}:{password}:{session_id}").as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmHeader {
    pub proto_version: String,
    pub session_id: String,
    pub msg_id: u32,
    pub source: String,
    pub target: String,
    pub credentials: Option<Credentials>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Meta {
    pub format: Option<Format>,
    pub mime_type: Option<String>,
    pub size: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DmItem {
    pub target: Option<NodeUri>,
    pub source: Option<String>,
    pub meta: Option<Meta>,
    pub data: Option<Vec<u8>>,
}

impl DmItem {
    pub fn target(uri: NodeUri) -> Self {
        DmItem {
            target: Some(uri),
            ..Default::default()
        }
    }

    pub fn with_data(mut self, data: impl Into<Vec<u8>>) -> Self {
        self.data = Some(data.into());
        self
    }

    pub fn with_meta(mut self, meta: Meta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn format(&self) -> Option<Format> {
        self.meta.as_ref().and_then(|m| m.format)
    }

    fn is_binary(&self) -> bool {
        self.format() == Some(Format::Bin)
    }
}

/// Name of a command as it appears in a `Status/Cmd` element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandName {
    Alert,
    Get,
    Add,
    Replace,
    Delete,
    Copy,
    Exec,
    Results,
}

impl CommandName {
    pub const ALL: [CommandName; 8] = [
        CommandName::Alert,
        CommandName::Get,
        CommandName::Add,
        CommandName::Replace,
        CommandName::Delete,
        CommandName::Copy,
        CommandName::Exec,
        CommandName::Results,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Alert => "Alert",
            CommandName::Get => "Get",
            CommandName::Add => "Add",
            CommandName::Replace => "Replace",
            CommandName::Delete => "Delete",
            CommandName::Copy => "Copy",
            CommandName::Exec => "Exec",
            CommandName::Results => "Results",
        }
    }
}

impl fmt::Display for CommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommandName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown command name {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DmCommand {
    Alert {
        cmd_id: u32,
        code: u32,
    },
    Get {
        cmd_id: u32,
        items: Vec<DmItem>,
    },
    Add {
        cmd_id: u32,
        items: Vec<DmItem>,
    },
    Replace {
        cmd_id: u32,
        items: Vec<DmItem>,
    },
    Delete {
        cmd_id: u32,
        items: Vec<DmItem>,
    },
    /// Each item copies `source` to `target`.
    Copy {
        cmd_id: u32,
        items: Vec<DmItem>,
    },
    Exec {
        cmd_id: u32,
        item: DmItem,
    },
    Status {
        cmd_id: u32,
        msg_ref: u32,
        cmd_ref: u32,
        cmd: CommandName,
        code: StatusCode,
    },
    Results {
        cmd_id: u32,
        msg_ref: u32,
        cmd_ref: u32,
        items: Vec<DmItem>,
    },
    Final,
}

impl DmCommand {
    pub fn cmd_id(&self) -> Option<u32> {
        use DmCommand::*;
        match self {
            Alert { cmd_id, .. }
            | Get { cmd_id, .. }
            | Add { cmd_id, .. }
            | Replace { cmd_id, .. }
            | Delete { cmd_id, .. }
            | Copy { cmd_id, .. }
            | Exec { cmd_id, .. }
            | Status { cmd_id, .. }
            | Results { cmd_id, .. } => Some(*cmd_id),
            Final => None,
        }
    }

    pub fn set_cmd_id(&mut self, id: u32) {
        use DmCommand::*;
        match self {
            Alert { cmd_id, .. }
            | Get { cmd_id, .. }
            | Add { cmd_id, .. }
            | Replace { cmd_id, .. }
            | Delete { cmd_id, .. }
            | Copy { cmd_id, .. }
            | Exec { cmd_id, .. }
            | Status { cmd_id, .. }
            | Results { cmd_id, .. } => *cmd_id = id,
            Final => {}
        }
    }

    /// Element name on the wire.
    pub fn element_name(&self) -> &'static str {
        match self {
            DmCommand::Status { .. } => "Status",
            DmCommand::Final => "Final",
            other => other.name().expect("non-status commands have a name").as_str(),
        }
    }

    /// Name usable in a `Status/Cmd` reference; `None` for Status and Final.
    pub fn name(&self) -> Option<CommandName> {
        Some(match self {
            DmCommand::Alert { .. } => CommandName::Alert,
            DmCommand::Get { .. } => CommandName::Get,
            DmCommand::Add { .. } => CommandName::Add,
            DmCommand::Replace { .. } => CommandName::Replace,
            DmCommand::Delete { .. } => CommandName::Delete,
            DmCommand::Copy { .. } => CommandName::Copy,
            DmCommand::Exec { .. } => CommandName::Exec,
            DmCommand::Results { .. } => CommandName::Results,
            DmCommand::Status { .. } | DmCommand::Final => return None,
        })
    }

    /// Whether the receiver must answer this command with a Status.
    pub fn needs_status(&self) -> bool {
        !matches!(self, DmCommand::Status { .. } | DmCommand::Final)
    }

    pub fn items(&self) -> &[DmItem] {
        match self {
            DmCommand::Get { items, .. }
            | DmCommand::Add { items, .. }
            | DmCommand::Replace { items, .. }
            | DmCommand::Delete { items, .. }
            | DmCommand::Copy { items, .. }
            | DmCommand::Results { items, .. } => items,
            DmCommand::Exec { item, .. } => std::slice::from_ref(item),
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmMessage {
    pub header: DmHeader,
    pub body: Vec<DmCommand>,
}

fn violation(msg: impl Into<String>) -> CodecError {
    CodecError::InvariantViolation(msg.into())
}

fn check_text(what: &str, s: &str) -> Result<(), CodecError> {
    if is_xml_text(s) {
        Ok(())
    } else {
        Err(violation(format!(
            "{what} contains characters not representable in XML"
        )))
    }
}

fn check_item(item: &DmItem, needs_target: bool, needs_source: bool) -> Result<(), CodecError> {
    if item.target.is_none() && item.source.is_none() && item.data.is_none() {
        return Err(violation("item has none of target, source, data"));
    }
    if needs_target && item.target.is_none() {
        return Err(violation("item requires a target"));
    }
    if needs_source && item.source.is_none() {
        return Err(violation("item requires a source"));
    }
    if let Some(source) = &item.source {
        check_text("item source", source)?;
    }
    if let Some(mime) = item.meta.as_ref().and_then(|m| m.mime_type.as_ref()) {
        check_text("meta type", mime)?;
    }
    if let Some(data) = &item.data {
        if !item.is_binary() {
            let text = std::str::from_utf8(data).map_err(|_| violation("non-bin item data must be UTF-8"))?;
            check_text("item data", text)?;
        }
    }
    Ok(())
}

fn check_items(items: &[DmItem], needs_target: bool, needs_source: bool) -> Result<(), CodecError> {
    if items.is_empty() {
        return Err(violation("command carries no items"));
    }
    items.iter().try_for_each(|i| check_item(i, needs_target, needs_source))
}

impl DmMessage {
    /// Checks every structural invariant of a package.
    pub fn validate(&self) -> Result<(), CodecError> {
        let h = &self.header;
        if h.proto_version != PROTO_VERSION {
            return Err(violation(format!("unsupported protocol version {:?}", h.proto_version)));
        }
        if h.session_id.is_empty() || h.source.is_empty() || h.target.is_empty() {
            return Err(violation("session id, source and target must be non-empty"));
        }
        check_text("session id", &h.session_id)?;
        check_text("source", &h.source)?;
        check_text("target", &h.target)?;
        if h.msg_id == 0 {
            return Err(violation("msg_id must be positive"));
        }
        if let Some(c) = &h.credentials {
            if c.username.is_empty() || c.username.contains(':') {
                return Err(violation("credential username must be non-empty and contain no ':'"));
            }
            check_text("username", &c.username)?;
            if c.digest.len() != 64
                || !c
                    .digest
                    .bytes()
                    .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
            {
                return Err(violation("credential digest must be 64 lowercase hex digits"));
            }
        }
        if self.body.is_empty() {
            return Err(violation("body is empty"));
        }
        let mut last_id = 0u32;
        for (i, cmd) in self.body.iter().enumerate() {
            match cmd.cmd_id() {
                None if i + 1 != self.body.len() => return Err(violation("Final must be the last command")),
                None => {}
                Some(id) if id <= last_id => return Err(violation("cmd_ids must be positive and strictly increasing")),
                Some(id) => last_id = id,
            }
            match cmd {
                DmCommand::Get { items, .. }
                | DmCommand::Add { items, .. }
                | DmCommand::Replace { items, .. }
                | DmCommand::Delete { items, .. } => check_items(items, true, false)?,
                DmCommand::Copy { items, .. } => check_items(items, true, true)?,
                DmCommand::Exec { item, .. } => check_item(item, true, false)?,
                DmCommand::Results {
                    msg_ref,
                    cmd_ref,
                    items,
                    ..
                } => {
                    if *msg_ref == 0 || *cmd_ref == 0 {
                        return Err(violation("Results references must be positive"));
                    }
                    check_items(items, false, false)?;
                }
                DmCommand::Status { msg_ref, cmd_ref, .. } => {
                    if *msg_ref == 0 || *cmd_ref == 0 {
                        return Err(violation("Status references must be positive"));
                    }
                }
                DmCommand::Alert { .. } | DmCommand::Final => {}
            }
        }
        Ok(())
    }

    pub fn has_final(&self) -> bool {
        matches!(self.body.last(), Some(DmCommand::Final))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_lower_hex_sha256() {
        let d = credential_digest("SIM-0001", "pw", "SIM-0001-0001");
        assert_eq!(d.len(), 64);
        assert_eq!(d, d.to_lowercase());
        // sha256("a:b:c") from coreutils
        assert_eq!(
            credential_digest("a", "b", "c"),
            "b0ee04f880c4ff4261479e2e7822b7410aee4c7159f4185ad5b0d88a312b495e"
        );
    }
}
