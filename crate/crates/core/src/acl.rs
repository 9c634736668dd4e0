//! Per-node access control lists.
//!
//! Text form: `Cmd=id1+id2` entries joined by `&`, e.g. `Get=*&Delete=srvA+srvB`.
//! `Exec=` is an explicit empty grant.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier that matches every server.
pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandKind {
    Get,
    Add,
    Replace,
    Delete,
    Copy,
    Exec,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::Get,
        CommandKind::Add,
        CommandKind::Replace,
        CommandKind::Delete,
        CommandKind::Copy,
        CommandKind::Exec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Get => "Get",
            CommandKind::Add => "Add",
            CommandKind::Replace => "Replace",
            CommandKind::Delete => "Delete",
            CommandKind::Copy => "Copy",
            CommandKind::Exec => "Exec",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandKind {
    type Err = AclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommandKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AclError::UnknownCommand(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AclError {
    #[error("unknown command kind {0:?}")]
    UnknownCommand(String),
    #[error("malformed acl entry {0:?}")]
    MalformedEntry(String),
    #[error("command kind {0} listed twice")]
    DuplicateCommand(CommandKind),
    #[error("invalid server id {0:?}")]
    BadServerId(String),
}

fn valid_server_id(id: &str) -> bool {
    !id.is_empty()
        && !id
            .chars()
            .any(|c| matches!(c, '&' | '+' | '=') || c.is_whitespace() || c.is_control())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Acl {
    grants: BTreeMap<CommandKind, BTreeSet<String>>,
}

impl Acl {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every command granted to `*`.
    pub fn allow_all() -> Self {
        let mut acl = Self::new();
        for kind in CommandKind::ALL {
            acl.grants.insert(kind, BTreeSet::from([WILDCARD.to_string()]));
        }
        acl
    }

    /// Replaces the grant for `kind`. An empty `ids` denies everyone and stops inheritance.
    pub fn set<I, S>(&mut self, kind: CommandKind, ids: I) -> Result<(), AclError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for id in ids {
            let id = id.into();
            if !valid_server_id(&id) {
                return Err(AclError::BadServerId(id));
            }
            set.insert(id);
        }
        self.grants.insert(kind, set);
        Ok(())
    }

    pub fn with<I, S>(mut self, kind: CommandKind, ids: I) -> Result<Self, AclError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.set(kind, ids)?;
        Ok(self)
    }

    pub fn remove(&mut self, kind: CommandKind) {
        self.grants.remove(&kind);
    }

    pub fn mentions(&self, kind: CommandKind) -> bool {
        self.grants.contains_key(&kind)
    }

    /// `None` when this ACL says nothing about `kind`.
    pub fn permits(&self, kind: CommandKind, server_id: &str) -> Option<bool> {
        self.grants
            .get(&kind)
            .map(|ids| ids.contains(WILDCARD) || ids.contains(server_id))
    }

    pub fn is_empty(&self) -> bool {
        self.grants.is_empty()
    }

    pub fn grants(&self) -> impl Iterator<Item = (CommandKind, &BTreeSet<String>)> {
        self.grants.iter().map(|(k, v)| (*k, v))
    }
}

impl fmt::Display for Acl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (kind, ids)) in self.grants.iter().enumerate() {
            if i > 0 {
                f.write_str("&")?;
            }
            write!(f, "{kind}=")?;
            for (j, id) in ids.iter().enumerate() {
                if j > 0 {
                    f.write_str("+")?;
                }
                f.write_str(id)?;
            }
        }
        Ok(())
    }
}

impl FromStr for Acl {
    type Err = AclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut acl = Acl::new();
        if s.is_empty() {
            return Ok(acl);
        }
        for entry in s.split('&') {
            let (kind, ids) = entry
                .split_once('=')
                .ok_or_else(|| AclError::MalformedEntry(entry.to_string()))?;
            let kind: CommandKind = kind.parse()?;
            if acl.mentions(kind) {
                return Err(AclError::DuplicateCommand(kind));
            }
            let ids: Vec<&str> = if ids.is_empty() {
                Vec::new()
            } else {
                ids.split('+').collect()
            };
            acl.set(kind, ids)?;
        }
        Ok(acl)
    }
}

impl Serialize for Acl {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Acl {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}
