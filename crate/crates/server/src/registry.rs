//! Device records and deployment jobs as the server keeps them.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;

use chrono::{DateTime, Utc};
use scm_forge_core::job::{JobAction, TargetStatus};
use scm_forge_core::scm::InventoryEntry;
use serde::{Deserialize, Serialize};

/// How the server reaches a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Address {
    /// Simulated device living in the server process.
    Memory,
    /// Device agent listening on a TCP address.
    Tcp { addr: SocketAddr },
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Memory => f.write_str("memory"),
            Address::Tcp { addr } => write!(f, "tcp://{addr}"),
        }
    }
}

/// A cached value with the session that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cached<T> {
    pub session_id: String,
    pub value: T,
}

/// Simulator state of an in-process device beyond its tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimState {
    pub capacity: u64,
    /// Unix seconds of the device clock.
    pub clock: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub address: Address,
    pub auth_name: String,
    pub secret: String,
    pub last_seen: Option<DateTime<Utc>>,
    pub devinfo: Option<Cached<BTreeMap<String, String>>>,
    pub inventory: Option<Cached<Vec<InventoryEntry>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimState>,
}

impl DeviceRecord {
    pub fn new(device_id: &str, address: Address, auth_name: &str, secret: &str) -> Self {
        DeviceRecord {
            device_id: device_id.to_string(),
            address,
            auth_name: auth_name.to_string(),
            secret: secret.to_string(),
            last_seen: None,
            devinfo: None,
            inventory: None,
            sim: None,
        }
    }

    pub fn summary(&self) -> DeviceSummary {
        DeviceSummary {
            device_id: self.device_id.clone(),
            address: self.address.to_string(),
            last_seen: self.last_seen,
            devinfo: self.devinfo.clone(),
            inventory: self.inventory.clone(),
        }
    }
}

/// A device record as the admin API shows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device_id: String,
    pub address: String,
    pub last_seen: Option<DateTime<Utc>>,
    pub devinfo: Option<Cached<BTreeMap<String, String>>>,
    pub inventory: Option<Cached<Vec<InventoryEntry>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryView {
    pub device_id: String,
    pub session_id: Option<String>,
    pub entries: Vec<InventoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentJob {
    pub job_id: String,
    pub targets: Vec<String>,
    pub action: JobAction,
    pub status: BTreeMap<String, TargetStatus>,
    /// Session that carried the job to each target.
    pub sessions: BTreeMap<String, String>,
}

impl DeploymentJob {
    pub fn is_finished(&self) -> bool {
        self.status.values().all(|s| !matches!(s, TargetStatus::Pending))
    }
}

pub fn job_id(n: u64) -> String {
    format!("job-{n:06}")
}

pub fn job_number(id: &str) -> Option<u64> {
    id.strip_prefix("job-")?.parse().ok()
}

/// Summary of one recorded session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub device_id: String,
    pub outcome: scm_forge_core::session::Outcome,
    pub packages: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_renders() {
        assert_eq!(Address::Memory.to_string(), "memory");
        let a = Address::Tcp {
            addr: "127.0.0.1:9000".parse().unwrap(),
        };
        assert_eq!(a.to_string(), "tcp://127.0.0.1:9000");
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"kind":"tcp","addr":"127.0.0.1:9000"}"#
        );
    }

    #[test]
    fn job_ids() {
        assert_eq!(job_id(1), "job-000001");
        assert_eq!(job_number("job-000042"), Some(42));
        assert_eq!(job_number("nope"), None);
    }
}
