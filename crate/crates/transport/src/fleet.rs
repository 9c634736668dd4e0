//! Simulated device fleet.

use std::net::SocketAddr;
use std::sync::Arc;

use chrono::DateTime;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_forge_core::device::{Device, DeviceProfile};
use scm_forge_core::repo::MemoryRepository;
use scm_forge_core::session::{DeviceSecret, Outcome};
use scm_forge_core::tree::Clock;
use thiserror::Error;
use tokio::sync::Mutex;
use tokio::task::JoinHandle;
use tracing::debug;

use crate::driver::run_client;
use crate::link::{LinkConfig, TransportError};
use crate::tcp::TcpAcceptor;

pub const DEFAULT_SERVER_ID: &str = "scm-forge";

/// Unix time the simulated clocks start from, before the per-seed offset.
const CLOCK_BASE: i64 = 1_704_067_200;

const MODELS: [&str; 4] = ["S1", "S2", "Tab-8", "Rugged-X"];
const LANGUAGES: [&str; 3] = ["en-US", "fr-FR", "de-DE"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FleetError {
    #[error("a fleet needs at least one device")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct SimDevice {
    pub profile: DeviceProfile,
    pub device: Arc<Mutex<Device>>,
}

impl SimDevice {
    pub fn id(&self) -> &str {
        &self.profile.device_id
    }

    pub fn secret(&self) -> DeviceSecret {
        DeviceSecret {
            auth_name: self.profile.auth_name.clone(),
            secret: self.profile.auth_secret.clone(),
        }
    }
}

pub fn device_id(index: usize) -> String {
    format!("SIM-{:04}", index + 1)
}

/// Profile and clock start of device `index` in a fleet seeded with `seed`.
pub fn seeded_profile(rng: &mut ChaCha8Rng, index: usize, server_id: &str) -> (DeviceProfile, i64) {
    let secret: String = (0..16).map(|_| format!("{:x}", rng.random_range(0..16u8))).collect();
    let mut p = DeviceProfile::new(&device_id(index), server_id, &secret);
    p.model = MODELS.choose(rng).expect("non-empty").to_string();
    p.language = LANGUAGES.choose(rng).expect("non-empty").to_string();
    p.firmware = format!("1.{}.{}", rng.random_range(0..4), rng.random_range(0..10));
    let start = CLOCK_BASE + rng.random_range(0..86_400);
    (p, start)
}

/// Devices sharing one payload repository.
#[derive(Debug, Clone)]
pub struct Fleet {
    devices: Vec<SimDevice>,
    repo: Arc<MemoryRepository>,
}

impl Fleet {
    /// `n` devices `SIM-0001`... whose profiles and clocks are a function of `seed`.
    pub fn spawn(n: usize, seed: u64) -> Result<Fleet, FleetError> {
        Self::spawn_for(n, seed, DEFAULT_SERVER_ID)
    }

    pub fn spawn_for(n: usize, seed: u64, server_id: &str) -> Result<Fleet, FleetError> {
        if n == 0 {
            return Err(FleetError::Empty);
        }
        let repo = Arc::new(MemoryRepository::new());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let devices = (0..n)
            .map(|i| {
                let (profile, start) = seeded_profile(&mut rng, i, server_id);
                let clock = Clock::manual(DateTime::from_timestamp(start, 0).expect("in range"));
                let device = Device::from_profile(&profile, clock).with_repo(repo.clone());
                SimDevice {
                    profile,
                    device: Arc::new(Mutex::new(device)),
                }
            })
            .collect();
        Ok(Fleet { devices, repo })
    }

    pub fn devices(&self) -> &[SimDevice] {
        &self.devices
    }

    pub fn device(&self, id: &str) -> Option<&SimDevice> {
        self.devices.iter().find(|d| d.id() == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.id().to_string()).collect()
    }

    pub fn repo(&self) -> &Arc<MemoryRepository> {
        &self.repo
    }

    /// Starts a TCP agent per device on loopback and returns their addresses.
    pub async fn listen_all(&self, config: LinkConfig) -> Result<Vec<DeviceAgent>, TransportError> {
        let mut out = Vec::new();
        for d in &self.devices {
            let acceptor = TcpAcceptor::bind(SocketAddr::from(([127, 0, 0, 1], 0)), config).await?;
            out.push(DeviceAgent::start(d.id().to_string(), acceptor, d.device.clone()));
        }
        Ok(out)
    }
}

/// A device reachable over TCP: each accepted connection carries one session, with the
/// device acting as the session client.
#[derive(Debug)]
pub struct DeviceAgent {
    pub device_id: String,
    pub addr: SocketAddr,
    task: JoinHandle<()>,
}

impl DeviceAgent {
    pub fn start(device_id: String, acceptor: TcpAcceptor, device: Arc<Mutex<Device>>) -> Self {
        let addr = acceptor.local_addr();
        let id = device_id.clone();
        let task = tokio::spawn(async move {
            loop {
                let mut link = match acceptor.accept().await {
                    Ok(link) => link,
                    Err(e) => {
                        debug!(device = %id, error = %e, "accept failed");
                        continue;
                    }
                };
                let mut device = device.lock().await;
                let outcome = run_client(&mut device, &mut link).await;
                if let Outcome::Aborted { reason } = outcome {
                    debug!(device = %id, %reason, "session aborted");
                }
            }
        });
        DeviceAgent { device_id, addr, task }
    }
}

impl Drop for DeviceAgent {
    fn drop(&mut self) {
        self.task.abort();
    }
}

#[cfg(test)]
mod tests {
    use scm_forge_core::tree_doc;

    use super::*;

    async fn docs(f: &Fleet) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for d in f.devices() {
            out.push(tree_doc::save(d.device.lock().await.tree()));
        }
        out
    }

    #[tokio::test]
    async fn spawn_is_reproducible() {
        let (a, b) = (Fleet::spawn(10, 7).unwrap(), Fleet::spawn(10, 7).unwrap());
        assert_eq!(a.ids(), b.ids());
        assert_eq!(docs(&a).await, docs(&b).await);
        assert_ne!(docs(&a).await, docs(&Fleet::spawn(10, 8).unwrap()).await);
    }

    #[tokio::test]
    async fn single_device_fixture() {
        let f = Fleet::spawn(1, 0).unwrap();
        assert_eq!(f.ids(), ["SIM-0001"]);
        let d = f.devices()[0].device.lock().await;
        let id = d
            .tree()
            .node(&"./DevInfo/DevId".parse().unwrap())
            .unwrap()
            .value()
            .unwrap()
            .to_vec();
        assert_eq!(id, b"SIM-0001");
    }

    #[test]
    fn empty_fleet_is_an_error() {
        assert_eq!(Fleet::spawn(0, 1).unwrap_err(), FleetError::Empty);
    }
}
