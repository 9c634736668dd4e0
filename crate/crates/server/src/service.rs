//! Device registry, job execution and session bookkeeping behind one shared handle.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use futures::future::join_all;
use scm_forge_core::device::{Device, DeviceProfile};
use scm_forge_core::job::{compile_job, job_code, JobError, JobRequest, TargetStatus};
use scm_forge_core::repo::{MemoryRepository, PayloadSource};
use scm_forge_core::scm::classify_inventory;
use scm_forge_core::session::{Batch, DeviceSecret, Outcome, ServerSession, Transcript};
use scm_forge_core::tree::Clock;
use scm_forge_core::tree_doc::{self, TreeView};
use scm_forge_transport::{dial, run_server, run_session, FaultPlan, Fleet, LinkConfig, DEFAULT_SERVER_ID};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;
use tracing::{info, warn};

use crate::persist::{PersistError, StateDir};
use crate::registry::{
    job_id, Address, Cached, DeploymentJob, DeviceRecord, DeviceSummary, InventoryView, SessionSummary, SimState,
};

const JOB_TAG: u64 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("device {0} is already registered")]
    DuplicateDevice(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("job has no targets")]
    NoTargets,
    #[error(transparent)]
    InvalidJob(#[from] JobError),
    #[error("device {0} is remote; its tree is only visible through jobs")]
    RemoteTree(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub server_id: String,
    pub link: LinkConfig,
    pub state_dir: Option<PathBuf>,
    /// Where simulated devices fetch download payloads from.
    pub repo: Arc<dyn PayloadSource>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            server_id: DEFAULT_SERVER_ID.to_string(),
            link: LinkConfig::default(),
            state_dir: None,
            repo: Arc::new(MemoryRepository::new()),
        }
    }
}

/// Registration request. Without an address the server creates a simulated device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewDevice {
    pub device_id: String,
    #[serde(default)]
    pub address: Option<Address>,
    #[serde(default)]
    pub auth_name: Option<String>,
    pub secret: String,
}

#[derive(Debug)]
struct Inner {
    config: ServiceConfig,
    state: Option<StateDir>,
    registry: RwLock<BTreeMap<String, DeviceRecord>>,
    devices: RwLock<BTreeMap<String, Arc<Mutex<Device>>>>,
    /// Last saved tree document of each in-memory device.
    snapshots: RwLock<BTreeMap<String, Vec<u8>>>,
    jobs: RwLock<BTreeMap<String, DeploymentJob>>,
    sessions: RwLock<BTreeMap<String, Transcript>>,
    next_job: AtomicU64,
    persist: Mutex<()>,
}

#[derive(Debug, Clone)]
pub struct Service(Arc<Inner>);

fn device_of_session(session_id: &str) -> &str {
    session_id.rsplit_once('-').map_or(session_id, |(d, _)| d)
}

impl Service {
    /// A service over `config`, restoring whatever its state directory holds.
    pub fn open(config: ServiceConfig) -> Result<Service, ServiceError> {
        let state = config.state_dir.clone().map(StateDir::new);
        let restored = match &state {
            Some(s) => s.read()?,
            None => Default::default(),
        };
        let mut registry = BTreeMap::new();
        let mut devices = BTreeMap::new();
        let mut snapshots = BTreeMap::new();
        let mut trees = restored.trees;
        for mut rec in restored.devices {
            if rec
                .devinfo
                .as_ref()
                .is_some_and(|c| !restored.sessions.contains_key(&c.session_id))
            {
                rec.devinfo = None;
            }
            if rec
                .inventory
                .as_ref()
                .is_some_and(|c| !restored.sessions.contains_key(&c.session_id))
            {
                rec.inventory = None;
            }
            if let (Address::Memory, Some(sim)) = (&rec.address, rec.sim) {
                let Some(mut tree) = trees.remove(&rec.device_id) else {
                    return Err(PersistError::SchemaViolation {
                        path: state
                            .as_ref()
                            .expect("restored from a dir")
                            .root()
                            .join("registry.json"),
                        detail: format!("no tree snapshot for in-memory device {}", rec.device_id),
                    }
                    .into());
                };
                let start = DateTime::from_timestamp(sim.clock, 0).unwrap_or_default();
                tree.set_clock(Clock::manual(start));
                snapshots.insert(rec.device_id.clone(), tree_doc::save(&tree));
                let device = Device::new(tree, sim.capacity, config.repo.clone());
                devices.insert(rec.device_id.clone(), Arc::new(Mutex::new(device)));
            }
            registry.insert(rec.device_id.clone(), rec);
        }
        let jobs = restored
            .jobs
            .into_iter()
            .map(|mut j| {
                for s in j.status.values_mut() {
                    if *s == TargetStatus::Pending {
                        *s = TargetStatus::Failed {
                            reason: "interrupted by server restart".into(),
                        };
                    }
                }
                (j.job_id.clone(), j)
            })
            .collect();
        Ok(Service(Arc::new(Inner {
            config,
            state,
            registry: RwLock::new(registry),
            devices: RwLock::new(devices),
            snapshots: RwLock::new(snapshots),
            jobs: RwLock::new(jobs),
            sessions: RwLock::new(restored.sessions),
            next_job: AtomicU64::new(restored.next_job.max(1)),
            persist: Mutex::new(()),
        })))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub async fn register(&self, req: NewDevice) -> Result<DeviceSummary, ServiceError> {
        let auth_name = req.auth_name.clone().unwrap_or_else(|| req.device_id.clone());
        let address = req.address.clone().unwrap_or(Address::Memory);
        let mut rec = DeviceRecord::new(&req.device_id, address.clone(), &auth_name, &req.secret);
        let device = match address {
            Address::Memory => {
                let mut profile = DeviceProfile::new(&req.device_id, &self.0.config.server_id, &req.secret);
                profile.auth_name = auth_name;
                let device =
                    Device::from_profile(&profile, Clock::manual(Utc::now())).with_repo(self.0.config.repo.clone());
                Some(Arc::new(Mutex::new(device)))
            }
            Address::Tcp { .. } => None,
        };
        if let Some(d) = &device {
            rec.sim = Some(sim_state(&*d.lock().await));
        }
        self.insert(rec, device).await
    }

    /// Registers every device of `fleet` as an in-memory device sharing its handle.
    pub async fn attach(&self, fleet: &Fleet) -> Result<(), ServiceError> {
        for d in fleet.devices() {
            let mut rec = DeviceRecord::new(d.id(), Address::Memory, &d.profile.auth_name, &d.profile.auth_secret);
            rec.sim = Some(sim_state(&*d.device.lock().await));
            self.insert(rec, Some(d.device.clone())).await?;
        }
        Ok(())
    }

    async fn insert(
        &self,
        rec: DeviceRecord,
        device: Option<Arc<Mutex<Device>>>,
    ) -> Result<DeviceSummary, ServiceError> {
        let id = rec.device_id.clone();
        {
            let mut reg = self.0.registry.write().expect("registry lock");
            if reg.contains_key(&id) {
                return Err(ServiceError::DuplicateDevice(id));
            }
            reg.insert(id.clone(), rec.clone());
        }
        if let Some(d) = device {
            let doc = tree_doc::save(d.lock().await.tree());
            self.0.snapshots.write().expect("snapshot lock").insert(id.clone(), doc);
            self.0.devices.write().expect("device lock").insert(id.clone(), d);
        }
        self.persist_device(&id, None).await?;
        Ok(rec.summary())
    }

    /// Registered devices sorted by id.
    pub fn devices(&self) -> Vec<DeviceSummary> {
        self.0
            .registry
            .read()
            .expect("registry lock")
            .values()
            .map(DeviceRecord::summary)
            .collect()
    }

    pub fn device(&self, id: &str) -> Result<DeviceSummary, ServiceError> {
        self.record(id).map(|r| r.summary())
    }

    fn record(&self, id: &str) -> Result<DeviceRecord, ServiceError> {
        self.0
            .registry
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownDevice(id.to_string()))
    }

    /// Tree of an in-memory device as of its last completed session.
    pub fn tree(&self, id: &str) -> Result<TreeView, ServiceError> {
        self.record(id)?;
        let snapshots = self.0.snapshots.read().expect("snapshot lock");
        let doc = snapshots
            .get(id)
            .ok_or_else(|| ServiceError::RemoteTree(id.to_string()))?;
        let tree = tree_doc::load(doc).expect("snapshots are written by save");
        Ok(tree_doc::view(&tree))
    }

    /// Saved tree document of an in-memory device.
    pub fn tree_document(&self, id: &str) -> Option<Vec<u8>> {
        self.0.snapshots.read().expect("snapshot lock").get(id).cloned()
    }

    pub fn inventory(&self, id: &str) -> Result<InventoryView, ServiceError> {
        let rec = self.record(id)?;
        Ok(InventoryView {
            device_id: rec.device_id,
            session_id: rec.inventory.as_ref().map(|c| c.session_id.clone()),
            entries: rec.inventory.map(|c| c.value).unwrap_or_default(),
        })
    }

    pub fn job(&self, id: &str) -> Result<DeploymentJob, ServiceError> {
        self.0
            .jobs
            .read()
            .expect("job lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownJob(id.to_string()))
    }

    pub fn jobs(&self) -> Vec<DeploymentJob> {
        self.0.jobs.read().expect("job lock").values().cloned().collect()
    }

    pub fn transcript(&self, session_id: &str) -> Result<Transcript, ServiceError> {
        self.0
            .sessions
            .read()
            .expect("session lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    /// Recorded sessions, optionally only those of `device`.
    pub fn sessions(&self, device: Option<&str>) -> Vec<SessionSummary> {
        self.0
            .sessions
            .read()
            .expect("session lock")
            .iter()
            .filter(|(id, _)| device.is_none_or(|d| device_of_session(id) == d))
            .map(|(id, t)| SessionSummary {
                session_id: id.clone(),
                device_id: device_of_session(id).to_string(),
                outcome: t.outcome().cloned().unwrap_or(Outcome::aborted("no close record")),
                packages: t.entries.len(),
            })
            .collect()
    }

    fn create_job(&self, req: JobRequest) -> Result<DeploymentJob, ServiceError> {
        if req.targets.is_empty() {
            return Err(ServiceError::NoTargets);
        }
        compile_job(&req.action)?;
        let id = job_id(self.0.next_job.fetch_add(1, Ordering::SeqCst));
        let mut seen = BTreeSet::new();
        let targets: Vec<String> = req.targets.into_iter().filter(|t| seen.insert(t.clone())).collect();
        let job = DeploymentJob {
            job_id: id.clone(),
            status: targets.iter().map(|t| (t.clone(), TargetStatus::Pending)).collect(),
            targets,
            action: req.action,
            sessions: BTreeMap::new(),
        };
        self.0.jobs.write().expect("job lock").insert(id, job.clone());
        Ok(job)
    }

    /// Queues a job and runs it in the background.
    pub async fn submit(&self, req: JobRequest) -> Result<String, ServiceError> {
        let job = self.create_job(req)?;
        self.persist_jobs().await?;
        let svc = self.clone();
        let id = job.job_id.clone();
        tokio::spawn(async move { svc.execute(job).await });
        Ok(id)
    }

    /// Runs a job to completion: one session per target, all targets concurrently.
    pub async fn run_job(&self, req: JobRequest) -> Result<DeploymentJob, ServiceError> {
        let job = self.create_job(req)?;
        self.persist_jobs().await?;
        let id = job.job_id.clone();
        self.execute(job).await;
        self.job(&id)
    }

    async fn execute(&self, job: DeploymentJob) {
        let runs = job.targets.iter().map(|t| self.run_target(&job, t));
        join_all(runs).await;
        info!(job = %job.job_id, "job finished");
    }

    async fn run_target(&self, job: &DeploymentJob, target: &str) {
        let (status, session) = match self.session_for(job, target).await {
            Ok(done) => done,
            Err(e) => {
                warn!(job = %job.job_id, %target, error = %e, "target failed");
                let reason = match e {
                    ServiceError::UnknownDevice(_) => "UnknownDevice".to_string(),
                    e => e.to_string(),
                };
                (TargetStatus::Failed { reason }, None)
            }
        };
        if let Some(j) = self.0.jobs.write().expect("job lock").get_mut(&job.job_id) {
            j.status.insert(target.to_string(), status);
            if let Some(s) = session {
                j.sessions.insert(target.to_string(), s);
            }
        }
        if let Err(e) = self.persist_jobs().await {
            warn!(job = %job.job_id, error = %e, "could not persist jobs");
        }
    }

    async fn session_for(
        &self,
        job: &DeploymentJob,
        target: &str,
    ) -> Result<(TargetStatus, Option<String>), ServiceError> {
        let rec = self.record(target)?;
        let compiled = compile_job(&job.action)?;
        let mut batch = Batch::new(JOB_TAG, compiled.commands);
        if compiled.crawl {
            batch = batch.crawl();
        }
        let secret = DeviceSecret {
            auth_name: rec.auth_name.clone(),
            secret: rec.secret.clone(),
        };
        let mut server = ServerSession::new(&self.0.config.server_id, target, secret, vec![batch]);
        let link = self.0.config.link;
        let transcript = match &rec.address {
            Address::Memory => {
                let device = self.0.devices.read().expect("device lock").get(target).cloned();
                let device = device.ok_or_else(|| ServiceError::UnknownDevice(target.to_string()))?;
                let mut device = device.lock().await;
                let (run, _) = run_session(&mut server, &mut device, FaultPlan::none(), link).await;
                let doc = tree_doc::save(device.tree());
                let sim = sim_state(&device);
                drop(device);
                self.0
                    .snapshots
                    .write()
                    .expect("snapshot lock")
                    .insert(target.to_string(), doc);
                if let Some(r) = self.0.registry.write().expect("registry lock").get_mut(target) {
                    r.sim = Some(sim);
                }
                let mut t = run.transcript;
                if !run.client.is_ok() && run.server.is_ok() {
                    t.close(run.client.clone());
                }
                t
            }
            Address::Tcp { addr } => match dial(*addr, link.server_side()).await {
                Ok(mut l) => run_server(&mut server, &mut l).await,
                Err(e) => return Ok((TargetStatus::Failed { reason: e.to_string() }, None)),
            },
        };
        let outcome = transcript
            .outcome()
            .cloned()
            .unwrap_or(Outcome::aborted("no close record"));
        let Some(session_id) = server.session_id().map(str::to_string) else {
            let reason = match outcome {
                Outcome::Aborted { reason } => reason,
                Outcome::Ok => "session never opened".into(),
            };
            return Ok((TargetStatus::Failed { reason }, None));
        };
        let codes: Vec<_> = server
            .reports()
            .iter()
            .filter(|r| r.tag == JOB_TAG)
            .map(|r| r.code)
            .collect();
        let status = match (&outcome, job_code(&codes)) {
            (Outcome::Aborted { reason }, _) => TargetStatus::Failed { reason: reason.clone() },
            (Outcome::Ok, Some(code)) => TargetStatus::Done { code },
            (Outcome::Ok, None) => TargetStatus::Failed {
                reason: "device returned no status".into(),
            },
        };
        {
            let mut reg = self.0.registry.write().expect("registry lock");
            if let Some(r) = reg.get_mut(target) {
                r.last_seen = Some(Utc::now());
                if !server.devinfo().is_empty() {
                    r.devinfo = Some(Cached {
                        session_id: session_id.clone(),
                        value: server.devinfo().clone(),
                    });
                }
                if let (true, Outcome::Ok, Some(crawl)) = (compiled.crawl, &outcome, server.crawl(JOB_TAG)) {
                    r.inventory = Some(Cached {
                        session_id: session_id.clone(),
                        value: classify_inventory(crawl),
                    });
                }
            }
        }
        self.0
            .sessions
            .write()
            .expect("session lock")
            .insert(session_id.clone(), transcript.clone());
        self.persist_device(target, Some((&session_id, &transcript))).await?;
        Ok((status, Some(session_id)))
    }

    /// Writes a finished session, then the device's tree, then the registry.
    async fn persist_device(&self, id: &str, session: Option<(&str, &Transcript)>) -> Result<(), ServiceError> {
        let Some(state) = &self.0.state else { return Ok(()) };
        let _guard = self.0.persist.lock().await;
        if let Some((sid, t)) = session {
            state.write_session(sid, t)?;
        }
        if let Some(doc) = self.tree_document(id) {
            state.write_tree(id, &doc)?;
        }
        let records: Vec<_> = self
            .0
            .registry
            .read()
            .expect("registry lock")
            .values()
            .cloned()
            .collect();
        state.write_registry(&records)?;
        Ok(())
    }

    async fn persist_jobs(&self) -> Result<(), ServiceError> {
        let Some(state) = &self.0.state else { return Ok(()) };
        let _guard = self.0.persist.lock().await;
        let jobs = self.jobs();
        state.write_jobs(&jobs, self.0.next_job.load(Ordering::SeqCst))?;
        Ok(())
    }
}

fn sim_state(device: &Device) -> SimState {
    SimState {
        capacity: device.capacity(),
        clock: device.tree().clock().now().timestamp(),
    }
}

#[cfg(test)]
mod tests {
    use scm_forge_core::job::JobAction;
    use scm_forge_core::scm::AppDescriptor;
    use scm_forge_core::StatusCode;

    use super::*;

    fn svc() -> Service {
        Service::open(ServiceConfig::default()).unwrap()
    }

    fn sim(id: &str) -> NewDevice {
        NewDevice {
            device_id: id.into(),
            address: None,
            auth_name: None,
            secret: "pw".into(),
        }
    }

    #[tokio::test]
    async fn register_and_list() {
        let s = svc();
        assert!(s.devices().is_empty());
        s.register(sim("b")).await.unwrap();
        s.register(sim("a")).await.unwrap();
        let ids: Vec<_> = s.devices().into_iter().map(|d| d.device_id).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(matches!(s.register(sim("a")).await, Err(ServiceError::DuplicateDevice(d)) if d == "a"));
    }

    #[tokio::test]
    async fn unknown_target_is_isolated() {
        let s = svc();
        s.register(sim("a")).await.unwrap();
        let job = s
            .run_job(JobRequest {
                targets: vec!["a".into(), "ghost".into()],
                action: JobAction::Activate { app_id: "mail".into() },
            })
            .await
            .unwrap();
        assert_eq!(
            job.status["ghost"],
            TargetStatus::Failed {
                reason: "UnknownDevice".into()
            }
        );
        assert_eq!(
            job.status["a"],
            TargetStatus::Done {
                code: StatusCode::NotFound
            }
        );
        assert!(job.sessions.contains_key("a"));
    }

    #[tokio::test]
    async fn activate_before_install_is_not_allowed() {
        let s = svc();
        s.register(sim("a")).await.unwrap();
        let payload = b"mail-1.0".to_vec();
        let descriptor =
            AppDescriptor::for_payload("mail", "Mail", "1.0", "acme", "application/octet-stream", &payload);
        let run = |action| {
            s.run_job(JobRequest {
                targets: vec!["a".into()],
                action,
            })
        };
        let job = run(JobAction::Deliver { descriptor, payload }).await.unwrap();
        assert_eq!(job.status["a"], TargetStatus::Done { code: StatusCode::Ok });
        let job = run(JobAction::Activate { app_id: "mail".into() }).await.unwrap();
        assert_eq!(
            job.status["a"],
            TargetStatus::Done {
                code: StatusCode::NotAllowed
            }
        );
    }

    #[tokio::test]
    async fn inventory_job_refreshes_caches() {
        let s = svc();
        s.register(sim("a")).await.unwrap();
        let job = s
            .run_job(JobRequest {
                targets: vec!["a".into()],
                action: JobAction::Inventory,
            })
            .await
            .unwrap();
        let sid = &job.sessions["a"];
        let d = s.device("a").unwrap();
        assert_eq!(&d.devinfo.unwrap().session_id, sid);
        let inv = s.inventory("a").unwrap();
        assert_eq!(inv.session_id.as_ref(), Some(sid));
        assert!(inv.entries.is_empty());
        assert!(s.transcript(sid).unwrap().alternates());
        assert_eq!(s.sessions(Some("a")).len(), 1);
        assert!(s.sessions(Some("b")).is_empty());
    }

    #[tokio::test]
    async fn bad_jobs_are_refused() {
        let s = svc();
        let empty = JobRequest {
            targets: vec![],
            action: JobAction::Inventory,
        };
        assert!(matches!(s.run_job(empty).await, Err(ServiceError::NoTargets)));
        let bad = JobRequest {
            targets: vec!["a".into()],
            action: JobAction::Install { app_id: "a/b".into() },
        };
        assert!(matches!(s.run_job(bad).await, Err(ServiceError::InvalidJob(_))));
    }

    #[tokio::test]
    async fn repeated_targets_run_once() {
        let s = svc();
        s.register(sim("a")).await.unwrap();
        s.register(sim("b")).await.unwrap();
        let job = s
            .run_job(JobRequest {
                targets: vec!["a".into(), "b".into(), "a".into()],
                action: JobAction::Inventory,
            })
            .await
            .unwrap();
        assert_eq!(job.targets, ["a", "b"]);
        assert_eq!(s.sessions(Some("a")).len(), 1);
    }

    #[test]
    fn session_ids_name_their_device() {
        assert_eq!(device_of_session("SIM-0001-0003"), "SIM-0001");
    }
}
