//! Management server: device registry, deployment jobs, persistence and the admin API.

pub mod api;
pub mod persist;
pub mod registry;
pub mod service;

pub use api::{router, ApiConfig, JobCreated};
pub use persist::{PersistError, StateDir};
pub use registry::{Address, DeploymentJob, DeviceRecord, DeviceSummary, InventoryView, SessionSummary};
pub use service::{NewDevice, Service, ServiceConfig, ServiceError};
