//! Links between devices and the server, the session drivers that run over them, and a
//! simulated device fleet.

pub mod driver;
pub mod fleet;
pub mod link;
pub mod replay;
pub mod tcp;

pub use driver::{run_client, run_server, run_session, run_session_tcp, SessionRun};
pub use fleet::{DeviceAgent, Fleet, FleetError, SimDevice, DEFAULT_SERVER_ID};
pub use link::{link_pair, Fate, FaultPlan, LinkConfig, Spot, TransportError, TransportLink, WireLog, WireRecord};
pub use tcp::{dial, loopback_pair, TcpAcceptor};
