//! Core of scm-forge: the device management tree, the DM package codec, client and server
//! session state machines and the software component management agent.

pub mod acl;
pub mod codec;
pub mod device;
pub mod job;
pub mod repo;
pub mod scm;
pub mod session;
pub mod status;
pub mod tree;
pub mod tree_doc;
pub mod uri;
mod xml;

pub use acl::{Acl, CommandKind};
pub use codec::{DmCommand, DmHeader, DmItem, DmMessage};
pub use status::StatusCode;
pub use tree::{ManagementTree, NodeSpec, Requester};
pub use uri::NodeUri;
